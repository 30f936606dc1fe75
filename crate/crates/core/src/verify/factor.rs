use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stencil::{compose, Stencil};
use crate::error::{Error, Result};

pub const FACTOR_STARTS: usize = 64;
pub const FACTOR_MAX_ITERS: usize = 10_000;
const FACTOR_SEED: u64 = 0xfac7_0235;

/// Best 2×2 pair found by [`best_factorization`].
#[derive(Clone, Debug, PartialEq)]
pub struct Factorization {
    pub first: Stencil,
    pub second: Stencil,
    /// Frobenius norm of `compose(first, second) - target`.
    pub residual: f64,
}

fn residuals(theta: &[f64; 8], target: &Stencil) -> [f64; 9] {
    let a = Stencil::new(2, 2, theta[..4].to_vec()).expect("2x2");
    let b = Stencil::new(2, 2, theta[4..].to_vec()).expect("2x2");
    let c = compose(&a, &b);
    let mut r = [0.0; 9];
    for (k, (x, t)) in c.data().iter().zip(target.data()).enumerate() {
        r[k] = x - t;
    }
    r
}

/// d out[(i1+i2, j1+j2)] / d a[i1][j1] = b[i2][j2], and symmetrically.
fn jacobian(theta: &[f64; 8]) -> [[f64; 8]; 9] {
    let mut jac = [[0.0; 8]; 9];
    for i1 in 0..2 {
        for j1 in 0..2 {
            for i2 in 0..2 {
                for j2 in 0..2 {
                    let row = (i1 + i2) * 3 + j1 + j2;
                    jac[row][i1 * 2 + j1] += theta[4 + i2 * 2 + j2];
                    jac[row][4 + i2 * 2 + j2] += theta[i1 * 2 + j1];
                }
            }
        }
    }
    jac
}

fn sq(r: &[f64; 9]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Solves the symmetric positive definite system by Cholesky.
fn solve_spd(mut m: [[f64; 8]; 8], mut b: [f64; 8]) -> Option<[f64; 8]> {
    const N: usize = 8;
    for j in 0..N {
        let mut d = m[j][j];
        for k in 0..j {
            d -= m[j][k] * m[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        m[j][j] = d;
        for i in j + 1..N {
            let mut s = m[i][j];
            for k in 0..j {
                s -= m[i][k] * m[j][k];
            }
            m[i][j] = s / d;
        }
    }
    for i in 0..N {
        let mut s = b[i];
        for k in 0..i {
            s -= m[i][k] * b[k];
        }
        b[i] = s / m[i][i];
    }
    for i in (0..N).rev() {
        let mut s = b[i];
        for k in i + 1..N {
            s -= m[k][i] * b[k];
        }
        b[i] = s / m[i][i];
    }
    Some(b)
}

/// Levenberg–Marquardt from one start; returns the final point and cost.
fn levenberg_marquardt(mut theta: [f64; 8], target: &Stencil, scale: f64) -> ([f64; 8], f64) {
    let mut r = residuals(&theta, target);
    let mut cost = sq(&r);
    let mut mu = 1e-3 * scale;
    for _ in 0..FACTOR_MAX_ITERS {
        if cost <= 1e-32 * scale * scale {
            break;
        }
        let jac = jacobian(&theta);
        let mut jtj = [[0.0; 8]; 8];
        let mut jtr = [0.0; 8];
        for (row, &ri) in jac.iter().zip(&r) {
            for p in 0..8 {
                jtr[p] -= row[p] * ri;
                for q in 0..8 {
                    jtj[p][q] += row[p] * row[q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj;
            for (p, row) in m.iter_mut().enumerate() {
                row[p] += mu;
            }
            let Some(step) = solve_spd(m, jtr) else {
                mu *= 10.0;
                continue;
            };
            let mut cand = theta;
            for p in 0..8 {
                cand[p] += step[p];
            }
            let rc = residuals(&cand, target);
            let cc = sq(&rc);
            if cc < cost {
                let rel = (cost - cc) / cost.max(f64::MIN_POSITIVE);
                theta = cand;
                r = rc;
                cost = cc;
                mu = (mu / 3.0).max(1e-15 * scale);
                improved = rel > 1e-15;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (theta, cost)
}

/// Multi-start search for 2×2 kernels whose composition best matches a
/// stencil of extent at most 3×3 (zero-padded at the bottom and right).
pub fn best_factorization(target: &Stencil) -> Result<Factorization> {
    let (tr, tc) = target.extent();
    if tr > 3 || tc > 3 {
        return Err(Error::Shape(format!("{tr}x{tc} target exceeds 3x3")));
    }
    let t = target.embed(3, 3, 0, 0)?;
    let tnorm = t.norm();
    if tnorm == 0.0 {
        return Ok(Factorization {
            first: Stencil::zeros(2, 2),
            second: Stencil::zeros(2, 2),
            residual: 0.0,
        });
    }
    let amp = tnorm.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(FACTOR_SEED);
    let mut best: Option<([f64; 8], f64)> = None;
    for _ in 0..FACTOR_STARTS {
        let mut start = [0.0; 8];
        for x in &mut start {
            *x = rng.random_range(-1.0..1.0) * amp;
        }
        let (theta, cost) = levenberg_marquardt(start, &t, tnorm);
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((theta, cost));
        }
    }
    let (theta, _) = best.expect("at least one start");
    let first = Stencil::new(2, 2, theta[..4].to_vec())?;
    let second = Stencil::new(2, 2, theta[4..].to_vec())?;
    let residual = sq(&residuals(&theta, &t)).sqrt();
    Ok(Factorization {
        first,
        second,
        residual,
    })
}
