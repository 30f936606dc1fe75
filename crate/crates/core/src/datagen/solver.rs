//! Tridiagonal solves for the pure-Neumann 1D Poisson problem.

use crate::error::{Error, Result};

/// Thomas algorithm for `lower[i]·x[i-1] + diag[i]·x[i] + upper[i]·x[i+1] = rhs[i]`.
///
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 || lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::Shape("thomas: inconsistent band lengths".into()));
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() < f64::MIN_POSITIVE {
        return Err(Error::Solver("zero pivot in row 0".into()));
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot.abs() < f64::MIN_POSITIVE {
            return Err(Error::Solver(format!("zero pivot in row {i}")));
        }
        c[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Right-hand side of the difference equations after scaling every row to
/// unit coefficients: `p·dx/a` on the two boundary rows, `p·dx²/a` inside.
fn scaled_rhs(p: &[f64], a: f64, dx: f64) -> Vec<f64> {
    let w = p.len();
    p.iter()
        .enumerate()
        .map(|(i, &pi)| {
            if i == 0 || i == w - 1 {
                pi * dx / a
            } else {
                pi * dx * dx / a
            }
        })
        .collect()
}

/// Solves `a·(u[i-1] - 2u[i] + u[i+1])/dx² = p[i]` inside, with the Neumann
/// rows `a·(u[1]-u[0])/dx² = p[0]/dx` and `a·(u[W-2]-u[W-1])/dx² = p[W-1]/dx`.
///
/// The system is singular (constants are in its kernel); the returned
/// solution has zero mean.
pub fn solve_tridiagonal_neumann(p: &[f64], a: f64, dx: f64) -> Result<Vec<f64>> {
    let w = p.len();
    if w < 3 {
        return Err(Error::Shape(format!("need at least 3 nodes, got {w}")));
    }
    if !(a > 0.0 && dx > 0.0) {
        return Err(Error::Config("a and dx must be positive".into()));
    }
    let rhs = scaled_rhs(p, a, dx);
    let sum: f64 = rhs.iter().sum();
    let scale: f64 = rhs.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
    if sum.abs() > 1e-12 * scale {
        return Err(Error::Compatibility { sum });
    }

    // Pin u[W-1] = 0 and drop the last (redundant) equation.
    let n = w - 1;
    let mut lower = vec![1.0; n];
    let mut diag = vec![-2.0; n];
    let upper = vec![1.0; n];
    lower[0] = 0.0;
    diag[0] = -1.0;
    let mut u = thomas(&lower, &diag, &upper, &rhs[..n])?;
    u.push(0.0);

    let mean = u.iter().sum::<f64>() / w as f64;
    for x in &mut u {
        *x -= mean;
    }
    Ok(u)
}

/// Applies the (unscaled) operator of [`solve_tridiagonal_neumann`] to `u`.
pub fn neumann_operator(u: &[f64], a: f64, dx: f64) -> Vec<f64> {
    let w = u.len();
    let k = a / (dx * dx);
    (0..w)
        .map(|i| {
            if i == 0 {
                k * (u[1] - u[0]) * dx
            } else if i == w - 1 {
                k * (u[w - 2] - u[w - 1]) * dx
            } else {
                k * (u[i - 1] - 2.0 * u[i] + u[i + 1])
            }
        })
        .collect()
}
