//! Forward solvers. Each scheme has a compact annihilating stencil, which is
//! what the verification tools check learned kernels against.
//!
//! Time-dependent sources are per-step increments: the source stored at
//! time column n is added to the state at time n, so the residual of the
//! step `n-1 -> n` equals the label at column n.

use super::solver::solve_tridiagonal_neumann;
use super::{GenConfig, Sample, SampleMeta, SourceSpec};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::tensor::Tensor3;

/// Dispatches on `cfg.family`.
pub fn generate(cfg: &GenConfig, src: &SourceSpec) -> Result<Sample> {
    match cfg.family {
        Family::Hyperbolic => gen_hyperbolic(cfg, src),
        Family::Elliptic => gen_elliptic(cfg, src),
        Family::Parabolic => gen_parabolic(cfg, src),
        Family::Coupled => gen_coupled(cfg, src),
    }
}

fn expect_family(cfg: &GenConfig, family: Family) -> Result<()> {
    if cfg.family != family {
        return Err(Error::Config(format!(
            "config is for {}, generator is {family}",
            cfg.family
        )));
    }
    Ok(())
}

fn meta(cfg: &GenConfig) -> SampleMeta {
    SampleMeta {
        family: cfg.family,
        a: cfg.a,
        b: cfg.b,
        cfl: cfg.cfl,
        seed: cfg.seed,
    }
}

fn add_sources(state: &mut [f64], left: f64, right: f64) {
    let w = state.len();
    state[1] += left;
    state[w - 2] += right;
}

fn boundary_labels(height: usize, traces: &[(&[f64], &[f64])]) -> Tensor3 {
    let chans = traces.len();
    Tensor3::from_fn(2, height, chans, |side, t, ch| {
        let (l, r) = traces[ch];
        if side == 0 {
            l[t]
        } else {
            r[t]
        }
    })
}

fn store_column(image: &mut Tensor3, t: usize, ch: usize, col: &[f64]) {
    for (x, &v) in col.iter().enumerate() {
        image.set(x, t, ch, v);
    }
}

/// First-order upwind transport toward +x with Courant number `c`:
/// `v[i] <- v[i] - c·(v[i] - v[i-1])`, zero inflow state left of x = 0 and an
/// open outflow at x = L.
fn upwind_step(v: &[f64], c: f64) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let left = if i == 0 { 0.0 } else { v[i - 1] };
            v[i] - c * (v[i] - left)
        })
        .collect()
}

pub fn gen_hyperbolic(cfg: &GenConfig, src: &SourceSpec) -> Result<Sample> {
    expect_family(cfg, Family::Hyperbolic)?;
    cfg.validate()?;
    src.check(cfg)?;
    let (w, h, c) = (cfg.width, cfg.height, cfg.cfl);
    let mut image = Tensor3::zeros(w, h, 1);
    let mut v = src.initial_v.clone();
    add_sources(&mut v, src.q_left[0], src.q_right[0]);
    store_column(&mut image, 0, 0, &v);
    for n in 1..h {
        v = upwind_step(&v, c);
        add_sources(&mut v, src.q_left[n], src.q_right[n]);
        store_column(&mut image, n, 0, &v);
    }
    Ok(Sample {
        image,
        boundary: boundary_labels(h, &[(&src.q_left, &src.q_right)]),
        meta: meta(cfg),
    })
}

fn elliptic_column(cfg: &GenConfig, left: f64, right: f64) -> Result<Vec<f64>> {
    let mut p = vec![0.0; cfg.width];
    add_sources(&mut p, left, right);
    solve_tridiagonal_neumann(&p, cfg.a, cfg.dx)
}

/// Independent Neumann solves per time column with an injection/production pair.
pub fn gen_elliptic(cfg: &GenConfig, src: &SourceSpec) -> Result<Sample> {
    expect_family(cfg, Family::Elliptic)?;
    cfg.validate()?;
    src.check(cfg)?;
    let (w, h) = (cfg.width, cfg.height);
    let mut image = Tensor3::zeros(w, h, 1);
    for t in 0..h {
        let u = elliptic_column(cfg, src.p_left[t], src.p_right[t])?;
        store_column(&mut image, t, 0, &u);
    }
    Ok(Sample {
        image,
        boundary: boundary_labels(h, &[(&src.p_left, &src.p_right)]),
        meta: meta(cfg),
    })
}

/// Explicit FTCS diffusion with mirrored ghost cells (`u[-1] = u[0]`,
/// `u[W] = u[W-1]`), which conserves `Σ u` exactly when sources vanish.
fn ftcs_step(u: &[f64], r: f64) -> Vec<f64> {
    let w = u.len();
    (0..w)
        .map(|i| {
            let left = if i == 0 { u[0] } else { u[i - 1] };
            let right = if i == w - 1 { u[w - 1] } else { u[i + 1] };
            u[i] + r * (right - 2.0 * u[i] + left)
        })
        .collect()
}

pub fn gen_parabolic(cfg: &GenConfig, src: &SourceSpec) -> Result<Sample> {
    expect_family(cfg, Family::Parabolic)?;
    cfg.validate()?;
    src.check(cfg)?;
    let (w, h, r) = (cfg.width, cfg.height, cfg.cfl);
    let mut image = Tensor3::zeros(w, h, 1);
    let mut u = src.initial_u.clone();
    add_sources(&mut u, src.p_left[0], src.p_right[0]);
    store_column(&mut image, 0, 0, &u);
    for n in 1..h {
        u = ftcs_step(&u, r);
        add_sources(&mut u, src.p_left[n], src.p_right[n]);
        store_column(&mut image, n, 0, &u);
    }
    Ok(Sample {
        image,
        boundary: boundary_labels(h, &[(&src.p_left, &src.p_right)]),
        meta: meta(cfg),
    })
}

/// Face fluxes `F[f]`, f = 0..=W, for cell velocities `u` and states `v`.
///
/// Interior faces use the mean of the adjacent cell velocities and take
/// the donor cell on the upwind side. Boundary faces only carry outflow.
fn upwind_fluxes(u: &[f64], v: &[f64]) -> Vec<f64> {
    let w = v.len();
    let mut f = vec![0.0; w + 1];
    if u[0] < 0.0 {
        f[0] = u[0] * v[0];
    }
    for face in 1..w {
        let uf = 0.5 * (u[face - 1] + u[face]);
        let donor = if uf >= 0.0 { v[face - 1] } else { v[face] };
        f[face] = uf * donor;
    }
    if u[w - 1] > 0.0 {
        f[w] = u[w - 1] * v[w - 1];
    }
    f
}

/// One flux-form upwind step `v[i] - k·(F[i+1] - F[i])` with `k = dt/(b·dx)`.
/// Returns the new state and the boundary fluxes `(F[0], F[W])`.
pub fn advect_flux_form(v: &[f64], u: &[f64], k: f64) -> (Vec<f64>, f64, f64) {
    let f = upwind_fluxes(u, v);
    let w = v.len();
    let next = (0..w).map(|i| v[i] - k * (f[i + 1] - f[i])).collect();
    (next, f[0], f[w])
}

/// Transports v with a prescribed velocity field per step.
///
/// `velocity(n)` is the cell velocity used for the step `n -> n+1`. Sources
/// come from `src.q_*`, the initial state from `src.initial_v`.
pub fn transport_with_velocity(
    cfg: &GenConfig,
    src: &SourceSpec,
    k: f64,
    mut velocity: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<Tensor3> {
    let (w, h) = (cfg.width, cfg.height);
    let mut image = Tensor3::zeros(w, h, 1);
    let mut v = src.initial_v.clone();
    add_sources(&mut v, src.q_left[0], src.q_right[0]);
    store_column(&mut image, 0, 0, &v);
    for n in 1..h {
        let u = velocity(n - 1)?;
        if u.len() != w {
            return Err(Error::Shape("velocity length != W".into()));
        }
        let courant = k * u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if courant > 1.0 {
            return Err(Error::Stability {
                step: n - 1,
                courant,
                limit: 1.0,
            });
        }
        v = advect_flux_form(&v, &u, k).0;
        add_sources(&mut v, src.q_left[n], src.q_right[n]);
        store_column(&mut image, n, 0, &v);
    }
    Ok(image)
}

/// Elliptic u per time column, then upwind transport of v with velocity u.
pub fn gen_coupled(cfg: &GenConfig, src: &SourceSpec) -> Result<Sample> {
    expect_family(cfg, Family::Coupled)?;
    cfg.validate()?;
    src.check(cfg)?;
    let (w, h) = (cfg.width, cfg.height);
    let mut u_cols = Vec::with_capacity(h);
    for t in 0..h {
        u_cols.push(elliptic_column(cfg, src.p_left[t], src.p_right[t])?);
    }
    let k = cfg.dt() / (cfg.b * cfg.dx);
    let v_image = transport_with_velocity(cfg, src, k, |n| Ok(u_cols[n].clone()))?;

    let mut image = Tensor3::zeros(w, h, 2);
    for (t, u) in u_cols.iter().enumerate() {
        store_column(&mut image, t, 0, u);
        for x in 0..w {
            image.set(x, t, 1, v_image.get(x, t, 0));
        }
    }
    Ok(Sample {
        image,
        boundary: boundary_labels(
            h,
            &[(&src.p_left, &src.p_right), (&src.q_left, &src.q_right)],
        ),
        meta: meta(cfg),
    })
}
