//! Synthetic space-time observations for the four PDE families.
//!
//! Images are `W × H × C` with axis 0 = space (x = 0 at row 0, x = L at row
//! W-1) and axis 1 = time. Point sources act on the first node inside each
//! spatial boundary (rows 1 and W-2), so every source shows up in the first
//! window of a valid convolution. The 2 × H boundary labels hold those
//! applied source terms.

mod io;
mod schemes;
mod solver;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::Family;
use crate::tensor::Tensor3;

pub use io::{
    dataset_file_size, export_sample_csv, read_dataset, write_dataset, DATASET_MAGIC,
    DATASET_VERSION,
};
pub use schemes::{
    advect_flux_form, gen_coupled, gen_elliptic, gen_hyperbolic, gen_parabolic, generate,
    transport_with_velocity,
};
pub use solver::{neumann_operator, solve_tridiagonal_neumann, thomas};

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub family: Family,
    /// Spatial extent W.
    pub width: usize,
    /// Temporal extent H.
    pub height: usize,
    pub dx: f64,
    pub a: f64,
    pub b: f64,
    /// Courant number of the explicit scheme (transport `c` or diffusion `r`).
    /// The time step is derived from it, see [`GenConfig::dt`].
    pub cfl: f64,
    /// Source amplitude bound.
    pub alpha: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl GenConfig {
    pub fn new(family: Family) -> Self {
        GenConfig {
            family,
            width: 50,
            height: 50,
            dx: 1.0,
            a: 1.0,
            b: 1.0,
            cfl: 0.5,
            alpha: 1e-4,
            n_samples: 101,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 4 {
            return Err(Error::Config(format!(
                "grid must be at least 4x4, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        for (name, v) in [("dx", self.dx), ("a", self.a), ("b", self.b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let limit = self.cfl_limit();
        if !(self.cfl > 0.0 && self.cfl <= limit) {
            return Err(Error::Stability {
                step: 0,
                courant: self.cfl,
                limit,
            });
        }
        Ok(())
    }

    pub fn cfl_limit(&self) -> f64 {
        match self.family {
            Family::Parabolic => 0.5,
            _ => 1.0,
        }
    }

    /// Largest |u| the elliptic solve can produce from sources bounded by alpha.
    pub fn velocity_bound(&self) -> f64 {
        self.alpha * (self.width as f64 - 3.0) * self.dx * self.dx / (2.0 * self.a)
    }

    /// Time step implied by the Courant number.
    pub fn dt(&self) -> f64 {
        match self.family {
            Family::Hyperbolic => self.cfl * self.b * self.dx / self.a,
            Family::Parabolic => self.cfl * self.b * self.dx * self.dx / self.a,
            Family::Elliptic => 1.0,
            Family::Coupled => self.cfl * self.b * self.dx / self.velocity_bound(),
        }
    }
}

/// Boundary sources and initial states for one sample.
///
/// `p_*` drive the elliptic/parabolic unknown u, `q_*` the transported v.
/// Traces have length H, initial states length W. Unused fields are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSpec {
    pub p_left: Vec<f64>,
    pub p_right: Vec<f64>,
    pub q_left: Vec<f64>,
    pub q_right: Vec<f64>,
    pub initial_u: Vec<f64>,
    pub initial_v: Vec<f64>,
}

impl SourceSpec {
    pub fn zeros(width: usize, height: usize) -> Self {
        SourceSpec {
            p_left: vec![0.0; height],
            p_right: vec![0.0; height],
            q_left: vec![0.0; height],
            q_right: vec![0.0; height],
            initial_u: vec![0.0; width],
            initial_v: vec![0.0; width],
        }
    }

    /// Seeded smooth random sources for `cfg.family`, all bounded by alpha.
    pub fn random(cfg: &GenConfig, rng: &mut impl Rng) -> Self {
        let (w, h, alpha) = (cfg.width, cfg.height, cfg.alpha);
        let mut s = SourceSpec::zeros(w, h);
        match cfg.family {
            Family::Hyperbolic => {
                s.q_left = smooth_signal(rng, h, alpha);
                s.initial_v = smooth_signal(rng, w, alpha);
            }
            Family::Elliptic => {
                s.p_left = smooth_signal(rng, h, alpha);
                s.p_right = s.p_left.iter().map(|x| -x).collect();
            }
            Family::Parabolic => {
                s.p_left = smooth_signal(rng, h, alpha);
                s.p_right = smooth_signal(rng, h, alpha);
                s.initial_u = smooth_signal(rng, w, alpha);
            }
            Family::Coupled => {
                s.p_left = smooth_signal(rng, h, alpha);
                s.p_right = s.p_left.iter().map(|x| -x).collect();
                s.q_left = smooth_signal(rng, h, alpha);
                s.q_right = smooth_signal(rng, h, alpha);
                s.initial_v = smooth_signal(rng, w, alpha);
            }
        }
        s
    }

    pub(crate) fn check(&self, cfg: &GenConfig) -> Result<()> {
        let (w, h) = (cfg.width, cfg.height);
        for (name, v, n) in [
            ("p_left", &self.p_left, h),
            ("p_right", &self.p_right, h),
            ("q_left", &self.q_left, h),
            ("q_right", &self.q_right, h),
            ("initial_u", &self.initial_u, w),
            ("initial_v", &self.initial_v, w),
        ] {
            if v.len() != n {
                return Err(Error::Shape(format!("{name}: length {} != {n}", v.len())));
            }
            let bound = cfg.alpha * (1.0 + 1e-12);
            if let Some(x) = v.iter().find(|x| !(x.abs() <= bound)) {
                return Err(Error::Config(format!(
                    "{name}: magnitude {x:e} exceeds alpha = {:e}",
                    cfg.alpha
                )));
            }
        }
        Ok(())
    }
}

/// Signal components and their highest frequency in cycles per record.
/// Anything much smoother leaves the time direction of 2×2 kernels
/// close to unidentifiable.
const NCOMP: usize = 6;
const FMAX: f64 = 12.0;

/// Sum of random band-limited sinusoids, peak scaled into [alpha/2, alpha].
pub fn smooth_signal(rng: &mut impl Rng, n: usize, alpha: f64) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..NCOMP)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..FMAX),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let peak_target = alpha * rng.random_range(0.5..1.0);
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            comps
                .iter()
                .map(|&(amp, freq, phase)| amp * (std::f64::consts::TAU * freq * t + phase).sin())
                .sum()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return vec![0.0; n];
    }
    raw.iter().map(|x| x / peak * peak_target).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub family: Family,
    pub a: f64,
    pub b: f64,
    pub cfl: f64,
    /// Seed the sample's sources were drawn from.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(W, H, C)`; channel 0 = u (or v for hyperbolic), channel 1 = v when coupled.
    pub image: Tensor3,
    /// `(2, H, C)`: row 0 = source at x = 0, row 1 = source at x = L.
    pub boundary: Tensor3,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.image.rows()
    }

    pub fn height(&self) -> usize {
        self.image.cols()
    }

    pub fn channels(&self) -> usize {
        self.image.channels()
    }

    /// Boundary labels with the first `n` time columns removed.
    pub fn cropped_labels(&self, n: usize) -> Result<Tensor3> {
        let (_, h, c) = self.boundary.dims();
        if n >= h {
            return Err(Error::Shape(format!("cannot crop {n} of {h} time columns")));
        }
        Ok(Tensor3::from_fn(2, h - n, c, |r, t, ch| {
            self.boundary.get(r, t + n, ch)
        }))
    }

    /// Copy of the sample with every value multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Sample {
        Sample {
            image: self.image.scaled(s),
            boundary: self.boundary.scaled(s),
            meta: self.meta.clone(),
        }
    }
}

/// An ordered collection of samples with a seeded 80/20 train/validation split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub family: Family,
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Dataset {
    /// Splits by a shuffle seeded from the first sample's seed.
    pub fn new(family: Family, samples: Vec<Sample>) -> Self {
        let n = samples.len();
        let seed = samples.first().map_or(0, |s| s.meta.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let n_train = ((n as f64) * 0.8).round() as usize;
        let val = order.split_off(n_train.min(n));
        Dataset {
            family,
            samples,
            train: order,
            val,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().map(|&i| &self.samples[i])
    }

    pub fn val_samples(&self) -> impl Iterator<Item = &Sample> {
        self.val.iter().map(|&i| &self.samples[i])
    }
}

const SPLIT_SALT: u64 = 0x5eed_0517_d1ce_0080;

/// Per-sample seeds drawn in order from a stream seeded with `seed`.
pub fn sample_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Generates `cfg.n_samples` samples; each one depends only on its own seed.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.n_samples == 0 {
        return Err(Error::Config("n_samples must be positive".into()));
    }
    let samples = sample_seeds(cfg.seed, cfg.n_samples)
        .into_par_iter()
        .map(|s| generate_sample(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(cfg.family, samples))
}

pub fn generate_sample(cfg: &GenConfig, sample_seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let src = SourceSpec::random(cfg, &mut rng);
    let mut sample = generate(cfg, &src)?;
    sample.meta.seed = sample_seed;
    Ok(sample)
}
