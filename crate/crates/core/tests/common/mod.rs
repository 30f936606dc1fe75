//! Finite-difference gradient checks shared by the test targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stencilseer::autodiff::{Tape, Var};
use stencilseer::datagen::{generate_sample, GenConfig};
use stencilseer::model::{build_model, ModelConfig};
use stencilseer::{Family, Result, Tensor3};

pub const SEEDS: u64 = 100;
pub const REL_TOL: f64 = 1e-6;
const STEP: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, ch: usize) -> Tensor3 {
    Tensor3::from_fn(r, c, ch, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Relative max-norm gap between the tape gradient and central differences
/// of a scalar function of `inputs`.
fn gradient_gap<F>(inputs: &[Tensor3], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor3]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();

    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for (i, v) in vars.iter().enumerate() {
        let g = grads.get(*v).unwrap();
        for k in 0..inputs[i].len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[k] += STEP;
            let up = eval(&xs);
            xs[i].data_mut()[k] -= 2.0 * STEP;
            let down = eval(&xs);
            let fd = (up - down) / (2.0 * STEP);
            worst = worst.max((fd - g.data()[k]).abs());
            scale = scale.max(g.data()[k].abs());
        }
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Reduces a tensor to a scalar through an MSE against a fixed target.
fn reduce(tape: &mut Tape, x: Var, target: &Tensor3) -> Result<Var> {
    let t = tape.leaf(target.clone());
    tape.mse(x, t)
}

/// Largest gap of `check` over [`SEEDS`] seeds, with the seed it came from.
pub fn worst_over_seeds(check: impl Fn(&mut ChaCha8Rng) -> f64) -> (f64, u64) {
    (0..SEEDS)
        .map(|seed| (check(&mut ChaCha8Rng::seed_from_u64(seed)), seed))
        .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

pub fn conv2d_valid(rng: &mut ChaCha8Rng) -> f64 {
    let cin = rng.random_range(1..3);
    let x = random(rng, 5, 4, cin);
    let k0 = random(rng, 2, 2, cin);
    let k1 = random(rng, 2, 2, cin);
    let target = random(rng, 4, 3, 2);
    gradient_gap(&[x, k0, k1], |t, v| {
        let y = t.conv2d_valid(v[0], &v[1..])?;
        reduce(t, y, &target)
    })
}

pub fn transpose_conv2d(rng: &mut ChaCha8Rng) -> f64 {
    let x = random(rng, 4, 3, 2);
    let k = random(rng, 2, 2, 2);
    let target = random(rng, 5, 4, 1);
    gradient_gap(&[x, k], |t, v| {
        let y = t.transpose_conv2d(v[0], &v[1..])?;
        reduce(t, y, &target)
    })
}

pub fn pooling_and_replication(rng: &mut ChaCha8Rng) -> f64 {
    let rows = rng.random_range(3..8);
    let x = random(rng, rows, 3, 2);
    let t1 = random(rng, 2, 3, 2);
    let t2 = random(rng, rows + 1, 3, 2);
    gradient_gap(&[x], |t, v| {
        let p = t.avg_pool_halves(v[0])?;
        let a = reduce(t, p, &t1)?;
        let r = t.replicate_halves(p, rows + 1)?;
        let b = reduce(t, r, &t2)?;
        t.weighted_sum(&[(a, 0.7), (b, -1.3)])
    })
}

pub fn pointwise(rng: &mut ChaCha8Rng) -> f64 {
    let a = random(rng, 3, 4, 1);
    let b = random(rng, 3, 4, 1);
    let target = random(rng, 3, 4, 3);
    gradient_gap(&[a, b], |t, v| {
        let p = t.channel_product(v[0], v[1])?;
        let c = t.concat_channels(&[v[0], p, v[1]])?;
        let h = t.tanh(c)?;
        let s = t.select_channel(h, 1)?;
        let extra = t.mse(s, v[0])?;
        let main = reduce(t, h, &target)?;
        t.weighted_sum(&[(main, 1.0), (extra, 0.5)])
    })
}

pub fn zero_sum_penalty(rng: &mut ChaCha8Rng) -> f64 {
    let ks = [random(rng, 2, 2, 1), random(rng, 2, 2, 3)];
    let lambda = rng.random_range(0.0..2.0);
    gradient_gap(&ks, |t, v| t.zero_sum_penalty(v, lambda))
}

pub type GapCheck = fn(&mut ChaCha8Rng) -> f64;

pub const OP_CHECKS: [(&str, GapCheck); 5] = [
    ("conv2d_valid", conv2d_valid),
    ("transpose_conv2d", transpose_conv2d),
    ("pool/replicate", pooling_and_replication),
    ("tanh/product/concat/select", pointwise),
    ("zero_sum", zero_sum_penalty),
];

/// Gradient of the full training loss against central differences of
/// [`stencilseer::model::Model::total_loss`], relative to the largest entry.
pub fn model_gap(cfg: &ModelConfig, gen: &GenConfig, seed: u64) -> f64 {
    let mut model = build_model(cfg, seed).unwrap();
    let sample = generate_sample(gen, seed).unwrap();
    let (_, grad) = model.loss_and_gradient(&sample).unwrap();
    let params = model.all_params();
    let mut worst = 0.0f64;
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for k in 0..params.len() {
        let mut p = params.clone();
        p[k] += STEP;
        model.assign_params(&p).unwrap();
        let up = model.total_loss(&sample).unwrap().total;
        p[k] -= 2.0 * STEP;
        model.assign_params(&p).unwrap();
        let down = model.total_loss(&sample).unwrap().total;
        worst = worst.max(((up - down) / (2.0 * STEP) - grad[k]).abs());
    }
    worst / scale
}

/// A grid small enough for per-parameter differencing, with O(1) sources.
pub fn small(family: Family) -> GenConfig {
    GenConfig {
        width: 8,
        height: 7,
        alpha: 0.5,
        ..GenConfig::new(family)
    }
}

pub fn coupled_configs() -> [ModelConfig; 2] {
    [
        ModelConfig::for_family(Family::Coupled),
        ModelConfig::for_family(Family::Coupled).with_decoder(),
    ]
}
