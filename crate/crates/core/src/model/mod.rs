//! The fully-convolutional encoder(-decoder).
//!
//! Encoder layer l: valid 2×2 conv, then (after layer 1 only, if enabled)
//! the coupling channel `out[0] · out[1]`, then tanh. The last map is
//! average-pooled over the two spatial halves, giving `(2, H-n, K_n)`, which
//! is compared with the boundary labels minus their first n time columns.

mod train;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ops, Tape, Var};
use crate::datagen::{GenConfig, Sample};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::tensor::{Kernel2x2, KernelStack, Tensor3};
use crate::verify::{analytic_stencil, best_factorization, label_gain, Stencil};

pub use train::{train, EpochStats, StopReason, TrainConfig, TrainReport};
pub use weights::{parse_weights, weights_to_text};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Random,
    Stencil,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub family: Family,
    /// `K_1..K_n`; depth is the length.
    pub widths: Vec<usize>,
    pub coupling: bool,
    pub decoder: bool,
    pub lambda_zs: f64,
    pub lambda_rec: f64,
    pub init: InitMode,
}

impl ModelConfig {
    /// Per-family defaults: depth equals PDE order, one kernel per operator.
    pub fn for_family(family: Family) -> Self {
        let (widths, coupling) = match family {
            Family::Hyperbolic => (vec![1], false),
            Family::Elliptic | Family::Parabolic => (vec![1, 1], false),
            Family::Coupled => (vec![2, 2], true),
        };
        ModelConfig {
            family,
            widths,
            coupling,
            decoder: false,
            lambda_zs: 1e-2,
            lambda_rec: 0.0,
            init: InitMode::Random,
        }
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.widths = widths;
        self
    }

    pub fn with_coupling(mut self, on: bool) -> Self {
        self.coupling = on;
        self
    }

    /// Turns the decoder on with reconstruction weight 1.
    pub fn with_decoder(mut self) -> Self {
        self.decoder = true;
        self.lambda_rec = 1.0;
        self
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn in_channels(&self) -> usize {
        self.family.channels()
    }

    /// Input channels seen by encoder layer `l`.
    pub fn layer_inputs(&self, l: usize) -> usize {
        match l {
            0 => self.in_channels(),
            1 if self.coupling => self.widths[0] + 1,
            _ => self.widths[l - 1],
        }
    }

    /// Closed-form encoder parameter count.
    pub fn encoder_params(&self) -> usize {
        (0..self.depth())
            .map(|l| 4 * self.layer_inputs(l) * self.widths[l])
            .sum()
    }

    /// `(input channels, output channels)` of each decoder layer.
    pub fn decoder_layers(&self) -> Vec<(usize, usize)> {
        let n = self.depth();
        let c = self.in_channels();
        let mut dims = Vec::with_capacity(n);
        let mut cin = c + self.widths[n - 1];
        for j in 0..n {
            let cout = if j + 1 == n { c } else { self.widths[n - 2 - j] };
            dims.push((cin, cout));
            cin = cout;
        }
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.depth();
        if n == 0 || self.widths.contains(&0) {
            return Err(Error::Config("widths must be non-empty and positive".into()));
        }
        if self.widths[n - 1] != self.in_channels() {
            return Err(Error::Config(format!(
                "last width must equal the {} label channels of {}",
                self.in_channels(),
                self.family
            )));
        }
        if self.coupling && (self.in_channels() < 2 || n < 2 || self.widths[0] < 2) {
            return Err(Error::Config(
                "coupling needs 2 input channels, depth >= 2 and K1 >= 2".into(),
            ));
        }
        for (name, v) in [("lambda_zs", self.lambda_zs), ("lambda_rec", self.lambda_rec)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        if self.lambda_rec > 0.0 && !self.decoder {
            return Err(Error::Config("lambda_rec > 0 requires the decoder".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: KernelStack,
    pub decoder: Option<KernelStack>,
}

/// Results of one encoder pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    /// Pre-activation map of each layer (including the coupling channel).
    pub preacts: Vec<Tensor3>,
    /// Post-tanh map of each layer.
    pub maps: Vec<Tensor3>,
    pub pooled: Tensor3,
}

/// Weights applied to the error terms of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct LossNorm {
    pub boundary: f64,
    pub image: f64,
}

impl LossNorm {
    pub(crate) const RAW: LossNorm = LossNorm {
        boundary: 1.0,
        image: 1.0,
    };
}

/// Loss terms; `total` is their sum with `reconstruction` already weighted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub boundary: f64,
    pub zero_sum: f64,
    pub reconstruction: f64,
    pub total: f64,
}

fn random_stack(rng: &mut ChaCha8Rng, dims: &[(usize, usize)]) -> KernelStack {
    KernelStack::new(
        dims.iter()
            .map(|&(cin, cout)| {
                (0..cout)
                    .map(|_| {
                        let w = (0..4 * cin).map(|_| rng.random_range(-0.5..=0.5)).collect();
                        Kernel2x2::new(cin, w).expect("finite weights")
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Seeded model; with [`InitMode::Stencil`] call [`Model::init_from_stencils`]
/// afterwards to set the encoder.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc_dims: Vec<_> = (0..cfg.depth())
        .map(|l| (cfg.layer_inputs(l), cfg.widths[l]))
        .collect();
    let encoder = random_stack(&mut rng, &enc_dims);
    let decoder = cfg
        .decoder
        .then(|| random_stack(&mut rng, &cfg.decoder_layers()));
    Ok(Model {
        config: cfg.clone(),
        encoder,
        decoder,
    })
}

impl Model {
    pub fn depth(&self) -> usize {
        self.config.depth()
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
    }

    pub fn all_params(&self) -> Vec<f64> {
        let mut p = self.encoder.flatten();
        if let Some(d) = &self.decoder {
            p.extend(d.flatten());
        }
        p
    }

    pub fn assign_params(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.encoder.param_count();
        let total = n + self.decoder.as_ref().map_or(0, KernelStack::param_count);
        if flat.len() != total {
            return Err(Error::Shape(format!("expected {total} parameters, got {}", flat.len())));
        }
        self.encoder.assign(&flat[..n])?;
        if let Some(d) = &mut self.decoder {
            d.assign(&flat[n..])?;
        }
        Ok(())
    }

    fn check_image(&self, image: &Tensor3) -> Result<()> {
        let c = self.config.in_channels();
        let n = self.depth();
        if image.channels() != c {
            return Err(Error::Shape(format!(
                "{} model expects {c} channels, image has {}",
                self.config.family,
                image.channels()
            )));
        }
        if image.rows() < n + 2 || image.cols() < n + 1 {
            return Err(Error::Shape(format!(
                "image {:?} too small for depth {n}",
                image.dims()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, image: &Tensor3) -> Result<Encoding> {
        self.check_image(image)?;
        let mut x = image.clone();
        let mut preacts = Vec::with_capacity(self.depth());
        let mut maps = Vec::with_capacity(self.depth());
        for (l, kernels) in self.encoder.layers.iter().enumerate() {
            let mut z = ops::conv2d_valid(&x, kernels)?;
            if l == 0 && self.config.coupling {
                let p = ops::channel_product(&z.channel(0)?, &z.channel(1)?)?;
                z = Tensor3::concat_channels(&[&z, &p])?;
            }
            x = ops::tanh_map(&z);
            preacts.push(z);
            maps.push(x.clone());
        }
        let pooled = ops::avg_pool_halves(&x)?;
        Ok(Encoding {
            preacts,
            maps,
            pooled,
        })
    }

    /// Reconstructs the `(W, H, C)` image from the pooled code and the last
    /// pre-pool encoder map.
    pub fn decode(&self, enc: &Encoding) -> Result<Tensor3> {
        let dec = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Usage("model has no decoder".into()))?;
        let skip = enc
            .maps
            .last()
            .ok_or_else(|| Error::Usage("decode needs the encoder skip maps".into()))?;
        let up = ops::replicate_halves(&enc.pooled, skip.rows())?;
        let mut x = Tensor3::concat_channels(&[&up, skip])?;
        let n = dec.depth();
        for (j, kernels) in dec.layers.iter().enumerate() {
            x = ops::transpose_conv2d(&x, kernels)?;
            if j + 1 < n {
                x = ops::tanh_map(&x);
            }
        }
        Ok(x)
    }

    /// Raw (unnormalised) loss terms on one sample. The zero-sum term covers
    /// the encoder kernels only.
    pub fn total_loss(&self, sample: &Sample) -> Result<LossParts> {
        let enc = self.encode(&sample.image)?;
        let labels = sample.cropped_labels(self.depth())?;
        let boundary = ops::mse(&enc.pooled, &labels)?;
        let zero_sum = ops::zero_sum_penalty(self.encoder.kernels(), self.config.lambda_zs);
        let reconstruction = if self.config.lambda_rec > 0.0 {
            self.config.lambda_rec * ops::mse(&self.decode(&enc)?, &sample.image)?
        } else {
            0.0
        };
        Ok(LossParts {
            boundary,
            zero_sum,
            reconstruction,
            total: boundary + zero_sum + reconstruction,
        })
    }

    /// Total loss and its gradient with respect to [`Model::all_params`].
    pub fn loss_and_gradient(&self, sample: &Sample) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let (loss, vars) = self.record_loss(&mut tape, sample, LossNorm::RAW)?;
        let grads = tape.backward(loss)?;
        let mut flat = Vec::with_capacity(self.all_params().len());
        for v in vars {
            flat.extend_from_slice(grads.get(v)?.data());
        }
        Ok((tape.value(loss).item(), flat))
    }

    /// Boundary MSE only, the headline metric.
    pub fn boundary_mse(&self, sample: &Sample) -> Result<f64> {
        let enc = self.encode(&sample.image)?;
        ops::mse(&enc.pooled, &sample.cropped_labels(self.depth())?)
    }

    /// Records the training objective on the tape and returns it with the
    /// kernel variables in [`Model::all_params`] order. The boundary and
    /// reconstruction errors are multiplied by `norm`; the zero-sum penalty
    /// is not.
    pub(crate) fn record_loss(
        &self,
        tape: &mut Tape,
        sample: &Sample,
        norm: LossNorm,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_image(&sample.image)?;
        let mut params = Vec::new();
        let enc_vars: Vec<Vec<Var>> = self
            .encoder
            .layers
            .iter()
            .map(|l| l.iter().map(|k| tape.kernel(k)).collect())
            .collect();
        params.extend(enc_vars.iter().flatten().copied());
        let input = tape.leaf(sample.image.clone());
        let mut x = input;
        for (l, ks) in enc_vars.iter().enumerate() {
            let mut z = tape.conv2d_valid(x, ks)?;
            if l == 0 && self.config.coupling {
                let a = tape.select_channel(z, 0)?;
                let b = tape.select_channel(z, 1)?;
                let p = tape.channel_product(a, b)?;
                z = tape.concat_channels(&[z, p])?;
            }
            x = tape.tanh(z)?;
        }
        let skip = x;
        let pooled = tape.avg_pool_halves(x)?;
        let labels = tape.leaf(sample.cropped_labels(self.depth())?);
        let boundary = tape.mse(pooled, labels)?;
        let mut terms = vec![(boundary, norm.boundary)];
        if self.config.lambda_zs > 0.0 {
            let zs = tape.zero_sum_penalty(&params, self.config.lambda_zs)?;
            terms.push((zs, 1.0));
        }

        if let Some(dec) = &self.decoder {
            let dec_vars: Vec<Vec<Var>> = dec
                .layers
                .iter()
                .map(|l| l.iter().map(|k| tape.kernel(k)).collect())
                .collect();
            params.extend(dec_vars.iter().flatten().copied());
            if self.config.lambda_rec > 0.0 {
                let rows = tape.value(skip).rows();
                let up = tape.replicate_halves(pooled, rows)?;
                let mut y = tape.concat_channels(&[up, skip])?;
                let n = dec_vars.len();
                for (j, ks) in dec_vars.iter().enumerate() {
                    y = tape.transpose_conv2d(y, ks)?;
                    if j + 1 < n {
                        y = tape.tanh(y)?;
                    }
                }
                let rec = tape.mse(y, input)?;
                terms.push((rec, self.config.lambda_rec * norm.image));
            }
        }
        let loss = tape.weighted_sum(&terms)?;
        Ok((loss, params))
    }

    /// Sets single-channel encoders to the scheme's annihilating stencil,
    /// the last layer scaled so the pooled output equals the raw labels.
    ///
    /// Depth 1 uses the 2×2 stencil directly. Depth 2 uses the closed-form
    /// factors when known and the best-fit factorization otherwise.
    pub fn init_from_stencils(&mut self, gen: &GenConfig) -> Result<()> {
        let cfg = &self.config;
        if gen.family != cfg.family {
            return Err(Error::Config(format!(
                "model is {}, data is {}",
                cfg.family, gen.family
            )));
        }
        if cfg.coupling || cfg.widths.iter().any(|&k| k != 1) {
            return Err(Error::Config(
                "stencil initialisation needs one single-channel kernel per layer".into(),
            ));
        }
        let n = cfg.depth();
        let pool = ops::first_half_rows(gen.width - n) as f64;
        let gain = pool * label_gain(cfg.family, gen.a, gen.dx);
        let analytic = analytic_stencil(cfg.family, gen.cfl)?;
        let (sr, sc) = analytic.stencil.extent();
        let kernels = match (n, analytic.factors) {
            (1, _) if (sr, sc) == (2, 2) => vec![analytic.stencil.scaled(gain)],
            (2, Some((k1, k2))) => vec![k1, k2.scaled(gain)],
            (2, None) if sr <= 3 && sc <= 3 => {
                // labels are aligned with the last time column of the window
                let target = analytic.stencil.embed(3, 3, 0, 3 - sc)?;
                let f = best_factorization(&target)?;
                vec![f.first, f.second.scaled(gain)]
            }
            _ => {
                return Err(Error::Config(format!(
                    "no stencil initialisation for {} at depth {n}",
                    cfg.family
                )))
            }
        };
        self.encoder = KernelStack::chain(
            kernels
                .iter()
                .map(Stencil::to_kernel)
                .collect::<Result<Vec<_>>>()?,
        );
        Ok(())
    }
}
