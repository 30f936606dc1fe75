//! Interpretability checks: analytic stencils, kernel composition,
//! similarity scores, zero-feature-map reports and factorization search.

mod factor;
mod stencil;

use std::fmt::Write as _;

pub use factor::{best_factorization, Factorization, FACTOR_MAX_ITERS, FACTOR_STARTS};
pub use stencil::{
    aligned_similarity, analytic_stencil, compose, compose_path, compose_stack, effective_stencil,
    kernel_similarity, label_gain, residual_oracle, similarity_up_to_transpose, AnalyticStencil,
    Stencil,
};

use crate::datagen::Sample;
use crate::error::Result;
use crate::model::Model;
use crate::tensor::Tensor3;

/// Rows at each spatial edge left out of interior statistics.
pub const EDGE_ROWS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStats {
    /// 1-based layer index.
    pub layer: usize,
    pub interior_max_abs: f64,
    pub interior_mean_abs: f64,
    /// Largest magnitude within the excluded edge rows.
    pub boundary_max_abs: f64,
    /// Mean |activation| of each spatial row over time and channels.
    pub row_profile: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationReport {
    pub layers: Vec<LayerStats>,
}

impl ActivationReport {
    /// Interior max-abs of the last pre-pool map, the zero-feature-map error.
    pub fn activation_error(&self) -> f64 {
        self.layers.last().map_or(0.0, |l| l.interior_max_abs)
    }

    /// `layer,stat,value` rows; profiles appear as `row_<r>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,stat,value\n");
        for l in &self.layers {
            for (stat, v) in [
                ("interior_max_abs", l.interior_max_abs),
                ("interior_mean_abs", l.interior_mean_abs),
                ("boundary_max_abs", l.boundary_max_abs),
            ] {
                writeln!(s, "{},{stat},{v:e}", l.layer).expect("write to String");
            }
            for (r, v) in l.row_profile.iter().enumerate() {
                writeln!(s, "{},row_{r},{v:e}", l.layer).expect("write to String");
            }
        }
        s
    }
}

/// Statistics of one feature map with the edge rows excluded.
pub fn layer_stats(layer: usize, map: &Tensor3) -> LayerStats {
    let (rows, cols, chans) = map.dims();
    let mut row_profile = vec![0.0; rows];
    let (mut imax, mut isum, mut icount, mut bmax) = (0.0f64, 0.0, 0usize, 0.0f64);
    for (r, prof) in row_profile.iter_mut().enumerate() {
        let interior = r >= EDGE_ROWS && r + EDGE_ROWS < rows;
        let mut rsum = 0.0;
        for c in 0..cols {
            for ch in 0..chans {
                let v = map.get(r, c, ch).abs();
                rsum += v;
                if interior {
                    imax = imax.max(v);
                    isum += v;
                    icount += 1;
                } else {
                    bmax = bmax.max(v);
                }
            }
        }
        *prof = rsum / (cols * chans) as f64;
    }
    LayerStats {
        layer,
        interior_max_abs: imax,
        interior_mean_abs: if icount == 0 { 0.0 } else { isum / icount as f64 },
        boundary_max_abs: bmax,
        row_profile,
    }
}

/// Runs the encoder and summarises every post-activation map.
pub fn activation_report(model: &Model, sample: &Sample) -> Result<ActivationReport> {
    let enc = model.encode(&sample.image)?;
    Ok(ActivationReport {
        layers: enc
            .maps
            .iter()
            .enumerate()
            .map(|(l, m)| layer_stats(l + 1, m))
            .collect(),
    })
}
