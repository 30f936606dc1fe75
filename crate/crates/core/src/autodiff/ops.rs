//! Forward kernels of the operations the encoder-decoder needs.
//!
//! Convolution is cross-correlation without kernel flip:
//! `out[r][c][k] = Σ_{i,j,ch} kernel_k[i][j][ch] · in[r+i][c+j][ch]`.

use crate::error::{Error, Result};
use crate::tensor::{Kernel2x2, Tensor3};

fn check_kernels(kernels: &[Kernel2x2], cin: usize, what: &str) -> Result<()> {
    if kernels.is_empty() {
        return Err(Error::Shape(format!("{what}: no kernels")));
    }
    if let Some(k) = kernels.iter().find(|k| k.cin() != cin) {
        return Err(Error::Shape(format!(
            "{what}: kernel has {} channels, input has {cin}",
            k.cin()
        )));
    }
    Ok(())
}

/// Valid 2×2 cross-correlation, stride 1, no bias.
pub fn conv2d_valid(input: &Tensor3, kernels: &[Kernel2x2]) -> Result<Tensor3> {
    let (w, h, cin) = input.dims();
    if w < 2 || h < 2 {
        return Err(Error::Shape(format!(
            "conv2d_valid needs at least 2x2 input, got {w}x{h}"
        )));
    }
    check_kernels(kernels, cin, "conv2d_valid")?;
    let kn = kernels.len();
    let mut out = Tensor3::zeros(w - 1, h - 1, kn);
    let x = input.data();
    let o = out.data_mut();
    for r in 0..w - 1 {
        for c in 0..h - 1 {
            for (k, ker) in kernels.iter().enumerate() {
                let kw = ker.weights();
                let mut acc = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        let base = ((r + i) * h + (c + j)) * cin;
                        let kb = (i * 2 + j) * cin;
                        for ch in 0..cin {
                            acc += kw[kb + ch] * x[base + ch];
                        }
                    }
                }
                o[(r * (h - 1) + c) * kn + k] = acc;
            }
        }
    }
    Ok(out)
}

/// Transpose (scatter) 2×2 convolution: `out[r+i][c+j][k] += kernel_k[i][j][ch] · in[r][c][ch]`.
pub fn transpose_conv2d(input: &Tensor3, kernels: &[Kernel2x2]) -> Result<Tensor3> {
    let (w, h, cin) = input.dims();
    if input.is_empty() {
        return Err(Error::Shape("transpose_conv2d: empty input".into()));
    }
    check_kernels(kernels, cin, "transpose_conv2d")?;
    let kn = kernels.len();
    let mut out = Tensor3::zeros(w + 1, h + 1, kn);
    let x = input.data();
    let oh = h + 1;
    let o = out.data_mut();
    for r in 0..w {
        for c in 0..h {
            let xb = (r * h + c) * cin;
            for (k, ker) in kernels.iter().enumerate() {
                let kw = ker.weights();
                for i in 0..2 {
                    for j in 0..2 {
                        let kb = (i * 2 + j) * cin;
                        let mut acc = 0.0;
                        for ch in 0..cin {
                            acc += kw[kb + ch] * x[xb + ch];
                        }
                        o[((r + i) * oh + (c + j)) * kn + k] += acc;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Row count of the first pooling half; the first half takes the extra row.
#[inline]
pub fn first_half_rows(rows: usize) -> usize {
    rows.div_ceil(2)
}

/// Averages the spatial axis over its two halves, giving two rows.
pub fn avg_pool_halves(input: &Tensor3) -> Result<Tensor3> {
    let (rows, cols, chans) = input.dims();
    if rows < 2 {
        return Err(Error::Shape(format!(
            "avg_pool_halves needs at least 2 rows, got {rows}"
        )));
    }
    let split = first_half_rows(rows);
    let mut out = Tensor3::zeros(2, cols, chans);
    for (half, range) in [(0, 0..split), (1, split..rows)] {
        let n = range.len() as f64;
        for c in 0..cols {
            for ch in 0..chans {
                let s: f64 = range.clone().map(|r| input.get(r, c, ch)).sum();
                out.set(half, c, ch, s / n);
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour expansion of a two-row pooled map back to `rows` rows.
pub fn replicate_halves(pooled: &Tensor3, rows: usize) -> Result<Tensor3> {
    if pooled.rows() != 2 || rows < 2 {
        return Err(Error::Shape(format!(
            "replicate_halves expects 2 rows to expand to >= 2, got {} -> {rows}",
            pooled.rows()
        )));
    }
    let split = first_half_rows(rows);
    Ok(Tensor3::from_fn(rows, pooled.cols(), pooled.channels(), |r, c, ch| {
        pooled.get(usize::from(r >= split), c, ch)
    }))
}

pub fn tanh_map(input: &Tensor3) -> Tensor3 {
    input.map(f64::tanh)
}

pub fn channel_product(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    a.check_same(b, "channel_product")?;
    let mut out = a.clone();
    for (o, y) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= y;
    }
    Ok(out)
}

pub fn mse(pred: &Tensor3, target: &Tensor3) -> Result<f64> {
    pred.check_same(target, "mse")?;
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// `lambda · Σ_kernels (Σ w)²`.
pub fn zero_sum_penalty<'a>(kernels: impl IntoIterator<Item = &'a Kernel2x2>, lambda: f64) -> f64 {
    lambda * kernels.into_iter().map(|k| k.sum().powi(2)).sum::<f64>()
}
