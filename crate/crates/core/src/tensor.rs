//! Dense rank-3 arrays and 2×2 kernels.
//!
//! Layout is row-major with the channel index fastest:
//! `data[(r * cols + c) * channels + ch]`. For space-time images axis 0 is
//! space and axis 1 is time.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    rows: usize,
    cols: usize,
    chans: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(rows: usize, cols: usize, chans: usize) -> Self {
        Tensor3 {
            rows,
            cols,
            chans,
            data: vec![0.0; rows * cols * chans],
        }
    }

    pub fn filled(rows: usize, cols: usize, chans: usize, value: f64) -> Self {
        Tensor3 {
            rows,
            cols,
            chans,
            data: vec![value; rows * cols * chans],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, chans: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || chans == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got ({rows}, {cols}, {chans})"
            )));
        }
        if data.len() != rows * cols * chans {
            return Err(Error::Shape(format!(
                "data length {} does not match ({rows}, {cols}, {chans})",
                data.len()
            )));
        }
        Ok(Tensor3 {
            rows,
            cols,
            chans,
            data,
        })
    }

    /// Builds a single-channel tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(n, m, 1, rows.concat())
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        chans: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(rows, cols, chans);
        for r in 0..rows {
            for c in 0..cols {
                for ch in 0..chans {
                    t.data[(r * cols + c) * chans + ch] = f(r, c, ch);
                }
            }
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor3 {
            rows: 1,
            cols: 1,
            chans: 1,
            data: vec![value],
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.chans)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.chans
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, r: usize, c: usize, ch: usize) -> usize {
        (r * self.cols + c) * self.chans + ch
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[self.index(r, c, ch)]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: f64) {
        let i = self.index(r, c, ch);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The value of a `(1, 1, 1)` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            rows: self.rows,
            cols: self.cols,
            chans: self.chans,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Tensor3 {
        self.map(|x| x * s)
    }

    pub fn dot(&self, other: &Tensor3) -> Result<f64> {
        self.check_same(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// One channel as a `(rows, cols, 1)` tensor.
    pub fn channel(&self, ch: usize) -> Result<Tensor3> {
        if ch >= self.chans {
            return Err(Error::Shape(format!(
                "channel {ch} out of range for {} channels",
                self.chans
            )));
        }
        Ok(Tensor3::from_fn(self.rows, self.cols, 1, |r, c, _| {
            self.get(r, c, ch)
        }))
    }

    /// Stacks tensors of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Tensor3]) -> Result<Tensor3> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let (rows, cols) = (first.rows, first.cols);
        if parts.iter().any(|p| p.rows != rows || p.cols != cols) {
            return Err(Error::Shape("concat: spatial dims differ".into()));
        }
        let chans: usize = parts.iter().map(|p| p.chans).sum();
        let mut out = Tensor3::zeros(rows, cols, chans);
        for r in 0..rows {
            for c in 0..cols {
                let mut k = 0;
                for p in parts {
                    for ch in 0..p.chans {
                        out.set(r, c, k, p.get(r, c, ch));
                        k += 1;
                    }
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn check_same(&self, other: &Tensor3, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor3) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// A 2×2 filter over `cin` input channels. No bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2x2 {
    cin: usize,
    weights: Vec<f64>,
}

impl Kernel2x2 {
    pub fn zeros(cin: usize) -> Self {
        Kernel2x2 {
            cin,
            weights: vec![0.0; 4 * cin],
        }
    }

    /// `weights[(i * 2 + j) * cin + ch]`.
    pub fn new(cin: usize, weights: Vec<f64>) -> Result<Self> {
        if cin == 0 || weights.len() != 4 * cin {
            return Err(Error::Shape(format!(
                "kernel needs 4*{cin} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Shape("kernel weights must be finite".into()));
        }
        Ok(Kernel2x2 { cin, weights })
    }

    /// Single-channel kernel from `[[w00, w01], [w10, w11]]`.
    pub fn single(w: [[f64; 2]; 2]) -> Self {
        Kernel2x2 {
            cin: 1,
            weights: vec![w[0][0], w[0][1], w[1][0], w[1][1]],
        }
    }

    pub fn delta() -> Self {
        Self::single([[1.0, 0.0], [0.0, 0.0]])
    }

    pub fn cin(&self) -> usize {
        self.cin
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.weights[(i * 2 + j) * self.cin + ch]
    }

    pub fn set(&mut self, i: usize, j: usize, ch: usize, v: f64) {
        self.weights[(i * 2 + j) * self.cin + ch] = v;
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The 2×2 taps seen by one input channel.
    pub fn taps(&self, ch: usize) -> [[f64; 2]; 2] {
        [
            [self.get(0, 0, ch), self.get(0, 1, ch)],
            [self.get(1, 0, ch), self.get(1, 1, ch)],
        ]
    }

    pub fn scaled(&self, s: f64) -> Kernel2x2 {
        Kernel2x2 {
            cin: self.cin,
            weights: self.weights.iter().map(|w| w * s).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3 {
            rows: 2,
            cols: 2,
            chans: self.cin,
            data: self.weights.clone(),
        }
    }

    pub fn from_tensor(t: &Tensor3) -> Result<Self> {
        if t.rows != 2 || t.cols != 2 {
            return Err(Error::Shape(format!(
                "kernel tensor must be 2x2xC, got {:?}",
                t.dims()
            )));
        }
        Kernel2x2::new(t.chans, t.data.clone())
    }
}

/// Per-layer kernels of an encoder or decoder.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct KernelStack {
    pub layers: Vec<Vec<Kernel2x2>>,
}

impl KernelStack {
    pub fn new(layers: Vec<Vec<Kernel2x2>>) -> Self {
        KernelStack { layers }
    }

    /// A chain with one single-channel kernel per layer.
    pub fn chain(kernels: Vec<Kernel2x2>) -> Self {
        KernelStack {
            layers: kernels.into_iter().map(|k| vec![k]).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|k| k.weights.len())
            .sum()
    }

    pub fn kernels(&self) -> impl Iterator<Item = &Kernel2x2> {
        self.layers.iter().flatten()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.kernels().flat_map(|k| k.weights.iter().copied()).collect()
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for k in self.layers.iter_mut().flatten() {
            let n = k.weights.len();
            k.weights.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}
