//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends one node holding its output and the ids of its
//! inputs. `backward` walks the nodes in exact reverse order, so the adjoint
//! of each node is complete before it is propagated.

use std::sync::atomic::{AtomicU64, Ordering};

use super::ops;
use crate::error::{Error, Result};
use crate::tensor::{Kernel2x2, Tensor3};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv { input: usize, kernels: Vec<usize> },
    TransposeConv { input: usize, kernels: Vec<usize> },
    PoolHalves { input: usize },
    ReplicateHalves { input: usize },
    Tanh { input: usize },
    Product { a: usize, b: usize },
    Concat { parts: Vec<usize> },
    SelectChannel { input: usize, ch: usize },
    Mse { pred: usize, target: usize },
    ZeroSum { kernels: Vec<usize>, lambda: f64 },
    WeightedSum { terms: Vec<(usize, f64)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor3,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints for every node of one tape.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor3>>,
    shapes: Vec<(usize, usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; exact zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Result<Tensor3> {
        if v.tape != self.tape || v.idx >= self.grads.len() {
            return Err(Error::Usage("variable belongs to a different tape".into()));
        }
        Ok(match &self.grads[v.idx] {
            Some(g) => g.clone(),
            None => {
                let (r, c, ch) = self.shapes[v.idx];
                Tensor3::zeros(r, c, ch)
            }
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Number of recorded operations, leaves excluded.
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn value(&self, v: Var) -> &Tensor3 {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.idx].value
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Usage("variable belongs to a different tape".into()));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor3, op: Op) -> Var {
        debug_assert!(value.is_finite() || !matches!(op, Op::Leaf));
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: Tensor3) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn kernel(&mut self, k: &Kernel2x2) -> Var {
        self.leaf(k.to_tensor())
    }

    fn kernel_values(&self, kernels: &[Var]) -> Result<(Vec<usize>, Vec<Kernel2x2>)> {
        let mut ids = Vec::with_capacity(kernels.len());
        let mut ks = Vec::with_capacity(kernels.len());
        for &k in kernels {
            let i = self.idx(k)?;
            ks.push(Kernel2x2::from_tensor(&self.nodes[i].value)?);
            ids.push(i);
        }
        Ok((ids, ks))
    }

    pub fn conv2d_valid(&mut self, input: Var, kernels: &[Var]) -> Result<Var> {
        let i = self.idx(input)?;
        let (ids, ks) = self.kernel_values(kernels)?;
        let out = ops::conv2d_valid(&self.nodes[i].value, &ks)?;
        Ok(self.push(out, Op::Conv { input: i, kernels: ids }))
    }

    pub fn transpose_conv2d(&mut self, input: Var, kernels: &[Var]) -> Result<Var> {
        let i = self.idx(input)?;
        let (ids, ks) = self.kernel_values(kernels)?;
        let out = ops::transpose_conv2d(&self.nodes[i].value, &ks)?;
        Ok(self.push(out, Op::TransposeConv { input: i, kernels: ids }))
    }

    pub fn avg_pool_halves(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let out = ops::avg_pool_halves(&self.nodes[i].value)?;
        Ok(self.push(out, Op::PoolHalves { input: i }))
    }

    pub fn replicate_halves(&mut self, input: Var, rows: usize) -> Result<Var> {
        let i = self.idx(input)?;
        let out = ops::replicate_halves(&self.nodes[i].value, rows)?;
        Ok(self.push(out, Op::ReplicateHalves { input: i }))
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let out = ops::tanh_map(&self.nodes[i].value);
        Ok(self.push(out, Op::Tanh { input: i }))
    }

    pub fn channel_product(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = ops::channel_product(&self.nodes[ia].value, &self.nodes[ib].value)?;
        Ok(self.push(out, Op::Product { a: ia, b: ib }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let vals: Vec<&Tensor3> = ids.iter().map(|&i| &self.nodes[i].value).collect();
        let out = Tensor3::concat_channels(&vals)?;
        Ok(self.push(out, Op::Concat { parts: ids }))
    }

    pub fn select_channel(&mut self, input: Var, ch: usize) -> Result<Var> {
        let i = self.idx(input)?;
        let out = self.nodes[i].value.channel(ch)?;
        Ok(self.push(out, Op::SelectChannel { input: i, ch }))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (ip, it) = (self.idx(pred)?, self.idx(target)?);
        let out = ops::mse(&self.nodes[ip].value, &self.nodes[it].value)?;
        Ok(self.push(Tensor3::scalar(out), Op::Mse { pred: ip, target: it }))
    }

    pub fn zero_sum_penalty(&mut self, kernels: &[Var], lambda: f64) -> Result<Var> {
        let (ids, ks) = self.kernel_values(kernels)?;
        let out = ops::zero_sum_penalty(&ks, lambda);
        Ok(self.push(Tensor3::scalar(out), Op::ZeroSum { kernels: ids, lambda }))
    }

    /// `Σ weight · term` over scalar terms, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut ids = Vec::with_capacity(terms.len());
        let mut acc = 0.0;
        for &(v, w) in terms {
            let i = self.idx(v)?;
            if self.nodes[i].value.dims() != (1, 1, 1) {
                return Err(Error::Shape("weighted_sum takes scalars".into()));
            }
            acc += w * self.nodes[i].value.item();
            ids.push((i, w));
        }
        Ok(self.push(Tensor3::scalar(acc), Op::WeightedSum { terms: ids }))
    }

    /// Propagates `d loss / d node` for every node recorded before `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.idx(loss).map_err(|_| Error::Usage("loss is not on this tape".into()))?;
        if self.nodes[li].value.dims() != (1, 1, 1) {
            return Err(Error::Usage("loss must be a scalar".into()));
        }
        let mut grads: Vec<Option<Tensor3>> = vec![None; self.nodes.len()];
        grads[li] = Some(Tensor3::scalar(1.0));

        for n in (0..=li).rev() {
            let node = &self.nodes[n];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[n].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Conv { input, kernels } => {
                    let x = &self.nodes[*input].value;
                    let ks = self.kernel_values_by_id(kernels);
                    let (gx, gks) = conv_backward(x, &ks, &g);
                    accumulate(&mut grads, *input, gx);
                    for (&kid, gk) in kernels.iter().zip(gks) {
                        accumulate(&mut grads, kid, gk);
                    }
                }
                Op::TransposeConv { input, kernels } => {
                    let x = &self.nodes[*input].value;
                    let ks = self.kernel_values_by_id(kernels);
                    let (gx, gks) = transpose_conv_backward(x, &ks, &g);
                    accumulate(&mut grads, *input, gx);
                    for (&kid, gk) in kernels.iter().zip(gks) {
                        accumulate(&mut grads, kid, gk);
                    }
                }
                Op::PoolHalves { input } => {
                    let (rows, cols, chans) = self.nodes[*input].value.dims();
                    let split = ops::first_half_rows(rows);
                    let n0 = split as f64;
                    let n1 = (rows - split) as f64;
                    let gx = Tensor3::from_fn(rows, cols, chans, |r, c, ch| {
                        if r < split {
                            g.get(0, c, ch) / n0
                        } else {
                            g.get(1, c, ch) / n1
                        }
                    });
                    accumulate(&mut grads, *input, gx);
                }
                Op::ReplicateHalves { input } => {
                    let (rows, cols, chans) = g.dims();
                    let split = ops::first_half_rows(rows);
                    let mut gx = Tensor3::zeros(2, cols, chans);
                    for r in 0..rows {
                        let half = usize::from(r >= split);
                        for c in 0..cols {
                            for ch in 0..chans {
                                let v = gx.get(half, c, ch) + g.get(r, c, ch);
                                gx.set(half, c, ch, v);
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                }
                Op::Tanh { input } => {
                    let y = &node.value;
                    let mut gx = g.clone();
                    for (gi, yi) in gx.data_mut().iter_mut().zip(y.data()) {
                        *gi *= 1.0 - yi * yi;
                    }
                    accumulate(&mut grads, *input, gx);
                }
                Op::Product { a, b } => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    let ga = ops::channel_product(&g, vb).expect("shapes recorded");
                    let gb = ops::channel_product(&g, va).expect("shapes recorded");
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols, chans) = self.nodes[p].value.dims();
                        let gp = Tensor3::from_fn(rows, cols, chans, |r, c, ch| {
                            g.get(r, c, off + ch)
                        });
                        off += chans;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::SelectChannel { input, ch } => {
                    let (rows, cols, chans) = self.nodes[*input].value.dims();
                    let gx = Tensor3::from_fn(rows, cols, chans, |r, c, k| {
                        if k == *ch {
                            g.get(r, c, 0)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *input, gx);
                }
                Op::Mse { pred, target } => {
                    let p = &self.nodes[*pred].value;
                    let t = &self.nodes[*target].value;
                    let s = g.item() * 2.0 / p.len() as f64;
                    let mut gp = p.clone();
                    for (gi, ti) in gp.data_mut().iter_mut().zip(t.data()) {
                        *gi = s * (*gi - ti);
                    }
                    let gt = gp.scaled(-1.0);
                    accumulate(&mut grads, *pred, gp);
                    accumulate(&mut grads, *target, gt);
                }
                Op::ZeroSum { kernels, lambda } => {
                    for &kid in kernels {
                        let k = &self.nodes[kid].value;
                        let sum: f64 = k.data().iter().sum();
                        let gk = Tensor3::filled(k.rows(), k.cols(), k.channels(), 2.0 * lambda * sum * g.item());
                        accumulate(&mut grads, kid, gk);
                    }
                }
                Op::WeightedSum { terms } => {
                    for &(t, w) in terms {
                        accumulate(&mut grads, t, Tensor3::scalar(w * g.item()));
                    }
                }
            }
            grads[n] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.dims()).collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }

    fn kernel_values_by_id(&self, ids: &[usize]) -> Vec<Kernel2x2> {
        ids.iter()
            .map(|&i| Kernel2x2::from_tensor(&self.nodes[i].value).expect("kernel recorded"))
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Tensor3>], i: usize, g: Tensor3) {
    match &mut grads[i] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn conv_backward(x: &Tensor3, kernels: &[Kernel2x2], g: &Tensor3) -> (Tensor3, Vec<Tensor3>) {
    let (w, h, cin) = x.dims();
    let (ow, oh, kn) = g.dims();
    let mut gx = Tensor3::zeros(w, h, cin);
    let mut gks: Vec<Tensor3> = kernels.iter().map(|_| Tensor3::zeros(2, 2, cin)).collect();
    let xd = x.data();
    let gd = g.data();
    for r in 0..ow {
        for c in 0..oh {
            for (k, ker) in kernels.iter().enumerate() {
                let go = gd[(r * oh + c) * kn + k];
                if go == 0.0 {
                    continue;
                }
                let kw = ker.weights();
                let gk = gks[k].data_mut();
                for i in 0..2 {
                    for j in 0..2 {
                        let base = ((r + i) * h + (c + j)) * cin;
                        let kb = (i * 2 + j) * cin;
                        let gxd = gx.data_mut();
                        for ch in 0..cin {
                            gxd[base + ch] += go * kw[kb + ch];
                            gk[kb + ch] += go * xd[base + ch];
                        }
                    }
                }
            }
        }
    }
    (gx, gks)
}

fn transpose_conv_backward(
    x: &Tensor3,
    kernels: &[Kernel2x2],
    g: &Tensor3,
) -> (Tensor3, Vec<Tensor3>) {
    let (w, h, cin) = x.dims();
    let (_, gh, kn) = g.dims();
    let mut gx = Tensor3::zeros(w, h, cin);
    let mut gks: Vec<Tensor3> = kernels.iter().map(|_| Tensor3::zeros(2, 2, cin)).collect();
    let xd = x.data();
    let gd = g.data();
    for r in 0..w {
        for c in 0..h {
            let xb = (r * h + c) * cin;
            for (k, ker) in kernels.iter().enumerate() {
                let kw = ker.weights();
                for i in 0..2 {
                    for j in 0..2 {
                        let go = gd[((r + i) * gh + (c + j)) * kn + k];
                        let kb = (i * 2 + j) * cin;
                        let gk = gks[k].data_mut();
                        for ch in 0..cin {
                            gk[kb + ch] += go * xd[xb + ch];
                        }
                        let gxd = gx.data_mut();
                        for ch in 0..cin {
                            gxd[xb + ch] += go * kw[kb + ch];
                        }
                    }
                }
            }
        }
    }
    (gx, gks)
}
