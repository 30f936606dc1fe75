use std::fmt::Write as _;

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::tensor::{Kernel2x2, KernelStack, Tensor3};

/// A small coefficient array, axis 0 = space, axis 1 = time, applied by
/// cross-correlation like the network's convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Stencil {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Stencil {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "stencil {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Stencil { rows, cols, data })
    }

    /// Panics on ragged input; meant for literals.
    pub fn from_rows<const C: usize>(rows: &[[f64; C]]) -> Self {
        Stencil {
            rows: rows.len(),
            cols: C,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    /// The taps one kernel applies to input channel `ch`.
    pub fn from_kernel(k: &Kernel2x2, ch: usize) -> Self {
        let t = k.taps(ch);
        Stencil::from_rows(&t)
    }

    pub fn to_kernel(&self) -> Result<Kernel2x2> {
        if self.extent() != (2, 2) {
            return Err(Error::Shape(format!("{:?} stencil is not 2x2", self.extent())));
        }
        Kernel2x2::new(1, self.data.clone())
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Stencil {
        Stencil {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn transpose(&self) -> Stencil {
        let mut t = Stencil::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Places the stencil at `(di, dj)` inside a zero `rows × cols` array.
    pub fn embed(&self, rows: usize, cols: usize, di: usize, dj: usize) -> Result<Stencil> {
        if di + self.rows > rows || dj + self.cols > cols {
            return Err(Error::Shape(format!(
                "{:?} stencil does not fit {rows}x{cols} at ({di},{dj})",
                self.extent()
            )));
        }
        let mut out = Stencil::zeros(rows, cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(i + di, j + dj, self.get(i, j));
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Stencil) -> Result<f64> {
        if self.extent() != other.extent() {
            return Err(Error::Shape("stencil extents differ".into()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Cross-correlation over one channel of `image`, valid region only.
    pub fn apply(&self, image: &Tensor3, ch: usize) -> Result<Tensor3> {
        let (w, h, c) = image.dims();
        if ch >= c || self.rows > w || self.cols > h {
            return Err(Error::Shape(format!(
                "{:?} stencil does not fit a {w}x{h}x{c} image (channel {ch})",
                self.extent()
            )));
        }
        let (ow, oh) = (w - self.rows + 1, h - self.cols + 1);
        Ok(Tensor3::from_fn(ow, oh, 1, |r, t, _| {
            let mut acc = 0.0;
            for i in 0..self.rows {
                for j in 0..self.cols {
                    acc += self.get(i, j) * image.get(r + i, t + j, ch);
                }
            }
            acc
        }))
    }

    /// Extent line, then one line of full-precision values per row.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.rows, self.cols);
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| format!("{:.17e}", self.get(i, j))).collect();
            writeln!(s, "{}", row.join(" ")).expect("write to String");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Stencil> {
        let bad = |m: &str| Error::Format(format!("stencil dump: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| bad("extent")))
            .collect::<Result<_>>()?;
        let [rows, cols] = head[..] else {
            return Err(bad("extent line needs two integers"));
        };
        let data = lines
            .flat_map(str::split_whitespace)
            .map(|x| x.parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<Vec<_>>>()?;
        Stencil::new(rows, cols, data).map_err(|_| bad("value count"))
    }
}

/// Full 2D polynomial product: applying `a` then `b` by valid
/// cross-correlation equals applying `compose(a, b)` once.
pub fn compose(a: &Stencil, b: &Stencil) -> Stencil {
    let mut out = Stencil::zeros(a.rows + b.rows - 1, a.cols + b.cols - 1);
    for i1 in 0..a.rows {
        for j1 in 0..a.cols {
            let x = a.get(i1, j1);
            if x == 0.0 {
                continue;
            }
            for i2 in 0..b.rows {
                for j2 in 0..b.cols {
                    let k = (i1 + i2) * out.cols + j1 + j2;
                    out.data[k] += x * b.get(i2, j2);
                }
            }
        }
    }
    out
}

/// Composes a chain of single-channel layers.
pub fn compose_stack(stack: &KernelStack) -> Result<Stencil> {
    if stack.depth() == 0 {
        return Err(Error::Usage("empty kernel stack".into()));
    }
    if stack.layers.iter().any(|l| l.len() != 1 || l[0].cin() != 1) {
        return Err(Error::Usage(
            "multi-channel stack: use compose_path or effective_stencil".into(),
        ));
    }
    compose_path(stack, 0, &vec![0; stack.depth()])
}

/// Composes one channel path: starts at input channel `in_ch`, then
/// `path[l]` picks the kernel of layer l, whose output is the channel read
/// by layer l+1.
pub fn compose_path(stack: &KernelStack, in_ch: usize, path: &[usize]) -> Result<Stencil> {
    if path.len() != stack.depth() {
        return Err(Error::Usage(format!(
            "path has {} entries for {} layers",
            path.len(),
            stack.depth()
        )));
    }
    let mut ch = in_ch;
    let mut acc: Option<Stencil> = None;
    for (layer, &k) in stack.layers.iter().zip(path) {
        let kernel = layer
            .get(k)
            .ok_or_else(|| Error::Usage(format!("kernel {k} out of range")))?;
        if ch >= kernel.cin() {
            return Err(Error::Usage(format!("channel {ch} out of range")));
        }
        let s = Stencil::from_kernel(kernel, ch);
        acc = Some(match acc {
            None => s,
            Some(prev) => compose(&prev, &s),
        });
        ch = k;
    }
    acc.ok_or_else(|| Error::Usage("empty kernel stack".into()))
}

/// Linearised end-to-end stencil from input channel `in_ch` to output
/// channel `out_k`: the sum of [`compose_path`] over every channel path.
/// Channels beyond a layer's width (such as a product channel) are skipped.
pub fn effective_stencil(stack: &KernelStack, in_ch: usize, out_k: usize) -> Result<Stencil> {
    let n = stack.depth();
    if n == 0 {
        return Err(Error::Usage("empty kernel stack".into()));
    }
    let mut total = Stencil::zeros(n + 1, n + 1);
    let mut path = vec![0usize; n];
    path[n - 1] = out_k;
    loop {
        total = add(&total, &compose_path(stack, in_ch, &path)?);
        // odometer over the inner layers
        let mut l = 0;
        loop {
            if l + 1 >= n {
                return Ok(total);
            }
            path[l] += 1;
            if path[l] < stack.layers[l].len() {
                break;
            }
            path[l] = 0;
            l += 1;
        }
    }
}

fn add(a: &Stencil, b: &Stencil) -> Stencil {
    Stencil {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    }
}

/// |cosine| between the flattened arrays, the smaller one zero-padded at
/// the bottom and right.
pub fn kernel_similarity(learned: &Stencil, truth: &Stencil) -> Result<f64> {
    let rows = learned.rows.max(truth.rows);
    let cols = learned.cols.max(truth.cols);
    let a = learned.embed(rows, cols, 0, 0)?;
    let b = truth.embed(rows, cols, 0, 0)?;
    cosine(&a.data, &b.data)
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::UndefinedSimilarity);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).abs().min(1.0))
}

/// Best |cosine| over all relative placements of the two stencils.
pub fn aligned_similarity(learned: &Stencil, truth: &Stencil) -> Result<f64> {
    let (nl, nt) = (learned.norm(), truth.norm());
    if nl == 0.0 || nt == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    let mut best = 0.0f64;
    let (lr, lc) = (learned.rows as isize, learned.cols as isize);
    let (tr, tc) = (truth.rows as isize, truth.cols as isize);
    for di in (1 - lr)..tr {
        for dj in (1 - lc)..tc {
            let mut dot = 0.0;
            for i in 0..lr {
                for j in 0..lc {
                    let (ti, tj) = (i + di, j + dj);
                    if (0..tr).contains(&ti) && (0..tc).contains(&tj) {
                        dot += learned.get(i as usize, j as usize)
                            * truth.get(ti as usize, tj as usize);
                    }
                }
            }
            best = best.max(dot.abs());
        }
    }
    Ok((best / (nl * nt)).min(1.0))
}

/// [`aligned_similarity`] maximised over the learned stencil and its
/// transpose, for comparisons whose axis orientation is not known.
pub fn similarity_up_to_transpose(learned: &Stencil, truth: &Stencil) -> Result<f64> {
    Ok(aligned_similarity(learned, truth)?.max(aligned_similarity(&learned.transpose(), truth)?))
}

/// Annihilating stencil of a generator scheme, with a 2×2 factor pair
/// when one is known in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticStencil {
    pub family: Family,
    pub stencil: Stencil,
    pub factors: Option<(Stencil, Stencil)>,
}

/// `cfl` is the transport Courant number (hyperbolic) or diffusion number
/// (parabolic); the elliptic stencil does not depend on it.
pub fn analytic_stencil(family: Family, cfl: f64) -> Result<AnalyticStencil> {
    match family {
        Family::Hyperbolic => Ok(AnalyticStencil {
            family,
            stencil: Stencil::from_rows(&[[-cfl, 0.0], [-(1.0 - cfl), 1.0]]),
            factors: None,
        }),
        Family::Elliptic => {
            let k1 = Stencil::from_rows(&[[0.0, -1.0], [0.0, 1.0]]);
            let k2 = Stencil::from_rows(&[[0.0, 1.0], [0.0, -1.0]]);
            Ok(AnalyticStencil {
                family,
                stencil: compose(&k1, &k2),
                factors: Some((k1, k2)),
            })
        }
        Family::Parabolic => {
            let r = cfl;
            Ok(AnalyticStencil {
                family,
                stencil: Stencil::from_rows(&[
                    [0.0, -r, 0.0],
                    [0.0, -(1.0 - 2.0 * r), 1.0],
                    [0.0, -r, 0.0],
                ]),
                factors: None,
            })
        }
        Family::Coupled => Err(Error::Config(
            "the coupled system has no linear annihilating stencil".into(),
        )),
    }
}

/// Multiplier taking the analytic stencil's residual to the boundary label
/// stored by the generator (the applied source term).
pub fn label_gain(family: Family, a: f64, dx: f64) -> f64 {
    match family {
        Family::Elliptic => -a / (dx * dx),
        _ => 1.0,
    }
}

/// Max-abs residual of `stencil` on channel `ch`, skipping `extent + 1`
/// output rows at each spatial boundary.
pub fn residual_oracle(stencil: &Stencil, sample: &Sample, ch: usize) -> Result<f64> {
    let res = stencil.apply(&sample.image, ch)?;
    let margin = stencil.rows + 1;
    let rows = res.rows();
    if rows <= 2 * margin {
        return Err(Error::Shape("image too narrow for the interior margin".into()));
    }
    let mut m = 0.0f64;
    for r in margin..rows - margin {
        for t in 0..res.cols() {
            m = m.max(res.get(r, t, 0).abs());
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elliptic_factor_composition_identity() {
        let a = analytic_stencil(Family::Elliptic, 0.5).unwrap();
        assert_eq!(
            a.stencil,
            Stencil::from_rows(&[[0.0, 0.0, -1.0], [0.0, 0.0, 2.0], [0.0, 0.0, -1.0]])
        );
        let d = Stencil::from_rows(&[[0.0, -1.0], [0.0, 1.0]]);
        assert_eq!(
            compose(&d, &d),
            Stencil::from_rows(&[[0.0, 0.0, 1.0], [0.0, 0.0, -2.0], [0.0, 0.0, 1.0]])
        );
    }

    #[test]
    fn delta_composition_embeds() {
        let k = Stencil::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let delta = Stencil::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(compose(&delta, &k), k.embed(3, 3, 0, 0).unwrap());
        assert_eq!(compose(&k, &delta), k.embed(3, 3, 0, 0).unwrap());
    }

    #[test]
    fn similarity_examples() {
        let k = Stencil::from_rows(&[[0.0, -1.0], [-1.0, 2.0]]);
        assert!((kernel_similarity(&k, &k.scaled(3.7)).unwrap() - 1.0).abs() < 1e-15);
        assert!((kernel_similarity(&k, &k.scaled(-1.0)).unwrap() - 1.0).abs() < 1e-15);
        let ones = Stencil::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(kernel_similarity(&k, &ones).unwrap(), 0.0);
        assert!(matches!(
            kernel_similarity(&k, &Stencil::zeros(2, 2)),
            Err(Error::UndefinedSimilarity)
        ));
    }

    #[test]
    fn hyperbolic_half_courant_matches_reference_kernel_up_to_transpose() {
        let h = analytic_stencil(Family::Hyperbolic, 0.5).unwrap().stencil;
        let reference = Stencil::from_rows(&[[0.0, -1.0], [-1.0, 2.0]]);
        let shifted = Stencil::from_rows(&[[-1.0, 0.0], [-1.0, 2.0]]);
        assert!((kernel_similarity(&h, &shifted).unwrap() - 1.0).abs() < 1e-15);
        assert!((similarity_up_to_transpose(&h.transpose(), &shifted).unwrap() - 1.0).abs() < 1e-15);
        assert!(kernel_similarity(&h, &reference).unwrap() < 0.99);
        let unit = analytic_stencil(Family::Hyperbolic, 1.0).unwrap().stencil;
        assert_eq!(unit, Stencil::from_rows(&[[-1.0, 0.0], [-0.0, 1.0]]));
    }

    #[test]
    fn aligned_similarity_finds_shifted_copy() {
        let k = Stencil::from_rows(&[[0.0, 1.0], [0.0, -1.0]]);
        let big = k.embed(3, 3, 1, 1).unwrap();
        assert!((aligned_similarity(&k, &big).unwrap() - 1.0).abs() < 1e-15);
        assert!(kernel_similarity(&k, &big).unwrap() < 1e-15);
    }

    #[test]
    fn effective_matches_path_for_chain() {
        let stack = KernelStack::chain(vec![
            Kernel2x2::single([[1.0, 2.0], [3.0, 4.0]]),
            Kernel2x2::single([[0.5, 0.0], [-1.0, 2.0]]),
        ]);
        assert_eq!(
            effective_stencil(&stack, 0, 0).unwrap(),
            compose_stack(&stack).unwrap()
        );
        let wide = KernelStack::new(vec![vec![Kernel2x2::delta(), Kernel2x2::delta()]]);
        assert!(matches!(compose_stack(&wide), Err(Error::Usage(_))));
    }

    #[test]
    fn text_round_trip() {
        let s = Stencil::from_rows(&[[0.1, -1.0 / 3.0, 7e-300], [1.0, 2.0, -0.5]]);
        assert_eq!(Stencil::from_text(&s.to_text()).unwrap(), s);
    }
}
