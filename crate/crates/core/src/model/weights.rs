//! Plain-text weights: a header line, then one line per kernel input channel.
//!
//! ```text
//! stencilseer-weights v1 elliptic depth=2 widths=1,1 coupling=0
//! layer=1 k=0 ch=0 w00 w01 w10 w11
//! ```
//!
//! Layers count from 1. Decoder kernels, if any, use `dlayer=` instead.
//! Values are written with 17 significant digits and reload bit-exactly.

use std::fmt::Write as _;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::tensor::{Kernel2x2, KernelStack};

const HEADER: &str = "stencilseer-weights";

fn write_stack(out: &mut String, tag: &str, stack: &KernelStack) {
    for (l, layer) in stack.layers.iter().enumerate() {
        for (k, kernel) in layer.iter().enumerate() {
            for ch in 0..kernel.cin() {
                let t = kernel.taps(ch);
                writeln!(
                    out,
                    "{tag}={} k={k} ch={ch} {:.16e} {:.16e} {:.16e} {:.16e}",
                    l + 1,
                    t[0][0],
                    t[0][1],
                    t[1][0],
                    t[1][1]
                )
                .expect("write to String");
            }
        }
    }
}

pub fn weights_to_text(model: &Model) -> String {
    let cfg = &model.config;
    let widths: Vec<String> = cfg.widths.iter().map(usize::to_string).collect();
    let mut out = format!(
        "{HEADER} v1 {} depth={} widths={} coupling={}\n",
        cfg.family,
        cfg.depth(),
        widths.join(","),
        u8::from(cfg.coupling)
    );
    write_stack(&mut out, "layer", &model.encoder);
    if let Some(d) = &model.decoder {
        write_stack(&mut out, "dlayer", d);
    }
    out
}

fn field<'a>(token: Option<&'a str>, key: &str, line: usize) -> Result<&'a str> {
    token
        .and_then(|t| t.strip_prefix(key)?.strip_prefix('='))
        .ok_or_else(|| Error::Format(format!("weights line {line}: expected {key}=")))
}

fn number<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("weights line {line}: bad {what} {s:?}")))
}

/// Parses a weights file into a model with default loss weights.
pub fn parse_weights(text: &str) -> Result<Model> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::Format("empty weights file".into()))?;
    let mut tok = head.split_whitespace();
    if tok.next() != Some(HEADER) || tok.next() != Some("v1") {
        return Err(Error::Format("not a v1 weights file".into()));
    }
    let family: Family = tok
        .next()
        .ok_or_else(|| Error::Format("missing family".into()))?
        .parse()
        .map_err(|_| Error::Format("unknown family".into()))?;
    let depth: usize = number(field(tok.next(), "depth", 1)?, "depth", 1)?;
    let widths = field(tok.next(), "widths", 1)?
        .split(',')
        .map(|w| number(w, "width", 1))
        .collect::<Result<Vec<usize>>>()?;
    let coupling = match field(tok.next(), "coupling", 1)? {
        "0" => false,
        "1" => true,
        other => return Err(Error::Format(format!("bad coupling flag {other:?}"))),
    };
    if widths.len() != depth {
        return Err(Error::Format(format!(
            "depth={depth} but {} widths",
            widths.len()
        )));
    }
    let mut cfg = ModelConfig::for_family(family)
        .with_widths(widths)
        .with_coupling(coupling);
    cfg.validate().map_err(|e| Error::Format(e.to_string()))?;

    let enc_dims: Vec<(usize, usize)> = (0..depth)
        .map(|l| (cfg.layer_inputs(l), cfg.widths[l]))
        .collect();
    let mut encoder = zero_stack(&enc_dims);
    let mut decoder: Option<KernelStack> = None;
    let mut seen_enc = vec![false; encoder.param_count() / 4];
    let mut seen_dec: Vec<bool> = Vec::new();

    for (i, line) in lines {
        let ln = i + 1;
        let mut tok = line.split_whitespace();
        let first = tok.next().unwrap_or_default();
        let (stack, seen, layer) = if let Some(v) = first.strip_prefix("layer=") {
            (&mut encoder, &mut seen_enc, v)
        } else if let Some(v) = first.strip_prefix("dlayer=") {
            if decoder.is_none() {
                cfg.decoder = true;
                let d = zero_stack(&cfg.decoder_layers());
                seen_dec = vec![false; d.param_count() / 4];
                decoder = Some(d);
            }
            (decoder.as_mut().expect("decoder"), &mut seen_dec, v)
        } else {
            return Err(Error::Format(format!("weights line {ln}: unexpected {first:?}")));
        };
        let l: usize = number(layer, "layer", ln)?;
        let k: usize = number(field(tok.next(), "k", ln)?, "k", ln)?;
        let ch: usize = number(field(tok.next(), "ch", ln)?, "ch", ln)?;
        let w: Vec<f64> = tok.map(|x| number(x, "weight", ln)).collect::<Result<_>>()?;
        if w.len() != 4 || w.iter().any(|x: &f64| !x.is_finite()) {
            return Err(Error::Format(format!("weights line {ln}: need 4 finite weights")));
        }
        let slot = slot_index(stack, l, k, ch)
            .ok_or_else(|| Error::Format(format!("weights line {ln}: index out of range")))?;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::Format(format!("weights line {ln}: duplicate kernel entry")));
        }
        let kernel = &mut stack.layers[l - 1][k];
        for (n, v) in w.into_iter().enumerate() {
            kernel.set(n / 2, n % 2, ch, v);
        }
    }
    if seen_enc.iter().chain(&seen_dec).any(|s| !s) {
        return Err(Error::Format("weights file is missing kernel entries".into()));
    }
    if cfg.decoder {
        cfg.lambda_rec = 1.0;
    }
    Ok(Model {
        config: cfg,
        encoder,
        decoder,
    })
}

fn zero_stack(dims: &[(usize, usize)]) -> KernelStack {
    KernelStack::new(
        dims.iter()
            .map(|&(cin, cout)| (0..cout).map(|_| Kernel2x2::zeros(cin)).collect())
            .collect(),
    )
}

/// Position of `(layer, k, ch)` among all kernel channels of the stack.
fn slot_index(stack: &KernelStack, l: usize, k: usize, ch: usize) -> Option<usize> {
    if l == 0 || l > stack.depth() {
        return None;
    }
    let layer = &stack.layers[l - 1];
    let kernel = layer.get(k)?;
    if ch >= kernel.cin() {
        return None;
    }
    let before: usize = stack.layers[..l - 1]
        .iter()
        .flatten()
        .chain(&layer[..k])
        .map(Kernel2x2::cin)
        .sum();
    Some(before + ch)
}
