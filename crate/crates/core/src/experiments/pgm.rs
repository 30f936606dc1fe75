use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const PGM_MAXVAL: u32 = 65535;

/// Plain (P2) 16-bit grayscale image of one channel, one image row per
/// spatial row. The value range is kept in a comment so maps stay comparable.
pub fn pgm_text(map: &Tensor3, ch: usize) -> Result<String> {
    let (rows, cols, chans) = map.dims();
    if ch >= chans {
        return Err(Error::Shape(format!("channel {ch} of {chans}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in 0..rows {
        for c in 0..cols {
            let v = map.get(r, c, ch);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if rows * cols == 0 {
        lo = 0.0;
        hi = 0.0;
    }
    let mut s = format!("P2\n# min={lo:e} max={hi:e}\n{cols} {rows}\n{PGM_MAXVAL}\n");
    let span = hi - lo;
    for r in 0..rows {
        let line: Vec<String> = (0..cols)
            .map(|c| {
                let v = map.get(r, c, ch);
                let g = if span > 0.0 {
                    ((v - lo) / span * f64::from(PGM_MAXVAL)).round() as u32
                } else {
                    0
                };
                g.to_string()
            })
            .collect();
        writeln!(s, "{}", line.join(" ")).expect("write to String");
    }
    Ok(s)
}

pub fn write_pgm(map: &Tensor3, ch: usize, path: &Path) -> Result<()> {
    std::fs::write(path, pgm_text(map, ch)?).map_err(|e| Error::io(path, e))
}
