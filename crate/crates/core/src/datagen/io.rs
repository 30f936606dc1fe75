//! Little-endian dataset container and per-sample CSV export.
//!
//! Layout: `"PDEK"`, version `u16`, family `u8`, `u32` W, H, C, N, then N
//! records of image `f64[W·H·C]`, boundary `f64[2·H·C]`, `f64` a, b, cfl and
//! `u64` seed, then the CRC32 of every preceding byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, Sample, SampleMeta};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::tensor::Tensor3;

pub const DATASET_MAGIC: &[u8; 4] = b"PDEK";
pub const DATASET_VERSION: u16 = 1;

const HEADER_BYTES: usize = 4 + 2 + 1 + 4 * 4;
const META_BYTES: usize = 3 * 8 + 8;

/// Exact file size for N samples of `W × H × C`.
pub fn dataset_file_size(w: usize, h: usize, c: usize, n: usize) -> usize {
    HEADER_BYTES + n * (w * h * c * 8 + 2 * h * c * 8 + META_BYTES) + 4
}

fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let first = ds
        .samples
        .first()
        .ok_or_else(|| Error::Format("cannot write an empty dataset".into()))?;
    let (w, h, c) = first.image.dims();
    let mut buf = Vec::with_capacity(dataset_file_size(w, h, c, ds.len()));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.push(ds.family.code());
    for v in [w, h, c, ds.len()] {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in &ds.samples {
        if s.image.dims() != (w, h, c) || s.boundary.dims() != (2, h, c) {
            return Err(Error::Shape("samples in a dataset must share dimensions".into()));
        }
        for &x in s.image.data().iter().chain(s.boundary.data()) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for x in [s.meta.a, s.meta.b, s.meta.cfl] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&s.meta.seed.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("truncated dataset".into()))?;
        self.pos = end;
        Ok(chunk.try_into().expect("chunk length"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_BYTES + 4 {
        return Err(Error::Format("truncated dataset".into()));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = u16::from_le_bytes(r.take()?);
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let code = r.take::<1>()?[0];
    let family =
        Family::from_code(code).ok_or_else(|| Error::Format(format!("unknown family {code}")))?;
    let (w, h, c, n) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let expected = dataset_file_size(w, h, c, n);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "size {} does not match header ({expected} bytes expected)",
            bytes.len()
        )));
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let image = Tensor3::from_vec(w, h, c, r.f64s(w * h * c)?)?;
        let boundary = Tensor3::from_vec(2, h, c, r.f64s(2 * h * c)?)?;
        let (a, b, cfl) = (r.f64()?, r.f64()?, r.f64()?);
        let seed = u64::from_le_bytes(r.take()?);
        samples.push(Sample {
            image,
            boundary,
            meta: SampleMeta {
                family,
                a,
                b,
                cfl,
                seed,
            },
        });
    }
    Ok(Dataset::new(family, samples))
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = encode(ds)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes `<stem>_ch<c>.csv` per channel: one line per spatial row, one
/// column per time step. Returns the written paths.
pub fn export_sample_csv(sample: &Sample, dir: impl AsRef<Path>, stem: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let (w, h, c) = sample.image.dims();
    let mut paths = Vec::with_capacity(c);
    for ch in 0..c {
        let path = dir.join(format!("{stem}_ch{ch}.csv"));
        let mut out = Vec::new();
        for x in 0..w {
            let row: Vec<String> = (0..h)
                .map(|t| format!("{:e}", sample.image.get(x, t, ch)))
                .collect();
            writeln!(out, "{}", row.join(",")).expect("write to Vec");
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
