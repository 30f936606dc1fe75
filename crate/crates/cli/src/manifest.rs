//! `manifest.txt`: one `<name> <crc32> <bytes>` line per artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

pub const MANIFEST: &str = "manifest.txt";

fn digest(path: &Path) -> io::Result<(u32, u64)> {
    let bytes = fs::read(path)?;
    Ok((crc32fast::hash(&bytes), bytes.len() as u64))
}

fn read(dir: &Path) -> io::Result<BTreeMap<String, (u32, u64)>> {
    let text = match fs::read_to_string(dir.join(MANIFEST)) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(e),
    };
    let bad = |line: &str| io::Error::new(io::ErrorKind::InvalidData, format!("bad line {line:?}"));
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut t = line.split_whitespace();
        let (Some(name), Some(crc), Some(len), None) = (t.next(), t.next(), t.next(), t.next())
        else {
            return Err(bad(line));
        };
        let crc = u32::from_str_radix(crc, 16).map_err(|_| bad(line))?;
        let len = len.parse().map_err(|_| bad(line))?;
        out.insert(name.to_string(), (crc, len));
    }
    Ok(out)
}

/// Adds or refreshes the entries for `names`, keeping those of earlier runs.
pub fn update(dir: &Path, names: &[String]) -> io::Result<()> {
    let mut entries = read(dir)?;
    for name in names {
        entries.insert(name.clone(), digest(&dir.join(name))?);
    }
    let mut text = String::new();
    for (name, (crc, len)) in &entries {
        text.push_str(&format!("{name} {crc:08x} {len}\n"));
    }
    fs::write(dir.join(MANIFEST), text)
}

/// Entries whose file is missing or no longer matches.
pub fn verify(dir: &Path) -> io::Result<Vec<String>> {
    let entries = read(dir)?;
    if entries.is_empty() {
        return Err(io::Error::new(io::ErrorKind::NotFound, "no manifest entries"));
    }
    Ok(entries
        .into_iter()
        .filter(|(name, want)| digest(&dir.join(name)).ok().as_ref() != Some(want))
        .map(|(name, _)| name)
        .collect())
}
