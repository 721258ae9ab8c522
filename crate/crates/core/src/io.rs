//! Shared on-disk container: 4-byte magic `FARE`, a text manifest of
//! `key=value` lines closed by an `end` line, then a raw little-endian
//! 32-bit-float blob.  Weights (`.fwt`) and trajectory datasets (`.ftraj`)
//! both use this envelope; the `kind` key says which.

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"FARE";

/// Manifest entries in file order plus the blob.  Entry order is preserved
/// so writes are byte-reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub entries: Vec<(String, String)>,
    pub blob: Vec<f32>,
}

impl Container {
    pub fn new() -> Container {
        Container {
            entries: Vec::new(),
            blob: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        debug_assert!(!key.contains('=') && !key.is_empty());
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, path: &Path, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(path, format!("manifest missing key `{key}`")))
    }

    pub fn require_parsed<T: std::str::FromStr>(&self, path: &Path, key: &str) -> Result<T> {
        self.require(path, key)?
            .parse()
            .map_err(|_| Error::format(path, format!("manifest key `{key}` is not a valid value")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(256 + 4 * self.blob.len());
        buf.extend_from_slice(MAGIC);
        buf.push(b'\n');
        for (k, v) in &self.entries {
            writeln!(buf, "{k}={v}").expect("vec write");
        }
        buf.extend_from_slice(b"end\n");
        for v in &self.blob {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Container> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 5 || &bytes[..4] != MAGIC || bytes[4] != b'\n' {
            return Err(Error::format(path, "missing FARE magic"));
        }
        let mut entries = Vec::new();
        let mut pos = 5;
        loop {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format(path, "manifest not terminated by `end`"))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| Error::format(path, "manifest is not UTF-8"))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("manifest line without `=`: {line}")))?;
            entries.push((k.to_string(), v.to_string()));
        }
        let blob_bytes = &bytes[pos..];
        if blob_bytes.len() % 4 != 0 {
            return Err(Error::format(path, "blob length is not a multiple of 4"));
        }
        let blob = blob_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Container { entries, blob })
    }
}

impl Default for Container {
    fn default() -> Self {
        Self::new()
    }
}

/// Formats an f64 with enough digits to round-trip exactly through parsing.
pub fn f64_exact(v: f64) -> String {
    format!("{v:.17e}")
}

/// Fails with a format error unless the container's `kind` entry matches.
pub fn expect_kind(c: &Container, path: &Path, kind: &str) -> Result<()> {
    let found = c.require(path, "kind")?;
    if found != kind {
        return Err(Error::format(
            path,
            format!("expected kind={kind}, found kind={found}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_entries_and_blob() {
        let dir = std::env::temp_dir().join("fare-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.fwt");
        let mut c = Container::new();
        c.push("version", 1);
        c.push("kind", "policy");
        c.blob = vec![0.0, -1.5, 3.25e-8, f32::MAX];
        c.write(&path).unwrap();
        let back = Container::read(&path).unwrap();
        assert_eq!(c, back);
        // Byte-stable: writing the parsed container reproduces the file.
        let first = fs::read(&path).unwrap();
        back.write(&path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = std::env::temp_dir().join("fare-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.fwt");
        fs::write(&path, b"NOPE\nend\n").unwrap();
        assert!(Container::read(&path).is_err());
    }

    #[test]
    fn f64_exact_round_trips() {
        for &v in &[0.0, 1.0 / 3.0, -2.718281828459045e-11, 1e18] {
            assert_eq!(v, f64_exact(v).parse::<f64>().unwrap());
        }
    }
}
