//! Binary container for trained parameters.
//!
//! Layout: 8-byte magic, little-endian `u32` version, `u64` header length,
//! UTF-8 JSON header, each section's `f64` values little-endian in the
//! order the header lists them, then a SHA-256 digest of all preceding bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PFIELD\0\x01";
pub const VERSION: u32 = 1;
const DIGEST: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub code_hash: String,
    pub data_sha256: String,
    pub sections: Vec<SectionInfo>,
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub sections: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self { kind: kind.into(), meta, sections: Vec::new() }
    }

    pub fn push(&mut self, name: &str, values: Vec<f64>) {
        self.sections.push((name.into(), values));
    }

    pub fn section(&self, name: &str) -> Option<&[f64]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::new();
        for (_, v) in &self.sections {
            for x in v {
                data.extend_from_slice(&x.to_le_bytes());
            }
        }
        let header = Header {
            kind: self.kind.clone(),
            code_hash: super::CODE_HASH.into(),
            data_sha256: hex::encode(Sha256::digest(&data)),
            sections: self.sections.iter().map(|(n, v)| SectionInfo { name: n.clone(), len: v.len() }).collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<(Self, Header)> {
        let fail = |reason: String| Error::Checkpoint { path: path.into(), reason };
        if bytes.len() < 20 + DIGEST || &bytes[..8] != MAGIC {
            return Err(fail("not a partfield container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(fail(format!("container version {version}, this build reads version {VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let (content, digest) = bytes.split_at(bytes.len() - DIGEST);
        let body = &content[20..];
        if body.len() < hlen {
            return Err(fail(format!("truncated header: {hlen} bytes declared, {} present", body.len())));
        }
        if Sha256::digest(content).as_slice() != digest {
            return Err(fail("file checksum mismatch".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| fail(format!("header: {e}")))?;
        let data = &body[hlen..];
        let want: usize = header.sections.iter().map(|s| s.len * 8).sum();
        if data.len() != want {
            return Err(fail(format!("data is {} bytes, header lists {want}", data.len())));
        }
        if hex::encode(Sha256::digest(data)) != header.data_sha256 {
            return Err(fail("data checksum mismatch".into()));
        }
        let mut sections = Vec::with_capacity(header.sections.len());
        let mut off = 0;
        for s in &header.sections {
            let v = data[off..off + 8 * s.len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            off += 8 * s.len;
            sections.push((s.name.clone(), v));
        }
        Ok((Self { kind: header.kind.clone(), meta: header.meta.clone(), sections }, header))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (c, _) = Self::from_bytes(&bytes, path)?;
        if c.kind != kind {
            return Err(Error::Checkpoint { path: path.into(), reason: format!("holds a `{}`, expected a `{kind}`", c.kind) });
        }
        Ok(c)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("test", serde_json::json!({"seed": 3}));
        c.push("a", vec![1.0, -0.1, f64::MIN_POSITIVE]);
        c.push("b", vec![]);
        c.push("c", vec![std::f64::consts::PI]);
        c
    }

    #[test]
    fn round_trips_exactly() {
        let c = sample();
        let (back, header) = Container::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(header.sections.len(), 3);
    }

    #[test]
    fn diagnoses_corruption() {
        let mut bytes = sample().to_bytes();
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        let err = Container::from_bytes(&wrong, Path::new("x")).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(Container::from_bytes(&bytes, Path::new("x")).unwrap_err().to_string().contains("checksum"));
        assert!(Container::from_bytes(b"nope", Path::new("x")).is_err());
    }

    #[test]
    fn atomic_write_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/c.bin");
        sample().save(&path).unwrap();
        assert_eq!(Container::load(&path, "test").unwrap(), sample());
        assert!(Container::load(&path, "other").is_err());
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
