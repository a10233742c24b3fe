//! Binary checkpoint format for model weights.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"HEPA"
//! version  u32  (currently 1; unknown versions are rejected)
//! meta_len u32, then meta JSON bytes
//! n        u32  tensor count
//! n times: name_len u32, name UTF-8, rank u32, dims (rank x u32),
//!          values (prod(dims) x f32 bit patterns)
//! ```
//!
//! Values are written as raw `f32` bit patterns, so save/load round-trips
//! are bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hepa_core::{HepaError, ModelWeights};
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 4] = *b"HEPA";
pub const FORMAT_VERSION: u32 = 1;

/// Provenance blob stored alongside the tensors. `epsilon` is the
/// representation error of the pretraining run the weights descend from;
/// finetuned checkpoints carry it forward from their input checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    /// FNV-1a hash of the config JSON that produced the run, as hex.
    pub config_hash: String,
    pub epoch: usize,
    pub epsilon: f32,
    pub d_in: usize,
}

/// FNV-1a over raw bytes; stable across platforms, unlike `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> hepa_core::Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn save(path: &Path, weights: &ModelWeights, meta: &CheckpointMeta) -> hepa_core::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    let meta_json = serde_json::to_vec(meta)?;
    write_u32(&mut w, meta_json.len() as u32)?;
    w.write_all(&meta_json)?;
    let n = weights.entries().count();
    write_u32(&mut w, n as u32)?;
    for (name, rows, cols, values) in weights.entries() {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(&mut w, 2)?;
        write_u32(&mut w, rows as u32)?;
        write_u32(&mut w, cols as u32)?;
        for &v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    r: BufReader<File>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> HepaError {
        HepaError::checkpoint(format!("{}: {msg}", self.path.display()))
    }

    fn bytes(&mut self, n: usize, what: &str) -> hepa_core::Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r
            .read_exact(&mut buf)
            .map_err(|_| self.err(&format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> hepa_core::Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load(path: &Path) -> hepa_core::Result<(ModelWeights, CheckpointMeta)> {
    let file = File::open(path)
        .map_err(|e| HepaError::checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut r = Reader { r: BufReader::new(file), path };

    if r.bytes(4, "magic")? != MAGIC {
        return Err(r.err("not a HEPA checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(r.err(&format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
    }
    let meta_len = r.u32("meta length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(&r.bytes(meta_len, "metadata")?)
        .map_err(|e| r.err(&format!("bad metadata JSON: {e}")))?;

    // The seed only affects values we are about to overwrite.
    let mut weights = ModelWeights::new(meta.d_in, 0);
    let expected = weights.entries().count();
    let n = r.u32("tensor count")? as usize;
    if n != expected {
        return Err(r.err(&format!("{n} tensors, model has {expected}")));
    }
    let mut seen = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.bytes(name_len, "name")?)
            .map_err(|_| r.err("tensor name is not UTF-8"))?;
        let rank = r.u32("rank")?;
        if rank != 2 {
            return Err(r.err(&format!("tensor {name} has rank {rank}, expected 2")));
        }
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let raw = r.bytes(rows * cols * 4, &format!("values of {name}"))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let declared = weights
            .get(&name)
            .map(|(_, shape)| shape)
            .ok_or_else(|| r.err(&format!("unknown tensor name {name}")))?;
        if declared != (rows, cols) {
            return Err(r.err(&format!(
                "tensor {name} is {rows}x{cols}, model wants {}x{}",
                declared.0, declared.1
            )));
        }
        if seen.contains(&name) {
            return Err(r.err(&format!("duplicate tensor {name}")));
        }
        weights.set(&name, values)?;
        seen.push(name);
    }
    let mut trailing = [0u8; 1];
    if r.r.read(&mut trailing)? != 0 {
        return Err(r.err("trailing bytes after last tensor"));
    }
    Ok((weights, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(d_in: usize) -> CheckpointMeta {
        CheckpointMeta { config_hash: format!("{:016x}", fnv1a64(b"cfg")), epoch: 7, epsilon: 0.125, d_in }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let weights = ModelWeights::new(24, 42);
        save(&path, &weights, &meta(24)).unwrap();
        let (loaded, m) = load(&path).unwrap();
        assert_eq!(m, meta(24));
        for ((an, ar, ac, av), (bn, br, bc, bv)) in weights.entries().zip(loaded.entries()) {
            assert_eq!((an, ar, ac), (bn, br, bc));
            for (x, y) in av.iter().zip(bv) {
                assert_eq!(x.to_bits(), y.to_bits(), "tensor {an} changed");
            }
        }
        // Saving the loaded weights reproduces the file byte for byte.
        let path2 = dir.path().join("w2.ckpt");
        save(&path2, &loaded, &m).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        save(&path, &ModelWeights::new(4, 0), &meta(4)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("version 2"), "got: {err}");
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load(&path).unwrap_err().to_string().contains("bad magic"));
        save(&path, &ModelWeights::new(4, 0), &meta(4)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load(&path).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn hash_is_stable() {
        // Pinned so config hashes in metadata stay comparable across builds.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
