//! Versioned binary checkpoints with a JSON sidecar.
//!
//! Layout: magic, format version, user version, meta JSON, then one
//! section per named store. All integers little-endian; tensor data is
//! raw f64 LE, so identical stores serialize to identical bytes.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::{ParamEntry, ParamKind, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RPCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("store mismatch: {0}")]
    StoreMismatch(String),
    #[error("invalid sidecar JSON: {0}")]
    Meta(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn io_err(path: &Path, source: io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> io::Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> io::Result<()> {
    write_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        write_u64(w, d as u64)?;
    }
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> io::Result<Vec<u8>> {
    let n = read_u64(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_tensor(r: &mut impl Read) -> io::Result<Tensor> {
    let ndim = read_u32(r)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok(Tensor::from_vec(&shape, data))
}

/// Save named parameter stores plus a JSON meta document.
/// Writes `<path>` (binary) and `<path>.json` (sidecar copy of meta).
/// The write is atomic: temp file then rename.
pub fn save_checkpoint(
    path: &Path,
    user_version: u32,
    stores: &[(&str, &ParamStore)],
    meta: &serde_json::Value,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let mut inner = || -> io::Result<()> {
            w.write_all(MAGIC)?;
            write_u32(&mut w, FORMAT_VERSION)?;
            write_u32(&mut w, user_version)?;
            write_bytes(&mut w, meta.to_string().as_bytes())?;
            write_u32(&mut w, stores.len() as u32)?;
            for (name, store) in stores {
                write_bytes(&mut w, name.as_bytes())?;
                write_u64(&mut w, store.entries().len() as u64)?;
                for e in store.entries() {
                    write_bytes(&mut w, e.name.as_bytes())?;
                    w.write_all(&[match e.kind {
                        ParamKind::Trainable => 0u8,
                        ParamKind::Buffer => 1u8,
                    }])?;
                    write_tensor(&mut w, &e.value)?;
                    write_tensor(&mut w, &e.m)?;
                    write_tensor(&mut w, &e.v)?;
                }
            }
            w.flush()
        };
        inner().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, serde_json::to_string_pretty(meta).unwrap())
        .map_err(|e| io_err(&sidecar, e))?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

pub struct RawCheckpoint {
    pub user_version: u32,
    pub meta: serde_json::Value,
    pub stores: Vec<(String, Vec<ParamEntry>)>,
}

impl RawCheckpoint {
    pub fn store(&self, name: &str) -> Option<&[ParamEntry]> {
        self.stores
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e.as_slice())
    }

    /// Load one named section into an already-constructed store.
    pub fn load_into(&self, name: &str, store: &mut ParamStore) -> Result<()> {
        let entries = self
            .store(name)
            .ok_or_else(|| CheckpointError::StoreMismatch(format!("missing section {name}")))?;
        store
            .load_from(entries)
            .map_err(CheckpointError::StoreMismatch)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<RawCheckpoint> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let fmt = read_u32(&mut r).map_err(|e| io_err(path, e))?;
    if fmt != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(fmt));
    }
    let user_version = read_u32(&mut r).map_err(|e| io_err(path, e))?;
    let meta_bytes = read_bytes(&mut r).map_err(|e| io_err(path, e))?;
    let meta: serde_json::Value = serde_json::from_slice(&meta_bytes)?;
    let n_stores = read_u32(&mut r).map_err(|e| io_err(path, e))? as usize;
    let mut stores = Vec::with_capacity(n_stores);
    for _ in 0..n_stores {
        let name = String::from_utf8(read_bytes(&mut r).map_err(|e| io_err(path, e))?)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let n_entries = read_u64(&mut r).map_err(|e| io_err(path, e))? as usize;
        let mut entries = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let ename = String::from_utf8(read_bytes(&mut r).map_err(|e| io_err(path, e))?)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            let mut kind_b = [0u8; 1];
            r.read_exact(&mut kind_b).map_err(|e| io_err(path, e))?;
            let kind = match kind_b[0] {
                0 => ParamKind::Trainable,
                1 => ParamKind::Buffer,
                k => return Err(CheckpointError::Corrupt(format!("bad param kind {k}"))),
            };
            let value = read_tensor(&mut r).map_err(|e| io_err(path, e))?;
            let m = read_tensor(&mut r).map_err(|e| io_err(path, e))?;
            let v = read_tensor(&mut r).map_err(|e| io_err(path, e))?;
            entries.push(ParamEntry {
                name: ename,
                kind,
                value,
                m,
                v,
            });
        }
        stores.push((name, entries));
    }
    Ok(RawCheckpoint {
        user_version,
        meta,
        stores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join("repose_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.ckpt");
        let mut store = ParamStore::new();
        store.add("w", ParamKind::Trainable, Tensor::from_vec(&[2, 2], vec![1., 2., 3., 4.]));
        store.add("u", ParamKind::Buffer, Tensor::from_vec(&[2], vec![0.5, -0.5]));
        let meta = serde_json::json!({"kind": "test", "epoch": 3});
        save_checkpoint(&path, 7, &[("net", &store)], &meta).unwrap();

        let raw = load_checkpoint(&path).unwrap();
        assert_eq!(raw.user_version, 7);
        assert_eq!(raw.meta["epoch"], 3);
        let mut fresh = ParamStore::new();
        fresh.add("w", ParamKind::Trainable, Tensor::zeros(&[2, 2]));
        fresh.add("u", ParamKind::Buffer, Tensor::zeros(&[2]));
        raw.load_into("net", &mut fresh).unwrap();
        assert_eq!(fresh.entries()[0].value.data(), &[1., 2., 3., 4.]);
        assert_eq!(fresh.entries()[1].value.data(), &[0.5, -0.5]);
        assert!(sidecar_path(&path).exists());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn identical_stores_identical_bytes() {
        let dir = std::env::temp_dir().join("repose_ckpt_det");
        fs::create_dir_all(&dir).unwrap();
        let mut store = ParamStore::new();
        store.add("w", ParamKind::Trainable, Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]));
        let meta = serde_json::json!({"seed": 1});
        let p1 = dir.join("one.ckpt");
        let p2 = dir.join("two.ckpt");
        save_checkpoint(&p1, 1, &[("net", &store)], &meta).unwrap();
        save_checkpoint(&p2, 1, &[("net", &store)], &meta).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        fs::remove_dir_all(&dir).ok();
    }
}
