//! `LCV1` weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"LCV1"  u32 tensor_count
//! per tensor: u32 name_len, name (UTF-8), u32 rank, rank x u64 dims,
//!             product(dims) x f32
//! ```
//!
//! Values are always stored as 32-bit floats, whatever the training
//! precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use longconv_core::{ParamStore, Scalar};

use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"LCV1";

/// One named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(tensors: &[StoredTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {} (wanted {n} more)", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> std::result::Result<Vec<StoredTensor>, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic, expected LCV1".into());
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|e| format!("tensor name is not UTF-8: {e}"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(
                usize::try_from(r.u64()?).map_err(|_| "dimension overflows usize".to_string())?,
            );
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("tensor {name} is too large"))?;
        let bytes = r.take(len.checked_mul(4).ok_or("tensor too large")?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(StoredTensor { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(out)
}

/// Snapshot of every parameter, converted to f32.
pub fn snapshot<S: Scalar>(store: &ParamStore<S>) -> Vec<StoredTensor> {
    store
        .iter()
        .map(|(name, t)| StoredTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect()
}

/// Writes to a sibling temporary file, then renames it over `path`, so a
/// crash never leaves a partial checkpoint behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
    tmp.as_file().sync_all().map_err(io_err(tmp.path()))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

pub fn save<S: Scalar>(path: &Path, store: &ParamStore<S>) -> Result<()> {
    write_atomic(path, &encode(&snapshot(store)))
}

pub fn read(path: &Path) -> Result<Vec<StoredTensor>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|msg| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}

/// Loads every parameter of `store` from `path`. The file must hold exactly
/// the store's tensors with matching shapes.
pub fn load_into<S: Scalar>(path: &Path, store: &mut ParamStore<S>) -> Result<()> {
    let tensors = read(path)?;
    let ck = |msg: String| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    if tensors.len() != store.len() {
        return Err(ck(format!(
            "{} tensors in file, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    for t in &tensors {
        let data: Vec<S> = t.data.iter().map(|&v| S::of(v as f64)).collect();
        store
            .load(&t.name, &t.shape, &data)
            .map_err(|e| ck(e.to_string()))?;
    }
    Ok(())
}

/// Copies the tensor `name` of the file at `path` into the same-named
/// parameter, e.g. an externally trained embedding table.
pub fn load_tensor<S: Scalar>(path: &Path, name: &str, store: &mut ParamStore<S>) -> Result<()> {
    let tensors = read(path)?;
    let t = tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("no tensor named {name}"),
        })?;
    let data: Vec<S> = t.data.iter().map(|&v| S::of(v as f64)).collect();
    store
        .load(name, &t.shape, &data)
        .map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use longconv_core::Tensor;

    #[test]
    fn round_trip_and_atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lcv");
        let mut store = ParamStore::<f64>::new();
        store.add(
            "a",
            Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap(),
        );
        store.add("b.bias", Tensor::from_f64(&[1], &[-0.25]).unwrap());
        save(&path, &store).unwrap();
        let mut other = ParamStore::<f64>::new();
        other.add("a", Tensor::zeros(&[2, 3]));
        other.add("b.bias", Tensor::zeros(&[1]));
        load_into(&path, &mut other).unwrap();
        assert_eq!(snapshot(&store), snapshot(&other));
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&[StoredTensor {
            name: "x".into(),
            shape: vec![2],
            data: vec![1.0, 2.0],
        }]);
        assert_eq!(&bytes[..4], b"LCV1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes[12], b'x');
        assert_eq!(&bytes[13..17], &1u32.to_le_bytes());
        assert_eq!(&bytes[17..25], &2u64.to_le_bytes());
        assert_eq!(bytes.len(), 25 + 8);
        assert!(decode(&bytes[..bytes.len() - 1])
            .unwrap_err()
            .contains("truncated"));
    }
}
