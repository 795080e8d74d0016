//! Parameter checkpoint file: ordered named tensors with shape headers and
//! raw 64-bit little-endian payloads.
//!
//! Layout: 8-byte magic, u32 version, u64 tensor count, then per tensor
//! `u32 name_len / name bytes / u32 rank / u64 dims... / f64 data...`,
//! all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LRCKPT01";
const VERSION: u32 = 1;

/// A named tensor snapshot, detached from any graph (plain data, `Send`).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, tensors: &[TensorData]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for &dim in &t.shape {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(io_err)?;
        }
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has {} values but shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            )));
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<TensorData>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    if u32::from_le_bytes(u32buf) != VERSION {
        return Err(Error::Checkpoint("unsupported version".into()));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(io_err)?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        tensors.push(TensorData { name, shape, data });
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_order_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let tensors = vec![
            TensorData {
                name: "encoder.embedding".into(),
                shape: vec![3, 2],
                data: vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 1e300, -0.5],
            },
            TensorData {
                name: "head.weight".into(),
                shape: vec![2],
                data: vec![0.125, 3.0],
            },
        ];
        write_checkpoint(&path, &tensors).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert_eq!(loaded, tensors);

        // Byte-identical on rewrite.
        let bytes1 = std::fs::read(&path).unwrap();
        write_checkpoint(&path, &loaded).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
