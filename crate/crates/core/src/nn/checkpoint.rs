//! Checkpoint container: 8-byte magic, little-endian u64 header length, a JSON
//! header (caller metadata plus tensor names and shapes), then every tensor's
//! values as little-endian f64 in header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MFCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn encode(meta: &serde_json::Value, tensors: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let header = Header {
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let total: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut at = 16 + len;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let raw = bytes.get(at..at + 8 * n).ok_or_else(|| bad("truncated tensor data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((e.name, Tensor::new(&e.shape, data)?));
        at += 8 * n;
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header.meta, tensors))
}

pub fn write(path: &Path, meta: &serde_json::Value, tensors: &[(String, &Tensor)]) -> Result<()> {
    let bytes = encode(meta, tensors)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let a = Tensor::new(&[2, 2], vec![0.1, -3.0, 1e-300, f64::MAX]).unwrap();
        let b = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let meta = serde_json::json!({"steps": 4});
        let bytes = encode(&meta, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let (m, t) = decode(&bytes).unwrap();
        assert_eq!(m, meta);
        assert_eq!(t, vec![("a".to_string(), a), ("b".to_string(), b)]);
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let a = Tensor::zeros(&[4]);
        let bytes = encode(&serde_json::Value::Null, &[("a".into(), &a)]).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        assert!(matches!(decode(b"notackpt........"), Err(Error::Checkpoint(_))));
    }
}
