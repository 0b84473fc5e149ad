//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `FLXCKPT1`, a little-endian `u32` header length,
//! the JSON header, then every tensor's data as little-endian `f64` in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

pub const MAGIC: &[u8; 8] = b"FLXCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: String,
    pub seed: u64,
    pub step: u64,
    pub tensors: Vec<TensorMeta>,
    /// Caller-defined metadata (model config, vocabulary hash, sequence length).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut out: W, header: &CheckpointHeader, tensors: &[Tensor]) -> Result<(), NnError> {
    if header.tensors.len() != tensors.len()
        || header.tensors.iter().zip(tensors).any(|(m, t)| m.shape != t.shape())
    {
        return Err(NnError::Checkpoint("header does not describe the tensors".into()));
    }
    let json = serde_json::to_vec(header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    for t in tensors {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(CheckpointHeader, Vec<Tensor>), NnError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for m in &header.tensors {
        let n: usize = m.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(Tensor::from_vec(&m.shape, data)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_exact_round_trip() {
        let tensors = vec![
            Tensor::matrix(&[&[1.5, -0.0], &[f64::MIN_POSITIVE, 1e300]]),
            Tensor::vector(&[std::f64::consts::PI]),
        ];
        let header = CheckpointHeader {
            architecture: "lstm".into(),
            seed: 7,
            step: 12,
            tensors: vec![
                TensorMeta { name: "w".into(), shape: vec![2, 2] },
                TensorMeta { name: "b".into(), shape: vec![1] },
            ],
            meta: serde_json::json!({"max_len": 9}),
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &header, &tensors).unwrap();
        assert!(buf.starts_with(MAGIC));
        let (h2, t2) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!((h2.clone(), t2.clone()), (header, tensors));
        let mut buf2 = Vec::new();
        write_checkpoint(&mut buf2, &h2, &t2).unwrap();
        assert_eq!(buf, buf2);
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
    }
}
