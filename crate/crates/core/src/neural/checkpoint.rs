//! Binary parameter checkpoints.
//!
//! ```text
//! b"MRLCOCKP" | u32 version | u32 header length | header JSON | payload
//! ```
//! The header holds the dtype tag, the network config, the tensor table
//! (names and shapes, in payload order) and free-form metadata. The payload
//! is every tensor's values, little-endian, in table order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{ParamEntry, ParamLayout, PolicyParams};
use super::NetConfig;

const MAGIC: &[u8; 8] = b"MRLCOCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub config: NetConfig,
    pub tensors: Vec<ParamEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn to_bytes<T: Scalar>(params: &PolicyParams<T>, meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        dtype: T::DTYPE.to_string(),
        config: params.config().clone(),
        tensors: params.layout().entries.clone(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + params.len() * T::WIDTH);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &x in params.flat() {
        x.write_le(&mut out);
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("checkpoint truncated".into()))
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(bytes, 8)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(bytes, 12)? as usize;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
    Ok((serde_json::from_slice(json)?, 16 + len))
}

/// Decodes a checkpoint; when `expected` is given the stored config must
/// match it exactly.
pub fn from_bytes<T: Scalar>(bytes: &[u8], expected: Option<&NetConfig>) -> Result<(PolicyParams<T>, CheckpointHeader)> {
    let (header, start) = read_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "checkpoint holds {} values, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    if let Some(cfg) = expected {
        if *cfg != header.config {
            return Err(Error::Config(format!(
                "checkpoint config {:?} does not match {:?}",
                header.config, cfg
            )));
        }
    }
    let layout = ParamLayout::new(&header.config)?;
    let stored: Vec<(&str, &[usize])> = header.tensors.iter().map(|e| (e.name.as_str(), e.shape.as_slice())).collect();
    let wanted: Vec<(&str, &[usize])> = layout.entries.iter().map(|e| (e.name.as_str(), e.shape.as_slice())).collect();
    if stored != wanted {
        return Err(Error::Shape("checkpoint tensor table does not match its config".into()));
    }
    let payload = &bytes[start..];
    if payload.len() != layout.total() * T::WIDTH {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            layout.total() * T::WIDTH
        )));
    }
    let data = payload.chunks_exact(T::WIDTH).map(T::read_le).collect();
    Ok((PolicyParams::from_flat(layout, data)?, header))
}

/// Writes through a temporary file and renames into place.
pub fn save<T: Scalar>(path: &Path, params: &PolicyParams<T>, meta: serde_json::Value) -> Result<()> {
    let bytes = to_bytes(params, meta)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path, expected: Option<&NetConfig>) -> Result<(PolicyParams<T>, CheckpointHeader)> {
    from_bytes(&std::fs::read(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn cfg() -> NetConfig {
        NetConfig::small(8, 4)
    }

    #[test]
    fn round_trip_and_rejections() {
        let layout = ParamLayout::new(&cfg()).unwrap();
        let p = PolicyParams::<f64>::init(layout, &mut rng::stream(2, &[]));
        let bytes = to_bytes(&p, serde_json::json!({"iteration": 3})).unwrap();
        let (q, h) = from_bytes::<f64>(&bytes, Some(&cfg())).unwrap();
        assert_eq!(p, q);
        assert_eq!(h.meta["iteration"], 3);

        assert!(matches!(from_bytes::<f32>(&bytes, None), Err(Error::Format(_))));
        let other = NetConfig { hidden: 5, ..cfg() };
        assert!(matches!(from_bytes::<f64>(&bytes, Some(&other)), Err(Error::Config(_))));
        assert!(from_bytes::<f64>(&bytes[..bytes.len() - 1], None).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes::<f64>(&bad, None).is_err());
    }

    #[test]
    fn f32_payload_width() {
        let layout = ParamLayout::new(&cfg()).unwrap();
        let p = PolicyParams::<f32>::init(layout.clone(), &mut rng::stream(2, &[]));
        let bytes = to_bytes(&p, serde_json::Value::Null).unwrap();
        let (_, start) = read_header(&bytes).unwrap();
        assert_eq!(bytes.len() - start, layout.total() * 4);
        assert_eq!(from_bytes::<f32>(&bytes, None).unwrap().0, p);
    }
}
