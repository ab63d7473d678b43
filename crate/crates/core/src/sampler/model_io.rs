//! Flat named-tensor model files.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then
//! the tensors as little-endian `f32` values. Header offsets are in bytes from
//! the start of the data section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tiny::{TinyConfig, TinyDenoiser};
use crate::error::{Error, Result};

pub const FORMAT: &str = "hazediff-tensors-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub config: TinyConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_model(model: &TinyDenoiser) -> Vec<u8> {
    let header = ModelHeader {
        format: FORMAT.into(),
        config: *model.config(),
        tensors: model
            .specs()
            .iter()
            .map(|s| TensorEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
                offset: s.offset * 4,
                dtype: "f32".into(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(8 + json.len() + model.num_params() * 4);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in model.params() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> std::result::Result<TinyDenoiser, String> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or("file shorter than its length prefix")?;
    let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|e| e.to_string())?;
    let json = bytes
        .get(8..8usize.saturating_add(len))
        .ok_or("truncated header")?;
    let header: ModelHeader = serde_json::from_slice(json).map_err(|e| format!("header: {e}"))?;
    if header.format != FORMAT {
        return Err(format!("unknown format {:?}", header.format));
    }
    let data = &bytes[8 + len..];
    let template = TinyDenoiser::new(header.config, 0).map_err(|e| e.to_string())?;
    if header.tensors.len() != template.specs().len() {
        return Err(format!(
            "expected {} tensors, found {}",
            template.specs().len(),
            header.tensors.len()
        ));
    }
    let mut params = vec![0.0; template.num_params()];
    for spec in template.specs() {
        let entry = header
            .tensors
            .iter()
            .find(|e| e.name == spec.name)
            .ok_or_else(|| format!("missing tensor {}", spec.name))?;
        if entry.shape != spec.shape || entry.dtype != "f32" {
            return Err(format!("tensor {} has shape {:?}/{}", spec.name, entry.shape, entry.dtype));
        }
        let end = entry.offset + spec.len() * 4;
        let raw = data
            .get(entry.offset..end)
            .ok_or_else(|| format!("tensor {} runs past the data section", spec.name))?;
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(format!("tensor {} holds a non-finite value", spec.name));
            }
            params[spec.offset + k] = v as f64;
        }
    }
    TinyDenoiser::from_parts(header.config, params).map_err(|e| e.to_string())
}

pub fn save_model(path: impl AsRef<Path>, model: &TinyDenoiser) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, encode_model(model)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TinyDenoiser> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes).map_err(|reason| Error::Model {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_rounds_to_f32() {
        let mut m = TinyDenoiser::new(TinyConfig::default(), 11).unwrap();
        m.params_mut()[7] = 1.0 / 3.0;
        let back = decode_model(&encode_model(&m)).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.params().iter().zip(back.params()) {
            assert_eq!(*b, *a as f32 as f64);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/model.bin");
        save_model(&path, &back).unwrap();
        assert_eq!(load_model(&path).unwrap(), back);
    }

    #[test]
    fn header_layout() {
        let m = TinyDenoiser::new(TinyConfig::default(), 1).unwrap();
        let bytes = encode_model(&m);
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: ModelHeader = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        assert_eq!(bytes.len(), 8 + len + 4 * m.num_params());
        assert_eq!(header.tensors[1].offset, 4 * m.specs()[1].offset);
    }

    #[test]
    fn rejects_corrupt_files() {
        let m = TinyDenoiser::new(TinyConfig::default(), 1).unwrap();
        let bytes = encode_model(&m);
        assert!(decode_model(&bytes[..4]).is_err());
        assert!(decode_model(&bytes[..bytes.len() - 4]).is_err());
        let mut bad = bytes.clone();
        bad[8..8 + 9].copy_from_slice(b"{\"format\"");
        assert!(decode_model(&bad[..20]).is_err());
    }
}
