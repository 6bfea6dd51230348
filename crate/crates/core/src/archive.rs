//! Tensor archive shared by checkpoints and backbone weights.
//!
//! ```text
//! magic        8 bytes   "HAVARCH1"
//! header_len   u64 LE
//! header       JSON      {"format_version", "meta", "blobs": [{name, shape, offset, len}], "content_hash"}
//! blobs        f32 LE    concatenated; offsets/lengths in elements, relative to blob start
//! ```
//!
//! `content_hash` is the SHA-256 of the blob section.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"HAVARCH1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    pub meta: serde_json::Value,
    pub blobs: Vec<BlobEntry>,
    pub content_hash: String,
}

/// Named f32 tensors plus free-form JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub blobs: Vec<(String, Tensor<f32>)>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Archive {
            meta,
            blobs: Vec::new(),
        }
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.blobs.push((name.into(), t.cast()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn blob_bytes(&self) -> Vec<u8> {
        let total: usize = self.blobs.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(total * 4);
        for (_, t) in &self.blobs {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.blob_bytes()))
    }

    pub fn header(&self) -> ArchiveHeader {
        let mut offset = 0;
        let blobs = self
            .blobs
            .iter()
            .map(|(name, t)| {
                let e = BlobEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    len: t.len(),
                };
                offset += t.len();
                e
            })
            .collect();
        ArchiveHeader {
            format_version: FORMAT_VERSION,
            meta: self.meta.clone(),
            blobs,
            content_hash: self.content_hash(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("archive header serializes");
        let blobs = self.blob_bytes();
        let mut out = Vec::with_capacity(16 + header.len() + blobs.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blobs);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a tensor archive (bad magic)".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hend = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("archive truncated inside header".into()))?;
        let header: ArchiveHeader = serde_json::from_slice(&bytes[16..hend])
            .map_err(|e| Error::Format(format!("archive header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported archive version {}",
                header.format_version
            )));
        }
        let data = &bytes[hend..];
        let total: usize = header.blobs.iter().map(|b| b.len).sum();
        if data.len() != total * 4 {
            return Err(Error::Format(format!(
                "archive blob section is {} bytes, header declares {}",
                data.len(),
                total * 4
            )));
        }
        let digest = hex::encode(Sha256::digest(data));
        if digest != header.content_hash {
            return Err(Error::Corruption(format!(
                "content hash {digest} does not match recorded {}",
                header.content_hash
            )));
        }
        let mut blobs = Vec::with_capacity(header.blobs.len());
        for b in &header.blobs {
            if numel(&b.shape) != b.len || (b.offset + b.len) * 4 > data.len() {
                return Err(Error::Format(format!("blob {} has inconsistent extent", b.name)));
            }
            let raw = &data[b.offset * 4..(b.offset + b.len) * 4];
            let vals = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blobs.push((b.name.clone(), Tensor::from_vec(&b.shape, vals)));
        }
        Ok(Archive {
            meta: header.meta,
            blobs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::new(serde_json::json!({"kind": "test", "step": 3}));
        a.push("w", &Tensor::<f32>::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, 0.0]));
        a.push("b", &Tensor::<f32>::from_vec(&[3], vec![0.1, 0.2, 0.3]));
        a
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let a = sample();
        let bytes = a.to_bytes();
        let b = Archive::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_bytes(), bytes);
    }

    #[test]
    fn flipped_blob_byte_is_corruption() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        assert!(matches!(Archive::from_bytes(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn truncation_is_format_error() {
        let bytes = sample().to_bytes();
        for cut in [4, 20, bytes.len() - 1] {
            assert!(matches!(Archive::from_bytes(&bytes[..cut]), Err(Error::Format(_))));
        }
    }
}
