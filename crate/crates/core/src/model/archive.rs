//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0..8        magic  b"CTCWARC1"
//! 8..16       u64    length H of the JSON index
//! 16..16+H    JSON   {"format_version":1,"metadata":{..},
//!                     "tensors":[{"name","dtype","shape","offset","length"}]}
//! 16+H..      raw tensor data; `offset`/`length` are bytes relative to here
//! ```
//!
//! `dtype` is `"f64"` or `"f32"`; readers widen `f32` to `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CTCWARC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightArchive {
    pub format_version: u32,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct Index {
    format_version: u32,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    tensors: Vec<IndexEntry>,
}

impl WeightArchive {
    pub fn new() -> Self {
        WeightArchive {
            format_version: FORMAT_VERSION,
            ..Default::default()
        }
    }

    pub fn from_model(model: &mut super::Model) -> Self {
        let mut a = Self::new();
        for (name, shape, data) in model.state() {
            a.tensors.push(NamedTensor { name, shape, data });
        }
        a
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::ArchiveTensor {
                    name: t.name.clone(),
                    message: format!("shape {:?} does not match {} values", t.shape, t.data.len()),
                });
            }
            let offset = data.len() as u64;
            for v in &t.data {
                data.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(IndexEntry {
                name: t.name.clone(),
                dtype: "f64".into(),
                shape: t.shape.clone(),
                offset,
                length: data.len() as u64 - offset,
            });
        }
        let index = serde_json::to_vec(&Index {
            format_version: self.format_version,
            metadata: self.metadata.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(16 + index.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(index.len() as u64).to_le_bytes());
        out.extend_from_slice(&index);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Archive("bad magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Archive("truncated index".into()))?;
        let index: Index = serde_json::from_slice(&bytes[16..data_start])?;
        if index.format_version != FORMAT_VERSION {
            return Err(Error::Archive(format!(
                "unsupported format version {}",
                index.format_version
            )));
        }
        let data = &bytes[data_start..];
        let mut tensors = Vec::with_capacity(index.tensors.len());
        for e in index.tensors {
            let width = match e.dtype.as_str() {
                "f64" => 8,
                "f32" => 4,
                other => {
                    return Err(Error::ArchiveTensor {
                        name: e.name,
                        message: format!("unsupported dtype `{other}`"),
                    })
                }
            };
            let count: usize = e.shape.iter().product();
            let (start, len) = (e.offset as usize, e.length as usize);
            if len != count * width || start.checked_add(len).is_none_or(|end| end > data.len()) {
                return Err(Error::ArchiveTensor {
                    name: e.name,
                    message: "data range inconsistent with shape".into(),
                });
            }
            let raw = &data[start..start + len];
            let values = if width == 8 {
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            } else {
                raw.chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                    .collect()
            };
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data: values,
            });
        }
        Ok(WeightArchive {
            format_version: index.format_version,
            metadata: index.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
