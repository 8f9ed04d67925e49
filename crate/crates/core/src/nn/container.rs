use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParamStore, Scalar, Tensor};

/// One named array inside a [`Container`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayData {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// In-memory form of the array container file: a JSON text header listing
/// `{name, dtype, shape, byte_offset}` per array (plus an optional `config`
/// block), a terminating newline, a little-endian u64 payload length, and the
/// raw little-endian f32 payload.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub arrays: Vec<ArrayData>,
    pub config: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arrays: Vec<HeaderEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let mut entries = Vec::with_capacity(c.arrays.len());
    let mut offset = 0u64;
    for a in &c.arrays {
        let n: usize = a.shape.iter().product();
        if n != a.data.len() {
            return Err(Error::shape(
                "write_container",
                format!("array '{}': shape {:?} vs {} values", a.name, a.shape, a.data.len()),
            ));
        }
        entries.push(HeaderEntry {
            name: a.name.clone(),
            dtype: "f32".to_string(),
            shape: a.shape.clone(),
            byte_offset: offset,
        });
        offset += (n * 4) as u64;
    }
    let header = Header {
        arrays: entries,
        config: c.config.clone(),
    };
    let mut bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("header serialization: {e}"),
        })?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&offset.to_le_bytes());
    for a in &c.arrays {
        for v in &a.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("no header terminator".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| bad(format!("header JSON: {e}")))?;
    let len_at = nl + 1;
    if bytes.len() < len_at + 8 {
        return Err(bad("truncated before payload length".into()));
    }
    let payload_len =
        u64::from_le_bytes(bytes[len_at..len_at + 8].try_into().expect("8 bytes")) as usize;
    let payload = &bytes[len_at + 8..];
    if payload.len() != payload_len {
        return Err(bad(format!(
            "payload length {} does not match declared {}",
            payload.len(),
            payload_len
        )));
    }
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for e in header.arrays {
        if e.dtype != "f32" {
            return Err(bad(format!("array '{}': unsupported dtype '{}'", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let start = e.byte_offset as usize;
        let end = start
            .checked_add(n * 4)
            .ok_or_else(|| bad(format!("array '{}': offset overflow", e.name)))?;
        if end > payload.len() {
            return Err(bad(format!(
                "array '{}' spans [{start}, {end}) beyond payload {}",
                e.name,
                payload.len()
            )));
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let at = start + i * 4;
            data.push(f32::from_le_bytes(payload[at..at + 4].try_into().expect("4 bytes")));
        }
        arrays.push(ArrayData {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    Ok(Container {
        arrays,
        config: header.config,
    })
}

impl Container {
    pub fn array(&self, name: &str) -> Result<&ArrayData> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("container has no array '{name}'")))
    }

    /// Arrays from a parameter store, in its canonical order (values narrowed
    /// to f32 — the container's on-disk precision).
    pub fn from_params<T: Scalar>(params: &ParamStore<T>, config: Option<serde_json::Value>) -> Self {
        let arrays = params
            .iter()
            .map(|(name, t)| ArrayData {
                name: name.clone(),
                shape: t.shape.clone(),
                data: t.data.iter().map(|v| v.cast_f64() as f32).collect(),
            })
            .collect();
        Container { arrays, config }
    }

    pub fn to_params<T: Scalar>(&self) -> ParamStore<T> {
        let mut p = ParamStore::new();
        for a in &self.arrays {
            let data = a.data.iter().map(|&v| T::cast_from(v as f64)).collect();
            p.insert(
                a.name.clone(),
                Tensor {
                    shape: a.shape.clone(),
                    data,
                },
            );
        }
        p
    }
}
