//! Named-tensor checkpoint files.
//!
//! Layout: one line of JSON (the header) terminated by `\n`, followed by the
//! little-endian `f32` payload of every tensor, concatenated in header order.
//!
//! ```text
//! {"format":"eventcl-checkpoint/1","metadata":{...},"tensors":[{"name":"embed.tok","shape":[120,64],"dtype":"f32"},...]}\n
//! <f32 LE bytes of embed.tok><f32 LE bytes of the next tensor>...
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "eventcl-checkpoint/1";

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Serialize, Deserialize, Debug)]
struct Header {
    format: String,
    #[serde(default)]
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// In-memory image of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: CHECKPOINT_FORMAT.to_string(),
            metadata: self.metadata.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?}",
                header.format
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has unsupported dtype {}",
                    entry.name, entry.dtype
                )));
            }
            let numel: usize = entry.shape.iter().product();
            let mut buf = vec![0u8; numel * 4];
            reader.read_exact(&mut buf).map_err(|e| {
                Error::Checkpoint(format!("truncated payload for {}: {e}", entry.name))
            })?;
            let data = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            tensors.push((entry.name, Tensor::new(entry.shape, data)?));
        }
        let mut rest = [0u8; 1];
        if reader.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(Self {
            metadata: header.metadata,
            tensors,
        })
    }

    /// Writes through a temporary sibling file so readers never see a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(f)
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_names_shapes_and_f32_values() {
        let ck = Checkpoint {
            metadata: serde_json::json!({"hidden_dim": 4}),
            tensors: vec![
                ("a".into(), Tensor::new(vec![2, 2], vec![1.0, -2.5, 0.125, 3.0]).unwrap()),
                ("b.bias".into(), Tensor::vector(vec![0.5, 0.25]).unwrap()),
            ],
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_reader(&bytes[..]).unwrap();
        assert_eq!(back, ck);
        // header line then 6 floats
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(bytes.len() - nl - 1, 6 * 4);
        assert_eq!(&bytes[nl + 1..nl + 5], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_rejected() {
        let ck = Checkpoint {
            metadata: serde_json::Value::Null,
            tensors: vec![("a".into(), Tensor::vector(vec![1.0, 2.0]).unwrap())],
        };
        let mut bytes = ck.to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(
            Checkpoint::from_reader(&bytes[..]),
            Err(Error::Checkpoint(_))
        ));
    }
}
