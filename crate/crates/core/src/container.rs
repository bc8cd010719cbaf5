//! Binary tensor container used for weight files and prompt packs.
//!
//! Layout:
//!
//! ```text
//! magic      8 bytes ("DPTW0001" for weights, "DPTP0001" for prompt packs)
//! header_len u32 little-endian
//! header     header_len bytes of UTF-8, one record per line:
//!              meta <key> <value>
//!              tensor <name> <rank> <extent>...
//! payload    little-endian f32 values of every tensor, in header order
//! ```

use std::fs;
use std::path::Path;

use crate::error::{DptError, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"DPTW0001";
pub const PROMPTS_MAGIC: &[u8; 8] = b"DPTP0001";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

fn format_err(offset: usize, message: impl Into<String>) -> DptError {
    DptError::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl Container {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self, magic: &[u8; 8]) -> Result<Vec<u8>> {
        let mut header = String::new();
        for (k, v) in &self.meta {
            if !valid_token(k) || !valid_token(v) {
                return Err(DptError::Parameter(format!("meta entry {k:?}={v:?} must be non-empty and whitespace-free")));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        for t in &self.tensors {
            if !valid_token(&t.name) {
                return Err(DptError::Parameter(format!("tensor name {:?} must be whitespace-free", t.name)));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(DptError::Shape(format!("tensor {} shape {:?} vs {} values", t.name, t.shape, t.data.len())));
            }
            header.push_str(&format!("tensor {} {}", t.name, t.shape.len()));
            for e in &t.shape {
                header.push_str(&format!(" {e}"));
            }
            header.push('\n');
        }
        let header_len = u32::try_from(header.len())
            .map_err(|_| DptError::Parameter("header larger than 4 GiB".into()))?;
        let payload: usize = self.tensors.iter().map(|t| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(12 + header.len() + payload);
        out.extend_from_slice(magic);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(format_err(bytes.len(), "file shorter than magic"));
        }
        if &bytes[..8] != magic {
            return Err(format_err(
                0,
                format!("expected magic {:?}, found {:?}", String::from_utf8_lossy(magic), String::from_utf8_lossy(&bytes[..8])),
            ));
        }
        if bytes.len() < 12 {
            return Err(format_err(8, "missing header length"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12 + header_len;
        if bytes.len() < header_end {
            return Err(format_err(12, format!("header of {header_len} bytes runs past end of file")));
        }
        let header = std::str::from_utf8(&bytes[12..header_end])
            .map_err(|e| format_err(12 + e.valid_up_to(), "header is not valid UTF-8"))?;

        let mut container = Container::default();
        let mut line_start = 12;
        for line in header.split_inclusive('\n') {
            let offset = line_start;
            line_start += line.len();
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => continue,
                ["meta", k, v] => container.meta.push((k.to_string(), v.to_string())),
                ["tensor", name, rank, extents @ ..] => {
                    let rank: usize = rank
                        .parse()
                        .map_err(|_| format_err(offset, format!("bad rank {rank:?} for tensor {name}")))?;
                    if extents.len() != rank {
                        return Err(format_err(offset, format!("tensor {name} declares rank {rank} but lists {} extents", extents.len())));
                    }
                    let shape = extents
                        .iter()
                        .map(|e| e.parse::<usize>().ok().filter(|&v| v > 0))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| format_err(offset, format!("bad extents for tensor {name}")))?;
                    container.tensors.push(NamedTensor {
                        name: name.to_string(),
                        shape,
                        data: Vec::new(),
                    });
                }
                _ => return Err(format_err(offset, format!("unrecognised header record {:?}", line.trim_end()))),
            }
        }

        let mut pos = header_end;
        for t in &mut container.tensors {
            let count: usize = t.shape.iter().product();
            let end = pos + count * 4;
            if end > bytes.len() {
                return Err(format_err(pos, format!("payload for tensor {} truncated", t.name)));
            }
            t.data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            pos = end;
        }
        if pos != bytes.len() {
            return Err(format_err(pos, format!("{} trailing bytes after payload", bytes.len() - pos)));
        }
        Ok(container)
    }

    pub fn save(&self, path: &Path, magic: &[u8; 8]) -> Result<()> {
        fs::write(path, self.encode(magic)?)?;
        Ok(())
    }

    pub fn load(path: &Path, magic: &[u8; 8]) -> Result<Self> {
        Self::decode(&fs::read(path)?, magic)
    }
}
