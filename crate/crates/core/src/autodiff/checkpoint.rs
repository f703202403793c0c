//! `PCRL-CKPT v1` parameter container.
//!
//! Layout: the header line `PCRL-CKPT v1\n`, then for every entry a text line
//! `<name> <rank> <d0> … <dk>\n` followed by the values as little-endian
//! 32-bit floats. Entries run until end of file.

use std::path::Path;

use super::tensor::{ParamStore, Tensor};
use super::Float;
use crate::error::{Error, Result};

pub const HEADER: &str = "PCRL-CKPT v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!("invalid entry name {name:?}")));
        }
        if self.get(&name).is_some() {
            return Err(Error::Format(format!("duplicate entry `{name}`")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    /// Appends every parameter of `store`, prefixing names with `prefix`.
    pub fn push_store<T: Float>(&mut self, prefix: &str, store: &ParamStore<T>) -> Result<()> {
        for (name, t) in store.iter() {
            let mut t = t.cast::<f32>();
            t.grad = None;
            t.requires_grad = false;
            self.push(format!("{prefix}{name}"), t)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter of `store` from the entry `prefix + name`.
    pub fn load_into<T: Float>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        for (name, t) in store.iter_mut() {
            let key = format!("{prefix}{name}");
            let src = self
                .get(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks entry `{key}`")))?;
            if src.shape() != t.shape() {
                return Err(Error::dim(format!(
                    "entry `{key}` has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            for (dst, &v) in t.data_mut().iter_mut().zip(src.data()) {
                *dst = T::of(v as f64);
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(HEADER.as_bytes());
        out.push(b'\n');
        for (name, t) in &self.entries {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            out.extend_from_slice(format!("{name} {} {}\n", dims.len(), dims.join(" ")).as_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let header = read_line(bytes, &mut pos)?;
        if header != HEADER {
            return Err(Error::Format(format!("bad header {header:?}")));
        }
        let mut ckpt = Checkpoint::new();
        while pos < bytes.len() {
            let line = read_line(bytes, &mut pos)?;
            let mut fields = line.split(' ');
            let name = fields.next().unwrap_or_default().to_string();
            let rank: usize = parse_field(fields.next(), &line)?;
            let shape = (0..rank)
                .map(|_| parse_field(fields.next(), &line))
                .collect::<Result<Vec<usize>>>()?;
            if fields.next().is_some_and(|f| !f.is_empty()) {
                return Err(Error::Format(format!("trailing fields in {line:?}")));
            }
            let numel: usize = shape.iter().product();
            let end = pos + numel * 4;
            if end > bytes.len() {
                return Err(Error::Format(format!("entry `{name}` is truncated")));
            }
            let data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            pos = end;
            ckpt.push(name, Tensor::new(&shape, data)?)?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn read_line(bytes: &[u8], pos: &mut usize) -> Result<String> {
    let rest = &bytes[*pos..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("unterminated text line".into()))?;
    let line = std::str::from_utf8(&rest[..nl])
        .map_err(|_| Error::Format("text line is not UTF-8".into()))?
        .to_string();
    *pos += nl + 1;
    Ok(line)
}

fn parse_field(field: Option<&str>, line: &str) -> Result<usize> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Format(format!("malformed entry line {line:?}")))
}
