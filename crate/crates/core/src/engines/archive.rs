//! Weight archive container.
//!
//! Layout: 8-byte magic `SBWT0001`, 8-byte little-endian header length,
//! a UTF-8 header with one `name<TAB>d0,d1,...<TAB>byte_offset` line per
//! tensor, then the little-endian `f32` payload. Offsets are relative to
//! the start of the payload.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::EngineError;

pub const MAGIC: &[u8; 8] = b"SBWT0001";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// A named set of tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Name to shape map; two archives are manifest-equal when these match.
    pub fn manifest(&self) -> BTreeMap<String, Vec<usize>> {
        self.tensors.iter().map(|(k, t)| (k.clone(), t.shape.clone())).collect()
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            header.push_str(&format!("{name}\t{}\t{offset}\n", dims.join(",")));
            offset += t.len() * 4;
        }
        let mut out = Vec::with_capacity(16 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EngineError> {
        let corrupt = |m: &str| EngineError::Archive(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing SBWT0001 magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("header length exceeds file size"))?;
        let header = std::str::from_utf8(&bytes[16..header_end])
            .map_err(|_| corrupt("header is not UTF-8"))?;
        let payload = &bytes[header_end..];

        let mut tensors = BTreeMap::new();
        for (lineno, line) in header.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(EngineError::Archive(format!("header line {}: expected 3 fields", lineno + 1)));
            }
            let name = fields[0].to_string();
            let shape = if fields[1].is_empty() {
                Vec::new()
            } else {
                fields[1]
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| EngineError::Archive(format!("tensor {name}: bad shape {:?}", fields[1])))?
            };
            let offset: usize = fields[2]
                .parse()
                .map_err(|_| EngineError::Archive(format!("tensor {name}: bad offset")))?;
            let count: usize = shape.iter().product();
            let end = offset + count * 4;
            if end > payload.len() {
                return Err(EngineError::Archive(format!(
                    "tensor {name}: declares {count} elements but payload is truncated"
                )));
            }
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Tensor { shape, data });
        }
        Ok(Self { tensors })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), EngineError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, EngineError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
