use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gir::ElementKind;

/// Dense row-major tensor. Values are held as f64 whatever the element kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub kind: ElementKind,
    pub data: Vec<f64>,
}

pub type TensorMap = BTreeMap<String, Tensor>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    shape: Vec<usize>,
    kind: ElementKind,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, kind: ElementKind, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Execution(format!(
                "shape {shape:?} holds {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, kind, data })
    }

    pub fn zeros(shape: Vec<usize>, kind: ElementKind) -> Self {
        let n = shape.iter().product();
        Tensor { shape, kind, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Writes `[u64 LE header length][JSON header][little-endian payload]`.
pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let header = serde_json::to_vec(&Header { shape: t.shape.clone(), kind: t.kind })?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(header.len() as u64).to_le_bytes())?;
    f.write_all(&header)?;
    for &v in &t.data {
        match t.kind {
            ElementKind::I32 => f.write_all(&(v as i32).to_le_bytes())?,
            ElementKind::I64 => f.write_all(&(v as i64).to_le_bytes())?,
            ElementKind::F32 => f.write_all(&(v as f32).to_le_bytes())?,
            ElementKind::F64 => f.write_all(&v.to_le_bytes())?,
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || Error::Schema(format!("{}: truncated tensor file", path.display()));
    let len = u64::from_le_bytes(bytes.get(..8).ok_or_else(bad)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(bytes.get(8..8 + len).ok_or_else(bad)?)?;
    let body = &bytes[8 + len..];
    let width = (header.kind.bits() / 8) as usize;
    let n: usize = header.shape.iter().product();
    if body.len() != n * width {
        return Err(bad());
    }
    let data = body
        .chunks_exact(width)
        .map(|c| match header.kind {
            ElementKind::I32 => i32::from_le_bytes(c.try_into().unwrap()) as f64,
            ElementKind::I64 => i64::from_le_bytes(c.try_into().unwrap()) as f64,
            ElementKind::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            ElementKind::F64 => f64::from_le_bytes(c.try_into().unwrap()),
        })
        .collect();
    Tensor::new(header.shape, header.kind, data)
}
