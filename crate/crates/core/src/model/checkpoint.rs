use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FlameError, Result};
use crate::nn::{Element, HasParams};

use super::{GazeModel, ModelSpec};

pub const MAGIC: &[u8; 8] = b"FLAMECKP";
pub const VERSION: u32 = 1;

/// Adam moments for every trainable parameter, in model parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    precision: String,
    epoch: usize,
    seed: u64,
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
    /// Adam step count; moments follow the parameters in the data section.
    optimizer_step: Option<u64>,
}

/// Everything needed to rebuild a model and resume its optimizer.
///
/// Layout: `FLAMECKP`, little-endian `u32` version, `u64` header length,
/// JSON header, then every parameter (and, if present, the first and second
/// Adam moments of the trainable ones) as little-endian scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub spec: ModelSpec,
    pub epoch: usize,
    pub seed: u64,
    pub metadata: BTreeMap<String, String>,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub trainable: Vec<bool>,
    pub values: Vec<Vec<F>>,
    pub optimizer: Option<OptimizerState<F>>,
}

impl<F: Element> Checkpoint<F> {
    pub fn capture(
        model: &GazeModel<F>,
        epoch: usize,
        seed: u64,
        metadata: BTreeMap<String, String>,
        optimizer: Option<OptimizerState<F>>,
    ) -> Self {
        let params = model.params();
        Checkpoint {
            spec: model.spec().clone(),
            epoch,
            seed,
            metadata,
            names: params.iter().map(|p| p.name.clone()).collect(),
            shapes: params.iter().map(|p| p.shape.clone()).collect(),
            trainable: params.iter().map(|p| p.trainable).collect(),
            values: params.iter().map(|p| p.value.clone()).collect(),
            optimizer,
        }
    }

    /// Copies stored values into a model built from the same spec.
    pub fn restore_into(&self, model: &mut GazeModel<F>) -> Result<()> {
        if model.spec() != &self.spec {
            return Err(FlameError::Checkpoint(
                "model spec differs from checkpoint".into(),
            ));
        }
        let mut params = model.params_mut();
        if params.len() != self.values.len() {
            return Err(FlameError::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.values.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter_mut().enumerate() {
            if p.name != self.names[i] || p.shape != self.shapes[i] {
                return Err(FlameError::Checkpoint(format!(
                    "tensor {i}: expected {} {:?}, found {} {:?}",
                    p.name, p.shape, self.names[i], self.shapes[i]
                )));
            }
            p.value.copy_from_slice(&self.values[i]);
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<GazeModel<F>> {
        let mut model = GazeModel::new(self.spec.clone())?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    fn trainable_shapes(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.shapes
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(s, _)| s)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            spec: self.spec.clone(),
            precision: F::NAME.to_string(),
            epoch: self.epoch,
            seed: self.seed,
            metadata: self.metadata.clone(),
            tensors: (0..self.names.len())
                .map(|i| TensorEntry {
                    name: self.names[i].clone(),
                    shape: self.shapes[i].clone(),
                    trainable: self.trainable[i],
                })
                .collect(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let json =
            serde_json::to_vec(&header).map_err(|e| FlameError::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut write = |vals: &[F]| vals.iter().for_each(|v| v.write_le(&mut out));
        for v in &self.values {
            write(v);
        }
        if let Some(opt) = &self.optimizer {
            let expected: Vec<usize> = self
                .trainable_shapes()
                .map(|s| s.iter().product())
                .collect();
            let lens: Vec<usize> = opt.m.iter().map(Vec::len).collect();
            let vlens: Vec<usize> = opt.v.iter().map(Vec::len).collect();
            if lens != expected || vlens != expected {
                return Err(FlameError::Checkpoint(
                    "optimizer moments do not match trainable parameters".into(),
                ));
            }
            opt.m.iter().chain(&opt.v).for_each(|v| write(v));
        }
        Ok(out)
    }

    /// Parses a checkpoint; values stored at the other precision are cast.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, hlen) = parse_header(bytes)?;
        let width = match header.precision.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => {
                return Err(FlameError::Checkpoint(format!(
                    "unknown precision `{other}`"
                )))
            }
        };
        let mut cursor = Reader {
            data: &bytes[20 + hlen..],
            width,
        };
        let mut values = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            values.push(cursor.take::<F>(t.shape.iter().product())?);
        }
        let optimizer = match header.optimizer_step {
            Some(step) => {
                let lens: Vec<usize> = header
                    .tensors
                    .iter()
                    .filter(|t| t.trainable)
                    .map(|t| t.shape.iter().product())
                    .collect();
                let m = lens
                    .iter()
                    .map(|&n| cursor.take::<F>(n))
                    .collect::<Result<Vec<_>>>()?;
                let v = lens
                    .iter()
                    .map(|&n| cursor.take::<F>(n))
                    .collect::<Result<Vec<_>>>()?;
                Some(OptimizerState { step, m, v })
            }
            None => None,
        };
        if !cursor.data.is_empty() {
            return Err(FlameError::Checkpoint(
                "trailing bytes after tensor data".into(),
            ));
        }
        Ok(Checkpoint {
            spec: header.spec,
            epoch: header.epoch,
            seed: header.seed,
            metadata: header.metadata,
            names: header.tensors.iter().map(|t| t.name.clone()).collect(),
            shapes: header.tensors.iter().map(|t| t.shape.clone()).collect(),
            trainable: header.tensors.iter().map(|t| t.trainable).collect(),
            values,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| FlameError::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| FlameError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| FlameError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    let bad = |m: &str| FlameError::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a FLAME checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(FlameError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(20..20 + hlen)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| FlameError::Checkpoint(e.to_string()))?;
    Ok((header, hlen))
}

/// Scalar type the checkpoint file was written with (`"f32"` or `"f64"`).
pub fn stored_precision(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| FlameError::io(path, e))?;
    Ok(parse_header(&bytes)?.0.precision)
}

struct Reader<'a> {
    data: &'a [u8],
    width: usize,
}

impl Reader<'_> {
    fn take<F: Element>(&mut self, n: usize) -> Result<Vec<F>> {
        let bytes = n * self.width;
        if self.data.len() < bytes {
            return Err(FlameError::Checkpoint("truncated tensor data".into()));
        }
        let (head, rest) = self.data.split_at(bytes);
        self.data = rest;
        Ok(head
            .chunks_exact(self.width)
            .map(|c| match (self.width, F::BYTES) {
                (w, b) if w == b => F::read_le(c),
                (4, _) => F::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
                _ => F::from_f64(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            })
            .collect())
    }
}
