//! Named parameter tensors and the JSON tensor manifest used for checkpoints
//! and emitted token streams.
//!
//! A manifest lists each tensor with its name, shape and row-major values.
//! Floats are written with shortest round-trip formatting and parsed back
//! exactly, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "aquavis-tensors";
pub const MANIFEST_VERSION: u32 = 1;

pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

pub struct ParamViewMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a mut [f64],
}

/// A fixed, ordered collection of named trainable tensors.
pub trait ParamSet {
    fn params(&self) -> Vec<ParamView<'_>>;
    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>>;

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.values.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn view1<'a>(name: &str, a: &'a Array1<f64>) -> ParamView<'a> {
    ParamView {
        name: name.to_string(),
        shape: vec![a.len()],
        values: a.as_slice().expect("contiguous parameter"),
    }
}

pub(crate) fn view2<'a>(name: &str, a: &'a Array2<f64>) -> ParamView<'a> {
    ParamView {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        values: a.as_slice().expect("contiguous parameter"),
    }
}

pub(crate) fn view1_mut<'a>(name: &str, a: &'a mut Array1<f64>) -> ParamViewMut<'a> {
    ParamViewMut {
        name: name.to_string(),
        shape: vec![a.len()],
        values: a.as_slice_mut().expect("contiguous parameter"),
    }
}

pub(crate) fn view2_mut<'a>(name: &str, a: &'a mut Array2<f64>) -> ParamViewMut<'a> {
    ParamViewMut {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        values: a.as_slice_mut().expect("contiguous parameter"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub format: String,
    pub version: u32,
    pub meta: BTreeMap<String, Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Deserialize)]
struct RawManifest {
    format: String,
    version: u32,
    #[serde(default)]
    meta: BTreeMap<String, Value>,
    tensors: Vec<Value>,
}

impl TensorManifest {
    pub fn new(meta: BTreeMap<String, Value>) -> Self {
        TensorManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn from_params(params: &impl ParamSet, meta: BTreeMap<String, Value>) -> Self {
        let mut m = Self::new(meta);
        for p in params.params() {
            m.push(p.name, p.shape, p.values.to_vec());
        }
        m
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        self.tensors.push(TensorEntry {
            name: name.into(),
            shape,
            values,
        });
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &Array2<f64>) {
        self.push(name, m.shape().to_vec(), m.iter().copied().collect());
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies every tensor of `params` from the manifest, validating shapes.
    pub fn load_into(&self, params: &mut impl ParamSet) -> Result<()> {
        for p in params.params_mut() {
            let entry = self.get(&p.name).ok_or_else(|| Error::Checkpoint {
                param: p.name.clone(),
                message: "missing from checkpoint".into(),
            })?;
            if entry.shape != p.shape {
                return Err(Error::Checkpoint {
                    param: p.name.clone(),
                    message: format!("shape {:?} does not match expected {:?}", entry.shape, p.shape),
                });
            }
            p.values.copy_from_slice(&entry.values);
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a manifest, attributing per-tensor corruption to the tensor name.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawManifest = serde_json::from_str(text).map_err(|e| Error::Checkpoint {
            param: "<manifest>".into(),
            message: e.to_string(),
        })?;
        if raw.format != MANIFEST_FORMAT || raw.version != MANIFEST_VERSION {
            return Err(Error::Checkpoint {
                param: "<manifest>".into(),
                message: format!("unsupported format {} v{}", raw.format, raw.version),
            });
        }
        let mut tensors = Vec::with_capacity(raw.tensors.len());
        for (i, v) in raw.tensors.into_iter().enumerate() {
            let name = v
                .get("name")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("<tensor #{i}>"));
            let entry: TensorEntry = serde_json::from_value(v).map_err(|e| Error::Checkpoint {
                param: name.clone(),
                message: e.to_string(),
            })?;
            let expected: usize = entry.shape.iter().product();
            if entry.values.len() != expected {
                return Err(Error::Checkpoint {
                    param: name,
                    message: format!(
                        "{} values for shape {:?} (expected {expected})",
                        entry.values.len(),
                        entry.shape
                    ),
                });
            }
            tensors.push(entry);
        }
        Ok(TensorManifest {
            format: raw.format,
            version: raw.version,
            meta: raw.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
