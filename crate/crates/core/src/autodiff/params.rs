use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameter arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, ParamId>,
}

pub const CHECKPOINT_FORMAT: &str = "teglo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    params: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Serialize as the versioned JSON checkpoint container.
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, m)| NamedArray {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::format("<checkpoint>", e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "<checkpoint>",
                format!("unsupported container {} v{}", file.format, file.version),
            ));
        }
        let mut store = ParamStore::new();
        for p in file.params {
            store.insert(p.name, Matrix::from_vec(p.rows, p.cols, p.data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { detail, .. } => Error::format(path, detail),
            other => other,
        })
    }

    /// Copy values from `other` for every name both stores share with
    /// identical shapes; errors on any missing or mismatched entry.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let id = other
                .id(name)
                .ok_or_else(|| Error::Contract(format!("checkpoint lacks parameter {name}")))?;
            let src = other.get(id);
            if src.shape() != self.values[i].shape() {
                return Err(Error::shape(
                    "assign_from",
                    format!("{name}: {:?} vs {:?}", src.shape(), self.values[i].shape()),
                ));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}
