use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::tape::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Named dense parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Matrix>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: [usize; 2],
    values: Vec<f64>,
}

/// Key reserved for free-form metadata in checkpoint documents.
pub const METADATA_KEY: &str = "metadata";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name)
    }

    /// Looks up a parameter that must exist.
    pub fn expect(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .values()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Records `name` on the tape, as a trainable leaf when `trainable`.
    pub fn leaf<'t>(&self, tape: &'t Tape, name: &str, trainable: bool) -> Result<Var<'t>> {
        let value = self.expect(name)?.clone();
        Ok(if trainable {
            tape.param(value)
        } else {
            tape.constant(value)
        })
    }

    /// Checkpoint document: parameter name → `{shape, values}` in row-major
    /// order, plus an optional `metadata` object.
    pub fn to_json(&self, metadata: Option<Value>) -> Value {
        let mut doc = serde_json::Map::new();
        for (name, m) in &self.params {
            let stored = StoredTensor {
                shape: [m.nrows(), m.ncols()],
                values: m.iter().copied().collect(),
            };
            doc.insert(
                name.clone(),
                serde_json::to_value(stored).expect("plain data"),
            );
        }
        if let Some(meta) = metadata {
            doc.insert(METADATA_KEY.to_string(), meta);
        }
        Value::Object(doc)
    }

    /// Parses a checkpoint document, returning parameters and metadata.
    pub fn from_json(doc: &Value) -> Result<(Self, Option<Value>)> {
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::Checkpoint("top level must be an object".into()))?;
        let mut store = ParamStore::new();
        let mut meta = None;
        for (name, v) in obj {
            if name == METADATA_KEY {
                meta = Some(v.clone());
                continue;
            }
            let stored: StoredTensor = serde_json::from_value(v.clone())
                .map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
            let [r, c] = stored.shape;
            let m = Array2::from_shape_vec((r, c), stored.values).map_err(|e| {
                Error::Checkpoint(format!(
                    "`{name}`: shape {r}x{c} does not match values: {e}"
                ))
            })?;
            store.insert(name.clone(), m);
        }
        Ok((store, meta))
    }

    pub fn save(&self, path: &Path, metadata: Option<Value>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json(metadata))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<Value>)> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}
