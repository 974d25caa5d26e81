use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiffError, Result, Tensor};

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    /// Buffers (batch-norm running statistics) are stored alongside
    /// parameters but never receive gradients.
    pub trainable: bool,
    pub value: Tensor,
}

/// Named registry of every tensor a model owns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, group: ParamGroup, trainable: bool, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group,
            trainable,
            value,
        });
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn add(&mut self, name: &str, group: ParamGroup, value: Tensor) -> ParamId {
        self.insert(name, group, true, value)
    }

    pub fn add_buffer(&mut self, name: &str, group: ParamGroup, value: Tensor) -> ParamId {
        self.insert(name, group, false, value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Copies values from `other` for every name both stores share with equal shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for entry in &mut self.entries {
            let src = other
                .lookup(&entry.name)
                .ok_or_else(|| DiffError::Checkpoint(format!("missing parameter {}", entry.name)))?;
            let src = other.get(src);
            if src.shape() != entry.value.shape() {
                return Err(DiffError::Checkpoint(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    entry.name,
                    entry.value.shape(),
                    src.shape()
                )));
            }
            entry.value = src.clone();
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, manifest: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            manifest,
            params: self.entries.clone(),
        }
    }

    pub fn from_entries(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut store = ParamStore::new();
        for e in entries {
            if store.index.contains_key(&e.name) {
                return Err(DiffError::Checkpoint(format!("duplicate parameter {}", e.name)));
            }
            let numel: usize = e.value.shape().iter().product();
            if numel != e.value.numel() {
                return Err(DiffError::Checkpoint(format!("parameter {} has inconsistent shape", e.name)));
            }
            store.insert(&e.name, e.group, e.trainable, e.value);
        }
        Ok(store)
    }
}

pub const CHECKPOINT_FORMAT: &str = "topoloc-checkpoint/1";

/// Flat named-parameter file: every entry carries its name, shape and values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub manifest: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| DiffError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| DiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(DiffError::Checkpoint(format!(
                "{}: unsupported format {:?}",
                path.display(),
                ckpt.format
            )));
        }
        Ok(ckpt)
    }

    pub fn store(&self) -> Result<ParamStore> {
        ParamStore::from_entries(self.params.clone())
    }
}
