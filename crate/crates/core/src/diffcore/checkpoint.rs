//! JSON checkpoints of parameter trees with exact `f64` round trips.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::{Layout, ParamTree};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "geodesic-lode-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub blocks: Vec<Block>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            metadata: BTreeMap::new(),
            blocks: Vec::new(),
        }
    }

    /// Appends every block of `tree`, prefixing names with `prefix` when non-empty.
    pub fn push_tree(&mut self, prefix: &str, tree: &ParamTree) {
        for (i, spec) in tree.layout().specs().iter().enumerate() {
            let range = tree.layout().range(super::params::ParamId(i));
            self.blocks.push(Block {
                name: join(prefix, &spec.name),
                rows: spec.rows,
                cols: spec.cols,
                data: tree.flatten()[range].to_vec(),
            });
        }
    }

    pub fn push_vector(&mut self, name: &str, data: &[f64]) {
        self.blocks.push(Block {
            name: name.into(),
            rows: data.len(),
            cols: 1,
            data: data.to_vec(),
        });
    }

    pub fn vector(&self, name: &str) -> Result<&[f64]> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.data.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint has no block `{name}`")))
    }

    /// Rebuilds a tree for `layout`, checking every block's name and shape.
    pub fn tree(&self, prefix: &str, layout: &Arc<Layout>) -> Result<ParamTree> {
        let mut data = Vec::with_capacity(layout.total());
        for spec in layout.specs() {
            let name = join(prefix, &spec.name);
            let block = self
                .blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint has no block `{name}`")))?;
            if block.rows != spec.rows || block.cols != spec.cols || block.data.len() != spec.len()
            {
                return Err(Error::ShapeMismatch(format!(
                    "block `{name}` is {}x{} with {} values, expected {}x{}",
                    block.rows,
                    block.cols,
                    block.data.len(),
                    spec.rows,
                    spec.cols
                )));
            }
            data.extend_from_slice(&block.data);
        }
        ParamTree::from_flat(layout.clone(), data)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unexpected checkpoint format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}
