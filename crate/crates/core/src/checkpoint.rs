//! JSON checkpoints for trained models. Floats round-trip exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deeponet::DeepOnetModel;
use crate::error::{Error, Result};
use crate::model::{ChemKanCheckpoint, ChemKanModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Checkpoint {
    ChemKan(ChemKanCheckpoint),
    DeepOnet(DeepOnetModel),
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_chemkan(self) -> Result<ChemKanModel> {
        match self {
            Checkpoint::ChemKan(ck) => ChemKanModel::from_checkpoint(&ck),
            Checkpoint::DeepOnet(_) => Err(Error::InvalidConfig("checkpoint holds a DeepONet, expected ChemKAN".into())),
        }
    }

    pub fn into_deeponet(self) -> Result<DeepOnetModel> {
        match self {
            Checkpoint::DeepOnet(m) => Ok(m),
            Checkpoint::ChemKan(_) => Err(Error::InvalidConfig("checkpoint holds a ChemKAN, expected DeepONet".into())),
        }
    }
}

impl From<&ChemKanModel> for Checkpoint {
    fn from(m: &ChemKanModel) -> Self {
        Checkpoint::ChemKan(m.to_checkpoint())
    }
}

impl From<&DeepOnetModel> for Checkpoint {
    fn from(m: &DeepOnetModel) -> Self {
        Checkpoint::DeepOnet(m.clone())
    }
}
