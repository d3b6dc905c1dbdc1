use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::ClassProfile;
use crate::error::{Error, Result};
use crate::moe::{Backbone, BackboneState, ClassCenters, ExpertAssignment};

const FORMAT_VERSION: u32 = 1;

/// A trained network with the state the losses and reports depend on.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Backbone,
    pub centers: ClassCenters,
    pub assignment: ExpertAssignment,
    pub profile: ClassProfile,
    pub class_names: Vec<String>,
}

/// Serialized run result: config snapshot, its hash and the trained state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    pub config_hash: String,
    pub model: BackboneState,
    pub centers: ClassCenters,
    pub assignment: ExpertAssignment,
    pub profile: ClassProfile,
    pub class_names: Vec<String>,
}

impl Checkpoint {
    pub fn new(config: &RunConfig, trained: &TrainedModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            config_hash: config.hash(),
            model: trained.model.state(),
            centers: trained.centers.clone(),
            assignment: trained.assignment.clone(),
            profile: trained.profile.clone(),
            class_names: trained.class_names.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Loads and checks the stored config hash against the stored config.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Parse {
                context: path.display().to_string(),
                message: format!("unsupported checkpoint format {}", ck.format_version),
            });
        }
        ck.verify()?;
        Ok(ck)
    }

    pub fn verify(&self) -> Result<()> {
        let computed = self.config.hash();
        if computed != self.config_hash {
            return Err(Error::HashMismatch {
                stored: self.config_hash.clone(),
                computed,
            });
        }
        Ok(())
    }

    pub fn trained(&self) -> Result<TrainedModel> {
        Ok(TrainedModel {
            model: Backbone::from_state(self.model.clone())?,
            centers: self.centers.clone(),
            assignment: self.assignment.clone(),
            profile: self.profile.clone(),
            class_names: self.class_names.clone(),
        })
    }
}
