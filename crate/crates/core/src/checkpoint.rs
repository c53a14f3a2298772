//! Versioned JSON checkpoints for policies and classifiers.
//!
//! ```json
//! {"format":"lazydagger-checkpoint","version":1,"kind":"policy",
//!  "layer_sizes":[2,64,64,2],"bounds":{"low":[-1,-1],"high":[1,1]},
//!  "seed":0,"params":[...]}
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved
//! network reproduces its outputs bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::ActionBounds;
use crate::nn::Mlp;
use crate::policy::RobotPolicy;
use crate::safety::DiscrepancyClassifier;
use crate::{Error, Result};

pub const FORMAT: &str = "lazydagger-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Policy,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: CheckpointKind,
    pub layer_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<ActionBounds>,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_policy(p: &RobotPolicy) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind: CheckpointKind::Policy,
            layer_sizes: p.net().sizes().to_vec(),
            bounds: Some(p.bounds().clone()),
            seed: p.seed(),
            params: p.net().params().to_vec(),
        }
    }

    pub fn from_classifier(c: &DiscrepancyClassifier) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind: CheckpointKind::Classifier,
            layer_sizes: c.net().sizes().to_vec(),
            bounds: None,
            seed: c.seed(),
            params: c.net().params().to_vec(),
        }
    }

    fn check_header(&self, kind: CheckpointKind) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn into_policy(self) -> Result<RobotPolicy> {
        self.check_header(CheckpointKind::Policy)?;
        let bounds = self
            .bounds
            .ok_or_else(|| Error::Checkpoint("policy checkpoint without bounds".into()))?;
        RobotPolicy::from_net(Mlp::from_params(&self.layer_sizes, self.params)?, bounds, self.seed)
    }

    pub fn into_classifier(self) -> Result<DiscrepancyClassifier> {
        self.check_header(CheckpointKind::Classifier)?;
        DiscrepancyClassifier::from_net(Mlp::from_params(&self.layer_sizes, self.params)?, self.seed)
    }

    /// SHA-256 over kind, layer sizes and the exact parameter bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.kind).as_bytes());
        for s in &self.layer_sizes {
            h.update((*s as u64).to_le_bytes());
        }
        for p in &self.params {
            h.update(p.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn policy_hash(p: &RobotPolicy) -> String {
    Checkpoint::from_policy(p).content_hash()
}
