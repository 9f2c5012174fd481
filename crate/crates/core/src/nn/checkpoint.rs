use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::policy::GaussianPolicy;
use super::NnError;

pub const CHECKPOINT_FORMAT: &str = "vbpsim-mlp-v1";

/// JSON checkpoint of one network: a header with the layer sizes (and the
/// policy's log standard deviation, for actors) followed by the flat
/// parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub layers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<f64>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_mlp(net: &Mlp) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            layers: net.dims().to_vec(),
            log_std: None,
            params: net.params().to_vec(),
        }
    }

    pub fn from_policy(policy: &GaussianPolicy) -> Self {
        Self {
            log_std: Some(policy.log_std),
            ..Self::from_mlp(&policy.mean_net)
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp, NnError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!(
                "unsupported format `{}`",
                self.format
            )));
        }
        Mlp::from_params(&self.layers, self.params.clone())
    }

    pub fn to_policy(&self) -> Result<GaussianPolicy, NnError> {
        let log_std = self
            .log_std
            .ok_or_else(|| NnError::Checkpoint("policy checkpoint lacks log_std".into()))?;
        let net = self.to_mlp()?;
        if net.output_dim() != 1 {
            return Err(NnError::Checkpoint("policy head must be scalar".into()));
        }
        Ok(GaussianPolicy::new(net, log_std))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let text = serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let text = fs::read_to_string(path).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))
    }
}
