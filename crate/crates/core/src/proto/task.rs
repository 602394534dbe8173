use serde::{Deserialize, Serialize};

use crate::ldp::PrivacyParams;
use crate::nn::{ModelSpec, LENET_MNIST_V1};

/// Local optimisation settings shipped to clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub eta: f32,
    pub local_epochs: u32,
    pub batch_size: u32,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 0.05,
            local_epochs: 1,
            batch_size: 32,
        }
    }
}

/// The single training task a server runs; delivered in `register_ack`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub architecture_id: String,
    pub hyper: HyperParams,
    pub privacy: PrivacyParams,
    /// T
    pub rounds_total: u32,
    /// m
    pub clients_per_round: u32,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            architecture_id: LENET_MNIST_V1.to_string(),
            hyper: HyperParams::default(),
            privacy: PrivacyParams {
                epsilon: None,
                clip: 1.0,
            },
            rounds_total: 10,
            clients_per_round: 5,
        }
    }
}

impl TaskConfig {
    /// Returns the offending field name and the reason on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        ModelSpec::from_id(&self.architecture_id)
            .map_err(|e| ("architecture_id", e.to_string()))?;
        if !(self.hyper.eta.is_finite() && self.hyper.eta >= 0.0) {
            return Err(("hyper.eta", format!("must be >= 0, got {}", self.hyper.eta)));
        }
        if self.hyper.local_epochs == 0 {
            return Err(("hyper.local_epochs", "must be >= 1".into()));
        }
        if self.hyper.batch_size == 0 {
            return Err(("hyper.batch_size", "must be >= 1".into()));
        }
        self.privacy
            .validate()
            .map_err(|e| ("privacy", e.to_string()))?;
        if self.clients_per_round == 0 {
            return Err(("clients_per_round", "must be >= 1".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelSpec {
        ModelSpec::from_id(&self.architecture_id).unwrap_or_default()
    }
}
