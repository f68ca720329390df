use serde::{Deserialize, Serialize};

use crate::learning::{ParamVector, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    Global,
    ClusterMean,
    #[default]
    None,
}

/// How local training is coupled to a shared model. With
/// `anchor_source = none` the lambda is ignored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiTaskPlan {
    #[serde(default)]
    pub anchor_source: AnchorSource,
    #[serde(default)]
    pub lambda: f64,
}

impl MultiTaskPlan {
    /// The anchor for one client. `cluster_mean` falls back to the global
    /// model when the client has no cluster yet.
    pub fn anchor<'a>(
        &self,
        global: &'a ParamVector,
        cluster_mean: Option<&'a ParamVector>,
    ) -> Option<&'a ParamVector> {
        match self.anchor_source {
            AnchorSource::None => None,
            AnchorSource::Global => Some(global),
            AnchorSource::ClusterMean => Some(cluster_mean.unwrap_or(global)),
        }
    }

    pub fn apply(&self, base: &TrainingConfig) -> TrainingConfig {
        let mut cfg = base.clone();
        cfg.proximal_lambda = match self.anchor_source {
            AnchorSource::None => 0.0,
            _ => self.lambda,
        };
        cfg
    }
}
