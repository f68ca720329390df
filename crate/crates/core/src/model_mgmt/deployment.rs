use std::collections::BTreeMap;

use super::{CoVersionRegistry, Digest};
use crate::client_mgmt::{distance, ClusterAssignment};
use crate::error::{Error, Result};
use crate::learning::ParamVector;

/// Which global model each model user receives.
#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentPlan {
    pub assignments: BTreeMap<String, Digest>,
    /// The cluster each client was matched on.
    pub rationale: BTreeMap<String, usize>,
}

impl DeploymentPlan {
    pub fn digest_for(&self, client_id: &str) -> Option<&Digest> {
        self.assignments.get(client_id)
    }
}

/// Map every clustered client to its cluster's model. Every model digest
/// must already be recorded in the co-versioning registry.
pub fn select_deployment(
    registry: &CoVersionRegistry,
    cluster_assignment: &ClusterAssignment,
    per_cluster_models: &BTreeMap<usize, Digest>,
) -> Result<DeploymentPlan> {
    for (cluster, digest) in per_cluster_models {
        if !registry.contains_model(digest) {
            return Err(Error::Deployment(format!(
                "model {} for cluster {cluster} is not in the co-versioning registry",
                hex::encode(digest)
            )));
        }
    }
    let mut assignments = BTreeMap::new();
    let mut rationale = BTreeMap::new();
    for (client, &cluster) in &cluster_assignment.assignments {
        let digest = per_cluster_models
            .get(&cluster)
            .ok_or_else(|| Error::Deployment(format!("no model for cluster {cluster}")))?;
        assignments.insert(client.clone(), *digest);
        rationale.insert(client.clone(), cluster);
    }
    Ok(DeploymentPlan { assignments, rationale })
}

/// Extend `plan` with users that never trained, each matched to the
/// cluster whose medoid vector is nearest to the user's probe vector.
pub fn assign_new_users(
    plan: &mut DeploymentPlan,
    cluster_assignment: &ClusterAssignment,
    medoid_vectors: &[ParamVector],
    new_users: &BTreeMap<String, ParamVector>,
    per_cluster_models: &BTreeMap<usize, Digest>,
) -> Result<()> {
    if medoid_vectors.len() != cluster_assignment.n_clusters {
        return Err(Error::Deployment(format!(
            "{} medoid vectors for {} clusters",
            medoid_vectors.len(),
            cluster_assignment.n_clusters
        )));
    }
    for (user, probe) in new_users {
        let cluster = medoid_vectors
            .iter()
            .enumerate()
            .map(|(c, m)| {
                m.ensure_dim(probe.dim())?;
                Ok((c, distance(cluster_assignment.metric, probe.values(), m.values())))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(c, _)| c)
            .ok_or_else(|| Error::Deployment("no clusters".into()))?;
        let digest = per_cluster_models
            .get(&cluster)
            .ok_or_else(|| Error::Deployment(format!("no model for cluster {cluster}")))?;
        plan.assignments.insert(user.clone(), *digest);
        plan.rationale.insert(user.clone(), cluster);
    }
    Ok(())
}
