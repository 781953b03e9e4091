//! Graph trimming: every frame of a tracklet is a node, the pooled feature is
//! the central node, and nodes whose squared cosine deviation from the center
//! exceeds a per-tracklet dynamic threshold are dropped before pooling.

use log::warn;

use crate::error::{NhacError, Result};
use crate::vector::{cosine, euclidean, mean, norm};

/// Default noise relaxation.
pub const DEFAULT_DELTA: f64 = 0.5;

/// Per-tracklet graph over frame embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletGraph {
    pub node_features: Vec<Vec<f64>>,
    pub centroid: Vec<f64>,
    pub similarities: Vec<f64>,
    pub deviations: Vec<f64>,
}

/// Outcome of trimming one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    pub threshold: f64,
    pub survivor_mask: Vec<bool>,
    pub feature: Vec<f64>,
}

impl Trimmed {
    pub fn trimmed_count(&self) -> usize {
        self.survivor_mask.iter().filter(|&&s| !s).count()
    }

    pub fn survivors(&self) -> impl Iterator<Item = usize> + '_ {
        self.survivor_mask
            .iter()
            .enumerate()
            .filter_map(|(j, &keep)| keep.then_some(j))
    }
}

/// Pools node embeddings into the central node and scores every node by its
/// cosine similarity to it.
pub fn build_graph(node_embeddings: Vec<Vec<f64>>) -> Result<TrackletGraph> {
    let dim = node_embeddings
        .first()
        .map(Vec::len)
        .ok_or_else(|| NhacError::input("tracklet graph needs at least one node"))?;
    if node_embeddings.iter().any(|n| n.len() != dim) {
        return Err(NhacError::input("graph nodes have mixed dimensions"));
    }
    let centroid = mean(node_embeddings.iter().map(Vec::as_slice));
    if norm(&centroid) == 0.0 {
        warn!("tracklet graph has a zero centroid; similarities set to 0");
    }
    let similarities: Vec<f64> = node_embeddings.iter().map(|n| cosine(n, &centroid)).collect();
    let deviations = similarities.iter().map(|s| (1.0 - s) * (1.0 - s)).collect();
    Ok(TrackletGraph {
        node_features: node_embeddings,
        centroid,
        similarities,
        deviations,
    })
}

/// `q = sum(u) / (L * delta)`.
pub fn dynamic_threshold(deviations: &[f64], delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(NhacError::config(format!("delta {delta} must be positive")));
    }
    if deviations.is_empty() {
        return Err(NhacError::input("dynamic threshold of an empty graph"));
    }
    let total: f64 = deviations.iter().sum();
    Ok(total / (deviations.len() as f64 * delta))
}

impl TrackletGraph {
    pub fn len(&self) -> usize {
        self.node_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_features.is_empty()
    }

    /// Drops nodes with `u > q` (strict) and pools the survivors. If nothing
    /// is dropped the pooled feature is the centroid itself.
    pub fn trim(&self, delta: f64) -> Result<Trimmed> {
        let threshold = dynamic_threshold(&self.deviations, delta)?;
        let survivor_mask: Vec<bool> = self.deviations.iter().map(|&u| u <= threshold).collect();
        let kept = survivor_mask.iter().filter(|&&s| s).count();
        let feature = if kept == survivor_mask.len() {
            self.centroid.clone()
        } else if kept == 0 {
            // only reachable with delta > 1
            warn!("every node trimmed (delta {delta}); keeping the untrimmed centroid");
            self.centroid.clone()
        } else {
            mean(
                self.node_features
                    .iter()
                    .zip(&survivor_mask)
                    .filter_map(|(f, &keep)| keep.then_some(f.as_slice())),
            )
        };
        Ok(Trimmed {
            threshold,
            survivor_mask,
            feature,
        })
    }

    /// Trimming switched off: every node survives and the feature is the centroid.
    pub fn untrimmed(&self) -> Trimmed {
        Trimmed {
            threshold: f64::INFINITY,
            survivor_mask: vec![true; self.len()],
            feature: self.centroid.clone(),
        }
    }
}

/// Minimum pairwise Euclidean distance between two sets of trimmed features.
pub fn trimmed_cluster_distance(cluster_a: &[&[f64]], cluster_b: &[&[f64]]) -> Result<f64> {
    if cluster_a.is_empty() || cluster_b.is_empty() {
        return Err(NhacError::input("cluster distance needs non-empty clusters"));
    }
    Ok(cluster_a
        .iter()
        .flat_map(|a| cluster_b.iter().map(move |b| euclidean(a, b)))
        .fold(f64::INFINITY, f64::min))
}
