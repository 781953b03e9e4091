//! Retrieval (CMC, mAP), clustering (pairwise F1) and trimming metrics.

use log::warn;
use serde::Serialize;

use crate::nrm::NodeSplit;
use crate::synth::FrameKind;

/// Gallery order of every query (ascending distance, ties by gallery index)
/// with per-position match flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub orders: Vec<Vec<usize>>,
    pub matches: Vec<Vec<bool>>,
}

impl RankingResult {
    pub fn new<T: PartialEq>(distances: &[Vec<f64>], query_ids: &[T], gallery_ids: &[T]) -> Self {
        assert_eq!(distances.len(), query_ids.len(), "one distance row per query");
        let mut orders = Vec::with_capacity(distances.len());
        let mut matches = Vec::with_capacity(distances.len());
        for (row, qid) in distances.iter().zip(query_ids) {
            assert_eq!(row.len(), gallery_ids.len(), "one distance per gallery entry");
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            matches.push(order.iter().map(|&g| gallery_ids[g] == *qid).collect());
            orders.push(order);
        }
        Self { orders, matches }
    }

    /// Indices of queries with at least one correct gallery entry.
    fn valid_queries(&self) -> Vec<usize> {
        let valid: Vec<usize> = (0..self.matches.len())
            .filter(|&q| self.matches[q].iter().any(|&m| m))
            .collect();
        if valid.len() < self.matches.len() {
            warn!("{} queries without a gallery match excluded", self.matches.len() - valid.len());
        }
        valid
    }

    pub fn cmc(&self, k: usize) -> f64 {
        let valid = self.valid_queries();
        if valid.is_empty() {
            return 0.0;
        }
        let hits = valid
            .iter()
            .filter(|&&q| self.matches[q].iter().take(k).any(|&m| m))
            .count();
        hits as f64 / valid.len() as f64
    }

    pub fn mean_ap(&self) -> f64 {
        let valid = self.valid_queries();
        if valid.is_empty() {
            return 0.0;
        }
        valid.iter().map(|&q| average_precision(&self.matches[q])).sum::<f64>() / valid.len() as f64
    }
}

/// Mean of precision@rank over the ranks of correct matches.
pub fn average_precision(relevance: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        total / hits as f64
    }
}

pub fn cmc_rank<T: PartialEq>(distances: &[Vec<f64>], query_ids: &[T], gallery_ids: &[T], k: usize) -> f64 {
    RankingResult::new(distances, query_ids, gallery_ids).cmc(k)
}

pub fn mean_ap<T: PartialEq>(distances: &[Vec<f64>], query_ids: &[T], gallery_ids: &[T]) -> f64 {
    RankingResult::new(distances, query_ids, gallery_ids).mean_ap()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio_or_vacuous(num: usize, den: usize) -> f64 {
    if den == 0 {
        if num == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Pair-counting precision/recall/F1 of a clustering against true identities.
pub fn pairwise_f1<T: PartialEq>(labels: &[usize], truth: &[T]) -> PairScores {
    assert_eq!(labels.len(), truth.len(), "labels and identities must align");
    let (mut same_cluster, mut same_id, mut both) = (0usize, 0usize, 0usize);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let c = labels[i] == labels[j];
            let t = truth[i] == truth[j];
            same_cluster += c as usize;
            same_id += t as usize;
            both += (c && t) as usize;
        }
    }
    let precision = ratio_or_vacuous(both, same_cluster);
    let recall = ratio_or_vacuous(both, same_id);
    PairScores {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrimScores {
    pub precision: f64,
    pub recall: f64,
}

/// Scores trimmed nodes as detections of planted noise frames. `None` when
/// any frame lacks a ground-truth kind.
pub fn trim_quality(survivor_masks: &[Vec<bool>], kinds: &[Vec<Option<FrameKind>>]) -> Option<TrimScores> {
    assert_eq!(survivor_masks.len(), kinds.len());
    let (mut trimmed, mut noise, mut hit) = (0usize, 0usize, 0usize);
    for (mask, ks) in survivor_masks.iter().zip(kinds) {
        assert_eq!(mask.len(), ks.len());
        for (&keep, kind) in mask.iter().zip(ks) {
            let is_noise = (*kind)? == FrameKind::Noise;
            trimmed += !keep as usize;
            noise += is_noise as usize;
            hit += (!keep && is_noise) as usize;
        }
    }
    Some(TrimScores {
        precision: ratio_or_vacuous(hit, trimmed),
        recall: ratio_or_vacuous(hit, noise),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodePercentages {
    pub total_nodes: usize,
    pub hard_nodes: usize,
    pub noise_nodes: usize,
    pub hard_pct: f64,
    pub noise_pct: f64,
}

/// Dataset-level share of hard nodes (from the splits) and trimmed noise
/// nodes (from the survivor masks), in percent of all nodes.
pub fn node_percentages(splits: &[NodeSplit], survivor_masks: &[Vec<bool>]) -> NodePercentages {
    let total_nodes: usize = survivor_masks.iter().map(Vec::len).sum();
    let noise_nodes: usize = survivor_masks.iter().flatten().filter(|&&s| !s).count();
    let hard_nodes: usize = splits.iter().map(|s| s.hard.len()).sum();
    let pct = |n: usize| if total_nodes == 0 { 0.0 } else { 100.0 * n as f64 / total_nodes as f64 };
    NodePercentages {
        total_nodes,
        hard_nodes,
        noise_nodes,
        hard_pct: pct(hard_nodes),
        noise_pct: pct(noise_nodes),
    }
}
