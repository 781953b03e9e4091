//! Node re-sampling: easy/hard split by mean similarity, re-sampled training
//! sets, M-frame sampling and K-part tracklet triplets.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NhacError;

/// Easy (`g`) and hard (`b`) node indices of one tracklet.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSplit {
    pub easy: Vec<usize>,
    pub hard: Vec<usize>,
    pub mean_similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Over,
    Under,
    OverUnder,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Over, Criterion::Under, Criterion::OverUnder];

    pub fn label(self) -> &'static str {
        match self {
            Criterion::Over => "Over",
            Criterion::Under => "Under",
            Criterion::OverUnder => "Over+Under",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Over => "over",
            Criterion::Under => "under",
            Criterion::OverUnder => "over_under",
        })
    }
}

impl FromStr for Criterion {
    type Err = NhacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "over" => Ok(Criterion::Over),
            "under" => Ok(Criterion::Under),
            "over_under" => Ok(Criterion::OverUnder),
            other => Err(NhacError::config(format!(
                "unknown resampling criterion {other:?} (expected over, under or over_under)"
            ))),
        }
    }
}

/// Multiset of node indices to draw training frames from.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledSet {
    pub indices: Vec<usize>,
    pub criterion: Criterion,
}

/// Splits nodes around the mean similarity. Ties go to the easy set.
pub fn split_nodes(similarities: &[f64]) -> NodeSplit {
    split_nodes_indexed(similarities, None)
}

/// Like [`split_nodes`], with `labels[j]` reported in place of position `j`.
pub fn split_nodes_indexed(similarities: &[f64], labels: Option<&[usize]>) -> NodeSplit {
    let mean_similarity = if similarities.is_empty() {
        0.0
    } else {
        similarities.iter().sum::<f64>() / similarities.len() as f64
    };
    let name = |j: usize| labels.map_or(j, |l| l[j]);
    let (mut easy, mut hard) = (Vec::new(), Vec::new());
    for (j, &s) in similarities.iter().enumerate() {
        if s >= mean_similarity {
            easy.push(name(j));
        } else {
            hard.push(name(j));
        }
    }
    NodeSplit {
        easy,
        hard,
        mean_similarity,
    }
}

/// `b*`: the hard set followed by uniform with-replacement draws from it
/// until it is as long as the easy set. Returns the hard set unchanged when
/// the oversampling branch does not apply.
fn oversampled_hard<R: Rng + ?Sized>(split: &NodeSplit, rng: &mut R) -> Vec<usize> {
    let mut out = split.hard.clone();
    if !split.hard.is_empty() && split.easy.len() > split.hard.len() {
        while out.len() < split.easy.len() {
            out.push(split.hard[rng.random_range(0..split.hard.len())]);
        }
    }
    out
}

/// `g*`: `len(hard)` distinct uniform draws from the easy set (all of it if
/// the easy set is shorter).
fn undersampled_easy<R: Rng + ?Sized>(split: &NodeSplit, rng: &mut R) -> Vec<usize> {
    let n = split.hard.len().min(split.easy.len());
    index::sample(rng, split.easy.len(), n)
        .into_iter()
        .map(|i| split.easy[i])
        .collect()
}

pub fn oversample<R: Rng + ?Sized>(split: &NodeSplit, rng: &mut R) -> ResampledSet {
    let mut indices = split.easy.clone();
    indices.extend(oversampled_hard(split, rng));
    ResampledSet {
        indices,
        criterion: Criterion::Over,
    }
}

pub fn undersample<R: Rng + ?Sized>(split: &NodeSplit, rng: &mut R) -> ResampledSet {
    let indices = if split.hard.is_empty() {
        split.easy.clone()
    } else {
        let mut v = undersampled_easy(split, rng);
        v.extend_from_slice(&split.hard);
        v
    };
    ResampledSet {
        indices,
        criterion: Criterion::Under,
    }
}

pub fn over_under_union<R: Rng + ?Sized>(split: &NodeSplit, rng: &mut R) -> ResampledSet {
    let indices = if split.hard.is_empty() {
        split.easy.clone()
    } else {
        let mut v = oversampled_hard(split, rng);
        v.extend(undersampled_easy(split, rng));
        v
    };
    ResampledSet {
        indices,
        criterion: Criterion::OverUnder,
    }
}

pub fn resample<R: Rng + ?Sized>(split: &NodeSplit, criterion: Criterion, rng: &mut R) -> ResampledSet {
    match criterion {
        Criterion::Over => oversample(split, rng),
        Criterion::Under => undersample(split, rng),
        Criterion::OverUnder => over_under_union(split, rng),
    }
}

/// Draws `m` entries of `set`: without replacement when the set is large
/// enough, with replacement otherwise.
pub fn sample_training_frames<R: Rng + ?Sized>(set: &[usize], m: usize, rng: &mut R) -> Vec<usize> {
    assert!(!set.is_empty(), "cannot sample frames from an empty set");
    if set.len() >= m {
        index::sample(rng, set.len(), m)
            .into_iter()
            .map(|i| set[i])
            .collect()
    } else {
        (0..m).map(|_| set[rng.random_range(0..set.len())]).collect()
    }
}

/// One contiguous part of a batch member's sampled frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartRef {
    pub member: usize,
    pub part: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: PartRef,
    pub positive: PartRef,
    pub negative: PartRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    pub part_len: usize,
    pub triplets: Vec<Triplet>,
}

/// Builds one (anchor, positive, negative) triple per batch member from the
/// `k` parts of its `m` sampled frames. Returns `None` (and logs) when no
/// triple can be formed: `k < 2`, `m` not divisible by `k`, or a batch with
/// a single pseudo label.
pub fn build_triplets<R: Rng + ?Sized>(
    m: usize,
    k: usize,
    labels: &[usize],
    rng: &mut R,
) -> Option<TripletBatch> {
    if k < 2 {
        warn!("K = {k} leaves no positive part; triplet loss skipped");
        return None;
    }
    if !m.is_multiple_of(k) || m < k {
        warn!("M = {m} is not divisible into {k} parts; triplet loss skipped");
        return None;
    }
    let first = *labels.first()?;
    if labels.iter().all(|&l| l == first) {
        warn!("batch holds a single pseudo label; triplet loss skipped");
        return None;
    }
    let part_len = m / k;
    let triplets = labels
        .iter()
        .enumerate()
        .map(|(member, &label)| {
            let anchor = rng.random_range(0..k);
            let mut positive = rng.random_range(0..k - 1);
            if positive >= anchor {
                positive += 1;
            }
            let others: Vec<usize> = (0..labels.len()).filter(|&o| labels[o] != label).collect();
            let negative_member = others[rng.random_range(0..others.len())];
            Triplet {
                anchor: PartRef { member, part: anchor },
                positive: PartRef { member, part: positive },
                negative: PartRef {
                    member: negative_member,
                    part: rng.random_range(0..k),
                },
            }
        })
        .collect();
    Some(TripletBatch { part_len, triplets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_example() {
        let s = split_nodes(&[0.9, 0.9, 0.5, 0.3]);
        assert!((s.mean_similarity - 0.65).abs() < 1e-15);
        assert_eq!(s.easy, vec![0, 1]);
        assert_eq!(s.hard, vec![2, 3]);
    }

    #[test]
    fn split_ties_go_easy() {
        let s = split_nodes(&[0.4; 5]);
        assert_eq!(s.easy.len(), 5);
        assert!(s.hard.is_empty());
        let s = split_nodes(&[0.1]);
        assert_eq!(s.easy, vec![0]);
    }

    #[test]
    fn balanced_oversample_is_concatenation() {
        let split = NodeSplit {
            easy: vec![0, 1],
            hard: vec![2, 3],
            mean_similarity: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(oversample(&split, &mut rng).indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn empty_hard_set_returns_easy() {
        let split = NodeSplit {
            easy: vec![0, 1, 2],
            hard: vec![],
            mean_similarity: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for c in Criterion::ALL {
            assert_eq!(resample(&split, c, &mut rng).indices, vec![0, 1, 2]);
        }
    }

    #[test]
    fn criterion_parses() {
        assert_eq!("over_under".parse::<Criterion>().unwrap(), Criterion::OverUnder);
        assert!("both".parse::<Criterion>().is_err());
        assert_eq!(Criterion::Under.to_string(), "under");
    }

    #[test]
    fn degenerate_triplet_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_triplets(16, 1, &[0, 1], &mut rng).is_none());
        assert!(build_triplets(16, 2, &[3, 3, 3], &mut rng).is_none());
        assert!(build_triplets(15, 2, &[0, 1], &mut rng).is_none());
    }

    #[test]
    fn default_parts_have_length_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tb = build_triplets(16, 2, &[0, 1], &mut rng).unwrap();
        assert_eq!(tb.part_len, 8);
        assert_eq!(tb.triplets.len(), 2);
    }
}
