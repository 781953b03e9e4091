//! Bottom-up cluster state with single-linkage merging.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NhacError, Result};
use crate::model::LookupTable;
use crate::vector::{euclidean, mean};

/// One recorded merge. Cluster ids are the smallest tracklet index of each
/// cluster at merge time; the merged cluster keeps `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergeRecord {
    pub iteration: usize,
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    assignment: Vec<usize>,
    merge_log: Vec<MergeRecord>,
    iteration: usize,
}

/// Merges per iteration: `max(1, floor(n * mp))`.
pub fn merge_budget(n: usize, mp: f64) -> Result<usize> {
    if !(mp > 0.0 && mp < 1.0) {
        return Err(NhacError::config(format!("merge percentage {mp} outside (0, 1)")));
    }
    Ok(((n as f64 * mp).floor() as usize).max(1))
}

/// Cluster-level single-linkage distances over the live clusters, indexed by
/// position in ascending cluster-id order.
#[derive(Debug, Clone)]
pub struct LinkageMatrix {
    ids: Vec<usize>,
    alive: Vec<bool>,
    dist: Vec<f64>,
}

impl LinkageMatrix {
    /// Builds the matrix from tracklet features and a tracklet -> cluster map.
    pub fn new(features: &[Vec<f64>], assignment: &[usize]) -> Result<Self> {
        if features.len() != assignment.len() {
            return Err(NhacError::input(format!(
                "{} features for {} tracklets",
                features.len(),
                assignment.len()
            )));
        }
        if features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(NhacError::input("non-finite tracklet feature"));
        }
        let mut ids: Vec<usize> = assignment.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let c = ids.len();
        let position = |id: usize| ids.binary_search(&id).expect("live id");

        let n = features.len();
        let pair: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| euclidean(&features[i], &features[j])).collect())
            .collect();

        let mut dist = vec![f64::INFINITY; c * c];
        for i in 0..n {
            let pi = position(assignment[i]);
            for j in 0..n {
                let pj = position(assignment[j]);
                if pi != pj {
                    let cell = &mut dist[pi * c + pj];
                    *cell = cell.min(pair[i][j]);
                }
            }
        }
        for p in 0..c {
            dist[p * c + p] = 0.0;
        }
        Ok(Self {
            ids,
            alive: vec![true; c],
            dist,
        })
    }

    fn width(&self) -> usize {
        self.ids.len()
    }

    pub fn live_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn distance(&self, p: usize, q: usize) -> f64 {
        self.dist[p * self.width() + q]
    }

    /// Nearest live pair `(p, q)` with `p < q`; among equal distances the
    /// lexicographically smallest pair wins.
    pub fn nearest_pair(&self) -> Option<(usize, usize, f64)> {
        let c = self.width();
        let mut best: Option<(usize, usize, f64)> = None;
        for p in (0..c).filter(|&p| self.alive[p]) {
            for q in (p + 1..c).filter(|&q| self.alive[q]) {
                let d = self.dist[p * c + q];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((p, q, d));
                }
            }
        }
        best
    }

    /// Folds cluster `q` into `p` with the single-linkage rule
    /// `d(x, p u q) = min(d(x, p), d(x, q))`.
    pub fn merge(&mut self, p: usize, q: usize) {
        let c = self.width();
        for x in 0..c {
            if x == p || x == q || !self.alive[x] {
                continue;
            }
            let d = self.dist[p * c + x].min(self.dist[q * c + x]);
            self.dist[p * c + x] = d;
            self.dist[x * c + p] = d;
        }
        self.alive[q] = false;
    }

    pub fn id(&self, p: usize) -> usize {
        self.ids[p]
    }

    /// Symmetric with a zero diagonal over the live clusters.
    pub fn is_consistent(&self) -> bool {
        let c = self.width();
        (0..c).filter(|&p| self.alive[p]).all(|p| {
            self.dist[p * c + p] == 0.0
                && (0..c)
                    .filter(|&q| self.alive[q])
                    .all(|q| self.dist[p * c + q] == self.dist[q * c + p])
        })
    }
}

impl ClusterState {
    /// Every tracklet in its own cluster.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(NhacError::input("cannot cluster an empty dataset"));
        }
        Ok(Self {
            assignment: (0..n).collect(),
            merge_log: Vec::new(),
            iteration: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn merge_log(&self) -> &[MergeRecord] {
        &self.merge_log
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn cluster_count(&self) -> usize {
        let mut ids = self.assignment.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Performs up to `merges` successive nearest-pair merges and returns the
    /// records of this step. A single remaining cluster makes this a no-op.
    pub fn merge_step(&mut self, features: &[Vec<f64>], merges: usize) -> Result<Vec<MergeRecord>> {
        self.iteration += 1;
        let mut matrix = LinkageMatrix::new(features, &self.assignment)?;
        if matrix.live_count() < 2 {
            warn!("merge requested with a single cluster left");
            return Ok(Vec::new());
        }
        let mut records = Vec::with_capacity(merges);
        for _ in 0..merges {
            let Some((p, q, distance)) = matrix.nearest_pair() else {
                break;
            };
            matrix.merge(p, q);
            let (a, b) = (matrix.id(p), matrix.id(q));
            for c in self.assignment.iter_mut().filter(|c| **c == b) {
                *c = a;
            }
            records.push(MergeRecord {
                iteration: self.iteration,
                a,
                b,
                distance,
            });
        }
        debug_assert!(matrix.is_consistent());
        self.merge_log.extend_from_slice(&records);
        Ok(records)
    }

    /// Dense pseudo labels `0..C`, ordered by cluster id.
    pub fn pseudo_labels(&self) -> Vec<usize> {
        let mut ids = self.assignment.clone();
        ids.sort_unstable();
        ids.dedup();
        self.assignment
            .iter()
            .map(|c| ids.binary_search(c).expect("live id"))
            .collect()
    }

    /// Lookup table whose column `c` is the normalized mean feature of the
    /// tracklets carrying pseudo label `c`.
    pub fn rebuild_lookup(&self, features: &[Vec<f64>], tau: f64) -> Result<LookupTable> {
        if features.len() != self.assignment.len() {
            return Err(NhacError::input("feature count does not match tracklet count"));
        }
        let labels = self.pseudo_labels();
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let columns = (0..count)
            .map(|c| {
                mean(
                    features
                        .iter()
                        .zip(&labels)
                        .filter_map(|(f, &l)| (l == c).then_some(f.as_slice())),
                )
            })
            .collect();
        LookupTable::new(columns, tau)
    }
}

/// Writes merge records as CSV with a header row.
pub fn write_merge_log<W: Write>(records: &[MergeRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| NhacError::io("merge log", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_cases() {
        assert_eq!(ClusterState::new(1).unwrap().cluster_count(), 1);
        let s = ClusterState::new(100).unwrap();
        assert_eq!(s.cluster_count(), 100);
        assert_eq!(s.pseudo_labels(), (0..100).collect::<Vec<_>>());
        assert!(ClusterState::new(0).is_err());
    }

    #[test]
    fn budget() {
        assert_eq!(merge_budget(100, 0.05).unwrap(), 5);
        assert_eq!(merge_budget(10, 0.05).unwrap(), 1);
        assert!(merge_budget(10, 1.0).is_err());
        assert!(merge_budget(10, 0.0).is_err());
    }

    #[test]
    fn nearest_pair_in_one_dimension() {
        let features: Vec<Vec<f64>> = [0.0, 1.0, 3.0, 7.0].iter().map(|&x| vec![x]).collect();
        let mut s = ClusterState::new(4).unwrap();
        let rec = s.merge_step(&features, 1).unwrap();
        assert_eq!(rec.len(), 1);
        assert_eq!((rec[0].a, rec[0].b, rec[0].distance), (0, 1, 1.0));
        assert_eq!(s.pseudo_labels(), vec![0, 0, 1, 2]);
    }

    #[test]
    fn merging_stops_at_one_cluster() {
        let features: Vec<Vec<f64>> = (0..5).map(|x| vec![x as f64]).collect();
        let mut s = ClusterState::new(5).unwrap();
        let rec = s.merge_step(&features, 10).unwrap();
        assert_eq!(rec.len(), 4);
        assert_eq!(s.cluster_count(), 1);
        assert_eq!(s.pseudo_labels(), vec![0; 5]);
        assert!(s.merge_step(&features, 1).unwrap().is_empty());
    }

    #[test]
    fn hundred_tracklets_default_budget() {
        let features: Vec<Vec<f64>> = (0..100).map(|x| vec![(x * x) as f64]).collect();
        let mut s = ClusterState::new(100).unwrap();
        let m = merge_budget(100, 0.05).unwrap();
        s.merge_step(&features, m).unwrap();
        assert_eq!(s.cluster_count(), 95);
    }

    #[test]
    fn antipodal_cluster_column_falls_back_to_basis() {
        let mut s = ClusterState::new(2).unwrap();
        let features = vec![vec![0.0, 1.0], vec![0.0, -1.0]];
        s.merge_step(&features, 1).unwrap();
        let table = s.rebuild_lookup(&features, 0.1).unwrap();
        assert_eq!(table.column(0), &[1.0, 0.0]);
    }

    #[test]
    fn merge_log_csv_has_header() {
        let mut buf = Vec::new();
        let rec = [MergeRecord {
            iteration: 1,
            a: 0,
            b: 3,
            distance: 0.25,
        }];
        write_merge_log(&rec, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,a,b,distance\n1,0,3,0.25\n");
    }
}
