//! The clustering/re-training loop and the experiment harnesses built on it.
//!
//! One run: singleton pseudo labels and a first training stage, then for each
//! iteration extract frame embeddings, trim noise nodes, merge the nearest
//! clusters, re-sample hard nodes and re-train on the new pseudo labels.

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{merge_budget, ClusterState, MergeRecord};
use crate::error::{NhacError, Result};
use crate::gtm::{build_graph, Trimmed};
use crate::metrics::{node_percentages, pairwise_f1, trim_quality, RankingResult};
use crate::model::{train_step, EmbeddingModel, LookupTable, LossWeights, SgdOptimizer, TrainingSample};
use crate::nrm::{build_triplets, resample, sample_training_frames, split_nodes_indexed, Criterion, NodeSplit};
use crate::synth::{split_query_gallery, Dataset, QueryGallery};
use crate::vector::{euclidean, mean};

/// Every knob of a run. Serialized as a flat JSON object; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Merging percentage; each iteration merges `max(1, floor(N * mp))` pairs.
    pub merge_percentage: f64,
    /// Parts per sampled frame set for the triplet loss.
    pub triplet_parts: usize,
    /// Noise relaxation of the trimming threshold.
    pub delta: f64,
    /// Triplet margin.
    pub margin: f64,
    /// Softmax temperature of the lookup classifier.
    pub temperature: f64,
    /// Frames sampled per tracklet per training step.
    pub frames_per_sample: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub first_stage_epochs: usize,
    pub later_stage_epochs: usize,
    pub learning_rate: f64,
    /// Zero-based epoch (within a stage) from which `reduced_learning_rate` applies.
    pub lr_drop_epoch: usize,
    pub reduced_learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub resampling: Criterion,
    pub gtm_enabled: bool,
    pub nrm_enabled: bool,
    /// Re-sample over all frames instead of trimming survivors.
    pub nrm_on_full_tracklet: bool,
    /// Compute the merge budget from the current cluster count instead of
    /// the original tracklet count.
    pub budget_from_current: bool,
    pub id_weight: f64,
    pub triplet_weight: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            merge_percentage: 0.05,
            triplet_parts: 2,
            delta: 0.5,
            margin: 0.3,
            temperature: 0.1,
            frames_per_sample: 16,
            batch_size: 16,
            dropout: 0.5,
            first_stage_epochs: 20,
            later_stage_epochs: 2,
            learning_rate: 0.1,
            lr_drop_epoch: 15,
            reduced_learning_rate: 0.01,
            momentum: 0.9,
            iterations: 18,
            resampling: Criterion::Over,
            gtm_enabled: true,
            nrm_enabled: true,
            nrm_on_full_tracklet: false,
            budget_from_current: false,
            id_weight: 1.0,
            triplet_weight: 1.0,
            hidden_dim: 64,
            embed_dim: 32,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NhacError::config(m));
        if !(self.merge_percentage > 0.0 && self.merge_percentage < 1.0) {
            return bad(format!("merge_percentage {} outside (0, 1)", self.merge_percentage));
        }
        if self.triplet_parts == 0 || self.frames_per_sample == 0 {
            return bad("triplet_parts and frames_per_sample must be positive".into());
        }
        if !self.frames_per_sample.is_multiple_of(self.triplet_parts) {
            return bad(format!(
                "frames_per_sample {} is not divisible by triplet_parts {}",
                self.frames_per_sample, self.triplet_parts
            ));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta {} outside (0, 1]", self.delta));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be non-negative".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("reduced_learning_rate", self.reduced_learning_rate),
            ("id_weight", self.id_weight),
            ("triplet_weight", self.triplet_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return bad("hidden_dim and embed_dim must be positive".into());
        }
        Ok(())
    }

    fn loss_weights(&self) -> LossWeights {
        LossWeights {
            id: self.id_weight,
            triplet: if self.nrm_enabled { self.triplet_weight } else { 0.0 },
            margin: self.margin,
        }
    }
}

/// Metrics recorded after iteration `iteration` (0 = first stage).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub clusters: usize,
    pub rank1: Option<f64>,
    pub rank5: Option<f64>,
    pub rank10: Option<f64>,
    pub map: Option<f64>,
    pub pair_precision: Option<f64>,
    pub pair_recall: Option<f64>,
    pub pair_f1: Option<f64>,
    pub trim_precision: Option<f64>,
    pub trim_recall: Option<f64>,
    pub hard_pct: Option<f64>,
    pub noise_pct: Option<f64>,
    pub id_loss: f64,
    pub triplet_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub label: String,
    pub config: PipelineConfig,
    pub rows: Vec<IterationRow>,
    pub merge_log: Vec<MergeRecord>,
    pub final_labels: Vec<usize>,
    pub model: EmbeddingModel,
    pub wall_clock_secs: f64,
    /// Set when a run stopped early on a runtime error; rows up to that point are kept.
    pub aborted: Option<String>,
}

impl RunReport {
    pub fn final_row(&self) -> &IterationRow {
        self.rows.last().expect("a report always has the first-stage row")
    }

    fn best_by(&self, key: impl Fn(&IterationRow) -> Option<f64>) -> Option<f64> {
        self.rows.iter().filter_map(key).reduce(f64::max)
    }

    pub fn best_map(&self) -> Option<f64> {
        self.best_by(|r| r.map)
    }

    pub fn best_rank1(&self) -> Option<f64> {
        self.best_by(|r| r.rank1)
    }
}

/// Embeddings of every frame of every tracklet, in inference mode.
pub fn extract_embeddings(model: &EmbeddingModel, dataset: &Dataset) -> Result<Vec<Vec<Vec<f64>>>> {
    dataset
        .tracklets
        .par_iter()
        .map(|t| t.frames.iter().map(|f| model.embed_eval(&f.feature)).collect())
        .collect()
}

/// Average-pooled feature of every tracklet over all of its frames.
pub fn pooled_features(embeddings: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    embeddings
        .iter()
        .map(|e| mean(e.iter().map(Vec::as_slice)))
        .collect()
}

/// Rank-1/5/10 and mAP of the cross-camera protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetrievalScores {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
}

pub fn evaluate_retrieval(dataset: &Dataset, features: &[Vec<f64>], qg: &QueryGallery) -> RetrievalScores {
    let ids = |idx: &[usize]| -> Vec<u32> {
        idx.iter()
            .map(|&i| dataset.tracklets[i].identity.expect("split checked identities"))
            .collect()
    };
    let distances: Vec<Vec<f64>> = qg
        .query
        .par_iter()
        .map(|&q| qg.gallery.iter().map(|&g| euclidean(&features[q], &features[g])).collect())
        .collect();
    let ranking = RankingResult::new(&distances, &ids(&qg.query), &ids(&qg.gallery));
    RetrievalScores {
        rank1: ranking.cmc(1),
        rank5: ranking.cmc(5),
        rank10: ranking.cmc(10),
        map: ranking.mean_ap(),
    }
}

/// Loads a model's view of a dataset and scores it.
pub fn evaluate_model(model: &EmbeddingModel, dataset: &Dataset) -> Result<RetrievalScores> {
    let qg = split_query_gallery(dataset)?;
    let embeddings = extract_embeddings(model, dataset)?;
    Ok(evaluate_retrieval(dataset, &pooled_features(&embeddings), &qg))
}

struct Trainer<'a> {
    config: &'a PipelineConfig,
    dataset: &'a Dataset,
    rng: ChaCha8Rng,
}

impl Trainer<'_> {
    /// Trains one stage and returns the mean losses of its last epoch.
    fn train_stage(
        &mut self,
        model: &mut EmbeddingModel,
        table: &mut LookupTable,
        labels: &[usize],
        pools: &[Vec<usize>],
        epochs: usize,
    ) -> Result<(f64, f64)> {
        let cfg = self.config;
        let weights = cfg.loss_weights();
        let mut optimizer = SgdOptimizer::new(
            model.params().len(),
            cfg.learning_rate,
            cfg.momentum,
            cfg.lr_drop_epoch,
            cfg.reduced_learning_rate,
        )?;
        let mut last = (0.0, 0.0);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for epoch in 0..epochs {
            order.shuffle(&mut self.rng);
            let (mut id_sum, mut trip_sum, mut batches) = (0.0, 0.0, 0usize);
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<TrainingSample<'_>> = chunk
                    .iter()
                    .map(|&i| {
                        let frames = &self.dataset.tracklets[i].frames;
                        TrainingSample {
                            frames: sample_training_frames(&pools[i], cfg.frames_per_sample, &mut self.rng)
                                .into_iter()
                                .map(|j| frames[j].feature.as_slice())
                                .collect(),
                            label: labels[i],
                        }
                    })
                    .collect();
                let triplets = if cfg.nrm_enabled {
                    let batch_labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
                    build_triplets(cfg.frames_per_sample, cfg.triplet_parts, &batch_labels, &mut self.rng)
                } else {
                    None
                };
                let losses = train_step(
                    model,
                    table,
                    &mut optimizer,
                    &batch,
                    triplets.as_ref(),
                    &weights,
                    epoch,
                    b,
                    &mut self.rng,
                )?;
                id_sum += losses.id_loss;
                trip_sum += losses.triplet_loss;
                batches += 1;
            }
            last = (id_sum / batches as f64, trip_sum / batches as f64);
            debug!("epoch {epoch}: id {:.4} triplet {:.4}", last.0, last.1);
        }
        Ok(last)
    }
}

/// Per-tracklet graph analysis of one extraction pass.
struct GraphPass {
    trimmed: Vec<Trimmed>,
    splits: Vec<NodeSplit>,
}

fn analyse_graphs(config: &PipelineConfig, embeddings: &[Vec<Vec<f64>>]) -> Result<GraphPass> {
    let results: Vec<(Trimmed, NodeSplit)> = embeddings
        .par_iter()
        .map(|nodes| {
            let graph = build_graph(nodes.clone())?;
            let trimmed = if config.gtm_enabled {
                graph.trim(config.delta)?
            } else {
                graph.untrimmed()
            };
            let split = if config.gtm_enabled && !config.nrm_on_full_tracklet && trimmed.trimmed_count() > 0 {
                let survivors: Vec<usize> = trimmed.survivors().collect();
                let sub = build_graph(survivors.iter().map(|&j| nodes[j].clone()).collect())?;
                split_nodes_indexed(&sub.similarities, Some(&survivors))
            } else {
                split_nodes_indexed(&graph.similarities, None)
            };
            Ok((trimmed, split))
        })
        .collect::<Result<_>>()?;
    let (trimmed, splits) = results.into_iter().unzip();
    Ok(GraphPass { trimmed, splits })
}

fn validate_dataset(dataset: &Dataset) -> Result<()> {
    dataset.validate()
}

/// Runs the full loop. Runtime failures after the first row stop the run and
/// are recorded in `aborted`; rows collected so far are kept.
pub fn run(config: &PipelineConfig, dataset: &Dataset) -> Result<RunReport> {
    run_labeled(config, dataset, "NHAC")
}

pub fn run_labeled(config: &PipelineConfig, dataset: &Dataset, label: &str) -> Result<RunReport> {
    config.validate()?;
    validate_dataset(dataset)?;
    let started = Instant::now();
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = EmbeddingModel::new(dataset.dim, config.hidden_dim, config.embed_dim, config.dropout, &mut rng)?;
    let mut trainer = Trainer {
        config,
        dataset,
        rng,
    };
    let mut state = ClusterState::new(n)?;
    let qg = if dataset.has_identities() {
        split_query_gallery(dataset).ok()
    } else {
        None
    };
    let truth = dataset.identities();
    let kinds: Option<Vec<Vec<_>>> = dataset
        .has_kinds()
        .then(|| dataset.tracklets.iter().map(|t| t.frames.iter().map(|f| f.kind).collect()).collect());
    let all_frames: Vec<Vec<usize>> = dataset.tracklets.iter().map(|t| (0..t.len()).collect()).collect();

    let score_row = |iteration: usize,
                     state: &ClusterState,
                     features: &[Vec<f64>],
                     pass: Option<&GraphPass>,
                     losses: (f64, f64)| {
        let retrieval = qg.as_ref().map(|qg| evaluate_retrieval(dataset, features, qg));
        let labels = state.pseudo_labels();
        let pairs = truth.as_ref().map(|t| pairwise_f1(&labels, t));
        let masks: Option<Vec<Vec<bool>>> = pass.map(|p| p.trimmed.iter().map(|t| t.survivor_mask.clone()).collect());
        let trim = match (&masks, &kinds) {
            (Some(m), Some(k)) if config.gtm_enabled => trim_quality(m, k),
            _ => None,
        };
        let nodes = pass.zip(masks.as_ref()).map(|(p, m)| node_percentages(&p.splits, m));
        IterationRow {
            iteration,
            clusters: state.cluster_count(),
            rank1: retrieval.map(|r| r.rank1),
            rank5: retrieval.map(|r| r.rank5),
            rank10: retrieval.map(|r| r.rank10),
            map: retrieval.map(|r| r.map),
            pair_precision: pairs.map(|p| p.precision),
            pair_recall: pairs.map(|p| p.recall),
            pair_f1: pairs.map(|p| p.f1),
            trim_precision: trim.map(|t| t.precision),
            trim_recall: trim.map(|t| t.recall),
            hard_pct: nodes.map(|p| p.hard_pct),
            noise_pct: nodes.map(|p| p.noise_pct),
            id_loss: losses.0,
            triplet_loss: losses.1,
        }
    };

    // first stage: every tracklet is its own cluster
    let mut embeddings = extract_embeddings(&model, dataset)?;
    let initial = pooled_features(&embeddings);
    let mut table = state.rebuild_lookup(&initial, config.temperature)?;
    let labels = state.pseudo_labels();
    let losses = trainer.train_stage(&mut model, &mut table, &labels, &all_frames, config.first_stage_epochs)?;
    embeddings = extract_embeddings(&model, dataset)?;
    let mut rows = vec![score_row(0, &state, &pooled_features(&embeddings), None, losses)];
    info!("{label}: first stage done, C = {n}");

    let mut aborted = None;
    let base = n;
    for iteration in 1..=config.iterations {
        if state.cluster_count() <= 1 {
            break;
        }
        let step = (|| -> Result<IterationRow> {
            let pass = analyse_graphs(config, &embeddings)?;
            let features: Vec<Vec<f64>> = pass.trimmed.iter().map(|t| t.feature.clone()).collect();
            let budget_base = if config.budget_from_current { state.cluster_count() } else { base };
            state.merge_step(&features, merge_budget(budget_base, config.merge_percentage)?)?;
            let labels = state.pseudo_labels();
            let pools: Vec<Vec<usize>> = if config.nrm_enabled {
                pass.splits
                    .iter()
                    .map(|s| resample(s, config.resampling, &mut trainer.rng).indices)
                    .collect()
            } else {
                all_frames.clone()
            };
            let mut losses = (0.0, 0.0);
            if state.cluster_count() > 1 {
                let mut table = state.rebuild_lookup(&features, config.temperature)?;
                losses = trainer.train_stage(&mut model, &mut table, &labels, &pools, config.later_stage_epochs)?;
            }
            embeddings = extract_embeddings(&model, dataset)?;
            Ok(score_row(iteration, &state, &pooled_features(&embeddings), Some(&pass), losses))
        })();
        match step {
            Ok(row) => {
                info!(
                    "{label}: iteration {iteration}, C = {}, mAP = {:?}, F1 = {:?}",
                    row.clusters, row.map, row.pair_f1
                );
                rows.push(row);
            }
            Err(e @ NhacError::NonFiniteLoss { .. }) => {
                log::error!("{label}: iteration {iteration} aborted: {e}");
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(RunReport {
        label: label.to_string(),
        config: config.clone(),
        rows,
        merge_log: state.merge_log().to_vec(),
        final_labels: state.pseudo_labels(),
        model,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        aborted,
    })
}

/// Component variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    WithoutNrm,
    WithoutGtm,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::WithoutNrm, Variant::WithoutGtm, Variant::Full];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::WithoutNrm => "NHAC w/o NRM",
            Variant::WithoutGtm => "NHAC w/o GTM",
            Variant::Full => "NHAC",
        }
    }

    pub fn apply(self, config: &PipelineConfig) -> PipelineConfig {
        let (gtm, nrm) = match self {
            Variant::Baseline => (false, false),
            Variant::WithoutNrm => (true, false),
            Variant::WithoutGtm => (false, true),
            Variant::Full => (true, true),
        };
        PipelineConfig {
            gtm_enabled: gtm,
            nrm_enabled: nrm,
            ..config.clone()
        }
    }
}

/// Runs the four component variants with a shared seed and dataset.
pub fn ablation(config: &PipelineConfig, dataset: &Dataset) -> Result<Vec<RunReport>> {
    Variant::ALL
        .iter()
        .map(|v| run_labeled(&v.apply(config), dataset, v.label()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub best_rank1: Option<f64>,
    pub best_map: Option<f64>,
    pub report: RunReport,
}

/// One run per `delta`, everything else shared.
pub fn delta_sweep(config: &PipelineConfig, dataset: &Dataset, deltas: &[f64]) -> Result<Vec<SweepRow>> {
    for &d in deltas {
        if !(d > 0.0 && d <= 1.0) {
            return Err(NhacError::config(format!("sweep delta {d} outside (0, 1]")));
        }
    }
    deltas
        .iter()
        .map(|&delta| {
            let cfg = PipelineConfig {
                delta,
                ..config.clone()
            };
            let report = run_labeled(&cfg, dataset, &format!("delta={delta}"))?;
            Ok(SweepRow {
                delta,
                best_rank1: report.best_rank1(),
                best_map: report.best_map(),
                report,
            })
        })
        .collect()
}

/// The three re-sampling criteria with everything else shared.
pub fn compare_resampling(config: &PipelineConfig, dataset: &Dataset) -> Result<Vec<RunReport>> {
    Criterion::ALL
        .iter()
        .map(|&c| {
            let cfg = PipelineConfig {
                resampling: c,
                ..config.clone()
            };
            run_labeled(&cfg, dataset, c.label())
        })
        .collect()
}

/// `0.1, 0.2, ..., 0.9`.
pub fn default_deltas() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}
