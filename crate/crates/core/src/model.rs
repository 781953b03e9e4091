//! Frame embedding network, the non-parametric lookup-table classifier and
//! the two training objectives (cluster cross-entropy and tracklet triplet
//! loss), all with hand-written gradients.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NhacError, Result};
use crate::nrm::{PartRef, TripletBatch};
use crate::vector::{dot, euclidean, mean, normalize_in_place, normalized};

/// Two affine layers with a rectifier and dropout in between, followed by
/// L2 normalization. All parameters live in one flat buffer laid out as
/// `w1 (hidden x input, row major) | b1 | w2 (embed x hidden) | b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    input_dim: usize,
    hidden_dim: usize,
    embed_dim: usize,
    dropout: f64,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FrameTrace {
    pre_activation: Vec<f64>,
    hidden: Vec<f64>,
    mask: Option<Vec<f64>>,
    raw_norm: f64,
    embedding: Vec<f64>,
}

impl FrameTrace {
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }
}

impl EmbeddingModel {
    /// He-initialized weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        embed_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(input_dim, hidden_dim, embed_dim, dropout)?;
        let w1_std = (2.0 / input_dim as f64).sqrt();
        let w2_std = (2.0 / hidden_dim as f64).sqrt();
        let n1 = Normal::new(0.0, w1_std).expect("finite std");
        let n2 = Normal::new(0.0, w2_std).expect("finite std");
        let (w1, w2) = (model.w1_range(), model.w2_range());
        for p in &mut model.params[w1] {
            *p = n1.sample(rng);
        }
        for p in &mut model.params[w2] {
            *p = n2.sample(rng);
        }
        Ok(model)
    }

    pub fn zeros(
        input_dim: usize,
        hidden_dim: usize,
        embed_dim: usize,
        dropout: f64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || embed_dim == 0 {
            return Err(NhacError::config("model dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(NhacError::config(format!(
                "dropout rate {dropout} outside [0, 1)"
            )));
        }
        let len = Self::param_count(input_dim, hidden_dim, embed_dim);
        Ok(Self {
            input_dim,
            hidden_dim,
            embed_dim,
            dropout,
            params: vec![0.0; len],
        })
    }

    pub fn from_params(
        input_dim: usize,
        hidden_dim: usize,
        embed_dim: usize,
        dropout: f64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::zeros(input_dim, hidden_dim, embed_dim, dropout)?;
        if params.len() != model.params.len() {
            return Err(NhacError::input(format!(
                "expected {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    fn param_count(input_dim: usize, hidden_dim: usize, embed_dim: usize) -> usize {
        hidden_dim * input_dim + hidden_dim + embed_dim * hidden_dim + embed_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn w1_range(&self) -> std::ops::Range<usize> {
        0..self.hidden_dim * self.input_dim
    }

    pub fn b1_range(&self) -> std::ops::Range<usize> {
        let start = self.hidden_dim * self.input_dim;
        start..start + self.hidden_dim
    }

    pub fn w2_range(&self) -> std::ops::Range<usize> {
        let start = self.b1_range().end;
        start..start + self.embed_dim * self.hidden_dim
    }

    pub fn b2_range(&self) -> std::ops::Range<usize> {
        let start = self.w2_range().end;
        start..start + self.embed_dim
    }

    fn check_input(&self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.input_dim {
            return Err(NhacError::input(format!(
                "frame has dimension {}, model expects {}",
                frame.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Draws an inverted-dropout mask (0 or 1/(1-p) per hidden unit).
    pub fn draw_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        if self.dropout == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.dropout);
        Some(
            (0..self.hidden_dim)
                .map(|_| {
                    if rng.random::<f64>() < self.dropout {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect(),
        )
    }

    /// Forward pass with an explicit dropout mask (`None` means no dropout).
    pub fn forward(&self, frame: &[f64], mask: Option<Vec<f64>>) -> Result<FrameTrace> {
        self.check_input(frame)?;
        let w1 = &self.params[self.w1_range()];
        let b1 = &self.params[self.b1_range()];
        let w2 = &self.params[self.w2_range()];
        let b2 = &self.params[self.b2_range()];

        let pre_activation: Vec<f64> = (0..self.hidden_dim)
            .map(|h| dot(&w1[h * self.input_dim..(h + 1) * self.input_dim], frame) + b1[h])
            .collect();
        let mut hidden: Vec<f64> = pre_activation.iter().map(|&a| a.max(0.0)).collect();
        if let Some(m) = &mask {
            for (h, k) in hidden.iter_mut().zip(m) {
                *h *= k;
            }
        }
        let mut embedding: Vec<f64> = (0..self.embed_dim)
            .map(|e| dot(&w2[e * self.hidden_dim..(e + 1) * self.hidden_dim], &hidden) + b2[e])
            .collect();
        let raw_norm = normalize_in_place(&mut embedding);
        Ok(FrameTrace {
            pre_activation,
            hidden,
            mask,
            raw_norm,
            embedding,
        })
    }

    /// Unit-norm embedding of one frame. Dropout is sampled from `rng` only
    /// in training mode.
    pub fn embed<R: Rng + ?Sized>(
        &self,
        frame: &[f64],
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mask = if train_mode { self.draw_mask(rng) } else { None };
        Ok(self.forward(frame, mask)?.embedding)
    }

    /// Deterministic inference-mode embedding.
    pub fn embed_eval(&self, frame: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(frame, None)?.embedding)
    }

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(embedding).
    pub fn backward(&self, frame: &[f64], trace: &FrameTrace, grad_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        if trace.raw_norm == 0.0 {
            // degenerate normalization has no gradient
            return;
        }
        let e = &trace.embedding;
        let radial = dot(e, grad_out);
        let grad_raw: Vec<f64> = grad_out
            .iter()
            .zip(e)
            .map(|(g, ei)| (g - ei * radial) / trace.raw_norm)
            .collect();

        let w2 = &self.params[self.w2_range()];
        let mut grad_hidden = vec![0.0; self.hidden_dim];
        {
            let w2_off = self.w2_range().start;
            let b2_off = self.b2_range().start;
            for (o, &g) in grad_raw.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
                let grow = &mut grads[w2_off + o * self.hidden_dim..w2_off + (o + 1) * self.hidden_dim];
                for h in 0..self.hidden_dim {
                    grow[h] += g * trace.hidden[h];
                    grad_hidden[h] += g * row[h];
                }
                grads[b2_off + o] += g;
            }
        }

        let w1_off = self.w1_range().start;
        let b1_off = self.b1_range().start;
        for h in 0..self.hidden_dim {
            if trace.pre_activation[h] <= 0.0 {
                continue;
            }
            let mut g = grad_hidden[h];
            if let Some(m) = &trace.mask {
                g *= m[h];
            }
            if g == 0.0 {
                continue;
            }
            let grow = &mut grads[w1_off + h * self.input_dim..w1_off + (h + 1) * self.input_dim];
            for (gw, x) in grow.iter_mut().zip(frame) {
                *gw += g * x;
            }
            grads[b1_off + h] += g;
        }
    }
}

/// Average pooling of frame embeddings. The mean is not re-normalized.
pub fn tracklet_feature(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or_else(|| NhacError::input("tracklet_feature of an empty set"))?;
    if embeddings.iter().any(|e| e.len() != first.len()) {
        return Err(NhacError::input("embeddings have mixed dimensions"));
    }
    Ok(mean(embeddings.iter().map(Vec::as_slice)))
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Per-cluster centroid memory used as a non-parametric softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    dim: usize,
    columns: Vec<Vec<f64>>,
    tau: f64,
}

impl LookupTable {
    /// Builds a table from raw centroids; every column is unit-normalized.
    pub fn new(columns: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(NhacError::config(format!("temperature {tau} must be positive")));
        }
        let dim = columns
            .first()
            .map(Vec::len)
            .ok_or_else(|| NhacError::input("lookup table needs at least one column"))?;
        if dim == 0 || columns.iter().any(|c| c.len() != dim) {
            return Err(NhacError::input("lookup columns must share a positive dimension"));
        }
        let columns = columns.iter().map(|c| normalized(c)).collect();
        Ok(Self { dim, columns, tau })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn cluster_count(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.columns[c]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(NhacError::input(format!(
                "feature has dimension {}, lookup table has {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Temperature-scaled inner products `V_c . v / tau`.
    pub fn logits(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        Ok(self.columns.iter().map(|c| dot(c, v) / self.tau).collect())
    }

    pub fn cluster_probability(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(v)?))
    }

    /// Cross-entropy of cluster `label` and its gradient with respect to `v`.
    /// The table itself is not differentiated.
    pub fn id_loss(&self, v: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        if label >= self.columns.len() {
            return Err(NhacError::input(format!(
                "label {label} out of range for {} clusters",
                self.columns.len()
            )));
        }
        let logits = self.logits(v)?;
        let loss = log_sum_exp(&logits) - logits[label];
        let mut coeff = softmax(&logits);
        coeff[label] -= 1.0;
        let mut grad = vec![0.0; self.dim];
        for (col, c) in self.columns.iter().zip(&coeff) {
            for (g, x) in grad.iter_mut().zip(col) {
                *g += c * x / self.tau;
            }
        }
        Ok((loss.max(0.0), grad))
    }

    /// Moves column `label` to the midpoint with `v` and re-normalizes it.
    /// An exactly antipodal `v` leaves the column as it was.
    pub fn update(&mut self, label: usize, v: &[f64]) -> Result<()> {
        self.check_dim(v)?;
        let column = self.columns.get_mut(label).ok_or_else(|| {
            NhacError::input(format!("label {label} out of range for lookup update"))
        })?;
        let mut mid: Vec<f64> = column.iter().zip(v).map(|(a, b)| 0.5 * (a + b)).collect();
        if mid.iter().all(|&x| x == 0.0) {
            warn!("lookup update for column {label} cancels out; column kept");
            return Ok(());
        }
        normalize_in_place(&mut mid);
        *column = mid;
        Ok(())
    }
}

/// Value and subgradients of the hinge triplet objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// `max(0, alpha + |a - p| - |a - n|)` with Euclidean distances.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], alpha: f64) -> TripletGrad {
    let dim = anchor.len();
    let d_pos = euclidean(anchor, positive);
    let d_neg = euclidean(anchor, negative);
    let slack = alpha + d_pos - d_neg;
    let mut out = TripletGrad {
        loss: 0.0,
        anchor: vec![0.0; dim],
        positive: vec![0.0; dim],
        negative: vec![0.0; dim],
    };
    if slack <= 0.0 {
        return out;
    }
    out.loss = slack;
    for k in 0..dim {
        let up = if d_pos > 0.0 { (anchor[k] - positive[k]) / d_pos } else { 0.0 };
        let un = if d_neg > 0.0 { (anchor[k] - negative[k]) / d_neg } else { 0.0 };
        out.anchor[k] = up - un;
        out.positive[k] = -up;
        out.negative[k] = un;
    }
    out
}

/// SGD with heavy-ball momentum and a single step-down of the learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdOptimizer {
    learning_rate: f64,
    momentum: f64,
    drop_epoch: usize,
    reduced_rate: f64,
    velocity: Vec<f64>,
}

impl SgdOptimizer {
    pub fn new(
        param_count: usize,
        learning_rate: f64,
        momentum: f64,
        drop_epoch: usize,
        reduced_rate: f64,
    ) -> Result<Self> {
        if !(learning_rate >= 0.0 && reduced_rate >= 0.0) {
            return Err(NhacError::config("learning rates must be non-negative"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NhacError::config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            drop_epoch,
            reduced_rate,
            velocity: vec![0.0; param_count],
        })
    }

    /// Rate used in the zero-based `epoch`: the base rate for the first
    /// `drop_epoch` epochs, the reduced rate afterwards.
    pub fn rate_for_epoch(&self, epoch: usize) -> f64 {
        if epoch < self.drop_epoch {
            self.learning_rate
        } else {
            self.reduced_rate
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], epoch: usize) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(NhacError::input(format!(
                "optimizer holds {} velocities, got {} params and {} grads",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        let lr = self.rate_for_epoch(epoch);
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
        Ok(())
    }
}

/// One training example: the sampled frames of a tracklet and its pseudo label.
#[derive(Debug, Clone)]
pub struct TrainingSample<'a> {
    pub frames: Vec<&'a [f64]>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub id: f64,
    pub triplet: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            id: 1.0,
            triplet: 1.0,
            margin: 0.3,
        }
    }
}

/// Batch objective evaluated at the current parameters.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    /// Mean cross-entropy over the batch.
    pub id_loss: f64,
    /// Mean hinge loss over emitted triplets (0 when there are none).
    pub triplet_loss: f64,
    /// Gradient of `w_id * id_loss + w_t * triplet_loss`.
    pub grads: Vec<f64>,
    /// Pooled feature of every sample, as seen by the loss.
    pub features: Vec<Vec<f64>>,
}

impl BatchObjective {
    pub fn total(&self, weights: &LossWeights) -> f64 {
        weights.id * self.id_loss + weights.triplet * self.triplet_loss
    }
}

fn part_mean(embeddings: &[Vec<f64>], part: &PartRef, part_len: usize) -> Vec<f64> {
    let start = part.part * part_len;
    mean(embeddings[start..start + part_len].iter().map(Vec::as_slice))
}

/// Loss and parameter gradient for one batch with the given dropout masks
/// (one optional mask per frame, `None` everywhere for inference mode).
pub fn batch_objective(
    model: &EmbeddingModel,
    table: &LookupTable,
    batch: &[TrainingSample<'_>],
    triplets: Option<&TripletBatch>,
    weights: &LossWeights,
    masks: Vec<Vec<Option<Vec<f64>>>>,
) -> Result<BatchObjective> {
    if batch.is_empty() {
        return Err(NhacError::input("empty training batch"));
    }
    debug_assert_eq!(masks.len(), batch.len());
    let mut traces = Vec::with_capacity(batch.len());
    for (sample, sample_masks) in batch.iter().zip(masks) {
        if sample.frames.is_empty() {
            return Err(NhacError::input("training sample without frames"));
        }
        let t = sample
            .frames
            .iter()
            .zip(sample_masks)
            .map(|(f, m)| model.forward(f, m))
            .collect::<Result<Vec<_>>>()?;
        traces.push(t);
    }
    let embeddings: Vec<Vec<Vec<f64>>> = traces
        .iter()
        .map(|t| t.iter().map(|f| f.embedding.clone()).collect())
        .collect();
    let mut grad_emb: Vec<Vec<Vec<f64>>> = embeddings
        .iter()
        .map(|e| vec![vec![0.0; model.embed_dim]; e.len()])
        .collect();

    let batch_len = batch.len() as f64;
    let mut id_total = 0.0;
    let mut features = Vec::with_capacity(batch.len());
    for (i, sample) in batch.iter().enumerate() {
        let v = tracklet_feature(&embeddings[i])?;
        let (loss, grad_v) = table.id_loss(&v, sample.label)?;
        id_total += loss;
        let scale = weights.id / (batch_len * embeddings[i].len() as f64);
        for g in grad_emb[i].iter_mut() {
            for (gk, vk) in g.iter_mut().zip(&grad_v) {
                *gk += scale * vk;
            }
        }
        features.push(v);
    }

    let mut triplet_mean = 0.0;
    if let Some(tb) = triplets.filter(|tb| !tb.triplets.is_empty()) {
        let count = tb.triplets.len() as f64;
        let part_len = tb.part_len;
        let mut total = 0.0;
        for t in &tb.triplets {
            let a = part_mean(&embeddings[t.anchor.member], &t.anchor, part_len);
            let p = part_mean(&embeddings[t.positive.member], &t.positive, part_len);
            let n = part_mean(&embeddings[t.negative.member], &t.negative, part_len);
            let tg = triplet_loss(&a, &p, &n, weights.margin);
            total += tg.loss;
            if tg.loss == 0.0 {
                continue;
            }
            let scale = weights.triplet / (count * part_len as f64);
            for (part, g) in [(&t.anchor, &tg.anchor), (&t.positive, &tg.positive), (&t.negative, &tg.negative)] {
                let start = part.part * part_len;
                for ge in &mut grad_emb[part.member][start..start + part_len] {
                    for (gk, vk) in ge.iter_mut().zip(g) {
                        *gk += scale * vk;
                    }
                }
            }
        }
        triplet_mean = total / count;
    }

    let mut grads = vec![0.0; model.params.len()];
    for (i, sample) in batch.iter().enumerate() {
        for ((frame, trace), g) in sample.frames.iter().zip(&traces[i]).zip(&grad_emb[i]) {
            model.backward(frame, trace, g, &mut grads);
        }
    }

    Ok(BatchObjective {
        id_loss: id_total / batch_len,
        triplet_loss: triplet_mean,
        grads,
        features,
    })
}

/// Losses reported by one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub id_loss: f64,
    pub triplet_loss: f64,
}

/// One momentum-SGD step on a batch, followed by the lookup-table update of
/// every sample's cluster column with its (normalized) pooled feature.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    model: &mut EmbeddingModel,
    table: &mut LookupTable,
    optimizer: &mut SgdOptimizer,
    batch: &[TrainingSample<'_>],
    triplets: Option<&TripletBatch>,
    weights: &LossWeights,
    epoch: usize,
    batch_index: usize,
    rng: &mut R,
) -> Result<StepLosses> {
    let masks = batch
        .iter()
        .map(|s| s.frames.iter().map(|_| model.draw_mask(rng)).collect())
        .collect();
    let objective = batch_objective(model, table, batch, triplets, weights, masks)?;
    if !objective.id_loss.is_finite() || !objective.triplet_loss.is_finite() {
        return Err(NhacError::NonFiniteLoss {
            epoch,
            batch: batch_index,
            id_loss: objective.id_loss,
            triplet_loss: objective.triplet_loss,
        });
    }
    optimizer.step(&mut model.params, &objective.grads, epoch)?;
    for (sample, v) in batch.iter().zip(&objective.features) {
        table.update(sample.label, &normalized(v))?;
    }
    Ok(StepLosses {
        id_loss: objective.id_loss,
        triplet_loss: objective.triplet_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_model_outputs_first_basis_vector() {
        let model = EmbeddingModel::zeros(3, 4, 5, 0.0).unwrap();
        let e = model.embed_eval(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(e, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_like_weights_give_unit_output() {
        let mut model = EmbeddingModel::zeros(2, 2, 2, 0.0).unwrap();
        let w1 = model.w1_range();
        let w2 = model.w2_range();
        model.params_mut()[w1].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        model.params_mut()[w2].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let e = model.embed_eval(&[1.0, 0.0]).unwrap();
        assert!((crate::vector::norm(&e) - 1.0).abs() < 1e-12);
        assert_eq!(e, vec![1.0, 0.0]);
    }

    #[test]
    fn embed_rejects_wrong_dimension() {
        let model = EmbeddingModel::new(4, 8, 3, 0.5, &mut rng(0)).unwrap();
        assert!(matches!(
            model.embed(&[1.0, 2.0], false, &mut rng(1)),
            Err(NhacError::InvalidInput(_))
        ));
    }

    #[test]
    fn dropout_replays_with_same_rng_state() {
        let model = EmbeddingModel::new(6, 16, 4, 0.5, &mut rng(3)).unwrap();
        let x = [0.1, -0.4, 0.9, 0.0, 0.2, 0.7];
        let a = model.embed(&x, true, &mut rng(11)).unwrap();
        let b = model.embed(&x, true, &mut rng(11)).unwrap();
        assert_eq!(a, b);
        // replaying the recorded mask through forward gives the same vector
        let mask = model.draw_mask(&mut rng(11));
        assert_eq!(model.forward(&x, mask).unwrap().embedding, a);
    }

    #[test]
    fn tracklet_feature_cases() {
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        assert_eq!(tracklet_feature(std::slice::from_ref(&e1)).unwrap(), e1);
        assert_eq!(tracklet_feature(&[e1, e2]).unwrap(), vec![0.5, 0.5]);
        assert!(tracklet_feature(&[]).is_err());
    }

    #[test]
    fn probability_edge_cases() {
        let single = LookupTable::new(vec![vec![0.0, 1.0]], 0.1).unwrap();
        assert_eq!(single.cluster_probability(&[0.3, 0.4]).unwrap(), vec![1.0]);

        let table = LookupTable::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 0.1).unwrap();
        let p = table.cluster_probability(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let (loss, _) = table.id_loss(&[0.0, 0.0, 1.0], 1).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_cluster_softmax_matches_scalar_evaluation() {
        let table = LookupTable::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 0.1).unwrap();
        let sigma = 1.0 / (1.0 + (-10.0f64).exp());
        let p = table.cluster_probability(&[1.0, 0.0]).unwrap();
        assert!((p[0] - sigma).abs() < 1e-12);
        assert!((p[1] - (1.0 - sigma)).abs() < 1e-12);
        assert!((p[0] - 0.9999546).abs() < 1e-7);
        let (loss, _) = table.id_loss(&[1.0, 0.0], 0).unwrap();
        assert!((loss - (-sigma.ln())).abs() < 1e-15);
        assert!((loss - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn id_loss_rejects_bad_label() {
        let table = LookupTable::new(vec![vec![1.0, 0.0]], 0.1).unwrap();
        assert!(table.id_loss(&[1.0, 0.0], 1).is_err());
        assert_eq!(table.id_loss(&[1.0, 0.0], 0).unwrap().0, 0.0);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let logits = [0.3, -2.0, 7.5, 1.25];
        let base = softmax(&logits);
        for shift in [-1000.0, -3.0, 0.5, 800.0] {
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            for (a, b) in base.iter().zip(softmax(&shifted)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lookup_update_cases() {
        let mut table = LookupTable::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]], 0.1).unwrap();
        let before = table.clone();
        table.update(1, &[0.0, 1.0]).unwrap();
        assert_eq!(table, before);

        table.update(0, &[0.0, 1.0]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((table.column(0)[0] - h).abs() < 1e-15);
        assert!((table.column(0)[1] - h).abs() < 1e-15);

        let mut t3 = before.clone();
        t3.update(1, &[h, h]).unwrap();
        assert_eq!(t3.column(0), before.column(0));
        assert_eq!(t3.column(2), before.column(2));

        // antipodal update keeps the column
        let mut t4 = before.clone();
        t4.update(0, &[-1.0, 0.0]).unwrap();
        assert_eq!(t4, before);
    }

    #[test]
    fn triplet_loss_cases() {
        let a = [0.0, 0.0];
        let t = triplet_loss(&a, &[1.0, 0.0], &[0.0, 1.0], 0.3);
        assert!((t.loss - 0.3).abs() < 1e-15);
        let t = triplet_loss(&a, &[0.1, 0.0], &[0.0, 1.0], 0.3);
        assert_eq!(t.loss, 0.0);
        assert!(t.anchor.iter().all(|&g| g == 0.0));
        let t = triplet_loss(&a, &[0.5, 0.0], &[0.0, 0.6], 0.3);
        assert!((t.loss - 0.2).abs() < 1e-12);
    }

    #[test]
    fn learning_rate_schedule() {
        let opt = SgdOptimizer::new(1, 0.1, 0.9, 15, 0.01).unwrap();
        assert_eq!(opt.rate_for_epoch(0), 0.1);
        assert_eq!(opt.rate_for_epoch(14), 0.1);
        // sixteenth epoch, zero-based index 15
        assert_eq!(opt.rate_for_epoch(15), 0.01);
    }

    #[test]
    fn optimizer_rejects_shape_mismatch() {
        let mut opt = SgdOptimizer::new(3, 0.1, 0.9, 15, 0.01).unwrap();
        let mut p = vec![0.0; 2];
        assert!(opt.step(&mut p, &[0.0; 2], 0).is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut r = rng(5);
        let mut model = EmbeddingModel::new(3, 5, 2, 0.5, &mut r).unwrap();
        let before = model.clone();
        let mut table = LookupTable::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 0.1).unwrap();
        let mut opt = SgdOptimizer::new(model.params().len(), 0.0, 0.9, 15, 0.0).unwrap();
        let frames = [[0.1, 0.2, 0.3], [0.5, -0.1, 0.0]];
        let batch = vec![TrainingSample {
            frames: frames.iter().map(|f| &f[..]).collect(),
            label: 1,
        }];
        let losses = train_step(&mut model, &mut table, &mut opt, &batch, None, &LossWeights::default(), 0, 0, &mut r).unwrap();
        assert_eq!(model, before);
        assert!(losses.id_loss > 0.0);
    }
}
