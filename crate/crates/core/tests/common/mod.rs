//! Naive reference implementations used as test oracles, written with plain
//! index loops. Only parameter access goes through the library.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;

pub fn scalar_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub fn scalar_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

/// Survivor mask of one tracklet graph: centroid, cosine to it, squared
/// deviation, threshold `sum(u) / (L * delta)`, keep `u <= q`.
pub fn trim_oracle(nodes: &[Vec<f64>], delta: f64) -> Vec<bool> {
    let l = nodes.len();
    let dim = nodes[0].len();
    let mut centroid = vec![0.0; dim];
    for node in nodes {
        for k in 0..dim {
            centroid[k] += node[k];
        }
    }
    for c in centroid.iter_mut() {
        *c /= l as f64;
    }
    let cn = scalar_dot(&centroid, &centroid).sqrt();
    let mut u = vec![0.0; l];
    for j in 0..l {
        let nn = scalar_dot(&nodes[j], &nodes[j]).sqrt();
        let denom = nn * cn;
        let s = if denom > 0.0 { scalar_dot(&nodes[j], &centroid) / denom } else { 0.0 };
        u[j] = (1.0 - s) * (1.0 - s);
    }
    let mut total = 0.0;
    for x in &u {
        total += x;
    }
    let q = total / (l as f64 * delta);
    u.iter().map(|&x| x <= q).collect()
}

/// Single-linkage merge sequence recomputed from scratch before every merge.
/// Returns `(kept id, absorbed id, distance)` per merge; clusters are named
/// by their smallest tracklet index and ties go to the smallest id pair.
pub fn linkage_oracle(features: &[Vec<f64>], merges: usize) -> Vec<(usize, usize, f64)> {
    let n = features.len();
    let mut assignment: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    for _ in 0..merges {
        let mut ids: Vec<usize> = assignment.clone();
        ids.sort();
        ids.dedup();
        if ids.len() < 2 {
            break;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for x in 0..ids.len() {
            for y in x + 1..ids.len() {
                let mut d = f64::INFINITY;
                for i in 0..n {
                    for j in 0..n {
                        if assignment[i] == ids[x] && assignment[j] == ids[y] {
                            let e = scalar_distance(&features[i], &features[j]);
                            if e < d {
                                d = e;
                            }
                        }
                    }
                }
                let better = match best {
                    None => true,
                    Some((_, _, bd)) => d < bd,
                };
                if better {
                    best = Some((ids[x], ids[y], d));
                }
            }
        }
        let (a, b, d) = best.unwrap();
        for c in assignment.iter_mut() {
            if *c == b {
                *c = a;
            }
        }
        out.push((a, b, d));
    }
    out
}

/// Rank position (0-based) of gallery item `g` for a query: the number of
/// items strictly ahead under (distance, index) order.
fn rank_of(row: &[f64], g: usize) -> usize {
    let mut r = 0;
    for h in 0..row.len() {
        if row[h] < row[g] || (row[h] == row[g] && h < g) {
            r += 1;
        }
    }
    r
}

fn has_match(qid: u32, gids: &[u32]) -> bool {
    gids.contains(&qid)
}

pub fn cmc_oracle(distances: &[Vec<f64>], qids: &[u32], gids: &[u32], k: usize) -> f64 {
    let mut valid = 0;
    let mut hits = 0;
    for (q, row) in distances.iter().enumerate() {
        if !has_match(qids[q], gids) {
            continue;
        }
        valid += 1;
        let mut first = usize::MAX;
        for g in 0..gids.len() {
            if gids[g] == qids[q] {
                first = first.min(rank_of(row, g));
            }
        }
        if first < k {
            hits += 1;
        }
    }
    if valid == 0 {
        0.0
    } else {
        hits as f64 / valid as f64
    }
}

pub fn map_oracle(distances: &[Vec<f64>], qids: &[u32], gids: &[u32]) -> f64 {
    let mut valid = 0;
    let mut total = 0.0;
    for (q, row) in distances.iter().enumerate() {
        if !has_match(qids[q], gids) {
            continue;
        }
        valid += 1;
        let relevant: Vec<usize> = (0..gids.len()).filter(|&g| gids[g] == qids[q]).collect();
        let mut ap = 0.0;
        for &g in &relevant {
            let r = rank_of(row, g);
            let above = relevant.iter().filter(|&&h| rank_of(row, h) <= r).count();
            ap += above as f64 / (r + 1) as f64;
        }
        total += ap / relevant.len() as f64;
    }
    if valid == 0 {
        0.0
    } else {
        total / valid as f64
    }
}

/// Pair-counting scores over all ordered pairs `i != j`.
pub fn pair_oracle(labels: &[usize], truth: &[u32]) -> (f64, f64, f64) {
    let n = labels.len();
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            match (labels[i] == labels[j], truth[i] == truth[j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// Smallest |pre-activation| of the hidden layer for `frame`. Central
/// differences are only meaningful when this is well above the step size.
pub fn kink_margin(model: &nhac::model::EmbeddingModel, frame: &[f64]) -> f64 {
    let p = model.params();
    let (w1, b1) = (&p[model.w1_range()], &p[model.b1_range()]);
    let d = model.input_dim();
    (0..model.hidden_dim())
        .map(|h| (scalar_dot(&w1[h * d..(h + 1) * d], frame) + b1[h]).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Gaussian frame redrawn until no hidden unit sits within `margin` of its kink.
pub fn smooth_frame<R: Rng>(rng: &mut R, model: &nhac::model::EmbeddingModel, margin: f64) -> Vec<f64> {
    loop {
        let f = gaussian_vec(rng, model.input_dim());
        if kink_margin(model, &f) > margin {
            return f;
        }
    }
}
