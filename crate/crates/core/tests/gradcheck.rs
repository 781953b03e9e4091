//! Central finite differences against the hand-written backward pass.

#![allow(clippy::needless_range_loop)]

mod common;

use nhac::model::{batch_objective, EmbeddingModel, LookupTable, LossWeights, TrainingSample};
use nhac::nrm::build_triplets;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

struct Fixture {
    model: EmbeddingModel,
    table: LookupTable,
    frames: Vec<Vec<Vec<f64>>>,
    labels: Vec<usize>,
}

fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, hidden, embed, clusters, members, m) = (6, 9, 5, 3, 4, 4);
    // generic point: random biases keep the pre-normalization output away from zero
    let count = EmbeddingModel::zeros(input, hidden, embed, 0.0).unwrap().params().len();
    let params = gaussian(&mut rng, count).iter().map(|x| 0.5 * x).collect();
    let model = EmbeddingModel::from_params(input, hidden, embed, 0.0, params).unwrap();
    let table = LookupTable::new((0..clusters).map(|_| gaussian(&mut rng, embed)).collect(), 0.1).unwrap();
    // frames stay clear of ReLU kinks so the central difference is smooth
    let frames = (0..members)
        .map(|_| (0..m).map(|_| common::smooth_frame(&mut rng, &model, 1e-3)).collect())
        .collect();
    let labels = (0..members).map(|i| i % clusters).collect();
    Fixture {
        model,
        table,
        frames,
        labels,
    }
}

fn max_relative_error(f: &Fixture, weights: LossWeights, with_triplets: bool, seed: u64) -> f64 {
    let batch: Vec<TrainingSample<'_>> = f
        .frames
        .iter()
        .zip(&f.labels)
        .map(|(fr, &label)| TrainingSample {
            frames: fr.iter().map(Vec::as_slice).collect(),
            label,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let triplets = with_triplets.then(|| build_triplets(4, 2, &f.labels, &mut rng).unwrap());
    let no_masks = || batch.iter().map(|s| vec![None; s.frames.len()]).collect();

    let objective = |model: &EmbeddingModel| {
        batch_objective(model, &f.table, &batch, triplets.as_ref(), &weights, no_masks()).unwrap()
    };
    let analytic = objective(&f.model).grads;

    let mut worst: f64 = 0.0;
    let mut probe = f.model.clone();
    for i in 0..analytic.len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + H;
        let up = objective(&probe).total(&weights);
        probe.params_mut()[i] = orig - H;
        let down = objective(&probe).total(&weights);
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn id_loss_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let f = fixture(seed);
        let w = LossWeights {
            id: 1.0,
            triplet: 0.0,
            margin: 0.3,
        };
        let e = max_relative_error(&f, w, false, seed);
        assert!(e < TOL, "seed {seed}: relative error {e}");
    }
}

#[test]
fn triplet_loss_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let f = fixture(seed);
        // a wide margin keeps every hinge active
        let w = LossWeights {
            id: 0.0,
            triplet: 1.0,
            margin: 3.0,
        };
        let e = max_relative_error(&f, w, true, seed);
        assert!(e < TOL, "seed {seed}: relative error {e}");
    }
}

#[test]
fn combined_objective_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let f = fixture(seed + 100);
        let e = max_relative_error(
            &f,
            LossWeights {
                id: 1.0,
                triplet: 1.0,
                margin: 3.0,
            },
            true,
            seed,
        );
        assert!(e < TOL, "seed {seed}: relative error {e}");
    }
}
