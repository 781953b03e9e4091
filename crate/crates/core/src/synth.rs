//! Tracklet datasets and a synthetic generator with planted easy, hard and
//! noise frames.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NhacError, Result};
use crate::vector::{dot, normalize_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Easy,
    Hard,
    Noise,
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameKind::Easy => "easy",
            FrameKind::Hard => "hard",
            FrameKind::Noise => "noise",
        })
    }
}

impl FromStr for FrameKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "easy" => Ok(FrameKind::Easy),
            "hard" => Ok(FrameKind::Hard),
            "noise" => Ok(FrameKind::Noise),
            other => Err(format!("unknown frame kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub feature: Vec<f64>,
    pub kind: Option<FrameKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: String,
    pub identity: Option<u32>,
    pub camera: Option<u32>,
    pub frames: Vec<Frame>,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub tracklets: Vec<Tracklet>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.tracklets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracklets.is_empty()
    }

    pub fn frame_count(&self) -> usize {
        self.tracklets.iter().map(Tracklet::len).sum()
    }

    pub fn has_identities(&self) -> bool {
        !self.tracklets.is_empty() && self.tracklets.iter().all(|t| t.identity.is_some())
    }

    pub fn has_kinds(&self) -> bool {
        !self.tracklets.is_empty()
            && self
                .tracklets
                .iter()
                .all(|t| t.frames.iter().all(|f| f.kind.is_some()))
    }

    pub fn identities(&self) -> Option<Vec<u32>> {
        self.tracklets.iter().map(|t| t.identity).collect()
    }

    /// Checks that the dataset is non-empty, every tracklet has frames and
    /// every feature has the declared dimension.
    pub fn validate(&self) -> Result<()> {
        if self.tracklets.is_empty() {
            return Err(NhacError::input("dataset has no tracklets"));
        }
        for t in &self.tracklets {
            if t.frames.is_empty() {
                return Err(NhacError::Tracklet {
                    tracklet: t.id.clone(),
                    message: "no frames".into(),
                });
            }
            if let Some(f) = t.frames.iter().find(|f| f.feature.len() != self.dim) {
                return Err(NhacError::Tracklet {
                    tracklet: t.id.clone(),
                    message: format!("frame of dimension {}, dataset dimension {}", f.feature.len(), self.dim),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Noise frames look like one other identity (one distractor per tracklet).
    #[default]
    OtherIdentity,
    /// Noise frames are uniform on the sphere.
    UniformRandom,
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    pub n_cameras: usize,
    pub tracklets_per_identity_per_camera: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub input_dim: usize,
    /// Per-frame perturbation scale of easy frames around the tracklet center.
    pub easy_sigma: f64,
    /// Scale of the extra per-frame appearance change of hard frames, drawn
    /// inside the nuisance subspace (at least `easy_sigma`).
    pub hard_sigma: f64,
    /// Rank of the shared appearance-nuisance subspace (camera and scene).
    pub nuisance_rank: usize,
    /// Scale of the per-camera bias inside the nuisance subspace.
    pub camera_sigma: f64,
    /// Scale of the per-tracklet offset inside the nuisance subspace.
    pub tracklet_sigma: f64,
    pub hard_fraction: f64,
    pub noise_fraction: f64,
    pub noise_mode: NoiseMode,
    /// Minimum pairwise angle between identity prototypes, in degrees.
    pub min_prototype_angle_deg: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_identities: 10,
            n_cameras: 2,
            tracklets_per_identity_per_camera: 2,
            min_frames: 16,
            max_frames: 32,
            input_dim: 32,
            easy_sigma: 0.3,
            hard_sigma: 0.8,
            nuisance_rank: 8,
            camera_sigma: 0.6,
            tracklet_sigma: 0.8,
            hard_fraction: 0.3,
            noise_fraction: 0.1,
            noise_mode: NoiseMode::OtherIdentity,
            min_prototype_angle_deg: 60.0,
            seed: 0,
        }
    }
}

const MAX_PROTOTYPE_ATTEMPTS: usize = 100_000;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NhacError::config(m));
        if self.n_identities == 0 || self.n_cameras == 0 || self.tracklets_per_identity_per_camera == 0 {
            return bad("identity, camera and tracklet counts must be positive".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!("frame range [{}, {}] is invalid", self.min_frames, self.max_frames));
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        for (name, s) in [("easy_sigma", self.easy_sigma), ("hard_sigma", self.hard_sigma), ("camera_sigma", self.camera_sigma), ("tracklet_sigma", self.tracklet_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if self.nuisance_rank > self.input_dim {
            return bad(format!("nuisance_rank {} exceeds input_dim {}", self.nuisance_rank, self.input_dim));
        }
        if self.hard_sigma < self.easy_sigma {
            return bad("hard_sigma must not be below easy_sigma".into());
        }
        for (name, f) in [("hard_fraction", self.hard_fraction), ("noise_fraction", self.noise_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} {f} outside [0, 1)"));
            }
        }
        if self.hard_fraction + self.noise_fraction >= 1.0 {
            return bad("hard_fraction + noise_fraction must be below 1".into());
        }
        if self.noise_fraction > 0.0 && self.noise_mode == NoiseMode::OtherIdentity && self.n_identities < 2 {
            return bad("other_identity noise needs at least two identities".into());
        }
        if !(0.0..=180.0).contains(&self.min_prototype_angle_deg) {
            return bad("min_prototype_angle_deg outside [0, 180]".into());
        }
        Ok(())
    }

    /// Exact `(noise, hard, easy)` frame counts for a tracklet of length `len`.
    pub fn kind_counts(&self, len: usize) -> (usize, usize, usize) {
        let noise = (len as f64 * self.noise_fraction).round() as usize;
        let hard = (len as f64 * self.hard_fraction).round() as usize;
        (noise, hard, len - noise - hard)
    }
}

fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalize_in_place(&mut v);
    v
}

/// `normalize(center + sigma * g / sqrt(dim))`; returns `center` itself for
/// `sigma == 0`.
fn perturb<R: Rng + ?Sized>(center: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return center.to_vec();
    }
    let scale = sigma / (center.len() as f64).sqrt();
    let mut v: Vec<f64> = center
        .iter()
        .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize_in_place(&mut v);
    v
}

/// Unit prototypes with pairwise angles of at least `min_angle_deg`.
pub fn prototypes<R: Rng + ?Sized>(count: usize, dim: usize, min_angle_deg: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let max_cos = min_angle_deg.to_radians().cos();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > MAX_PROTOTYPE_ATTEMPTS {
            return Err(NhacError::config(format!(
                "could not place {count} prototypes {min_angle_deg} degrees apart in {dim} dimensions"
            )));
        }
        let candidate = random_direction(dim, rng);
        if out.iter().all(|p| dot(p, &candidate) <= max_cos) {
            out.push(candidate);
        }
    }
    Ok(out)
}

/// Orthonormal basis of a random `rank`-dimensional subspace (Gram-Schmidt).
fn random_subspace<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while basis.len() < rank {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        if normalize_in_place(&mut v) > 1e-6 {
            basis.push(v);
        }
    }
    basis
}

/// Random vector of expected norm `sigma` inside the span of `basis`.
fn subspace_offset<R: Rng + ?Sized>(basis: &[Vec<f64>], dim: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if sigma == 0.0 || basis.is_empty() {
        return out;
    }
    let scale = sigma / (basis.len() as f64).sqrt();
    for b in basis {
        let z: f64 = rng.sample(StandardNormal);
        out.iter_mut().zip(b).for_each(|(o, x)| *o += scale * z * x);
    }
    out
}

/// `normalize(proto + offset)`, or `proto` itself when there is no offset.
fn shifted(proto: &[f64], offset: &[f64]) -> Vec<f64> {
    if offset.iter().all(|&x| x == 0.0) {
        return proto.to_vec();
    }
    let mut v: Vec<f64> = proto.iter().zip(offset).map(|(p, o)| p + o).collect();
    normalize_in_place(&mut v);
    v
}

/// Generates a dataset. Identical specs give bitwise-identical datasets.
///
/// Each identity has a unit prototype. A tracklet's center is the prototype
/// shifted by its camera's bias and its own scene offset, both drawn inside
/// a shared low-rank nuisance subspace. Easy and hard frames perturb the
/// center isotropically with `easy_sigma`; hard frames first move along the
/// nuisance subspace by `hard_sigma` (pose, partial occlusion). Noise frames
/// either show a distractor identity in the same camera and scene or are
/// uniform on the sphere.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let dim = spec.input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = prototypes(spec.n_identities, dim, spec.min_prototype_angle_deg, &mut rng)?;
    let nuisance = random_subspace(dim, spec.nuisance_rank, &mut rng);
    let camera_bias: Vec<Vec<f64>> = (0..spec.n_cameras)
        .map(|_| subspace_offset(&nuisance, dim, spec.camera_sigma, &mut rng))
        .collect();

    let mut tracklets = Vec::new();
    for identity in 0..spec.n_identities {
        for (camera, bias) in camera_bias.iter().enumerate() {
            for _ in 0..spec.tracklets_per_identity_per_camera {
                let len = rng.random_range(spec.min_frames..=spec.max_frames);
                let (noise, hard, easy) = spec.kind_counts(len);
                let mut kinds: Vec<FrameKind> = std::iter::repeat_n(FrameKind::Noise, noise)
                    .chain(std::iter::repeat_n(FrameKind::Hard, hard))
                    .chain(std::iter::repeat_n(FrameKind::Easy, easy))
                    .collect();
                kinds.shuffle(&mut rng);

                let scene = subspace_offset(&nuisance, dim, spec.tracklet_sigma, &mut rng);
                let offset: Vec<f64> = bias.iter().zip(&scene).map(|(b, s)| b + s).collect();
                let center = shifted(&protos[identity], &offset);
                let distractor = {
                    let d = rng.random_range(0..spec.n_identities.max(2) - 1);
                    if d >= identity { d + 1 } else { d }
                };
                let frames = kinds
                    .into_iter()
                    .map(|kind| {
                        let feature = match kind {
                            FrameKind::Easy => perturb(&center, spec.easy_sigma, &mut rng),
                            FrameKind::Hard => {
                                let pose = subspace_offset(&nuisance, dim, spec.hard_sigma, &mut rng);
                                perturb(&shifted(&center, &pose), spec.easy_sigma, &mut rng)
                            }
                            FrameKind::Noise => match spec.noise_mode {
                                NoiseMode::OtherIdentity => {
                                    let other = shifted(&protos[distractor], &offset);
                                    perturb(&other, spec.easy_sigma, &mut rng)
                                }
                                NoiseMode::UniformRandom => random_direction(dim, &mut rng),
                            },
                        };
                        Frame {
                            feature,
                            kind: Some(kind),
                        }
                    })
                    .collect();
                tracklets.push(Tracklet {
                    id: format!("t{:04}", tracklets.len()),
                    identity: Some(identity as u32 + 1),
                    camera: Some(camera as u32 + 1),
                    frames,
                });
            }
        }
    }
    Ok(Dataset { dim, tracklets })
}

/// Tracklet indices of the cross-camera retrieval protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGallery {
    pub query: Vec<usize>,
    pub gallery: Vec<usize>,
}

/// Tracklets of the lowest-numbered camera become queries, all others form
/// the gallery. Queries whose identity never appears in the gallery are
/// dropped with a warning.
pub fn split_query_gallery(dataset: &Dataset) -> Result<QueryGallery> {
    let mut cameras = BTreeSet::new();
    for t in &dataset.tracklets {
        let c = t.camera.ok_or_else(|| NhacError::Tracklet {
            tracklet: t.id.clone(),
            message: "camera annotation required for query/gallery split".into(),
        })?;
        if t.identity.is_none() {
            return Err(NhacError::Tracklet {
                tracklet: t.id.clone(),
                message: "identity annotation required for query/gallery split".into(),
            });
        }
        cameras.insert(c);
    }
    if cameras.len() < 2 {
        return Err(NhacError::input("query/gallery split needs at least two cameras"));
    }
    let query_camera = *cameras.first().expect("non-empty");
    let (mut query, mut gallery) = (Vec::new(), Vec::new());
    for (i, t) in dataset.tracklets.iter().enumerate() {
        if t.camera == Some(query_camera) {
            query.push(i);
        } else {
            gallery.push(i);
        }
    }
    let gallery_ids: BTreeSet<u32> = gallery.iter().filter_map(|&g| dataset.tracklets[g].identity).collect();
    query.retain(|&q| {
        let t = &dataset.tracklets[q];
        let covered = t.identity.is_some_and(|id| gallery_ids.contains(&id));
        if !covered {
            warn!("query tracklet {} has no gallery match; excluded", t.id);
        }
        covered
    });
    Ok(QueryGallery { query, gallery })
}
