//! Noise- and hard-frame-aware bottom-up clustering for unsupervised
//! tracklet re-identification.
//!
//! The crate is organized around the stages of one clustering iteration:
//!
//! * [`model`]: frame embedding network, lookup-table classifier, losses.
//! * [`gtm`]: per-tracklet graph trimming of noise frames.
//! * [`nrm`]: easy/hard node re-sampling and tracklet triplets.
//! * [`cluster`]: single-linkage merging and pseudo labels.
//! * [`pipeline`]: the full loop plus ablation, delta-sweep and
//!   re-sampling comparisons.
//! * [`synth`], [`io`]: synthetic tracklets and the on-disk formats.
//! * [`metrics`], [`report`]: CMC/mAP, clustering and trimming scores,
//!   CSV and SVG output.

pub mod cluster;
pub mod error;
pub mod gtm;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nrm;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod vector;

pub use error::{NhacError, Result};
pub use pipeline::{run, PipelineConfig, RunReport};
pub use synth::{generate, Dataset, SyntheticSpec};
