//! Outlier ranking with dimension-level feedback for unlabeled tabular data.
//!
//! Three detectors score observations: an undercomplete [`autoencoder`]
//! (which also explains each score per dimension), the [`lof`] local outlier
//! factor and an [`iforest`] isolation forest. [`ranking`] turns scores into
//! ranks and top-percent labels. The evaluation harnesses compare detectors
//! against expert label sheets ([`experts`]) and against known ground truth
//! from data-quality diffs or injected perturbations ([`perturbation`]).
//! [`pipeline`] wires the stages together and [`report`] writes deterministic
//! output files.

pub mod autoencoder;
pub mod config;
pub mod data;
pub mod experts;
pub mod iforest;
pub mod lof;
pub mod perturbation;
pub mod pipeline;
pub mod ranking;
pub mod report;
