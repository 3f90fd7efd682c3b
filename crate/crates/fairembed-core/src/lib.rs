//! Core library for the fairembed toolkit: a simulation and analysis stack
//! for studying demographic disparity in metric-embedding obfuscation.
//!
//! The pieces fit together as follows. [`synthetic`] defines and samples a
//! two-group hierarchical Gaussian image model. [`eigen`] and [`pca`] provide
//! a dense symmetric eigensolver and a k-component PCA embedder with an
//! analytic adjoint; [`mlp`] provides a small triplet-trained nonlinear
//! embedder. Both embedders implement the [`embed::Embedder`] contract that
//! the evasion attacks in [`attacks`] require. [`matching`] computes
//! FAR-constrained thresholds, TPR, and AUC over genuine/impostor pairs.
//! [`bounds`] evaluates the closed-form perturbation-feasibility interval and
//! audits it against a brute-force likelihood-ratio oracle. [`stats`] holds
//! Welch's t-test, the Alexander-Govern test, and the distribution functions
//! they need.
//!
//! Everything is deterministic given explicit seeds: sampling uses
//! counter-based substreams (see [`stream`]) so results do not depend on
//! thread count or evaluation order.

pub mod attacks;
pub mod bounds;
pub mod csvfmt;
pub mod eigen;
pub mod embed;
pub mod error;
pub mod matching;
pub mod mlp;
pub mod pca;
pub mod stats;
pub mod stream;
pub mod synthetic;

pub use error::{CoreError, Result};
pub use stream::Stream;
