//! Bayesian spatiotemporal small-area estimation of childhood vaccination
//! coverage with spatially varying effects of maternal empowerment.
//!
//! The model is a Bernoulli-logit regression whose linear predictor combines an
//! intercept with four latent fields, one per (empowerment dimension, level)
//! pair, each carrying a separable ICAR (space) x AR1 (time) prior. Posterior
//! inference uses a Pólya-Gamma augmented Gibbs sampler.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod empowerment;
pub mod error;
pub mod graph;
pub mod inference;
pub mod io;
pub mod latent;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod sparse;
pub mod validate;

pub use error::{Error, Result};
pub use graph::{connected_components, icar_structure, load_adjacency, AdjacencyGraph, IcarStructure};
pub use latent::{FieldHyper, HyperPriorSpec};
pub use model::{ChildRecord, DesignRow, Field, ModelState, Profile, Vaccine};
