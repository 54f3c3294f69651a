//! Posterior computation, convergence diagnostics and posterior summaries.

pub mod diagnostics;
pub mod polya_gamma;
pub mod sampler;
pub mod summary;

pub use diagnostics::{diagnose, ParamDiagnostic};
pub use polya_gamma::{pg_mean, pg_variance, sample_pg1, sample_polya_gamma};
pub use sampler::{
    fit, latent_full_conditional, posterior_diagnostics, run_chain, ChainDraws, FitData, FitResult, PosteriorDraws,
};
pub use summary::{conditional_coverage, profile_weights, summarize, Dimension, LevelCoverage, Summary};
