//! Diverse counterfactual explanations for differentiable tabular
//! classifiers.
//!
//! Perturbations of an instance are treated as random variables under a
//! (optionally hierarchical) Bayesian prior. A No-U-Turn sampler draws them
//! from the posterior that rewards valid and nearby counterfactuals, and the
//! draws are scored with validity, proximity, sparsity, diversity,
//! robustness and fairness metrics plus MCMC convergence diagnostics.

pub mod classifier;
pub mod data;
pub mod diagnostics;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod sampler;
mod special;
