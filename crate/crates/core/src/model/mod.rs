//! Unnormalized log posterior over counterfactual perturbations.
//!
//! An instance `x` is perturbed into `x* = z ⊙ x + Δ`, where continuous
//! features receive an additive shift `δ` and categorical features are
//! replaced by a simplex vector `η′`. The perturbations get Gaussian and
//! Dirichlet priors, optionally nested under subgroup- and population-level
//! parameters. The likelihood rewards counterfactuals that the classifier
//! accepts and that stay close to `x`; the hierarchical modes add terms that
//! push the level parameters toward the positive training instances.
//!
//! Sampling happens in an unconstrained space; [`Layout`] fixes the map.

mod config;
mod counterfactual;
mod density;
mod layout;

use thiserror::Error;

pub use config::{
    CausalEdge, Discretize, FeaturePrior, GammaPrior, Hierarchy, InvGammaPrior, PriorConfig,
};
pub use counterfactual::{discretize, CounterfactualSample};
pub use density::{Level, ModelContext};
pub use layout::{
    stick_forward, stick_inverse, Block, BlockKind, CatFeature, ContFeature, Layout, LevelValues,
    Parent, Simplex, Values,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite log density or gradient")]
    NonFinite,
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("hierarchical model needs partitioned training data")]
    EmptyLevel,
    #[error("invalid prior config: {0}")]
    InvalidConfig(String),
}
