//! End-to-end posterior sampling for one instance: build the model, run the
//! chains, map draws to constrained values and concrete counterfactuals,
//! and summarize.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classifier::MlpClassifier;
use crate::data::{Dataset, FeatureSchema, PartitionedData};
use crate::diagnostics::{summarize, DiagnosticsError, ParamSummary};
use crate::model::{discretize, CounterfactualSample, ModelContext, ModelError, PriorConfig};
use crate::sampler::{run_chains, Init, NutsConfig, SampleBatch, SamplerError};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

/// Posterior draws for one instance.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub x: Vec<f64>,
    pub group: usize,
    pub param_names: Vec<String>,
    /// Indices of the `δ` and `η′` entries within `param_names`.
    pub perturbation_idx: Vec<usize>,
    pub batch: SampleBatch,
    /// `[chain][draw][param]` in constrained space.
    pub constrained: Vec<Vec<Vec<f64>>>,
    /// `[chain][draw]`.
    pub samples: Vec<Vec<CounterfactualSample>>,
    pub summaries: Vec<ParamSummary>,
}

impl Explanation {
    /// All counterfactual samples, chain by chain.
    pub fn flat_samples(&self) -> impl Iterator<Item = &CounterfactualSample> {
        self.samples.iter().flatten()
    }

    /// Discretized encodings of all samples.
    pub fn encoded(&self) -> Vec<Vec<f64>> {
        self.flat_samples().map(|s| s.encoded.clone()).collect()
    }

    pub fn probs_discrete(&self) -> Vec<f64> {
        self.flat_samples().map(|s| s.prob_discrete).collect()
    }

    /// `[chain][draw]` of one constrained parameter.
    pub fn param(&self, i: usize) -> Vec<Vec<f64>> {
        self.constrained.iter().map(|c| c.iter().map(|d| d[i]).collect()).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// Largest R-hat over the perturbation entries; `None` if unavailable.
    pub fn max_perturbation_rhat(&self) -> Option<f64> {
        self.perturbation_idx
            .iter()
            .map(|&i| self.summaries[i].rhat.map(|r| r.value))
            .try_fold(f64::NEG_INFINITY, |m, r| r.map(|v| m.max(v)))
    }

    /// Fraction of samples whose discretized counterfactual is valid.
    pub fn valid_fraction(&self) -> f64 {
        let n = self.batch.n_draws().max(1);
        self.flat_samples().filter(|s| s.is_valid()).count() as f64 / n as f64
    }
}

/// Everything an explanation run needs besides the instance.
#[derive(Debug, Clone)]
pub struct ExplainSetup<'a> {
    pub schema: &'a FeatureSchema,
    pub classifier: &'a MlpClassifier,
    pub prior: &'a PriorConfig,
    pub partition: Option<&'a PartitionedData>,
    pub nuts: &'a NutsConfig,
    pub init: Init,
    /// Credible-interval level for the summaries.
    pub level: f64,
}

/// Sample the counterfactual posterior of encoded instance `x`.
///
/// Categorical levels are drawn with a per-chain ChaCha8 stream separate
/// from the sampler's, so discretization never perturbs the chains.
pub fn explain(setup: &ExplainSetup<'_>, x: &[f64]) -> Result<Explanation, ExplainError> {
    let ctx = ModelContext::new(setup.schema, setup.classifier, setup.prior, x, setup.partition)?;
    let batch = run_chains(setup.nuts, &ctx, &setup.init)?;
    let layout = &ctx.layout;
    let mut constrained = Vec::with_capacity(batch.chains.len());
    let mut samples = Vec::with_capacity(batch.chains.len());
    for chain in &batch.chains {
        let mut rng = ChaCha8Rng::seed_from_u64(chain.seed);
        rng.set_stream(1);
        let mut cs = Vec::with_capacity(chain.len());
        let mut ss = Vec::with_capacity(chain.len());
        for (u, &lp) in chain.draws.iter().zip(&chain.log_density) {
            let (v, _) = layout.transform(u)?;
            cs.push(layout.constrained(&v));
            ss.push(discretize(&ctx, &v, lp, setup.prior.discretize, &mut rng));
        }
        constrained.push(cs);
        samples.push(ss);
    }
    let param_names = layout.param_names();
    let summaries = summarize(&param_names, &constrained, setup.level)?;
    Ok(Explanation {
        x: x.to_vec(),
        group: ctx.group,
        perturbation_idx: layout.perturbation_indices(),
        param_names,
        batch,
        constrained,
        samples,
        summaries,
    })
}

/// Test-split rows the classifier assigns to the negative class, in split
/// order.
pub fn test_negatives(data: &Dataset, classifier: &MlpClassifier) -> Vec<usize> {
    data.test_idx.iter().copied().filter(|&i| classifier.prob(&data.encoded[i]) < 0.5).collect()
}
