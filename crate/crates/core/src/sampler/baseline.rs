use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{discretize, CounterfactualSample, Discretize, ModelContext, Values};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub n_restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { n_restarts: 10, steps: 500, step_size: 0.05, seed: 0 }
    }
}

/// Final iterate of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePoint {
    pub delta: Vec<f64>,
    /// Categorical probability vectors (softmax of the optimized logits).
    pub eta: Vec<Vec<f64>>,
    pub objective: f64,
    /// `f(x*)` at the final iterate.
    pub prob: f64,
    pub valid: bool,
}

impl BaselinePoint {
    /// The point as a concrete counterfactual, categorical levels at the
    /// argmax of `eta`.
    pub fn to_sample(&self, ctx: &ModelContext<'_>) -> CounterfactualSample {
        let v = Values::perturbation_only(&self.delta, &self.eta);
        // Argmax discretization never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        discretize(ctx, &v, self.objective, Discretize::Argmax, &mut rng)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gradient ascent on `log f(x*) - w_prox ‖x* - x‖₂ / (2λ)` over `δ` and
/// the categorical logits, from `n_restarts` random starts (`δ` uniform in
/// [-0.5, 0.5], logits uniform in [-2, 2]). Bounded `δ` coordinates are
/// projected back into their range after each step.
pub fn point_estimate_baseline(ctx: &ModelContext<'_>, config: &BaselineConfig) -> Vec<BaselinePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layout = &ctx.layout;
    let project = |i: usize, d: f64| {
        let f = &layout.cont[i];
        d.max(f.lower.unwrap_or(f64::NEG_INFINITY)).min(f.upper.unwrap_or(f64::INFINITY))
    };
    (0..config.n_restarts)
        .map(|_| {
            let mut delta: Vec<f64> = (0..layout.cont.len())
                .map(|i| project(i, rng.random_range(-0.5..=0.5)))
                .collect();
            let mut logits: Vec<Vec<f64>> = layout
                .cat
                .iter()
                .map(|f| (0..f.n_levels()).map(|_| rng.random_range(-2.0..=2.0)).collect())
                .collect();
            for _ in 0..config.steps {
                let eta: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l)).collect();
                let (_, gd, ge) = ctx.instance_objective(&delta, &eta);
                for (i, d) in delta.iter_mut().enumerate() {
                    *d = project(i, *d + config.step_size * gd[i]);
                }
                for ((l, p), g) in logits.iter_mut().zip(&eta).zip(&ge) {
                    let mean: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                    for ((li, pi), gi) in l.iter_mut().zip(p).zip(g) {
                        *li += config.step_size * pi * (gi - mean);
                    }
                }
            }
            let eta: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l)).collect();
            let (objective, ..) = ctx.instance_objective(&delta, &eta);
            let prob = ctx.classifier.prob(&counterfactual(ctx, &delta, &eta));
            BaselinePoint { delta, eta, objective, prob, valid: prob > 0.5 }
        })
        .collect()
}

fn counterfactual(ctx: &ModelContext<'_>, delta: &[f64], eta: &[Vec<f64>]) -> Vec<f64> {
    let mut xs = ctx.x.clone();
    for (f, d) in ctx.layout.cont.iter().zip(delta) {
        xs[f.col] += d;
    }
    for (f, p) in ctx.layout.cat.iter().zip(eta) {
        xs[f.col..f.col + f.n_levels()].copy_from_slice(p);
    }
    xs
}
