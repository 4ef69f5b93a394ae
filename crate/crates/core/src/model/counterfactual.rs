use rand::Rng;

use crate::data::{decode, FeatureKind, RawRow};

use super::config::Discretize;
use super::density::ModelContext;
use super::layout::Values;

/// One posterior draw turned into a concrete counterfactual.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualSample {
    /// `x* = z ⊙ x + Δ` as used during inference.
    pub x_star: Vec<f64>,
    /// `f(x*)`.
    pub prob: f64,
    /// Level index per categorical feature, in schema order. Frozen features
    /// keep the instance's level.
    pub levels: Vec<usize>,
    /// Discretized encoding: continuous values clamped to [0, 1],
    /// categorical blocks replaced by the smoothed one-hot of the drawn level.
    pub encoded: Vec<f64>,
    /// Classifier output on `encoded`.
    pub prob_discrete: f64,
    pub raw: RawRow,
    pub log_posterior: f64,
}

impl CounterfactualSample {
    pub fn is_valid(&self) -> bool {
        self.prob_discrete > 0.5
    }
}

/// Apply the multinomial step to one draw: each mutable categorical feature
/// gets a level drawn from `η′` (or its argmax), and the result is decoded.
pub fn discretize<R: Rng + ?Sized>(
    ctx: &ModelContext<'_>,
    v: &Values,
    log_posterior: f64,
    mode: Discretize,
    rng: &mut R,
) -> CounterfactualSample {
    let schema = ctx.schema;
    let x_star = ctx.construct_counterfactual(v);
    let prob = ctx.classifier.prob(&x_star);
    let mut encoded = ctx.x.clone();
    for f in &ctx.layout.cont {
        encoded[f.col] = x_star[f.col].clamp(0.0, 1.0);
    }
    for (f, eta) in ctx.layout.cat.iter().zip(&v.eta) {
        let level = match mode {
            Discretize::Argmax => crate::data::argmax(&eta.p),
            Discretize::Sample => draw_level(&eta.p, rng),
        };
        let block = schema.smoothed_one_hot(level, f.n_levels());
        encoded[f.col..f.col + f.n_levels()].copy_from_slice(&block);
    }
    let raw = decode(&encoded, schema, &ctx.classifier.normalizer).expect("width checked");
    let levels = schema
        .features
        .iter()
        .zip(&raw)
        .filter(|(f, _)| matches!(f.kind, FeatureKind::Categorical { .. }))
        .map(|(_, r)| r.as_level().expect("categorical"))
        .collect();
    let prob_discrete = ctx.classifier.prob(&encoded);
    CounterfactualSample { x_star, prob, levels, encoded, prob_discrete, raw, log_posterior }
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn draw_level<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &pi) in p.iter().enumerate() {
        if u < pi {
            return i;
        }
        u -= pi;
    }
    // Rounding left a sliver of mass: return the last level with mass.
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draw_level_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = [0.98, 0.01, 0.01];
        let hits = (0..10_000).filter(|_| draw_level(&p, &mut rng) == 0).count();
        // Binomial sd is 0.0014, so ±0.01 is a wide interval.
        assert!((hits as f64 / 1e4 - 0.98).abs() < 0.01);
    }
}
