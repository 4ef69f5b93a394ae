//! Prior recovery: sample the flat model with every likelihood term
//! switched off and compare draw moments with analytic prior moments.

use recourse_core::classifier::MlpClassifier;
use recourse_core::data::{generate_synthetic, SyntheticSpec};
use recourse_core::diagnostics::ess;
use recourse_core::explain::{explain, ExplainSetup};
use recourse_core::model::{FeaturePrior, GammaPrior, Hierarchy, InvGammaPrior, PriorConfig};
use recourse_core::sampler::{Init, NutsConfig};
use statrs::distribution::{Continuous, Gamma};

const SIGMA: InvGammaPrior = InvGammaPrior { shape: 6.0, scale: 5.0 };
const ALPHA: GammaPrior = GammaPrior { shape: 4.0, rate: 2.0 };

#[derive(Debug)]
pub struct MomentCheck {
    pub name: String,
    pub estimate: f64,
    pub expected: f64,
    pub mcse: f64,
}

impl MomentCheck {
    /// Error in Monte-Carlo standard errors.
    pub fn z(&self) -> f64 {
        (self.estimate - self.expected).abs() / self.mcse
    }
}

/// `E[1 / (α M + 1)]` under the α prior, by the trapezoid rule.
fn inv_concentration(m: f64) -> f64 {
    let g = Gamma::new(ALPHA.shape, ALPHA.rate).unwrap();
    let (hi, n) = (60.0, 200_000);
    let h = hi / n as f64;
    (0..=n)
        .map(|i| {
            let a = i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * g.pdf(a) / (a * m + 1.0)
        })
        .sum::<f64>()
        * h
}

fn moment(name: String, chains: &[Vec<f64>], expected: f64) -> MomentCheck {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let ess = ess(chains).unwrap().value;
    MomentCheck { name, estimate: mean, expected, mcse: sd / ess.sqrt() }
}

/// First and second moments of every `δ` and `η′` entry.
pub fn prior_recovery(seed: u64) -> Vec<MomentCheck> {
    let data = generate_synthetic(&SyntheticSpec::default(), 0).unwrap();
    let schema = &data.schema;
    // Zero weights give a constant classifier output.
    let clf = MlpClassifier::zeros(schema.width(), 4, &schema.hash(), data.normalizer.clone());
    let mass = [("a".to_string(), 2.0)].into();
    let prior = PriorConfig {
        levels: Hierarchy::Flat,
        sigma: SIGMA,
        alpha: ALPHA,
        w_prox: 0.0,
        features: [("k0".to_string(), FeaturePrior { mass, ..Default::default() })].into(),
        ..PriorConfig::default()
    };
    let nuts = NutsConfig { burn_in: 1000, n_samples: 2000, n_chains: 4, seed, ..NutsConfig::default() };
    let setup = ExplainSetup {
        schema,
        classifier: &clf,
        prior: &prior,
        partition: None,
        nuts: &nuts,
        init: Init::default(),
        level: 0.9,
    };
    let e = explain(&setup, &data.encoded[data.test_idx[0]]).unwrap();
    let second = SIGMA.scale * SIGMA.scale / ((SIGMA.shape - 1.0) * (SIGMA.shape - 2.0));

    let mut out = Vec::new();
    for &i in &e.perturbation_idx {
        let name = &e.param_names[i];
        let draws = e.param(i);
        let sq: Vec<Vec<f64>> = draws.iter().map(|c| c.iter().map(|v| v * v).collect()).collect();
        let (m1, m2) = if name.starts_with("delta") {
            (0.0, second)
        } else {
            let feature = if name.contains("k0=") { "k0" } else { "k1" };
            let masses: Vec<f64> = if feature == "k0" { vec![2.0, 1.0, 1.0] } else { vec![1.0; 3] };
            let total: f64 = masses.iter().sum();
            let level = name.rsplit('=').next().unwrap().trim_end_matches(']');
            let p = masses[(level.as_bytes()[0] - b'a') as usize] / total;
            (p, p * p + p * (1.0 - p) * inv_concentration(total))
        };
        out.push(moment(format!("E[{name}]"), &draws, m1));
        out.push(moment(format!("E[{name}^2]"), &sq, m2));
    }
    out
}
