use recourse_core::classifier::MlpClassifier;
use recourse_core::data::{FeatureSchema, FeatureSpec, LabelSpec, Normalizer};
use recourse_core::model::{ModelContext, PriorConfig};
use recourse_core::sampler::{point_estimate_baseline, BaselineConfig};

fn one_feature() -> FeatureSchema {
    FeatureSchema::new(vec![FeatureSpec::continuous("x", Some(0.0), Some(1.0))], None, LabelSpec::default()).unwrap()
}

/// `f(x) = σ(w2 tanh(w1 x) + b2)` on a single input.
fn toy_classifier(schema: &FeatureSchema, w1: f64, w2: f64, b2: f64) -> MlpClassifier {
    let mut clf = MlpClassifier::zeros(1, 1, &schema.hash(), Normalizer { ranges: vec![(0.0, 1.0)] });
    clf.w1[0] = w1;
    clf.w2[0] = w2;
    clf.b2 = b2;
    clf
}

#[test]
fn concave_objective_has_one_optimum() {
    let schema = one_feature();
    // Nearly logistic in x over the region the optimizer visits.
    let clf = toy_classifier(&schema, 0.1, 20.0, -1.0);
    let ctx = ModelContext::new(&schema, &clf, &PriorConfig::default(), &[0.0], None).unwrap();
    let points = point_estimate_baseline(&ctx, &BaselineConfig { seed: 4, ..BaselineConfig::default() });
    assert_eq!(points.len(), 10);
    let d: Vec<f64> = points.iter().map(|p| p.delta[0]).collect();
    let spread = d.iter().cloned().fold(f64::MIN, f64::max) - d.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 1e-3, "restarts disagree: {d:?}");
    assert!(points.iter().all(|p| p.valid && p.prob > 0.5));
}

#[test]
fn single_restart_gives_one_point() {
    let schema = one_feature();
    let clf = toy_classifier(&schema, 0.1, 20.0, -1.0);
    let ctx = ModelContext::new(&schema, &clf, &PriorConfig::default(), &[0.2], None).unwrap();
    let points = point_estimate_baseline(&ctx, &BaselineConfig { n_restarts: 1, ..BaselineConfig::default() });
    assert_eq!(points.len(), 1);
}

#[test]
fn constant_classifier_shrinks_to_instance() {
    let schema = one_feature();
    let clf = toy_classifier(&schema, 0.0, 0.0, 0.0);
    let ctx = ModelContext::new(&schema, &clf, &PriorConfig::default(), &[0.5], None).unwrap();
    let cfg = BaselineConfig { n_restarts: 20, seed: 1, ..BaselineConfig::default() };
    for p in point_estimate_baseline(&ctx, &cfg) {
        // Each step moves by step_size * w_prox / (2 lambda) toward zero.
        assert!(p.delta[0].abs() <= 0.05 / 1.4 + 1e-12, "{}", p.delta[0]);
        assert!(!p.valid);
    }
}

#[test]
fn bounded_delta_stays_in_range() {
    let schema = one_feature();
    let clf = toy_classifier(&schema, 0.1, -20.0, -1.0);
    let mut prior = PriorConfig::default();
    prior.features.insert("x".into(), recourse_core::model::FeaturePrior { lower: Some(0.0), ..Default::default() });
    let ctx = ModelContext::new(&schema, &clf, &prior, &[0.5], None).unwrap();
    for p in point_estimate_baseline(&ctx, &BaselineConfig::default()) {
        assert!(p.delta[0] >= 0.0);
    }
}
