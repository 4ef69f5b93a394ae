mod common;

use common::oracle;
use proptest::prelude::*;
use recourse_core::classifier::MlpClassifier;
use recourse_core::data::Normalizer;
use recourse_core::metrics::{
    diversity, fairness_table, knn_distance, lof, outlier_fraction, proximity, recourse_cost, sparsity, validity,
    validity_from_probs, DistanceContext, MetricsError,
};
use serde::Deserialize;

fn hand_context() -> DistanceContext {
    let rows: Vec<Vec<f64>> = oracle::train_rows().iter().map(oracle::encode).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    DistanceContext::new(&oracle::schema(), &refs)
}

fn encoded_sets() -> Vec<Vec<Vec<f64>>> {
    oracle::sets().iter().map(|s| s.iter().map(oracle::encode).collect()).collect()
}

fn encoded_instances() -> Vec<Vec<f64>> {
    oracle::instances().iter().map(oracle::encode).collect()
}

/// `f(x) > 0.5` exactly when `a > 0.5`.
fn hand_classifier() -> MlpClassifier {
    let schema = oracle::schema();
    let mut clf = MlpClassifier::zeros(schema.width(), 1, &schema.hash(), Normalizer { ranges: vec![(0.0, 1.0); 2] });
    clf.w1[0] = 1.0;
    clf.b1[0] = -0.5;
    clf.w2[0] = 10.0;
    clf
}

#[test]
fn hand_dataset_matches_oracle() {
    let ctx = hand_context();
    let mad = oracle::mad(&oracle::train_rows());
    assert_eq!(ctx.mad, mad.to_vec());
    let (xs, sets) = (encoded_instances(), encoded_sets());
    let (hx, hs) = (oracle::instances(), oracle::sets());

    assert_eq!(validity(&sets, &hand_classifier()), oracle::validity(&hs));
    assert_eq!(proximity(&xs, &sets).unwrap(), oracle::proximity(&hx, &hs));
    assert_eq!(sparsity(&xs, &sets, &ctx).unwrap(), oracle::sparsity(&hx, &hs));
    for i in 0..xs.len() {
        assert_eq!(diversity(&sets[i], &ctx), oracle::diversity(&hs[i], &mad));
        assert_eq!(recourse_cost(&xs[i], &sets[i], &ctx), oracle::cost(&hx[i], &hs[i], &mad));
    }
}

#[test]
fn validity_counts() {
    assert_eq!(validity_from_probs(&[vec![0.9], vec![0.6, 0.1], vec![0.2], vec![0.51]]), 0.75);
    assert_eq!(validity_from_probs(&[vec![0.1], vec![0.5]]), 0.0);
}

#[test]
fn proximity_takes_closest_sample() {
    let x = vec![vec![0.0, 0.0]];
    let sets = vec![vec![vec![2.0, 0.0], vec![0.0, 1.5]]];
    assert_eq!(proximity(&x, &sets).unwrap(), 1.5);
    assert_eq!(proximity(&x, &[vec![vec![0.0, 0.0]]]).unwrap(), 0.0);
    assert_eq!(proximity(&x, &[]), Err(MetricsError::LengthMismatch(1, 0)));
}

#[test]
fn sparsity_uses_deciles() {
    let ctx = hand_context();
    let x = oracle::encode(&oracle::instances()[1]);
    assert_eq!(sparsity(&[x.clone()], &[vec![x.clone()]], &ctx).unwrap(), 0.0);
    let mut same_bin = x.clone();
    same_bin[0] = 0.59;
    assert_eq!(sparsity(&[x.clone()], &[vec![same_bin]], &ctx).unwrap(), 0.0);
    let mut two = x.clone();
    two[0] = 0.95;
    two[2..5].copy_from_slice(&[1.0, 0.0, 0.0]);
    assert_eq!(sparsity(&[x], &[vec![two]], &ctx).unwrap(), 0.5);
}

#[test]
fn diversity_single_categorical_change() {
    let ctx = hand_context();
    let a = oracle::encode(&oracle::instances()[0]);
    let mut b = a.clone();
    b[5..7].copy_from_slice(&[0.0, 1.0]);
    assert_eq!(diversity(&[a.clone(), b], &ctx), 0.25);
    assert_eq!(diversity(&[a.clone(), a.clone(), a], &ctx), 0.0);
}

#[derive(Deserialize)]
struct LofCase {
    k: usize,
    lof: Vec<f64>,
}

#[derive(Deserialize)]
struct LofReference {
    reference: Vec<Vec<f64>>,
    queries: Vec<Vec<f64>>,
    cases: Vec<LofCase>,
}

fn unit_context(d: usize) -> DistanceContext {
    DistanceContext { cont_cols: (0..d).collect(), cat_blocks: vec![], mad: vec![1.0; d], bins: 10 }
}

#[test]
fn lof_matches_reference() {
    let r: LofReference = serde_json::from_str(include_str!("fixtures/lof_reference.json")).unwrap();
    let ctx = unit_context(3);
    for case in &r.cases {
        let got = lof(&r.queries, &r.reference, case.k, &ctx).unwrap();
        for (g, e) in got.iter().zip(&case.lof) {
            assert!((g - e).abs() < 1e-9 * e.max(1.0), "k={}: {g} vs {e}", case.k);
        }
    }
}

#[test]
fn lof_hand_configuration() {
    let ctx = unit_context(1);
    // Tight cluster at 0, 1, 2, 3 and a far point at 20.
    let reference: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
    let scores = lof(&[vec![1.0], vec![20.0]], &reference, 1, &ctx).unwrap();
    // Every reference point has 1-distance 1, so lrd = 1 throughout.
    assert!((scores[0] - 1.0).abs() < 1e-9);
    // reach-dist(20, 3) = 17, lrd = 1/17, LOF = 17.
    assert!((scores[1] - 17.0).abs() < 1e-6);
    assert_eq!(outlier_fraction(&scores, 1.5), 0.5);
    assert_eq!(knn_distance(&[vec![2.0]], &reference, 1, &ctx).unwrap(), vec![0.0]);
    assert_eq!(knn_distance(&[vec![2.0]], &reference, 3, &ctx).unwrap(), vec![2.0 / 3.0]);
    assert_eq!(knn_distance(&[vec![0.0]], &reference, 5, &ctx), Err(MetricsError::KTooLarge { k: 5, n: 4 }));
    assert!(lof(&[vec![0.0]], &reference, 4, &ctx).is_err());
}

#[test]
fn fairness_table_shape() {
    let names = vec!["Male".to_string(), "Female".to_string()];
    let t = fairness_table(&[1.0, 2.0, 1.0, 2.0], &[0, 0, 1, 1], &names);
    assert_eq!(t.groups.len(), 2);
    assert_eq!(t.groups[0].mean, 1.5);
    assert_eq!(t.gaps[0].gap, 0.0);
    assert_eq!(t.deviation, vec![-0.5, 0.5, -0.5, 0.5]);
    let t = fairness_table(&[1.0], &[0], &names);
    assert_eq!(t.groups[1].n, 0);
}

#[test]
fn cost_of_identity_is_zero() {
    let ctx = hand_context();
    let x = encoded_instances()[2].clone();
    assert_eq!(recourse_cost(&x, &[x.clone(), x.clone()], &ctx), 0.0);
}

#[test]
fn constant_feature_mad_is_floored() {
    let rows = vec![oracle::encode(&oracle::instances()[0]); 5];
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let ctx = DistanceContext::new(&oracle::schema(), &refs);
    assert_eq!(ctx.mad, vec![1e-6, 1e-6]);
    let d = diversity(&encoded_sets()[0], &ctx);
    assert!(d.is_finite());
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    (0.0f64..1.0, 0.0f64..1.0, 0usize..3, 0usize..2)
        .prop_map(|(a, b, k, m)| oracle::encode(&oracle::Point { cont: [a, b], cat: [k, m] }))
}

proptest! {
    #[test]
    fn diversity_is_permutation_invariant(mut set in prop::collection::vec(point(), 2..8), seed in 0u64..100) {
        let ctx = hand_context();
        let d0 = diversity(&set, &ctx);
        let n = set.len();
        set.rotate_left((seed as usize) % n);
        set.swap(0, n - 1);
        prop_assert!((diversity(&set, &ctx) - d0).abs() < 1e-12);
        prop_assert!(d0 >= 0.0);
    }

    #[test]
    fn validity_is_monotone(probs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..5), 1..6), extra in 0.0f64..1.0, at in 0usize..6) {
        let before = validity_from_probs(&probs);
        let mut more = probs.clone();
        let i = at % more.len();
        more[i].push(extra);
        prop_assert!(validity_from_probs(&more) >= before);
    }
}
