use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use recourse_core::diagnostics::{
    ess, ess_bulk_uncapped, rank_histogram, split_rhat, split_rhat_classic, summarize, summarize_scalar, DiagnosticsError,
};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    name: String,
    draws: Vec<Vec<f64>>,
    rhat: Option<f64>,
    rhat_classic: Option<f64>,
    ess: f64,
}

#[derive(Deserialize)]
struct Reference {
    cases: Vec<Case>,
}

fn normal_chains(seed: u64, chains: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..chains).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

fn ar1(seed: u64, phi: f64, chains: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (1.0 - phi * phi).sqrt();
    (0..chains)
        .map(|_| {
            let mut x: f64 = StandardNormal.sample(&mut rng);
            (0..n)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = phi * x + s * e;
                    x
                })
                .collect()
        })
        .collect()
}

#[test]
fn matches_reference_implementation() {
    let text = include_str!("fixtures/diagnostics_reference.json");
    let reference: Reference = serde_json::from_str(text).unwrap();
    for case in &reference.cases {
        match case.rhat {
            Some(r) => {
                let got = split_rhat(&case.draws).unwrap();
                assert!((got.value - r).abs() < 1e-8, "{}: rhat {} vs {}", case.name, got.value, r);
                let classic = split_rhat_classic(&case.draws).unwrap().value;
                assert!((classic - case.rhat_classic.unwrap()).abs() < 1e-8, "{}: classic {}", case.name, classic);
            }
            None => assert!(matches!(split_rhat(&case.draws), Err(DiagnosticsError::InsufficientChains(1)))),
        }
        let got = ess_bulk_uncapped(&case.draws).unwrap();
        assert!((got - case.ess).abs() < 1e-8 * case.ess.max(1.0), "{}: ess {} vs {}", case.name, got, case.ess);
        let total = (case.draws.len() * case.draws[0].len()) as f64;
        assert_eq!(ess(&case.draws).unwrap().value, got.min(total));
    }
}

#[test]
fn iid_chains_converge() {
    let d = normal_chains(1, 4, 1000);
    assert!(split_rhat(&d).unwrap().value < 1.01);
    let e = ess(&d).unwrap().value;
    assert!((3200.0..=4800.0).contains(&e), "{e}");
}

#[test]
fn offset_chain_is_detected() {
    let mut d = normal_chains(2, 4, 1000);
    d[3].iter_mut().for_each(|v| *v += 10.0);
    assert!(split_rhat_classic(&d).unwrap().value > 2.0);
    // Ranks bound the rank-normalized value: one chain of four holding the
    // top quarter of ranks gives about 1.59.
    let r = split_rhat(&d).unwrap().value;
    assert!(r > 1.5 && r < 1.7, "{r}");
}

#[test]
fn autocorrelated_chain_ess() {
    let d = ar1(3, 0.9, 4, 5000);
    let n = 20000.0;
    let expected = n * 0.1 / 1.9;
    let e = ess(&d).unwrap().value;
    assert!(e > expected / 1.5 && e < expected * 1.5, "{e} vs {expected}");
}

#[test]
fn constant_draws_are_flagged() {
    let d = vec![vec![2.5; 50]; 4];
    let r = split_rhat(&d).unwrap();
    assert_eq!(r.value, 1.0);
    assert!(r.degenerate);
    assert!(ess(&d).unwrap().degenerate);
    let s = summarize_scalar("c", &d, 0.9).unwrap();
    assert_eq!(s.sd, 0.0);
    assert_eq!((s.ci_low, s.ci_high), (2.5, 2.5));
}

#[test]
fn shape_errors() {
    assert_eq!(split_rhat(&normal_chains(0, 1, 100)), Err(DiagnosticsError::InsufficientChains(1)));
    assert_eq!(ess(&normal_chains(0, 4, 3)), Err(DiagnosticsError::InsufficientDraws(3)));
    let s = summarize_scalar("short", &normal_chains(0, 4, 3), 0.9).unwrap();
    assert!(s.rhat.is_none() && s.ess.is_none());
    assert_eq!(s.issues.len(), 2);
    assert_eq!(summarize(&["a".into()], &[vec![]], 0.9), Err(DiagnosticsError::EmptyBatch));
}

#[test]
fn rank_histogram_iid_is_uniform() {
    let d = normal_chains(4, 4, 1000);
    // chi-square critical value, 19 degrees of freedom, alpha 0.001
    let critical = 43.82;
    for counts in rank_histogram(&d, 20) {
        let expected = 1000.0 / 20.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < critical, "{chi2}");
    }
}

#[test]
fn stuck_chain_fills_lowest_bins() {
    let mut d = normal_chains(5, 4, 200);
    d[2] = vec![-100.0; 200];
    let h = rank_histogram(&d, 20);
    // 800 draws over 20 bins: 40 per bin, so 200 tied lowest ranks fill bins 0..5.
    assert_eq!(h[2][..5].iter().sum::<usize>(), 200);
}

#[test]
fn small_histogram_counts() {
    let h = rank_histogram(&normal_chains(6, 2, 20), 20);
    assert!(h.iter().all(|c| c.iter().sum::<usize>() == 20));
}

#[test]
fn vector_summaries_follow_names() {
    let draws: Vec<Vec<Vec<f64>>> =
        (0..2).map(|c| (0..10).map(|i| vec![i as f64 + c as f64, -(i as f64)]).collect()).collect();
    let s = summarize(&["a".into(), "b".into()], &draws, 0.5).unwrap();
    assert_eq!(s[0].name, "a");
    assert!((s[0].mean - 5.0).abs() < 1e-12);
    assert!((s[1].mean + 4.5).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rhat_is_rank_invariant(seed in 0u64..1000, a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let d = normal_chains(seed, 3, 40);
        let t: Vec<Vec<f64>> = d.iter().map(|c| c.iter().map(|v| (a * v + b).exp()).collect()).collect();
        let r0 = split_rhat(&d).unwrap().value;
        let r1 = split_rhat(&t).unwrap().value;
        prop_assert!((r0 - r1).abs() < 1e-12);
        prop_assert!((ess(&d).unwrap().value - ess(&t).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn ess_never_exceeds_draws(seed in 0u64..1000, phi in -0.95f64..0.95) {
        let d = ar1(seed, phi, 2, 60);
        prop_assert!(ess(&d).unwrap().value <= 120.0);
    }
}
