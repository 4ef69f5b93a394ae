mod common;

use common::{fd_grad, max_rel_err, synthetic_fixture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recourse_core::model::{CausalEdge, FeaturePrior, Hierarchy, ModelContext, PriorConfig};

fn prior(levels: Hierarchy, constrained: bool) -> PriorConfig {
    let mut p = PriorConfig { levels, subsample_pooled: 16, subsample_group: 8, ..PriorConfig::default() };
    if constrained {
        p.features.insert("c0".into(), FeaturePrior { lower: Some(0.0), ..Default::default() });
        p.features.insert(
            "c1".into(),
            FeaturePrior { lower: Some(-0.3), upper: Some(0.4), ..Default::default() },
        );
        p.features.insert(
            "k1".into(),
            FeaturePrior { mass: [("a".to_string(), 0.5)].into(), ..Default::default() },
        );
        p.edges.push(CausalEdge {
            parent: "c0".into(),
            child: "c1".into(),
            slope: -0.8,
            intercept: 0.05,
            sd: 0.2,
        });
    }
    p
}

#[test]
fn posterior_gradient_matches_finite_differences() {
    let fx = synthetic_fixture(3);
    let x = fx.data.encoded[fx.data.test_idx[0]].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for levels in [Hierarchy::Flat, Hierarchy::TwoLevel, Hierarchy::ThreeLevel] {
        for constrained in [false, true] {
            let p = prior(levels, constrained);
            let ctx = ModelContext::new(&fx.data.schema, &fx.clf, &p, &x, Some(&fx.parts)).unwrap();
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let u: Vec<f64> = (0..ctx.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut g = vec![0.0; ctx.dim()];
                ctx.log_posterior_and_grad(&u, &mut g).unwrap();
                let fd = fd_grad(|q| ctx.log_posterior(q).unwrap(), &u, 1e-5);
                worst = worst.max(max_rel_err(&g, &fd));
            }
            assert!(worst <= 1e-4, "{levels:?} constrained={constrained}: {worst:e}");
        }
    }
}

#[test]
fn origin_is_finite_under_default_priors() {
    let fx = synthetic_fixture(4);
    let x = &fx.data.encoded[0];
    for levels in [Hierarchy::Flat, Hierarchy::TwoLevel, Hierarchy::ThreeLevel] {
        let p = PriorConfig { levels, ..PriorConfig::default() };
        let ctx = ModelContext::new(&fx.data.schema, &fx.clf, &p, x, Some(&fx.parts)).unwrap();
        assert!(ctx.log_posterior(&vec![0.0; ctx.dim()]).unwrap().is_finite());
    }
}
