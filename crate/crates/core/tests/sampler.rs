use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use recourse_core::sampler::{leapfrog, run_chain, run_chains, Init, MassMatrix, NutsConfig, SamplerError, Target};

struct Normal {
    dim: usize,
    sd: f64,
}

impl Target for Normal {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let s2 = self.sd * self.sd;
        let mut lp = 0.0;
        for (g, x) in grad.iter_mut().zip(q) {
            *g = -x / s2;
            lp -= 0.5 * x * x / s2;
        }
        lp
    }
}

/// Bivariate normal with unit variances and correlation `rho`.
struct Correlated {
    rho: f64,
}

impl Target for Correlated {
    fn dim(&self) -> usize {
        2
    }
    fn log_density_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let c = 1.0 / (1.0 - self.rho * self.rho);
        grad[0] = -c * (q[0] - self.rho * q[1]);
        grad[1] = -c * (q[1] - self.rho * q[0]);
        -0.5 * c * (q[0] * q[0] - 2.0 * self.rho * q[0] * q[1] + q[1] * q[1])
    }
}

struct Flat;

impl Target for Flat {
    fn dim(&self) -> usize {
        1
    }
    fn log_density_and_grad(&self, _q: &[f64], grad: &mut [f64]) -> f64 {
        grad[0] = 0.0;
        0.0
    }
}

fn config(burn_in: usize, n_samples: usize, seed: u64) -> NutsConfig {
    NutsConfig { burn_in, n_samples, seed, ..NutsConfig::default() }
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn leapfrog_hand_example() {
    let t = Normal { dim: 1, sd: 1.0 };
    let (mut q, mut p, mut g) = (vec![1.0], vec![0.0], vec![-1.0]);
    leapfrog(&t, &mut q, &mut p, &mut g, 0.1, &[1.0]);
    assert!((q[0] - 0.995).abs() < 1e-15);
    assert!((p[0] + 0.09975).abs() < 1e-15);
}

#[test]
fn leapfrog_is_reversible() {
    let t = Normal { dim: 3, sd: 0.7 };
    let q0 = vec![0.3, -1.2, 2.0];
    let p0 = vec![0.5, 0.1, -0.4];
    let mut g = vec![0.0; 3];
    t.log_density_and_grad(&q0, &mut g);
    let (mut q, mut p) = (q0.clone(), p0.clone());
    for _ in 0..10 {
        leapfrog(&t, &mut q, &mut p, &mut g, 0.05, &[1.0; 3]);
    }
    p.iter_mut().for_each(|v| *v = -*v);
    for _ in 0..10 {
        leapfrog(&t, &mut q, &mut p, &mut g, 0.05, &[1.0; 3]);
    }
    for i in 0..3 {
        assert!((q[i] - q0[i]).abs() < 1e-12);
        assert!((p[i] + p0[i]).abs() < 1e-12);
    }
}

#[test]
fn zero_gradient_drifts() {
    let (mut q, mut p, mut g) = (vec![0.4], vec![1.5], vec![0.0]);
    leapfrog(&Flat, &mut q, &mut p, &mut g, 0.2, &[1.0]);
    assert!((q[0] - 0.7).abs() < 1e-15);
    assert_eq!(p[0], 1.5);
}

#[test]
fn energy_error_is_second_order() {
    let t = Normal { dim: 5, sd: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mean_dh = |eps: f64, rng: &mut ChaCha8Rng| {
        let mut total = 0.0;
        for _ in 0..200 {
            let mut q: Vec<f64> = (0..5).map(|_| StandardNormal.sample(rng)).collect();
            let mut p: Vec<f64> = (0..5).map(|_| StandardNormal.sample(rng)).collect();
            let mut g = vec![0.0; 5];
            let h = |q: &[f64], p: &[f64]| 0.5 * q.iter().chain(p).map(|v| v * v).sum::<f64>();
            t.log_density_and_grad(&q, &mut g);
            let h0 = h(&q, &p);
            let steps = (1.0 / eps).round() as usize;
            for _ in 0..steps {
                leapfrog(&t, &mut q, &mut p, &mut g, eps, &[1.0; 5]);
            }
            total += (h(&q, &p) - h0).abs();
        }
        total / 200.0
    };
    let coarse = mean_dh(0.2, &mut rng);
    let fine = mean_dh(0.1, &mut rng);
    assert!(coarse / fine >= 3.0, "{coarse} / {fine}");
}

#[test]
fn ten_dimensional_normal_moments() {
    let t = Normal { dim: 10, sd: 1.0 };
    let batch = run_chains(&config(1000, 1000, 11), &t, &Init::default()).unwrap();
    assert_eq!(batch.chains.len(), 4);
    for i in 0..10 {
        let xs: Vec<f64> = batch.chains.iter().flat_map(|c| c.draws.iter().map(move |d| d[i])).collect();
        let (m, s) = moments(&xs);
        assert!(m.abs() <= 0.05, "coordinate {i}: mean {m}");
        assert!((0.9..=1.1).contains(&s), "coordinate {i}: sd {s}");
    }
    for c in &batch.chains {
        let a = c.mean_accept();
        assert!((0.7..=0.9).contains(&a), "chain {}: acceptance {a}", c.id);
    }
}

#[test]
fn correlated_normal_recovers_correlation() {
    let batch = run_chains(&config(1000, 1000, 5), &Correlated { rho: 0.9 }, &Init::default()).unwrap();
    let draws: Vec<&Vec<f64>> = batch.chains.iter().flat_map(|c| &c.draws).collect();
    let a: Vec<f64> = draws.iter().map(|d| d[0]).collect();
    let b: Vec<f64> = draws.iter().map(|d| d[1]).collect();
    let (ma, sa) = moments(&a);
    let (mb, sb) = moments(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    let r = cov / (sa * sb);
    assert!((r - 0.9).abs() <= 0.05, "correlation {r}");
}

#[test]
fn depth_one_still_mixes() {
    let cfg = NutsConfig { max_depth: 1, ..config(1000, 2000, 3) };
    let batch = run_chains(&cfg, &Normal { dim: 1, sd: 1.0 }, &Init::default()).unwrap();
    assert!(batch.chains.iter().all(|c| c.depth.iter().all(|&d| d <= 1)));
    let xs: Vec<f64> = batch.chains.iter().flat_map(|c| c.draws.iter().map(|d| d[0])).collect();
    assert!(moments(&xs).0.abs() <= 0.1);
}

#[test]
fn diagonal_mass_adapts_to_scales() {
    struct Scaled;
    impl Target for Scaled {
        fn dim(&self) -> usize {
            2
        }
        fn log_density_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = -q[0] / 100.0;
            grad[1] = -q[1] / 0.01;
            -0.5 * (q[0] * q[0] / 100.0 + q[1] * q[1] / 0.01)
        }
    }
    let cfg = NutsConfig { mass: MassMatrix::Diagonal, ..config(1000, 500, 2) };
    let chain = run_chain(&cfg, &Scaled, &Init::default(), 0).unwrap();
    // Inverse mass approximates the target variances (100 and 0.01).
    assert!(chain.inv_mass[0] / chain.inv_mass[1] > 100.0);
}

#[test]
fn pathological_target_fails_adaptation() {
    // The adapted step tracks the target scale, so only scales below the
    // 1e-10 floor trip the error.
    let t = Normal { dim: 1, sd: 1e-12 };
    let err = run_chain(&config(200, 10, 1), &t, &Init::default(), 0).unwrap_err();
    assert_eq!(err, SamplerError::AdaptationDiverged { chain: 0 });
    assert!(matches!(run_chains(&config(200, 10, 1), &t, &Init::default()), Err(SamplerError::AllChainsDiverged(_))));
}

#[test]
fn tiny_scale_terminates() {
    let chain = run_chain(&config(200, 10, 1), &Normal { dim: 1, sd: 1e-8 }, &Init::default(), 0).unwrap();
    assert!(chain.step_size < 1e-6);
}

#[test]
fn seeds_control_draws() {
    let t = Normal { dim: 2, sd: 1.0 };
    let a = run_chains(&config(100, 50, 9), &t, &Init::default()).unwrap();
    let b = run_chains(&NutsConfig { threads: Some(1), ..config(100, 50, 9) }, &t, &Init::default()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.chains[0].draws, a.chains[1].draws);
    let c = run_chains(&config(100, 50, 10), &t, &Init::default()).unwrap();
    assert_ne!(a.chains[0].draws, c.chains[0].draws);
}

#[test]
fn single_chain_and_config_checks() {
    let t = Normal { dim: 2, sd: 1.0 };
    let batch = run_chains(&NutsConfig { n_chains: 1, ..config(50, 20, 0) }, &t, &Init::default()).unwrap();
    assert_eq!(batch.chains.len(), 1);
    assert_eq!(batch.chains[0].len(), 20);
    for bad in [
        NutsConfig { n_samples: 0, ..NutsConfig::default() },
        NutsConfig { target_accept: 1.0, ..NutsConfig::default() },
        NutsConfig { max_depth: 16, ..NutsConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(SamplerError::InvalidConfig(_))));
    }
}
