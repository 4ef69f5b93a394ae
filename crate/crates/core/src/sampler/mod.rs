//! No-U-Turn Hamiltonian Monte Carlo and a point-estimate baseline.
//!
//! Chains run independently in parallel. Each chain owns a ChaCha8 stream
//! seeded with `master seed + chain index`, so results do not depend on the
//! thread count or on scheduling.

mod baseline;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{point_estimate_baseline, BaselineConfig, BaselinePoint};
pub use nuts::{leapfrog, Transition, MAX_DELTA_H};

use nuts::{nuts_transition, DualAveraging, State, Welford};

/// Log density over an unconstrained real vector. Non-finite return values
/// mark points outside the support; the sampler treats them as divergent.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn log_density_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("chain {chain}: no finite starting point found")]
    NoFiniteInit { chain: usize },
    #[error("chain {chain}: step size fell below 1e-10 during adaptation")]
    AdaptationDiverged { chain: usize },
    #[error("all chains failed: {0}")]
    AllChainsDiverged(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassMatrix {
    #[default]
    Identity,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutsConfig {
    pub burn_in: usize,
    pub n_samples: usize,
    pub n_chains: usize,
    pub target_accept: f64,
    pub max_depth: u32,
    pub step_size: f64,
    pub mass: MassMatrix,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            burn_in: 5000,
            n_samples: 1000,
            n_chains: 4,
            target_accept: 0.8,
            max_depth: 10,
            step_size: 0.1,
            mass: MassMatrix::Identity,
            seed: 0,
            threads: None,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_string()));
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if self.n_chains == 0 {
            return bad("n_chains must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target acceptance must lie in (0, 1)");
        }
        if !(1..=15).contains(&self.max_depth) {
            return bad("max tree depth must lie in [1, 15]");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("initial step size must be positive");
        }
        if self.threads == Some(0) {
            return bad("thread count must be at least 1");
        }
        Ok(())
    }
}

/// Post-warm-up draws of one chain, in unconstrained space.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub id: usize,
    pub seed: u64,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub divergent: Vec<bool>,
    pub accept_stat: Vec<f64>,
    pub depth: Vec<u32>,
    pub n_leapfrog: Vec<u32>,
    pub warmup_divergences: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn divergences(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    pub fn mean_accept(&self) -> f64 {
        self.accept_stat.iter().sum::<f64>() / self.accept_stat.len().max(1) as f64
    }
}

/// Draws from all chains that completed, plus the failures.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub chains: Vec<Chain>,
    pub failed: Vec<SamplerError>,
}

impl SampleBatch {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Chain::len).sum()
    }

    pub fn divergence_rate(&self) -> f64 {
        let div: usize = self.chains.iter().map(Chain::divergences).sum();
        div as f64 / self.n_draws().max(1) as f64
    }

    /// `draws[chain][draw]` of coordinate `i` of a mapped vector.
    pub fn column<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.draws.iter().map(|d| f(d)).collect()).collect()
    }
}

/// How chains pick their first point.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Independent uniform draws in `[-r, r]` per coordinate.
    Uniform(f64),
    Fixed(Vec<f64>),
}

impl Default for Init {
    fn default() -> Self {
        Init::Uniform(2.0)
    }
}

const MAX_INIT_TRIES: usize = 100;
const MIN_STEP: f64 = 1e-10;

/// Run one chain: warm-up with adaptation, then `n_samples` frozen draws.
pub fn run_chain<T: Target + ?Sized>(
    config: &NutsConfig,
    target: &T,
    init: &Init,
    chain: usize,
) -> Result<Chain, SamplerError> {
    config.validate()?;
    let dim = target.dim();
    let seed = config.seed.wrapping_add(chain as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut state = None;
    for _ in 0..MAX_INIT_TRIES {
        let q: Vec<f64> = match init {
            Init::Uniform(r) => (0..dim).map(|_| rng.random_range(-r..=*r)).collect(),
            Init::Fixed(q) => q.clone(),
        };
        let s = State::new(target, q);
        if s.logp.is_finite() && s.grad.iter().all(|g| g.is_finite()) {
            state = Some(s);
            break;
        }
        if matches!(init, Init::Fixed(_)) {
            break;
        }
    }
    let mut state = state.ok_or(SamplerError::NoFiniteInit { chain })?;

    let mut inv_mass = vec![1.0; dim];
    let mut eps = config.step_size;
    let mut da = DualAveraging::new(eps, config.target_accept);
    let burn = config.burn_in;
    let windows = match config.mass {
        MassMatrix::Identity => Vec::new(),
        MassMatrix::Diagonal => adaptation_windows(burn),
    };
    let mut window = windows.iter().peekable();
    let mut welford = Welford::new(dim);
    let mut warmup_divergences = 0;

    for it in 0..burn {
        let t = nuts_transition(target, &mut state, eps, &inv_mass, config.max_depth, &mut rng);
        warmup_divergences += usize::from(t.divergent);
        eps = da.update(t.accept_stat);
        if !(eps >= MIN_STEP) {
            return Err(SamplerError::AdaptationDiverged { chain });
        }
        if let Some(&&(start, end)) = window.peek() {
            if it >= start {
                welford.add(&state.q);
            }
            if it + 1 == end {
                if let Some(var) = welford.regularized_variance() {
                    inv_mass = var;
                    da = DualAveraging::new(eps, config.target_accept);
                }
                welford = Welford::new(dim);
                window.next();
            }
        }
    }
    if burn > 0 {
        eps = da.final_step();
        if !(eps >= MIN_STEP) {
            return Err(SamplerError::AdaptationDiverged { chain });
        }
    }

    let n = config.n_samples;
    let mut out = Chain {
        id: chain,
        seed,
        step_size: eps,
        inv_mass: inv_mass.clone(),
        draws: Vec::with_capacity(n),
        log_density: Vec::with_capacity(n),
        divergent: Vec::with_capacity(n),
        accept_stat: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        n_leapfrog: Vec::with_capacity(n),
        warmup_divergences,
    };
    for _ in 0..n {
        let t = nuts_transition(target, &mut state, eps, &inv_mass, config.max_depth, &mut rng);
        out.draws.push(state.q.clone());
        out.log_density.push(state.logp);
        out.divergent.push(t.divergent);
        out.accept_stat.push(t.accept_stat);
        out.depth.push(t.depth);
        out.n_leapfrog.push(t.n_leapfrog);
    }
    Ok(out)
}

/// Mass-adaptation windows `[start, end)` within a warm-up of length `burn`:
/// a 75-iteration fast buffer, slow windows of 25, 50, 100, ... with the
/// last one stretched to leave a 50-iteration terminal buffer. Short
/// warm-ups use 15% / 75% / 10% instead.
pub fn adaptation_windows(burn: usize) -> Vec<(usize, usize)> {
    let (init, term, base) = if burn < 150 {
        ((burn as f64 * 0.15) as usize, (burn as f64 * 0.1) as usize, 0)
    } else {
        (75, 50, 25)
    };
    let end = burn - term;
    if base == 0 {
        return if end > init { vec![(init, end)] } else { Vec::new() };
    }
    let mut out = Vec::new();
    let (mut start, mut size) = (init, base);
    while start < end {
        let mut stop = start + size;
        if stop + 2 * size > end {
            stop = end;
        }
        out.push((start, stop));
        start = stop;
        size *= 2;
    }
    out
}

/// Run `config.n_chains` chains in parallel. Chains that fail are reported
/// in [`SampleBatch::failed`]; the call errors only if every chain fails.
pub fn run_chains<T: Target + ?Sized>(
    config: &NutsConfig,
    target: &T,
    init: &Init,
) -> Result<SampleBatch, SamplerError> {
    config.validate()?;
    let work = || -> Vec<Result<Chain, SamplerError>> {
        (0..config.n_chains).into_par_iter().map(|c| run_chain(config, target, init, c)).collect()
    };
    let results = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SamplerError::InvalidConfig(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut chains = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(c) => chains.push(c),
            Err(e) => failed.push(e),
        }
    }
    if chains.is_empty() {
        let msg = failed.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(SamplerError::AllChainsDiverged(msg));
    }
    Ok(SampleBatch { chains, failed })
}
