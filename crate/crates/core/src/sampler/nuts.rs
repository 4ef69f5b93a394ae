use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Target;

/// Energy error above which a trajectory is flagged divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

/// Phase-space point with cached log density and gradient.
#[derive(Debug, Clone)]
pub(crate) struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl State {
    pub fn new<T: Target + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.log_density_and_grad(&q, &mut grad);
        Self { p: vec![0.0; q.len()], q, grad, logp }
    }

    fn kinetic(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self.p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
    }

    /// `H = -log π(q) + ½ pᵀ M⁻¹ p`; non-finite log densities give `+∞`.
    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        let h = -self.logp + self.kinetic(inv_mass);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }
}

/// One leapfrog step: half kick, drift, half kick. Updates `q`, `p` and
/// `grad` in place and returns the new log density.
pub fn leapfrog<T: Target + ?Sized>(
    target: &T,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
    inv_mass: &[f64],
) -> f64 {
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi += 0.5 * eps * gi;
    }
    for ((qi, pi), mi) in q.iter_mut().zip(p.iter()).zip(inv_mass) {
        *qi += eps * mi * pi;
    }
    let logp = target.log_density_and_grad(q, grad);
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi += 0.5 * eps * gi;
    }
    logp
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sharp(p: &[f64], inv_mass: &[f64]) -> Vec<f64> {
    p.iter().zip(inv_mass).map(|(a, b)| a * b).collect()
}

fn add_into(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Generalized no-U-turn condition.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Outcome of one NUTS transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub accept_stat: f64,
    pub divergent: bool,
    pub depth: u32,
    pub n_leapfrog: u32,
    pub energy: f64,
}

struct Tree<'a, T: ?Sized, R> {
    target: &'a T,
    rng: &'a mut R,
    inv_mass: &'a [f64],
    eps: f64,
    h0: f64,
    n_leapfrog: u32,
    sum_metro: f64,
    divergent: bool,
}

/// Ends of a subtree: momenta and sharp momenta at both ends.
struct Ends {
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    sharp_beg: Vec<f64>,
    sharp_end: Vec<f64>,
}

impl<T: Target + ?Sized, R: Rng> Tree<'_, T, R> {
    /// Build a subtree of `2^depth` leapfrog steps in direction `sign`
    /// starting from `z`. Returns validity; fills the proposal, the ends,
    /// the momentum sum `rho` and the subtree log weight.
    fn build(
        &mut self,
        depth: u32,
        z: &mut State,
        sign: f64,
        propose: &mut State,
        rho: &mut [f64],
        log_w: &mut f64,
    ) -> (bool, Ends) {
        if depth == 0 {
            let logp = leapfrog(self.target, &mut z.q, &mut z.p, &mut z.grad, sign * self.eps, self.inv_mass);
            z.logp = logp;
            self.n_leapfrog += 1;
            let h = z.hamiltonian(self.inv_mass);
            if h - self.h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_w = log_sum_exp(*log_w, self.h0 - h);
            self.sum_metro += if self.h0 - h > 0.0 { 1.0 } else { (self.h0 - h).exp() };
            propose.clone_from(z);
            add_into(rho, &z.p);
            let s = sharp(&z.p, self.inv_mass);
            let ends = Ends { p_beg: z.p.clone(), p_end: z.p.clone(), sharp_beg: s.clone(), sharp_end: s };
            return (!self.divergent, ends);
        }

        let n = z.q.len();
        let mut log_w_init = f64::NEG_INFINITY;
        let mut rho_init = vec![0.0; n];
        let (ok, init) = self.build(depth - 1, z, sign, propose, &mut rho_init, &mut log_w_init);
        if !ok {
            return (false, init);
        }
        let mut propose_final = z.clone();
        let mut log_w_final = f64::NEG_INFINITY;
        let mut rho_final = vec![0.0; n];
        let (ok, fin) = self.build(depth - 1, z, sign, &mut propose_final, &mut rho_final, &mut log_w_final);
        if !ok {
            return (false, fin);
        }

        // Multinomial sample within the subtree.
        let log_w_sub = log_sum_exp(log_w_init, log_w_final);
        *log_w = log_sum_exp(*log_w, log_w_sub);
        if log_w_final > log_w_sub || self.rng.random::<f64>() < (log_w_final - log_w_sub).exp() {
            std::mem::swap(propose, &mut propose_final);
        }

        let rho_sub = sum(&rho_init, &rho_final);
        add_into(rho, &rho_sub);
        let mut keep = no_u_turn(&init.sharp_beg, &fin.sharp_end, &rho_sub);
        keep &= no_u_turn(&init.sharp_beg, &fin.sharp_beg, &sum(&rho_init, &fin.p_beg));
        keep &= no_u_turn(&init.sharp_end, &fin.sharp_end, &sum(&rho_final, &init.p_end));
        let ends = Ends { p_beg: init.p_beg, p_end: fin.p_end, sharp_beg: init.sharp_beg, sharp_end: fin.sharp_end };
        (keep, ends)
    }
}

/// One NUTS transition from `state` (multinomial sampling, generalized
/// no-U-turn criterion, progressive sampling biased toward the newest
/// subtree). `state` is replaced by the selected point.
pub fn nuts_transition<T: Target + ?Sized, R: Rng>(
    target: &T,
    state: &mut State,
    eps: f64,
    inv_mass: &[f64],
    max_depth: u32,
    rng: &mut R,
) -> Transition {
    let n = state.q.len();
    for (p, m) in state.p.iter_mut().zip(inv_mass) {
        let z: f64 = StandardNormal.sample(rng);
        *p = z / m.sqrt();
    }
    let h0 = state.hamiltonian(inv_mass);

    let mut z_fwd = state.clone();
    let mut z_bck = state.clone();
    let mut sample = state.clone();
    let mut propose = state.clone();

    let s0 = sharp(&state.p, inv_mass);
    let mut p_fwd_fwd = state.p.clone();
    let mut p_fwd_bck = state.p.clone();
    let mut p_bck_fwd = state.p.clone();
    let mut p_bck_bck = state.p.clone();
    let mut sharp_fwd_fwd = s0.clone();
    let mut sharp_fwd_bck = s0.clone();
    let mut sharp_bck_fwd = s0.clone();
    let mut sharp_bck_bck = s0;
    let mut rho = state.p.clone();
    let mut log_w = 0.0;
    let mut depth = 0;

    let mut tree = Tree { target, rng, inv_mass, eps, h0, n_leapfrog: 0, sum_metro: 0.0, divergent: false };

    while depth < max_depth {
        let mut rho_fwd = vec![0.0; n];
        let mut rho_bck = vec![0.0; n];
        let mut log_w_sub = f64::NEG_INFINITY;
        let forward = tree.rng.random::<f64>() > 0.5;
        let valid = if forward {
            // The existing trajectory becomes the backward subtree.
            rho_bck.copy_from_slice(&rho);
            p_bck_fwd.clone_from(&p_fwd_fwd);
            sharp_bck_fwd.clone_from(&sharp_fwd_fwd);
            let (ok, e) = tree.build(depth, &mut z_fwd, 1.0, &mut propose, &mut rho_fwd, &mut log_w_sub);
            (sharp_fwd_bck, sharp_fwd_fwd, p_fwd_bck, p_fwd_fwd) = (e.sharp_beg, e.sharp_end, e.p_beg, e.p_end);
            ok
        } else {
            rho_fwd.copy_from_slice(&rho);
            p_fwd_bck.clone_from(&p_bck_bck);
            sharp_fwd_bck.clone_from(&sharp_bck_bck);
            let (ok, e) = tree.build(depth, &mut z_bck, -1.0, &mut propose, &mut rho_bck, &mut log_w_sub);
            (sharp_bck_fwd, sharp_bck_bck, p_bck_fwd, p_bck_bck) = (e.sharp_beg, e.sharp_end, e.p_beg, e.p_end);
            ok
        };
        if !valid {
            break;
        }
        depth += 1;

        // Progressive sampling biased toward the new subtree.
        if log_w_sub > log_w || tree.rng.random::<f64>() < (log_w_sub - log_w).exp() {
            sample.clone_from(&propose);
        }
        log_w = log_sum_exp(log_w, log_w_sub);

        rho = sum(&rho_bck, &rho_fwd);
        let mut keep = no_u_turn(&sharp_bck_bck, &sharp_fwd_fwd, &rho);
        keep &= no_u_turn(&sharp_bck_bck, &sharp_fwd_bck, &sum(&rho_bck, &p_fwd_bck));
        keep &= no_u_turn(&sharp_bck_fwd, &sharp_fwd_fwd, &sum(&rho_fwd, &p_bck_fwd));
        if !keep {
            break;
        }
    }

    let transition = Transition {
        accept_stat: if tree.n_leapfrog > 0 { tree.sum_metro / tree.n_leapfrog as f64 } else { 0.0 },
        divergent: tree.divergent,
        depth,
        n_leapfrog: tree.n_leapfrog,
        energy: sample.hamiltonian(inv_mass),
    };
    *state = sample;
    transition
}

/// Dual-averaging step-size adaptation.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, target }
    }

    /// Feed one acceptance statistic; returns the next step size.
    pub fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = if accept.is_nan() { 0.0 } else { accept.min(1.0) };
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    /// Step size to freeze after warm-up.
    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running per-coordinate variance (Welford).
#[derive(Debug, Clone)]
pub(crate) struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = xi - *m;
            *m += d / self.n;
            *s += d * (xi - *m);
        }
    }

    /// Variance shrunk toward 1e-3 for small windows.
    pub fn regularized_variance(&self) -> Option<Vec<f64>> {
        if self.n < 3.0 {
            return None;
        }
        let n = self.n;
        Some(self.m2.iter().map(|s| (n / (n + 5.0)) * s / (n - 1.0) + 1e-3 * (5.0 / (n + 5.0))).collect())
    }
}
