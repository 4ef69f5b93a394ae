use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::classifier::MlpClassifier;
use crate::data::{group_of, FeatureSchema, PartitionedData};
use crate::special::{log_normal_mass, LN_SQRT_2PI};

use super::config::{GammaPrior, Hierarchy, InvGammaPrior, PriorConfig};
use super::layout::{Grads, Layout, Simplex, Values};
use super::ModelError;

const NORM_EPS: f64 = 1e-16;

/// Which population likelihood term to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    L1,
    L2(usize),
}

/// Fixed negatives of one level with their cached first-layer activations.
#[derive(Debug, Clone)]
struct LevelData {
    n: usize,
    /// `W1 ỹ + b1` per negative, where `ỹ` has its mutable categorical
    /// blocks zeroed.
    pre0: Vec<f64>,
    /// `ỹ - χ̄⁺` per negative.
    offset: Vec<f64>,
}

/// Everything needed to evaluate the log posterior for one instance.
#[derive(Debug, Clone)]
pub struct ModelContext<'a> {
    pub layout: Layout,
    pub schema: &'a FeatureSchema,
    pub classifier: &'a MlpClassifier,
    pub x: Vec<f64>,
    pub group: usize,
    pub lambda: f64,
    pub w_prox: f64,
    sigma_priors: [InvGammaPrior; 3],
    alpha_prior: GammaPrior,
    /// `x` with mutable categorical blocks zeroed.
    x_base: Vec<f64>,
    l1: Option<LevelData>,
    l2: Vec<LevelData>,
}

impl<'a> ModelContext<'a> {
    /// Build the context for instance `x`. Hierarchical modes need the
    /// partitioned training data for their population likelihood terms.
    pub fn new(
        schema: &'a FeatureSchema,
        classifier: &'a MlpClassifier,
        prior: &PriorConfig,
        x: &[f64],
        partition: Option<&PartitionedData>,
    ) -> Result<Self, ModelError> {
        let width = schema.width();
        if x.len() != width {
            return Err(ModelError::WidthMismatch { expected: width, got: x.len() });
        }
        if classifier.width != width {
            return Err(ModelError::WidthMismatch { expected: width, got: classifier.width });
        }
        let hierarchy = prior.levels;
        let n_groups = partition.map(|p| p.n_groups()).unwrap_or_else(|| schema.n_groups());
        let layout = Layout::new(schema, prior, hierarchy, n_groups)?;
        let group = group_of(schema, x);

        let mut x_base = x.to_vec();
        for f in &layout.cat {
            x_base[f.col..f.col + f.n_levels()].iter_mut().for_each(|v| *v = 0.0);
        }

        let mut ctx = Self {
            layout,
            schema,
            classifier,
            x: x.to_vec(),
            group,
            lambda: prior.lambda,
            w_prox: prior.w_prox,
            sigma_priors: [prior.sigma_prior(1), prior.sigma_prior(2), prior.sigma_prior(3)],
            alpha_prior: prior.alpha,
            x_base,
            l1: None,
            l2: Vec::new(),
        };
        if hierarchy != Hierarchy::Flat {
            let p = partition.ok_or(ModelError::EmptyLevel)?;
            let mut rng = ChaCha8Rng::seed_from_u64(prior.subsample_seed);
            let pooled = pick(&p.pooled_negatives, prior.subsample_pooled, &mut rng);
            ctx.l1 = Some(ctx.level_data(&pooled, &p.pooled_positive_mean));
            if hierarchy == Hierarchy::ThreeLevel {
                for k in 0..ctx.layout.n_groups {
                    let rows = pick(&p.group_negatives[k], prior.subsample_group, &mut rng);
                    let data = ctx.level_data(&rows, &p.group_positive_means[k]);
                    ctx.l2.push(data);
                }
            }
        }
        Ok(ctx)
    }

    fn level_data(&self, rows: &[&Vec<f64>], target: &[f64]) -> LevelData {
        let width = self.x.len();
        let mut pre0 = Vec::with_capacity(rows.len() * self.classifier.hidden);
        let mut offset = Vec::with_capacity(rows.len() * width);
        for y in rows {
            let mut base = (*y).clone();
            for f in &self.layout.cat {
                base[f.col..f.col + f.n_levels()].iter_mut().for_each(|v| *v = 0.0);
            }
            pre0.extend(self.classifier.pre_activation(&base));
            offset.extend(base.iter().zip(target).map(|(a, b)| a - b));
        }
        LevelData { n: rows.len(), pre0, offset }
    }

    pub fn hierarchy(&self) -> Hierarchy {
        self.layout.hierarchy
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Number of negatives in each level's fixed subsample.
    pub fn level_sizes(&self) -> (usize, Vec<usize>) {
        (self.l1.as_ref().map_or(0, |d| d.n), self.l2.iter().map(|d| d.n).collect())
    }

    /// Perturbation vector in encoded space: continuous shifts on mutable
    /// continuous columns, simplex blocks on mutable categorical columns.
    fn perturbation(&self, shift: &[f64], blocks: &[Simplex]) -> Vec<f64> {
        let mut p = vec![0.0; self.x.len()];
        for (f, s) in self.layout.cont.iter().zip(shift) {
            p[f.col] = *s;
        }
        for (f, b) in self.layout.cat.iter().zip(blocks) {
            p[f.col..f.col + f.n_levels()].copy_from_slice(&b.p);
        }
        p
    }

    fn scatter(&self, dp: &[f64], shift: &mut [f64], blocks: &mut [Vec<f64>]) {
        for (f, g) in self.layout.cont.iter().zip(shift.iter_mut()) {
            *g += dp[f.col];
        }
        for (f, g) in self.layout.cat.iter().zip(blocks.iter_mut()) {
            g.iter_mut().zip(&dp[f.col..f.col + f.n_levels()]).for_each(|(a, b)| *a += b);
        }
    }

    /// `x* = z ⊙ x + Δ`: continuous positions shifted by `δ` (unclamped),
    /// mutable categorical blocks replaced by `η′`, frozen features copied.
    pub fn construct_counterfactual(&self, v: &Values) -> Vec<f64> {
        let p = self.perturbation(&v.delta, &v.eta);
        self.x_base.iter().zip(&p).map(|(a, b)| a + b).collect()
    }

    fn proximity(&self, d: &[f64]) -> f64 {
        (d.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt()
    }

    /// `log f(x*) - w_prox ‖x* - x‖₂ / (2λ)`.
    pub fn log_likelihood_instance(&self, v: &Values) -> f64 {
        let mut g = self.layout.zero_grads();
        self.instance_term(v, &mut g)
    }

    fn instance_term(&self, v: &Values, g: &mut Grads) -> f64 {
        let xs = self.construct_counterfactual(v);
        let mut dp = vec![0.0; xs.len()];
        let logf = self.classifier.log_prob_and_grad(&xs, &mut dp);
        let d: Vec<f64> = xs.iter().zip(&self.x).map(|(a, b)| a - b).collect();
        let r = self.proximity(&d);
        let c = self.w_prox / (2.0 * self.lambda);
        dp.iter_mut().zip(&d).for_each(|(g, di)| *g -= c * di / r);
        self.scatter(&dp, &mut g.delta, &mut g.eta_p);
        logf - c * r
    }

    /// Instance log likelihood as a function of `δ` and of the categorical
    /// probability vectors, with both gradients.
    pub fn instance_objective(&self, delta: &[f64], eta: &[Vec<f64>]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let v = Values::perturbation_only(delta, eta);
        let mut g = self.layout.zero_grads();
        let value = self.instance_term(&v, &mut g);
        (value, g.delta, g.eta_p)
    }

    /// Population likelihood of one level:
    /// `Σ_y [log f(y*) - w_prox ‖y* - χ̄⁺‖₂ / (2λ)]` over the level's fixed
    /// negatives, with `y*` shifted by that level's `μ` and `β`.
    pub fn log_likelihood_level(&self, level: Level, v: &Values) -> Result<f64, ModelError> {
        let (data, lv) = match level {
            Level::L1 => (self.l1.as_ref(), v.l1.as_ref()),
            Level::L2(k) => (self.l2.get(k), v.l2.get(k)),
        };
        let (data, lv) = data.zip(lv).ok_or(ModelError::EmptyLevel)?;
        let p = self.perturbation(&lv.mu, &lv.beta);
        let mut dp = vec![0.0; p.len()];
        Ok(self.level_term(data, &p, &mut dp))
    }

    fn level_term(&self, data: &LevelData, p: &[f64], dp: &mut [f64]) -> f64 {
        if data.n == 0 {
            return 0.0;
        }
        let clf = self.classifier;
        let hidden = clf.hidden;
        let width = p.len();
        let wp = clf.first_layer(p);
        let mut scratch = vec![0.0; hidden];
        let mut dpre = vec![0.0; hidden];
        let mut total = clf.head_batch(&data.pre0[..data.n * hidden], &wp, &mut scratch, &mut dpre);
        let c = self.w_prox / (2.0 * self.lambda);
        if c != 0.0 {
            let mut d = vec![0.0; width];
            for off in data.offset.chunks_exact(width).take(data.n) {
                d.iter_mut().zip(off).zip(p).for_each(|((d, o), q)| *d = o + q);
                let r = self.proximity(&d);
                total -= c * r;
                dp.iter_mut().zip(&d).for_each(|(g, di)| *g -= c * di / r);
            }
        }
        clf.backprop_first_layer(&dpre, dp);
        total
    }

    fn levels_term(&self, v: &Values, g: &mut Grads) -> f64 {
        let mut total = 0.0;
        let pairs = self.l1.iter().zip(v.l1.iter().zip(g.l1.iter_mut()));
        let pairs = pairs.chain(self.l2.iter().zip(v.l2.iter().zip(g.l2.iter_mut())));
        for (data, (lv, lg)) in pairs {
            let p = self.perturbation(&lv.mu, &lv.beta);
            let mut dp = vec![0.0; p.len()];
            total += self.level_term(data, &p, &mut dp);
            self.scatter(&dp, &mut lg.mu, &mut lg.beta_p);
        }
        total
    }

    /// Sum of all prior log-densities (Jacobian terms excluded).
    pub fn log_prior(&self, v: &Values) -> f64 {
        let mut g = self.layout.zero_grads();
        self.prior_term(v, &mut g)
    }

    fn prior_term(&self, v: &Values, g: &mut Grads) -> f64 {
        let lay = &self.layout;
        let mut lp = 0.0;
        let [s1, s2, s3] = self.sigma_priors;
        let ap = self.alpha_prior;

        // Instance level: δ around its parent mean, η′ around its parent simplex.
        for (i, f) in lay.cont.iter().enumerate() {
            let x = v.delta[i];
            if let Some(p) = f.parent {
                let m = p.slope * v.delta[p.index] + p.intercept;
                let (l, dx, dm, _) = normal_lp(x, m, p.sd, f.lower, f.upper);
                lp += l;
                g.delta[i] += dx;
                g.delta[p.index] += p.slope * dm;
            } else {
                let s = v.sigma_l3[i];
                let m = self.delta_mean(v, i);
                let (l, dx, dm, dls) = normal_lp(x, m, s, f.lower, f.upper);
                lp += l;
                g.delta[i] += dx;
                g.log_sigma_l3[i] += dls;
                match lay.hierarchy {
                    Hierarchy::Flat => {}
                    Hierarchy::TwoLevel => g.l1.as_mut().unwrap().mu[i] += dm,
                    Hierarchy::ThreeLevel => g.l2[self.group].mu[i] += dm,
                }
            }
            let (l, d) = inv_gamma_lp(v.sigma_l3[i], s3);
            lp += l;
            g.log_sigma_l3[i] += d;
        }
        for (k, f) in lay.cat.iter().enumerate() {
            let alpha = v.alpha_l3[k];
            let base: &[f64] = match lay.hierarchy {
                Hierarchy::Flat => &f.mass,
                Hierarchy::TwoLevel => &v.l1.as_ref().unwrap().beta[k].p,
                Hierarchy::ThreeLevel => &v.l2[self.group].beta[k].p,
            };
            let (l, da, dbase) = dirichlet_lp(alpha, base, &v.eta[k], &mut g.eta_log[k]);
            lp += l;
            g.log_alpha_l3[k] += da * alpha;
            match lay.hierarchy {
                Hierarchy::Flat => {}
                Hierarchy::TwoLevel => add(&mut g.l1.as_mut().unwrap().beta_p[k], &dbase),
                Hierarchy::ThreeLevel => add(&mut g.l2[self.group].beta_p[k], &dbase),
            }
            let (l, d) = gamma_lp(alpha, ap);
            lp += l;
            g.log_alpha_l3[k] += d;
        }

        // Population level around the fixed hyper-priors.
        if let (Some(l1), Some(g1)) = (v.l1.as_ref(), g.l1.as_mut()) {
            for (i, f) in lay.cont.iter().enumerate() {
                let (l, dx, _, dls) = normal_lp(l1.mu[i], f.mu0, l1.sigma[i], None, None);
                lp += l;
                g1.mu[i] += dx;
                g1.log_sigma[i] += dls;
                let (l, d) = inv_gamma_lp(l1.sigma[i], s1);
                lp += l;
                g1.log_sigma[i] += d;
            }
            for (k, f) in lay.cat.iter().enumerate() {
                let alpha = l1.alpha[k];
                let (l, da, _) = dirichlet_lp(alpha, &f.mass, &l1.beta[k], &mut g1.beta_log[k]);
                lp += l;
                g1.log_alpha[k] += da * alpha;
                let (l, d) = gamma_lp(alpha, ap);
                lp += l;
                g1.log_alpha[k] += d;
            }

            // Subgroup level around the population level.
            for (l2, g2) in v.l2.iter().zip(g.l2.iter_mut()) {
                for i in 0..lay.cont.len() {
                    let (l, dx, dm, dls) = normal_lp(l2.mu[i], l1.mu[i], l2.sigma[i], None, None);
                    lp += l;
                    g2.mu[i] += dx;
                    g1.mu[i] += dm;
                    g2.log_sigma[i] += dls;
                    let (l, d) = inv_gamma_lp(l2.sigma[i], s2);
                    lp += l;
                    g2.log_sigma[i] += d;
                }
                for k in 0..lay.cat.len() {
                    let alpha = l2.alpha[k];
                    let (l, da, dbase) = dirichlet_lp(alpha, &l1.beta[k].p, &l2.beta[k], &mut g2.beta_log[k]);
                    lp += l;
                    g2.log_alpha[k] += da * alpha;
                    add(&mut g1.beta_p[k], &dbase);
                    let (l, d) = gamma_lp(alpha, ap);
                    lp += l;
                    g2.log_alpha[k] += d;
                }
            }
        }
        lp
    }

    /// Prior mean of `δ_i` when it has no causal parent.
    fn delta_mean(&self, v: &Values, i: usize) -> f64 {
        match self.layout.hierarchy {
            Hierarchy::Flat => self.layout.cont[i].mu0,
            Hierarchy::TwoLevel => v.l1.as_ref().unwrap().mu[i],
            Hierarchy::ThreeLevel => v.l2[self.group].mu[i],
        }
    }

    /// Unnormalized log posterior (priors, Jacobian and likelihoods) and its
    /// exact gradient with respect to the unconstrained vector.
    pub fn log_posterior_and_grad(&self, u: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        let (v, logj) = self.layout.transform(u)?;
        let mut g = self.layout.zero_grads();
        let lp = logj + self.prior_term(&v, &mut g) + self.instance_term(&v, &mut g) + self.levels_term(&v, &mut g);
        self.layout.backward(u, &v, &g, grad);
        if !lp.is_finite() || !grad.iter().all(|x| x.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(lp)
    }

    pub fn log_posterior(&self, u: &[f64]) -> Result<f64, ModelError> {
        let mut grad = vec![0.0; self.layout.dim];
        self.log_posterior_and_grad(u, &mut grad)
    }
}

impl crate::sampler::Target for ModelContext<'_> {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        self.log_posterior_and_grad(q, grad).unwrap_or(f64::NAN)
    }
}

fn pick<'v>(rows: &'v [Vec<f64>], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'v Vec<f64>> {
    let n = n.min(rows.len());
    let mut idx = sample(rng, rows.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &rows[i]).collect()
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Normal log density of `x` with mean `m` and sd `s`, optionally truncated
/// to `[lo, hi]`. Returns `(lp, ∂/∂x, ∂/∂m, ∂/∂log s)`.
pub(crate) fn normal_lp(x: f64, m: f64, s: f64, lo: Option<f64>, hi: Option<f64>) -> (f64, f64, f64, f64) {
    let z = (x - m) / s;
    let mut lp = -0.5 * z * z - s.ln() - LN_SQRT_2PI;
    let dx = -z / s;
    let mut dm = z / s;
    let mut dls = z * z - 1.0;
    if lo.is_some() || hi.is_some() {
        let a = lo.map_or(f64::NEG_INFINITY, |l| (l - m) / s);
        let b = hi.map_or(f64::INFINITY, |h| (h - m) / s);
        let (log_z, da, db) = log_normal_mass(a, b);
        lp -= log_z;
        dm += (da + db) / s;
        if a.is_finite() {
            dls += da * a;
        }
        if b.is_finite() {
            dls += db * b;
        }
    }
    (lp, dx, dm, dls)
}

/// Inverse-gamma log density of `σ`; derivative with respect to `log σ`.
pub(crate) fn inv_gamma_lp(sigma: f64, p: InvGammaPrior) -> (f64, f64) {
    let ls = sigma.ln();
    let lp = p.shape * p.scale.ln() - ln_gamma(p.shape) - (p.shape + 1.0) * ls - p.scale / sigma;
    (lp, -(p.shape + 1.0) + p.scale / sigma)
}

/// Gamma (shape, rate) log density of `α`; derivative with respect to
/// `log α`.
pub(crate) fn gamma_lp(alpha: f64, p: GammaPrior) -> (f64, f64) {
    let la = alpha.ln();
    let lp = p.shape * p.rate.ln() - ln_gamma(p.shape) + (p.shape - 1.0) * la - p.rate * alpha;
    (lp, (p.shape - 1.0) - p.rate * alpha)
}

/// `log Dir(η | α·base)`. Adds `∂/∂ log η` into `dlog_eta` and returns
/// `(lp, ∂/∂α, ∂/∂base)`.
pub(crate) fn dirichlet_lp(alpha: f64, base: &[f64], eta: &Simplex, dlog_eta: &mut [f64]) -> (f64, f64, Vec<f64>) {
    let total: f64 = alpha * base.iter().sum::<f64>();
    let psi_total = digamma(total);
    let mut lp = ln_gamma(total);
    let mut dalpha = 0.0;
    let mut dbase = Vec::with_capacity(base.len());
    for ((&b, &le), dl) in base.iter().zip(&eta.logp).zip(dlog_eta.iter_mut()) {
        let a = alpha * b;
        lp += (a - 1.0) * le - ln_gamma(a);
        let da = psi_total - digamma(a) + le;
        dalpha += b * da;
        dbase.push(alpha * da);
        *dl += a - 1.0;
    }
    (lp, dalpha, dbase)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_mode() {
        let (lp, ..) = normal_lp(0.0, 0.0, 1.0, None, None);
        assert!((lp + LN_SQRT_2PI).abs() < 1e-15);
    }

    #[test]
    fn flat_dirichlet_is_log_two() {
        let eta = Simplex::from_probs(&[0.2, 0.5, 0.3]);
        let mut d = [0.0; 3];
        let (lp, ..) = dirichlet_lp(1.0, &[1.0, 1.0, 1.0], &eta, &mut d);
        assert!((lp - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn truncated_normal_integrates_to_one() {
        // Trapezoid rule on [0, 6] for N(0.4, 0.8) truncated at 0.
        let n = 200_000;
        let h = 6.0 / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * normal_lp(x, 0.4, 0.8, Some(0.0), None).0.exp();
        }
        assert!((total * h - 1.0).abs() < 1e-6);
    }
}
