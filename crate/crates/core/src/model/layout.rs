use std::collections::{BTreeMap, HashSet};

use crate::data::{validate_edge, FeatureKind, FeatureSchema, Monotone};
use crate::special::{log_sigmoid, sigmoid, softplus};

use super::config::{Hierarchy, PriorConfig};
use super::ModelError;

/// A mutable continuous feature as seen by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ContFeature {
    pub feature: usize,
    pub col: usize,
    pub name: String,
    pub mu0: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub parent: Option<Parent>,
}

/// Causal parent, referenced by its position in [`Layout::cont`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parent {
    pub index: usize,
    pub slope: f64,
    pub intercept: f64,
    pub sd: f64,
}

/// A mutable categorical feature as seen by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CatFeature {
    pub feature: usize,
    pub col: usize,
    pub name: String,
    pub levels: Vec<String>,
    /// Base Dirichlet mass vector.
    pub mass: Vec<f64>,
}

impl CatFeature {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LevelOffsets {
    mu: usize,
    sigma: usize,
    beta: Vec<usize>,
    alpha: usize,
}

/// Which parameter a block of the flat vector holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Delta,
    Eta,
    Sigma(u8),
    Alpha(u8),
    Mu(u8),
    Beta(u8),
}

/// One named block: its coordinates in the unconstrained vector and its
/// entries in the constrained vector returned by [`Layout::constrained`].
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    pub feature: String,
    pub group: Option<usize>,
    pub u_offset: usize,
    pub u_len: usize,
    pub c_offset: usize,
    pub c_len: usize,
}

/// Fixed mapping between named parameters and the flat unconstrained
/// vector. Order: `δ`, `η′` sticks, `log σ³`, `log α³`, then the population
/// level (`μ¹`, `log σ¹`, `β¹` sticks, `log α¹`), then one subgroup level per
/// group.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub hierarchy: Hierarchy,
    pub cont: Vec<ContFeature>,
    pub cat: Vec<CatFeature>,
    /// Subgroup blocks present (0 unless three-level).
    pub n_groups: usize,
    pub group_names: Vec<String>,
    pub dim: usize,
    delta: usize,
    eta: Vec<usize>,
    sigma_l3: usize,
    alpha_l3: usize,
    l1: Option<LevelOffsets>,
    l2: Vec<LevelOffsets>,
    blocks: Vec<Block>,
    c_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    pub p: Vec<f64>,
    pub logp: Vec<f64>,
}

impl Simplex {
    pub fn from_probs(p: &[f64]) -> Self {
        Self { p: p.to_vec(), logp: p.iter().map(|v| v.ln()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelValues {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub beta: Vec<Simplex>,
    pub alpha: Vec<f64>,
}

/// Constrained parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub delta: Vec<f64>,
    pub eta: Vec<Simplex>,
    pub sigma_l3: Vec<f64>,
    pub alpha_l3: Vec<f64>,
    pub l1: Option<LevelValues>,
    pub l2: Vec<LevelValues>,
}

impl Values {
    /// Values carrying only `δ` and `η′`, enough to build `x*`.
    pub fn perturbation_only(delta: &[f64], eta: &[Vec<f64>]) -> Self {
        Self {
            delta: delta.to_vec(),
            eta: eta.iter().map(|p| Simplex { p: p.clone(), logp: Vec::new() }).collect(),
            sigma_l3: Vec::new(),
            alpha_l3: Vec::new(),
            l1: None,
            l2: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LevelGrads {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub beta_p: Vec<Vec<f64>>,
    pub beta_log: Vec<Vec<f64>>,
    pub log_alpha: Vec<f64>,
}

/// Gradients with respect to constrained values (log-values for positive
/// parameters; both value and log-value for simplex entries).
#[derive(Debug, Clone)]
pub(crate) struct Grads {
    pub delta: Vec<f64>,
    pub eta_p: Vec<Vec<f64>>,
    pub eta_log: Vec<Vec<f64>>,
    pub log_sigma_l3: Vec<f64>,
    pub log_alpha_l3: Vec<f64>,
    pub l1: Option<LevelGrads>,
    pub l2: Vec<LevelGrads>,
}

impl Layout {
    /// Resolve the mutable features of `schema` under `prior` and fix the
    /// parameter layout for `hierarchy` with `n_groups` subgroups.
    pub fn new(
        schema: &FeatureSchema,
        prior: &PriorConfig,
        hierarchy: Hierarchy,
        n_groups: usize,
    ) -> Result<Self, ModelError> {
        prior.validate()?;
        let bad = |m: String| ModelError::InvalidConfig(m);
        for name in prior.frozen.iter().chain(prior.features.keys()) {
            if schema.index_of(name).is_none() {
                return Err(bad(format!("unknown feature '{name}' in prior config")));
            }
        }
        let frozen: HashSet<&str> = prior.frozen.iter().map(String::as_str).collect();
        let mut features = schema.features.clone();
        for f in &mut features {
            if frozen.contains(f.name.as_str()) {
                f.mutable = false;
            }
        }
        for name in prior.features.keys() {
            let f = &features[schema.index_of(name).unwrap()];
            if !f.mutable {
                return Err(bad(format!("prior override for frozen feature '{name}'")));
            }
        }

        let mut cont = Vec::new();
        let mut cat = Vec::new();
        for (i, f) in features.iter().enumerate() {
            if !f.mutable {
                continue;
            }
            let over = prior.features.get(&f.name).cloned().unwrap_or_default();
            match &f.kind {
                FeatureKind::Continuous { .. } => {
                    if !over.mass.is_empty() {
                        return Err(bad(format!("'{}': mass applies to categorical features", f.name)));
                    }
                    let (mut lower, mut upper) = (over.lower, over.upper);
                    match f.monotone {
                        Monotone::NonDecreasing if lower.is_none() => lower = Some(0.0),
                        Monotone::NonIncreasing if upper.is_none() => upper = Some(0.0),
                        _ => {}
                    }
                    if let (Some(lo), Some(hi)) = (lower, upper) {
                        if !(lo < hi) {
                            return Err(bad(format!("'{}': empty perturbation range", f.name)));
                        }
                    }
                    cont.push(ContFeature {
                        feature: i,
                        col: schema.offset(i),
                        name: f.name.clone(),
                        mu0: over.mu0.unwrap_or(prior.mu0),
                        lower,
                        upper,
                        parent: None,
                    });
                }
                FeatureKind::Categorical { levels } => {
                    if over.lower.is_some() || over.upper.is_some() || over.mu0.is_some() {
                        return Err(bad(format!("'{}': bounds apply to continuous features", f.name)));
                    }
                    let mut mass = vec![1.0; levels.len()];
                    for (level, &m) in &over.mass {
                        let l = levels.iter().position(|v| v == level).ok_or_else(|| {
                            bad(format!("'{}': unknown level '{level}' in mass", f.name))
                        })?;
                        mass[l] = m;
                    }
                    cat.push(CatFeature {
                        feature: i,
                        col: schema.offset(i),
                        name: f.name.clone(),
                        levels: levels.clone(),
                        mass,
                    });
                }
            }
        }

        let mut edges: BTreeMap<String, (String, f64, f64, f64)> = BTreeMap::new();
        let schema_edges = features.iter().filter_map(|f| {
            f.causal_parent
                .as_ref()
                .map(|e| (e.parent.clone(), f.name.clone(), e.slope, e.intercept, e.sd))
        });
        let config_edges = prior
            .edges
            .iter()
            .map(|e| (e.parent.clone(), e.child.clone(), e.slope, e.intercept, e.sd));
        for (parent, child, slope, intercept, sd) in schema_edges.chain(config_edges) {
            validate_edge(&features, &parent, &child, sd)
                .map_err(|e| bad(e.to_string()))?;
            if edges.insert(child.clone(), (parent, slope, intercept, sd)).is_some() {
                return Err(bad(format!("feature '{child}' has more than one causal parent")));
            }
        }
        for (child, (parent, slope, intercept, sd)) in &edges {
            let index = cont.iter().position(|c| &c.name == parent).expect("validated");
            let c = cont.iter_mut().find(|c| &c.name == child).expect("validated");
            c.parent = Some(Parent { index, slope: *slope, intercept: *intercept, sd: *sd });
        }
        for start in 0..cont.len() {
            let mut seen = HashSet::new();
            let mut at = start;
            while let Some(p) = cont[at].parent {
                if !seen.insert(at) {
                    return Err(bad(format!("causal edges form a cycle through '{}'", cont[at].name)));
                }
                at = p.index;
            }
        }

        if cont.is_empty() && cat.is_empty() {
            return Err(bad("no mutable features to perturb".into()));
        }
        let n_groups = if hierarchy == Hierarchy::ThreeLevel { n_groups.max(1) } else { 0 };
        let group_names = match schema.group_index() {
            Some(_) if n_groups > 0 => schema.group_names(),
            _ => (0..n_groups).map(|g| format!("g{g}")).collect(),
        };
        Ok(Self::assemble(hierarchy, cont, cat, n_groups, group_names))
    }

    fn assemble(
        hierarchy: Hierarchy,
        cont: Vec<ContFeature>,
        cat: Vec<CatFeature>,
        n_groups: usize,
        group_names: Vec<String>,
    ) -> Self {
        let mut blocks = Vec::new();
        let mut u = 0;
        let mut c = 0;
        let mut push = |blocks: &mut Vec<Block>, kind, feature: &str, group, u_len, c_len| {
            blocks.push(Block {
                kind,
                feature: feature.to_string(),
                group,
                u_offset: u,
                u_len,
                c_offset: c,
                c_len,
            });
            u += u_len;
            c += c_len;
            u - u_len
        };

        let mut delta = 0;
        for (i, f) in cont.iter().enumerate() {
            let o = push(&mut blocks, BlockKind::Delta, &f.name, None, 1, 1);
            if i == 0 {
                delta = o;
            }
        }
        let eta = cat
            .iter()
            .map(|f| push(&mut blocks, BlockKind::Eta, &f.name, None, f.n_levels() - 1, f.n_levels()))
            .collect();
        let mut sigma_l3 = 0;
        for (i, f) in cont.iter().enumerate() {
            let o = push(&mut blocks, BlockKind::Sigma(3), &f.name, None, 1, 1);
            if i == 0 {
                sigma_l3 = o;
            }
        }
        let mut alpha_l3 = 0;
        for (i, f) in cat.iter().enumerate() {
            let o = push(&mut blocks, BlockKind::Alpha(3), &f.name, None, 1, 1);
            if i == 0 {
                alpha_l3 = o;
            }
        }
        let mut level = |blocks: &mut Vec<Block>, lv: u8, group: Option<usize>| {
            let mut off = LevelOffsets { mu: 0, sigma: 0, beta: Vec::new(), alpha: 0 };
            for (i, f) in cont.iter().enumerate() {
                let o = push(blocks, BlockKind::Mu(lv), &f.name, group, 1, 1);
                if i == 0 {
                    off.mu = o;
                }
            }
            for (i, f) in cont.iter().enumerate() {
                let o = push(blocks, BlockKind::Sigma(lv), &f.name, group, 1, 1);
                if i == 0 {
                    off.sigma = o;
                }
            }
            for f in &cat {
                off.beta.push(push(blocks, BlockKind::Beta(lv), &f.name, group, f.n_levels() - 1, f.n_levels()));
            }
            for (i, f) in cat.iter().enumerate() {
                let o = push(blocks, BlockKind::Alpha(lv), &f.name, group, 1, 1);
                if i == 0 {
                    off.alpha = o;
                }
            }
            off
        };
        let l1 = (hierarchy != Hierarchy::Flat).then(|| level(&mut blocks, 1, None));
        let l2 = (0..n_groups).map(|g| level(&mut blocks, 2, Some(g))).collect();
        let (dim, c_dim) = blocks.last().map(|b| (b.u_offset + b.u_len, b.c_offset + b.c_len)).unwrap();
        Self {
            hierarchy,
            cont,
            cat,
            n_groups,
            group_names,
            dim,
            delta,
            eta,
            sigma_l3,
            alpha_l3,
            l1,
            l2,
            blocks,
            c_dim,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Length of the constrained vector.
    pub fn constrained_dim(&self) -> usize {
        self.c_dim
    }

    /// Column names of the constrained vector, e.g. `delta[age]`,
    /// `eta[occupation=Sales]`, `mu_l2[age@Male]`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.c_dim);
        for b in &self.blocks {
            let prefix = match b.kind {
                BlockKind::Delta => "delta".to_string(),
                BlockKind::Eta => "eta".to_string(),
                BlockKind::Sigma(l) => format!("sigma_l{l}"),
                BlockKind::Alpha(l) => format!("alpha_l{l}"),
                BlockKind::Mu(l) => format!("mu_l{l}"),
                BlockKind::Beta(l) => format!("beta_l{l}"),
            };
            let suffix = b.group.map(|g| format!("@{}", self.group_names[g])).unwrap_or_default();
            if matches!(b.kind, BlockKind::Eta | BlockKind::Beta(_)) {
                let f = self.cat.iter().find(|f| f.name == b.feature).unwrap();
                for l in &f.levels {
                    names.push(format!("{prefix}[{}={l}{suffix}]", b.feature));
                }
            } else {
                names.push(format!("{prefix}[{}{suffix}]", b.feature));
            }
        }
        names
    }

    /// Indices into the constrained vector of the perturbation (`δ`, `η′`)
    /// entries.
    pub fn perturbation_indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| matches!(b.kind, BlockKind::Delta | BlockKind::Eta))
            .flat_map(|b| b.c_offset..b.c_offset + b.c_len)
            .collect()
    }

    /// Flatten constrained values in [`Layout::param_names`] order.
    pub fn constrained(&self, v: &Values) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.c_dim);
        out.extend(&v.delta);
        v.eta.iter().for_each(|s| out.extend(&s.p));
        out.extend(&v.sigma_l3);
        out.extend(&v.alpha_l3);
        for lv in v.l1.iter().chain(&v.l2) {
            out.extend(&lv.mu);
            out.extend(&lv.sigma);
            lv.beta.iter().for_each(|s| out.extend(&s.p));
            out.extend(&lv.alpha);
        }
        out
    }

    fn delta_forward(&self, i: usize, u: f64) -> (f64, f64) {
        let f = &self.cont[i];
        match (f.lower, f.upper) {
            (None, None) => (u, 0.0),
            (Some(lo), None) => (lo + u.exp(), u),
            (None, Some(hi)) => (hi - u.exp(), u),
            (Some(lo), Some(hi)) => {
                (lo + (hi - lo) * sigmoid(u), (hi - lo).ln() + log_sigmoid(u) + log_sigmoid(-u))
            }
        }
    }

    /// `dδ/du` and `d logJ/du`.
    fn delta_derivs(&self, i: usize, u: f64) -> (f64, f64) {
        let f = &self.cont[i];
        match (f.lower, f.upper) {
            (None, None) => (1.0, 0.0),
            (Some(_), None) => (u.exp(), 1.0),
            (None, Some(_)) => (-u.exp(), 1.0),
            (Some(lo), Some(hi)) => {
                let s = sigmoid(u);
                ((hi - lo) * s * (1.0 - s), 1.0 - 2.0 * s)
            }
        }
    }

    fn delta_inverse(&self, i: usize, d: f64) -> f64 {
        let f = &self.cont[i];
        match (f.lower, f.upper) {
            (None, None) => d,
            (Some(lo), None) => (d - lo).ln(),
            (None, Some(hi)) => (hi - d).ln(),
            (Some(lo), Some(hi)) => {
                let t = (d - lo) / (hi - lo);
                t.ln() - (1.0 - t).ln()
            }
        }
    }

    /// Constrained values and `log |Jacobian|` of the transform.
    pub fn transform(&self, u: &[f64]) -> Result<(Values, f64), ModelError> {
        if u.len() != self.dim {
            return Err(ModelError::WidthMismatch { expected: self.dim, got: u.len() });
        }
        let mut logj = 0.0;
        let nc = self.cont.len();
        let nk = self.cat.len();
        let mut delta = Vec::with_capacity(nc);
        for i in 0..nc {
            let (d, j) = self.delta_forward(i, u[self.delta + i]);
            delta.push(d);
            logj += j;
        }
        let eta = self
            .cat
            .iter()
            .zip(&self.eta)
            .map(|(f, &o)| {
                let (s, j) = stick_forward(&u[o..o + f.n_levels() - 1]);
                logj += j;
                s
            })
            .collect();
        let mut positive = |o: usize, n: usize| -> Vec<f64> {
            logj += u[o..o + n].iter().sum::<f64>();
            u[o..o + n].iter().map(|v| v.exp()).collect()
        };
        let sigma_l3 = positive(self.sigma_l3, nc);
        let alpha_l3 = positive(self.alpha_l3, nk);
        let mut level = |off: &LevelOffsets| -> LevelValues {
            let mu = u[off.mu..off.mu + nc].to_vec();
            let sigma = u[off.sigma..off.sigma + nc].iter().map(|v| v.exp()).collect();
            logj += u[off.sigma..off.sigma + nc].iter().sum::<f64>();
            let beta = self
                .cat
                .iter()
                .zip(&off.beta)
                .map(|(f, &o)| {
                    let (s, j) = stick_forward(&u[o..o + f.n_levels() - 1]);
                    logj += j;
                    s
                })
                .collect();
            let alpha = u[off.alpha..off.alpha + nk].iter().map(|v| v.exp()).collect();
            logj += u[off.alpha..off.alpha + nk].iter().sum::<f64>();
            LevelValues { mu, sigma, beta, alpha }
        };
        let l1 = self.l1.as_ref().map(&mut level);
        let l2 = self.l2.iter().map(&mut level).collect();
        let values = Values { delta, eta, sigma_l3, alpha_l3, l1, l2 };
        if !logj.is_finite() || !self.constrained(&values).iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok((values, logj))
    }

    /// Inverse of [`Layout::transform`].
    pub fn untransform(&self, v: &Values) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        for (i, &d) in v.delta.iter().enumerate() {
            u[self.delta + i] = self.delta_inverse(i, d);
        }
        for (s, &o) in v.eta.iter().zip(&self.eta) {
            stick_inverse(s, &mut u[o..o + s.p.len() - 1]);
        }
        let mut logs = |o: usize, xs: &[f64]| {
            for (k, x) in xs.iter().enumerate() {
                u[o + k] = x.ln();
            }
        };
        logs(self.sigma_l3, &v.sigma_l3);
        logs(self.alpha_l3, &v.alpha_l3);
        for (off, lv) in self.l1.iter().chain(&self.l2).zip(v.l1.iter().chain(&v.l2)) {
            u[off.mu..off.mu + lv.mu.len()].copy_from_slice(&lv.mu);
            for (k, s) in lv.sigma.iter().enumerate() {
                u[off.sigma + k] = s.ln();
            }
            for (k, a) in lv.alpha.iter().enumerate() {
                u[off.alpha + k] = a.ln();
            }
            for (s, &o) in lv.beta.iter().zip(&off.beta) {
                stick_inverse(s, &mut u[o..o + s.p.len() - 1]);
            }
        }
        u
    }

    pub(crate) fn zero_grads(&self) -> Grads {
        let nc = self.cont.len();
        let nk = self.cat.len();
        let simplex = || self.cat.iter().map(|f| vec![0.0; f.n_levels()]).collect::<Vec<_>>();
        let level = || LevelGrads {
            mu: vec![0.0; nc],
            log_sigma: vec![0.0; nc],
            beta_p: simplex(),
            beta_log: simplex(),
            log_alpha: vec![0.0; nk],
        };
        Grads {
            delta: vec![0.0; nc],
            eta_p: simplex(),
            eta_log: simplex(),
            log_sigma_l3: vec![0.0; nc],
            log_alpha_l3: vec![0.0; nk],
            l1: self.l1.as_ref().map(|_| level()),
            l2: (0..self.n_groups).map(|_| level()).collect(),
        }
    }

    /// Chain rule through the transform: writes `d(ℓ + log J)/du` into `out`
    /// given gradients of `ℓ` with respect to constrained values.
    pub(crate) fn backward(&self, u: &[f64], v: &Values, g: &Grads, out: &mut [f64]) {
        for i in 0..self.cont.len() {
            let (dd, dj) = self.delta_derivs(i, u[self.delta + i]);
            out[self.delta + i] = g.delta[i] * dd + dj;
        }
        for (k, &o) in self.eta.iter().enumerate() {
            let n = self.cat[k].n_levels() - 1;
            stick_backward(&u[o..o + n], &v.eta[k], &g.eta_p[k], &g.eta_log[k], &mut out[o..o + n]);
        }
        for (k, gs) in g.log_sigma_l3.iter().enumerate() {
            out[self.sigma_l3 + k] = gs + 1.0;
        }
        for (k, ga) in g.log_alpha_l3.iter().enumerate() {
            out[self.alpha_l3 + k] = ga + 1.0;
        }
        let levels = self.l1.iter().chain(&self.l2);
        let values = v.l1.iter().chain(&v.l2);
        let grads = g.l1.iter().chain(&g.l2);
        for ((off, lv), lg) in levels.zip(values).zip(grads) {
            for k in 0..lg.mu.len() {
                out[off.mu + k] = lg.mu[k];
                out[off.sigma + k] = lg.log_sigma[k] + 1.0;
            }
            for (k, ga) in lg.log_alpha.iter().enumerate() {
                out[off.alpha + k] = ga + 1.0;
            }
            for (k, &o) in off.beta.iter().enumerate() {
                let n = self.cat[k].n_levels() - 1;
                stick_backward(&u[o..o + n], &lv.beta[k], &lg.beta_p[k], &lg.beta_log[k], &mut out[o..o + n]);
            }
        }
    }
}

/// Stick-breaking map from `R^{L-1}` to the open `L`-simplex:
/// `z_k = σ(y_k)`, `p_k = z_k Π_{j<k}(1 - z_j)`, `p_L = Π_j (1 - z_j)`.
/// Returns the point (with logs) and `log |J|`.
pub fn stick_forward(y: &[f64]) -> (Simplex, f64) {
    let n = y.len() + 1;
    let mut p = Vec::with_capacity(n);
    let mut logp = Vec::with_capacity(n);
    let mut log_rem = 0.0;
    let mut logj = 0.0;
    for &yk in y {
        let log_z = -softplus(-yk);
        let log_1mz = -softplus(yk);
        let lp = log_rem + log_z;
        logp.push(lp);
        p.push(lp.exp());
        logj += log_rem + log_z + log_1mz;
        log_rem += log_1mz;
    }
    logp.push(log_rem);
    p.push(log_rem.exp());
    (Simplex { p, logp }, logj)
}

/// Inverse stick-breaking, computed from log-probabilities.
pub fn stick_inverse(s: &Simplex, y: &mut [f64]) {
    let n = s.logp.len();
    // log of the mass remaining after level k: logsumexp(logp[k+1..]).
    let mut tail = vec![f64::NEG_INFINITY; n];
    let mut acc = f64::NEG_INFINITY;
    for k in (0..n).rev() {
        tail[k] = acc;
        acc = log_add_exp(acc, s.logp[k]);
    }
    for k in 0..n - 1 {
        y[k] = s.logp[k] - tail[k];
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Gradient through the stick-breaking map plus its log-Jacobian, given
/// `gp = dℓ/dp` and `glog = dℓ/d log p`.
fn stick_backward(y: &[f64], s: &Simplex, gp: &[f64], glog: &[f64], out: &mut [f64]) {
    let n = s.p.len();
    let total: Vec<f64> = (0..n).map(|k| glog[k] + gp[k] * s.p[k]).collect();
    let mut suffix = total[n - 1];
    for j in (0..n - 1).rev() {
        let z = sigmoid(y[j]);
        let one_minus = sigmoid(-y[j]);
        let jac = 1.0 - 2.0 * z - (n - 2 - j) as f64 * z;
        out[j] = total[j] * one_minus - z * suffix + jac;
        suffix += total[j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sticks_at_zero_halve() {
        let (s, _) = stick_forward(&[0.0, 0.0]);
        assert!((s.p[0] - 0.5).abs() < 1e-15);
        assert!((s.p[1] - 0.25).abs() < 1e-15);
        assert!((s.p[2] - 0.25).abs() < 1e-15);
        let mut y = [9.0; 2];
        stick_inverse(&s, &mut y);
        assert!(y.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn stick_log_jacobian_matches_determinant() {
        // Numerical Jacobian of the first L-1 coordinates.
        let y = [0.3, -1.2, 0.7];
        let (_, logj) = stick_forward(&y);
        let h = 1e-6;
        let mut jac = [[0.0; 3]; 3];
        for j in 0..3 {
            let mut a = y;
            let mut b = y;
            a[j] += h;
            b[j] -= h;
            let (pa, _) = stick_forward(&a);
            let (pb, _) = stick_forward(&b);
            for i in 0..3 {
                jac[i][j] = (pa.p[i] - pb.p[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        assert!((det.abs().ln() - logj).abs() < 1e-6);
    }
}
