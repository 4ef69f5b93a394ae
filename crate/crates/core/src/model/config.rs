use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Number of levels in the perturbation hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Hierarchy {
    /// Instance level only.
    Flat,
    /// Population and instance levels.
    TwoLevel,
    /// Population, subgroup and instance levels.
    ThreeLevel,
}

impl Hierarchy {
    pub fn levels(self) -> u8 {
        match self {
            Hierarchy::Flat => 1,
            Hierarchy::TwoLevel => 2,
            Hierarchy::ThreeLevel => 3,
        }
    }
}

impl TryFrom<u8> for Hierarchy {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, String> {
        match n {
            1 => Ok(Hierarchy::Flat),
            2 => Ok(Hierarchy::TwoLevel),
            3 => Ok(Hierarchy::ThreeLevel),
            _ => Err(format!("hierarchy depth must be 1, 2 or 3, got {n}")),
        }
    }
}

impl From<Hierarchy> for u8 {
    fn from(h: Hierarchy) -> u8 {
        h.levels()
    }
}

/// Inverse-gamma prior on a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl Default for InvGammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, scale: 1.0 }
    }
}

/// Gamma prior (shape, rate) on a Dirichlet concentration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretize {
    /// One multinomial draw from `η′` per categorical feature.
    #[default]
    Sample,
    Argmax,
}

/// Per-feature overrides. Bounds apply to the perturbation `δ` in encoded
/// units.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturePrior {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    /// Base Dirichlet mass per level name; unlisted levels keep mass 1.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub mass: BTreeMap<String, f64>,
}

/// Linear dependency `δ_child ~ N(slope · δ_parent + intercept, sd)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalEdge {
    pub parent: String,
    pub child: String,
    pub slope: f64,
    #[serde(default)]
    pub intercept: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub levels: Hierarchy,
    pub mu0: f64,
    pub sigma: InvGammaPrior,
    /// Level-specific overrides of `sigma`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_l1: Option<InvGammaPrior>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_l2: Option<InvGammaPrior>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_l3: Option<InvGammaPrior>,
    pub alpha: GammaPrior,
    pub lambda: f64,
    pub w_prox: f64,
    /// Negatives drawn per subgroup for the subgroup-level likelihood.
    pub subsample_group: usize,
    /// Pooled negatives drawn for the population-level likelihood.
    pub subsample_pooled: usize,
    pub subsample_seed: u64,
    pub discretize: Discretize,
    /// Extra features to hold fixed, on top of the schema's frozen ones.
    pub frozen: Vec<String>,
    #[serde(rename = "feature")]
    pub features: BTreeMap<String, FeaturePrior>,
    #[serde(rename = "edge")]
    pub edges: Vec<CausalEdge>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            levels: Hierarchy::Flat,
            mu0: 0.0,
            sigma: InvGammaPrior::default(),
            sigma_l1: None,
            sigma_l2: None,
            sigma_l3: None,
            alpha: GammaPrior::default(),
            lambda: 0.7,
            w_prox: 1.0,
            subsample_group: 32,
            subsample_pooled: 64,
            subsample_seed: 0,
            discretize: Discretize::Sample,
            frozen: Vec::new(),
            features: BTreeMap::new(),
            edges: Vec::new(),
        }
    }
}

impl PriorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("prior config serializes")
    }

    pub fn sigma_prior(&self, level: u8) -> InvGammaPrior {
        let o = match level {
            1 => self.sigma_l1,
            2 => self.sigma_l2,
            _ => self.sigma_l3,
        };
        o.unwrap_or(self.sigma)
    }

    /// Checks that do not need the schema.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.w_prox >= 0.0) || !self.w_prox.is_finite() {
            return bad(format!("w_prox must be non-negative, got {}", self.w_prox));
        }
        if !self.mu0.is_finite() {
            return bad("mu0 must be finite".into());
        }
        let sigmas = [Some(self.sigma), self.sigma_l1, self.sigma_l2, self.sigma_l3];
        for s in sigmas.into_iter().flatten() {
            if !(s.shape > 0.0 && s.scale > 0.0) {
                return bad(format!("inverse-gamma parameters must be positive: {s:?}"));
            }
        }
        if !(self.alpha.shape > 0.0 && self.alpha.rate > 0.0) {
            return bad(format!("gamma parameters must be positive: {:?}", self.alpha));
        }
        for (name, f) in &self.features {
            if let (Some(lo), Some(hi)) = (f.lower, f.upper) {
                if !(lo < hi) {
                    return bad(format!("'{name}': lower bound must be below upper bound"));
                }
            }
            if f.mass.values().any(|&m| !(m > 0.0) || !m.is_finite()) {
                return bad(format!("'{name}': mass entries must be positive"));
            }
        }
        for e in &self.edges {
            if !(e.sd > 0.0) || !e.slope.is_finite() || !e.intercept.is_finite() {
                return bad(format!("edge {} -> {}: invalid parameters", e.parent, e.child));
            }
        }
        Ok(())
    }
}
