use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;

/// Default smoothing mass given to each non-active level of a categorical block.
pub const DEFAULT_SMOOTHING: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Monotone {
    #[default]
    None,
    NonDecreasing,
    NonIncreasing,
}

/// Linear dependency of a continuous feature's perturbation on another one:
/// `delta_child ~ N(slope * delta_parent + intercept, sd)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalParent {
    pub parent: String,
    pub slope: f64,
    #[serde(default)]
    pub intercept: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Bounds are optional; missing bounds are fitted on the training split.
    Continuous {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    #[serde(default = "default_true")]
    pub mutable: bool,
    #[serde(default)]
    pub monotone: Monotone,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal_parent: Option<CausalParent>,
}

fn default_true() -> bool {
    true
}

impl FeatureSpec {
    pub fn continuous(name: &str, min: Option<f64>, max: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Continuous { min, max },
            mutable: true,
            monotone: Monotone::None,
            causal_parent: None,
        }
    }

    pub fn categorical<S: AsRef<str>>(name: &str, levels: &[S]) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical {
                levels: levels.iter().map(|s| s.as_ref().to_string()).collect(),
            },
            mutable: true,
            monotone: Monotone::None,
            causal_parent: None,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.mutable = false;
        self
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FeatureKind::Continuous { .. })
    }

    /// Number of encoded columns: 1 for continuous, `L` for categorical.
    pub fn width(&self) -> usize {
        match &self.kind {
            FeatureKind::Continuous { .. } => 1,
            FeatureKind::Categorical { levels } => levels.len(),
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { levels } => Some(levels),
            FeatureKind::Continuous { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    /// Raw label values mapped to the positive class.
    #[serde(default = "default_positive")]
    pub positive: Vec<String>,
}

fn default_positive() -> Vec<String> {
    vec!["1".to_string()]
}

impl Default for LabelSpec {
    fn default() -> Self {
        Self {
            name: "label".to_string(),
            positive: default_positive(),
        }
    }
}

/// On-disk form of a schema; `FeatureSchema::new` validates it and puts the
/// features in encoded order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    #[serde(default)]
    label: LabelSpec,
    #[serde(default)]
    group_feature: Option<String>,
    #[serde(default = "default_smoothing")]
    smoothing: f64,
    #[serde(default)]
    split_seed: u64,
    #[serde(rename = "feature")]
    features: Vec<FeatureSpec>,
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

/// Ordered description of the feature space. Continuous features always
/// precede categorical ones in the encoded vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub group_feature: Option<String>,
    pub label: LabelSpec,
    pub smoothing: f64,
    pub split_seed: u64,
    pub d_cont: usize,
    pub d_cat: usize,
    offsets: Vec<usize>,
    width: usize,
}

impl FeatureSchema {
    pub fn new(
        features: Vec<FeatureSpec>,
        group_feature: Option<String>,
        label: LabelSpec,
    ) -> Result<Self, DataError> {
        Self::with_options(features, group_feature, label, DEFAULT_SMOOTHING, 0)
    }

    pub fn with_options(
        features: Vec<FeatureSpec>,
        group_feature: Option<String>,
        label: LabelSpec,
        smoothing: f64,
        split_seed: u64,
    ) -> Result<Self, DataError> {
        if features.is_empty() {
            return Err(DataError::InvalidSchema("schema has no features".into()));
        }
        let (mut cont, cat): (Vec<_>, Vec<_>) =
            features.into_iter().partition(FeatureSpec::is_continuous);
        let d_cont = cont.len();
        let d_cat = cat.len();
        cont.extend(cat);
        let features = cont;

        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::InvalidSchema(format!("duplicate feature '{}'", f.name)));
            }
            if f.name == label.name {
                return Err(DataError::InvalidSchema(format!(
                    "feature '{}' collides with the label column",
                    f.name
                )));
            }
            match &f.kind {
                FeatureKind::Continuous { min, max } => {
                    if min.is_some() != max.is_some() {
                        return Err(DataError::InvalidSchema(format!(
                            "'{}': declare both min and max or neither",
                            f.name
                        )));
                    }
                    if let (Some(lo), Some(hi)) = (min, max) {
                        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                            return Err(DataError::InvalidSchema(format!(
                                "'{}': min must be below max",
                                f.name
                            )));
                        }
                    }
                }
                FeatureKind::Categorical { levels } => {
                    if levels.len() < 2 {
                        return Err(DataError::InvalidSchema(format!(
                            "'{}': categorical features need at least 2 levels",
                            f.name
                        )));
                    }
                    let unique: HashSet<_> = levels.iter().collect();
                    if unique.len() != levels.len() {
                        return Err(DataError::InvalidSchema(format!(
                            "'{}': duplicate level names",
                            f.name
                        )));
                    }
                    if f.monotone != Monotone::None {
                        return Err(DataError::InvalidSchema(format!(
                            "'{}': monotone constraints apply to continuous features only",
                            f.name
                        )));
                    }
                }
            }
            if f.monotone != Monotone::None && !f.mutable {
                return Err(DataError::InvalidSchema(format!(
                    "'{}': monotone constraint on a frozen feature",
                    f.name
                )));
            }
        }

        for f in &features {
            if let Some(edge) = &f.causal_parent {
                validate_edge(&features, &edge.parent, &f.name, edge.sd)?;
            }
        }

        if let Some(g) = &group_feature {
            match features.iter().find(|f| &f.name == g) {
                Some(f) if !f.is_continuous() => {}
                Some(_) => {
                    return Err(DataError::InvalidSchema(format!(
                        "group feature '{g}' must be categorical"
                    )))
                }
                None => return Err(DataError::InvalidSchema(format!("unknown group feature '{g}'"))),
            }
        }

        let max_levels = features.iter().map(FeatureSpec::width).max().unwrap_or(1);
        if !(smoothing >= 0.0 && smoothing * (max_levels as f64 - 1.0) < 0.5) {
            return Err(DataError::InvalidSchema(format!(
                "smoothing {smoothing} leaves no dominant level"
            )));
        }

        let mut offsets = Vec::with_capacity(features.len());
        let mut width = 0;
        for f in &features {
            offsets.push(width);
            width += f.width();
        }

        Ok(Self {
            features,
            group_feature,
            label,
            smoothing,
            split_seed,
            d_cont,
            d_cat,
            offsets,
            width,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| DataError::InvalidSchema(e.to_string()))?;
        Self::with_options(
            file.features,
            file.group_feature,
            file.label,
            file.smoothing,
            file.split_seed,
        )
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SchemaFile {
            label: self.label.clone(),
            group_feature: self.group_feature.clone(),
            smoothing: self.smoothing,
            split_seed: self.split_seed,
            features: self.features.clone(),
        };
        toml::to_string(&file).expect("schema serializes")
    }

    pub fn d(&self) -> usize {
        self.features.len()
    }

    /// Total encoded width.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Encoded column offset of feature `i`.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn group_index(&self) -> Option<usize> {
        self.group_feature.as_deref().and_then(|g| self.index_of(g))
    }

    /// Number of subgroups (levels of the group feature, or 1 without one).
    pub fn n_groups(&self) -> usize {
        self.group_index()
            .map(|i| self.features[i].width())
            .unwrap_or(1)
    }

    pub fn group_names(&self) -> Vec<String> {
        match self.group_index() {
            Some(i) => self.features[i].levels().unwrap().to_vec(),
            None => vec!["all".to_string()],
        }
    }

    /// Mutability mask over features: 1 for continuous and 0 for categorical
    /// positions, as used in `x* = z ⊙ x + Δ`.
    pub fn mask(&self) -> Vec<u8> {
        self.features.iter().map(|f| u8::from(f.is_continuous())).collect()
    }

    /// Names of the encoded columns (`age`, `workclass=Private`, ...).
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width);
        for f in &self.features {
            match &f.kind {
                FeatureKind::Continuous { .. } => names.push(f.name.clone()),
                FeatureKind::Categorical { levels } => {
                    names.extend(levels.iter().map(|l| format!("{}={}", f.name, l)))
                }
            }
        }
        names
    }

    /// Smoothed one-hot vector for `level` out of `n_levels`.
    pub fn smoothed_one_hot(&self, level: usize, n_levels: usize) -> Vec<f64> {
        let eps = self.smoothing;
        let mut v = vec![eps; n_levels];
        v[level] = 1.0 - eps * (n_levels as f64 - 1.0);
        v
    }

    /// Hash over the parts of the schema that define the encoded space.
    /// Mutability, monotonicity and causal edges do not change the encoding
    /// and are excluded, so a trained classifier can be reused across them.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Encoding<'a> {
            features: Vec<(&'a str, &'a FeatureKind)>,
            label: &'a LabelSpec,
            smoothing: f64,
            split_seed: u64,
        }
        let enc = Encoding {
            features: self.features.iter().map(|f| (f.name.as_str(), &f.kind)).collect(),
            label: &self.label,
            smoothing: self.smoothing,
            split_seed: self.split_seed,
        };
        let bytes = serde_json::to_vec(&enc).expect("encoding serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub(crate) fn validate_edge(
    features: &[FeatureSpec],
    parent: &str,
    child: &str,
    sd: f64,
) -> Result<(), DataError> {
    if parent == child {
        return Err(DataError::InvalidSchema(format!("causal edge '{parent}' -> itself")));
    }
    for name in [parent, child] {
        match features.iter().find(|f| f.name == name) {
            Some(f) if f.is_continuous() && f.mutable => {}
            Some(_) => {
                return Err(DataError::InvalidSchema(format!(
                    "causal edge endpoint '{name}' must be a mutable continuous feature"
                )))
            }
            None => {
                return Err(DataError::InvalidSchema(format!(
                    "causal edge references unknown feature '{name}'"
                )))
            }
        }
    }
    if !(sd > 0.0) {
        return Err(DataError::InvalidSchema(format!(
            "causal edge '{parent}' -> '{child}' needs a positive sd"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
group_feature = "gender"

[label]
name = "income"
positive = [">50K"]

[[feature]]
name = "workclass"
kind = "categorical"
levels = ["Sales", "Gov"]

[[feature]]
name = "age"
kind = "continuous"
min = 17
max = 90
monotone = "non_decreasing"

[[feature]]
name = "gender"
kind = "categorical"
levels = ["Male", "Female"]
mutable = false

[[feature]]
name = "hours"
kind = "continuous"
min = 1
max = 99
causal_parent = { parent = "age", slope = -0.5, sd = 0.05 }
"#;

    #[test]
    fn parses_and_orders_continuous_first() {
        let s = FeatureSchema::from_toml_str(TOML).unwrap();
        let names: Vec<_> = s.features.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["age", "hours", "workclass", "gender"]);
        assert_eq!((s.d_cont, s.d_cat, s.width()), (2, 2, 6));
        assert_eq!(s.mask(), vec![1, 1, 0, 0]);
        assert_eq!(s.n_groups(), 2);
        assert_eq!(s.offset(3), 4);
        assert_eq!(s.features[0].monotone, Monotone::NonDecreasing);
        assert!(!s.features[3].mutable);
        assert_eq!(s.column_names()[2], "workclass=Sales");
    }

    #[test]
    fn toml_round_trip_preserves_hash() {
        let s = FeatureSchema::from_toml_str(TOML).unwrap();
        let again = FeatureSchema::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.hash(), again.hash());
    }

    #[test]
    fn hash_ignores_mutability_but_not_levels() {
        let s = FeatureSchema::from_toml_str(TOML).unwrap();
        let thawed = FeatureSchema::from_toml_str(&TOML.replace("mutable = false", "")).unwrap();
        assert_eq!(s.hash(), thawed.hash());
        let relabeled = FeatureSchema::from_toml_str(&TOML.replace("\"Gov\"", "\"State\"")).unwrap();
        assert_ne!(s.hash(), relabeled.hash());
    }

    #[test]
    fn rejects_bad_schemas() {
        let one_level = TOML.replace(r#"levels = ["Sales", "Gov"]"#, r#"levels = ["Sales"]"#);
        assert!(FeatureSchema::from_toml_str(&one_level).is_err());
        let dup = TOML.replace(r#"["Sales", "Gov"]"#, r#"["Sales", "Sales"]"#);
        assert!(FeatureSchema::from_toml_str(&dup).is_err());
        let inverted = TOML.replace("min = 17", "min = 95");
        assert!(FeatureSchema::from_toml_str(&inverted).is_err());
        let self_edge = TOML.replace("parent = \"age\"", "parent = \"hours\"");
        assert!(FeatureSchema::from_toml_str(&self_edge).is_err());
        let cat_edge = TOML.replace("parent = \"age\"", "parent = \"workclass\"");
        assert!(FeatureSchema::from_toml_str(&cat_edge).is_err());
        let bad_group = TOML.replace("group_feature = \"gender\"", "group_feature = \"age\"");
        assert!(FeatureSchema::from_toml_str(&bad_group).is_err());
    }

    #[test]
    fn smoothed_one_hot_sums_to_one() {
        let s = FeatureSchema::from_toml_str(TOML).unwrap();
        let v = s.smoothed_one_hot(0, 2);
        assert!((v[0] - 0.99).abs() < 1e-15 && (v[1] - 0.01).abs() < 1e-15);
        let v = s.smoothed_one_hot(2, 4);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|&e| e > 0.0));
    }
}
