//! Two-layer tanh network with a sigmoid output, trained with Adam.
//!
//! The network is the classifier `f` inside the posterior, so besides
//! probabilities it exposes `∂ log f / ∂x` and the pieces needed to batch
//! many forward passes that share a perturbation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Normalizer};
use crate::special::{log_sigmoid, sigmoid, tanh, tanh_loop, tanh_slice};

pub const DEFAULT_HIDDEN: usize = 200;
const FORMAT: &str = "recourse-hmc-mlp";
const VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("training data contains a single class")]
    SingleClassDataset,
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("corrupt classifier file: {0}")]
    CorruptFile(String),
    #[error("classifier was trained for schema {found}, expected {expected}")]
    SchemaMismatch { expected: String, found: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 128, learning_rate: 1e-3, seed: 0, hidden: DEFAULT_HIDDEN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean cross-entropy on the full training split after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// `f(x) = σ(w2 · tanh(W1 x + b1) + b2)`. `w1` is row-major, one row per
/// hidden unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub width: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub schema_hash: String,
    pub normalizer: Normalizer,
}

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    format: String,
    version: u32,
    activation: String,
    #[serde(flatten)]
    model: MlpClassifier,
}

impl MlpClassifier {
    pub fn zeros(width: usize, hidden: usize, schema_hash: &str, normalizer: Normalizer) -> Self {
        Self {
            width,
            hidden,
            w1: vec![0.0; width * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            schema_hash: schema_hash.to_string(),
            normalizer,
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), ClassifierError> {
        if x.len() == self.width {
            Ok(())
        } else {
            Err(ClassifierError::WidthMismatch { expected: self.width, got: x.len() })
        }
    }

    /// `W1 x` without the bias.
    pub fn first_layer(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.width);
        self.w1.chunks_exact(self.width).map(|row| dot(row, x)).collect()
    }

    /// `W1 x + b1`.
    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut a = self.first_layer(x);
        a.iter_mut().zip(&self.b1).for_each(|(a, b)| *a += b);
        a
    }

    /// Output logit for a pre-activation vector.
    pub fn head_logit(&self, pre: &[f64]) -> f64 {
        let mut h = pre.to_vec();
        tanh_slice(&mut h);
        dot(&h, &self.w2) + self.b2
    }

    /// `log f` for a pre-activation vector, which is overwritten with the
    /// hidden activations. Adds `scale · ∂ log f / ∂pre` into `dpre`.
    pub fn head_log_prob_grad(&self, pre: &mut [f64], scale: f64, dpre: &mut [f64]) -> f64 {
        tanh_slice(pre);
        let z = self.b2 + dot(pre, &self.w2);
        let logf = log_sigmoid(z);
        let c = scale * (1.0 - sigmoid(z));
        for ((d, &hj), &w) in dpre.iter_mut().zip(pre.iter()).zip(&self.w2) {
            *d += c * w * (1.0 - hj * hj);
        }
        logf
    }

    /// `Σ_i log f` over rows whose pre-activations are `pre0[i] + wp`,
    /// accumulating `∂/∂pre` into `dpre`. `scratch` holds one hidden row.
    pub(crate) fn head_batch(&self, pre0: &[f64], wp: &[f64], scratch: &mut [f64], dpre: &mut [f64]) -> f64 {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { self.head_batch_avx2(pre0, wp, scratch, dpre) };
        }
        self.head_batch_body(pre0, wp, scratch, dpre)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn head_batch_avx2(&self, pre0: &[f64], wp: &[f64], scratch: &mut [f64], dpre: &mut [f64]) -> f64 {
        self.head_batch_body(pre0, wp, scratch, dpre)
    }

    #[inline(always)]
    fn head_batch_body(&self, pre0: &[f64], wp: &[f64], h: &mut [f64], dpre: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for row in pre0.chunks_exact(self.hidden) {
            h.iter_mut().zip(row).zip(wp).for_each(|((a, b), w)| *a = b + w);
            tanh_loop(h);
            let z = self.b2 + dot(h, &self.w2);
            total += log_sigmoid(z);
            let c = 1.0 - sigmoid(z);
            for ((d, &hj), &w) in dpre.iter_mut().zip(h.iter()).zip(&self.w2) {
                *d += c * w * (1.0 - hj * hj);
            }
        }
        total
    }

    /// `W1ᵀ v`, added into `out`.
    pub fn backprop_first_layer(&self, v: &[f64], out: &mut [f64]) {
        for (row, &vj) in self.w1.chunks_exact(self.width).zip(v) {
            if vj != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, w)| *o += vj * w);
            }
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.head_logit(&self.pre_activation(x))
    }

    /// `f(x)` without the width check; callers guarantee the width.
    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        self.check(x)?;
        Ok(self.prob(x))
    }

    /// `log f(x)` and `∂ log f / ∂x`, written into `grad`.
    pub fn log_prob_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut pre = self.pre_activation(x);
        let mut dpre = vec![0.0; self.hidden];
        let logf = self.head_log_prob_grad(&mut pre, 1.0, &mut dpre);
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.backprop_first_layer(&dpre, grad);
        logf
    }

    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        self.check(x)?;
        let mut g = vec![0.0; self.width];
        self.log_prob_and_grad(x, &mut g);
        Ok(g)
    }

    /// Fraction of `idx` rows whose thresholded prediction equals the label.
    pub fn accuracy(&self, data: &Dataset, idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return f64::NAN;
        }
        let hits = idx
            .iter()
            .filter(|&&i| u8::from(self.prob(&data.encoded[i]) > 0.5) == data.labels[i])
            .count();
        hits as f64 / idx.len() as f64
    }

    pub fn to_json(&self) -> String {
        let file = ClassifierFile {
            format: FORMAT.into(),
            version: VERSION,
            activation: "tanh".into(),
            model: self.clone(),
        };
        serde_json::to_string(&file).expect("classifier serializes")
    }

    pub fn from_json(text: &str, expected_hash: Option<&str>) -> Result<Self, ClassifierError> {
        let file: ClassifierFile =
            serde_json::from_str(text).map_err(|e| ClassifierError::CorruptFile(e.to_string()))?;
        if file.format != FORMAT || file.version != VERSION || file.activation != "tanh" {
            return Err(ClassifierError::CorruptFile(format!(
                "unsupported format {} v{} ({})",
                file.format, file.version, file.activation
            )));
        }
        let m = file.model;
        let shapes_ok = m.w1.len() == m.width * m.hidden
            && m.b1.len() == m.hidden
            && m.w2.len() == m.hidden
            && m.normalizer.ranges.len() <= m.width;
        let finite = m.w1.iter().chain(&m.b1).chain(&m.w2).all(|v| v.is_finite()) && m.b2.is_finite();
        if !shapes_ok || !finite {
            return Err(ClassifierError::CorruptFile("inconsistent weight shapes".into()));
        }
        if let Some(h) = expected_hash {
            if h != m.schema_hash {
                return Err(ClassifierError::SchemaMismatch {
                    expected: h.to_string(),
                    found: m.schema_hash,
                });
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| ClassifierError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClassifierError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, expected_hash)
    }
}

/// Dot product with four partial sums so the loop vectorizes.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Mean binary cross-entropy over `idx`.
pub fn cross_entropy(model: &MlpClassifier, data: &Dataset, idx: &[usize]) -> f64 {
    let total: f64 = idx
        .iter()
        .map(|&i| {
            let z = model.logit(&data.encoded[i]);
            if data.labels[i] == 1 {
                -log_sigmoid(z)
            } else {
                -log_sigmoid(-z)
            }
        })
        .sum();
    total / idx.len() as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * gi;
                self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * gi * gi;
                *pi -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

/// Train on the dataset's training split and report accuracy on its test
/// split. Deterministic given `config.seed`.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(MlpClassifier, TrainReport), ClassifierError> {
    if config.epochs == 0 || config.batch_size == 0 || config.hidden == 0 || !(config.learning_rate > 0.0) {
        return Err(ClassifierError::InvalidConfig(format!("{config:?}")));
    }
    let train_idx = &data.train_idx;
    let positives = train_idx.iter().filter(|&&i| data.labels[i] == 1).count();
    if positives == 0 || positives == train_idx.len() {
        return Err(ClassifierError::SingleClassDataset);
    }

    let width = data.schema.width();
    let hidden = config.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpClassifier::zeros(width, hidden, &data.schema.hash(), data.normalizer.clone());
    let r1 = 1.0 / (width as f64).sqrt();
    let r2 = 1.0 / (hidden as f64).sqrt();
    model.w1.iter_mut().for_each(|w| *w = rng.random_range(-r1..r1));
    model.b1.iter_mut().for_each(|w| *w = rng.random_range(-r1..r1));
    model.w2.iter_mut().for_each(|w| *w = rng.random_range(-r2..r2));
    model.b2 = rng.random_range(-r2..r2);

    let mut adam = Adam::new(width * hidden + 2 * hidden + 1, config.learning_rate);
    let mut gw1 = vec![0.0; width * hidden];
    let mut gb1 = vec![0.0; hidden];
    let mut gw2 = vec![0.0; hidden];
    let mut gb2 = [0.0];
    let mut h = vec![0.0; hidden];
    let mut order = train_idx.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            gw1.iter_mut().for_each(|g| *g = 0.0);
            gb1.iter_mut().for_each(|g| *g = 0.0);
            gw2.iter_mut().for_each(|g| *g = 0.0);
            gb2[0] = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = &data.encoded[i];
                let pre = model.pre_activation(x);
                let mut z = model.b2;
                for j in 0..hidden {
                    h[j] = tanh(pre[j]);
                    z += model.w2[j] * h[j];
                }
                let dz = (sigmoid(z) - data.labels[i] as f64) * scale;
                gb2[0] += dz;
                for j in 0..hidden {
                    gw2[j] += dz * h[j];
                    let dh = dz * model.w2[j] * (1.0 - h[j] * h[j]);
                    gb1[j] += dh;
                    let row = &mut gw1[j * width..(j + 1) * width];
                    row.iter_mut().zip(x).for_each(|(g, xi)| *g += dh * xi);
                }
            }
            let mut b2 = [model.b2];
            adam.step(
                &mut [&mut model.w1, &mut model.b1, &mut model.w2, &mut b2],
                &[&gw1, &gb1, &gw2, &gb2],
            );
            model.b2 = b2[0];
        }
        epoch_losses.push(cross_entropy(&model, data, train_idx));
    }

    let report = TrainReport {
        train_accuracy: model.accuracy(data, train_idx),
        test_accuracy: model.accuracy(data, &data.test_idx),
        epoch_losses,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MlpClassifier {
        let norm = Normalizer { ranges: vec![] };
        let mut m = MlpClassifier::zeros(2, 1, "h", norm);
        m.w1 = vec![0.5, -1.0];
        m.b1 = vec![0.1];
        m.w2 = vec![2.0];
        m.b2 = -0.3;
        m
    }

    #[test]
    fn zero_weights_give_one_half() {
        let m = MlpClassifier::zeros(3, 4, "h", Normalizer { ranges: vec![] });
        assert_eq!(m.predict_proba(&[0.3, -1.0, 7.0]).unwrap(), 0.5);
        assert_eq!(m.input_gradient(&[0.3, -1.0, 7.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn one_hidden_unit_by_hand() {
        let m = tiny();
        let x = [0.4, 0.2];
        // a = 0.5*0.4 - 0.2 + 0.1 = 0.1
        let a: f64 = 0.1;
        let z = 2.0 * a.tanh() - 0.3;
        let f = 1.0 / (1.0 + (-z).exp());
        assert!((m.predict_proba(&x).unwrap() - f).abs() < 1e-12);
        let common = (1.0 - f) * 2.0 * (1.0 - a.tanh().powi(2));
        let g = m.input_gradient(&x).unwrap();
        assert!((g[0] - common * 0.5).abs() < 1e-12);
        assert!((g[1] + common).abs() < 1e-12);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let m = tiny();
        assert!(matches!(m.predict_proba(&[1.0]), Err(ClassifierError::WidthMismatch { .. })));
        assert!(matches!(m.input_gradient(&[1.0; 3]), Err(ClassifierError::WidthMismatch { .. })));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = tiny();
        let back = MlpClassifier::from_json(&m.to_json(), Some("h")).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            MlpClassifier::from_json(&m.to_json(), Some("other")),
            Err(ClassifierError::SchemaMismatch { .. })
        ));
        let text = m.to_json();
        assert!(matches!(
            MlpClassifier::from_json(&text[..text.len() / 2], None),
            Err(ClassifierError::CorruptFile(_))
        ));
    }
}
