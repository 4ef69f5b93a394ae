#![allow(dead_code)]

pub mod oracle;
pub mod recovery;

use recourse_core::classifier::{train, MlpClassifier, TrainConfig};
use recourse_core::data::{generate_synthetic, partition, Dataset, PartitionedData, SyntheticSpec};

pub struct Fixture {
    pub data: Dataset,
    pub clf: MlpClassifier,
    pub parts: PartitionedData,
}

pub fn synthetic_fixture(seed: u64) -> Fixture {
    let data = generate_synthetic(&SyntheticSpec::default(), seed).unwrap();
    let (clf, _) = train(&data, &TrainConfig { seed, ..TrainConfig::default() }).unwrap();
    let parts = partition(&data, |x| clf.prob(x)).unwrap();
    Fixture { data, clf, parts }
}

/// Central-difference gradient.
pub fn fd_grad<F: Fn(&[f64]) -> f64>(f: F, q: &[f64], h: f64) -> Vec<f64> {
    let mut q = q.to_vec();
    (0..q.len())
        .map(|i| {
            let orig = q[i];
            q[i] = orig + h;
            let up = f(&q);
            q[i] = orig - h;
            let down = f(&q);
            q[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(1, |a_i|, |b_i|)`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}
