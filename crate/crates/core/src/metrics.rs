//! Counterfactual quality metrics, robustness scores and recourse cost.
//!
//! Everything works on encoded vectors. Continuous coordinates live in the
//! normalized unit range; categorical blocks are compared by their argmax
//! level.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::classifier::MlpClassifier;
use crate::data::{argmax, Dataset, FeatureSchema};

pub const QUANT_BINS: usize = 10;
pub const MAD_FLOOR: f64 = 1e-6;
pub const LOF_THRESHOLD: f64 = 1.5;
const LOF_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("k = {k} exceeds the reference set size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("{0} instances but {1} counterfactual sets")]
    LengthMismatch(usize, usize),
    #[error("no instances to evaluate")]
    Empty,
}

/// Feature layout and per-feature scales for distances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceContext {
    /// Encoded column of each continuous feature.
    pub cont_cols: Vec<usize>,
    /// `(offset, width)` of each categorical block.
    pub cat_blocks: Vec<(usize, usize)>,
    /// Median absolute deviation per continuous feature, floored.
    pub mad: Vec<f64>,
    pub bins: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl DistanceContext {
    /// MAD from the given rows (usually the training split).
    pub fn new(schema: &FeatureSchema, rows: &[&[f64]]) -> Self {
        let cont_cols: Vec<usize> = (0..schema.d_cont).map(|i| schema.offset(i)).collect();
        let cat_blocks = (schema.d_cont..schema.d()).map(|i| (schema.offset(i), schema.features[i].width())).collect();
        let mad = cont_cols
            .iter()
            .map(|&c| {
                let mut v: Vec<f64> = rows.iter().map(|r| r[c]).collect();
                let m = median(&mut v);
                let mut dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
                median(&mut dev).max(MAD_FLOOR)
            })
            .collect();
        Self { cont_cols, cat_blocks, mad, bins: QUANT_BINS }
    }

    pub fn from_dataset(data: &Dataset) -> Self {
        let rows: Vec<&[f64]> = data.train_idx.iter().map(|&i| data.encoded[i].as_slice()).collect();
        Self::new(&data.schema, &rows)
    }

    pub fn n_features(&self) -> usize {
        self.cont_cols.len() + self.cat_blocks.len()
    }

    /// Bin of a normalized value; values outside [0, 1] go to the end bins.
    pub fn quantize(&self, v: f64) -> usize {
        let b = (v * self.bins as f64).floor();
        if b < 0.0 {
            0
        } else {
            (b as usize).min(self.bins - 1)
        }
    }

    fn level(&self, x: &[f64], block: usize) -> usize {
        let (o, w) = self.cat_blocks[block];
        argmax(&x[o..o + w])
    }

    /// `Σ_cont |a - b| / MAD + Σ_cat [level differs]`.
    pub fn pair_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let cont: f64 = self.cont_cols.iter().zip(&self.mad).map(|(&c, m)| (a[c] - b[c]).abs() / m).sum();
        let cat = (0..self.cat_blocks.len()).filter(|&k| self.level(a, k) != self.level(b, k)).count();
        cont + cat as f64
    }

    /// Number of features whose quantized value or level differs.
    pub fn changed_features(&self, x: &[f64], xs: &[f64]) -> usize {
        let cont = self.cont_cols.iter().filter(|&&c| self.quantize(x[c]) != self.quantize(xs[c])).count();
        let cat = (0..self.cat_blocks.len()).filter(|&k| self.level(x, k) != self.level(xs, k)).count();
        cont + cat
    }
}

fn check_lengths<T>(instances: &[Vec<f64>], sets: &[T]) -> Result<(), MetricsError> {
    if instances.len() != sets.len() {
        return Err(MetricsError::LengthMismatch(instances.len(), sets.len()));
    }
    if instances.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Fraction of instances whose set holds at least one probability above 0.5.
pub fn validity_from_probs(probs: &[Vec<f64>]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let hit = probs.iter().filter(|p| p.iter().any(|&v| v > 0.5)).count();
    hit as f64 / probs.len() as f64
}

pub fn validity(sets: &[Vec<Vec<f64>>], classifier: &MlpClassifier) -> f64 {
    let probs: Vec<Vec<f64>> =
        sets.par_iter().map(|s| s.iter().map(|x| classifier.prob(x)).collect()).collect();
    validity_from_probs(&probs)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-instance minimum Euclidean distance to its samples.
pub fn proximity_per_instance(instances: &[Vec<f64>], sets: &[Vec<Vec<f64>>]) -> Result<Vec<f64>, MetricsError> {
    check_lengths(instances, sets)?;
    Ok(instances
        .par_iter()
        .zip(sets)
        .map(|(x, s)| s.iter().map(|xs| euclidean(x, xs)).fold(f64::INFINITY, f64::min))
        .collect())
}

/// Mean over instances of the closest sample's Euclidean distance.
pub fn proximity(instances: &[Vec<f64>], sets: &[Vec<Vec<f64>>]) -> Result<f64, MetricsError> {
    Ok(mean(&proximity_per_instance(instances, sets)?))
}

/// Mean over instances of the mean fraction of features changed per sample.
pub fn sparsity(instances: &[Vec<f64>], sets: &[Vec<Vec<f64>>], ctx: &DistanceContext) -> Result<f64, MetricsError> {
    check_lengths(instances, sets)?;
    let d = ctx.n_features() as f64;
    let per: Vec<f64> = instances
        .par_iter()
        .zip(sets)
        .map(|(x, s)| mean(&s.iter().map(|xs| ctx.changed_features(x, xs) as f64 / d).collect::<Vec<_>>()))
        .collect();
    Ok(mean(&per))
}

/// Sum of pair distances over unordered pairs, divided by `n²`.
pub fn diversity(set: &[Vec<f64>], ctx: &DistanceContext) -> f64 {
    let n = set.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += ctx.pair_distance(&set[i], &set[j]);
        }
    }
    total / (n * n) as f64
}

/// Mean of the pair distance between the instance and each sample.
pub fn recourse_cost(x: &[f64], samples: &[Vec<f64>], ctx: &DistanceContext) -> f64 {
    mean(&samples.iter().map(|xs| ctx.pair_distance(x, xs)).collect::<Vec<_>>())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample variance; zero for fewer than two values.
fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Sorted distances from `p` to every reference point.
fn sorted_distances(p: &[f64], reference: &[Vec<f64>], ctx: &DistanceContext) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = reference.iter().enumerate().map(|(i, r)| (ctx.pair_distance(p, r), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

fn check_k(k: usize, n: usize) -> Result<(), MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if k > n {
        return Err(MetricsError::KTooLarge { k, n });
    }
    Ok(())
}

/// Mean pair distance from each point to its `k` nearest reference points.
pub fn knn_distance(
    points: &[Vec<f64>],
    reference: &[Vec<f64>],
    k: usize,
    ctx: &DistanceContext,
) -> Result<Vec<f64>, MetricsError> {
    check_k(k, reference.len())?;
    Ok(points
        .par_iter()
        .map(|p| mean(&sorted_distances(p, reference, ctx)[..k].iter().map(|d| d.0).collect::<Vec<_>>()))
        .collect())
}

/// Local outlier factor of each point relative to the reference set, with
/// exactly `k` neighbours (ties broken by index). Reference points use their
/// neighbours among the other reference points.
pub fn lof(
    points: &[Vec<f64>],
    reference: &[Vec<f64>],
    k: usize,
    ctx: &DistanceContext,
) -> Result<Vec<f64>, MetricsError> {
    // Each reference point needs k neighbours other than itself.
    check_k(k, reference.len().saturating_sub(1))?;
    let neighbours: Vec<Vec<(f64, usize)>> = reference
        .par_iter()
        .enumerate()
        .map(|(i, r)| sorted_distances(r, reference, ctx).into_iter().filter(|d| d.1 != i).take(k).collect())
        .collect();
    let k_dist: Vec<f64> = neighbours.iter().map(|n| n[k - 1].0).collect();
    let lrd = |nb: &[(f64, usize)]| {
        let reach = mean(&nb.iter().map(|&(d, o)| d.max(k_dist[o])).collect::<Vec<_>>());
        1.0 / (reach + LOF_EPS)
    };
    let ref_lrd: Vec<f64> = neighbours.iter().map(|n| lrd(n)).collect();
    Ok(points
        .par_iter()
        .map(|p| {
            let nb: Vec<(f64, usize)> = sorted_distances(p, reference, ctx).into_iter().take(k).collect();
            let own = lrd(&nb);
            mean(&nb.iter().map(|&(_, o)| ref_lrd[o]).collect::<Vec<_>>()) / own
        })
        .collect())
}

pub fn outlier_fraction(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Robustness {
    pub k: usize,
    pub knn_mean: f64,
    pub lof_mean: f64,
    pub outlier_fraction: f64,
}

pub fn robustness(
    points: &[Vec<f64>],
    reference: &[Vec<f64>],
    ks: &[usize],
    ctx: &DistanceContext,
    threshold: f64,
) -> Result<Vec<Robustness>, MetricsError> {
    ks.iter()
        .map(|&k| {
            let knn = knn_distance(points, reference, k, ctx)?;
            let scores = lof(points, reference, k, ctx)?;
            Ok(Robustness {
                k,
                knn_mean: mean(&knn),
                lof_mean: mean(&scores),
                outlier_fraction: outlier_fraction(&scores, threshold),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCost {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessGap {
    pub a: String,
    pub b: String,
    /// `mean(a) - mean(b)`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessTable {
    pub groups: Vec<GroupCost>,
    pub gaps: Vec<FairnessGap>,
    /// Per-instance cost minus its subgroup mean.
    pub deviation: Vec<f64>,
}

/// Recourse cost by subgroup. Every named group gets a row, empty groups
/// with `n = 0` and NaN statistics.
pub fn fairness_table(costs: &[f64], groups: &[usize], names: &[String]) -> FairnessTable {
    let rows: Vec<GroupCost> = names
        .iter()
        .enumerate()
        .map(|(g, name)| {
            let v: Vec<f64> = costs.iter().zip(groups).filter(|(_, &gi)| gi == g).map(|(c, _)| *c).collect();
            let (m, sd) = if v.is_empty() { (f64::NAN, f64::NAN) } else { (mean(&v), sample_var(&v).sqrt()) };
            GroupCost { group: name.clone(), n: v.len(), mean: m, sd }
        })
        .collect();
    let mut gaps = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            gaps.push(FairnessGap { a: rows[i].group.clone(), b: rows[j].group.clone(), gap: rows[i].mean - rows[j].mean });
        }
    }
    let deviation = costs.iter().zip(groups).map(|(c, &g)| c - rows[g].mean).collect();
    FairnessTable { groups: rows, gaps, deviation }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversitySummary {
    pub per_instance: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

pub fn diversity_summary(sets: &[Vec<Vec<f64>>], ctx: &DistanceContext) -> DiversitySummary {
    let per_instance: Vec<f64> = sets.par_iter().map(|s| diversity(s, ctx)).collect();
    DiversitySummary { mean: mean(&per_instance), variance: sample_var(&per_instance), per_instance }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_instances: usize,
    pub validity: f64,
    pub proximity: f64,
    pub sparsity: f64,
    pub diversity: DiversitySummary,
    pub robustness: Vec<Robustness>,
    pub fairness: Option<FairnessTable>,
    pub cost: Vec<f64>,
}

/// All metrics for a batch. `probs[i]` are classifier outputs for
/// `sets[i]`; `reference` feeds the kNN/LOF scores over all samples.
pub struct EvaluationInput<'a> {
    pub instances: &'a [Vec<f64>],
    pub sets: &'a [Vec<Vec<f64>>],
    pub probs: &'a [Vec<f64>],
    pub reference: &'a [Vec<f64>],
    pub ks: &'a [usize],
    pub groups: Option<(&'a [usize], &'a [String])>,
}

pub fn evaluate(input: &EvaluationInput<'_>, ctx: &DistanceContext) -> Result<MetricsReport, MetricsError> {
    check_lengths(input.instances, input.sets)?;
    let points: Vec<Vec<f64>> = input.sets.iter().flatten().cloned().collect();
    let robustness = if input.ks.is_empty() {
        Vec::new()
    } else {
        robustness(&points, input.reference, input.ks, ctx, LOF_THRESHOLD)?
    };
    let cost: Vec<f64> = input.instances.iter().zip(input.sets).map(|(x, s)| recourse_cost(x, s, ctx)).collect();
    Ok(MetricsReport {
        n_instances: input.instances.len(),
        validity: validity_from_probs(input.probs),
        proximity: proximity(input.instances, input.sets)?,
        sparsity: sparsity(input.instances, input.sets, ctx)?,
        diversity: diversity_summary(input.sets, ctx),
        robustness,
        fairness: input.groups.map(|(g, names)| fairness_table(&cost, g, names)),
        cost,
    })
}
