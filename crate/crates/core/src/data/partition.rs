use super::{DataError, Dataset};

/// Training rows split by predicted class, per subgroup and pooled.
///
/// Only rows whose ground-truth label agrees with the classifier's decision
/// (threshold 0.5) are kept.
#[derive(Debug, Clone)]
pub struct PartitionedData {
    pub group_positives: Vec<Vec<Vec<f64>>>,
    pub group_negatives: Vec<Vec<Vec<f64>>>,
    pub pooled_positives: Vec<Vec<f64>>,
    pub pooled_negatives: Vec<Vec<f64>>,
    pub pooled_positive_mean: Vec<f64>,
    /// Per-group positive mean; groups without positives inherit the pooled mean.
    pub group_positive_means: Vec<Vec<f64>>,
    /// Groups that had no positives and fell back to the pooled mean.
    pub fallback_groups: Vec<usize>,
}

impl PartitionedData {
    pub fn n_groups(&self) -> usize {
        self.group_positives.len()
    }
}

pub fn partition<F>(data: &Dataset, predict: F) -> Result<PartitionedData, DataError>
where
    F: Fn(&[f64]) -> f64,
{
    let k = data.n_groups;
    let mut group_positives = vec![Vec::new(); k];
    let mut group_negatives = vec![Vec::new(); k];
    for &i in &data.train_idx {
        let x = &data.encoded[i];
        let predicted = u8::from(predict(x) > 0.5);
        if predicted != data.labels[i] {
            continue;
        }
        let g = data.groups[i];
        if predicted == 1 {
            group_positives[g].push(x.clone());
        } else {
            group_negatives[g].push(x.clone());
        }
    }
    let pooled_positives: Vec<Vec<f64>> = group_positives.iter().flatten().cloned().collect();
    let pooled_negatives: Vec<Vec<f64>> = group_negatives.iter().flatten().cloned().collect();
    if pooled_positives.is_empty() && pooled_negatives.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    if pooled_positives.is_empty() {
        return Err(DataError::NoPositives(None));
    }
    let pooled_positive_mean = mean(&pooled_positives);
    let mut fallback_groups = Vec::new();
    let group_positive_means = group_positives
        .iter()
        .enumerate()
        .map(|(g, rows)| {
            if rows.is_empty() {
                fallback_groups.push(g);
                pooled_positive_mean.clone()
            } else {
                mean(rows)
            }
        })
        .collect();
    Ok(PartitionedData {
        group_positives,
        group_negatives,
        pooled_positives,
        pooled_negatives,
        pooled_positive_mean,
        group_positive_means,
        fallback_groups,
    })
}

/// Component-wise mean of equal-length vectors.
pub fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}
