use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, FeatureSchema};
use super::DataError;

/// Fraction of rows used for training, normalization statistics and MAD.
pub const TRAIN_FRACTION: f64 = 0.8;

/// A raw (decoded) feature value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RawValue {
    Num(f64),
    Level(usize),
}

impl RawValue {
    pub fn as_num(&self) -> Option<f64> {
        match *self {
            RawValue::Num(v) => Some(v),
            RawValue::Level(_) => None,
        }
    }

    pub fn as_level(&self) -> Option<usize> {
        match *self {
            RawValue::Level(l) => Some(l),
            RawValue::Num(_) => None,
        }
    }
}

/// One row of raw values, in schema (encoded) feature order.
pub type RawRow = Vec<RawValue>;

/// Min–max ranges per continuous feature, in continuous-feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub ranges: Vec<(f64, f64)>,
}

impl Normalizer {
    /// Declared bounds where present, training-split extremes otherwise.
    pub fn fit(schema: &FeatureSchema, train_rows: &[&RawRow]) -> Result<Self, DataError> {
        let mut ranges = Vec::with_capacity(schema.d_cont);
        for (i, f) in schema.features[..schema.d_cont].iter().enumerate() {
            let FeatureKind::Continuous { min, max } = f.kind else { unreachable!() };
            let range = match (min, max) {
                (Some(lo), Some(hi)) => (lo, hi),
                _ => {
                    let (lo, hi) = train_rows
                        .iter()
                        .filter_map(|r| r[i].as_num())
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                            (lo.min(v), hi.max(v))
                        });
                    if !lo.is_finite() {
                        return Err(DataError::EmptyDataset);
                    }
                    if hi > lo {
                        (lo, hi)
                    } else {
                        (lo, lo + 1.0)
                    }
                }
            };
            ranges.push(range);
        }
        Ok(Self { ranges })
    }

    /// Ranges taken directly from declared bounds; fails if any is missing.
    pub fn from_schema(schema: &FeatureSchema) -> Result<Self, DataError> {
        let mut ranges = Vec::with_capacity(schema.d_cont);
        for f in &schema.features[..schema.d_cont] {
            match f.kind {
                FeatureKind::Continuous { min: Some(lo), max: Some(hi) } => ranges.push((lo, hi)),
                _ => {
                    return Err(DataError::InvalidSchema(format!(
                        "'{}' has no declared bounds",
                        f.name
                    )))
                }
            }
        }
        Ok(Self { ranges })
    }

    pub fn scale(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = self.ranges[i];
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn unscale(&self, i: usize, u: f64) -> f64 {
        let (lo, hi) = self.ranges[i];
        lo + u.clamp(0.0, 1.0) * (hi - lo)
    }
}

/// Encode a raw row. Continuous values are min–max scaled into [0, 1] and
/// categorical levels become smoothed one-hot blocks.
pub fn encode(row: &[RawValue], schema: &FeatureSchema, norm: &Normalizer) -> Result<Vec<f64>, DataError> {
    if row.len() != schema.d() {
        return Err(DataError::WidthMismatch { expected: schema.d(), got: row.len() });
    }
    let mut out = Vec::with_capacity(schema.width());
    for (i, (f, v)) in schema.features.iter().zip(row).enumerate() {
        match (&f.kind, v) {
            (FeatureKind::Continuous { .. }, RawValue::Num(x)) => out.push(norm.scale(i, *x)),
            (FeatureKind::Categorical { levels }, RawValue::Level(l)) if *l < levels.len() => {
                out.extend(schema.smoothed_one_hot(*l, levels.len()))
            }
            _ => {
                return Err(DataError::KindMismatch { feature: f.name.clone() });
            }
        }
    }
    Ok(out)
}

/// Decode an encoded vector: continuous values are clamped to the feature
/// range, categorical blocks map to their argmax level.
pub fn decode(x: &[f64], schema: &FeatureSchema, norm: &Normalizer) -> Result<RawRow, DataError> {
    if x.len() != schema.width() {
        return Err(DataError::WidthMismatch { expected: schema.width(), got: x.len() });
    }
    let mut row = Vec::with_capacity(schema.d());
    for (i, f) in schema.features.iter().enumerate() {
        let off = schema.offset(i);
        match &f.kind {
            FeatureKind::Continuous { .. } => row.push(RawValue::Num(norm.unscale(i, x[off]))),
            FeatureKind::Categorical { levels } => {
                row.push(RawValue::Level(argmax(&x[off..off + levels.len()])))
            }
        }
    }
    Ok(row)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &e) in v.iter().enumerate() {
        if e > v[best] {
            best = i;
        }
    }
    best
}

/// Render a raw value as text (level name for categoricals).
pub fn format_value(schema: &FeatureSchema, feature: usize, v: &RawValue) -> String {
    match (v, schema.features[feature].levels()) {
        (RawValue::Level(l), Some(levels)) => levels[*l].clone(),
        (RawValue::Num(x), _) => format!("{x}"),
        (RawValue::Level(l), None) => l.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub normalizer: Normalizer,
    pub rows: Vec<RawRow>,
    pub encoded: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    /// Subgroup id per row, in `[0, n_groups)`.
    pub groups: Vec<usize>,
    pub n_groups: usize,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl Dataset {
    /// Build a dataset from raw rows: seeded 80/20 split, normalization
    /// fitted on the training split, then encoding.
    pub fn from_rows(schema: FeatureSchema, rows: Vec<RawRow>, labels: Vec<u8>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        assert_eq!(rows.len(), labels.len());
        let n = rows.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(schema.split_seed));
        let n_train = ((n as f64) * TRAIN_FRACTION).round().clamp(1.0, n as f64) as usize;
        let mut train_idx = order[..n_train].to_vec();
        let mut test_idx = order[n_train..].to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();

        let train_rows: Vec<&RawRow> = train_idx.iter().map(|&i| &rows[i]).collect();
        let normalizer = Normalizer::fit(&schema, &train_rows)?;
        Self::assemble(schema, normalizer, rows, labels, train_idx, test_idx)
    }

    /// Build a dataset with an existing normalizer (e.g. one persisted with a
    /// classifier); the split is recomputed from the schema's split seed.
    pub fn with_normalizer(self, normalizer: Normalizer) -> Result<Self, DataError> {
        let Dataset { schema, rows, labels, train_idx, test_idx, .. } = self;
        Self::assemble(schema, normalizer, rows, labels, train_idx, test_idx)
    }

    fn assemble(
        schema: FeatureSchema,
        normalizer: Normalizer,
        rows: Vec<RawRow>,
        labels: Vec<u8>,
        train_idx: Vec<usize>,
        test_idx: Vec<usize>,
    ) -> Result<Self, DataError> {
        let encoded = rows
            .iter()
            .map(|r| encode(r, &schema, &normalizer))
            .collect::<Result<Vec<_>, _>>()?;
        let gi = schema.group_index();
        let groups = rows
            .iter()
            .map(|r| gi.and_then(|i| r[i].as_level()).unwrap_or(0))
            .collect();
        let n_groups = schema.n_groups();
        Ok(Self { schema, normalizer, rows, encoded, labels, groups, n_groups, train_idx, test_idx })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Group id of an encoded vector, read from the group feature's block.
    pub fn group_of(&self, x: &[f64]) -> usize {
        group_of(&self.schema, x)
    }
}

pub fn group_of(schema: &FeatureSchema, x: &[f64]) -> usize {
    match schema.group_index() {
        Some(i) => {
            let off = schema.offset(i);
            argmax(&x[off..off + schema.features[i].width()])
        }
        None => 0,
    }
}

/// Load a CSV file whose header contains every schema feature plus the label
/// column. Extra columns are ignored.
pub fn load_csv(path: &Path, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Io(e.to_string()))?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let column = |name: &str| {
        position.get(name).copied().ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<Vec<_>, _>>()?;
    let label_col = column(&schema.label.name)?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Io(e.to_string()))?;
        let mut row = Vec::with_capacity(schema.d());
        for (f, &col) in schema.features.iter().zip(&feature_cols) {
            let text = record.get(col).unwrap_or("");
            match &f.kind {
                FeatureKind::Continuous { .. } => {
                    let v: f64 = text.parse().map_err(|_| DataError::NonNumeric {
                        feature: f.name.clone(),
                        value: text.to_string(),
                        row: line,
                    })?;
                    if !v.is_finite() {
                        return Err(DataError::NonNumeric {
                            feature: f.name.clone(),
                            value: text.to_string(),
                            row: line,
                        });
                    }
                    row.push(RawValue::Num(v));
                }
                FeatureKind::Categorical { levels } => {
                    let l = levels.iter().position(|l| l == text).ok_or_else(|| DataError::UnknownLevel {
                        feature: f.name.clone(),
                        value: text.to_string(),
                        row: line,
                    })?;
                    row.push(RawValue::Level(l));
                }
            }
        }
        let label = record.get(label_col).unwrap_or("");
        labels.push(u8::from(schema.label.positive.iter().any(|p| p == label)));
        rows.push(row);
    }
    Dataset::from_rows(schema.clone(), rows, labels)
}

/// Write a dataset back out as CSV in its raw form.
pub fn write_csv<W: std::io::Write>(writer: W, data: &Dataset) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let schema = &data.schema;
    let mut header: Vec<String> = schema.features.iter().map(|f| f.name.clone()).collect();
    header.push(schema.label.name.clone());
    w.write_record(&header).map_err(|e| DataError::Io(e.to_string()))?;
    let positive = schema.label.positive.first().cloned().unwrap_or_else(|| "1".into());
    for (row, &y) in data.rows.iter().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().enumerate().map(|(i, v)| format_value(schema, i, v)).collect();
        rec.push(if y == 1 { positive.clone() } else { "0".to_string() });
        w.write_record(&rec).map_err(|e| DataError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}
