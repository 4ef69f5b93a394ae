//! The samples file: one CSV row per draw, shared by `explain` and
//! `baseline` and read back by `evaluate` and `diagnose`.
//!
//! Columns: `instance, chain, draw, log_posterior, divergent`, then one
//! column per constrained parameter, then `x:<feature>` decoded values,
//! `prob`, `prob_discrete`, `valid`, and `enc:<j>` discretized encodings.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use recourse_core::data::{format_value, FeatureSchema};
use recourse_core::model::CounterfactualSample;

const FIXED: [&str; 5] = ["instance", "chain", "draw", "log_posterior", "divergent"];
const TAIL: [&str; 3] = ["prob", "prob_discrete", "valid"];

/// One draw as written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub instance: usize,
    pub chain: usize,
    pub draw: usize,
    pub log_posterior: f64,
    pub divergent: bool,
    pub params: Vec<f64>,
    pub decoded: Vec<String>,
    pub prob: f64,
    pub prob_discrete: f64,
    pub valid: bool,
    pub encoded: Vec<f64>,
}

impl SampleRow {
    pub fn new(
        instance: usize,
        chain: usize,
        draw: usize,
        divergent: bool,
        params: Vec<f64>,
        sample: &CounterfactualSample,
        schema: &FeatureSchema,
    ) -> Self {
        Self {
            instance,
            chain,
            draw,
            log_posterior: sample.log_posterior,
            divergent,
            params,
            decoded: sample.raw.iter().enumerate().map(|(i, v)| format_value(schema, i, v)).collect(),
            prob: sample.prob,
            prob_discrete: sample.prob_discrete,
            valid: sample.is_valid(),
            encoded: sample.encoded.clone(),
        }
    }
}

/// A parsed samples file.
#[derive(Debug, Clone, Default)]
pub struct SamplesFile {
    pub param_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub rows: Vec<SampleRow>,
}

impl SamplesFile {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
        h.extend(self.param_names.iter().cloned());
        h.extend(self.feature_names.iter().map(|f| format!("x:{f}")));
        h.extend(TAIL.iter().map(|s| s.to_string()));
        let width = self.rows.first().map_or(0, |r| r.encoded.len());
        h.extend((0..width).map(|j| format!("enc:{j}")));
        h
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.instance.to_string(),
                r.chain.to_string(),
                r.draw.to_string(),
                r.log_posterior.to_string(),
                u8::from(r.divergent).to_string(),
            ];
            rec.extend(r.params.iter().map(f64::to_string));
            rec.extend(r.decoded.iter().cloned());
            rec.push(r.prob.to_string());
            rec.push(r.prob_discrete.to_string());
            rec.push(u8::from(r.valid).to_string());
            rec.extend(r.encoded.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header.len() < FIXED.len() || header[..FIXED.len()] != FIXED {
            bail!("{}: not a samples file", path.display());
        }
        let feat_start = header.iter().position(|h| h.starts_with("x:")).context("no x: columns")?;
        let tail_start = header.iter().position(|h| h == TAIL[0]).context("no prob column")?;
        if header.get(tail_start..tail_start + TAIL.len()).map(|t| t == TAIL) != Some(true) {
            bail!("{}: malformed tail columns", path.display());
        }
        let enc_start = tail_start + TAIL.len();
        let mut file = SamplesFile {
            param_names: header[FIXED.len()..feat_start].to_vec(),
            feature_names: header[feat_start..tail_start].iter().map(|h| h[2..].to_string()).collect(),
            rows: Vec::new(),
        };
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec[j].parse().with_context(|| format!("row {}: bad number in '{}'", line + 1, header[j]))
            };
            let int = |j: usize| -> Result<usize> {
                rec[j].parse().with_context(|| format!("row {}: bad integer in '{}'", line + 1, header[j]))
            };
            file.rows.push(SampleRow {
                instance: int(0)?,
                chain: int(1)?,
                draw: int(2)?,
                log_posterior: num(3)?,
                divergent: int(4)? != 0,
                params: (FIXED.len()..feat_start).map(num).collect::<Result<_>>()?,
                decoded: (feat_start..tail_start).map(|j| rec[j].to_string()).collect(),
                prob: num(tail_start)?,
                prob_discrete: num(tail_start + 1)?,
                valid: int(tail_start + 2)? != 0,
                encoded: (enc_start..header.len()).map(num).collect::<Result<_>>()?,
            });
        }
        Ok(file)
    }

    /// Instance indices in first-seen order.
    pub fn instances(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.instance) {
                seen.push(r.instance);
            }
        }
        seen
    }

    /// Rows of one instance grouped by chain, each chain in draw order.
    pub fn chains_of(&self, instance: usize) -> Vec<Vec<&SampleRow>> {
        let mut by_chain: BTreeMap<usize, Vec<&SampleRow>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.instance == instance) {
            by_chain.entry(r.chain).or_default().push(r);
        }
        by_chain
            .into_values()
            .map(|mut c| {
                c.sort_by_key(|r| r.draw);
                c
            })
            .collect()
    }

    /// Discretized encodings and their classifier outputs for one instance.
    pub fn set_of(&self, instance: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.rows.iter().filter(|r| r.instance == instance).map(|r| (r.encoded.clone(), r.prob_discrete)).unzip()
    }
}
