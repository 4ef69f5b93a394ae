//! Convergence diagnostics and posterior summaries.
//!
//! R-hat is the classic statistic applied to rank-normalized split chains,
//! which makes it invariant under monotone transforms. Bulk ESS uses
//! Geyer's initial monotone sequence on the same rank-normalized chains.
//! Draws are indexed `[chain][draw]`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least 2 chains, got {0}")]
    InsufficientChains(usize),
    #[error("need at least 4 draws per chain, got {0}")]
    InsufficientDraws(usize),
    #[error("chains have unequal lengths")]
    RaggedChains,
    #[error("draws contain non-finite values")]
    NonFinite,
    #[error("no draws to summarize")]
    EmptyBatch,
}

pub const RANK_BINS: usize = 20;
const MIN_DRAWS: usize = 4;

/// A diagnostic value plus whether it came from the zero-variance
/// convention rather than the formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostic {
    pub value: f64,
    pub degenerate: bool,
}

fn check_shape(draws: &[Vec<f64>], min_chains: usize) -> Result<usize, DiagnosticsError> {
    if draws.len() < min_chains {
        return Err(DiagnosticsError::InsufficientChains(draws.len()));
    }
    let n = draws[0].len();
    if draws.iter().any(|c| c.len() != n) {
        return Err(DiagnosticsError::RaggedChains);
    }
    if n < MIN_DRAWS {
        return Err(DiagnosticsError::InsufficientDraws(n));
    }
    if draws.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite);
    }
    Ok(n)
}

fn is_constant(draws: &[Vec<f64>]) -> bool {
    let mut it = draws.iter().flatten();
    let first = it.next().copied().unwrap_or(0.0);
    it.all(|&v| v == first)
}

/// First and last `n / 2` draws of each chain become separate chains.
pub fn split_chains(draws: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * draws.len());
    for c in draws {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
    }
    for c in draws {
        let half = c.len() / 2;
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Average ranks (1-based) of the pooled values, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-normalize pooled draws: Blom offsets `(r - 3/8) / (S + 1/4)` mapped
/// through the standard normal quantile.
pub fn rank_normalize(draws: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = draws.iter().flatten().copied().collect();
    let s = flat.len() as f64;
    let normal = Normal::standard();
    let z: Vec<f64> = average_ranks(&flat)
        .into_iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (s + 0.25)))
        .collect();
    let mut out = Vec::with_capacity(draws.len());
    let mut k = 0;
    for c in draws {
        out.push(z[k..k + c.len()].to_vec());
        k += c.len();
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Classic potential scale reduction on already-split chains.
fn classic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * var(&means);
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    ((b / w + n - 1.0) / n).sqrt()
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear interpolation between order statistics at position `p (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Rank-normalized split R-hat. Constant draws give 1 with the degenerate
/// flag set.
pub fn split_rhat(draws: &[Vec<f64>]) -> Result<Diagnostic, DiagnosticsError> {
    check_shape(draws, 2)?;
    if is_constant(draws) {
        return Ok(Diagnostic { value: 1.0, degenerate: true });
    }
    finite_or_degenerate(classic_rhat(&rank_normalize(&split_chains(draws))))
}

/// Split R-hat on the raw draws, without rank normalization. Unbounded when
/// one chain sits far from the others.
pub fn split_rhat_classic(draws: &[Vec<f64>]) -> Result<Diagnostic, DiagnosticsError> {
    check_shape(draws, 2)?;
    if is_constant(draws) {
        return Ok(Diagnostic { value: 1.0, degenerate: true });
    }
    finite_or_degenerate(classic_rhat(&split_chains(draws)))
}

fn finite_or_degenerate(value: f64) -> Result<Diagnostic, DiagnosticsError> {
    if value.is_finite() {
        Ok(Diagnostic { value, degenerate: false })
    } else {
        Ok(Diagnostic { value: 1.0, degenerate: true })
    }
}

/// Autocovariance at `lag`, normalized by the chain length.
fn autocov(c: &[f64], m: f64, lag: usize) -> f64 {
    let n = c.len();
    (0..n - lag).map(|i| (c[i] - m) * (c[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial positive and monotone sequences.
/// Not capped.
fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let mean_acov = |lag: usize| -> f64 {
        chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, lag)).sum::<f64>() / m as f64
    };
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += var(&means);
    }
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut rho_t = vec![0.0; n];
    let mut even = 1.0;
    rho_t[0] = even;
    let mut odd = rho(1);
    rho_t[1] = odd;
    let mut t = 1;
    while t + 3 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_t[t + 1] = even;
            rho_t[t + 2] = odd;
        }
        t += 2;
    }
    // `t` is odd and at least 1 here, so `max_t` may be -1.
    let max_t = t as isize - 2;
    if even > 0.0 {
        rho_t[(max_t + 1) as usize] = even;
    }
    let mut t = 1isize;
    while t <= max_t - 2 {
        let (i, j) = (t as usize, (t + 1) as usize);
        if rho_t[j] + rho_t[j + 1] > rho_t[i - 1] + rho_t[i] {
            rho_t[j] = (rho_t[i - 1] + rho_t[i]) / 2.0;
            rho_t[j + 1] = rho_t[j];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let head: f64 = rho_t[..(max_t + 1).max(0) as usize].iter().sum();
    let next = rho_t[(max_t + 1) as usize];
    let tau = (-1.0 + 2.0 * head + next).max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size on rank-normalized split chains, capped at
/// the total number of draws. Constant draws give the draw count with the
/// degenerate flag set.
pub fn ess(draws: &[Vec<f64>]) -> Result<Diagnostic, DiagnosticsError> {
    let n = check_shape(draws, 1)?;
    let total = (draws.len() * n) as f64;
    if is_constant(draws) {
        return Ok(Diagnostic { value: total, degenerate: true });
    }
    let raw = ess_raw(&rank_normalize(&split_chains(draws)));
    if raw.is_finite() {
        Ok(Diagnostic { value: raw.min(total), degenerate: false })
    } else {
        Ok(Diagnostic { value: total, degenerate: true })
    }
}

/// Bulk ESS without the cap or the degenerate convention.
pub fn ess_bulk_uncapped(draws: &[Vec<f64>]) -> Result<f64, DiagnosticsError> {
    check_shape(draws, 1)?;
    Ok(ess_raw(&rank_normalize(&split_chains(draws))))
}

/// Per-chain counts of pooled ranks in `bins` equal-width bins spanning the
/// observed rank range.
pub fn rank_histogram(draws: &[Vec<f64>], bins: usize) -> Vec<Vec<usize>> {
    let flat: Vec<f64> = draws.iter().flatten().copied().collect();
    if flat.is_empty() || bins == 0 {
        return vec![vec![0; bins]; draws.len()];
    }
    let ranks = average_ranks(&flat);
    let lo = ranks.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ranks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out = Vec::with_capacity(draws.len());
    let mut k = 0;
    for c in draws {
        let mut counts = vec![0; bins];
        for r in &ranks[k..k + c.len()] {
            let b = if width > 0.0 { ((r - lo) / width) as usize } else { 0 };
            counts[b.min(bins - 1)] += 1;
        }
        out.push(counts);
        k += c.len();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub iqr: f64,
    pub level: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `None` when there are too few chains or draws.
    pub rhat: Option<Diagnostic>,
    pub ess: Option<Diagnostic>,
    /// Monte Carlo standard error of the mean, `sd / sqrt(ess)`.
    pub mcse_mean: Option<f64>,
    /// Why R-hat or ESS is missing.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<String>,
    #[serde(skip)]
    pub rank_hist: Vec<Vec<usize>>,
}

/// Summary of one scalar across chains (`draws[chain][draw]`).
pub fn summarize_scalar(name: &str, draws: &[Vec<f64>], level: f64) -> Result<ParamSummary, DiagnosticsError> {
    let flat: Vec<f64> = draws.iter().flatten().copied().collect();
    if flat.is_empty() {
        return Err(DiagnosticsError::EmptyBatch);
    }
    let s = sorted(&flat);
    let tail = (1.0 - level) / 2.0;
    let mut issues = Vec::new();
    let rhat = split_rhat(draws).map_err(|e| issues.push(format!("rhat: {e}"))).ok();
    let ess = ess(draws).map_err(|e| issues.push(format!("ess: {e}"))).ok();
    let sd = if flat.len() > 1 { var(&flat).sqrt() } else { 0.0 };
    Ok(ParamSummary {
        name: name.to_string(),
        mean: mean(&flat),
        median: quantile_sorted(&s, 0.5),
        sd,
        iqr: quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25),
        level,
        ci_low: quantile_sorted(&s, tail),
        ci_high: quantile_sorted(&s, 1.0 - tail),
        mcse_mean: ess.map(|e| sd / e.value.sqrt()),
        rhat,
        ess,
        issues,
        rank_hist: rank_histogram(draws, RANK_BINS),
    })
}

/// Summaries for every coordinate of vector-valued draws
/// (`draws[chain][draw][param]`), in parallel across parameters.
pub fn summarize(names: &[String], draws: &[Vec<Vec<f64>>], level: f64) -> Result<Vec<ParamSummary>, DiagnosticsError> {
    use rayon::prelude::*;
    if draws.iter().all(|c| c.is_empty()) {
        return Err(DiagnosticsError::EmptyBatch);
    }
    names
        .par_iter()
        .enumerate()
        .map(|(i, name)| {
            let col: Vec<Vec<f64>> = draws.iter().map(|c| c.iter().map(|d| d[i]).collect()).collect();
            summarize_scalar(name, &col, level)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistics() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summarize_scalar("x", &[xs], 0.9).unwrap();
        assert_eq!(s.median, 50.5);
        assert!((s.ci_low - 5.95).abs() < 1e-12);
        assert!((s.ci_high - 95.05).abs() < 1e-12);
        // Linear interpolation gives 75.25 - 25.75.
        assert!((s.iqr - 49.5).abs() < 1e-12);
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn split_keeps_halves() {
        let s = split_chains(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]);
        assert_eq!(s, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
    }
}
