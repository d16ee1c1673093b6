//! Ranking metrics and the paired Wilcoxon signed-rank test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: need at least one positive and one negative (got {n_pos} / {n_neg})")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("metric undefined: no positives")]
    NoPositives,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("Wilcoxon test needs at least {min} non-zero differences, got {n}")]
    TooFewPairs { n: usize, min: usize },
    #[error("Wilcoxon test undefined: all differences are zero")]
    AllZero,
}

/// Pairwise enumeration is used up to this many samples, the rank-sum formula beyond.
pub const PAIRWISE_LIMIT: usize = 10_000;
/// Exact null distribution is used up to this many non-zero pairs.
pub const EXACT_LIMIT: usize = 12;
pub const WILCOXON_MIN_PAIRS: usize = 5;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    Ok((n_pos, labels.len() - n_pos))
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (n_pos, n_neg) = check(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass { n_pos, n_neg });
    }
    if scores.len() <= PAIRWISE_LIMIT {
        let mut wins = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if !labels[i] {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] {
                    continue;
                }
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        return Ok(wins / (n_pos as f64 * n_neg as f64));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Average precision with tied scores evaluated at a single threshold.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (n_pos, _) = check(scores, labels)?;
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut tp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let mut group_pos = 0;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            group_pos += labels[idx[j]] as usize;
            j += 1;
        }
        seen += j - i;
        tp += group_pos;
        ap += group_pos as f64 * (tp as f64 / seen as f64);
        i = j;
    }
    Ok(ap / n_pos as f64)
}

/// 1-based ranks with ties given their average rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub w_minus: f64,
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided paired signed-rank test on `a - b`; zero differences are dropped.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(MetricError::AllZero);
    }
    if diffs.len() < WILCOXON_MIN_PAIRS {
        return Err(MetricError::TooFewPairs {
            n: diffs.len(),
            min: WILCOXON_MIN_PAIRS,
        });
    }
    Ok(signed_rank(&diffs))
}

/// Signed-rank statistic and two-sided p for non-zero differences, without the
/// minimum-size check.
pub fn signed_rank(diffs: &[f64]) -> WilcoxonResult {
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = ranks.iter().zip(diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let (p_value, exact) = if n <= EXACT_LIMIT {
        (exact_p(&ranks, w_plus), true)
    } else {
        (normal_p(&abs, &ranks, w_plus), false)
    };
    WilcoxonResult {
        w_plus,
        w_minus: total - w_plus,
        n,
        p_value,
        exact,
    }
}

/// `P(|W+ - mu| >= |obs - mu|)` under random signs, counted over doubled
/// (hence integer) midranks.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let obs = (2.0 * w_plus).round() as i64;
    let dev = (2 * obs - total as i64).abs();
    let hits: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= dev)
        .map(|(_, c)| c)
        .sum();
    (hits / 2f64.powi(ranks.len() as i32)).min(1.0)
}

fn normal_p(abs: &[f64], ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mu = n * (n + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w_plus - mu).abs() / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - std.cdf(z))).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub n_pos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub auprc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Each anomaly type against all normal samples.
    pub per_type: BTreeMap<String, TypeMetrics>,
}

/// `types[i]` is `None` for normal samples and the anomaly type otherwise.
pub fn metric_report(scores: &[f64], types: &[Option<String>]) -> Result<MetricReport, MetricError> {
    let labels: Vec<bool> = types.iter().map(Option::is_some).collect();
    let auroc_all = auroc(scores, &labels)?;
    let auprc_all = auprc(scores, &labels)?;
    let mut per_type = BTreeMap::new();
    let kinds: std::collections::BTreeSet<&String> = types.iter().flatten().collect();
    for kind in kinds {
        let (s, l): (Vec<f64>, Vec<bool>) = scores
            .iter()
            .zip(types)
            .filter(|(_, t)| t.is_none() || t.as_ref() == Some(kind))
            .map(|(s, t)| (*s, t.is_some()))
            .unzip();
        per_type.insert(
            kind.clone(),
            TypeMetrics {
                auroc: auroc(&s, &l)?,
                auprc: auprc(&s, &l)?,
                n_pos: l.iter().filter(|&&x| x).count(),
            },
        );
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    Ok(MetricReport {
        auroc: auroc_all,
        auprc: auprc_all,
        n_pos,
        n_neg: labels.len() - n_pos,
        per_type,
    })
}
