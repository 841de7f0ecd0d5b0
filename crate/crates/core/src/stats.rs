//! Accuracy aggregation, per-subject reports, and significance tests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Fraction of positions where `labels` and `predictions` agree.
pub fn accuracy<T: PartialEq>(labels: &[T], predictions: &[T]) -> Result<f64> {
    if labels.is_empty() || labels.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "accuracy needs equal nonzero lengths, got {} and {}",
            labels.len(),
            predictions.len()
        )));
    }
    let correct = labels.iter().zip(predictions).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(sum of positive ranks, sum of negative ranks)
    pub w: f64,
    /// Two-sided.
    pub p: f64,
    /// Number of nonzero differences.
    pub n: usize,
    /// Normal-approximation statistic, reported when `method` is `Normal`.
    pub z: Option<f64>,
    pub method: PMethod,
}

/// Largest number of nonzero differences that gets an exact p-value.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::invalid(
            "all paired differences are zero; the test carries no information",
        ));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired difference".into()));
    }
    let mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&mags);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w = w_plus.min(total - w_plus);
    let n = diffs.len();
    if n <= WILCOXON_EXACT_MAX_N {
        Ok(WilcoxonResult {
            w,
            p: exact_p(&ranks, w),
            n,
            z: None,
            method: PMethod::Exact,
        })
    } else {
        let (z, p) = normal_p(&ranks, w);
        Ok(WilcoxonResult {
            w,
            p,
            n,
            z: Some(z),
            method: PMethod::Normal,
        })
    }
}

/// `min(1, 2·P(W⁺ ≤ w))` over all equally likely sign patterns. Average
/// ranks are multiples of 1/2, so the count runs over doubled ranks.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let tail: f64 = counts[..=limit].iter().sum();
    let p = 2.0 * tail / 2f64.powi(ranks.len() as i32);
    p.min(1.0)
}

/// Normal approximation with tie-corrected variance and continuity correction.
fn normal_p(ranks: &[f64], w: f64) -> (f64, f64) {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w - mean + 0.5) / var.sqrt()).min(0.0);
    let phi = Normal::standard().cdf(z);
    (z, (2.0 * phi).min(1.0))
}

/// `P(X ≥ correct)` for `X ~ Binomial(total, 1/2)`.
pub fn binomial_above_chance(correct: usize, total: usize) -> Result<f64> {
    if total == 0 || correct > total {
        return Err(Error::invalid(format!(
            "binomial tail needs 0 ≤ correct ≤ total and total ≥ 1, got {correct}/{total}"
        )));
    }
    let ln_half = (total as f64) * 0.5f64.ln();
    let p: f64 = (correct..=total)
        .map(|k| (ln_binomial(total as u64, k as u64) + ln_half).exp())
        .sum();
    Ok(p.min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty list"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectAccuracy {
    pub subject_id: String,
    pub n_segments: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

impl SubjectAccuracy {
    pub fn new(subject_id: impl Into<String>, n_segments: usize, n_correct: usize) -> Result<Self> {
        if n_segments == 0 || n_correct > n_segments {
            return Err(Error::invalid(format!(
                "{n_correct} correct of {n_segments} segments"
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            n_segments,
            n_correct,
            accuracy: n_correct as f64 / n_segments as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subjects: Vec<SubjectAccuracy>,
    pub summary: Summary,
}

impl EvalReport {
    pub fn new(subjects: Vec<SubjectAccuracy>) -> Result<Self> {
        let acc: Vec<f64> = subjects.iter().map(|s| s.accuracy).collect();
        let summary = summarize(&acc)?;
        Ok(Self { subjects, summary })
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.accuracy).collect()
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.summary.mean
    }

    pub fn pooled(&self) -> (usize, usize) {
        self.subjects
            .iter()
            .fold((0, 0), |(c, n), s| (c + s.n_correct, n + s.n_segments))
    }

    /// `subject_id,n_segments,n_correct,accuracy`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for s in &self.subjects {
            w.serialize(s).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = r.headers().map_err(csv_err)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["subject_id", "n_segments", "n_correct", "accuracy"] {
            return Err(Error::invalid(format!(
                "{}: expected header subject_id,n_segments,n_correct,accuracy",
                path.display()
            )));
        }
        let mut subjects = Vec::new();
        for row in r.deserialize() {
            let s: SubjectAccuracy = row.map_err(csv_err)?;
            subjects.push(SubjectAccuracy::new(s.subject_id, s.n_segments, s.n_correct)?);
        }
        EvalReport::new(subjects)
    }
}

/// Output of comparing two reports subject by subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub test: String,
    #[serde(rename = "W")]
    pub w: f64,
    pub p: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

/// Wilcoxon test on accuracies paired by subject id; both reports must
/// cover the same subjects.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    let mut ids_a: Vec<&str> = a.subjects.iter().map(|s| s.subject_id.as_str()).collect();
    let mut ids_b: Vec<&str> = b.subjects.iter().map(|s| s.subject_id.as_str()).collect();
    ids_a.sort_unstable();
    ids_b.sort_unstable();
    if ids_a != ids_b {
        return Err(Error::invalid(format!(
            "reports cover different subjects: {ids_a:?} vs {ids_b:?}"
        )));
    }
    let lookup = |r: &EvalReport, id: &str| {
        r.subjects.iter().find(|s| s.subject_id == id).map(|s| s.accuracy).unwrap_or(f64::NAN)
    };
    let xa: Vec<f64> = ids_a.iter().map(|id| lookup(a, id)).collect();
    let xb: Vec<f64> = ids_a.iter().map(|id| lookup(b, id)).collect();
    let res = wilcoxon_signed_rank(&xa, &xb)?;
    Ok(Comparison {
        test: "wilcoxon".into(),
        w: res.w,
        p: res.p,
        n: res.n,
        z: res.z,
    })
}
