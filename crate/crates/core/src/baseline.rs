//! Linear backward model: a lagged ridge decoder reconstructs the envelope
//! from EEG, and a Spearman threshold decides match/mismatch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::{SegmentView, SubjectData};
use crate::error::{Error, Result};
use crate::model::Label;
use crate::ndcore::Tensor;
use crate::sigproc::Split;
use crate::stats::{average_ranks, SubjectAccuracy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Lags `0..lags` in samples; 17 covers 0–250 ms at 64 Hz.
    pub lags: usize,
    /// Fixed ridge strength; `None` selects from the validation grid.
    pub lambda: Option<f64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            lags: 17,
            lambda: None,
        }
    }
}

/// Relative ridge strengths, scaled by `trace(XᵀX)/d`.
pub const LAMBDA_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

/// `N × (C·L)` design matrix; column `c·L + τ` of row `t` holds
/// `eeg[c, t+τ]`, zero past the end.
pub fn build_lag_matrix(eeg: &Tensor, lags: usize) -> Result<DMatrix<f64>> {
    let (c, n) = eeg.dims2()?;
    if lags == 0 || n <= lags {
        return Err(Error::invalid(format!(
            "lag matrix needs N > L ≥ 1, got N={n}, L={lags}"
        )));
    }
    let mut x = DMatrix::zeros(n, c * lags);
    fill_lag_rows(eeg.data(), c, n, lags, 0, &mut x);
    Ok(x)
}

fn fill_lag_rows(eeg: &[f64], c: usize, n: usize, lags: usize, row0: usize, dst: &mut DMatrix<f64>) {
    let rows = dst.nrows();
    for ch in 0..c {
        let src = &eeg[ch * n..(ch + 1) * n];
        for tau in 0..lags {
            let mut col = dst.column_mut(ch * lags + tau);
            for r in 0..rows {
                let t = row0 + r + tau;
                col[r] = if t < n { src[t] } else { 0.0 };
            }
        }
    }
}

/// `(XᵀX + λI)⁻¹ Xᵀy` by Cholesky.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "fit_ridge",
            lhs: vec![x.nrows(), x.ncols()],
            rhs: vec![y.len()],
        });
    }
    let xtx = x.tr_mul(x);
    let xty = x.tr_mul(&DVector::from_column_slice(y));
    solve_normal(xtx, &xty, lambda)
}

fn solve_normal(mut xtx: DMatrix<f64>, xty: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("ridge lambda must be ≥ 0, got {lambda}")));
    }
    for i in 0..xtx.nrows() {
        xtx[(i, i)] += lambda;
    }
    let scale = xtx.diagonal().amax().max(f64::MIN_POSITIVE);
    let chol = xtx.cholesky().ok_or_else(|| {
        Error::Singular(format!(
            "normal equations are not positive definite at lambda={lambda}; use lambda > 0"
        ))
    })?;
    let min_pivot = chol.l_dirty().diagonal().min();
    if min_pivot * min_pivot <= scale * 1e-14 {
        return Err(Error::Singular(format!(
            "normal equations are numerically singular at lambda={lambda}; use lambda > 0"
        )));
    }
    let w = chol.solve(xty);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge weights".into()));
    }
    Ok(w.iter().copied().collect())
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid(format!(
            "spearman needs equal lengths ≥ 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (a, b) = (a - mean, b - mean);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("spearman is undefined for a constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub channels: usize,
    pub lags: usize,
    pub lambda: f64,
    /// Indexed `c·lags + τ`.
    pub weights: Vec<f64>,
}

impl Decoder {
    pub fn new(channels: usize, lags: usize, lambda: f64, weights: Vec<f64>) -> Result<Self> {
        if lags == 0 || weights.len() != channels * lags {
            return Err(Error::invalid(format!(
                "decoder needs {channels}×{lags} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("decoder weights".into()));
        }
        Ok(Self {
            channels,
            lags,
            lambda,
            weights,
        })
    }

    /// Reconstructed envelope for EEG `[C × N]`.
    pub fn reconstruct(&self, eeg: &Tensor) -> Result<Vec<f64>> {
        let (c, n) = eeg.dims2()?;
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "decoder channels",
                lhs: vec![self.channels, self.lags],
                rhs: eeg.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; n];
        for ch in 0..c {
            let src = &eeg.data()[ch * n..(ch + 1) * n];
            for tau in 0..self.lags.min(n) {
                let g = self.weights[ch * self.lags + tau];
                for (o, s) in out[..n - tau].iter_mut().zip(&src[tau..]) {
                    *o += g * s;
                }
            }
        }
        Ok(out)
    }

    pub fn score(&self, eeg: &Tensor, env: &Tensor) -> Result<f64> {
        let recon = self.reconstruct(eeg)?;
        spearman(&recon, env.data())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub theta: f64,
}

/// Strictly above the threshold means matched.
pub fn classify_score(score: f64, threshold: &ThresholdModel) -> Label {
    if score > threshold.theta {
        Label::Matched
    } else {
        Label::Mismatched
    }
}

pub fn classify_pair(
    decoder: &Decoder,
    threshold: &ThresholdModel,
    eeg_window: &Tensor,
    env_window: &Tensor,
) -> Result<Label> {
    Ok(classify_score(decoder.score(eeg_window, env_window)?, threshold))
}

/// (|FPR − FNR|, accuracy) at `theta`.
pub fn threshold_errors(scores: &[(f64, Label)], theta: f64) -> (f64, f64) {
    let (mut pos, mut neg, mut fn_, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for &(s, label) in scores {
        match label {
            Label::Matched => {
                pos += 1;
                fn_ += usize::from(s <= theta);
            }
            Label::Mismatched => {
                neg += 1;
                fp += usize::from(s > theta);
            }
        }
    }
    let fpr = fp as f64 / neg.max(1) as f64;
    let fnr = fn_ as f64 / pos.max(1) as f64;
    let acc = 1.0 - (fp + fn_) as f64 / scores.len().max(1) as f64;
    ((fpr - fnr).abs(), acc)
}

/// Candidate thresholds are midpoints of consecutive distinct sorted scores.
pub fn threshold_candidates(scores: &[(f64, Label)]) -> Vec<f64> {
    let mut s: Vec<f64> = scores.iter().map(|p| p.0).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    if s.len() == 1 {
        return s;
    }
    s.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
}

/// Equal-error threshold: minimizes |FPR − FNR|, ties to higher accuracy,
/// then lower θ.
pub fn tune_threshold(scores: &[(f64, Label)]) -> Result<ThresholdModel> {
    let has = |l| scores.iter().any(|p| p.1 == l);
    if !has(Label::Matched) || !has(Label::Mismatched) {
        return Err(Error::invalid("threshold tuning needs both labels"));
    }
    if scores.iter().any(|p| !p.0.is_finite()) {
        return Err(Error::NonFinite("validation score".into()));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for theta in threshold_candidates(scores) {
        let (gap, acc) = threshold_errors(scores, theta);
        let better = match best {
            None => true,
            Some((bg, ba, _)) => gap < bg - 1e-12 || ((gap - bg).abs() <= 1e-12 && acc > ba + 1e-12),
        };
        if better {
            best = Some((gap, acc, theta));
        }
    }
    let theta = best.map(|b| b.2).expect("at least one candidate");
    Ok(ThresholdModel {
        theta: theta.clamp(-1.0, 1.0),
    })
}

/// Decoder + threshold fitted on one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearBaseline {
    pub decoder: Decoder,
    pub threshold: ThresholdModel,
    /// Validation Spearman of the full-span reconstruction at the chosen λ.
    pub validation_rho: f64,
}

const ROW_CHUNK: usize = 2048;

/// Accumulates `XᵀX` and `Xᵀy` over every training span of the subject.
fn normal_equations(subject: &SubjectData, lags: usize) -> Result<(DMatrix<f64>, DVector<f64>, usize)> {
    let c = subject.recordings[0].n_channels();
    let d = c * lags;
    let mut xtx = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    let mut rows = 0;
    for rec in &subject.recordings {
        if rec.n_channels() != c {
            return Err(Error::invalid("recordings of one subject differ in channel count"));
        }
        for span in spans_of(rec.n_samples(), Split::Train)? {
            if span.len() <= lags {
                continue;
            }
            let eeg = rec.eeg_window(span.start, span.len())?;
            let env = &rec.envelope_f64()[span.start..span.end];
            let mut r0 = 0;
            while r0 < span.len() {
                let nr = ROW_CHUNK.min(span.len() - r0);
                let mut chunk = DMatrix::zeros(nr, d);
                fill_lag_rows(eeg.data(), c, span.len(), lags, r0, &mut chunk);
                let y = DVector::from_column_slice(&env[r0..r0 + nr]);
                let chunk_t = chunk.transpose();
                xtx.gemm(1.0, &chunk_t, &chunk, 1.0);
                xty.gemv(1.0, &chunk_t, &y, 1.0);
                r0 += nr;
            }
            rows += span.len();
        }
    }
    if rows == 0 {
        return Err(Error::invalid(format!(
            "subject {} has no training data longer than {lags} samples",
            subject.subject_id
        )));
    }
    Ok((xtx, xty, rows))
}

fn spans_of(n: usize, split: Split) -> Result<Vec<crate::sigproc::Span>> {
    if n < 10 {
        return Ok(Vec::new());
    }
    Ok(crate::sigproc::split_recording(n)?.spans(split))
}

/// Mean Spearman between reconstruction and envelope over validation spans.
fn validation_rho(subject: &SubjectData, dec: &Decoder) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for rec in &subject.recordings {
        for span in spans_of(rec.n_samples(), Split::Validation)? {
            if span.len() < 2 {
                continue;
            }
            let eeg = rec.eeg_window(span.start, span.len())?;
            let env = rec.env_window(span.start, span.len())?;
            if let Ok(r) = dec.score(&eeg, &env) {
                total += r;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { f64::NEG_INFINITY } else { total / count as f64 })
}

fn scores_for(dec: &Decoder, views: &[SegmentView<'_>]) -> Result<Vec<(f64, Label)>> {
    views
        .iter()
        .map(|v| Ok((dec.score(&v.eeg()?, &v.env()?)?, v.label)))
        .collect()
}

impl LinearBaseline {
    /// Fits the decoder on the training split, picks λ and θ on validation.
    pub fn fit(subject: &SubjectData, cfg: &BaselineConfig) -> Result<Self> {
        let c = subject.recordings[0].n_channels();
        let (xtx, xty, _) = normal_equations(subject, cfg.lags)?;
        let d = (c * cfg.lags) as f64;
        let lambdas: Vec<f64> = match cfg.lambda {
            Some(l) => vec![l],
            None => {
                let scale = xtx.trace() / d;
                LAMBDA_GRID.iter().map(|g| g * scale).collect()
            }
        };
        let mut best: Option<(f64, Decoder)> = None;
        for lambda in lambdas {
            let w = solve_normal(xtx.clone(), &xty, lambda)?;
            let dec = Decoder::new(c, cfg.lags, lambda, w)?;
            let rho = validation_rho(subject, &dec)?;
            if best.as_ref().is_none_or(|(b, _)| rho > *b) {
                best = Some((rho, dec));
            }
        }
        let (validation_rho, decoder) = best.expect("nonempty lambda list");
        let val = scores_for(&decoder, &subject.views(Split::Validation))?;
        let threshold = tune_threshold(&val)?;
        Ok(Self {
            decoder,
            threshold,
            validation_rho,
        })
    }

    pub fn classify(&self, eeg: &Tensor, env: &Tensor) -> Result<Label> {
        classify_pair(&self.decoder, &self.threshold, eeg, env)
    }

    pub fn evaluate(&self, subject: &SubjectData, split: Split) -> Result<SubjectAccuracy> {
        let views = subject.views(split);
        let mut correct = 0;
        for v in &views {
            if self.classify(&v.eeg()?, &v.env()?)? == v.label {
                correct += 1;
            }
        }
        SubjectAccuracy::new(subject.subject_id.clone(), views.len(), correct)
    }
}
