//! Adam, early stopping, and the SD / SI / TL training scenarios.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{SegmentView, SubjectData};
use crate::error::{Error, Result};
use crate::model::{decide, segment_loss, Label, NetworkConfig, NetworkParams, SimilarityScores};
use crate::ndcore::Tensor;
use crate::sigproc::Split;
use crate::stats::{EvalReport, SubjectAccuracy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Sd,
    Si,
    Tl,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(Self::Sd),
            "si" => Ok(Self::Si),
            "tl" => Ok(Self::Tl),
            other => Err(Error::invalid(format!("unknown scenario '{other}' (sd, si, tl)"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sd => "sd",
            Self::Si => "si",
            Self::Tl => "tl",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scenario: Scenario,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epoch `e` shuffles with `seed + e`.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Sd,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0)
        {
            return bad("Adam constants out of range".into());
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Tensors with `frozen[i]` keep their
/// values and moments.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
    frozen: Option<&[bool]>,
) -> Result<()> {
    let mut params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam_step got {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if frozen.is_some_and(|f| f[i]) {
            continue;
        }
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((w, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mj / bc1;
            let vhat = vj / bc2;
            *w -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_val_loss: f64,
    pub initial_val_acc: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; 0 means the initialization.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        match self.best_epoch {
            0 => self.initial_val_loss,
            e => self.epochs[e - 1].val_loss,
        }
    }

    /// `epoch,train_loss,val_loss,val_acc`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_acc\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_acc));
        }
        s
    }
}

/// Mean loss and accuracy over `views` without recording gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
}

impl EvalStats {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total.max(1) as f64
    }
}

fn segment_outcome(params: &NetworkParams, view: &SegmentView<'_>) -> Result<(f64, bool)> {
    let (tape, _, fwd, loss) = segment_loss(params, &view.eeg()?, &view.env()?, view.label, false)?;
    let scores = SimilarityScores(tape.value(fwd.scores).data().to_vec());
    let decision = decide(&scores)?;
    Ok((tape.value(loss).item(), decision.label == view.label))
}

pub fn evaluate_views(params: &NetworkParams, views: &[SegmentView<'_>]) -> Result<EvalStats> {
    if views.is_empty() {
        return Err(Error::invalid("no segments to evaluate"));
    }
    let outcomes: Vec<(f64, bool)> = views
        .par_iter()
        .map(|v| segment_outcome(params, v))
        .collect::<Result<_>>()?;
    let loss = outcomes.iter().map(|o| o.0).sum::<f64>() / outcomes.len() as f64;
    let correct = outcomes.iter().filter(|o| o.1).count();
    Ok(EvalStats {
        loss,
        correct,
        total: outcomes.len(),
    })
}

/// Per-subject accuracy of `params` on one split.
pub fn evaluate_subject(
    params: &NetworkParams,
    subject: &SubjectData,
    split: Split,
) -> Result<SubjectAccuracy> {
    let views = subject.views(split);
    let stats = evaluate_views(params, &views)?;
    SubjectAccuracy::new(subject.subject_id.clone(), stats.total, stats.correct)
}

fn segment_gradients(params: &NetworkParams, view: &SegmentView<'_>) -> Result<(f64, Vec<Tensor>)> {
    let (tape, pv, _, loss) = segment_loss(params, &view.eeg()?, &view.env()?, view.label, true)?;
    let mut grads = tape.backward(loss)?;
    let g = pv
        .vars()
        .iter()
        .map(|v| grads.take(*v).expect("parameters are trainable leaves"))
        .collect();
    Ok((tape.value(loss).item(), g))
}

/// Mean loss and gradient over a batch; summed in batch order so the result
/// does not depend on the thread count.
fn batch_gradients(
    params: &NetworkParams,
    batch: &[&SegmentView<'_>],
) -> Result<(f64, Vec<Tensor>)> {
    let per: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .map(|v| segment_gradients(params, v))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut iter = per.into_iter();
    let (mut loss, mut acc) = iter.next().expect("nonempty batch");
    for (l, g) in iter {
        loss += l;
        for (a, b) in acc.iter_mut().zip(&g) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
    for a in &mut acc {
        a.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
    Ok((loss * scale, acc))
}

fn check_split(views: &[SegmentView<'_>], what: &str) -> Result<()> {
    if views.is_empty() {
        return Err(Error::invalid(format!("{what} split is empty")));
    }
    let has = |l| views.iter().any(|v| v.label == l);
    if !has(Label::Matched) || !has(Label::Mismatched) {
        return Err(Error::invalid(format!("{what} split lacks one of the two labels")));
    }
    Ok(())
}

/// Mini-batch Adam with early stopping on validation loss. Returns the
/// parameters of the best validation epoch (the initialization counts as
/// epoch 0). Tensors with `frozen[i]` are never updated.
pub fn train_views(
    init: &NetworkParams,
    train: &[SegmentView<'_>],
    validation: &[SegmentView<'_>],
    cfg: &TrainConfig,
    frozen: Option<&[bool]>,
) -> Result<(NetworkParams, TrainHistory)> {
    cfg.validate()?;
    check_split(train, "training")?;
    check_split(validation, "validation")?;
    if let Some(f) = frozen {
        if f.len() != init.len() {
            return Err(Error::invalid("freeze mask length differs from parameter count"));
        }
    }
    let initial = evaluate_views(init, validation)?;
    let mut history = TrainHistory {
        initial_val_loss: initial.loss,
        initial_val_acc: initial.accuracy(),
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut params = init.clone();
    let mut best = init.clone();
    let mut best_loss = initial.loss;
    let mut state = AdamState::zeros_like(params.tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&SegmentView<'_>> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradients(&params, &batch)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            adam_step(params.tensors_mut(), &grads, &mut state, cfg, frozen)?;
        }
        let val = evaluate_views(&params, validation)?;
        if !val.loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: val.loss,
            val_acc: val.accuracy(),
        });
        if val.loss < best_loss {
            best_loss = val.loss;
            best = params.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok((best, history))
}

/// Trains on one subject's training split with its validation split.
pub fn train(
    init: &NetworkParams,
    subject: &SubjectData,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainHistory)> {
    train_views(
        init,
        &subject.views(Split::Train),
        &subject.views(Split::Validation),
        cfg,
        None,
    )
}

/// Pooled training and validation splits of every non-holdout subject.
pub fn pooled_views<'a>(subjects: &'a [SubjectData]) -> (Vec<SegmentView<'a>>, Vec<SegmentView<'a>>) {
    let pool = subjects.iter().filter(|s| !s.holdout);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for s in pool {
        train.extend(s.views(Split::Train));
        val.extend(s.views(Split::Validation));
    }
    (train, val)
}

pub fn train_subject_independent(
    init: &NetworkParams,
    subjects: &[SubjectData],
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainHistory)> {
    let (train, val) = pooled_views(subjects);
    if train.is_empty() {
        return Err(Error::invalid("no non-holdout subjects to pool for SI training"));
    }
    train_views(init, &train, &val, cfg, None)
}

/// Fine-tunes only the EEG path of a subject-independent model on one
/// subject; envelope-path tensors are left bit-identical.
pub fn transfer_finetune(
    si_params: &NetworkParams,
    subject: &SubjectData,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainHistory)> {
    let mask = si_params.envelope_mask();
    train_views(
        si_params,
        &subject.views(Split::Train),
        &subject.views(Split::Validation),
        cfg,
        Some(&mask),
    )
}

/// Outcome of one scenario over a subject pool.
#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub report: EvalReport,
    pub histories: Vec<(String, TrainHistory)>,
    /// The pooled model for SI; `None` otherwise.
    pub pooled_model: Option<NetworkParams>,
}

/// SD: one model per subject from scratch. SI: one pooled model (holdout
/// subjects excluded from training) evaluated per subject. TL: SI model
/// (or `si_init` when given) fine-tuned per subject. Reports use the test split.
pub fn run_scenario(
    scenario: Scenario,
    subjects: &[SubjectData],
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    si_init: Option<&NetworkParams>,
) -> Result<ScenarioResult> {
    if subjects.is_empty() {
        return Err(Error::invalid("no subjects"));
    }
    let fresh = NetworkParams::init(net_cfg)?;
    let per_subject = |init: &NetworkParams, finetune: bool| -> Result<Vec<(SubjectAccuracy, TrainHistory)>> {
        subjects
            .par_iter()
            .map(|s| {
                let (p, h) = if finetune {
                    transfer_finetune(init, s, cfg)?
                } else {
                    train(init, s, cfg)?
                };
                Ok((evaluate_subject(&p, s, Split::Test)?, h))
            })
            .collect()
    };
    let (rows, histories, pooled_model) = match scenario {
        Scenario::Sd => {
            let out = per_subject(&fresh, false)?;
            let hist = subjects.iter().zip(&out).map(|(s, o)| (s.subject_id.clone(), o.1.clone())).collect();
            (out.into_iter().map(|o| o.0).collect(), hist, None)
        }
        Scenario::Si => {
            let (model, h) = train_subject_independent(&fresh, subjects, cfg)?;
            let rows = subjects
                .par_iter()
                .map(|s| evaluate_subject(&model, s, Split::Test))
                .collect::<Result<Vec<_>>>()?;
            (rows, vec![("pooled".to_string(), h)], Some(model))
        }
        Scenario::Tl => {
            let si = match si_init {
                Some(p) => p.clone(),
                None => train_subject_independent(&fresh, subjects, cfg)?.0,
            };
            let out = per_subject(&si, true)?;
            let hist = subjects.iter().zip(&out).map(|(s, o)| (s.subject_id.clone(), o.1.clone())).collect();
            (out.into_iter().map(|o| o.0).collect(), hist, None)
        }
    };
    Ok(ScenarioResult {
        scenario,
        report: EvalReport::new(rows)?,
        histories,
        pooled_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::vector(vec![v])
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { max_epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..ok }.validate().is_err());
        assert_eq!("TL".parse::<Scenario>().unwrap(), Scenario::Tl);
        assert!("xx".parse::<Scenario>().is_err());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        for g in [1e-3, 0.5, -7.0, 300.0] {
            let mut p = vec![scalar(1.0)];
            let mut st = AdamState::zeros_like(&p);
            adam_step(p.iter_mut(), &[scalar(g)], &mut st, &cfg, None).unwrap();
            let delta = (p[0].data()[0] - 1.0).abs();
            assert!((delta - 1e-3).abs() < 1e-7, "g={g}: {delta}");
        }
    }

    #[test]
    fn zero_gradient_zero_update() {
        let cfg = TrainConfig::default();
        let mut p = vec![scalar(0.25), Tensor::vector(vec![1.0, -2.0])];
        let before = p.clone();
        let mut st = AdamState::zeros_like(&p);
        let g = vec![scalar(0.0), Tensor::vector(vec![0.0, 0.0])];
        adam_step(p.iter_mut(), &g, &mut st, &cfg, None).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn two_steps_by_hand() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let g = 2.0;
        let mut p = vec![scalar(1.0)];
        let mut st = AdamState::zeros_like(&p);
        adam_step(p.iter_mut(), &[scalar(g)], &mut st, &cfg, None).unwrap();
        adam_step(p.iter_mut(), &[scalar(g)], &mut st, &cfg, None).unwrap();
        let m1 = 0.1 * g;
        let v1 = 0.001 * g * g;
        let w1 = 1.0 - 0.1 * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g;
        let v2 = 0.999 * v1 + 0.001 * g * g;
        let w2 = w1 - 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64 * 0.999)).sqrt() + 1e-8);
        assert!((st.m[0].data()[0] - m2).abs() < 1e-12);
        assert!((st.v[0].data()[0] - v2).abs() < 1e-12);
        assert!((p[0].data()[0] - w2).abs() < 1e-12);
    }

    #[test]
    fn frozen_and_shape_checks() {
        let cfg = TrainConfig::default();
        let mut p = vec![scalar(1.0), scalar(2.0)];
        let mut st = AdamState::zeros_like(&p);
        adam_step(p.iter_mut(), &[scalar(1.0), scalar(1.0)], &mut st, &cfg, Some(&[true, false])).unwrap();
        assert_eq!(p[0].data()[0], 1.0);
        assert_ne!(p[1].data()[0], 2.0);
        let err = adam_step(p.iter_mut(), &[scalar(1.0), Tensor::vector(vec![1.0, 1.0])], &mut st, &cfg, None);
        assert!(err.is_err());
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            initial_val_loss: 0.7,
            initial_val_acc: 0.5,
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.6,
                val_loss: 0.5,
                val_acc: 0.75,
            }],
            best_epoch: 1,
            stopped_early: false,
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,val_loss,val_acc\n1,0.6,0.5,0.75\n");
        assert_eq!(h.best_val_loss(), 0.5);
    }
}
