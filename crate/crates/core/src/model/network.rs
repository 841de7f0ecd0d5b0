use serde::{Deserialize, Serialize};

use super::params::{slot, NetworkParams, ParamVars};
use crate::error::{Error, Result};
use crate::ndcore::{self, Activation, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Matched,
    Mismatched,
}

impl Label {
    /// BCE target: 1 for matched, 0 for mismatched.
    pub fn target(self) -> f64 {
        match self {
            Label::Matched => 1.0,
            Label::Mismatched => 0.0,
        }
    }
}

/// `dim × steps` matrix whose columns have unit norm (or are zero).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence(Tensor);

impl EmbeddingSequence {
    pub fn dim(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.steps())
            .map(|j| self.0.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Normalizes the columns of an arbitrary matrix.
    pub fn from_raw(m: &Tensor) -> Result<Self> {
        Ok(Self(ndcore::unit_normalize_columns(m)?))
    }
}

/// Per-step cosine similarities between the two paths.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityScores(pub Vec<f64>);

impl SimilarityScores {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub label: Label,
    /// Mean per-step match probability.
    pub confidence: f64,
}

/// LSTM tensors in gate order (input, forget, candidate, output).
#[derive(Clone, Debug)]
pub struct LstmWeights {
    pub w: [Tensor; 4],
    pub u: [Tensor; 4],
    pub b: [Tensor; 4],
}

impl LstmWeights {
    pub fn from_params(params: &NetworkParams) -> Self {
        let get = |n: &str| params.get(n).expect("lstm tensor").clone();
        let gates = ["i", "f", "c", "o"];
        Self {
            w: gates.map(|g| get(&format!("lstm.W_{g}"))),
            u: gates.map(|g| get(&format!("lstm.U_{g}"))),
            b: gates.map(|g| get(&format!("lstm.b_{g}"))),
        }
    }
}

/// Tape handles of the LSTM tensors.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
}

impl LstmVars {
    fn from_param_vars(pv: &ParamVars) -> Self {
        Self {
            w: std::array::from_fn(|g| pv.at(slot::LSTM_W + g)),
            u: std::array::from_fn(|g| pv.at(slot::LSTM_U + g)),
            b: std::array::from_fn(|g| pv.at(slot::LSTM_B + g)),
        }
    }
}

/// Unfused reference recurrence built from tape primitives, used to
/// cross-check the fused [`Tape::lstm`] op and to seed non-zero initial states.
///
/// Runs over the columns of `x[in×T]`, returning `[hidden×T]`.
///
/// `i,f,o = σ(W·x + U·h + b)`, `c̃ = tanh(W·x + U·h + b)`,
/// `c = f∘c_prev + i∘c̃`, `h = o∘tanh(c)`.
pub fn lstm_sequence(
    tape: &mut Tape,
    lstm: &LstmVars,
    x: Var,
    h0: Option<Var>,
    c0: Option<Var>,
) -> Result<Var> {
    let steps = tape.value(x).dims2()?.1;
    let hidden = tape.value(lstm.u[0]).dims2()?.0;
    let zero = || Tensor::zeros(&[hidden, 1]);
    let mut h = match h0 {
        Some(v) => v,
        None => tape.constant(zero()),
    };
    let mut c = match c0 {
        Some(v) => v,
        None => tape.constant(zero()),
    };

    // input projections for every step at once
    let mut proj = [x; 4];
    for g in 0..4 {
        let wx = tape.matmul(lstm.w[g], x)?;
        proj[g] = tape.add_col_bias(wx, lstm.b[g])?;
    }

    const KINDS: [Activation; 4] = [
        Activation::Sigmoid,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Sigmoid,
    ];
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut gate = [h; 4];
        for g in 0..4 {
            let xt = tape.column(proj[g], t)?;
            let uh = tape.matmul(lstm.u[g], h)?;
            let pre = tape.add(xt, uh)?;
            gate[g] = tape.activation(pre, KINDS[g]);
        }
        let [i, f, cand, o] = gate;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, cand)?;
        c = tape.add(keep, write)?;
        let squashed = tape.activation(c, Activation::Tanh);
        h = tape.mul(o, squashed)?;
        outputs.push(h);
    }
    tape.stack_columns(&outputs)
}

fn check_input(params: &NetworkParams, x: &Tensor, channels: usize) -> Result<()> {
    let expected = [channels, params.config().window_samples];
    if x.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "network input",
            lhs: expected.to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// conv → time-distributed dense (relu) → time-distributed dense → unit columns.
pub fn eeg_path(tape: &mut Tape, params: &NetworkParams, pv: &ParamVars, eeg: Var) -> Result<Var> {
    check_input(params, tape.value(eeg), params.config().eeg_channels)?;
    let stride = params.config().conv_stride;
    let conv = tape.conv1d(eeg, pv.at(slot::EEG_CONV_W), pv.at(slot::EEG_CONV_B), stride)?;
    let d1 = tape.matmul(pv.at(slot::DENSE1_W), conv)?;
    let d1 = tape.add_col_bias(d1, pv.at(slot::DENSE1_B))?;
    let d1 = tape.activation(d1, Activation::Relu);
    let d2 = tape.matmul(pv.at(slot::DENSE2_W), d1)?;
    let d2 = tape.add_col_bias(d2, pv.at(slot::DENSE2_B))?;
    tape.unit_normalize_columns(d2)
}

/// conv → LSTM over the strided steps → unit columns.
pub fn envelope_path(
    tape: &mut Tape,
    params: &NetworkParams,
    pv: &ParamVars,
    env: Var,
) -> Result<Var> {
    check_input(params, tape.value(env), 1)?;
    let stride = params.config().conv_stride;
    let conv = tape.conv1d(env, pv.at(slot::ENV_CONV_W), pv.at(slot::ENV_CONV_B), stride)?;
    let l = LstmVars::from_param_vars(pv);
    let hidden = tape.lstm(conv, l.w, l.u, l.b)?;
    tape.unit_normalize_columns(hidden)
}

/// Tape handles produced by one forward pass over a segment.
#[derive(Clone, Copy, Debug)]
pub struct SegmentForward {
    pub eeg_embedding: Var,
    pub env_embedding: Var,
    pub scores: Var,
}

pub fn segment_forward(
    tape: &mut Tape,
    params: &NetworkParams,
    pv: &ParamVars,
    eeg: Var,
    env: Var,
) -> Result<SegmentForward> {
    let a = eeg_path(tape, params, pv, eeg)?;
    let b = envelope_path(tape, params, pv, env)?;
    let scores = tape.column_dot(a, b)?;
    Ok(SegmentForward {
        eeg_embedding: a,
        env_embedding: b,
        scores,
    })
}

/// Forward pass plus loss on a fresh tape. Returns the tape for `backward`.
pub fn segment_loss(
    params: &NetworkParams,
    eeg: &Tensor,
    env: &Tensor,
    label: Label,
    trainable: bool,
) -> Result<(Tape, ParamVars, SegmentForward, Var)> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, trainable);
    let x = tape.constant(eeg.clone());
    let e = tape.constant(env.clone());
    let fwd = segment_forward(&mut tape, params, &pv, x, e)?;
    let loss = tape.cosine_bce(fwd.scores, label.target());
    Ok((tape, pv, fwd, loss))
}

pub fn eeg_path_forward(eeg: &Tensor, params: &NetworkParams) -> Result<EmbeddingSequence> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, false);
    let x = tape.constant(eeg.clone());
    let out = eeg_path(&mut tape, params, &pv, x)?;
    Ok(EmbeddingSequence(tape.value(out).clone()))
}

pub fn env_path_forward(env: &Tensor, params: &NetworkParams) -> Result<EmbeddingSequence> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, false);
    let x = tape.constant(env.clone());
    let out = envelope_path(&mut tape, params, &pv, x)?;
    Ok(EmbeddingSequence(tape.value(out).clone()))
}

/// Standalone LSTM over `x[steps×in_dim]`; returns `[steps×hidden]`.
/// Missing initial states default to zero.
pub fn lstm_forward(
    x: &Tensor,
    weights: &LstmWeights,
    h0: Option<&[f64]>,
    c0: Option<&[f64]>,
) -> Result<Tensor> {
    let (_, in_dim) = x.dims2()?;
    let (hidden, w_in) = weights.w[0].dims2()?;
    if w_in != in_dim {
        return Err(Error::ShapeMismatch {
            op: "lstm input",
            lhs: weights.w[0].shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let reg = |ts: &[Tensor; 4], tape: &mut Tape| -> [Var; 4] {
        std::array::from_fn(|g| tape.constant(ts[g].clone()))
    };
    let vars = LstmVars {
        w: reg(&weights.w, &mut tape),
        u: reg(&weights.u, &mut tape),
        b: reg(&weights.b, &mut tape),
    };
    let state = |s: Option<&[f64]>, tape: &mut Tape| -> Result<Option<Var>> {
        s.map(|v| Ok(tape.constant(Tensor::new(vec![hidden, 1], v.to_vec())?)))
            .transpose()
    };
    let h0 = state(h0, &mut tape)?;
    let c0 = state(c0, &mut tape)?;
    let xt = tape.constant(x.transpose()?);
    let out = lstm_sequence(&mut tape, &vars, xt, h0, c0)?;
    tape.value(out).transpose()
}

pub fn similarity_scores(a: &EmbeddingSequence, b: &EmbeddingSequence) -> Result<SimilarityScores> {
    Ok(SimilarityScores(
        ndcore::column_dot(&a.0, &b.0)?.into_data(),
    ))
}

pub fn bce_loss(scores: &SimilarityScores, label: Label) -> f64 {
    ndcore::cosine_bce_value(&scores.0, label.target())
}

/// Per-step match probability `(1 + s)/2`, clamped like the loss.
pub fn match_probability(s: f64) -> f64 {
    (0.5 * (1.0 + s)).clamp(ndcore::PROB_CLAMP, 1.0 - ndcore::PROB_CLAMP)
}

/// Mean probability over steps; matched iff it is at least 0.5.
pub fn decide(scores: &SimilarityScores) -> Result<Decision> {
    if scores.0.is_empty() {
        return Err(Error::invalid("cannot decide on an empty score sequence"));
    }
    let confidence =
        scores.0.iter().map(|&s| match_probability(s)).sum::<f64>() / scores.0.len() as f64;
    let label = if confidence >= 0.5 {
        Label::Matched
    } else {
        Label::Mismatched
    };
    Ok(Decision { label, confidence })
}

/// Scores and decision for one segment without recording gradients.
pub fn classify_segment(
    params: &NetworkParams,
    eeg: &Tensor,
    env: &Tensor,
) -> Result<(SimilarityScores, Decision)> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, false);
    let x = tape.constant(eeg.clone());
    let e = tape.constant(env.clone());
    let fwd = segment_forward(&mut tape, params, &pv, x, e)?;
    let scores = SimilarityScores(tape.value(fwd.scores).data().to_vec());
    let decision = decide(&scores)?;
    Ok((scores, decision))
}
