//! Fused LSTM recurrence with hand-written backpropagation through time.

use super::ops::{dot, sigmoid};
use super::Tensor;
use crate::error::{Error, Result};

/// Forward activations kept for the backward sweep. Buffers are time-major.
#[derive(Debug)]
pub(crate) struct LstmCache {
    hidden: usize,
    input: usize,
    steps: usize,
    /// `[T × in]`
    xt: Vec<f64>,
    /// `[T × 4H]` activated gates (i, f, c̃, o)
    gates: Vec<f64>,
    /// `[T × H]` cell state after each step
    cell: Vec<f64>,
    /// `[T × H]` tanh of the cell state
    cell_tanh: Vec<f64>,
    /// `[T × H]` hidden state after each step
    h: Vec<f64>,
}

pub(crate) struct LstmGrads {
    pub x: Vec<f64>,
    pub w: [Vec<f64>; 4],
    pub u: [Vec<f64>; 4],
    pub b: [Vec<f64>; 4],
}

fn shape_err(what: &'static str, expected: Vec<usize>, got: &Tensor) -> Error {
    Error::ShapeMismatch {
        op: what,
        lhs: expected,
        rhs: got.shape().to_vec(),
    }
}

pub(crate) fn forward(
    x: &Tensor,
    w: [&Tensor; 4],
    u: [&Tensor; 4],
    b: [&Tensor; 4],
) -> Result<(Tensor, LstmCache)> {
    let (input, steps) = x.dims2()?;
    let hidden = u[0].shape()[0];
    for g in 0..4 {
        if w[g].shape() != [hidden, input] {
            return Err(shape_err("lstm W", vec![hidden, input], w[g]));
        }
        if u[g].shape() != [hidden, hidden] {
            return Err(shape_err("lstm U", vec![hidden, hidden], u[g]));
        }
        if b[g].shape() != [hidden] {
            return Err(shape_err("lstm b", vec![hidden], b[g]));
        }
    }
    let xt = x.transpose()?.into_data();
    let h4 = 4 * hidden;
    let mut gates = vec![0.0; steps * h4];
    let mut cell = vec![0.0; steps * hidden];
    let mut cell_tanh = vec![0.0; steps * hidden];
    let mut hs = vec![0.0; steps * hidden];
    let zero = vec![0.0; hidden];

    for t in 0..steps {
        let x_t = &xt[t * input..(t + 1) * input];
        let h_prev = if t == 0 { &zero[..] } else { &hs[(t - 1) * hidden..t * hidden] };
        let c_prev = if t == 0 { &zero[..] } else { &cell[(t - 1) * hidden..t * hidden] };
        let mut c_new = vec![0.0; hidden];
        let gt = &mut gates[t * h4..(t + 1) * h4];
        for g in 0..4 {
            let (wd, ud, bd) = (w[g].data(), u[g].data(), b[g].data());
            for r in 0..hidden {
                let z = bd[r]
                    + dot(&wd[r * input..(r + 1) * input], x_t)
                    + dot(&ud[r * hidden..(r + 1) * hidden], h_prev);
                gt[g * hidden + r] = if g == 2 { z.tanh() } else { sigmoid(z) };
            }
        }
        for r in 0..hidden {
            let (i, f, cand) = (gt[r], gt[hidden + r], gt[2 * hidden + r]);
            c_new[r] = f * c_prev[r] + i * cand;
        }
        for r in 0..hidden {
            let tc = c_new[r].tanh();
            cell_tanh[t * hidden + r] = tc;
            hs[t * hidden + r] = gt[3 * hidden + r] * tc;
        }
        cell[t * hidden..(t + 1) * hidden].copy_from_slice(&c_new);
    }

    let out = Tensor::from_parts(vec![steps, hidden], hs.clone()).transpose()?;
    Ok((
        out,
        LstmCache {
            hidden,
            input,
            steps,
            xt,
            gates,
            cell,
            cell_tanh,
            h: hs,
        },
    ))
}

/// Backpropagation through time given `d_out[hidden×T]`.
pub(crate) fn backward(
    x: &Tensor,
    w: [&Tensor; 4],
    u: [&Tensor; 4],
    cache: &LstmCache,
    d_out: &[f64],
) -> LstmGrads {
    let LstmCache {
        hidden,
        input,
        steps,
        ..
    } = *cache;
    let h4 = 4 * hidden;
    let mut gx_t = vec![0.0; steps * input];
    let mut gw: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden * input]);
    let mut gu: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden * hidden]);
    let mut gb: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);

    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut da = vec![0.0; h4];
    let zero = vec![0.0; hidden];

    for t in (0..steps).rev() {
        let gt = &cache.gates[t * h4..(t + 1) * h4];
        let tc = &cache.cell_tanh[t * hidden..(t + 1) * hidden];
        let c_prev = if t == 0 { &zero[..] } else { &cache.cell[(t - 1) * hidden..t * hidden] };
        let h_prev = if t == 0 { &zero[..] } else { &cache.h[(t - 1) * hidden..t * hidden] };

        for r in 0..hidden {
            let dh = d_out[r * steps + t] + dh_next[r];
            let (i, f, cand, o) = (gt[r], gt[hidden + r], gt[2 * hidden + r], gt[3 * hidden + r]);
            let d_o = dh * tc[r];
            let dc = dc_next[r] + dh * o * (1.0 - tc[r] * tc[r]);
            let d_i = dc * cand;
            let d_cand = dc * i;
            let d_f = dc * c_prev[r];
            dc_next[r] = dc * f;
            // pre-activation gradients
            da[r] = d_i * i * (1.0 - i);
            da[hidden + r] = d_f * f * (1.0 - f);
            da[2 * hidden + r] = d_cand * (1.0 - cand * cand);
            da[3 * hidden + r] = d_o * o * (1.0 - o);
        }

        let x_t = &cache.xt[t * input..(t + 1) * input];
        dh_next.fill(0.0);
        let gxt = &mut gx_t[t * input..(t + 1) * input];
        for g in 0..4 {
            let (wd, ud) = (w[g].data(), u[g].data());
            for r in 0..hidden {
                let a = da[g * hidden + r];
                if a == 0.0 {
                    continue;
                }
                gb[g][r] += a;
                let gw_row = &mut gw[g][r * input..(r + 1) * input];
                for (o, xv) in gw_row.iter_mut().zip(x_t) {
                    *o += a * xv;
                }
                let gu_row = &mut gu[g][r * hidden..(r + 1) * hidden];
                for (o, hv) in gu_row.iter_mut().zip(h_prev) {
                    *o += a * hv;
                }
                for (o, wv) in gxt.iter_mut().zip(&wd[r * input..(r + 1) * input]) {
                    *o += a * wv;
                }
                for (o, uv) in dh_next.iter_mut().zip(&ud[r * hidden..(r + 1) * hidden]) {
                    *o += a * uv;
                }
            }
        }
    }

    let gx = Tensor::from_parts(vec![steps, input], gx_t)
        .transpose()
        .expect("matrix")
        .into_data();
    debug_assert_eq!(gx.len(), x.numel());
    LstmGrads {
        x: gx,
        w: gw,
        u: gu,
        b: gb,
    }
}
