//! Forward kernels. The tape calls these and records the matching backward
//! rule; they are also usable on plain tensors.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Columns with a smaller norm are divided by this instead.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape_err = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let (m, k) = a.dims2().map_err(|_| shape_err())?;
    let (k2, n) = b.dims2().map_err(|_| shape_err())?;
    if k != k2 {
        return Err(shape_err());
    }
    let mut out = vec![0.0; m * n];
    matmul_acc(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Inner product with four independent accumulators so it vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Number of outputs of a valid (unpadded) strided convolution.
pub fn conv_output_len(input_len: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::invalid("kernel size and stride must be positive"));
    }
    if input_len < kernel {
        return Err(Error::invalid(format!(
            "input length {input_len} shorter than kernel {kernel}"
        )));
    }
    Ok((input_len - kernel) / stride + 1)
}

pub(crate) struct ConvDims {
    pub c_in: usize,
    pub t_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub t_out: usize,
}

pub(crate) fn conv_dims(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<ConvDims> {
    let (c_in, t_in) = x.dims2()?;
    let [c_out, wc_in, k] = w.shape()[..] else {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    };
    if wc_in != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if b.shape() != [c_out] {
        return Err(Error::ShapeMismatch {
            op: "conv1d bias",
            lhs: w.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let t_out = conv_output_len(t_in, k, stride)?;
    Ok(ConvDims {
        c_in,
        t_in,
        c_out,
        k,
        t_out,
    })
}

/// Patch matrix `[c_in·k × t_out]` with `p[c·k + j, t] = x[c, t·stride + j]`.
pub(crate) fn im2col(x: &[f64], d: &ConvDims, stride: usize) -> Vec<f64> {
    let mut p = vec![0.0; d.c_in * d.k * d.t_out];
    for c in 0..d.c_in {
        let xrow = &x[c * d.t_in..(c + 1) * d.t_in];
        for j in 0..d.k {
            let prow = &mut p[(c * d.k + j) * d.t_out..(c * d.k + j + 1) * d.t_out];
            for (t, v) in prow.iter_mut().enumerate() {
                *v = xrow[t * stride + j];
            }
        }
    }
    p
}

/// `y = W·P + b` with `W` viewed as `[c_out × c_in·k]`.
pub(crate) fn conv_from_patches(patches: &[f64], w: &[f64], b: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.c_out * d.t_out];
    for (row, bv) in out.chunks_mut(d.t_out).zip(b) {
        row.fill(*bv);
    }
    matmul_acc(w, patches, &mut out, d.c_out, d.c_in * d.k, d.t_out);
    out
}

/// Valid 1-D cross-correlation: `y[f,t] = b[f] + Σ_c Σ_k w[f,c,k]·x[c, t·stride + k]`.
pub fn conv1d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    let d = conv_dims(x, w, b, stride)?;
    let patches = im2col(x.data(), &d, stride);
    let out = conv_from_patches(&patches, w.data(), b.data(), &d);
    Ok(Tensor::from_parts(vec![d.c_out, d.t_out], out))
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Column norms of a `d×n` matrix.
pub(crate) fn column_norms(data: &[f64], d: usize, n: usize) -> Vec<f64> {
    let mut sq = vec![0.0; n];
    for i in 0..d {
        for (s, v) in sq.iter_mut().zip(&data[i * n..(i + 1) * n]) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Divides every column by `max(‖col‖₂, NORM_EPS)`.
pub fn unit_normalize_columns(m: &Tensor) -> Result<Tensor> {
    let (d, n) = m.dims2()?;
    let norms = column_norms(m.data(), d, n);
    Ok(divide_columns(m, &norms))
}

pub(crate) fn divide_columns(m: &Tensor, norms: &[f64]) -> Tensor {
    let n = norms.len();
    let data = m
        .data()
        .iter()
        .enumerate()
        .map(|(idx, v)| v / norms[idx % n].max(NORM_EPS))
        .collect();
    Tensor::from_parts(m.shape().to_vec(), data)
}

/// Per-column inner products of two equally shaped `d×n` matrices.
pub fn column_dot(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            op: "column_dot",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (d, n) = a.dims2()?;
    let mut out = vec![0.0; n];
    for i in 0..d {
        let (ar, br) = (&a.data()[i * n..(i + 1) * n], &b.data()[i * n..(i + 1) * n]);
        for ((o, x), y) in out.iter_mut().zip(ar).zip(br) {
            *o += x * y;
        }
    }
    Ok(Tensor::vector(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_is_noop() {
        let b = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn matmul_by_hand() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[&[1.0], &[1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn conv_lengths() {
        assert_eq!(conv_output_len(640, 10, 3).unwrap(), 211);
        assert_eq!(conv_output_len(320, 10, 3).unwrap(), 104);
        assert!(conv_output_len(9, 10, 3).is_err());
    }

    #[test]
    fn conv_lengths_exhaustive() {
        for t in 1..=32usize {
            for k in 1..=t {
                for s in 1..=k {
                    let x = Tensor::zeros(&[1, t]);
                    let w = Tensor::zeros(&[1, 1, k]);
                    let b = Tensor::zeros(&[1]);
                    let y = conv1d(&x, &w, &b, s).unwrap();
                    assert_eq!(y.shape(), &[1, (t - k) / s + 1]);
                }
            }
        }
    }

    #[test]
    fn conv_by_hand() {
        let x = Tensor::new(vec![1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv1d(&x, &w, &b, 1).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0, 7.0, 9.0]);
    }

    #[test]
    fn conv_rejects_short_input() {
        let x = Tensor::zeros(&[1, 4]);
        let w = Tensor::zeros(&[1, 1, 5]);
        assert!(conv1d(&x, &w, &Tensor::zeros(&[1]), 1).is_err());
    }

    #[test]
    fn activations_at_reference_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn normalize_columns() {
        let m = Tensor::from_rows(&[&[3.0, 0.0], &[4.0, 0.0]]).unwrap();
        let y = unit_normalize_columns(&m).unwrap();
        assert!((y.at(0, 0) - 0.6).abs() < 1e-15);
        assert!((y.at(1, 0) - 0.8).abs() < 1e-15);
        assert_eq!(y.column(1), vec![0.0, 0.0]);
    }
}
