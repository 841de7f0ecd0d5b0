//! Central finite-difference oracle for tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor on the denominator of the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central differences `(f(p+h) − f(p−h)) / 2h` for every coordinate of every tensor.
pub fn numeric_gradient<F>(mut f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for ti in 0..params.len() {
        let mut g = Tensor::zeros(params[ti].shape());
        for ci in 0..params[ti].numel() {
            let orig = params[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + h;
            let fp = f(&work)?;
            work[ti].data_mut()[ci] = orig - h;
            let fm = f(&work)?;
            work[ti].data_mut()[ci] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at tensor {ti}, coordinate {ci}"
                )));
            }
            g.data_mut()[ci] = (fp - fm) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Builds the objective on a fresh tape with `params` as trainable leaves,
/// compares the reverse-mode gradient to central differences, and returns the
/// largest relative error over all coordinates.
pub fn finite_diff_check<F>(mut build: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite("objective at the base point".into()));
    }
    let grads = tape.backward(loss)?;

    let numeric = numeric_gradient(
        |ps| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
            let loss = build(&mut tape, &vars)?;
            Ok(tape.value(loss).item())
        },
        params,
        h,
    )?;

    let mut worst = 0.0f64;
    for (v, num) in vars.iter().zip(&numeric) {
        let ana = grads.get(*v).expect("trainable leaf");
        for (a, n) in ana.data().iter().zip(num.data()) {
            worst = worst.max(relative_error(*a, *n));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        for h in [1e-1, 1e-3, 1e-5] {
            let g = numeric_gradient(
                |p| Ok(p[0].item() * p[0].item()),
                &[Tensor::scalar(3.0)],
                h,
            )
            .unwrap();
            assert!((g[0].item() - 6.0).abs() < 1e-9, "h={h}: {}", g[0].item());
        }
    }

    #[test]
    fn linear_has_zero_error() {
        let err = finite_diff_check(
            |tape, v| {
                let five = tape.constant(Tensor::new(vec![1, 1], vec![5.0]).unwrap());
                let y = tape.matmul(five, v[0])?;
                Ok(tape.sum(y))
            },
            &[Tensor::new(vec![1, 1], vec![2.0]).unwrap()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        assert!(numeric_gradient(|_| Ok(0.0), &[Tensor::scalar(1.0)], 0.0).is_err());
        assert!(numeric_gradient(|_| Ok(f64::NAN), &[Tensor::scalar(1.0)], 1e-3).is_err());
    }
}
