//! Finite-difference oracle harness. Runs in f64: analytic gradients come
//! from the tape, numeric ones from central differences, and the report is
//! the worst relative error over all coordinates.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;

/// A scalar-valued function expressed through tape operations.
pub trait TapeFn: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>> TapeFn for F {}

fn eval<F: TapeFn>(f: &F, point: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let root = f(&mut tape, &vars)?;
    let out = tape.value(root).item()?;
    if !out.is_finite() {
        return Err(Error::NonFinite("grad_check evaluation".into()));
    }
    Ok(out)
}

/// Tape-computed gradients of `f` w.r.t. every tensor in `point`.
pub fn analytic_gradients<F: TapeFn>(f: &F, point: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect::<Result<_>>()?;
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    vars.iter()
        .zip(point)
        .map(|(&v, t)| {
            Ok(tape
                .grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        })
        .collect()
}

/// Central-difference gradients with step `h`, one coordinate at a time.
pub fn numeric_gradients<F: TapeFn>(
    f: &F,
    point: &[Tensor<f64>],
    h: f64,
) -> Result<Vec<Tensor<f64>>> {
    let mut grads = Vec::with_capacity(point.len());
    for (ti, t) in point.iter().enumerate() {
        let mut g = Tensor::zeros(t.shape().to_vec());
        for i in 0..t.numel() {
            let mut shifted: Vec<Tensor<f64>> = point.to_vec();
            shifted[ti].data_mut()[i] = t.data()[i] + h;
            let plus = eval(f, &shifted)?;
            shifted[ti].data_mut()[i] = t.data()[i] - h;
            let minus = eval(f, &shifted)?;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// max over coordinates of |a - n| / max(1e-8, |a| + |n|).
pub fn max_relative_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = (av.abs() + nv.abs()).max(1e-8);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

/// Runs the whole harness, returning the worst relative error.
pub fn grad_check<F: TapeFn>(f: F, point: &[Tensor<f64>], h: f64) -> Result<f64> {
    let analytic = analytic_gradients(&f, point)?;
    let numeric = numeric_gradients(&f, point, h)?;
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xorshift64Star;

    fn sum_of_squares(tape: &mut Tape<f64>, vars: &[Var]) -> crate::error::Result<Var> {
        let sq = tape.mul(vars[0], vars[0])?;
        tape.sum(sq)
    }

    #[test]
    fn exact_polynomial_checks_tightly() {
        // f(x) = sum(x^2): central differences are exact for quadratics.
        let mut rng = Xorshift64Star::stream(21, 1);
        let x = Tensor::<f64>::from_fn(vec![2, 3], |_| rng.next_normal());
        let err = grad_check(sum_of_squares, &[x], DEFAULT_STEP).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = Xorshift64Star::stream(22, 2);
        let x = Tensor::<f64>::from_fn(vec![4], |_| rng.next_normal() + 2.0);
        let analytic = analytic_gradients(&sum_of_squares, &[x.clone()]).unwrap();
        let numeric = numeric_gradients(&sum_of_squares, &[x], DEFAULT_STEP).unwrap();
        let doubled: Vec<_> = analytic.iter().map(|g| g.map(|v| 2.0 * v)).collect();
        assert!(max_relative_error(&analytic, &numeric) < 1e-6);
        assert!(max_relative_error(&doubled, &numeric) > 0.3);
    }

    #[test]
    fn non_finite_evaluation_errors() {
        let x = Tensor::<f64>::new(vec![1], vec![f64::MAX]).unwrap();
        let res = grad_check(sum_of_squares, &[x], DEFAULT_STEP);
        assert!(res.is_err());
    }
}
