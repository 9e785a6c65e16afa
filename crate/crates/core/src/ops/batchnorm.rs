//! 2-d batch normalization over N, H, W per channel.
//!
//! Normalization uses the biased batch variance; the running statistics track
//! the same estimator through an exponential moving average where `momentum`
//! is the weight of the new batch value.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel statistics saved by the train-mode forward for the backward rule.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn check_bn_shapes<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let dims = x.dims4()?;
    let c = dims.1;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Shape(format!(
            "batchnorm gamma/beta shapes {:?}/{:?}, expected [{}]",
            gamma.shape(),
            beta.shape(),
            c
        )));
    }
    Ok(dims)
}

/// Train-mode forward. Returns the output and the batch statistics used.
pub fn batchnorm2d_train_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchStats<T>)> {
    let (n, c, h, w) = check_bn_shapes(x, gamma, beta)?;
    let m = n * h * w;
    if m < 2 {
        return Err(Error::Domain(format!(
            "batchnorm train mode needs N*H*W >= 2, got {m}"
        )));
    }
    let minv = T::from_f64(1.0 / m as f64);
    let eps_t = T::from_f64(eps);
    let hw = h * w;

    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ci in 0..c {
        let mut acc = T::zero();
        for s in 0..n {
            for &v in &x.data()[(s * c + ci) * hw..][..hw] {
                acc += v;
            }
        }
        let mu = acc * minv;
        let mut vacc = T::zero();
        for s in 0..n {
            for &v in &x.data()[(s * c + ci) * hw..][..hw] {
                let d = v - mu;
                vacc += d * d;
            }
        }
        mean[ci] = mu;
        var[ci] = vacc * minv;
    }

    let mut out = vec![T::zero(); x.numel()];
    for s in 0..n {
        for ci in 0..c {
            let inv_std = T::one() / (var[ci] + eps_t).sqrt();
            let g = gamma.data()[ci];
            let b = beta.data()[ci];
            let src = &x.data()[(s * c + ci) * hw..][..hw];
            let dst = &mut out[(s * c + ci) * hw..][..hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = g * (v - mean[ci]) * inv_std + b;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        BatchStats { mean, var },
    ))
}

/// Eval-mode forward using running statistics.
pub fn batchnorm2d_eval_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_bn_shapes(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm running stats lengths {}/{} vs {c} channels",
            running_mean.len(),
            running_var.len()
        )));
    }
    let eps_t = T::from_f64(eps);
    let hw = h * w;
    let mut out = vec![T::zero(); x.numel()];
    for s in 0..n {
        for ci in 0..c {
            let inv_std = T::one() / (running_var[ci] + eps_t).sqrt();
            let g = gamma.data()[ci];
            let b = beta.data()[ci];
            let src = &x.data()[(s * c + ci) * hw..][..hw];
            let dst = &mut out[(s * c + ci) * hw..][..hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = g * (v - running_mean[ci]) * inv_std + b;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// EMA update of running statistics in place.
pub fn update_running_stats<T: Scalar>(
    running_mean: &mut [T],
    running_var: &mut [T],
    stats: &BatchStats<T>,
    momentum: f64,
) {
    let mom = T::from_f64(momentum);
    let keep = T::one() - mom;
    for (r, &b) in running_mean.iter_mut().zip(&stats.mean) {
        *r = keep * *r + mom * b;
    }
    for (r, &b) in running_var.iter_mut().zip(&stats.var) {
        *r = keep * *r + mom * b;
    }
}

/// Train-mode backward through the batch statistics. Returns (dx, dgamma, dbeta).
pub fn batchnorm2d_train_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &BatchStats<T>,
    dy: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4()?;
    let m = n * h * w;
    let m_t = T::from_usize(m);
    let eps_t = T::from_f64(eps);
    let hw = h * w;

    let mut dx = vec![T::zero(); x.numel()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];

    for ci in 0..c {
        let mu = stats.mean[ci];
        let inv_std = T::one() / (stats.var[ci] + eps_t).sqrt();
        let g = gamma.data()[ci];

        // Channel-wide reductions over dy and dy*xhat, in fixed index order.
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for s in 0..n {
            let xs = &x.data()[(s * c + ci) * hw..][..hw];
            let gs = &dy.data()[(s * c + ci) * hw..][..hw];
            for (&xv, &gv) in xs.iter().zip(gs) {
                let xhat = (xv - mu) * inv_std;
                sum_dy += gv;
                sum_dy_xhat += gv * xhat;
            }
        }
        dgamma[ci] = sum_dy_xhat;
        dbeta[ci] = sum_dy;

        // dx = gamma * inv_std / m * (m*dy - sum(dy) - xhat * sum(dy*xhat))
        let scale = g * inv_std / m_t;
        for s in 0..n {
            let xs = &x.data()[(s * c + ci) * hw..][..hw];
            let gs = &dy.data()[(s * c + ci) * hw..][..hw];
            let ds = &mut dx[(s * c + ci) * hw..][..hw];
            for ((d, &xv), &gv) in ds.iter_mut().zip(xs).zip(gs) {
                let xhat = (xv - mu) * inv_std;
                *d = scale * (m_t * gv - sum_dy - xhat * sum_dy_xhat);
            }
        }
    }

    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Eval-mode backward: an affine map per channel. Returns (dx, dgamma, dbeta).
pub fn batchnorm2d_eval_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    dy: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4()?;
    let eps_t = T::from_f64(eps);
    let hw = h * w;

    let mut dx = vec![T::zero(); x.numel()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ci in 0..c {
        let inv_std = T::one() / (running_var[ci] + eps_t).sqrt();
        let g = gamma.data()[ci];
        for s in 0..n {
            let xs = &x.data()[(s * c + ci) * hw..][..hw];
            let gs = &dy.data()[(s * c + ci) * hw..][..hw];
            let ds = &mut dx[(s * c + ci) * hw..][..hw];
            for ((d, &xv), &gv) in ds.iter_mut().zip(xs).zip(gs) {
                *d = gv * g * inv_std;
                dgamma[ci] += gv * (xv - running_mean[ci]) * inv_std;
                dbeta[ci] += gv;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xorshift64Star;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::<f32>::full(vec![2, 3, 2, 2], 5.0);
        let gamma = Tensor::full(vec![3], 1.0);
        let beta = Tensor::zeros(vec![3]);
        let (y, _) = batchnorm2d_train_forward(&x, &gamma, &beta, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-3), "{:?}", y.data());
    }

    #[test]
    fn zero_gamma_yields_beta_everywhere() {
        let mut rng = Xorshift64Star::stream(3, 1);
        let x = Tensor::<f32>::from_fn(vec![2, 2, 3, 3], |_| rng.next_normal() as f32);
        let gamma = Tensor::zeros(vec![2]);
        let beta = Tensor::<f32>::new(vec![2], vec![0.7, -0.3]).unwrap();
        let (y, _) = batchnorm2d_train_forward(&x, &gamma, &beta, 1e-5).unwrap();
        for s in 0..2 {
            for ci in 0..2 {
                for &v in &y.data()[(s * 2 + ci) * 9..][..9] {
                    assert_eq!(v, beta.data()[ci]);
                }
            }
        }
    }

    #[test]
    fn batch_stats_match_direct_mean_var() {
        let mut rng = Xorshift64Star::stream(5, 2);
        let (n, c, h, w) = (3, 4, 2, 5);
        let x = Tensor::<f64>::from_fn(vec![n, c, h, w], |_| rng.next_normal());
        let gamma = Tensor::full(vec![c], 1.0);
        let beta = Tensor::zeros(vec![c]);
        let (_, stats) = batchnorm2d_train_forward(&x, &gamma, &beta, 1e-5).unwrap();

        let m = (n * h * w) as f64;
        for ci in 0..c {
            let mut vals = Vec::new();
            for s in 0..n {
                vals.extend_from_slice(&x.data()[(s * c + ci) * h * w..][..h * w]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / m;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            assert!((stats.mean[ci] - mean).abs() < 1e-6);
            assert!((stats.var[ci] - var).abs() < 1e-6);
        }
    }

    #[test]
    fn single_element_batch_is_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 3, 1, 1]);
        let gamma = Tensor::full(vec![3], 1.0);
        let beta = Tensor::zeros(vec![3]);
        assert!(batchnorm2d_train_forward(&x, &gamma, &beta, 1e-5).is_err());
    }

    #[test]
    fn normalized_output_has_unit_variance() {
        let mut rng = Xorshift64Star::stream(9, 4);
        let (n, c, h, w) = (4, 2, 2, 2);
        let x = Tensor::<f64>::from_fn(vec![n, c, h, w], |_| 3.0 * rng.next_normal() + 1.0);
        let gamma = Tensor::full(vec![c], 1.0);
        let beta = Tensor::zeros(vec![c]);
        let (y, _) = batchnorm2d_train_forward(&x, &gamma, &beta, 1e-5).unwrap();
        let m = (n * h * w) as f64;
        for ci in 0..c {
            let mut vals = Vec::new();
            for s in 0..n {
                vals.extend_from_slice(&y.data()[(s * c + ci) * h * w..][..h * w]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / m;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            assert!(mean.abs() < 1e-4, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }
}
