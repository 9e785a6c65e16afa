use crate::error::{Error, Result};
use crate::ops::activation::sigmoid;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// softplus(x) = max(x, 0) + ln(1 + exp(-|x|)), the stable form.
#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

/// Mean over all elements of softplus(logit) - target * logit.
pub fn bce_with_logits_forward<T: Scalar>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<Tensor<T>> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "bce_with_logits shapes {:?} vs {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    for &t in targets.data() {
        if !(t >= T::zero() && t <= T::one()) {
            return Err(Error::Domain(format!(
                "bce_with_logits target {t} outside [0, 1]"
            )));
        }
    }
    let n = T::from_usize(logits.numel());
    let mut acc = T::zero();
    for (&x, &t) in logits.data().iter().zip(targets.data()) {
        acc += softplus(x) - t * x;
    }
    Ok(Tensor::scalar(acc / n))
}

/// dL/dlogits = (sigmoid(logit) - target) / numel, scaled by the root gradient.
pub fn bce_with_logits_backward<T: Scalar>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
    dy: T,
) -> Tensor<T> {
    let n = T::from_usize(logits.numel());
    let data = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&x, &t)| dy * (sigmoid(x) - t) / n)
        .collect();
    Tensor::new(logits.shape().to_vec(), data).expect("same shape as logits")
}

/// Mean negative log softmax probability of the labeled class over N rows.
pub fn softmax_cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "softmax_cross_entropy: {} labels for {} rows",
            labels.len(),
            n
        )));
    }
    for &l in labels {
        if l >= k {
            return Err(Error::Domain(format!(
                "label {l} out of range for {k} classes"
            )));
        }
    }
    let mut acc = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut lse = T::zero();
        for &v in row {
            lse += (v - max).exp();
        }
        let log_prob = row[label] - max - lse.ln();
        acc -= log_prob;
    }
    Ok(Tensor::scalar(acc / T::from_usize(n)))
}

/// dL/dlogits = (softmax - onehot) / N, scaled by the root gradient.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    dy: T,
) -> Tensor<T> {
    let (n, k) = logits.dims2().expect("validated in forward");
    let n_t = T::from_usize(n);
    let mut out = vec![T::zero(); n * k];
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut lse = T::zero();
        for &v in row {
            lse += (v - max).exp();
        }
        let dst = &mut out[i * k..(i + 1) * k];
        for (j, (d, &v)) in dst.iter_mut().zip(row).enumerate() {
            let p = (v - max).exp() / lse;
            let t = if j == label { T::one() } else { T::zero() };
            *d = dy * (p - t) / n_t;
        }
    }
    Tensor::new(vec![n, k], out).expect("same shape as logits")
}

/// Row-wise softmax probabilities, numerically shifted by the row max.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = logits.dims2()?;
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let dst = &mut out[i * k..(i + 1) * k];
        let mut sum = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d = *d / sum;
        }
    }
    Tensor::new(vec![n, k], out)
}
