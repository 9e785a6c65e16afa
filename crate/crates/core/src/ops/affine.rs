use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// x (N x Din) * w (Din x Dout) + b (Dout).
pub fn affine_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, din) = x.dims2()?;
    let (wdin, dout) = w.dims2()?;
    if din != wdin {
        return Err(Error::Shape(format!(
            "affine inner extents disagree: input {:?} vs weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if b.shape() != [dout] {
        return Err(Error::Shape(format!(
            "affine bias shape {:?}, expected [{}]",
            b.shape(),
            dout
        )));
    }
    let mut out = vec![T::zero(); n * dout];
    for i in 0..n {
        let x_row = &x.data()[i * din..(i + 1) * din];
        let out_row = &mut out[i * dout..(i + 1) * dout];
        out_row.copy_from_slice(b.data());
        for (p, &xv) in x_row.iter().enumerate() {
            let w_row = &w.data()[p * dout..(p + 1) * dout];
            for (o, &wv) in out_row.iter_mut().zip(w_row) {
                *o += xv * wv;
            }
        }
    }
    Tensor::new(vec![n, dout], out)
}

/// Returns (dx, dw, db).
pub fn affine_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, din) = x.dims2()?;
    let (_, dout) = w.dims2()?;

    // dx = dy * w^T
    let mut dx = vec![T::zero(); n * din];
    for i in 0..n {
        let dy_row = &dy.data()[i * dout..(i + 1) * dout];
        let dx_row = &mut dx[i * din..(i + 1) * din];
        for (p, dxv) in dx_row.iter_mut().enumerate() {
            let w_row = &w.data()[p * dout..(p + 1) * dout];
            let mut acc = T::zero();
            for (&g, &wv) in dy_row.iter().zip(w_row) {
                acc += g * wv;
            }
            *dxv = acc;
        }
    }

    // dw = x^T * dy
    let mut dw = vec![T::zero(); din * dout];
    for i in 0..n {
        let x_row = &x.data()[i * din..(i + 1) * din];
        let dy_row = &dy.data()[i * dout..(i + 1) * dout];
        for (p, &xv) in x_row.iter().enumerate() {
            let dw_row = &mut dw[p * dout..(p + 1) * dout];
            for (d, &g) in dw_row.iter_mut().zip(dy_row) {
                *d += xv * g;
            }
        }
    }

    // db = column sums of dy
    let mut db = vec![T::zero(); dout];
    for i in 0..n {
        let dy_row = &dy.data()[i * dout..(i + 1) * dout];
        for (d, &g) in db.iter_mut().zip(dy_row) {
            *d += g;
        }
    }

    Ok((
        Tensor::new(vec![n, din], dx)?,
        Tensor::new(vec![din, dout], dw)?,
        Tensor::new(vec![dout], db)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input_through() {
        let x = Tensor::<f32>::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::<f32>::from_fn(vec![3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(vec![3]);
        let y = affine_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_weight_broadcasts_bias() {
        let x = Tensor::<f32>::full(vec![3, 4], 2.5);
        let w = Tensor::zeros(vec![4, 2]);
        let b = Tensor::<f32>::new(vec![2], vec![0.5, -1.5]).unwrap();
        let y = affine_forward(&x, &w, &b).unwrap();
        for row in 0..3 {
            assert_eq!(&y.data()[row * 2..row * 2 + 2], &[0.5, -1.5]);
        }
    }

    #[test]
    fn inner_extent_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros(vec![2, 3]);
        let w = Tensor::<f32>::zeros(vec![4, 2]);
        let b = Tensor::zeros(vec![2]);
        assert!(affine_forward(&x, &w, &b).is_err());
    }
}
