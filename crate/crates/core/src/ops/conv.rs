//! CPU convolution kernels via im2col + small GEMMs.
//!
//! Convolution is cross-correlation (no kernel flip). The transposed
//! convolution is wired as the exact adjoint of `conv2d`: its forward is
//! conv's input-backward and vice versa, so the adjoint identity
//! <conv(x,k), y> = <x, conv_t(y,k)> holds by construction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if input + 2 * pad < k {
        return Err(Error::Shape(format!(
            "input extent {input} with padding {pad} smaller than kernel {k}"
        )));
    }
    Ok((input + 2 * pad - k) / stride + 1)
}

/// Output spatial extent of a transposed convolution along one axis.
pub fn conv_transpose_out_extent(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    let raw = (input - 1) * stride + k;
    if raw < 2 * pad + 1 {
        return Err(Error::Shape(format!(
            "transposed conv output extent not positive: input {input}, kernel {k}, stride {stride}, padding {pad}"
        )));
    }
    Ok(raw - 2 * pad)
}

/// out[m x n] += a[m x k] * b[k x n], all row-major.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

/// out[m x n] += a^T[m x k] * b[k x n] where a is stored [k x m].
fn gemm_at_b_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a_row[i];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_pi * bv;
            }
        }
    }
}

/// out[m x n] += a[m x k] * b^T[k x n] where b is stored [n x k].
fn gemm_a_bt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] += acc;
        }
    }
}

/// Unrolls one sample into [Cin*Kh*Kw x OH*OW] columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    debug_assert_eq!(cols.len(), cin * kh * kw * oh * ow);
    for v in cols.iter_mut() {
        *v = T::zero();
    }
    let ohw = oh * ow;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * ohw..][..ohw];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatters columns back into one sample, accumulating.
#[allow(clippy::too_many_arguments)]
fn col2im_acc<T: Scalar>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let ohw = oh * ow;
    for ci in 0..cin {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * ohw..][..ohw];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<((usize, usize, usize, usize), (usize, usize, usize, usize))> {
    let idims = input.dims4()?;
    let kdims = kernel.dims4()?;
    if idims.1 != kdims.1 {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input {:?} has Cin {}, kernel {:?} expects {}",
            input.shape(),
            idims.1,
            kernel.shape(),
            kdims.1
        )));
    }
    if bias.shape() != [kdims.0] {
        return Err(Error::Shape(format!(
            "conv2d bias shape {:?}, expected [{}]",
            bias.shape(),
            kdims.0
        )));
    }
    Ok((idims, kdims))
}

/// Cross-correlation forward: N x Cin x H x W -> N x Cout x OH x OW.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let ((n, cin, h, w), (cout, _, kh, kw)) = check_conv_shapes(input, kernel, bias)?;
    let oh = conv_out_extent(h, kh, stride, pad)?;
    let ow = conv_out_extent(w, kw, stride, pad)?;
    let ckk = cin * kh * kw;
    let ohw = oh * ow;

    let mut out = vec![T::zero(); n * cout * ohw];
    let mut cols = vec![T::zero(); ckk * ohw];
    for s in 0..n {
        im2col(
            &input.data()[s * cin * h * w..][..cin * h * w],
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut cols,
        );
        gemm_acc(
            kernel.data(),
            &cols,
            &mut out[s * cout * ohw..][..cout * ohw],
            cout,
            ckk,
            ohw,
        );
        for co in 0..cout {
            let b = bias.data()[co];
            for v in &mut out[(s * cout + co) * ohw..][..ohw] {
                *v += b;
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out)
}

/// Gradient of conv2d w.r.t. its input. `hw` is the input spatial size.
pub fn conv2d_backward_input<T: Scalar>(
    dout: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
    hw: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, cout, oh, ow) = dout.dims4()?;
    let (kcout, cin, kh, kw) = kernel.dims4()?;
    if cout != kcout {
        return Err(Error::Shape(format!(
            "conv2d backward: dout channels {} vs kernel Cout {}",
            cout, kcout
        )));
    }
    let (h, w) = hw;
    let ckk = cin * kh * kw;
    let ohw = oh * ow;

    let mut dx = vec![T::zero(); n * cin * h * w];
    let mut dcols = vec![T::zero(); ckk * ohw];
    for s in 0..n {
        for v in dcols.iter_mut() {
            *v = T::zero();
        }
        // dcols = K^T (ckk x cout) * dout_s (cout x ohw)
        gemm_at_b_acc(
            kernel.data(),
            &dout.data()[s * cout * ohw..][..cout * ohw],
            &mut dcols,
            ckk,
            cout,
            ohw,
        );
        col2im_acc(
            &dcols,
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut dx[s * cin * h * w..][..cin * h * w],
        );
    }
    Tensor::new(vec![n, cin, h, w], dx)
}

/// Gradient of conv2d w.r.t. its kernel.
pub fn conv2d_backward_kernel<T: Scalar>(
    input: &Tensor<T>,
    dout: &Tensor<T>,
    kernel_shape: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.dims4()?;
    let (dn, cout, oh, ow) = dout.dims4()?;
    if dn != n {
        return Err(Error::Shape("conv2d backward: batch mismatch".into()));
    }
    let (kcout, kcin, kh, kw) = kernel_shape;
    debug_assert_eq!((kcout, kcin), (cout, cin));
    let ckk = cin * kh * kw;
    let ohw = oh * ow;

    let mut dk = vec![T::zero(); cout * ckk];
    let mut cols = vec![T::zero(); ckk * ohw];
    for s in 0..n {
        im2col(
            &input.data()[s * cin * h * w..][..cin * h * w],
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut cols,
        );
        // dK += dout_s (cout x ohw) * cols^T (ohw x ckk)
        gemm_a_bt_acc(
            &dout.data()[s * cout * ohw..][..cout * ohw],
            &cols,
            &mut dk,
            cout,
            ohw,
            ckk,
        );
    }
    Tensor::new(vec![cout, cin, kh, kw], dk)
}

/// Gradient of conv2d w.r.t. its bias: per-channel sum of dout.
pub fn conv2d_backward_bias<T: Scalar>(dout: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, cout, oh, ow) = dout.dims4()?;
    let ohw = oh * ow;
    let mut db = vec![T::zero(); cout];
    for s in 0..n {
        for co in 0..cout {
            let mut acc = T::zero();
            for &v in &dout.data()[(s * cout + co) * ohw..][..ohw] {
                acc += v;
            }
            db[co] += acc;
        }
    }
    Tensor::new(vec![cout], db)
}

/// Transposed convolution forward. Kernel layout is Cin x Cout x Kh x Kw;
/// the op is the adjoint of `conv2d` with that kernel, plus bias.
pub fn conv2d_transpose_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (_, cin, h, w) = input.dims4()?;
    let (kcin, cout, kh, kw) = kernel.dims4()?;
    if cin != kcin {
        return Err(Error::Shape(format!(
            "conv2d_transpose channel mismatch: input {:?} has Cin {}, kernel {:?} expects {}",
            input.shape(),
            cin,
            kernel.shape(),
            kcin
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::Shape(format!(
            "conv2d_transpose bias shape {:?}, expected [{}]",
            bias.shape(),
            cout
        )));
    }
    let oh = conv_transpose_out_extent(h, kh, stride, pad)?;
    let ow = conv_transpose_out_extent(w, kw, stride, pad)?;

    // Viewed as a conv kernel, the layout [Cin][Cout][Kh][Kw] already matches
    // [Cout_conv][Cin_conv][Kh][Kw] with the roles swapped.
    let mut out = conv2d_backward_input(input, kernel, stride, pad, (oh, ow))?;
    let (n, _, _, _) = out.dims4()?;
    let ohw = oh * ow;
    for s in 0..n {
        for co in 0..cout {
            let b = bias.data()[co];
            for v in &mut out.data_mut()[(s * cout + co) * ohw..][..ohw] {
                *v += b;
            }
        }
    }
    Ok(out)
}

pub fn conv2d_transpose_backward_input<T: Scalar>(
    dout: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    // Adjoint of the forward: a plain convolution of dout with the same kernel.
    let (kcin, cout, kh, kw) = kernel.dims4()?;
    let zero_bias = Tensor::zeros(vec![kcin]);
    let _ = (cout, kh, kw);
    conv2d_forward(dout, kernel, &zero_bias, stride, pad)
}

pub fn conv2d_transpose_backward_kernel<T: Scalar>(
    input: &Tensor<T>,
    dout: &Tensor<T>,
    kernel_shape: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (cin, cout, kh, kw) = kernel_shape;
    // Same contraction as conv2d's kernel gradient with input/dout roles swapped.
    conv2d_backward_kernel(dout, input, (cin, cout, kh, kw), stride, pad)
}

pub fn conv2d_transpose_backward_bias<T: Scalar>(dout: &Tensor<T>) -> Result<Tensor<T>> {
    conv2d_backward_bias(dout)
}
