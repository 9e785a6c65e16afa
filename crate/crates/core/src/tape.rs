//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every forward operation in execution order, so node
//! inputs always precede the node itself. [`Tape::backward`] walks the record
//! in reverse and accumulates gradients; repeated calls keep accumulating
//! until [`Tape::zero_gradients`]. A tape and its tensors are confined to one
//! thread; tensors are immutable once produced.

use crate::error::{Error, Result};
use crate::ops::activation::{activation_backward, activation_forward, Activation};
use crate::ops::affine::{affine_backward, affine_forward};
use crate::ops::batchnorm::{
    batchnorm2d_eval_backward, batchnorm2d_eval_forward, batchnorm2d_train_backward,
    batchnorm2d_train_forward, BatchStats,
};
use crate::ops::conv::{
    conv2d_backward_bias, conv2d_backward_input, conv2d_backward_kernel, conv2d_forward,
    conv2d_transpose_backward_bias, conv2d_transpose_backward_input,
    conv2d_transpose_backward_kernel, conv2d_transpose_forward,
};
use crate::ops::loss::{
    bce_with_logits_backward, bce_with_logits_forward, softmax_cross_entropy_backward,
    softmax_cross_entropy_forward,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Scalar> {
    Leaf,
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    MulConst {
        a: usize,
        factor: Tensor<T>,
    },
    Affine {
        x: usize,
        w: usize,
        b: usize,
    },
    Conv2d {
        x: usize,
        k: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: usize,
        k: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    BatchNormTrain {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
        stats: BatchStats<T>,
    },
    BatchNormEval {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Activation {
        x: usize,
        kind: Activation,
    },
    Reshape {
        x: usize,
    },
    /// Constant extra channels appended after the input's channels.
    ConcatChannels {
        x: usize,
    },
    /// Constant extra columns appended after the input's columns.
    ConcatCols {
        x: usize,
    },
    GlobalAvgPool {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    BceWithLogits {
        logits: usize,
        targets: Tensor<T>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
    },
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> [Option<usize>; 3] {
        match *self {
            Op::Leaf => [None; 3],
            Op::Add { a, b } | Op::Mul { a, b } => [Some(a), Some(b), None],
            Op::MulConst { a, .. } => [Some(a), None, None],
            Op::Affine { x, w, b } => [Some(x), Some(w), Some(b)],
            Op::Conv2d { x, k, b, .. } => [Some(x), Some(k), Some(b)],
            Op::ConvTranspose2d { x, k, b, .. } => [Some(x), Some(k), Some(b)],
            Op::BatchNormTrain { x, gamma, beta, .. } => [Some(x), Some(gamma), Some(beta)],
            Op::BatchNormEval { x, gamma, beta, .. } => [Some(x), Some(gamma), Some(beta)],
            Op::Activation { x, .. }
            | Op::Reshape { x }
            | Op::ConcatChannels { x }
            | Op::ConcatCols { x }
            | Op::GlobalAvgPool { x }
            | Op::Sum { x }
            | Op::Mean { x } => [Some(x), None, None],
            Op::BceWithLogits { logits, .. } | Op::SoftmaxCrossEntropy { logits, .. } => {
                [Some(logits), None, None]
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::MulConst { .. } => "mul_const",
            Op::Affine { .. } => "affine",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::BatchNormTrain { .. } | Op::BatchNormEval { .. } => "batchnorm2d",
            Op::Activation { .. } => "activation",
            Op::Reshape { .. } => "reshape",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::ConcatCols { .. } => "concat_cols",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v` after a backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_gradients(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        value.assert_finite(op.name())?;
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        Ok(Var(id))
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether
    /// backward exports a gradient for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(Op::Leaf, value)
    }

    /// Elementwise sum of two same-shape values.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "add shapes {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Add { a: a.0, b: b.0 }, value)
    }

    /// Elementwise product of two same-shape values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "mul shapes {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Mul { a: a.0, b: b.0 }, value)
    }

    /// Elementwise product with a constant tensor of the same shape
    /// (spatial masks, dropout masks).
    pub fn mul_const(&mut self, a: Var, factor: Tensor<T>) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.shape() != factor.shape() {
            return Err(Error::Shape(format!(
                "mul_const shapes {:?} vs {:?}",
                ta.shape(),
                factor.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(factor.data())
            .map(|(&x, &f)| x * f)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::MulConst { a: a.0, factor }, value)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let value = affine_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        )?;
        self.push(
            Op::Affine {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            value,
        )
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[k.0].value,
            &self.nodes[b.0].value,
            stride,
            pad,
        )?;
        self.push(
            Op::Conv2d {
                x: x.0,
                k: k.0,
                b: b.0,
                stride,
                pad,
            },
            value,
        )
    }

    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let value = conv2d_transpose_forward(
            &self.nodes[x.0].value,
            &self.nodes[k.0].value,
            &self.nodes[b.0].value,
            stride,
            pad,
        )?;
        self.push(
            Op::ConvTranspose2d {
                x: x.0,
                k: k.0,
                b: b.0,
                stride,
                pad,
            },
            value,
        )
    }

    /// Train-mode batch normalization; also returns the batch statistics so
    /// the caller can fold them into its running state.
    pub fn batchnorm2d_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>)> {
        let (value, stats) = batchnorm2d_train_forward(
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
            eps,
        )?;
        let out = self.push(
            Op::BatchNormTrain {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
                stats: stats.clone(),
            },
            value,
        )?;
        Ok((out, stats))
    }

    pub fn batchnorm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let value = batchnorm2d_eval_forward(
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
            running_mean,
            running_var,
            eps,
        )?;
        self.push(
            Op::BatchNormEval {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
                mean: running_mean.to_vec(),
                var: running_var.to_vec(),
            },
            value,
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let value = activation_forward(&self.nodes[x.0].value, kind);
        self.push(Op::Activation { x: x.0, kind }, value)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshaped(shape)?;
        self.push(Op::Reshape { x: x.0 }, value)
    }

    /// Appends constant channels to a rank-4 value: N x C x H x W plus
    /// N x E x H x W gives N x (C+E) x H x W.
    pub fn concat_channels(&mut self, x: Var, extra: &Tensor<T>) -> Result<Var> {
        let (n, c, h, w) = self.nodes[x.0].value.dims4()?;
        let (en, ec, eh, ew) = extra.dims4()?;
        if (en, eh, ew) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat_channels: input {:?} vs extra {:?}",
                self.nodes[x.0].value.shape(),
                extra.shape()
            )));
        }
        let hw = h * w;
        let mut data = vec![T::zero(); n * (c + ec) * hw];
        for s in 0..n {
            let dst = &mut data[s * (c + ec) * hw..][..(c + ec) * hw];
            dst[..c * hw].copy_from_slice(&self.nodes[x.0].value.data()[s * c * hw..][..c * hw]);
            dst[c * hw..].copy_from_slice(&extra.data()[s * ec * hw..][..ec * hw]);
        }
        let value = Tensor::new(vec![n, c + ec, h, w], data)?;
        self.push(Op::ConcatChannels { x: x.0 }, value)
    }

    /// Appends constant columns to a rank-2 value: N x D plus N x E gives
    /// N x (D+E).
    pub fn concat_cols(&mut self, x: Var, extra: &Tensor<T>) -> Result<Var> {
        let (n, d) = self.nodes[x.0].value.dims2()?;
        let (en, e) = extra.dims2()?;
        if en != n {
            return Err(Error::Shape(format!(
                "concat_cols: input {:?} vs extra {:?}",
                self.nodes[x.0].value.shape(),
                extra.shape()
            )));
        }
        let mut data = vec![T::zero(); n * (d + e)];
        for s in 0..n {
            data[s * (d + e)..s * (d + e) + d]
                .copy_from_slice(&self.nodes[x.0].value.data()[s * d..(s + 1) * d]);
            data[s * (d + e) + d..(s + 1) * (d + e)]
                .copy_from_slice(&extra.data()[s * e..(s + 1) * e]);
        }
        let value = Tensor::new(vec![n, d + e], data)?;
        self.push(Op::ConcatCols { x: x.0 }, value)
    }

    /// Mean over the spatial axes: N x C x H x W -> N x C.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.nodes[x.0].value.dims4()?;
        let hw = h * w;
        let inv = T::from_usize(hw);
        let mut data = vec![T::zero(); n * c];
        for s in 0..n {
            for ci in 0..c {
                let mut acc = T::zero();
                for &v in &self.nodes[x.0].value.data()[(s * c + ci) * hw..][..hw] {
                    acc += v;
                }
                data[s * c + ci] = acc / inv;
            }
        }
        let value = Tensor::new(vec![n, c], data)?;
        self.push(Op::GlobalAvgPool { x: x.0 }, value)
    }

    /// Sum of all elements, as a scalar value.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let mut acc = T::zero();
        for &v in self.nodes[x.0].value.data() {
            acc += v;
        }
        self.push(Op::Sum { x: x.0 }, Tensor::scalar(acc))
    }

    /// Mean of all elements, as a scalar value.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize(self.nodes[x.0].value.numel());
        let mut acc = T::zero();
        for &v in self.nodes[x.0].value.data() {
            acc += v;
        }
        self.push(Op::Mean { x: x.0 }, Tensor::scalar(acc / n))
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var> {
        let value = bce_with_logits_forward(&self.nodes[logits.0].value, &targets)?;
        self.push(
            Op::BceWithLogits {
                logits: logits.0,
                targets,
            },
            value,
        )
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let value = softmax_cross_entropy_forward(&self.nodes[logits.0].value, &labels)?;
        self.push(
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels,
            },
            value,
        )
    }

    /// Reverse pass from a scalar root. Gradients accumulate across calls.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward root must be scalar, shape is {:?}",
                self.nodes[root.0].value.shape()
            )));
        }

        // A node participates if it is reachable from the root and some
        // gradient sink (a requires_grad leaf) is reachable from it.
        let n = self.nodes.len();
        let mut needs = vec![false; n];
        for i in 0..n {
            needs[i] = match &self.nodes[i].op {
                Op::Leaf => self.nodes[i].value.requires_grad,
                op => op
                    .inputs()
                    .iter()
                    .flatten()
                    .any(|&input| needs[input]),
            };
        }
        let mut reachable = vec![false; n];
        reachable[root.0] = true;
        for i in (0..n).rev() {
            if reachable[i] {
                for &input in self.nodes[i].op.inputs().iter().flatten() {
                    reachable[input] = true;
                }
            }
        }

        // Each pass runs on its own buffer; results are then folded into the
        // persistent accumulation so repeated backward calls sum up.
        let mut local: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        local[root.0] = Some(Tensor::scalar(T::one()));

        for i in (0..n).rev() {
            if !reachable[i] || !needs[i] {
                continue;
            }
            let Some(gout) = local[i].take() else {
                continue;
            };
            self.dispatch_backward(i, &gout, &mut local)?;
            local[i] = Some(gout);
        }

        for (slot, pass) in self.grads.iter_mut().zip(local) {
            if let Some(g) = pass {
                accumulate(slot, g)?;
            }
        }
        Ok(())
    }

    fn dispatch_backward(
        &self,
        i: usize,
        gout: &Tensor<T>,
        local: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        // Inputs always precede node i, so the borrows below never alias.
        match &self.nodes[i].op {
            Op::Leaf => Ok(()),
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.acc_local(local, a, gout.clone())?;
                self.acc_local(local, b, gout.clone())
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
                let da = Tensor::new(
                    gout.shape().to_vec(),
                    gout.data()
                        .iter()
                        .zip(tb.data())
                        .map(|(&g, &v)| g * v)
                        .collect(),
                )?;
                let db = Tensor::new(
                    gout.shape().to_vec(),
                    gout.data()
                        .iter()
                        .zip(ta.data())
                        .map(|(&g, &v)| g * v)
                        .collect(),
                )?;
                self.acc_local(local, a, da)?;
                self.acc_local(local, b, db)
            }
            Op::MulConst { a, factor } => {
                let a = *a;
                let data = gout
                    .data()
                    .iter()
                    .zip(factor.data())
                    .map(|(&g, &f)| g * f)
                    .collect();
                let dx = Tensor::new(gout.shape().to_vec(), data)?;
                self.acc_local(local, a, dx)
            }
            Op::Affine { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let (dx, dw, db) =
                    affine_backward(&self.nodes[x].value, &self.nodes[w].value, gout)?;
                self.acc_local(local, x, dx)?;
                self.acc_local(local, w, dw)?;
                self.acc_local(local, b, db)
            }
            Op::Conv2d {
                x,
                k,
                b,
                stride,
                pad,
            } => {
                let (x, k, b, stride, pad) = (*x, *k, *b, *stride, *pad);
                let xv = &self.nodes[x].value;
                let kv = &self.nodes[k].value;
                let (_, _, h, w) = xv.dims4()?;
                let kshape = kv.dims4()?;
                let dx = conv2d_backward_input(gout, kv, stride, pad, (h, w))?;
                let dk = conv2d_backward_kernel(xv, gout, kshape, stride, pad)?;
                let db = conv2d_backward_bias(gout)?;
                self.acc_local(local, x, dx)?;
                self.acc_local(local, k, dk)?;
                self.acc_local(local, b, db)
            }
            Op::ConvTranspose2d {
                x,
                k,
                b,
                stride,
                pad,
            } => {
                let (x, k, b, stride, pad) = (*x, *k, *b, *stride, *pad);
                let xv = &self.nodes[x].value;
                let kv = &self.nodes[k].value;
                let kshape = kv.dims4()?;
                let dx = conv2d_transpose_backward_input(gout, kv, stride, pad)?;
                let dk = conv2d_transpose_backward_kernel(xv, gout, kshape, stride, pad)?;
                let db = conv2d_transpose_backward_bias(gout)?;
                self.acc_local(local, x, dx)?;
                self.acc_local(local, k, dk)?;
                self.acc_local(local, b, db)
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                eps,
                stats,
            } => {
                let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                let stats = stats.clone();
                let (dx, dgamma, dbeta) = batchnorm2d_train_backward(
                    &self.nodes[x].value,
                    &self.nodes[gamma].value,
                    &stats,
                    gout,
                    eps,
                )?;
                self.acc_local(local, x, dx)?;
                self.acc_local(local, gamma, dgamma)?;
                self.acc_local(local, beta, dbeta)
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                eps,
                mean,
                var,
            } => {
                let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                let (mean, var) = (mean.clone(), var.clone());
                let (dx, dgamma, dbeta) = batchnorm2d_eval_backward(
                    &self.nodes[x].value,
                    &self.nodes[gamma].value,
                    &mean,
                    &var,
                    gout,
                    eps,
                )?;
                self.acc_local(local, x, dx)?;
                self.acc_local(local, gamma, dgamma)?;
                self.acc_local(local, beta, dbeta)
            }
            Op::Activation { x, kind } => {
                let (x, kind) = (*x, *kind);
                let dx =
                    activation_backward(&self.nodes[x].value, &self.nodes[i].value, gout, kind);
                self.acc_local(local, x, dx)
            }
            Op::Reshape { x } => {
                let x = *x;
                let shape = self.nodes[x].value.shape().to_vec();
                let dx = Tensor::new(shape, gout.data().to_vec())?;
                self.acc_local(local, x, dx)
            }
            Op::ConcatChannels { x } => {
                let x = *x;
                let (n, c, h, w) = self.nodes[x].value.dims4()?;
                let (_, ctot, _, _) = gout.dims4()?;
                let hw = h * w;
                let mut dx = vec![T::zero(); n * c * hw];
                for s in 0..n {
                    dx[s * c * hw..(s + 1) * c * hw]
                        .copy_from_slice(&gout.data()[s * ctot * hw..][..c * hw]);
                }
                self.acc_local(local, x, Tensor::new(vec![n, c, h, w], dx)?)
            }
            Op::ConcatCols { x } => {
                let x = *x;
                let (n, d) = self.nodes[x].value.dims2()?;
                let (_, dtot) = gout.dims2()?;
                let mut dx = vec![T::zero(); n * d];
                for s in 0..n {
                    dx[s * d..(s + 1) * d].copy_from_slice(&gout.data()[s * dtot..][..d]);
                }
                self.acc_local(local, x, Tensor::new(vec![n, d], dx)?)
            }
            Op::GlobalAvgPool { x } => {
                let x = *x;
                let (n, c, h, w) = self.nodes[x].value.dims4()?;
                let hw = h * w;
                let inv = T::one() / T::from_usize(hw);
                let mut dx = vec![T::zero(); n * c * hw];
                for s in 0..n {
                    for ci in 0..c {
                        let g = gout.data()[s * c + ci] * inv;
                        for d in &mut dx[(s * c + ci) * hw..][..hw] {
                            *d = g;
                        }
                    }
                }
                self.acc_local(local, x, Tensor::new(vec![n, c, h, w], dx)?)
            }
            Op::Sum { x } => {
                let x = *x;
                let g = gout.item()?;
                let shape = self.nodes[x].value.shape().to_vec();
                self.acc_local(local, x, Tensor::full(shape, g))
            }
            Op::Mean { x } => {
                let x = *x;
                let g = gout.item()? / T::from_usize(self.nodes[x].value.numel());
                let shape = self.nodes[x].value.shape().to_vec();
                self.acc_local(local, x, Tensor::full(shape, g))
            }
            Op::BceWithLogits { logits, targets } => {
                let l = *logits;
                let dx = bce_with_logits_backward(&self.nodes[l].value, targets, gout.item()?);
                self.acc_local(local, l, dx)
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let l = *logits;
                let labels = labels.clone();
                let dx =
                    softmax_cross_entropy_backward(&self.nodes[l].value, &labels, gout.item()?);
                self.acc_local(local, l, dx)
            }
        }
    }

    fn acc_local(
        &self,
        local: &mut [Option<Tensor<T>>],
        idx: usize,
        delta: Tensor<T>,
    ) -> Result<()> {
        // Gradients are not exported for leaves that do not require them.
        if matches!(self.nodes[idx].op, Op::Leaf) && !self.nodes[idx].value.requires_grad {
            return Ok(());
        }
        accumulate(&mut local[idx], delta)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, delta: Tensor<T>) -> Result<()> {
    match slot {
        None => *slot = Some(delta),
        Some(existing) => {
            if existing.shape() != delta.shape() {
                return Err(Error::Shape(format!(
                    "gradient accumulation shapes {:?} vs {:?}",
                    existing.shape(),
                    delta.shape()
                )));
            }
            for (e, &d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
    }
    Ok(())
}
