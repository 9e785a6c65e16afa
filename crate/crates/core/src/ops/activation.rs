use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise nonlinearity. The relu subgradient at exactly 0 is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

pub fn activation_forward<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::LeakyRelu(alpha) => {
            let a = T::from_f64(alpha);
            x.map(|v| if v > T::zero() { v } else { a * v })
        }
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Tanh => x.map(|v| v.tanh()),
    }
}

/// dL/dx given the saved input, the forward output, and dL/dy.
pub fn activation_backward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    dy: &Tensor<T>,
    kind: Activation,
) -> Tensor<T> {
    let one = T::one();
    let data = match kind {
        Activation::Relu => x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::LeakyRelu(alpha) => {
            let a = T::from_f64(alpha);
            x.data()
                .iter()
                .zip(dy.data())
                .map(|(&xv, &g)| if xv > T::zero() { g } else { a * g })
                .collect()
        }
        Activation::Sigmoid => y
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&s, &g)| g * s * (one - s))
            .collect(),
        Activation::Tanh => y
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&t, &g)| g * (one - t * t))
            .collect(),
    };
    Tensor::new(x.shape().to_vec(), data).expect("same shape as input")
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    // Split on sign to keep exp() from overflowing.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
