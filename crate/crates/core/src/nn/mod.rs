//! A small CPU tensor engine: exactly the layers, losses and optimizer the
//! three networks need, with manual backward passes.

pub mod layers;
pub mod loss;
pub mod optim;
mod tensor;

pub use layers::{Conv2d, ConvBlock, ConvTranspose2x2, HardTanh, Init, InstanceNorm, LeakyRelu, Linear, Tanh};
pub use optim::{Adam, AdamConfig, AdamState};
pub use tensor::{Scalar, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything owning named parameters. Names are dotted paths built from the
/// prefix handed down by the parent.
pub trait Module<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value.len());
        n
    }

    /// `(name, value)` pairs in visiting order.
    fn named_values(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, p| out.push((n.to_string(), p.value.clone())));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
