use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Module, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Adam with bias correction, keyed by parameter name so state survives
/// checkpoint round trips.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    config: AdamConfig,
    steps: u64,
    state: BTreeMap<String, AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn from_parts(config: AdamConfig, steps: u64, state: BTreeMap<String, AdamState<T>>) -> Self {
        Self { config, steps, state }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn state(&self) -> &BTreeMap<String, AdamState<T>> {
        &self.state
    }

    /// Apply one update to every parameter of `module` using its accumulated
    /// gradients.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M, prefix: &str) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let step_size = T::lit(c.lr / bc1);
        let inv_bc2_sqrt = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(c.eps);
        let state = &mut self.state;
        module.visit_mut(prefix, &mut |name, p| {
            let s = state.entry(name.to_string()).or_insert_with(|| AdamState {
                m: Tensor::zeros(p.value.shape()),
                v: Tensor::zeros(p.value.shape()),
            });
            let it = p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(s.m.data_mut().iter_mut().zip(s.v.data_mut().iter_mut()));
            for ((w, &g), (m, v)) in it {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w = *w - step_size * *m / ((*v).sqrt() * inv_bc2_sqrt + eps);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{join, Param};

    struct Quadratic {
        p: Param<f64>,
    }

    impl Module<f64> for Quadratic {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
            f(&join(prefix, "p"), &self.p);
        }

        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f(&join(prefix, "p"), &mut self.p);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut q = Quadratic {
            p: Param::new(Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap()),
        };
        q.p.grad = Tensor::from_vec(&[2], vec![3.0, -0.5]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut q, "q");
        // bias-corrected first step is lr · sign(g)
        assert!((q.p.value.data()[0] - (1.0 - 2e-4)).abs() < 1e-9);
        assert!((q.p.value.data()[1] - (-1.0 + 2e-4)).abs() < 1e-9);
        assert!(adam.state().contains_key("q.p"));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut q = Quadratic {
            p: Param::new(Tensor::from_vec(&[1], vec![3.0]).unwrap()),
        };
        let mut adam = Adam::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        for _ in 0..2000 {
            q.zero_grad();
            let x = q.p.value.data()[0];
            q.p.grad.data_mut()[0] = 2.0 * (x - 0.5);
            adam.step(&mut q, "");
        }
        assert!((q.p.value.data()[0] - 0.5).abs() < 1e-2);
    }
}
