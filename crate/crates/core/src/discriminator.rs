//! Conditional patch discriminators, one per scale, sharing one layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{join, Conv2d, ConvBlock, Init, Module, Param, Scalar, Tensor};
use crate::{Error, Result, Stage};

pub use crate::nn::loss::{adversarial_losses, AdversarialLosses};

const SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Width of the first block; each later block doubles it.
    pub base_channels: usize,
    pub n_layers: usize,
    pub horizontal_wrap: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            n_layers: 4,
            horizontal_wrap: true,
        }
    }
}

impl DiscriminatorConfig {
    /// Patch-map size for an `h × w` input: every 4×4 stride-2 block with
    /// padding 1 maps `n` to `⌊n/2⌋`, the final 3×3 conv keeps the size.
    pub fn patch_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (mut h, mut w) = (h, w);
        for _ in 0..self.n_layers {
            if h < 2 || w < 2 {
                return Err(Error::ShapeMismatch(format!(
                    "discriminator input too small for {} stride-2 blocks",
                    self.n_layers
                )));
            }
            h /= 2;
            w /= 2;
        }
        Ok((h, w))
    }
}

pub fn group_name(stage: Stage) -> String {
    format!("disc_{}", stage.suffix())
}

/// `[condition, candidate]` → patch logits `[1, h', w']`.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar = f32> {
    stage: Stage,
    config: DiscriminatorConfig,
    blocks: Vec<ConvBlock<T>>,
    head: Conv2d<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(stage: Stage, config: DiscriminatorConfig, rng: &mut R) -> Self {
        let init = Init::Normal(0.02);
        let wrap = config.horizontal_wrap;
        let mut blocks = Vec::with_capacity(config.n_layers);
        let mut c = 6;
        for i in 0..config.n_layers {
            let out = config.base_channels << i;
            let conv = Conv2d::new(c, out, 4, 2, 1, wrap, init, rng);
            // the first block sees raw images and is left unnormalized
            blocks.push(ConvBlock::new(conv, i > 0, Some(SLOPE)));
            c = out;
        }
        let head = Conv2d::new(c, 1, 3, 1, 1, wrap, init, rng);
        Self {
            stage,
            config,
            blocks,
            head,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    fn stack(&self, condition: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        condition.check_same(candidate, "discriminator condition vs candidate")?;
        let (c, h, w) = condition.chw();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects RGB, got {c} channels"
            )));
        }
        self.config.patch_shape(h, w)?;
        Tensor::concat_channels(&[condition, candidate])
    }

    pub fn forward(&self, condition: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.stack(condition, candidate)?;
        for b in &self.blocks {
            h = b.forward(&h);
        }
        Ok(self.head.forward(&h))
    }

    pub fn forward_train(&mut self, condition: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.stack(condition, candidate)?;
        for b in &mut self.blocks {
            h = b.forward_train(&h);
        }
        Ok(self.head.forward_train(&h))
    }

    /// Accumulate parameter gradients; returns the gradient with respect to
    /// the candidate image.
    pub fn backward(&mut self, g_patch: &Tensor<T>) -> Tensor<T> {
        let mut g = self.head.backward(g_patch);
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        g.split_channels(&[3, 3]).pop().expect("two halves")
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        let p = join(prefix, &group_name(self.stage));
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(&p, &format!("block{i}")), f);
        }
        self.head.visit(&join(&p, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let p = join(prefix, &group_name(self.stage));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(&p, &format!("block{i}")), f);
        }
        self.head.visit_mut(&join(&p, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::{bce_fake, bce_real};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect()).unwrap()
    }

    fn tiny() -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: 2,
            ..Default::default()
        }
    }

    #[test]
    fn small_scale_patch_map_is_8_by_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::<f32>::new(Stage::Small, tiny(), &mut rng);
        let a = random(&[3, 128, 256], &mut rng);
        let b = random(&[3, 128, 256], &mut rng);
        let out = d.forward(&a, &b).unwrap();
        assert_eq!(out.shape(), &[1, 8, 16]);
        assert_eq!(DiscriminatorConfig::default().patch_shape(128, 256).unwrap(), (8, 16));
    }

    #[test]
    fn condition_order_matters_and_output_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::<f32>::new(Stage::Small, tiny(), &mut rng);
        let a = random(&[3, 32, 64], &mut rng);
        let b = random(&[3, 32, 64], &mut rng);
        assert_ne!(d.forward(&a, &b).unwrap(), d.forward(&b, &a).unwrap());
        assert_eq!(d.forward(&a, &b).unwrap(), d.forward(&a, &b).unwrap());
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Discriminator::<f32>::new(Stage::Small, tiny(), &mut rng);
        let a = random(&[3, 32, 64], &mut rng);
        let b = random(&[3, 16, 32], &mut rng);
        assert!(d.forward(&a, &b).is_err());
    }

    #[test]
    fn same_layout_at_every_scale() {
        let shapes = |s: Stage| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let d = Discriminator::<f32>::new(s, DiscriminatorConfig::default(), &mut rng);
            let mut v = Vec::new();
            d.visit("", &mut |_, p| v.push(p.value.shape().to_vec()));
            v
        };
        assert_eq!(shapes(Stage::Small), shapes(Stage::Medium));
        assert_eq!(shapes(Stage::Small), shapes(Stage::Large));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = DiscriminatorConfig {
            base_channels: 1,
            ..Default::default()
        };
        let mut d = Discriminator::<f64>::new(Stage::Small, cfg, &mut rng);
        let cond = random(&[3, 32, 64], &mut rng);
        let cand = random(&[3, 32, 64], &mut rng);
        let loss = |d: &Discriminator<f64>, cand: &Tensor<f64>| bce_fake(&d.forward(&cond, cand).unwrap()).0;
        d.zero_grad();
        let logits = d.forward_train(&cond, &cand).unwrap();
        let (_, g) = bce_fake(&logits);
        let g_cand = d.backward(&g);
        let h = 1e-6;
        let tol = |fd: f64, a: f64| (fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-3);
        for i in (0..cand.len()).step_by(97) {
            let mut p = cand.clone();
            p.data_mut()[i] += h;
            let mut m = cand.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&d, &p) - loss(&d, &m)) / (2.0 * h);
            assert!(tol(fd, g_cand.data()[i]), "input {i}: {fd} vs {}", g_cand.data()[i]);
        }
        let mut grads = Vec::new();
        d.visit("", &mut |n, p| grads.push((n.to_string(), p.grad.clone())));
        for (name, grad) in grads {
            let i = grad.len() / 3;
            let bump = |d: &mut Discriminator<f64>, delta: f64| {
                d.visit_mut("", &mut |n, p| {
                    if n == name {
                        p.value.data_mut()[i] += delta;
                    }
                })
            };
            bump(&mut d, h);
            let up = loss(&d, &cand);
            bump(&mut d, -2.0 * h);
            let down = loss(&d, &cand);
            bump(&mut d, h);
            let fd = (up - down) / (2.0 * h);
            assert!(tol(fd, grad.data()[i]), "{name}: {fd} vs {}", grad.data()[i]);
        }
        // the real-side objective reaches the same parameters
        d.zero_grad();
        let logits = d.forward_train(&cond, &cand).unwrap();
        d.backward(&bce_real(&logits).1);
        let mut any = false;
        d.visit("", &mut |_, p| any |= p.grad.data().iter().any(|v| *v != 0.0));
        assert!(any);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn patch_shape_matches_forward(h in 16usize..48, w in 16usize..64) {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let cfg = DiscriminatorConfig { base_channels: 1, ..Default::default() };
            let d = Discriminator::<f32>::new(Stage::Medium, cfg, &mut rng);
            let a = random(&[3, h, w], &mut rng);
            let out = d.forward(&a, &a).unwrap();
            let (ph, pw) = cfg.patch_shape(h, w).unwrap();
            prop_assert_eq!(out.shape(), &[1, ph, pw][..]);
            prop_assert_eq!((ph, pw), (h / 16, w / 16));
        }
    }
}
