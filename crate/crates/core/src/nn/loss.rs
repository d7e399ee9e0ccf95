//! Scalar losses. Each returns the value (accumulated in f64) together with
//! its gradient with respect to the prediction.

use super::{Scalar, Tensor};
use crate::{Error, Result};

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean absolute difference over every element.
pub fn l1<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.check_same(target, "l1 loss")?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let inv = T::lit(1.0 / n);
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).as_f64();
            sum += d.abs();
            if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((sum / n, Tensor::from_vec(pred.shape(), grad)?))
}

/// `-mean log σ(x)`: the patch map should be judged real.
pub fn bce_real<T: Scalar>(logits: &Tensor<T>) -> (f64, Tensor<T>) {
    let n = logits.len() as f64;
    let value = logits.data().iter().map(|x| softplus(-x.as_f64())).sum::<f64>() / n;
    let grad = logits.map(|x| T::lit((sigmoid(x.as_f64()) - 1.0) / n));
    (value, grad)
}

/// `-mean log(1 - σ(x))`: the patch map should be judged fake.
pub fn bce_fake<T: Scalar>(logits: &Tensor<T>) -> (f64, Tensor<T>) {
    let n = logits.len() as f64;
    let value = logits.data().iter().map(|x| softplus(x.as_f64())).sum::<f64>() / n;
    let grad = logits.map(|x| T::lit(sigmoid(x.as_f64()) / n));
    (value, grad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialLosses {
    /// `-mean log σ(real) - mean log(1 - σ(fake))`
    pub d_loss: f64,
    /// Non-saturating generator term `-mean log σ(fake)`.
    pub g_loss: f64,
}

pub fn adversarial_losses<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<AdversarialLosses> {
    real.check_same(fake, "adversarial losses")?;
    let (r, _) = bce_real(real);
    let (f, _) = bce_fake(fake);
    let (g, _) = bce_real(fake);
    Ok(AdversarialLosses {
        d_loss: r + f,
        g_loss: g,
    })
}

/// Softmax cross-entropy of a logit vector against a class index.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(f64, Tensor<T>)> {
    let n = logits.len();
    if label >= n {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {n} classes"
        )));
    }
    let z: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let grad = z
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let p = (v - lse).exp();
            T::lit(if i == label { p - 1.0 } else { p })
        })
        .collect();
    Ok((lse - z[label], Tensor::from_vec(logits.shape(), grad)?))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Adversarial plus weighted pixel term.
pub fn total_loss(adv_g: f64, pix: f64, lambda_pix: f64) -> f64 {
    adv_g + lambda_pix * pix
}
