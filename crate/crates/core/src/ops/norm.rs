//! Per-channel batch normalization with running statistics.

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Running mean and variance, updated as
/// `running = momentum·running + (1 − momentum)·batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T: Element> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Values retained from the forward pass for [`batch_norm_backward`].
#[derive(Clone, Debug)]
pub struct BnCache<T: Element> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

#[derive(Clone, Debug)]
pub struct BnGrads<T: Element> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Normalize with batch statistics (`Mode::Train`, which also updates
/// `running`) or with the running statistics (`Mode::Infer`).
pub fn batch_norm_forward<T: Element>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: &mut RunningStats<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let s = input.shape();
    let c = s.channels;
    if gamma.len() != c || beta.len() != c || running.mean.len() != c || running.var.len() != c {
        return Err(Error::config(format!(
            "batch norm over {c} channels got gamma {}, beta {}, running {}",
            gamma.len(),
            beta.len(),
            running.mean.len()
        )));
    }
    let count = s.batch * s.plane();
    if count == 0 {
        return Err(Error::config("batch norm over an empty batch"));
    }
    let n = T::from_f64(count as f64);
    let eps = T::from_f64(BN_EPS);
    let momentum = T::from_f64(BN_MOMENTUM);
    let mut normalized = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = T::zero();
                for b in 0..s.batch {
                    sum = input.plane(b, ch).iter().fold(sum, |a, &v| a + v);
                }
                let mean = sum / n;
                let mut sq = T::zero();
                for b in 0..s.batch {
                    sq = input
                        .plane(b, ch)
                        .iter()
                        .fold(sq, |a, &v| a + (v - mean) * (v - mean));
                }
                let var = sq / n;
                let unbiased = if count > 1 {
                    sq / T::from_f64((count - 1) as f64)
                } else {
                    var
                };
                running.mean[ch] = momentum * running.mean[ch] + (T::one() - momentum) * mean;
                running.var[ch] = momentum * running.var[ch] + (T::one() - momentum) * unbiased;
                (mean, var)
            }
            Mode::Infer => (running.mean[ch], running.var[ch]),
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;
        for b in 0..s.batch {
            let start = s.offset(b, ch, 0, 0);
            for k in start..start + s.plane() {
                let xh = (input.data()[k] - mean) * istd;
                normalized.data_mut()[k] = xh;
                out.data_mut()[k] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok((
        out,
        BnCache {
            normalized,
            inv_std,
            mode,
        },
    ))
}

pub fn batch_norm_backward<T: Element>(
    cache: &BnCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<BnGrads<T>> {
    let s = cache.normalized.shape();
    if grad_out.shape() != s {
        return Err(Error::config(format!(
            "batch norm gradient shape {} != {s}",
            grad_out.shape()
        )));
    }
    let c = s.channels;
    let n = T::from_f64((s.batch * s.plane()) as f64);
    let mut grads = BnGrads {
        input: Tensor::zeros(s),
        gamma: vec![T::zero(); c],
        beta: vec![T::zero(); c],
    };
    for ch in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for b in 0..s.batch {
            for (&g, &xh) in grad_out.plane(b, ch).iter().zip(cache.normalized.plane(b, ch)) {
                sum_g = sum_g + g;
                sum_gx = sum_gx + g * xh;
            }
        }
        grads.beta[ch] = sum_g;
        grads.gamma[ch] = sum_gx;
        let scale = gamma[ch] * cache.inv_std[ch];
        for b in 0..s.batch {
            let g = grad_out.plane(b, ch);
            let xh = cache.normalized.plane(b, ch);
            let dst = grads.input.plane_mut(b, ch);
            match cache.mode {
                Mode::Train => {
                    for ((d, &g), &xh) in dst.iter_mut().zip(g).zip(xh) {
                        *d = scale * (g - sum_g / n - xh * sum_gx / n);
                    }
                }
                Mode::Infer => {
                    for (d, &g) in dst.iter_mut().zip(g) {
                        *d = scale * g;
                    }
                }
            }
        }
    }
    Ok(grads)
}
