//! Squeeze-and-excitation channel attention, kept as a comparison baseline.
//!
//! `y = F ⊗ σ(W₂ · relu(W₁ · gap(F)))` with `W₁: (m/r) × m`, `W₂: m × (m/r)`
//! and no biases, so the block holds `2m²/r` parameters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::module::{Module, Param, ParamRole};
use crate::ops::macs::{self, MacKind};
use crate::ops::{
    fully_connected, fully_connected_backward, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, LinearSpec, Mode,
};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeConfig {
    channels: usize,
    reduction: usize,
}

impl SeConfig {
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 || reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::config(format!(
                "SE reduction r={reduction} must divide channels m={channels}"
            )));
        }
        Ok(SeConfig { channels, reduction })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels * self.hidden()
    }

    fn squeeze(&self) -> LinearSpec {
        LinearSpec {
            in_features: self.channels,
            out_features: self.hidden(),
            bias: false,
        }
    }

    fn excite(&self) -> LinearSpec {
        LinearSpec {
            in_features: self.hidden(),
            out_features: self.channels,
            bias: false,
        }
    }
}

#[derive(Clone, Debug)]
struct SeCache<T: Element> {
    input: Tensor<T>,
    pooled: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
    gate: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct SeBlock<T: Element> {
    cfg: SeConfig,
    w1: Param<T>,
    w2: Param<T>,
    cache: Option<SeCache<T>>,
}

impl<T: Element> SeBlock<T> {
    pub fn init<R: Rng + ?Sized>(cfg: SeConfig, rng: &mut R) -> Self {
        let (m, h) = (cfg.channels, cfg.hidden());
        SeBlock {
            cfg,
            w1: Param::normal("se.w1", &[h, m], ParamRole::Weight, 2.0 / m as f64, rng),
            w2: Param::normal("se.w2", &[m, h], ParamRole::Weight, 1.0 / h as f64, rng),
            cache: None,
        }
    }

    pub fn config(&self) -> SeConfig {
        self.cfg
    }

    fn run(&self, input: &Tensor<T>) -> Result<(Tensor<T>, SeCache<T>)> {
        let s = input.shape();
        if s.channels != self.cfg.channels {
            return Err(Error::config(format!(
                "SE configured for {} channels, input has {}",
                self.cfg.channels, s.channels
            )));
        }
        macs::attribute_to(MacKind::Attention, || {
            let pooled = global_avg_pool(input)?;
            let hidden_pre = fully_connected(&pooled, &self.cfg.squeeze(), &self.w1.value, None)?;
            let hidden = relu(&hidden_pre);
            let gate = sigmoid(&fully_connected(&hidden, &self.cfg.excite(), &self.w2.value, None)?);
            let mut out = input.clone();
            for b in 0..s.batch {
                for c in 0..s.channels {
                    let g = gate.item(b)[c];
                    out.plane_mut(b, c).iter_mut().for_each(|v| *v = *v * g);
                }
            }
            let cache = SeCache {
                input: input.clone(),
                pooled,
                hidden_pre,
                hidden,
                gate,
            };
            Ok((out, cache))
        })
    }
}

impl<T: Element> Module<T> for SeBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (out, cache) = self.run(input)?;
        self.cache = Some(cache);
        Ok(out)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input)?.0)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("SE backward called before forward".into()))?;
        let s = cache.input.shape();
        if grad_out.shape() != s {
            return Err(Error::config(format!(
                "SE gradient shape {} != {s}",
                grad_out.shape()
            )));
        }
        let mut d_input = grad_out.clone();
        let mut d_gate = Tensor::zeros(cache.gate.shape());
        for b in 0..s.batch {
            for c in 0..s.channels {
                let g = cache.gate.item(b)[c];
                let x = cache.input.plane(b, c);
                let up = grad_out.plane(b, c);
                d_gate.item_mut(b)[c] = x.iter().zip(up).fold(T::zero(), |acc, (&xv, &uv)| acc + xv * uv);
                d_input.plane_mut(b, c).iter_mut().for_each(|v| *v = *v * g);
            }
        }
        let d_excite_out = sigmoid_backward(&cache.gate, &d_gate)?;
        let g2 = fully_connected_backward(&cache.hidden, &self.cfg.excite(), &self.w2.value, &d_excite_out)?;
        let d_hidden_pre = relu_backward(&cache.hidden_pre, &g2.input)?;
        let g1 = fully_connected_backward(&cache.pooled, &self.cfg.squeeze(), &self.w1.value, &d_hidden_pre)?;
        let d_from_pool = global_avg_pool_backward(s, &g1.input)?;
        for (d, &e) in d_input.data_mut().iter_mut().zip(d_from_pool.data()) {
            *d = *d + e;
        }
        self.w1.accumulate(&g1.weight);
        self.w2.accumulate(&g2.weight);
        Ok(d_input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w1, &self.w2]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w1, &mut self.w2]
    }
}
