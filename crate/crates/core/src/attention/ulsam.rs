//! Ultra-lightweight subspace attention.
//!
//! The input `F` (m channels) is cut into `g` contiguous groups of
//! `G = m / g` channels. Each group `F_n` gets its own spatial attention map
//!
//! ```text
//! A_n = softmax( PW¹( maxpool3x3,pad1( DW1x1(F_n) ) ) )
//! ```
//!
//! where `DW1x1` scales each channel by one weight and `PW¹` is a single
//! pointwise filter collapsing the group to one channel. The group output is
//! `A_n ⊗ F_n ⊕ F_n`, and the block output concatenates the groups in order.
//! There are no biases, normalizations or other activations, so the block
//! holds exactly `2m` parameters for every valid `g`.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::module::{Module, Param, ParamRole};
use crate::ops::macs::{self, MacKind};
use crate::ops::{
    broadcast_mul_add, broadcast_mul_add_backward, channel_concat, conv2d, conv2d_backward,
    maxpool_3x3_p1, maxpool_3x3_p1_backward, spatial_softmax, spatial_softmax_backward,
    split_channels, ConvSpec, Mode,
};
use crate::tensor::{Element, Shape, Tensor};

/// Channel count and number of subspaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UlsamConfig {
    channels: usize,
    groups: usize,
}

impl UlsamConfig {
    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        if channels == 0 || groups == 0 {
            return Err(Error::config(format!(
                "ULSAM needs positive channels and groups, got m={channels}, g={groups}"
            )));
        }
        if groups > channels || !channels.is_multiple_of(groups) {
            return Err(Error::config(format!(
                "ULSAM groups g={groups} must divide channels m={channels}"
            )));
        }
        Ok(UlsamConfig { channels, groups })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Channels per group, `G = m / g`.
    pub fn group_size(&self) -> usize {
        self.channels / self.groups
    }

    /// `g · (G + G) = 2m`.
    pub fn param_count(&self) -> usize {
        self.groups * 2 * self.group_size()
    }
}

/// Per-group depthwise (`dw`) and pointwise (`pw`) weights, stored flat: the
/// weights of group `n` occupy `[n·G, (n+1)·G)` in both vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct UlsamWeights<T: Element> {
    pub dw: Vec<T>,
    pub pw: Vec<T>,
}

impl<T: Element> UlsamWeights<T> {
    pub fn zeros(cfg: &UlsamConfig) -> Self {
        UlsamWeights {
            dw: vec![T::zero(); cfg.channels],
            pw: vec![T::zero(); cfg.channels],
        }
    }

    pub fn filled(cfg: &UlsamConfig, dw: T, pw: T) -> Self {
        UlsamWeights {
            dw: vec![dw; cfg.channels],
            pw: vec![pw; cfg.channels],
        }
    }

    /// Zero-mean normal draws with variance `2 / G` for both weight sets.
    pub fn init<R: Rng + ?Sized>(cfg: &UlsamConfig, rng: &mut R) -> Self {
        let std = T::from_f64((2.0 / cfg.group_size() as f64).sqrt());
        let mut draw = |n: usize| (0..n).map(|_| T::sample_normal(rng) * std).collect();
        let dw = draw(cfg.channels);
        let pw = draw(cfg.channels);
        UlsamWeights { dw, pw }
    }

    pub fn param_count(&self) -> usize {
        self.dw.len() + self.pw.len()
    }

    fn check(&self, cfg: &UlsamConfig) -> Result<()> {
        if self.dw.len() != cfg.channels || self.pw.len() != cfg.channels {
            return Err(Error::config(format!(
                "ULSAM weights have dw={} pw={} entries, expected {} each",
                self.dw.len(),
                self.pw.len(),
                cfg.channels
            )));
        }
        Ok(())
    }

    pub fn dw_group(&self, cfg: &UlsamConfig, n: usize) -> &[T] {
        let g = cfg.group_size();
        &self.dw[n * g..(n + 1) * g]
    }

    pub fn pw_group(&self, cfg: &UlsamConfig, n: usize) -> &[T] {
        let g = cfg.group_size();
        &self.pw[n * g..(n + 1) * g]
    }
}

/// Contiguous channel slices; slice `n` holds channels `[n·G, (n+1)·G)`.
pub fn split_groups<T: Element>(features: &Tensor<T>, groups: usize) -> Result<Vec<Tensor<T>>> {
    let m = features.shape().channels;
    if groups == 0 || !m.is_multiple_of(groups) {
        return Err(Error::config(format!(
            "cannot split {m} channels into {groups} equal groups"
        )));
    }
    split_channels(features, &vec![m / groups; groups])
}

fn check_features<T: Element>(features: &Tensor<T>, cfg: &UlsamConfig) -> Result<()> {
    let s = features.shape();
    if s.channels != cfg.channels {
        return Err(Error::config(format!(
            "ULSAM configured for {} channels, input has {}",
            cfg.channels, s.channels
        )));
    }
    if s.height == 0 || s.width == 0 {
        return Err(Error::config(format!("ULSAM input {s} has an empty plane")));
    }
    Ok(())
}

fn ordered_key<T: Element>(a: &T, b: &T) -> Ordering {
    let (a, b) = (a.as_f64(), b.as_f64());
    a.abs().total_cmp(&b.abs()).then(a.total_cmp(&b))
}

/// The single-filter pointwise convolution `Z = Σ_c pw[c]·P[c]`.
///
/// The per-pixel products are summed in a canonical order (ascending
/// magnitude, ties by value), so the result does not depend on the order of
/// channels inside the group.
fn single_filter_pointwise<T: Element>(pooled: &Tensor<T>, pw: &[T]) -> Tensor<T> {
    let s = pooled.shape();
    let mut out = Tensor::zeros(s.with_channels(1));
    let mut terms = Vec::with_capacity(s.channels);
    for b in 0..s.batch {
        for k in 0..s.plane() {
            terms.clear();
            terms.extend((0..s.channels).map(|c| pw[c] * pooled.plane(b, c)[k]));
            terms.sort_by(ordered_key);
            out.plane_mut(b, 0)[k] = terms.iter().fold(T::zero(), |acc, &t| acc + t);
        }
        macs::record(MacKind::Attention, (s.channels * s.plane()) as u64);
    }
    out
}

/// Returns `(d pooled, d pw)`.
fn single_filter_pointwise_backward<T: Element>(
    pooled: &Tensor<T>,
    pw: &[T],
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Vec<T>) {
    let s = pooled.shape();
    let mut dp = Tensor::zeros(s);
    let mut dpw = vec![T::zero(); s.channels];
    for b in 0..s.batch {
        let g = grad_out.plane(b, 0);
        for c in 0..s.channels {
            let p = pooled.plane(b, c);
            dpw[c] = p.iter().zip(g).fold(dpw[c], |acc, (&pv, &gv)| acc + pv * gv);
            for (d, &gv) in dp.plane_mut(b, c).iter_mut().zip(g) {
                *d = pw[c] * gv;
            }
        }
    }
    (dp, dpw)
}

/// Intermediates of one group's attention map.
#[derive(Clone, Debug)]
struct GroupTrace<T: Element> {
    input: Tensor<T>,
    pooled: Tensor<T>,
    argmax: Vec<u32>,
    attention: Tensor<T>,
}

fn trace_group<T: Element>(group: Tensor<T>, dw: &[T], pw: &[T]) -> Result<GroupTrace<T>> {
    let g = group.shape().channels;
    if dw.len() != g || pw.len() != g {
        return Err(Error::config(format!(
            "group of {g} channels needs {g} dw and pw weights, got {} and {}",
            dw.len(),
            pw.len()
        )));
    }
    macs::attribute_to(MacKind::Attention, || {
        let scaled = conv2d(&group, &ConvSpec::depthwise(g, 1, 1, 0), dw, None)?;
        let pooled = maxpool_3x3_p1(&scaled)?;
        let logits = single_filter_pointwise(&pooled.output, pw);
        let attention = spatial_softmax(&logits)?;
        Ok(GroupTrace {
            input: group,
            pooled: pooled.output,
            argmax: pooled.argmax,
            attention,
        })
    })
}

/// The attention map of one group: a `(batch, 1, h, w)` tensor whose entries
/// sum to one over `(h, w)` for each batch item.
pub fn attention_map<T: Element>(group: &Tensor<T>, dw: &[T], pw: &[T]) -> Result<Tensor<T>> {
    Ok(trace_group(group.clone(), dw, pw)?.attention)
}

fn trace_all<T: Element>(
    features: &Tensor<T>,
    cfg: &UlsamConfig,
    weights: &UlsamWeights<T>,
) -> Result<Vec<GroupTrace<T>>> {
    check_features(features, cfg)?;
    weights.check(cfg)?;
    split_groups(features, cfg.groups)?
        .into_iter()
        .enumerate()
        .map(|(n, group)| trace_group(group, weights.dw_group(cfg, n), weights.pw_group(cfg, n)))
        .collect()
}

fn redistribute<T: Element>(traces: &[GroupTrace<T>]) -> Result<Tensor<T>> {
    let refined = traces
        .iter()
        .map(|t| broadcast_mul_add(&t.input, &t.attention))
        .collect::<Result<Vec<_>>>()?;
    channel_concat(&refined)
}

/// Stateless forward pass; output shape equals input shape.
pub fn ulsam_forward<T: Element>(
    features: &Tensor<T>,
    cfg: &UlsamConfig,
    weights: &UlsamWeights<T>,
) -> Result<Tensor<T>> {
    redistribute(&trace_all(features, cfg, weights)?)
}

/// All group attention maps stacked as `(batch, g, h, w)`; channel `n` is `A_n`.
pub fn ulsam_attention_maps<T: Element>(
    features: &Tensor<T>,
    cfg: &UlsamConfig,
    weights: &UlsamWeights<T>,
) -> Result<Tensor<T>> {
    let maps: Vec<_> = trace_all(features, cfg, weights)?
        .into_iter()
        .map(|t| t.attention)
        .collect();
    channel_concat(&maps)
}

/// Per-channel attention for the `g = m` case written directly in scalar
/// form, `softmax(α₂ · maxpool(α₁ · F_n))`, without going through the
/// convolution kernels. Returns `(batch, m, h, w)`.
pub fn case3_attention<T: Element>(features: &Tensor<T>, weights: &UlsamWeights<T>) -> Result<Tensor<T>> {
    let s = features.shape();
    if weights.dw.len() != s.channels || weights.pw.len() != s.channels {
        return Err(Error::config(format!(
            "the g = m form needs one (α₁, α₂) pair per channel: {} channels, {} / {} weights",
            s.channels,
            weights.dw.len(),
            weights.pw.len()
        )));
    }
    let (h, w) = (s.height, s.width);
    let mut out = Tensor::zeros(s);
    let mut logits = vec![T::zero(); h * w];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let (a1, a2) = (weights.dw[c], weights.pw[c]);
            let scaled: Vec<T> = features.plane(b, c).iter().map(|&v| a1 * v).collect();
            for i in 0..h {
                for j in 0..w {
                    let mut best = T::neg_infinity();
                    for r in i.saturating_sub(1)..(i + 2).min(h) {
                        for q in j.saturating_sub(1)..(j + 2).min(w) {
                            best = best.max(scaled[r * w + q]);
                        }
                    }
                    logits[i * w + j] = a2 * best;
                }
            }
            let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let dst = out.plane_mut(b, c);
            let mut total = T::zero();
            for (d, &z) in dst.iter_mut().zip(&logits) {
                *d = (z - max).exp();
                total = total + *d;
            }
            dst.iter_mut().for_each(|d| *d = *d / total);
        }
    }
    Ok(out)
}

/// Checks that `weights` describe a `g = m` block for `features` and returns
/// the closed-form per-channel attention.
pub fn case3_reduction_check<T: Element>(
    features: &Tensor<T>,
    cfg: &UlsamConfig,
    weights: &UlsamWeights<T>,
) -> Result<Tensor<T>> {
    if cfg.groups != cfg.channels {
        return Err(Error::config(format!(
            "the closed form applies only to g = m, got g={} m={}",
            cfg.groups, cfg.channels
        )));
    }
    check_features(features, cfg)?;
    case3_attention(features, weights)
}

/// Gradients of a ULSAM block.
#[derive(Clone, Debug)]
pub struct UlsamGrads<T: Element> {
    pub input: Tensor<T>,
    pub dw: Vec<T>,
    pub pw: Vec<T>,
}

/// ULSAM as a trainable layer.
#[derive(Clone, Debug)]
pub struct UlsamBlock<T: Element> {
    cfg: UlsamConfig,
    dw: Param<T>,
    pw: Param<T>,
    traces: Option<Vec<GroupTrace<T>>>,
}

impl<T: Element> UlsamBlock<T> {
    pub fn new(cfg: UlsamConfig, weights: UlsamWeights<T>) -> Result<Self> {
        weights.check(&cfg)?;
        let mut dw = Param::zeros("ulsam.dw", &[cfg.channels], ParamRole::Weight);
        let mut pw = Param::zeros("ulsam.pw", &[cfg.channels], ParamRole::Weight);
        dw.value = weights.dw;
        pw.value = weights.pw;
        Ok(UlsamBlock {
            cfg,
            dw,
            pw,
            traces: None,
        })
    }

    pub fn init<R: Rng + ?Sized>(cfg: UlsamConfig, rng: &mut R) -> Self {
        Self::new(cfg, UlsamWeights::init(&cfg, rng)).expect("initialized weights match config")
    }

    pub fn config(&self) -> UlsamConfig {
        self.cfg
    }

    pub fn weights(&self) -> UlsamWeights<T> {
        UlsamWeights {
            dw: self.dw.value.clone(),
            pw: self.pw.value.clone(),
        }
    }

    /// Attention maps of the most recent forward pass, `(batch, g, h, w)`.
    pub fn last_attention(&self) -> Option<Tensor<T>> {
        let traces = self.traces.as_ref()?;
        let maps: Vec<_> = traces.iter().map(|t| t.attention.clone()).collect();
        channel_concat(&maps).ok()
    }

    /// Gradients for the input and both weight sets, from the cached forward.
    pub fn ulsam_backward(&self, upstream: &Tensor<T>) -> Result<UlsamGrads<T>> {
        let traces = self
            .traces
            .as_ref()
            .ok_or_else(|| Error::State("ULSAM backward called before forward".into()))?;
        let input_shape = Shape {
            channels: self.cfg.channels,
            ..traces[0].input.shape()
        };
        if upstream.shape() != input_shape {
            return Err(Error::config(format!(
                "ULSAM upstream gradient {} != output shape {input_shape}",
                upstream.shape()
            )));
        }
        let g = self.cfg.group_size();
        let upstream_groups = split_groups(upstream, self.cfg.groups)?;
        let mut dw = Vec::with_capacity(self.cfg.channels);
        let mut pw = Vec::with_capacity(self.cfg.channels);
        let mut d_inputs = Vec::with_capacity(self.cfg.groups);
        for (n, (trace, up)) in traces.iter().zip(&upstream_groups).enumerate() {
            let dw_n = &self.dw.value[n * g..(n + 1) * g];
            let pw_n = &self.pw.value[n * g..(n + 1) * g];
            let (mut d_input, d_att) = broadcast_mul_add_backward(&trace.input, &trace.attention, up)?;
            let d_logits = spatial_softmax_backward(&trace.attention, &d_att)?;
            let (d_pooled, d_pw) = single_filter_pointwise_backward(&trace.pooled, pw_n, &d_logits);
            let d_scaled = maxpool_3x3_p1_backward(&trace.argmax, &d_pooled)?;
            let conv = conv2d_backward(&trace.input, &ConvSpec::depthwise(g, 1, 1, 0), dw_n, &d_scaled)?;
            for (d, &e) in d_input.data_mut().iter_mut().zip(conv.input.data()) {
                *d = *d + e;
            }
            d_inputs.push(d_input);
            dw.extend(conv.weight);
            pw.extend(d_pw);
        }
        Ok(UlsamGrads {
            input: channel_concat(&d_inputs)?,
            dw,
            pw,
        })
    }
}

impl<T: Element> Module<T> for UlsamBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let traces = trace_all(input, &self.cfg, &self.weights())?;
        let out = redistribute(&traces)?;
        self.traces = Some(traces);
        Ok(out)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        ulsam_forward(input, &self.cfg, &self.weights())
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let grads = self.ulsam_backward(grad_out)?;
        self.dw.accumulate(&grads.dw);
        self.pw.accumulate(&grads.pw);
        Ok(grads.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.dw, &self.pw]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.dw, &mut self.pw]
    }
}
