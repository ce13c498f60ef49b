//! Central finite-difference checks of every analytic gradient, at f64.
//!
//! Each op is wrapped as `L = Σ out ⊙ R` for a fixed random `R`, so the
//! backward pass is fed `R` as its upstream gradient. Inputs for ops with
//! kinks (ReLU, ReLU6, max pooling, the ReLU inside SE) are drawn away from
//! the kink so that the central difference is valid.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::attention::{ulsam_forward, SeBlock, SeConfig, UlsamBlock, UlsamConfig, UlsamWeights};
use crate::error::{Error, Result};
use crate::model::{build_mv1, parse_positions};
use crate::module::{Module, ParamRole};
use crate::ops::activation::{
    relu, relu6, relu6_backward, relu_backward, sigmoid, sigmoid_backward, spatial_softmax,
    spatial_softmax_backward,
};
use crate::ops::conv::{conv2d, conv2d_backward, ConvSpec};
use crate::ops::elementwise::{broadcast_mul_add, broadcast_mul_add_backward};
use crate::ops::linear::{fully_connected, fully_connected_backward, LinearSpec};
use crate::ops::norm::{batch_norm_backward, batch_norm_forward, RunningStats};
use crate::ops::pool::{global_avg_pool, global_avg_pool_backward, maxpool_3x3_p1, maxpool_3x3_p1_backward};
use crate::ops::Mode;
use crate::tensor::{Shape, Tensor};
use crate::train::cross_entropy;

pub const EPSILON: f64 = 1e-5;
/// Denominator floor of the relative error, so that near-zero gradients are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;

/// Every check name accepted by [`run_suite`]'s fault hook.
pub const CHECK_NAMES: [&str; 16] = [
    "conv_standard",
    "conv_depthwise",
    "conv_pointwise",
    "batch_norm",
    "relu",
    "relu6",
    "sigmoid",
    "maxpool",
    "global_avg_pool",
    "spatial_softmax",
    "fully_connected",
    "broadcast_mul_add",
    "ulsam",
    "se",
    "cross_entropy",
    "network",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub shape: String,
    pub checked: usize,
    /// Coordinates dropped because the central difference changed under
    /// halving the step (a kink inside the stencil). Only the network check
    /// drops coordinates.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheck {
    /// Requires a clean error and at most a quarter of the coordinates
    /// skipped.
    pub fn passed(&self) -> bool {
        self.checked > 0 && 3 * self.skipped <= self.checked && self.max_rel_err < self.tolerance
    }
}

impl fmt::Display for GradCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<18} {:<12} max rel err {:.2e} (tol {:.0e}, {} coords",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.shape,
            self.max_rel_err,
            self.tolerance,
            self.checked
        )?;
        if self.skipped > 0 {
            write!(f, ", {} skipped at kinks", self.skipped)?;
        }
        write!(f, ")")
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Corrupts analytic gradients of the named check, to show the suite catches
/// a wrong backward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct Fault<'a>(pub Option<&'a str>);

impl Fault<'_> {
    fn apply(&self, name: &str, grads: &mut [Vec<f64>]) {
        if self.0 == Some(name) {
            for v in grads.iter_mut().flatten() {
                *v = *v * 1.01 + 1e-2;
            }
        }
    }
}

/// An op under test: inputs as flat arrays, a forward closure and an
/// analytic backward closure taking the upstream gradient.
struct OpCase<F, B> {
    name: &'static str,
    shape: String,
    inputs: Vec<Vec<f64>>,
    forward: F,
    backward: B,
}

impl<F, B> OpCase<F, B>
where
    F: Fn(&[Vec<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&[Vec<f64>], &Tensor<f64>) -> Result<Vec<Vec<f64>>>,
{
    fn run(self, rng: &mut ChaCha8Rng, fault: Fault<'_>) -> Result<GradCheck> {
        let out = (self.forward)(&self.inputs)?;
        let upstream = Tensor::<f64>::randn(out.shape(), 1.0, rng);
        let mut analytic = (self.backward)(&self.inputs, &upstream)?;
        fault.apply(self.name, &mut analytic);
        let coords: Vec<(usize, usize)> = self
            .inputs
            .iter()
            .enumerate()
            .flat_map(|(k, a)| (0..a.len()).map(move |i| (k, i)))
            .collect();
        let mut scratch = self.inputs.clone();
        let forward = &self.forward;
        let eval = |k: usize, i: usize, delta: f64| -> Result<f64> {
            let orig = scratch[k][i];
            scratch[k][i] = orig + delta;
            let y = forward(&scratch);
            scratch[k][i] = orig;
            Ok(y?.dot(&upstream))
        };
        compare(self.name, self.shape, OP_TOLERANCE, &analytic, &coords, eval, false)
    }
}

/// Compare analytic gradients to central differences at `coords`.
///
/// With `kink_guard`, a coordinate is only scored when its central
/// difference is stable under halving the step: a kink inside the stencil
/// makes the two estimates disagree. Stability depends on the forward
/// function alone, so the guard cannot mask a wrong backward pass.
fn compare(
    name: &str,
    shape: String,
    tolerance: f64,
    analytic: &[Vec<f64>],
    coords: &[(usize, usize)],
    mut eval: impl FnMut(usize, usize, f64) -> Result<f64>,
    kink_guard: bool,
) -> Result<GradCheck> {
    let mut central = |k: usize, i: usize, eps: f64| -> Result<f64> { Ok((eval(k, i, eps)? - eval(k, i, -eps)?) / (2.0 * eps)) };
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    for &(k, i) in coords {
        let numeric = central(k, i, EPSILON)?;
        if kink_guard {
            let half = central(k, i, EPSILON / 2.0)?;
            if rel_err(numeric, half) > tolerance / 2.0 {
                skipped += 1;
                continue;
            }
        }
        worst = worst.max(rel_err(analytic[k][i], numeric));
        checked += 1;
    }
    Ok(GradCheck {
        name: name.to_string(),
        shape,
        checked,
        skipped,
        max_rel_err: worst,
        tolerance,
    })
}

fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    Tensor::<f64>::randn(Shape::new(1, n, 1, 1), 1.0, rng).into_data()
}

fn tensor(s: Shape, data: &[f64]) -> Result<Tensor<f64>> {
    Tensor::from_vec(s, data.to_vec())
}

/// Uniform samples on `[lo, hi)` more than 0.01 away from every kink.
fn away_from(n: usize, lo: f64, hi: f64, kinks: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > 1e-2) {
                break v;
            }
        })
        .collect()
}

/// Pairwise distinct values spaced 0.1 apart, shuffled, so max-pool windows
/// never tie within the stencil.
fn distinct(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.05 * n as f64).collect();
    v.shuffle(rng);
    v
}

/// Magnitudes in [0.5, 1.5) with random signs.
fn bounded_away_from_zero(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.random_range(0.5..1.5);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn conv_cases(
    name: &'static str,
    specs: &[(Shape, ConvSpec)],
    rng: &mut ChaCha8Rng,
    fault: Fault<'_>,
) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for &(s, spec) in specs {
        let mut inputs = vec![randn(s.len(), rng), randn(spec.weight_len(), rng)];
        if spec.bias {
            inputs.push(randn(spec.out_channels, rng));
        }
        let case = OpCase {
            name,
            shape: s.to_string(),
            inputs,
            forward: |a: &[Vec<f64>]| conv2d(&tensor(s, &a[0])?, &spec, &a[1], a.get(2).map(Vec::as_slice)),
            backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                let g = conv2d_backward(&tensor(s, &a[0])?, &spec, &a[1], up)?;
                let mut v = vec![g.input.into_data(), g.weight];
                v.extend(g.bias);
                Ok(v)
            },
        };
        out.push(case.run(rng, fault)?);
    }
    Ok(out)
}

fn batch_norm_cases(rng: &mut ChaCha8Rng, fault: Fault<'_>) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    let cases = [
        (Shape::new(2, 3, 4, 4), Mode::Train),
        (Shape::new(4, 2, 1, 1), Mode::Train),
        (Shape::new(3, 5, 2, 3), Mode::Train),
        (Shape::new(2, 3, 3, 3), Mode::Infer),
    ];
    for (s, mode) in cases {
        let c = s.channels;
        let running = RunningStats {
            mean: randn(c, rng),
            var: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        let inputs = vec![randn(s.len(), rng), randn(c, rng), randn(c, rng)];
        let run = |a: &[Vec<f64>]| {
            let mut stats = running.clone();
            batch_norm_forward(&tensor(s, &a[0])?, &a[1], &a[2], &mut stats, mode)
        };
        let case = OpCase {
            name: "batch_norm",
            shape: format!("{s} {}", if mode == Mode::Train { "train" } else { "infer" }),
            inputs,
            forward: |a: &[Vec<f64>]| Ok(run(a)?.0),
            backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                let (_, cache) = run(a)?;
                let g = batch_norm_backward(&cache, &a[1], up)?;
                Ok(vec![g.input.into_data(), g.gamma, g.beta])
            },
        };
        out.push(case.run(rng, fault)?);
    }
    Ok(out)
}

const SHAPES: [Shape; 3] = [
    Shape {
        batch: 2,
        channels: 3,
        height: 4,
        width: 4,
    },
    Shape {
        batch: 1,
        channels: 2,
        height: 5,
        width: 3,
    },
    Shape {
        batch: 3,
        channels: 1,
        height: 2,
        width: 6,
    },
];

fn activation_cases(rng: &mut ChaCha8Rng, fault: Fault<'_>) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for s in SHAPES {
        out.push(
            OpCase {
                name: "relu",
                shape: s.to_string(),
                inputs: vec![away_from(s.len(), -2.0, 2.0, &[0.0], rng)],
                forward: |a: &[Vec<f64>]| Ok(relu(&tensor(s, &a[0])?)),
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| Ok(vec![relu_backward(&tensor(s, &a[0])?, up)?.into_data()]),
            }
            .run(rng, fault)?,
        );
    }
    for s in SHAPES {
        out.push(
            OpCase {
                name: "relu6",
                shape: s.to_string(),
                inputs: vec![away_from(s.len(), -2.0, 8.0, &[0.0, 6.0], rng)],
                forward: |a: &[Vec<f64>]| Ok(relu6(&tensor(s, &a[0])?)),
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| Ok(vec![relu6_backward(&tensor(s, &a[0])?, up)?.into_data()]),
            }
            .run(rng, fault)?,
        );
    }
    for s in SHAPES {
        out.push(
            OpCase {
                name: "sigmoid",
                shape: s.to_string(),
                inputs: vec![randn(s.len(), rng).into_iter().map(|v| 2.0 * v).collect()],
                forward: |a: &[Vec<f64>]| Ok(sigmoid(&tensor(s, &a[0])?)),
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                    let y = sigmoid(&tensor(s, &a[0])?);
                    Ok(vec![sigmoid_backward(&y, up)?.into_data()])
                },
            }
            .run(rng, fault)?,
        );
    }
    Ok(out)
}

fn pool_cases(rng: &mut ChaCha8Rng, fault: Fault<'_>) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for s in [Shape::new(1, 2, 5, 5), Shape::new(2, 3, 4, 6), Shape::new(1, 1, 7, 3)] {
        out.push(
            OpCase {
                name: "maxpool",
                shape: s.to_string(),
                inputs: vec![distinct(s.len(), rng)],
                forward: |a: &[Vec<f64>]| Ok(maxpool_3x3_p1(&tensor(s, &a[0])?)?.output),
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                    let p = maxpool_3x3_p1(&tensor(s, &a[0])?)?;
                    Ok(vec![maxpool_3x3_p1_backward(&p.argmax, up)?.into_data()])
                },
            }
            .run(rng, fault)?,
        );
    }
    for s in SHAPES {
        out.push(
            OpCase {
                name: "global_avg_pool",
                shape: s.to_string(),
                inputs: vec![randn(s.len(), rng)],
                forward: |a: &[Vec<f64>]| global_avg_pool(&tensor(s, &a[0])?),
                backward: |_: &[Vec<f64>], up: &Tensor<f64>| Ok(vec![global_avg_pool_backward(s, up)?.into_data()]),
            }
            .run(rng, fault)?,
        );
    }
    for s in [Shape::new(2, 1, 3, 3), Shape::new(1, 1, 5, 4), Shape::new(3, 1, 1, 2)] {
        out.push(
            OpCase {
                name: "spatial_softmax",
                shape: s.to_string(),
                inputs: vec![randn(s.len(), rng)],
                forward: |a: &[Vec<f64>]| spatial_softmax(&tensor(s, &a[0])?),
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                    let y = spatial_softmax(&tensor(s, &a[0])?)?;
                    Ok(vec![spatial_softmax_backward(&y, up)?.into_data()])
                },
            }
            .run(rng, fault)?,
        );
    }
    Ok(out)
}

fn linear_cases(rng: &mut ChaCha8Rng, fault: Fault<'_>) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (s, out_features, bias) in [
        (Shape::new(2, 3, 2, 2), 5, true),
        (Shape::new(4, 6, 1, 1), 3, false),
        (Shape::new(1, 2, 3, 1), 4, true),
    ] {
        let spec = LinearSpec {
            in_features: s.item(),
            out_features,
            bias,
        };
        let mut inputs = vec![randn(s.len(), rng), randn(s.item() * out_features, rng)];
        if bias {
            inputs.push(randn(out_features, rng));
        }
        out.push(
            OpCase {
                name: "fully_connected",
                shape: s.to_string(),
                inputs,
                forward: |a: &[Vec<f64>]| fully_connected(&tensor(s, &a[0])?, &spec, &a[1], a.get(2).map(Vec::as_slice)),
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                    let g = fully_connected_backward(&tensor(s, &a[0])?, &spec, &a[1], up)?;
                    let mut v = vec![g.input.into_data(), g.weight];
                    v.extend(g.bias);
                    Ok(v)
                },
            }
            .run(rng, fault)?,
        );
    }
    for s in SHAPES {
        let sa = Shape { channels: 1, ..s };
        out.push(
            OpCase {
                name: "broadcast_mul_add",
                shape: s.to_string(),
                inputs: vec![randn(s.len(), rng), randn(sa.len(), rng)],
                forward: |a: &[Vec<f64>]| broadcast_mul_add(&tensor(s, &a[0])?, &tensor(sa, &a[1])?),
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                    let (df, da) = broadcast_mul_add_backward(&tensor(s, &a[0])?, &tensor(sa, &a[1])?, up)?;
                    Ok(vec![df.into_data(), da.into_data()])
                },
            }
            .run(rng, fault)?,
        );
    }
    for (s, labels) in [
        (Shape::new(3, 5, 1, 1), vec![0, 4, 2]),
        (Shape::new(1, 2, 1, 1), vec![1]),
        (Shape::new(4, 10, 1, 1), vec![9, 3, 3, 0]),
    ] {
        let labels = &labels;
        out.push(
            OpCase {
                name: "cross_entropy",
                shape: s.to_string(),
                inputs: vec![randn(s.len(), rng)],
                forward: |a: &[Vec<f64>]| {
                    let loss = cross_entropy(&tensor(s, &a[0])?, labels)?.0;
                    Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![loss])
                },
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                    let g = cross_entropy(&tensor(s, &a[0])?, labels)?.1;
                    Ok(vec![g.data().iter().map(|v| v * up.data()[0]).collect()])
                },
            }
            .run(rng, fault)?,
        );
    }
    Ok(out)
}

fn attention_cases(rng: &mut ChaCha8Rng, fault: Fault<'_>) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (s, g) in [
        (Shape::new(2, 4, 5, 5), 2),
        (Shape::new(1, 6, 4, 4), 3),
        (Shape::new(2, 4, 3, 3), 4),
        (Shape::new(1, 3, 4, 4), 1),
    ] {
        let cfg = UlsamConfig::new(s.channels, g)?;
        let m = s.channels;
        let weights = |a: &[Vec<f64>]| UlsamWeights {
            dw: a[1].clone(),
            pw: a[2].clone(),
        };
        out.push(
            OpCase {
                name: "ulsam",
                shape: format!("{s} g={g}"),
                inputs: vec![distinct(s.len(), rng), bounded_away_from_zero(m, rng), randn(m, rng)],
                forward: |a: &[Vec<f64>]| ulsam_forward(&tensor(s, &a[0])?, &cfg, &weights(a)),
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                    let mut block = UlsamBlock::new(cfg, weights(a))?;
                    block.forward(&tensor(s, &a[0])?, Mode::Train)?;
                    let g = block.ulsam_backward(up)?;
                    Ok(vec![g.input.into_data(), g.dw, g.pw])
                },
            }
            .run(rng, fault)?,
        );
    }
    for (s, r) in [(Shape::new(2, 8, 3, 3), 2), (Shape::new(1, 4, 4, 4), 4), (Shape::new(3, 6, 2, 2), 3)] {
        let cfg = SeConfig::new(s.channels, r)?;
        let (m, h) = (cfg.channels(), cfg.hidden());
        // Redraw until every hidden pre-activation is clear of the ReLU kink.
        let inputs = loop {
            let x = randn(s.len(), rng);
            let w1 = randn(h * m, rng);
            let pooled = global_avg_pool(&tensor(s, &x)?)?;
            let spec = LinearSpec {
                in_features: m,
                out_features: h,
                bias: false,
            };
            let pre = fully_connected(&pooled, &spec, &w1, None)?;
            if pre.data().iter().all(|v| v.abs() > 1e-2) {
                break vec![x, w1, randn(m * h, rng)];
            }
        };
        let block = |a: &[Vec<f64>]| {
            let mut b = SeBlock::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0));
            let mut params = b.params_mut();
            params[0].value = a[1].clone();
            params[1].value = a[2].clone();
            b
        };
        out.push(
            OpCase {
                name: "se",
                shape: format!("{s} r={r}"),
                inputs,
                forward: |a: &[Vec<f64>]| block(a).infer(&tensor(s, &a[0])?),
                backward: |a: &[Vec<f64>], up: &Tensor<f64>| {
                    let mut b = block(a);
                    b.forward(&tensor(s, &a[0])?, Mode::Train)?;
                    let dx = b.backward(up)?;
                    let p = b.params();
                    Ok(vec![dx.into_data(), p[0].grad.clone(), p[1].grad.clone()])
                },
            }
            .run(rng, fault)?,
        );
    }
    Ok(out)
}

/// Reduced MobileNet-V1 with ULSAM on an 8×8 input, checked on a random
/// subset of parameter coordinates against the cross-entropy loss.
///
/// Batch norm runs on randomized running statistics. With batch statistics
/// an 8×8 input leaves four values per channel from layer 5 on, and the
/// loss becomes so rough that central differences at `EPSILON` do not
/// converge; the batch-statistics backward is checked per op instead.
pub fn network_check(seed: u64, coords: usize, fault: Fault<'_>) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = build_mv1::<f64>(0.25, 4, seed)?;
    graph.apply_ulsam(&parse_positions("8:1, 9:1, 11")?, 4)?;
    let s = Shape::new(4, 3, 8, 8);
    // Move batch-norm affines off their initial 1 and 0: with beta = 0 a
    // channel that is dead upstream sits exactly on the next ReLU kink.
    for (_, p) in graph.params_mut() {
        if p.role == ParamRole::NormAffine {
            for v in p.value.iter_mut() {
                *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    for b in graph.buffers_mut() {
        let is_var = b.name.ends_with("running_var");
        for v in b.value.iter_mut() {
            *v = if is_var { rng.random_range(0.5..1.5) } else { 0.1 * rng.sample::<f64, _>(StandardNormal) };
        }
    }
    let x = Tensor::<f64>::randn(s, 1.0, &mut rng);
    let labels = [0, 1, 2, 3];

    graph.zero_grad();
    let logits = graph.forward(&x, Mode::Infer)?;
    let (_, grad) = cross_entropy(&logits, &labels)?;
    graph.backward(&grad)?;
    let mut analytic: Vec<Vec<f64>> = graph.params().into_iter().map(|(_, p)| p.grad.clone()).collect();
    fault.apply("network", &mut analytic);

    // Pick the tensor first, then the coordinate, so small tensors such as
    // biases and ULSAM weights are sampled as often as large ones.
    let picks: Vec<(usize, usize)> = (0..coords)
        .map(|_| {
            let k = rng.random_range(0..analytic.len());
            (k, rng.random_range(0..analytic[k].len()))
        })
        .collect();
    let eval = |k: usize, i: usize, delta: f64| -> Result<f64> {
        let orig = {
            let mut params = graph.params_mut();
            let p = &mut params[k].1.value[i];
            let orig = *p;
            *p = orig + delta;
            orig
        };
        let loss = graph
            .forward(&x, Mode::Infer)
            .and_then(|logits| cross_entropy(&logits, &labels));
        graph.params_mut()[k].1.value[i] = orig;
        Ok(loss?.0)
    };
    compare("network", format!("{s} mv1 a=0.25"), NETWORK_TOLERANCE, &analytic, &picks, eval, true)
}

/// Every op check plus the network check.
pub fn run_suite(seed: u64, fault: Option<&str>) -> Result<Vec<GradCheck>> {
    if let Some(name) = fault {
        if !CHECK_NAMES.contains(&name) {
            return Err(Error::config(format!(
                "unknown check `{name}` for fault injection, expected one of {}",
                CHECK_NAMES.join(", ")
            )));
        }
    }
    let fault = Fault(fault);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = conv_cases(
        "conv_standard",
        &[
            (Shape::new(2, 3, 5, 5), ConvSpec::standard(3, 4, 3, 1, 1)),
            (Shape::new(1, 2, 6, 6), ConvSpec::standard(2, 3, 3, 2, 1).with_bias()),
            (Shape::new(1, 3, 7, 7), ConvSpec::standard(3, 2, 5, 2, 2)),
        ],
        &mut rng,
        fault,
    )?;
    out.extend(conv_cases(
        "conv_depthwise",
        &[
            (Shape::new(2, 3, 5, 5), ConvSpec::depthwise(3, 3, 1, 1)),
            (Shape::new(1, 4, 6, 6), ConvSpec::depthwise(4, 3, 2, 1)),
            (Shape::new(2, 2, 7, 7), ConvSpec::depthwise(2, 1, 1, 0).with_bias()),
        ],
        &mut rng,
        fault,
    )?);
    out.extend(conv_cases(
        "conv_pointwise",
        &[
            (Shape::new(2, 3, 4, 4), ConvSpec::pointwise(3, 5)),
            (Shape::new(1, 6, 3, 3), ConvSpec::pointwise(6, 2)),
            (Shape::new(3, 4, 2, 5), ConvSpec::pointwise(4, 4).with_bias()),
        ],
        &mut rng,
        fault,
    )?);
    out.extend(batch_norm_cases(&mut rng, fault)?);
    out.extend(activation_cases(&mut rng, fault)?);
    out.extend(pool_cases(&mut rng, fault)?);
    out.extend(linear_cases(&mut rng, fault)?);
    out.extend(attention_cases(&mut rng, fault)?);
    out.push(network_check(seed, 48, fault)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_floored() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((rel_err(0.0, 1e-6) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn unknown_fault_target_is_rejected() {
        assert!(run_suite(0, Some("nope")).is_err());
    }

    #[test]
    fn compare_flags_a_wrong_gradient() {
        // L(x) = x², analytic gradient deliberately off by 1%.
        let x = 1.5;
        let r = compare("sq", "1".into(), OP_TOLERANCE, &[vec![2.0 * x * 1.01]], &[(0, 0)], |_, _, d| Ok((x + d) * (x + d)), false)
            .unwrap();
        assert!(!r.passed());
        let r = compare("sq", "1".into(), OP_TOLERANCE, &[vec![2.0 * x]], &[(0, 0)], |_, _, d| Ok((x + d) * (x + d)), false)
            .unwrap();
        assert!(r.passed());
    }

    #[test]
    fn kink_guard_skips_straddled_coordinates() {
        // Kink between x + eps/2 and x + eps: the two step sizes disagree.
        let kinked = |_, _, d: f64| Ok((d - 0.7 * EPSILON).max(0.0));
        let r = compare("relu", "1".into(), OP_TOLERANCE, &[vec![1.0]], &[(0, 0)], kinked, true).unwrap();
        assert_eq!((r.checked, r.skipped), (0, 1));
        assert!(!r.passed());
    }
}
