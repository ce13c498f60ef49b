//! Trainable building blocks of the MobileNet graphs.

use rand::Rng;
use serde::Serialize;

use crate::attention::{UlsamBlock, UlsamConfig};
use crate::error::{Error, Result};
use crate::module::{BufferMut, Module, Param, ParamRole};
use crate::ops::{
    batch_norm_backward, batch_norm_forward, conv2d, conv2d_backward, fully_connected,
    fully_connected_backward, global_avg_pool, global_avg_pool_backward, Activation, BnCache,
    ConvSpec, LinearSpec, Mode, RunningStats,
};
use crate::tensor::{Element, Shape, Tensor};

/// Static description of one graph node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Full convolution with `kernel / 2` padding, followed by batch norm and
    /// the activation. A 1×1 kernel is a pointwise convolution.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    /// Depthwise 3×3 (stride s) + BN + ReLU, then pointwise 1×1 + BN + ReLU.
    DwsBlock {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    /// Inverted residual: optional 1×1 expansion with BN and ReLU6, depthwise
    /// 3×3 with BN and ReLU6, linear 1×1 projection with BN, and an identity
    /// skip when `stride == 1 && in_channels == out_channels`.
    ResidualBottleneck {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        expansion: usize,
    },
    Ulsam { channels: usize, groups: usize },
    GlobalAvgPool { channels: usize },
    FullyConnected {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    /// Marks the class-probability output. Softmax itself is folded into the
    /// cross-entropy loss, so this node passes logits through.
    SoftmaxHead { classes: usize },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { kernel: 1, .. } => "pointwise_conv",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::DwsBlock { .. } => "dws_block",
            LayerSpec::ResidualBottleneck { .. } => "residual_bottleneck",
            LayerSpec::Ulsam { .. } => "ulsam",
            LayerSpec::GlobalAvgPool { .. } => "global_avg_pool",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::SoftmaxHead { .. } => "softmax_head",
        }
    }

    pub fn in_channels(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { in_channels, .. }
            | LayerSpec::DwsBlock { in_channels, .. }
            | LayerSpec::ResidualBottleneck { in_channels, .. } => in_channels,
            LayerSpec::Ulsam { channels, .. } | LayerSpec::GlobalAvgPool { channels } => channels,
            LayerSpec::FullyConnected { in_features, .. } => in_features,
            LayerSpec::SoftmaxHead { classes } => classes,
        }
    }

    pub fn out_channels(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { out_channels, .. }
            | LayerSpec::DwsBlock { out_channels, .. }
            | LayerSpec::ResidualBottleneck { out_channels, .. } => out_channels,
            LayerSpec::Ulsam { channels, .. } | LayerSpec::GlobalAvgPool { channels } => channels,
            LayerSpec::FullyConnected { out_features, .. } => out_features,
            LayerSpec::SoftmaxHead { classes } => classes,
        }
    }

    pub fn stride(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { stride, .. }
            | LayerSpec::DwsBlock { stride, .. }
            | LayerSpec::ResidualBottleneck { stride, .. } => stride,
            _ => 1,
        }
    }

    /// Whether a ULSAM block may take this layer's place.
    pub fn preserves_shape(&self) -> bool {
        self.stride() == 1
            && self.in_channels() == self.out_channels()
            && !matches!(
                self,
                LayerSpec::GlobalAvgPool { .. }
                    | LayerSpec::FullyConnected { .. }
                    | LayerSpec::SoftmaxHead { .. }
            )
    }

    pub fn has_skip(&self) -> bool {
        matches!(self, LayerSpec::ResidualBottleneck { .. }) && self.preserves_shape()
    }

    /// Spatial extents produced from an `h × w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> (usize, usize) {
        match self {
            LayerSpec::GlobalAvgPool { .. }
            | LayerSpec::FullyConnected { .. }
            | LayerSpec::SoftmaxHead { .. } => (1, 1),
            _ => {
                let s = self.stride();
                ((h - 1) / s + 1, (w - 1) / s + 1)
            }
        }
    }

    /// The convolutions a block executes, in order.
    pub fn conv_stages(&self) -> Vec<(ConvSpec, Activation)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                activation,
            } => {
                let spec = if kernel == 1 {
                    ConvSpec::pointwise(in_channels, out_channels).with_stride(stride)
                } else {
                    ConvSpec::standard(in_channels, out_channels, kernel, stride, kernel / 2)
                };
                vec![(spec, activation)]
            }
            LayerSpec::DwsBlock {
                in_channels,
                out_channels,
                stride,
            } => vec![
                (ConvSpec::depthwise(in_channels, 3, stride, 1), Activation::Relu),
                (ConvSpec::pointwise(in_channels, out_channels), Activation::Relu),
            ],
            LayerSpec::ResidualBottleneck {
                in_channels,
                out_channels,
                stride,
                expansion,
            } => {
                let hidden = in_channels * expansion;
                let mut stages = Vec::with_capacity(3);
                if expansion != 1 {
                    stages.push((ConvSpec::pointwise(in_channels, hidden), Activation::Relu6));
                }
                stages.push((ConvSpec::depthwise(hidden, 3, stride, 1), Activation::Relu6));
                stages.push((ConvSpec::pointwise(hidden, out_channels), Activation::None));
                stages
            }
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels() == 0 || self.out_channels() == 0 || self.stride() == 0 {
            return Err(Error::config(format!(
                "{} needs positive channels and stride: {self:?}",
                self.kind_name()
            )));
        }
        match *self {
            LayerSpec::Conv2d { kernel, .. } if kernel == 0 || kernel % 2 == 0 => Err(
                Error::config(format!("conv2d kernel must be odd, got {kernel}")),
            ),
            LayerSpec::ResidualBottleneck { expansion: 0, .. } => {
                Err(Error::config("bottleneck expansion must be positive"))
            }
            LayerSpec::Ulsam { channels, groups } => UlsamConfig::new(channels, groups).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Instantiate the trainable module with freshly initialized weights.
    pub fn instantiate<T: Element, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Box<dyn Module<T>>> {
        self.validate()?;
        Ok(match *self {
            LayerSpec::Conv2d { .. } | LayerSpec::DwsBlock { .. } | LayerSpec::ResidualBottleneck { .. } => {
                let names: &[&str] = match (self, self.conv_stages().len()) {
                    (LayerSpec::Conv2d { .. }, _) => &["conv"],
                    (LayerSpec::DwsBlock { .. }, _) => &["dw", "pw"],
                    (_, 3) => &["expand", "dw", "project"],
                    _ => &["dw", "project"],
                };
                let stages = self
                    .conv_stages()
                    .into_iter()
                    .zip(names)
                    .map(|((spec, act), name)| ConvBn::init(name, spec, act, rng))
                    .collect();
                Box::new(ConvStack {
                    stages,
                    skip: self.has_skip(),
                })
            }
            LayerSpec::Ulsam { channels, groups } => {
                Box::new(UlsamBlock::init(UlsamConfig::new(channels, groups)?, rng))
            }
            LayerSpec::GlobalAvgPool { .. } => Box::new(GlobalPool { input: None }),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
                bias,
            } => Box::new(Linear::init(
                LinearSpec {
                    in_features,
                    out_features,
                    bias,
                },
                rng,
            )),
            LayerSpec::SoftmaxHead { .. } => Box::new(LogitsHead),
        })
    }
}

#[derive(Clone, Debug)]
struct BatchNorm<T: Element> {
    gamma: Param<T>,
    beta: Param<T>,
    running: RunningStats<T>,
}

#[derive(Clone, Debug)]
struct ConvBnCache<T: Element> {
    input: Tensor<T>,
    bn: BnCache<T>,
    pre_activation: Tensor<T>,
}

/// Convolution, batch normalization, activation.
#[derive(Clone, Debug)]
pub struct ConvBn<T: Element> {
    name: String,
    spec: ConvSpec,
    activation: Activation,
    weight: Param<T>,
    bn: BatchNorm<T>,
    cache: Option<ConvBnCache<T>>,
}

impl<T: Element> ConvBn<T> {
    /// He-normal weights, unit scale, zero shift.
    pub fn init<R: Rng + ?Sized>(name: &str, spec: ConvSpec, activation: Activation, rng: &mut R) -> Self {
        let fan_in = spec.filter_depth() * spec.kernel * spec.kernel;
        let c = spec.out_channels;
        ConvBn {
            name: name.to_string(),
            spec,
            activation,
            weight: Param::normal(
                format!("{name}.weight"),
                &spec.weight_dims(),
                ParamRole::Weight,
                2.0 / fan_in as f64,
                rng,
            ),
            bn: BatchNorm {
                gamma: Param::filled(format!("{name}.bn.gamma"), &[c], ParamRole::NormAffine, T::one()),
                beta: Param::zeros(format!("{name}.bn.beta"), &[c], ParamRole::NormAffine),
                running: RunningStats::new(c),
            },
            cache: None,
        }
    }

    pub fn spec(&self) -> ConvSpec {
        self.spec
    }

    fn run(
        &self,
        input: &Tensor<T>,
        running: &mut RunningStats<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, ConvBnCache<T>)> {
        let conv = conv2d(input, &self.spec, &self.weight.value, None)?;
        let (pre_activation, bn) = batch_norm_forward(&conv, &self.bn.gamma.value, &self.bn.beta.value, running, mode)?;
        let out = self.activation.forward(&pre_activation);
        Ok((
            out,
            ConvBnCache {
                input: input.clone(),
                bn,
                pre_activation,
            },
        ))
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut running = std::mem::replace(&mut self.bn.running, RunningStats::new(0));
        let result = self.run(input, &mut running, mode);
        self.bn.running = running;
        let (out, cache) = result?;
        self.cache = Some(cache);
        Ok(out)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input, &mut self.bn.running.clone(), Mode::Infer)?.0)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State(format!("{} backward called before forward", self.name)))?;
        let g = self.activation.backward(&cache.pre_activation, grad_out)?;
        let bn = batch_norm_backward(&cache.bn, &self.bn.gamma.value, &g)?;
        let conv = conv2d_backward(&cache.input, &self.spec, &self.weight.value, &bn.input)?;
        self.bn.gamma.accumulate(&bn.gamma);
        self.bn.beta.accumulate(&bn.beta);
        self.weight.accumulate(&conv.weight);
        Ok(conv.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bn.gamma, &self.bn.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bn.gamma, &mut self.bn.beta]
    }

    fn buffers_mut(&mut self) -> Vec<BufferMut<'_, T>> {
        vec![
            BufferMut {
                name: format!("{}.bn.running_mean", self.name),
                value: &mut self.bn.running.mean,
            },
            BufferMut {
                name: format!("{}.bn.running_var", self.name),
                value: &mut self.bn.running.var,
            },
        ]
    }
}

/// A chain of [`ConvBn`] stages with an optional identity skip around it.
#[derive(Clone, Debug)]
pub struct ConvStack<T: Element> {
    stages: Vec<ConvBn<T>>,
    skip: bool,
}

impl<T: Element> ConvStack<T> {
    pub fn stages(&self) -> &[ConvBn<T>] {
        &self.stages
    }

    pub fn has_skip(&self) -> bool {
        self.skip
    }
}

fn add_assign<T: Element>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d = *d + s;
    }
}

impl<T: Element> Module<T> for ConvStack<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for stage in &mut self.stages {
            x = stage.forward(&x, mode)?;
        }
        if self.skip {
            add_assign(&mut x, input);
        }
        Ok(x)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for stage in &self.stages {
            x = stage.infer(&x)?;
        }
        if self.skip {
            add_assign(&mut x, input);
        }
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for stage in self.stages.iter_mut().rev() {
            g = stage.backward(&g)?;
        }
        if self.skip {
            add_assign(&mut g, grad_out);
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.stages.iter().flat_map(|s| s.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.stages.iter_mut().flat_map(|s| s.params_mut()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<BufferMut<'_, T>> {
        self.stages.iter_mut().flat_map(|s| s.buffers_mut()).collect()
    }
}

/// Global average pooling.
#[derive(Clone, Debug)]
pub struct GlobalPool {
    input: Option<Shape>,
}

impl<T: Element> Module<T> for GlobalPool {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.input = Some(input.shape());
        global_avg_pool(input)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        global_avg_pool(input)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input
            .ok_or_else(|| Error::State("pool backward called before forward".into()))?;
        global_avg_pool_backward(shape, grad_out)
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

/// Dense classifier.
#[derive(Clone, Debug)]
pub struct Linear<T: Element> {
    spec: LinearSpec,
    weight: Param<T>,
    bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Element> Linear<T> {
    pub fn init<R: Rng + ?Sized>(spec: LinearSpec, rng: &mut R) -> Self {
        let (i, o) = (spec.in_features, spec.out_features);
        Linear {
            spec,
            weight: Param::normal("fc.weight", &[o, i], ParamRole::Weight, 1.0 / i as f64, rng),
            bias: spec.bias.then(|| Param::zeros("fc.bias", &[o], ParamRole::Bias)),
            input: None,
        }
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let bias = self.bias.as_ref().map(|b| b.value.as_slice());
        fully_connected(input, &self.spec, &self.weight.value, bias)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State("fully connected backward called before forward".into()))?;
        let grads = fully_connected_backward(input, &self.spec, &self.weight.value, grad_out)?;
        self.weight.accumulate(&grads.weight);
        if let (Some(b), Some(db)) = (self.bias.as_mut(), grads.bias) {
            b.accumulate(&db);
        }
        Ok(grads.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Pass-through marking the class-score output.
#[derive(Clone, Copy, Debug)]
pub struct LogitsHead;

impl<T: Element> Module<T> for LogitsHead {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        Ok(input.clone())
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(input.clone())
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(grad_out.clone())
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skip_only_on_shape_preserving_bottlenecks() {
        let b = |i, o, s| LayerSpec::ResidualBottleneck {
            in_channels: i,
            out_channels: o,
            stride: s,
            expansion: 6,
        };
        assert!(b(32, 32, 1).has_skip());
        assert!(!b(32, 32, 2).has_skip());
        assert!(!b(32, 64, 1).has_skip());
        let dws = LayerSpec::DwsBlock {
            in_channels: 8,
            out_channels: 8,
            stride: 1,
        };
        assert!(!dws.has_skip());
        assert!(dws.preserves_shape());
    }

    #[test]
    fn stage_layouts() {
        let first = LayerSpec::ResidualBottleneck {
            in_channels: 32,
            out_channels: 16,
            stride: 1,
            expansion: 1,
        };
        let stages = first.conv_stages();
        assert_eq!(stages.len(), 2);
        assert_eq!(stages[0].0, ConvSpec::depthwise(32, 3, 1, 1));
        assert_eq!(stages[1].1, Activation::None);
        let dws = LayerSpec::DwsBlock {
            in_channels: 32,
            out_channels: 64,
            stride: 2,
        };
        assert_eq!(dws.conv_stages()[0].0, ConvSpec::depthwise(32, 3, 2, 1));
        assert_eq!(dws.output_extent(112, 112), (56, 56));
        assert_eq!(dws.output_extent(7, 7), (4, 4));
    }

    #[test]
    fn dws_parameter_count() {
        let spec = LayerSpec::DwsBlock {
            in_channels: 512,
            out_channels: 512,
            stride: 1,
        };
        let m = spec.instantiate::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // 9·512 + 512·512 weights + two BN affine pairs
        assert_eq!(m.param_count(), 9 * 512 + 512 * 512 + 4 * 512);
    }

    #[test]
    fn residual_skip_adds_input() {
        let spec = LayerSpec::ResidualBottleneck {
            in_channels: 4,
            out_channels: 4,
            stride: 1,
            expansion: 2,
        };
        let mut m = spec.instantiate::<f64, _>(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // zeroing the projection's BN scale leaves only the skip path
        for p in m.params_mut() {
            if p.name == "project.bn.gamma" {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = Tensor::randn(Shape::new(2, 4, 3, 3), 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(m.forward(&x, Mode::Train).unwrap(), x);
    }

    #[test]
    fn infer_matches_forward_in_inference_mode() {
        let spec = LayerSpec::DwsBlock {
            in_channels: 4,
            out_channels: 6,
            stride: 2,
        };
        let mut m = spec.instantiate::<f64, _>(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = Tensor::randn(Shape::new(2, 4, 5, 5), 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        m.forward(&x, Mode::Train).unwrap();
        let a = m.infer(&x).unwrap();
        let b = m.forward(&x, Mode::Infer).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn even_kernels_are_rejected() {
        let spec = LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 8,
            kernel: 2,
            stride: 1,
            activation: Activation::Relu,
        };
        assert!(spec.validate().is_err());
    }
}
