//! MobileNet-V1 and MobileNet-V2 layouts.

use super::graph::{Arch, GraphMeta, ModelGraph};
use super::layers::LayerSpec;
use crate::error::{Error, Result};
use crate::ops::Activation;
use crate::tensor::Element;

/// MobileNet-V1 DWS blocks 2..=14 as `(in, out, stride)` at width 1.0.
const MV1_DWS: [(usize, usize, usize); 13] = [
    (32, 64, 1),
    (64, 128, 2),
    (128, 128, 1),
    (128, 256, 2),
    (256, 256, 1),
    (256, 512, 2),
    (512, 512, 1),
    (512, 512, 1),
    (512, 512, 1),
    (512, 512, 1),
    (512, 512, 1),
    (512, 1024, 2),
    (1024, 1024, 1),
];

/// MobileNet-V2 bottlenecks 2..=18 as `(in, out, stride, expansion)`.
const MV2_BOTTLENECKS: [(usize, usize, usize, usize); 17] = [
    (32, 16, 1, 1),
    (16, 24, 2, 6),
    (24, 24, 1, 6),
    (24, 32, 2, 6),
    (32, 32, 1, 6),
    (32, 32, 1, 6),
    (32, 64, 2, 6),
    (64, 64, 1, 6),
    (64, 64, 1, 6),
    (64, 64, 1, 6),
    (64, 96, 1, 6),
    (96, 96, 1, 6),
    (96, 96, 1, 6),
    (96, 160, 2, 6),
    (160, 160, 1, 6),
    (160, 160, 1, 6),
    (160, 320, 1, 6),
];

/// `c·α` rounded to the nearest multiple of 8, never below 8.
pub fn scale_channels(channels: usize, alpha: f64) -> usize {
    let v = (channels as f64 * alpha / 8.0).round() as usize * 8;
    v.max(8)
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes == 0 {
        return Err(Error::config("num_classes must be at least 1"));
    }
    Ok(())
}

/// Layer list of MobileNet-V1 at width multiplier `alpha`.
pub fn mv1_layers(alpha: f64, num_classes: usize) -> Result<Vec<(String, LayerSpec)>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!("alpha must be in (0, 1], got {alpha}")));
    }
    check_classes(num_classes)?;
    let c = |n| scale_channels(n, alpha);
    let mut layers = vec![(
        "1".to_string(),
        LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: c(32),
            kernel: 3,
            stride: 2,
            activation: Activation::Relu,
        },
    )];
    for (i, &(cin, cout, stride)) in MV1_DWS.iter().enumerate() {
        layers.push((
            (i + 2).to_string(),
            LayerSpec::DwsBlock {
                in_channels: c(cin),
                out_channels: c(cout),
                stride,
            },
        ));
    }
    let features = c(1024);
    layers.push(("pool".into(), LayerSpec::GlobalAvgPool { channels: features }));
    layers.push((
        "fc".into(),
        LayerSpec::FullyConnected {
            in_features: features,
            out_features: num_classes,
            bias: true,
        },
    ));
    layers.push(("softmax".into(), LayerSpec::SoftmaxHead { classes: num_classes }));
    Ok(layers)
}

/// Layer list of MobileNet-V2 (width 1.0).
pub fn mv2_layers(num_classes: usize) -> Result<Vec<(String, LayerSpec)>> {
    check_classes(num_classes)?;
    let mut layers = vec![(
        "1".to_string(),
        LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 32,
            kernel: 3,
            stride: 2,
            activation: Activation::Relu6,
        },
    )];
    for (i, &(cin, cout, stride, expansion)) in MV2_BOTTLENECKS.iter().enumerate() {
        layers.push((
            (i + 2).to_string(),
            LayerSpec::ResidualBottleneck {
                in_channels: cin,
                out_channels: cout,
                stride,
                expansion,
            },
        ));
    }
    layers.push((
        "19".into(),
        LayerSpec::Conv2d {
            in_channels: 320,
            out_channels: 1280,
            kernel: 1,
            stride: 1,
            activation: Activation::Relu6,
        },
    ));
    layers.push(("pool".into(), LayerSpec::GlobalAvgPool { channels: 1280 }));
    layers.push((
        "20".into(),
        LayerSpec::FullyConnected {
            in_features: 1280,
            out_features: num_classes,
            bias: true,
        },
    ));
    Ok(layers)
}

pub fn build_mv1<T: Element>(alpha: f64, num_classes: usize, seed: u64) -> Result<ModelGraph<T>> {
    let layers = mv1_layers(alpha, num_classes)?;
    let meta = GraphMeta {
        arch: Arch::Mv1,
        alpha,
        num_classes,
        seed,
        ulsam_groups: None,
        directives: Vec::new(),
    };
    ModelGraph::from_layers(meta, layers)
}

pub fn build_mv2<T: Element>(num_classes: usize, seed: u64) -> Result<ModelGraph<T>> {
    let layers = mv2_layers(num_classes)?;
    let meta = GraphMeta {
        arch: Arch::Mv2,
        alpha: 1.0,
        num_classes,
        seed,
        ulsam_groups: None,
        directives: Vec::new(),
    };
    ModelGraph::from_layers(meta, layers)
}
