//! Shared setup for the desk-scale training check.
#![allow(dead_code)]

use ulsam_core::model::{build_mv1, parse_positions, ModelGraph};
use ulsam_core::train::{synthetic, Dataset, Decay, SyntheticSpec, TrainConfig};

/// Tiny MV1 (alpha 0.25, 4 classes) with ULSAM inserted after layers 8 and 9
/// and substituted for layer 11.
pub fn tiny_ulsam(seed: u64) -> ModelGraph<f32> {
    let mut g = build_mv1(0.25, 4, seed).unwrap();
    g.apply_ulsam(&parse_positions("8:1, 9:1, 11").unwrap(), 4).unwrap();
    g
}

/// 128 noisy 16x16 images around four colour prototypes.
pub fn separable_dataset() -> Dataset {
    synthetic(&SyntheticSpec {
        noise: 0.5,
        ..SyntheticSpec::new(4, 128, 16, 1)
    })
    .unwrap()
}

/// Full-batch SGD, so the epoch loss carries no batch-composition noise.
pub fn sanity_config() -> TrainConfig {
    TrainConfig {
        lr: 0.05,
        schedule: Decay::Step { factor: 0.1, every: 30 },
        batch_size: 128,
        epochs: 30,
        seed: 0,
        ..TrainConfig::default()
    }
}

/// Indices `i` where the 5-epoch mean rises from window `i` to window `i + 1`.
/// Window 0 covers epochs 1-5.
pub fn smoothed_increases(losses: &[f64]) -> Vec<usize> {
    let ma = ulsam_core::train::moving_average(losses, 5);
    (1..ma.len()).filter(|&i| ma[i] > ma[i - 1]).map(|i| i - 1).collect()
}

pub fn snapshot(g: &mut ModelGraph<f32>) -> Vec<(String, Vec<u32>)> {
    let mut out: Vec<(String, Vec<u32>)> = g
        .params()
        .into_iter()
        .map(|(n, p)| (n, p.value.iter().map(|v| v.to_bits()).collect()))
        .collect();
    out.extend(
        g.buffers_mut()
            .into_iter()
            .map(|b| (b.name.clone(), b.value.iter().map(|v| v.to_bits()).collect())),
    );
    out
}
