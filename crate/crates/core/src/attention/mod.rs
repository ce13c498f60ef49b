//! Attention blocks: ULSAM and the squeeze-and-excitation baseline.

pub mod se;
pub mod ulsam;

pub use se::{SeBlock, SeConfig};
pub use ulsam::{
    attention_map, case3_attention, case3_reduction_check, split_groups, ulsam_attention_maps,
    ulsam_forward, UlsamBlock, UlsamConfig, UlsamGrads, UlsamWeights,
};
