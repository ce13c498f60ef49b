//! MobileNet graph construction, ULSAM placement and whole-model passes.

pub mod directive;
pub mod graph;
pub mod layers;
pub mod mobilenet;

pub use directive::{format_positions, parse_positions, PlacementMode, PositionDirective};
pub use graph::{apply_ulsam, Arch, GraphMeta, ModelGraph};
pub use layers::LayerSpec;
pub use mobilenet::{build_mv1, build_mv2, mv1_layers, mv2_layers, scale_channels};
