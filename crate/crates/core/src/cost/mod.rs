//! Exact parameter and multiply-accumulate accounting.

pub mod formulas;
pub mod report;

pub use formulas::{
    attention_overhead, flops_dws, flops_sconv, format_table1, table1_report, table1_rows,
    AttentionKind, AttentionOverheadQuery, Overhead, Table1Row,
};
pub use report::{
    analyze_model, analyze_model_at, instrumented_macs, layer_cost, CostReport, LayerCost,
    DEFAULT_INPUT_SIZE,
};
