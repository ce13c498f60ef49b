//! Per-layer parameter and MAC accounting for built graphs.

use serde::Serialize;
use serde_json::json;

use super::formulas::{attention_overhead, flops_dws, flops_sconv, AttentionKind, AttentionOverheadQuery};
use crate::error::Result;
use crate::model::{LayerSpec, ModelGraph};
use crate::ops::{count_macs, ConvKind, MacKind, MacTally};
use crate::tensor::{Element, Shape, Tensor};

pub const DEFAULT_INPUT_SIZE: usize = 224;

/// Cost of one graph node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub layer: String,
    pub kind: &'static str,
    /// Convolution and dense weights plus biases.
    pub params: u64,
    /// Batch-norm scale and shift entries.
    pub bn_params: u64,
    pub macs: MacTally,
    /// Spatial extents of the layer output.
    pub output: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub arch: String,
    pub alpha: f64,
    pub num_classes: usize,
    pub positions: String,
    pub groups: Option<usize>,
    pub input_size: usize,
    pub rows: Vec<LayerCost>,
    pub total_params: u64,
    pub total_bn_params: u64,
    pub total_macs: MacTally,
}

/// Cost of one layer spec applied to an `h × w` input.
pub fn layer_cost(label: &str, spec: &LayerSpec, h: usize, w: usize) -> LayerCost {
    let mut macs = MacTally::default();
    let mut params = 0u64;
    let mut bn_params = 0u64;
    let (mut ch, mut cw) = (h, w);
    for (conv, _) in spec.conv_stages() {
        let shape = conv
            .output_shape(Shape::new(1, conv.in_channels, ch, cw))
            .expect("validated layer spec");
        let (ho, wo) = (shape.height as u64, shape.width as u64);
        let (m, n, k) = (conv.in_channels as u64, conv.out_channels as u64, conv.kernel as u64);
        let count = match conv.kind {
            ConvKind::Depthwise => flops_dws(k, m, n, ho, wo).0,
            ConvKind::Standard | ConvKind::Pointwise => flops_sconv(k, m, n, ho, wo),
        };
        macs.add(conv.mac_kind(), count);
        params += conv.weight_len() as u64 + if conv.bias { n } else { 0 };
        bn_params += 2 * n;
        (ch, cw) = (shape.height, shape.width);
    }
    match *spec {
        LayerSpec::Ulsam { channels, .. } => {
            let q = AttentionOverheadQuery::new(AttentionKind::Ulsam, channels as u64, h as u64, w as u64);
            let o = attention_overhead(&q).expect("positive extents");
            params += o.params;
            macs.add(MacKind::Attention, o.macs);
        }
        LayerSpec::FullyConnected {
            in_features,
            out_features,
            bias,
        } => {
            let (i, o) = (in_features as u64, out_features as u64);
            params += i * o + if bias { o } else { 0 };
            macs.add(MacKind::FullyConnected, i * o);
        }
        _ => {}
    }
    LayerCost {
        layer: label.to_string(),
        kind: spec.kind_name(),
        params,
        bn_params,
        macs,
        output: spec.output_extent(h, w),
    }
}

/// Analytic report at a square input of `input_size` pixels.
pub fn analyze_model_at<T: Element>(graph: &ModelGraph<T>, input_size: usize) -> CostReport {
    let meta = graph.meta();
    let (mut h, mut w) = (input_size, input_size);
    let mut rows = Vec::new();
    for (label, spec) in graph.layers() {
        let row = layer_cost(&label, &spec, h, w);
        (h, w) = row.output;
        rows.push(row);
    }
    let mut total_macs = MacTally::default();
    rows.iter().for_each(|r| total_macs.merge(&r.macs));
    CostReport {
        arch: meta.arch.to_string(),
        alpha: meta.alpha,
        num_classes: meta.num_classes,
        positions: meta.positions(),
        groups: meta.ulsam_groups,
        input_size,
        total_params: rows.iter().map(|r| r.params).sum(),
        total_bn_params: rows.iter().map(|r| r.bn_params).sum(),
        total_macs,
        rows,
    }
}

/// Analytic report at 224 × 224.
pub fn analyze_model<T: Element>(graph: &ModelGraph<T>) -> CostReport {
    analyze_model_at(graph, DEFAULT_INPUT_SIZE)
}

/// MACs tallied inside the kernels during one inference pass on a single
/// `input_size × input_size` image.
pub fn instrumented_macs<T: Element>(graph: &ModelGraph<T>, input_size: usize) -> Result<MacTally> {
    let input = Tensor::zeros(Shape::new(1, graph.input_channels(), input_size, input_size));
    let (out, tally) = count_macs(|| graph.infer(&input));
    out?;
    Ok(tally)
}

fn percent(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn millions(v: u64) -> String {
    format!("{:.2}M", v as f64 / 1e6)
}

fn grouped(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl CostReport {
    pub fn total_mac_count(&self) -> u64 {
        self.total_macs.total()
    }

    /// Parameters with batch-norm affine pairs included.
    pub fn total_params_with_bn(&self) -> u64 {
        self.total_params + self.total_bn_params
    }

    /// Percentage of all MACs attributed to `kind`.
    pub fn share(&self, kind: MacKind) -> f64 {
        percent(self.total_macs.get(kind), self.total_mac_count())
    }

    pub fn row_share(&self, row: &LayerCost) -> f64 {
        percent(row.macs.total(), self.total_mac_count())
    }

    /// Summed MACs of the rows with the given labels.
    pub fn macs_of(&self, labels: &[&str]) -> u64 {
        self.rows
            .iter()
            .filter(|r| labels.contains(&r.layer.as_str()))
            .map(|r| r.macs.total())
            .sum()
    }

    pub fn row(&self, label: &str) -> Option<&LayerCost> {
        self.rows.iter().find(|r| r.layer == label)
    }

    pub fn totals_line(&self) -> String {
        format!(
            "{} params / {} MACs",
            millions(self.total_params),
            millions(self.total_mac_count())
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} alpha={} classes={} input={}x{}",
            self.arch, self.alpha, self.num_classes, self.input_size, self.input_size
        );
        if !self.positions.is_empty() {
            out.push_str(&format!(
                " ulsam=[{}] g={}",
                self.positions,
                self.groups.map_or("-".into(), |g| g.to_string())
            ));
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<8} {:<20} {:>12} {:>10} {:>14} {:>8}\n",
            "layer", "kind", "params", "bn_params", "MACs", "share"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8} {:<20} {:>12} {:>10} {:>14} {:>7.2}%\n",
                r.layer,
                r.kind,
                grouped(r.params),
                grouped(r.bn_params),
                grouped(r.macs.total()),
                self.row_share(r)
            ));
        }
        out.push_str(&format!(
            "total: {} ({} params, {} batch-norm affine, {} MACs)\n",
            self.totals_line(),
            grouped(self.total_params),
            grouped(self.total_bn_params),
            grouped(self.total_mac_count())
        ));
        let shares: Vec<String> = MacKind::ALL
            .iter()
            .map(|&k| format!("{k} {:.2}%", self.share(k)))
            .collect();
        out.push_str(&format!("MAC shares: {}\n", shares.join(", ")));
        out.push_str("MACs count one multiply-accumulate per kernel tap; batch norm, activations and pooling are excluded.\n");
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let layers: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                json!({
                    "layer": r.layer,
                    "kind": r.kind,
                    "params": r.params,
                    "bn_params": r.bn_params,
                    "macs": r.macs.total(),
                    "macs_by_kind": r.macs,
                    "share": self.row_share(r),
                })
            })
            .collect();
        let shares: serde_json::Map<String, serde_json::Value> = MacKind::ALL
            .iter()
            .map(|&k| (k.name().to_string(), json!(self.share(k))))
            .collect();
        json!({
            "arch": self.arch,
            "alpha": self.alpha,
            "num_classes": self.num_classes,
            "positions": self.positions,
            "groups": self.groups,
            "input_size": self.input_size,
            "layers": layers,
            "totals": {
                "params": self.total_params,
                "bn_params": self.total_bn_params,
                "params_with_bn": self.total_params_with_bn(),
                "macs": self.total_mac_count(),
                "macs_by_kind": self.total_macs,
            },
            "shares": shares,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Activation;

    #[test]
    fn first_mv1_layer() {
        let spec = LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 32,
            kernel: 3,
            stride: 2,
            activation: Activation::Relu,
        };
        let c = layer_cost("1", &spec, 224, 224);
        assert_eq!(c.params, 864);
        assert_eq!(c.bn_params, 64);
        assert_eq!(c.macs.standard, 10_838_016);
        assert_eq!(c.output, (112, 112));
    }

    #[test]
    fn bottleneck_expansion_runs_at_input_resolution() {
        let spec = LayerSpec::ResidualBottleneck {
            in_channels: 16,
            out_channels: 24,
            stride: 2,
            expansion: 6,
        };
        let c = layer_cost("3", &spec, 112, 112);
        assert_eq!(c.macs.pointwise, 16 * 96 * 112 * 112 + 96 * 24 * 56 * 56);
        assert_eq!(c.macs.depthwise, 9 * 96 * 56 * 56);
        assert_eq!(c.params, 16 * 96 + 9 * 96 + 96 * 24);
    }

    #[test]
    fn grouping() {
        assert_eq!(grouped(0), "0");
        assert_eq!(grouped(999), "999");
        assert_eq!(grouped(1_000), "1,000");
        assert_eq!(grouped(568_740_352), "568,740,352");
    }
}
