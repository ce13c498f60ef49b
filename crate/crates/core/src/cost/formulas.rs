//! Closed-form parameter and multiply-accumulate counts.
//!
//! All counts are exact integers in multiply-accumulates (one per kernel tap
//! per output element).

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// `s_k·s_k·m·n·h·w` for a standard convolution producing an `h × w` map.
pub fn flops_sconv(s_k: u64, m: u64, n: u64, h: u64, w: u64) -> u64 {
    s_k * s_k * m * n * h * w
}

/// `(depthwise, pointwise)` MACs of a depthwise-separable convolution:
/// `(s_k·s_k·m·h·w, m·n·h·w)`.
pub fn flops_dws(s_k: u64, m: u64, n: u64, h: u64, w: u64) -> (u64, u64) {
    (s_k * s_k * m * h * w, m * n * h * w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    NonLocal,
    A2Net,
    SeNet,
    Bam,
    Cbam,
    Ulsam,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 6] = [
        AttentionKind::NonLocal,
        AttentionKind::A2Net,
        AttentionKind::SeNet,
        AttentionKind::Bam,
        AttentionKind::Cbam,
        AttentionKind::Ulsam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::NonLocal => "Non-Local",
            AttentionKind::A2Net => "A2-Net",
            AttentionKind::SeNet => "SE-Net",
            AttentionKind::Bam => "BAM",
            AttentionKind::Cbam => "CBAM",
            AttentionKind::Ulsam => "ULSAM",
        }
    }

    fn uses_reduction(self) -> bool {
        matches!(self, AttentionKind::SeNet | AttentionKind::Bam | AttentionKind::Cbam)
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inputs to [`attention_overhead`]. `t` (A²-Net map count) defaults to
/// `m / 8` and `r` (reduction ratio) to 16.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionOverheadQuery {
    pub kind: AttentionKind,
    pub m: u64,
    pub h: u64,
    pub w: u64,
    pub t: Option<u64>,
    pub r: Option<u64>,
}

impl AttentionOverheadQuery {
    pub fn new(kind: AttentionKind, m: u64, h: u64, w: u64) -> Self {
        AttentionOverheadQuery {
            kind,
            m,
            h,
            w,
            t: None,
            r: None,
        }
    }

    pub fn with_t(self, t: u64) -> Self {
        AttentionOverheadQuery { t: Some(t), ..self }
    }

    pub fn with_r(self, r: u64) -> Self {
        AttentionOverheadQuery { r: Some(r), ..self }
    }

    pub fn t(&self) -> u64 {
        self.t.unwrap_or(self.m / 8)
    }

    pub fn r(&self) -> u64 {
        self.r.unwrap_or(16)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Overhead {
    pub params: u64,
    pub macs: u64,
}

/// Parameter and MAC overhead of one attention module on an `m × h × w` map.
pub fn attention_overhead(q: &AttentionOverheadQuery) -> Result<Overhead> {
    let (m, hw) = (q.m, q.h * q.w);
    if m == 0 || q.h == 0 || q.w == 0 {
        return Err(Error::config(format!(
            "attention overhead needs m, h, w >= 1, got m={m}, h={}, w={}",
            q.h, q.w
        )));
    }
    let r = q.r();
    if q.kind.uses_reduction() && (r == 0 || m % r != 0) {
        return Err(Error::config(format!(
            "{}: reduction ratio r={r} must divide m={m}",
            q.kind
        )));
    }
    let (params, macs) = match q.kind {
        AttentionKind::NonLocal => (2 * m * m, 2 * m * m * hw),
        AttentionKind::A2Net => {
            let t = q.t();
            if t == 0 {
                return Err(Error::config(format!("A2-Net needs t >= 1, got t={t} (m={m})")));
            }
            (2 * m * t, 2 * m * t * hw)
        }
        AttentionKind::SeNet => {
            let mlp = 2 * m * (m / r);
            (mlp, mlp)
        }
        AttentionKind::Bam => {
            let p = 4 * m * (m / r) + 18 * (m / r) * (m / r);
            (p, 2 * m * (m / r) + p * hw)
        }
        AttentionKind::Cbam => {
            let mlp = 2 * m * (m / r);
            (mlp + 98, mlp + 98 * hw)
        }
        AttentionKind::Ulsam => (2 * m, 2 * m * hw),
    };
    Ok(Overhead { params, macs })
}

/// One row of the attention-overhead comparison.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Table1Row {
    pub kind: AttentionKind,
    pub params: u64,
    pub macs: u64,
    /// Parameters in thousands, rounded to an integer.
    pub params_k: String,
    /// MACs in millions, rounded to two decimals.
    pub macs_m: String,
    /// Parameters relative to ULSAM, rounded to an integer.
    pub params_norm: String,
    /// MACs relative to ULSAM, rounded to two decimals.
    pub macs_norm: String,
}

impl fmt::Display for Table1Row {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} | {} | {} | {}× | {}×",
            self.kind, self.params_k, self.macs_m, self.params_norm, self.macs_norm
        )
    }
}

/// `num / den` rounded half-up to an integer.
fn round_div(num: u64, den: u64) -> u64 {
    (2 * num + den) / (2 * den)
}

/// `num / den` rounded half-up to two decimals, trailing zeros dropped.
fn two_decimals(num: u64, den: u64) -> String {
    let hundredths = round_div(num * 100, den);
    let (int, frac) = (hundredths / 100, hundredths % 100);
    match frac {
        0 => int.to_string(),
        f if f % 10 == 0 => format!("{int}.{}", f / 10),
        f => format!("{int}.{f:02}"),
    }
}

/// All six rows for an `m × h × w` map with default `t` and `r`.
pub fn table1_rows(m: u64, h: u64, w: u64) -> Result<Vec<Table1Row>> {
    let base = attention_overhead(&AttentionOverheadQuery::new(AttentionKind::Ulsam, m, h, w))?;
    AttentionKind::ALL
        .iter()
        .map(|&kind| {
            let o = attention_overhead(&AttentionOverheadQuery::new(kind, m, h, w))?;
            Ok(Table1Row {
                kind,
                params: o.params,
                macs: o.macs,
                params_k: round_div(o.params, 1000).to_string(),
                macs_m: two_decimals(o.macs, 1_000_000),
                params_norm: round_div(o.params, base.params).to_string(),
                macs_norm: two_decimals(o.macs, base.macs),
            })
        })
        .collect()
}

/// The comparison at `m = 512`, `h = w = 14`, `t = m/8`, `r = 16`.
pub fn table1_report() -> Vec<Table1Row> {
    table1_rows(512, 14, 14).expect("reference dimensions are valid")
}

pub fn format_table1(rows: &[Table1Row]) -> String {
    let mut out = String::from("Module | Params (×10³) | MACs (×10⁶) | Params (norm.) | MACs (norm.)\n");
    for row in rows {
        out.push_str(&row.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_helpers() {
        assert_eq!(round_div(65_536, 1000), 66);
        assert_eq!(round_div(1_500, 1000), 2);
        assert_eq!(round_div(1_499, 1000), 1);
        assert_eq!(two_decimals(200_704, 1_000_000), "0.2");
        assert_eq!(two_decimals(102_760_448, 1_000_000), "102.76");
        assert_eq!(two_decimals(1_000_000, 1_000_000), "1");
        assert_eq!(two_decimals(1_005, 1_000), "1.01");
        assert_eq!(two_decimals(1_050, 1_000), "1.05");
    }

    #[test]
    fn reduction_must_divide() {
        let q = AttentionOverheadQuery::new(AttentionKind::SeNet, 100, 7, 7).with_r(16);
        assert!(matches!(attention_overhead(&q), Err(Error::Config(_))));
        // ULSAM ignores r
        let q = AttentionOverheadQuery::new(AttentionKind::Ulsam, 100, 7, 7).with_r(16);
        assert_eq!(attention_overhead(&q).unwrap(), Overhead { params: 200, macs: 200 * 49 });
    }

    #[test]
    fn dws_example() {
        assert_eq!(flops_dws(3, 512, 512, 14, 14), (903_168, 51_380_224));
        assert_eq!(flops_sconv(3, 3, 32, 112, 112), 10_838_016);
    }
}
