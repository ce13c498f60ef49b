//! Model cost totals against an independent layer-by-layer tabulation of the
//! MobileNet layouts, plus analytic-vs-instrumented agreement.

use ulsam_core::cost::{analyze_model, instrumented_macs, CostReport};
use ulsam_core::model::{build_mv1, build_mv2, parse_positions, ModelGraph};
use ulsam_core::ops::MacKind;

fn mv1(alpha: f64, positions: &str) -> ModelGraph<f32> {
    let mut g = build_mv1(alpha, 1000, 0).unwrap();
    g.apply_ulsam(&parse_positions(positions).unwrap(), 4).unwrap();
    g
}

fn mv2(positions: &str) -> ModelGraph<f32> {
    let mut g = build_mv2(1000, 0).unwrap();
    g.apply_ulsam(&parse_positions(positions).unwrap(), 4).unwrap();
    g
}

fn totals(r: &CostReport) -> (u64, u64, u64) {
    (r.total_params, r.total_params_with_bn(), r.total_mac_count())
}

#[test]
fn mv1_width_variants() {
    assert_eq!(totals(&analyze_model(&mv1(1.0, ""))), (4_210_088, 4_231_976, 568_740_352));
    assert_eq!(totals(&analyze_model(&mv1(0.75, ""))), (2_569_144, 2_585_560, 325_400_448));
    assert_eq!(totals(&analyze_model(&mv1(0.5, ""))), (1_320_648, 1_331_592, 149_497_088));
}

#[test]
fn mv1_with_ulsam() {
    let base = analyze_model(&mv1(1.0, ""));
    let r = analyze_model(&mv1(1.0, "8:1, 9:1, 11"));
    assert_eq!(r.total_params_with_bn(), 3_966_248);
    assert_eq!(r.total_mac_count(), 517_059_072);
    assert_eq!(base.total_mac_count() - r.total_mac_count(), 51_681_280);
    assert_eq!(r.positions, "8:1, 9:1, 11");
}

#[test]
fn mv2_variants() {
    let cases = [
        ("", 3_470_760, 3_504_872, 300_774_272),
        ("14, 17", 3_039_656, 3_067_112, 262_659_328),
        ("16, 17", 2_839_720, 2_865_512, 269_853_312),
        ("13, 14, 16, 17", 2_608_552, 2_629_352, 224_544_384),
    ];
    for (pos, p, pbn, m) in cases {
        assert_eq!(totals(&analyze_model(&mv2(pos))), (p, pbn, m), "{pos}");
    }
}

#[test]
fn mv1_mac_shares() {
    let r = analyze_model(&mv1(1.0, ""));
    assert!((r.share(MacKind::Pointwise) - 94.857).abs() < 1e-3);
    assert!((r.share(MacKind::Depthwise) - 3.057).abs() < 1e-3);
    let sum: f64 = MacKind::ALL.iter().map(|&k| r.share(k)).sum();
    assert!((sum - 100.0).abs() < 1e-9);
    let mid = r.macs_of(&["8", "9", "10", "11", "12"]);
    assert!((100.0 * mid as f64 / r.total_mac_count() as f64 - 45.964).abs() < 1e-3);
}

#[test]
fn totals_equal_row_sums() {
    for g in [mv1(1.0, "8:1, 9:1, 11"), mv2("13, 14")] {
        let r = analyze_model(&g);
        assert_eq!(r.total_params, r.rows.iter().map(|x| x.params).sum::<u64>());
        assert_eq!(r.total_mac_count(), r.rows.iter().map(|x| x.macs.total()).sum::<u64>());
        assert_eq!(r.total_params_with_bn() as usize, g.param_count());
    }
}

#[test]
fn analytic_matches_instrumented_at_small_inputs() {
    for size in [32, 57] {
        for g in [mv1(0.25, "8:1, 11"), mv2("14, 16:1")] {
            let analytic = ulsam_core::cost::analyze_model_at(&g, size).total_macs;
            assert_eq!(instrumented_macs(&g, size).unwrap(), analytic, "size {size}");
        }
    }
}
