//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

#![allow(clippy::needless_range_loop)]

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulsam_core::attention::{case3_attention, ulsam_attention_maps, ulsam_forward, UlsamConfig, UlsamWeights};
use ulsam_core::cost::{analyze_model, instrumented_macs};
use ulsam_core::model::{build_mv1, build_mv2, parse_positions, ModelGraph};
use ulsam_core::ops::MacKind;
use ulsam_core::train::{checkpoint, train_loop, LrSchedule, TrainOutputs};
use ulsam_core::{gradcheck, Shape, Tensor};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(problems: Vec<String>, summary: String) -> Self {
        if problems.is_empty() {
            Outcome { passed: true, detail: summary }
        } else {
            Outcome { passed: false, detail: problems.join("; ") }
        }
    }
}

fn within_budget(problems: &mut Vec<String>, start: Instant, budget: Duration) {
    let took = start.elapsed();
    if took >= budget {
        problems.push(format!("took {took:.2?}, budget {budget:?}"));
    }
}

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

fn table1() -> Outcome {
    let start = Instant::now();
    let mut out = Vec::new();
    let code = ulsam_core::cli::run(["ulsam", "table1"], &mut out);
    let text = String::from_utf8(out).unwrap();
    let mut problems = Vec::new();
    if code != 0 {
        problems.push(format!("table1 exited {code}"));
    }
    let expected = [
        ["Non-Local", "524", "102.76", "512×", "512×"],
        ["A2-Net", "66", "12.85", "64×", "64×"],
        ["SE-Net", "33", "0.03", "33×", "0.16×"],
        ["BAM", "84", "16.49", "82×", "82.16×"],
        ["CBAM", "33", "0.05", "33×", "0.26×"],
        ["ULSAM", "1", "0.2", "1×", "1×"],
    ];
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(" | ").collect()).collect();
    if rows.len() != expected.len() {
        problems.push(format!("{} rows, expected {}", rows.len(), expected.len()));
    }
    let columns = ["params ×10³", "MACs ×10⁶", "params norm.", "MACs norm."];
    for (row, want) in rows.iter().zip(&expected) {
        if row[0] != want[0] {
            problems.push(format!("row {} where {} expected", row[0], want[0]));
            continue;
        }
        for (col, name) in columns.iter().enumerate() {
            let got = row.get(col + 1).copied().unwrap_or("");
            if got != want[col + 1] {
                problems.push(format!("{} {name}: {got} vs {}", want[0], want[col + 1]));
            }
        }
    }
    within_budget(&mut problems, start, Duration::from_secs(1));
    Outcome::new(problems, "all 24 cells match".into())
}

fn model_costs() -> Outcome {
    let start = Instant::now();
    let cases: [(&str, ModelGraph<f32>, f64, f64); 8] = [
        ("MV1 α=1.0", mv1(1.0, ""), 4.2e6, 569e6),
        ("MV1+ULSAM(8:1,9:1,11)", mv1(1.0, "8:1, 9:1, 11"), 3.9e6, 517e6),
        ("MV1 α=0.75", mv1(0.75, ""), 2.6e6, 325e6),
        ("MV1 α=0.5", mv1(0.5, ""), 1.3e6, 149e6),
        ("MV2", mv2(""), 3.4e6, 300e6),
        ("MV2+(14,17)", mv2("14, 17"), 2.96e6, 261.88e6),
        ("MV2+(16,17)", mv2("16, 17"), 2.77e6, 269.07e6),
        ("MV2+(13,14,16,17)", mv2("13, 14, 16, 17"), 2.54e6, 223.77e6),
    ];
    let mut problems = Vec::new();
    for (name, g, params, macs) in &cases {
        let r = analyze_model(g);
        for (what, got, want) in [("params", r.total_params as f64, *params), ("MACs", r.total_mac_count() as f64, *macs)] {
            let dev = 100.0 * (got - want) / want;
            if dev.abs() > 2.0 {
                problems.push(format!("{name} {what} {got} is {dev:+.2}% from {want}"));
            }
        }
    }
    within_budget(&mut problems, start, Duration::from_secs(5));
    Outcome::new(problems, "8 models within ±2% on params and MACs".into())
}

fn flops_split() -> Outcome {
    let r = analyze_model(&mv1(1.0, ""));
    let (pw, dw) = (r.share(MacKind::Pointwise), r.share(MacKind::Depthwise));
    let mid = 100.0 * r.macs_of(&["8", "9", "10", "11", "12"]) as f64 / r.total_mac_count() as f64;
    let mut problems = Vec::new();
    for (name, got, want, tol) in [("pointwise", pw, 94.86, 0.5), ("depthwise", dw, 3.06, 0.5), ("layers 8-12", mid, 46.0, 1.0)] {
        if (got - want).abs() > tol {
            problems.push(format!("{name} share {got:.3}% vs {want}% ± {tol}"));
        }
    }
    Outcome::new(problems, format!("pointwise {pw:.2}%, depthwise {dw:.2}%, layers 8-12 {mid:.2}%"))
}

/// Multiples of 1/8 in [-2, 2]. Products and short sums of such values are
/// exact in f64, so reordering a sum cannot change the result.
fn dyadic(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-16i32..=16) as f64 / 8.0).collect()
}

fn ulsam_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut problems = Vec::new();
    let m = 32;
    let shape = Shape::new(2, m, 7, 5);
    for g in [1, 2, 4, 8, 16, m] {
        let cfg = UlsamConfig::new(m, g).unwrap();
        let x = Tensor::from_vec(shape, dyadic(&mut rng, shape.len())).unwrap();
        let wts = UlsamWeights { dw: dyadic(&mut rng, m), pw: dyadic(&mut rng, m) };
        if wts.param_count() != 2 * m || cfg.param_count() != 2 * m {
            problems.push(format!("g={g}: {} params, expected {}", wts.param_count(), 2 * m));
        }
        let y = ulsam_forward(&x, &cfg, &wts).unwrap();
        if y.shape() != shape {
            problems.push(format!("g={g}: output shape {:?}", y.shape()));
        }
        let maps = ulsam_attention_maps(&x, &cfg, &wts).unwrap();
        for b in 0..shape.batch {
            for n in 0..g {
                let s: f64 = maps.plane(b, n).iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    problems.push(format!("g={g}: group {n} softmax sums to {s}"));
                }
            }
        }

        // Perturbing group 0 leaves every other group's output untouched.
        let gs = m / g;
        let mut x2 = x.clone();
        for c in 0..gs {
            x2.plane_mut(0, c).iter_mut().for_each(|v| *v += 0.375);
        }
        let y2 = ulsam_forward(&x2, &cfg, &wts).unwrap();
        for c in gs..m {
            if y.plane(0, c).iter().zip(y2.plane(0, c)).any(|(a, b)| a.to_bits() != b.to_bits()) {
                problems.push(format!("g={g}: channel {c} changed when group 0 was perturbed"));
                break;
            }
        }

        // Reversing channels inside each group, weights included, reverses the output.
        let perm: Vec<usize> = (0..m).map(|c| (c / gs) * gs + (gs - 1 - c % gs)).collect();
        let mut xp = Tensor::zeros(shape);
        for b in 0..shape.batch {
            for c in 0..m {
                xp.plane_mut(b, c).copy_from_slice(x.plane(b, perm[c]));
            }
        }
        let wp = UlsamWeights {
            dw: perm.iter().map(|&c| wts.dw[c]).collect(),
            pw: perm.iter().map(|&c| wts.pw[c]).collect(),
        };
        let yp = ulsam_forward(&xp, &cfg, &wp).unwrap();
        let equivariant = (0..shape.batch).all(|b| {
            (0..m).all(|c| yp.plane(b, c).iter().zip(y.plane(b, perm[c])).all(|(a, b)| a.to_bits() == b.to_bits()))
        });
        if !equivariant {
            problems.push(format!("g={g}: within-group permutation not equivariant"));
        }

        if g == m {
            let closed = case3_attention(&x, &wts).unwrap();
            if !closed.bitwise_eq(&maps) {
                problems.push("g=m attention differs from the per-channel closed form".into());
            }
        }
    }
    within_budget(&mut problems, start, Duration::from_secs(10));
    Outcome::new(problems, "g ∈ {1,2,4,8,16,32}: shape, softmax, 2m params, independence, equivariance, g=m closed form".into())
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let checks = gradcheck::run_suite(0, None).unwrap();
    let mut problems: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| c.to_string()).collect();
    let worst = |net: bool| {
        checks
            .iter()
            .filter(|c| (c.name == "network") == net)
            .map(|c| c.max_rel_err)
            .fold(0.0f64, f64::max)
    };
    for (net, tol) in [(false, 1e-4), (true, 1e-3)] {
        if checks.iter().any(|c| (c.name == "network") == net && c.tolerance > tol) {
            problems.push(format!("a check runs with a tolerance looser than {tol}"));
        }
    }
    if !checks.iter().any(|c| c.name == "network") {
        problems.push("no end-to-end check ran".into());
    }
    within_budget(&mut problems, start, Duration::from_secs(60));
    Outcome::new(
        problems,
        format!("{} checks, worst per-op {:.1e}, network {:.1e}", checks.len(), worst(false), worst(true)),
    )
}

fn mac_equality() -> Outcome {
    let mut problems = Vec::new();
    let cases = [
        ("MV1", mv1(1.0, "")),
        ("MV1+ULSAM(8:1,9:1,11)", mv1(1.0, "8:1, 9:1, 11")),
        ("MV2", mv2("")),
        ("MV2+(13,14,16,17)", mv2("13, 14, 16, 17")),
    ];
    for (name, g) in &cases {
        let analytic = analyze_model(g).total_macs;
        let counted = instrumented_macs(g, 224).unwrap();
        if counted != analytic {
            problems.push(format!("{name}: analytic {} vs instrumented {}", analytic.total(), counted.total()));
        }
    }
    Outcome::new(problems, "4 models equal per MAC kind at 224×224".into())
}

fn training_sanity() -> Outcome {
    let ds = common::separable_dataset();
    let mut g = common::tiny_ulsam(0);
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ulsm");
    let start = Instant::now();
    let history = train_loop(&mut g, &ds, None, &common::sanity_config(), TrainOutputs { checkpoint: Some(&ckpt), history: None }).unwrap();
    let mut problems = Vec::new();
    within_budget(&mut problems, start, Duration::from_secs(300));
    let first = history.iter().position(|r| r.train_top1 > 0.95);
    match first {
        Some(e) if e < 30 => {}
        _ => problems.push("train accuracy did not pass 95% within 30 epochs".into()),
    }
    let losses: Vec<f64> = history.iter().map(|r| r.train_loss).collect();
    let rises = common::smoothed_increases(&losses);
    if !rises.is_empty() {
        problems.push(format!("smoothed loss rises after windows {rises:?}"));
    }
    let mut restored = common::tiny_ulsam(1);
    checkpoint::load(&mut restored, &ckpt).unwrap();
    if common::snapshot(&mut restored) != common::snapshot(&mut g) {
        problems.push("checkpoint round-trip changed parameters".into());
    }
    Outcome::new(
        problems,
        format!(
            "95% train accuracy at epoch {}, final loss {:.4}, {:.1?}",
            first.map_or(0, |e| e + 1),
            losses.last().unwrap(),
            start.elapsed()
        ),
    )
}

fn lr_schedules() -> Outcome {
    let mut problems = Vec::new();
    let step = LrSchedule::step(0.1, 0.1, 30);
    for (epoch, want) in [(0, 0.1), (29, 0.1), (30, 0.01), (59, 0.01), (60, 0.001)] {
        if step.lr_at(epoch) != want {
            problems.push(format!("step decay at epoch {epoch}: {} vs {want}", step.lr_at(epoch)));
        }
    }
    let exp = LrSchedule::exp(0.045, 0.98);
    for e in 0..100 {
        let want = 0.045 * 0.98f64.powi(e);
        if exp.lr_at(e as usize) != want {
            problems.push(format!("exp decay at epoch {e}: {} vs {want}", exp.lr_at(e as usize)));
        }
    }
    Outcome::new(problems, "step 0.1/0.01/0.001 at 0/30/60, exp 0.045·0.98^e for e < 100".into())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("attention overhead table", table1),
        ("model costs", model_costs),
        ("MAC split", flops_split),
        ("ULSAM invariants", ulsam_invariants),
        ("gradient suite", gradient_suite),
        ("analytic vs instrumented MACs", mac_equality),
        ("training sanity", training_sanity),
        ("learning-rate schedules", lr_schedules),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {name}: {}", i + 1, outcome.detail);
        failures += usize::from(!outcome.passed);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
