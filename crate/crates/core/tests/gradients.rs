use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ulsam_core::attention::{ulsam_forward, UlsamBlock, UlsamConfig, UlsamWeights};
use ulsam_core::gradcheck::{rel_err, run_suite, CHECK_NAMES, EPSILON, NETWORK_TOLERANCE, OP_TOLERANCE};
use ulsam_core::module::Module;
use ulsam_core::ops::{conv2d_backward, conv2d_standard, ConvSpec, Mode};
use ulsam_core::{Shape, Tensor};

/// Central differences of `loss` with respect to every entry of `x`.
fn numeric(x: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + EPSILON;
            let up = loss(&probe);
            probe[i] = x[i] - EPSILON;
            let down = loss(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * EPSILON)
        })
        .collect()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

fn dot(t: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn suite_passes_within_tolerances() {
    let checks = run_suite(0, None).unwrap();
    for c in &checks {
        assert!(c.passed(), "{c}");
        let tol = if c.name == "network" { NETWORK_TOLERANCE } else { OP_TOLERANCE };
        assert_eq!(c.tolerance, tol);
    }
    for name in CHECK_NAMES {
        assert!(checks.iter().any(|c| c.name == name), "{name} not exercised");
    }
}

#[test]
fn suite_passes_for_other_seeds() {
    for seed in [1, 2] {
        for c in run_suite(seed, None).unwrap() {
            assert!(c.passed(), "seed {seed}: {c}");
        }
    }
}

#[test]
fn injected_fault_is_caught_only_where_injected() {
    for name in CHECK_NAMES {
        let checks = run_suite(0, Some(name)).unwrap();
        for c in &checks {
            assert_eq!(c.passed(), c.name != name, "fault in {name}: {c}");
        }
    }
}

#[test]
fn unknown_fault_target_is_an_error() {
    assert!(run_suite(0, Some("softmax2")).is_err());
}

#[test]
fn standard_conv_two_filters() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = Shape::new(1, 3, 5, 5);
    let spec = ConvSpec::standard(3, 2, 3, 1, 1);
    let x = Tensor::<f64>::randn(shape, 1.0, &mut rng);
    let w = Tensor::<f64>::randn(Shape::new(1, 1, 1, spec.weight_len()), 1.0, &mut rng).into_data();
    let out = conv2d_standard(&x, &spec, &w, None).unwrap();
    let r = Tensor::<f64>::randn(out.shape(), 1.0, &mut rng);
    let grads = conv2d_backward(&x, &spec, &w, &r).unwrap();

    let by_input = numeric(x.data(), |xs| {
        let xt = Tensor::from_vec(shape, xs.to_vec()).unwrap();
        dot(&conv2d_standard(&xt, &spec, &w, None).unwrap(), &r)
    });
    let by_weight = numeric(&w, |ws| dot(&conv2d_standard(&x, &spec, ws, None).unwrap(), &r));
    assert!(worst(grads.input.data(), &by_input) < 1e-6);
    assert!(worst(&grads.weight, &by_weight) < 1e-6);
}

#[test]
fn ulsam_four_channels_two_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = Shape::new(1, 4, 3, 3);
    let cfg = UlsamConfig::new(4, 2).unwrap();
    let x = Tensor::<f64>::randn(shape, 1.0, &mut rng);
    let weights = UlsamWeights::<f64>::init(&cfg, &mut rng);
    let r = Tensor::<f64>::randn(shape, 1.0, &mut rng);

    let mut block = UlsamBlock::new(cfg, weights.clone()).unwrap();
    let y = block.forward(&x, Mode::Train).unwrap();
    assert!(y.bitwise_eq(&ulsam_forward(&x, &cfg, &weights).unwrap()));
    let grads = block.ulsam_backward(&r).unwrap();

    let loss = |xt: &Tensor<f64>, wt: &UlsamWeights<f64>| dot(&ulsam_forward(xt, &cfg, wt).unwrap(), &r);
    let by_input = numeric(x.data(), |xs| loss(&Tensor::from_vec(shape, xs.to_vec()).unwrap(), &weights));
    let by_dw = numeric(&weights.dw, |d| loss(&x, &UlsamWeights { dw: d.to_vec(), pw: weights.pw.clone() }));
    let by_pw = numeric(&weights.pw, |p| loss(&x, &UlsamWeights { dw: weights.dw.clone(), pw: p.to_vec() }));
    assert!(worst(grads.input.data(), &by_input) < 1e-4);
    assert!(worst(&grads.dw, &by_dw) < 1e-4);
    assert!(worst(&grads.pw, &by_pw) < 1e-4);
}
