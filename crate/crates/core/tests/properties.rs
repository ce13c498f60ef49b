#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ulsam_core::attention::{ulsam_attention_maps, ulsam_forward, UlsamConfig, UlsamWeights};
use ulsam_core::model::{build_mv1, ModelGraph, PositionDirective};
use ulsam_core::{Shape, Tensor};

/// (m, g) with g dividing m.
fn channels_and_groups() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=6, 1usize..=4).prop_flat_map(|(g, per)| Just((g * per, g)))
}

fn instance(m: usize, g: usize, h: usize, w: usize, seed: u64) -> (Tensor<f64>, UlsamConfig, UlsamWeights<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = UlsamConfig::new(m, g).unwrap();
    let x = Tensor::randn(Shape::new(2, m, h, w), 1.0, &mut rng);
    (x, cfg, UlsamWeights::init(&cfg, &mut rng))
}

fn probe(g: &ModelGraph<f64>) -> Vec<u64> {
    let x = Tensor::from_vec(Shape::new(1, 3, 16, 16), (0..768).map(|i| ((i * 13 % 29) as f64 - 14.0) / 7.0).collect()).unwrap();
    g.infer(&x).unwrap().data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn output_keeps_shape_and_maps_normalize((m, g) in channels_and_groups(), h in 1usize..7, w in 1usize..7, seed: u64) {
        let (x, cfg, wts) = instance(m, g, h, w, seed);
        prop_assert_eq!(ulsam_forward(&x, &cfg, &wts).unwrap().shape(), x.shape());
        let maps = ulsam_attention_maps(&x, &cfg, &wts).unwrap();
        prop_assert_eq!(maps.shape(), Shape::new(2, g, h, w));
        for b in 0..2 {
            for n in 0..g {
                let s: f64 = maps.plane(b, n).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12, "group {} sums to {}", n, s);
                prop_assert!(maps.plane(b, n).iter().all(|&a| a > 0.0));
            }
        }
        prop_assert_eq!(wts.param_count(), 2 * m);
    }

    #[test]
    fn groups_do_not_interact((m, g) in channels_and_groups(), seed: u64, target in 0usize..6, shift in -3.0f64..3.0) {
        let (x, cfg, wts) = instance(m, g, 4, 5, seed);
        let target = target % g;
        let gs = m / g;
        let y = ulsam_forward(&x, &cfg, &wts).unwrap();
        let mut x2 = x.clone();
        for c in target * gs..(target + 1) * gs {
            x2.plane_mut(1, c).iter_mut().for_each(|v| *v += shift);
        }
        let y2 = ulsam_forward(&x2, &cfg, &wts).unwrap();
        for c in (0..m).filter(|c| c / gs != target) {
            prop_assert!(y.plane(1, c).iter().zip(y2.plane(1, c)).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        for c in 0..m {
            prop_assert!(y.plane(0, c).iter().zip(y2.plane(0, c)).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn within_group_permutation_is_equivariant((m, g) in channels_and_groups(), seed: u64, rot in 0usize..4) {
        // Values on a 1/8 grid keep every pointwise sum exact, so reordering is bitwise neutral.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = UlsamConfig::new(m, g).unwrap();
        let shape = Shape::new(1, m, 4, 4);
        let grid = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            use rand::Rng;
            (0..n).map(|_| rng.random_range(-16i32..=16) as f64 / 8.0).collect()
        };
        let x = Tensor::from_vec(shape, grid(&mut rng, shape.len())).unwrap();
        let wts = UlsamWeights { dw: grid(&mut rng, m), pw: grid(&mut rng, m) };
        let gs = m / g;
        let perm: Vec<usize> = (0..m).map(|c| (c / gs) * gs + (c % gs + rot) % gs).collect();
        let mut xp = Tensor::zeros(shape);
        for c in 0..m {
            xp.plane_mut(0, c).copy_from_slice(x.plane(0, perm[c]));
        }
        let wp = UlsamWeights {
            dw: perm.iter().map(|&c| wts.dw[c]).collect(),
            pw: perm.iter().map(|&c| wts.pw[c]).collect(),
        };
        let y = ulsam_forward(&x, &cfg, &wts).unwrap();
        let yp = ulsam_forward(&xp, &cfg, &wp).unwrap();
        for c in 0..m {
            prop_assert!(yp.plane(0, c).iter().zip(y.plane(0, perm[c])).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn insertion_adds_two_params_per_channel(layer in 2usize..=14, g in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let mut graph = build_mv1::<f64>(0.25, 4, 0).unwrap();
        let m = graph.layer(&layer.to_string()).unwrap().out_channels();
        let before = graph.param_count();
        graph.apply_ulsam(&[PositionDirective::insert_after(layer)], g).unwrap();
        prop_assert_eq!(graph.param_count(), before + 2 * m);
    }

    #[test]
    fn insert_then_remove_restores_model(layers in prop::collection::btree_set(2usize..=14, 1..4), substitute in any::<bool>()) {
        let mut graph = build_mv1::<f64>(0.25, 4, 0).unwrap();
        let original_layers = graph.layers();
        let original_out = probe(&graph);
        let directives: Vec<PositionDirective> = layers
            .iter()
            .map(|&l| {
                let sub = PositionDirective::substitute(l);
                let shape_preserving = (8..=12).contains(&l) || [4, 6, 14].contains(&l);
                if substitute && shape_preserving { sub } else { PositionDirective::insert_after(l) }
            })
            .collect();
        graph.apply_ulsam(&directives, 4).unwrap();
        prop_assert_ne!(graph.layers(), original_layers.clone());
        for d in directives {
            graph.remove_ulsam(d).unwrap();
        }
        prop_assert_eq!(graph.layers(), original_layers);
        prop_assert_eq!(probe(&graph), original_out);
    }
}

#[test]
fn rejected_directive_leaves_model_untouched() {
    let mut graph = build_mv1::<f64>(0.25, 4, 0).unwrap();
    let before = (graph.layers(), probe(&graph));
    let directives = [PositionDirective::insert_after(8), PositionDirective::substitute(13)];
    assert!(graph.apply_ulsam(&directives, 4).is_err());
    assert_eq!((graph.layers(), probe(&graph)), before);
}
