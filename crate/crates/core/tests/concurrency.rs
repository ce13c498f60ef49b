use std::sync::Arc;
use std::thread;

use ulsam_core::model::{build_mv1, parse_positions};
use ulsam_core::{Shape, Tensor};

#[test]
fn shared_graph_infers_identically_from_many_threads() {
    let mut g = build_mv1::<f32>(0.25, 4, 3).unwrap();
    g.apply_ulsam(&parse_positions("8:1, 11").unwrap(), 4).unwrap();
    let g = Arc::new(g);
    let inputs: Vec<Tensor<f32>> = (0..4)
        .map(|k| Tensor::from_vec(Shape::new(2, 3, 16, 16), (0..1536).map(|i| ((i * (k + 3)) % 17) as f32 / 8.0 - 1.0).collect()).unwrap())
        .collect();
    let expected: Vec<Tensor<f32>> = inputs.iter().map(|x| g.infer(x).unwrap()).collect();
    let handles: Vec<_> = (0..8)
        .map(|t| {
            let (g, x) = (Arc::clone(&g), inputs[t % 4].clone());
            thread::spawn(move || (0..3).map(|_| g.infer(&x).unwrap()).collect::<Vec<_>>())
        })
        .collect();
    for (t, h) in handles.into_iter().enumerate() {
        for y in h.join().unwrap() {
            assert!(y.bitwise_eq(&expected[t % 4]));
        }
    }
}

#[test]
fn batch_items_are_independent() {
    let g = build_mv1::<f64>(0.25, 4, 0).unwrap();
    let data: Vec<f64> = (0..3 * 3 * 8 * 8).map(|i| (i as f64 * 0.37).sin()).collect();
    let batch = g.infer(&Tensor::from_vec(Shape::new(3, 3, 8, 8), data.clone()).unwrap()).unwrap();
    for b in 0..3 {
        let one = Tensor::from_vec(Shape::new(1, 3, 8, 8), data[b * 192..(b + 1) * 192].to_vec()).unwrap();
        let y = g.infer(&one).unwrap();
        assert_eq!(y.data(), batch.item(b));
    }
}
