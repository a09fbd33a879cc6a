mod common;

use fundus_core::nn::{batch_norm, instance_norm};
use fundus_core::tensor::{Graph, Tensor};
use proptest::prelude::*;

fn inorm(x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = instance_norm(&mut g, v, 1e-5, None).unwrap();
    g.value(y).clone()
}

fn planes(t: &Tensor<f64>) -> Vec<&[f64]> {
    let s = t.shape();
    t.data().chunks(s[2] * s[3]).collect()
}

fn non_flat() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..3, 1usize..4, 2usize..6, 2usize..6).prop_flat_map(|(n, c, h, w)| {
        proptest::collection::vec(-3.0f64..3.0, n * c * h * w)
            .prop_filter("each plane needs spread", move |v| {
                v.chunks(h * w).all(|p| {
                    let m = p.iter().sum::<f64>() / p.len() as f64;
                    p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / p.len() as f64 > 0.5
                })
            })
            .prop_map(move |v| Tensor::new([n, c, h, w], v).unwrap())
    })
}

proptest! {
    #[test]
    fn per_plane_moments(x in non_flat()) {
        let y = inorm(&x);
        for p in planes(&y) {
            let n = p.len() as f64;
            let mean = p.iter().sum::<f64>() / n;
            let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-5, "mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn contrast_invariance(x in non_flat(), b in -5.0f64..5.0) {
        let y = inorm(&x);
        for a in [0.5, 2.0, 10.0] {
            let ya = inorm(&x.map(|v| a * v + b));
            for (p, q) in y.data().iter().zip(ya.data()) {
                prop_assert!((p - q).abs() < 1e-4, "a = {a}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn single_sample_batch_norm_is_instance_norm(
        c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>(),
    ) {
        let x = common::random_tensor(&mut common::rng(seed), &[1, c, h, w], 3.0);
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let b = batch_norm(&mut g, v, 1e-5, None).unwrap();
        for (p, q) in g.value(b).data().iter().zip(inorm(&x).data()) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn leaky_relu_is_exact(xs in proptest::collection::vec(-1e6f64..1e6, 1..40), alpha in 0.0f64..1.0) {
        let mut g = Graph::new();
        let v = g.constant(Tensor::new([xs.len()], xs.clone()).unwrap());
        let y = g.leaky_relu(v, alpha).unwrap();
        for (x, y) in xs.iter().zip(g.value(y).data()) {
            prop_assert_eq!(*y, if *x >= 0.0 { *x } else { alpha * x });
        }
    }
}

#[test]
fn pair_example() {
    let x = Tensor::new([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
    let y = inorm(&x);
    assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);
}
