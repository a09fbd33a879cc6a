mod common;

use std::collections::BTreeMap;

use common::reference_adam;
use fundus_core::optim::{AdamConfig, AdamState, OptimError};
use fundus_core::params::ParamStore;
use fundus_core::tensor::Tensor;
use proptest::prelude::*;

fn single(name: &str, v: f64) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.insert(name, Tensor::scalar(v));
    p
}

fn grad(name: &str, v: f64) -> BTreeMap<String, Tensor<f64>> {
    BTreeMap::from([(name.to_string(), Tensor::scalar(v))])
}

#[test]
fn two_step_trace_matches_reference() {
    let cfg = AdamConfig::default();
    assert_eq!((cfg.lr, cfg.beta1, cfg.beta2), (0.000364, 0.5032, 0.999));
    for g in [1.0, 0.5, -3.0] {
        let mut p = single("w", 0.25);
        let mut opt = AdamState::initialized(&p, cfg).unwrap();
        let reference = reference_adam(0.25, &[g, g], cfg);
        for (step, &(rho, vh, sh)) in reference.iter().enumerate() {
            opt.step(&mut p, &grad("w", g)).unwrap();
            let got = p.get("w").unwrap().data()[0];
            assert!((got - rho).abs() < 1e-12, "step {step}: {got} vs {rho}");
            assert!((opt.corrected_first_moment("w").unwrap()[0] - vh).abs() < 1e-12);
            assert!((opt.corrected_second_moment("w").unwrap()[0] - sh).abs() < 1e-12);
            if step == 0 {
                assert_eq!(opt.corrected_first_moment("w").unwrap()[0], g);
                assert_eq!(opt.corrected_second_moment("w").unwrap()[0], g * g);
            }
        }
        assert_eq!(opt.step_count(), 2);
    }
}

#[test]
fn first_step_example() {
    let mut p = single("w", 1.0);
    let mut opt = AdamState::initialized(&p, AdamConfig::default()).unwrap();
    opt.step(&mut p, &grad("w", 0.5)).unwrap();
    let moved = 1.0 - p.get("w").unwrap().data()[0];
    assert!((moved - 3.64e-4).abs() < 1e-8, "{moved}");
}

#[test]
fn errors_name_the_parameter() {
    let mut p = single("w", 1.0);
    let mut fresh = AdamState::<f64>::new(AdamConfig::default());
    assert_eq!(fresh.step(&mut p, &grad("w", 1.0)), Err(OptimError::NotInitialized));
    let mut opt = AdamState::initialized(&p, AdamConfig::default()).unwrap();
    assert_eq!(
        opt.step(&mut p, &grad("w", f64::NAN)),
        Err(OptimError::NonFiniteGradient("w".into()))
    );
    assert_eq!(p.get("w").unwrap().data()[0], 1.0);
}

proptest! {
    #[test]
    fn update_is_invariant_to_gradient_scale(g in 0.01f64..10.0, c in 0.01f64..100.0, steps in 1usize..6) {
        let cfg = AdamConfig { delta: 0.0, ..AdamConfig::default() };
        let run = |gv: f64| {
            let mut p = single("w", 0.0);
            let mut opt = AdamState::initialized(&p, cfg).unwrap();
            for _ in 0..steps {
                opt.step(&mut p, &grad("w", gv)).unwrap();
            }
            p.get("w").unwrap().data()[0]
        };
        let (a, b) = (run(g), run(c * g));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12), "{a} vs {b}");
    }

    #[test]
    fn matches_reference_on_random_traces(
        rho in -1.0f64..1.0,
        grads in proptest::collection::vec(-5.0f64..5.0, 1..8),
    ) {
        let cfg = AdamConfig::default();
        let mut p = single("w", rho);
        let mut opt = AdamState::initialized(&p, cfg).unwrap();
        for (g, (want, _, _)) in grads.iter().zip(reference_adam(rho, &grads, cfg)) {
            opt.step(&mut p, &grad("w", *g)).unwrap();
            prop_assert!((p.get("w").unwrap().data()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_never_moves(rho in -10.0f64..10.0, steps in 1usize..10) {
        let mut p = single("w", rho);
        let mut opt = AdamState::initialized(&p, AdamConfig::default()).unwrap();
        for _ in 0..steps {
            opt.step(&mut p, &grad("w", 0.0)).unwrap();
        }
        prop_assert_eq!(p.get("w").unwrap().data()[0], rho);
    }
}
