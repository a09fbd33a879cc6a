mod common;

use common::{central_diff, op_grad_error, rel_err, rng, sample, Build};
use fundus_core::models::{build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig};
use fundus_core::nn::{batch_norm, instance_norm, residual_block, Activation, Affine, ResidualBlockParams};
use fundus_core::tensor::{Graph, PaddingMode, Tensor};
use fundus_core::trainer::{discriminator_objective, generator_objective, lsgan_loss};

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 5;
/// Whole networks have many LeakyReLU and |·| kinks; a smaller step keeps
/// probes from straddling one.
const H_NET: f64 = 1e-6;

fn check_op(name: &str, shapes: &[&[usize]], build: &Build) {
    for seed in 0..SEEDS {
        let e = op_grad_error(shapes, build, seed, H);
        assert!(e < TOL, "{name}: seed {seed}: rel err {e:e}");
    }
}

#[test]
fn conv2d_zero_and_reflect() {
    check_op("conv2d zero s1", &[&[2, 2, 4, 4], &[3, 2, 3, 3], &[3]], &|g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), (1, 1), (1, 1), PaddingMode::Zero).unwrap()
    });
    check_op("conv2d zero s2 k4", &[&[1, 2, 4, 4], &[2, 2, 4, 4]], &|g, v| {
        g.conv2d(v[0], v[1], None, (2, 2), (1, 1), PaddingMode::Zero).unwrap()
    });
    check_op("conv2d reflect", &[&[1, 2, 4, 4], &[2, 2, 3, 3], &[2]], &|g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), (1, 1), (2, 2), PaddingMode::Reflect).unwrap()
    });
}

#[test]
fn conv_transpose2d_strided() {
    check_op("conv_transpose2d", &[&[1, 3, 2, 2], &[3, 2, 3, 3], &[2]], &|g, v| {
        g.conv_transpose2d(v[0], v[1], Some(v[2]), (2, 2), (1, 1), (1, 1)).unwrap()
    });
    check_op("conv_transpose2d s1", &[&[2, 2, 3, 3], &[2, 1, 2, 2]], &|g, v| {
        g.conv_transpose2d(v[0], v[1], None, (1, 1), (0, 0), (0, 0)).unwrap()
    });
}

#[test]
fn norms() {
    check_op("instance_norm", &[&[2, 3, 4, 4]], &|g, v| instance_norm(g, v[0], 1e-5, None).unwrap());
    check_op("instance_norm affine", &[&[1, 2, 3, 3], &[2], &[2]], &|g, v| {
        let affine = Affine {
            gamma: v[1],
            beta: v[2],
        };
        instance_norm(g, v[0], 1e-5, Some(affine)).unwrap()
    });
    check_op("batch_norm", &[&[3, 2, 2, 2], &[2], &[2]], &|g, v| {
        let affine = Affine {
            gamma: v[1],
            beta: v[2],
        };
        batch_norm(g, v[0], 1e-5, Some(affine)).unwrap()
    });
}

#[test]
fn pointwise() {
    check_op("leaky_relu", &[&[2, 2, 4, 4]], &|g, v| g.leaky_relu(v[0], 0.325).unwrap());
    check_op("tanh", &[&[2, 2, 4, 4]], &|g, v| g.tanh(v[0]).unwrap());
    check_op("zero_pad", &[&[1, 2, 3, 4]], &|g, v| g.zero_pad(v[0], [1, 2, 0, 3]).unwrap());
}

#[test]
fn residual_block_gradient() {
    check_op("residual_block", &[&[1, 3, 4, 4], &[3, 3, 3, 3], &[3, 3, 3, 3]], &|g, v| {
        let p = ResidualBlockParams::new(g, 3, v[1], v[2]).unwrap();
        residual_block(g, v[0], &p).unwrap()
    });
    check_op("residual_block leaky", &[&[2, 2, 3, 3], &[2, 2, 3, 3], &[2, 2, 3, 3]], &|g, v| {
        let mut p = ResidualBlockParams::new(g, 2, v[1], v[2]).unwrap();
        p.activation = Activation::LeakyRelu(0.325);
        residual_block(g, v[0], &p).unwrap()
    });
}

#[test]
fn residual_skip_passes_upstream_gradient_at_zero_weights() {
    let mut r = rng(3);
    let x = sample(&mut r, &[1, 2, 4, 4]);
    let up = sample(&mut r, &[1, 2, 4, 4]);
    let mut g = Graph::new();
    let xv = g.variable(x);
    let w1 = g.variable(Tensor::zeros([2, 2, 3, 3]).unwrap());
    let w2 = g.variable(Tensor::zeros([2, 2, 3, 3]).unwrap());
    let p = ResidualBlockParams::new(&g, 2, w1, w2).unwrap();
    let y = residual_block(&mut g, xv, &p).unwrap();
    let u = g.constant(up.clone());
    let prod = g.mul(y, u).unwrap();
    let loss = g.sum(prod, None).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(xv).unwrap().data(), up.data());
}

#[test]
fn lsgan_loss_graph() {
    // One conv layer scored with the least-squares loss against both labels.
    for seed in 0..SEEDS {
        let mut r = rng(seed + 40);
        let x = sample(&mut r, &[1, 1, 4, 4]);
        let w0 = sample(&mut r, &[2, 1, 3, 3]);
        let f = |w: &[f64], real: bool| -> (f64, Vec<f64>) {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.variable(Tensor::new([2, 1, 3, 3], w.to_vec()).unwrap());
            let s = g.conv2d(xv, wv, None, (1, 1), (1, 1), PaddingMode::Zero).unwrap();
            let s = g.leaky_relu(s, 0.325).unwrap();
            let l = lsgan_loss(&mut g, s, real).unwrap();
            let v = g.value(l).data()[0];
            (v, g.backward(l).unwrap().get(wv).unwrap().data().to_vec())
        };
        for real in [true, false] {
            let auto = f(w0.data(), real).1;
            let num = central_diff(|p| f(p, real).0, w0.data(), H);
            assert!(rel_err(&auto, &num) < TOL, "seed {seed}");
        }
    }
}

fn tiny_nets(seed: u64) -> (GeneratorConfig, DiscriminatorConfig, [u64; 4]) {
    let gc = GeneratorConfig {
        input_channels: 3,
        base_filters: 2,
        n_res_blocks: 1,
        image_size: 8,
        activation: Activation::LeakyRelu(0.325),
    };
    let dc = DiscriminatorConfig {
        input_channels: 3,
        filters: vec![2, 3],
        alpha: 0.325,
        image_size: 8,
    };
    (gc, dc, [seed, seed + 1, seed + 2, seed + 3])
}

/// Gradient of the composed CycleGAN generator objective with respect to a
/// sample of generator weights. With `lambdas` zero this is the pure
/// adversarial gradient.
fn generator_objective_check(lambdas: (f64, f64)) {
    for seed in 0..SEEDS {
        let (gc, dc, s) = tiny_nets(seed);
        let g_m = build_generator::<f64>("G_M", &gc, s[0]).unwrap();
        let g_n = build_generator::<f64>("G_N", &gc, s[1]).unwrap();
        let d_m = build_discriminator::<f64>("D_M", &dc, s[2]).unwrap();
        let d_n = build_discriminator::<f64>("D_N", &dc, s[3]).unwrap();
        let mut r = rng(seed + 77);
        let m = sample(&mut r, &[1, 3, 8, 8]);
        let n = sample(&mut r, &[1, 3, 8, 8]);
        let eval = |gm: &fundus_core::models::ModelGraph<f64>| {
            let mut g = Graph::new();
            let bm = gm.bind(&mut g, true).unwrap();
            let bn = g_n.bind(&mut g, true).unwrap();
            let dm = d_m.bind(&mut g, false).unwrap();
            let dn = d_n.bind(&mut g, false).unwrap();
            let (mv, nv) = (g.constant(m.clone()), g.constant(n.clone()));
            let t = generator_objective(&mut g, &bm, &bn, &dm, &dn, mv, nv, lambdas.0, lambdas.1).unwrap();
            let v = g.value(t.total).data()[0];
            let grads = g.backward(t.total).unwrap().named();
            assert!(grads.keys().all(|k| k.starts_with("G_")), "discriminators must stay frozen");
            (v, grads)
        };
        let (_, grads) = eval(&g_m);
        for name in ["enc0.weight", "enc2.weight", "res0.conv2.weight", "dec1.weight", "head.bias"] {
            let base = g_m.params.get(name).unwrap_or_else(|| panic!("{name}")).clone();
            let num = central_diff(
                |p| {
                    let mut gm = g_m.clone();
                    *gm.params.get_mut(name).unwrap() = Tensor::new(base.shape().to_vec(), p.to_vec()).unwrap();
                    eval(&gm).0
                },
                base.data(),
                H_NET,
            );
            let e = rel_err(grads[&format!("G_M/{name}")].data(), &num);
            assert!(e < 1e-3, "seed {seed} {name}: {e:e}");
        }
    }
}

#[test]
fn adversarial_only_generator_gradient() {
    generator_objective_check((0.0, 0.0));
}

#[test]
fn full_generator_objective_gradient() {
    generator_objective_check((10.0, 5.0));
}

#[test]
fn discriminator_objective_gradient() {
    for seed in 0..SEEDS {
        let (_, dc, s) = tiny_nets(seed);
        let d = build_discriminator::<f64>("D_N", &dc, s[0]).unwrap();
        let mut r = rng(seed + 5);
        let real = sample(&mut r, &[1, 3, 8, 8]);
        let fake = sample(&mut r, &[1, 3, 8, 8]);
        let eval = |d: &fundus_core::models::ModelGraph<f64>| {
            let mut g = Graph::new();
            let b = d.bind(&mut g, true).unwrap();
            let (rv, fv) = (g.constant(real.clone()), g.constant(fake.clone()));
            let l = discriminator_objective(&mut g, &b, rv, fv).unwrap();
            (g.value(l).data()[0], g.backward(l).unwrap().named())
        };
        let (_, grads) = eval(&d);
        for (name, base) in d.params.iter() {
            let num = central_diff(
                |p| {
                    let mut dd = d.clone();
                    *dd.params.get_mut(name).unwrap() = Tensor::new(base.shape().to_vec(), p.to_vec()).unwrap();
                    eval(&dd).0
                },
                base.data(),
                H_NET,
            );
            let e = rel_err(grads[&format!("D_N/{name}")].data(), &num);
            assert!(e < TOL, "seed {seed} {name}: {e:e}");
        }
    }
}

