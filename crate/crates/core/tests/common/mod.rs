#![allow(dead_code)]

use fundus_core::data::{Domain, ImageSample};
use fundus_core::synth::corpus_image;
use fundus_core::optim::AdamConfig;
use fundus_core::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central differences written out independently of the library helper.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn toy_corpus(seed: u64, count: usize, size: usize) -> (Vec<ImageSample>, Vec<ImageSample>) {
    let m = (0..count as u64).map(|i| corpus_image(seed, Domain::M, i, size)).collect();
    let n = (0..count as u64).map(|i| corpus_image(seed, Domain::N, i, size)).collect();
    (m, n)
}

/// Additive Gaussian noise with standard deviation `sigma` on the 0–255
/// scale, clamped to the valid range.
pub fn add_noise(s: &ImageSample, sigma: f64, seed: u64) -> ImageSample {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(seed);
    let n = Normal::new(0.0, 2.0 * sigma / 255.0).unwrap();
    let mut out = s.clone();
    out.data
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = (*v as f64 + n.sample(&mut r)).clamp(-1.0, 1.0) as f32);
    out
}

/// Central `size × size` window of a 2·size synthetic retina: vessel and
/// background texture without the dark surround.
pub fn texture_fixture(seed: u64, index: u64, size: usize) -> ImageSample {
    let full = fundus_core::synth::synth_image(seed, index, 2 * size).clean;
    let (h, off) = (2 * size, size / 2);
    let t = Tensor::from_fn([3, size, size], |i| {
        let (c, y, x) = (i / (size * size), (i / size) % size, i % size);
        full.data.data()[c * h * h + (y + off) * h + x + off]
    })
    .unwrap();
    ImageSample::new(t).unwrap()
}

pub type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

/// Inputs drawn away from zero so no finite-difference probe straddles a kink.
pub fn sample(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
    .unwrap()
}

/// Projects the op output onto a fixed random tensor so every output
/// element contributes to the scalar objective.
fn scalar_of(build: &Build, inputs: &[Tensor<f64>], proj_seed: u64) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars);
    let shape = g.value(out).shape().to_vec();
    let mut r = rng(proj_seed);
    let proj = g.constant(sample(&mut r, &shape));
    let prod = g.mul(out, proj).unwrap();
    let loss = g.sum(prod, None).unwrap();
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss).unwrap();
    let gs = vars
        .iter()
        .map(|&v| grads.get(v).map(|t| t.data().to_vec()).unwrap_or_default())
        .collect();
    (value, gs)
}

/// Largest relative error between autodiff and central differences over
/// every input of `build` for one seed.
pub fn op_grad_error(shapes: &[&[usize]], build: &Build, seed: u64, h: f64) -> f64 {
    let mut r = rng(seed * 7919 + 13);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| sample(&mut r, s)).collect();
    let (_, auto) = scalar_of(build, &inputs, seed + 1000);
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let numeric = central_diff(
            |p| {
                let mut ins = inputs.clone();
                ins[k] = Tensor::new(x.shape().to_vec(), p.to_vec()).unwrap();
                scalar_of(build, &ins, seed + 1000).0
            },
            x.data(),
            h,
        );
        worst = worst.max(rel_err(&auto[k], &numeric));
    }
    worst
}

/// Direct evaluation of the textbook recurrences with the raw `(1 − β)`
/// damping and explicit `1 − βˣ` bias correction.
pub fn reference_adam(rho0: f64, grads: &[f64], cfg: AdamConfig) -> Vec<(f64, f64, f64)> {
    let (mut rho, mut v, mut s) = (rho0, 0.0, 0.0);
    let mut out = Vec::new();
    for (i, &g) in grads.iter().enumerate() {
        let x = (i + 1) as i32;
        v = cfg.beta1 * v + (1.0 - cfg.beta1) * g;
        s = cfg.beta2 * s + (1.0 - cfg.beta2) * g * g;
        let vh = v / (1.0 - cfg.beta1.powi(x));
        let sh = s / (1.0 - cfg.beta2.powi(x));
        rho -= cfg.lr * vh / (sh + cfg.delta).sqrt();
        out.push((rho, vh, sh));
    }
    out
}

