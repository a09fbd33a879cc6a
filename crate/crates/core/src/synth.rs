//! Procedural fundus-like images with and without flare/vignette artifacts.
//!
//! Each image is a function of `(seed, index, size)` only, so corpora and
//! held-out sets can be regenerated bit for bit.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DataError, Domain, ImageSample};
use crate::tensor::Tensor;

/// Index offset separating domain N contents from domain M contents, so
/// that the two domains of a corpus never share a scene.
pub const DOMAIN_N_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    /// Artifact-free rendering.
    pub clean: ImageSample,
    /// Same scene with flare and vignetting applied.
    pub artifacted: ImageSample,
    /// Row-major H×W mask of retina pixels untouched by the flare.
    pub clean_mask: Vec<bool>,
}

struct Vessel {
    origin: (f64, f64),
    dir: (f64, f64),
    amp: f64,
    freq: f64,
    phase: f64,
    width: f64,
}

impl Vessel {
    fn distance(&self, x: f64, y: f64, length: f64) -> f64 {
        let perp = (-self.dir.1, self.dir.0);
        (0..=48)
            .map(|k| {
                let t = length * k as f64 / 48.0;
                let off = self.amp * (self.freq * t + self.phase).sin();
                let px = self.origin.0 + t * self.dir.0 + off * perp.0;
                let py = self.origin.1 + t * self.dir.1 + off * perp.1;
                (px - x).hypot(py - y)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn to_sample(rgb: &[[f64; 3]], size: usize) -> ImageSample {
    let plane = size * size;
    let data = Tensor::from_fn([3, size, size], |i| {
        let v = rgb[i % plane][i / plane].clamp(0.0, 1.0);
        // Quantize to 8 bits so in-memory samples match their PNG files.
        crate::data::normalize_u8((v * 255.0).round() as u8)
    })
    .expect("size > 0");
    ImageSample::new(data).expect("3 channels")
}

/// Renders scene `index` of the stream selected by `seed`.
pub fn synth_image(seed: u64, index: u64, size: usize) -> SynthImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = size as f64;
    let c = (s / 2.0 + rng.gen_range(-0.03..0.03) * s, s / 2.0 + rng.gen_range(-0.03..0.03) * s);
    let radius = s * rng.gen_range(0.44..0.49);
    let base = [rng.gen_range(0.72..0.9), rng.gen_range(0.28..0.4), rng.gen_range(0.08..0.16)];

    let disc_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let disc = (
        c.0 + 0.5 * radius * disc_angle.cos(),
        c.1 + 0.5 * radius * disc_angle.sin(),
    );
    let disc_r = radius * rng.gen_range(0.12..0.17);
    let vessels: Vec<Vessel> = (0..5)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Vessel {
                origin: disc,
                dir: (a.cos(), a.sin()),
                amp: radius * rng.gen_range(0.03..0.12),
                freq: rng.gen_range(2.0..6.0) / radius,
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                width: s * rng.gen_range(0.012..0.025),
            }
        })
        .collect();
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let k = rng.gen_range(0.6..1.6);
            (k * a.cos(), k * a.sin(), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.01..0.03))
        })
        .collect();

    let flare_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let flare_dist = radius * rng.gen_range(0.0..0.55);
    let flare_c = (c.0 + flare_dist * flare_angle.cos(), c.1 + flare_dist * flare_angle.sin());
    let flare_sigma = s * rng.gen_range(0.1..0.18);
    let flare_gain = rng.gen_range(0.6..0.9);
    let flare_color = [1.0, rng.gen_range(0.9..1.0), rng.gen_range(0.75..0.9)];
    let vignette = rng.gen_range(0.35..0.55);

    let mut clean = Vec::with_capacity(size * size);
    let mut art = Vec::with_capacity(size * size);
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let r = (px - c.0).hypot(py - c.1) / radius;
            let inside = 1.0 - smoothstep(0.97, 1.03, r);
            let shade = 0.7 + 0.3 * (1.0 - r * r).max(0.0);
            let dd = (px - disc.0).hypot(py - disc.1) / disc_r;
            let disc_glow = (-0.5 * dd * dd).exp();
            let mut dark = 1.0;
            for v in &vessels {
                let d = v.distance(px, py, radius * 1.3) / v.width;
                dark *= 1.0 - 0.45 * (-0.5 * d * d).exp();
            }
            let tex: f64 = waves
                .iter()
                .map(|&(kx, ky, ph, a)| a * (kx * px + ky * py + ph).sin())
                .sum();
            let mut pix = [0.0; 3];
            for ch in 0..3 {
                let glow = [0.3, 0.35, 0.2][ch] * disc_glow;
                pix[ch] = inside * ((base[ch] * shade + glow) * dark + tex);
            }
            let fd = (px - flare_c.0).hypot(py - flare_c.1) / flare_sigma;
            let a = flare_gain * (-0.5 * fd * fd).exp() * inside;
            let vig = 1.0 - vignette * (r * r).min(1.0);
            let mut apix = [0.0; 3];
            for ch in 0..3 {
                apix[ch] = pix[ch] * vig + a * flare_color[ch];
            }
            clean.push(pix);
            art.push(apix);
            mask.push(r < 0.95 && a < 0.03);
        }
    }
    SynthImage {
        clean: to_sample(&clean, size),
        artifacted: to_sample(&art, size),
        clean_mask: mask,
    }
}

/// Image `index` of `domain` in the corpus for `seed`.
pub fn corpus_image(seed: u64, domain: Domain, index: u64, size: usize) -> ImageSample {
    match domain {
        Domain::M => synth_image(seed, index, size).artifacted,
        Domain::N => synth_image(seed, DOMAIN_N_OFFSET + index, size).clean,
    }
    .with_domain(domain)
}

/// Writes `count` images per domain as PNGs under the standard corpus
/// layout and returns the written paths.
pub fn write_corpus(root: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>, DataError> {
    let mut written = Vec::new();
    for domain in [Domain::M, Domain::N] {
        let dir = root.join(domain.dir_name());
        std::fs::create_dir_all(&dir).map_err(|source| DataError::Io {
            path: dir.clone(),
            source,
        })?;
        for i in 0..count {
            let path = dir.join(format!("{}_{i:04}.png", domain.to_string().to_lowercase()));
            corpus_image(seed, domain, i as u64, size).save_png(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}
