use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::{mscn, IqaError, Luma, MscnConfig};
use crate::checkpoint::Checkpoint;
use crate::tensor::Tensor;

/// GGD (2) plus four orientations of AGGD parameters (4 each).
pub const NIQE_FEATURES_PER_SCALE: usize = 18;
const SCALES: usize = 2;
const ROLE: &str = "NIQE";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NiqeConfig {
    /// Patch side at the finest scale; the coarse scale uses half of it.
    pub patch_size: usize,
    /// Fitting keeps patches whose mean local deviation is at least this
    /// fraction of the sharpest patch in the same image.
    pub sharpness_fraction: f64,
    pub ridge: f64,
    pub min_images: usize,
    pub mscn: MscnConfig,
}

impl Default for NiqeConfig {
    fn default() -> Self {
        NiqeConfig {
            patch_size: 96,
            sharpness_fraction: 0.75,
            ridge: 1e-6,
            min_images: 10,
            mscn: MscnConfig::default(),
        }
    }
}

impl NiqeConfig {
    pub fn feature_len(&self) -> usize {
        NIQE_FEATURES_PER_SCALE * SCALES
    }

    fn validate(&self) -> Result<(), IqaError> {
        if self.patch_size % 2 != 0 || self.patch_size / 2 < self.mscn.window_size() {
            return Err(IqaError::Config(format!(
                "NIQE patch size {} must be even and at least twice the MSCN window",
                self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.sharpness_fraction) || !(self.ridge >= 0.0) {
            return Err(IqaError::Config("NIQE sharpness fraction or ridge out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiqeModel {
    pub mean: Vec<f64>,
    /// Row-major `d × d` covariance including the ridge.
    pub cov: Vec<f64>,
    pub config: NiqeConfig,
    pub corpus_fingerprint: u64,
    pub patches: usize,
}

fn grid() -> &'static [(f64, f64, f64)] {
    static GRID: OnceLock<Vec<(f64, f64, f64)>> = OnceLock::new();
    GRID.get_or_init(|| {
        (0..=9800)
            .map(|i| {
                let a = 0.2 + i as f64 * 0.001;
                let r = (ln_gamma(2.0 / a) * 2.0 - ln_gamma(1.0 / a) - ln_gamma(3.0 / a)).exp();
                (a, r, (ln_gamma(2.0 / a) - ln_gamma(1.0 / a)).exp())
            })
            .collect()
    })
}

fn closest_alpha(target: f64) -> f64 {
    grid()
        .iter()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|g| g.0)
        .expect("non-empty grid")
}

/// Moment-matched generalized Gaussian shape and variance.
pub fn ggd_fit(x: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    let abs_mean = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if !(var > 0.0) || !(abs_mean > 0.0) {
        return None;
    }
    Some((closest_alpha(abs_mean * abs_mean / var), var))
}

/// Asymmetric generalized Gaussian fit: `(α, mean, β_left, β_right)`.
pub fn aggd_fit(x: &[f64]) -> Option<[f64; 4]> {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for &v in x {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
    }
    if ln == 0 || rn == 0 {
        return None;
    }
    let (lstd, rstd) = ((ls / ln as f64).sqrt(), (rs / rn as f64).sqrt());
    let gamma = lstd / rstd;
    let n = x.len() as f64;
    let abs_mean = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let sq_mean = x.iter().map(|v| v * v).sum::<f64>() / n;
    let r_hat = abs_mean * abs_mean / sq_mean;
    let big_r = r_hat * (gamma.powi(3) + 1.0) * (gamma + 1.0) / (gamma * gamma + 1.0).powi(2);
    let alpha = closest_alpha(big_r);
    let scale = (ln_gamma(1.0 / alpha) - ln_gamma(3.0 / alpha)).exp().sqrt();
    let (bl, br) = (lstd * scale, rstd * scale);
    let ratio = (ln_gamma(2.0 / alpha) - ln_gamma(1.0 / alpha)).exp();
    let f = [alpha, (br - bl) * ratio, bl, br];
    f.iter().all(|v| v.is_finite()).then_some(f)
}

fn patch_features(c: &[f64], w: usize, y0: usize, x0: usize, p: usize) -> Option<Vec<f64>> {
    let at = |y: usize, x: usize| c[(y0 + y) * w + x0 + x];
    let all: Vec<f64> = (0..p * p).map(|k| at(k / p, k % p)).collect();
    let (alpha, var) = ggd_fit(&all)?;
    let mut out = vec![alpha, var];
    let shifts: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    for (dy, dx) in shifts {
        let mut prods = Vec::with_capacity(p * p);
        for y in 0..p {
            for x in 0..p {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < p as isize && xx >= 0 && xx < p as isize {
                    prods.push(at(y, x) * at(yy as usize, xx as usize));
                }
            }
        }
        out.extend(aggd_fit(&prods)?);
    }
    Some(out)
}

/// Per-patch 36-dimensional features paired with each patch's sharpness.
/// Patches whose statistics are degenerate (e.g. flat) are skipped.
pub fn niqe_features(img: &Luma, cfg: &NiqeConfig) -> Result<Vec<(Vec<f64>, f64)>, IqaError> {
    cfg.validate()?;
    let p = cfg.patch_size;
    if img.height < p || img.width < p {
        return Err(IqaError::TooSmall {
            height: img.height,
            width: img.width,
            min: p,
        });
    }
    let fine = mscn(img, &cfg.mscn)?;
    let coarse = mscn(&img.downsample2(), &cfg.mscn)?;
    let mut out = Vec::new();
    for j in 0..img.height / p {
        for i in 0..img.width / p {
            let f1 = patch_features(&fine.coeffs, fine.width, j * p, i * p, p);
            let f2 = patch_features(&coarse.coeffs, coarse.width, j * p / 2, i * p / 2, p / 2);
            let sharp = (0..p * p)
                .map(|k| fine.sigma[(j * p + k / p) * fine.width + i * p + k % p])
                .sum::<f64>()
                / (p * p) as f64;
            if let (Some(mut a), Some(b)) = (f1, f2) {
                a.extend(b);
                out.push((a, sharp));
            }
        }
    }
    Ok(out)
}

fn mean_cov(rows: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let denom = if rows.len() > 1 { n - 1.0 } else { 1.0 };
    let mut cov = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let s: f64 = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / denom;
            cov[a * d + b] = s;
            cov[b * d + a] = s;
        }
    }
    (mean, cov)
}

fn fingerprint(images: &[Luma]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for img in images {
        for b in (img.height as u64)
            .to_le_bytes()
            .into_iter()
            .chain((img.width as u64).to_le_bytes())
            .chain(img.data.iter().flat_map(|v| v.to_le_bytes()))
        {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Fits the pristine feature distribution to sharp patches of `images`.
pub fn fit_niqe_model(images: &[Luma], cfg: &NiqeConfig) -> Result<NiqeModel, IqaError> {
    cfg.validate()?;
    if images.len() < cfg.min_images {
        return Err(IqaError::TooFewImages {
            need: cfg.min_images,
            got: images.len(),
        });
    }
    let mut rows = Vec::new();
    for img in images {
        let feats = niqe_features(img, cfg)?;
        let max = feats.iter().map(|f| f.1).fold(0.0, f64::max);
        rows.extend(
            feats
                .into_iter()
                .filter(|f| f.1 > 0.0 && f.1 >= cfg.sharpness_fraction * max)
                .map(|f| f.0),
        );
    }
    if rows.is_empty() {
        return Err(IqaError::DegenerateCorpus);
    }
    let d = cfg.feature_len();
    let (mean, mut cov) = mean_cov(&rows, d);
    for i in 0..d {
        cov[i * d + i] += cfg.ridge;
    }
    Ok(NiqeModel {
        mean,
        cov,
        config: *cfg,
        corpus_fingerprint: fingerprint(images),
        patches: rows.len(),
    })
}

/// `√((ν₁ − ν₂)ᵀ ((Σ₁ + Σ₂) / 2)⁻¹ (ν₁ − ν₂))`.
pub fn niqe_distance(nu1: &[f64], cov1: &[f64], nu2: &[f64], cov2: &[f64]) -> Result<f64, IqaError> {
    let d = nu1.len();
    if nu2.len() != d || cov1.len() != d * d || cov2.len() != d * d {
        return Err(IqaError::FeatureLength {
            expected: d,
            got: nu2.len(),
        });
    }
    let diff = DVector::from_iterator(d, nu1.iter().zip(nu2).map(|(a, b)| a - b));
    if diff.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let pooled = DMatrix::from_fn(d, d, |i, j| (cov1[i * d + j] + cov2[i * d + j]) / 2.0);
    let chol = pooled.cholesky().ok_or(IqaError::Singular)?;
    let q = diff.dot(&chol.solve(&diff));
    if !q.is_finite() {
        return Err(IqaError::Singular);
    }
    Ok(q.max(0.0).sqrt())
}

/// NIQE score of one image against `model`; lower is better.
pub fn niqe_score(img: &Luma, model: &NiqeModel) -> Result<f64, IqaError> {
    let feats = niqe_features(img, &model.config)?;
    if feats.is_empty() {
        return Err(IqaError::NoPatches);
    }
    let rows: Vec<Vec<f64>> = feats.into_iter().map(|f| f.0).collect();
    let d = model.mean.len();
    let (nu, cov) = if rows.len() > 1 {
        mean_cov(&rows, d)
    } else {
        (rows[0].clone(), vec![0.0; d * d])
    };
    niqe_distance(&model.mean, &model.cov, &nu, &cov)
}

impl NiqeModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let d = self.dim();
        let mut ck = Checkpoint::new();
        ck.roles.push(ROLE.into());
        let c = &self.config;
        for (k, v) in [
            ("patch_size", c.patch_size.to_string()),
            ("sharpness_fraction", c.sharpness_fraction.to_string()),
            ("ridge", c.ridge.to_string()),
            ("min_images", c.min_images.to_string()),
            ("mscn_half", c.mscn.half.to_string()),
            ("mscn_sigma", c.mscn.sigma.to_string()),
            ("mscn_epsilon", c.mscn.epsilon.to_string()),
            ("corpus_fingerprint", format!("{:016x}", self.corpus_fingerprint)),
            ("patches", self.patches.to_string()),
        ] {
            ck.set_meta(k, v);
        }
        ck.put(format!("{ROLE}/mean"), &Tensor::<f64>::new([d], self.mean.clone()).expect("d > 0"));
        ck.put(format!("{ROLE}/cov"), &Tensor::<f64>::new([d, d], self.cov.clone()).expect("d > 0"));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, IqaError> {
        if !ck.roles.iter().any(|r| r == ROLE) {
            return Err(IqaError::Model("not a NIQE model".into()));
        }
        fn meta<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T, IqaError> {
            ck.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| IqaError::Model(format!("missing or invalid {key}")))
        }
        let config = NiqeConfig {
            patch_size: meta(ck, "patch_size")?,
            sharpness_fraction: meta(ck, "sharpness_fraction")?,
            ridge: meta(ck, "ridge")?,
            min_images: meta(ck, "min_images")?,
            mscn: MscnConfig {
                half: meta(ck, "mscn_half")?,
                sigma: meta(ck, "mscn_sigma")?,
                epsilon: meta(ck, "mscn_epsilon")?,
            },
        };
        let mean = ck
            .get::<f64>(&format!("{ROLE}/mean"))
            .ok_or_else(|| IqaError::Model("missing mean".into()))?;
        let cov = ck
            .get::<f64>(&format!("{ROLE}/cov"))
            .ok_or_else(|| IqaError::Model("missing covariance".into()))?;
        let d = mean.numel();
        if d != config.feature_len() || cov.shape() != [d, d] {
            return Err(IqaError::FeatureLength {
                expected: config.feature_len(),
                got: d,
            });
        }
        let fp = ck.meta("corpus_fingerprint").unwrap_or("0");
        Ok(NiqeModel {
            mean: mean.into_data(),
            cov: cov.into_data(),
            config,
            corpus_fingerprint: u64::from_str_radix(fp, 16).map_err(|_| IqaError::Model("bad fingerprint".into()))?,
            patches: meta(ck, "patches")?,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), IqaError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, IqaError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
