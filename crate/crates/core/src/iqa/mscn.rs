use super::IqaError;
use crate::data::ImageSample;

/// Grayscale image on the [0, 255] scale, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Luma {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Luma {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "luma buffer length");
        Luma { height, width, data }
    }

    /// Rec. 601 luminance of a [−1, 1] RGB sample.
    pub fn from_sample(s: &ImageSample) -> Self {
        let (h, w) = (s.height(), s.width());
        let d = s.data.data();
        let plane = h * w;
        let data = (0..plane)
            .map(|p| {
                let c = |k: usize| (d[k * plane + p] as f64 + 1.0) * 127.5;
                0.299 * c(0) + 0.587 * c(1) + 0.114 * c(2)
            })
            .collect();
        Luma::new(h, w, data)
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// 2×2 box average; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Luma {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * y, 2 * x)
                    + self.at(2 * y, 2 * x + 1)
                    + self.at(2 * y + 1, 2 * x)
                    + self.at(2 * y + 1, 2 * x + 1);
                data.push(s / 4.0);
            }
        }
        Luma::new(h, w, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MscnConfig {
    /// Window half-extent; the window is `(2·half + 1)²`.
    pub half: usize,
    pub sigma: f64,
    pub epsilon: f64,
}

impl Default for MscnConfig {
    fn default() -> Self {
        MscnConfig {
            half: 3,
            sigma: 7.0 / 6.0,
            epsilon: 1.0,
        }
    }
}

impl MscnConfig {
    pub fn window_size(&self) -> usize {
        2 * self.half + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MscnField {
    pub height: usize,
    pub width: usize,
    pub coeffs: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub config: MscnConfig,
}

/// Circularly symmetric Gaussian weights, normalized to sum to one.
pub fn gaussian_window(half: usize, sigma: f64) -> Vec<f64> {
    let n = 2 * half + 1;
    let mut w = Vec::with_capacity(n * n);
    for g in 0..n {
        for h in 0..n {
            let (dy, dx) = (g as f64 - half as f64, h as f64 - half as f64);
            w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

/// Mirror index with edge repetition: −1 ↦ 0, n ↦ n − 1.
fn symmetric(i: isize, n: usize) -> usize {
    let n = n as isize;
    let i = if i < 0 { -i - 1 } else if i >= n { 2 * n - i - 1 } else { i };
    i.clamp(0, n - 1) as usize
}

/// Local Gaussian mean and deviation, then `(I − μ) / (σ + ε)`.
pub fn mscn(img: &Luma, cfg: &MscnConfig) -> Result<MscnField, IqaError> {
    let k = cfg.window_size();
    if img.height < k || img.width < k {
        return Err(IqaError::TooSmall {
            height: img.height,
            width: img.width,
            min: k,
        });
    }
    if cfg.sigma <= 0.0 || cfg.epsilon < 0.0 {
        return Err(IqaError::Config("MSCN sigma must be positive and epsilon non-negative".into()));
    }
    let win = gaussian_window(cfg.half, cfg.sigma);
    let (h, w) = (img.height, img.width);
    let half = cfg.half as isize;
    let mut mu = vec![0.0; h * w];
    let mut sigma = vec![0.0; h * w];
    let mut coeffs = vec![0.0; h * w];
    let mut patch = vec![0.0; k * k];
    for y in 0..h {
        for x in 0..w {
            for (idx, p) in patch.iter_mut().enumerate() {
                let yy = symmetric(y as isize + (idx / k) as isize - half, h);
                let xx = symmetric(x as isize + (idx % k) as isize - half, w);
                *p = img.at(yy, xx);
            }
            let m: f64 = win.iter().zip(&patch).map(|(f, v)| f * v).sum();
            let var: f64 = win.iter().zip(&patch).map(|(f, v)| f * (v - m) * (v - m)).sum();
            let s = var.sqrt();
            let i = y * w + x;
            mu[i] = m;
            sigma[i] = s;
            coeffs[i] = (img.at(y, x) - m) / (s + cfg.epsilon);
        }
    }
    Ok(MscnField {
        height: h,
        width: w,
        coeffs,
        mu,
        sigma,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_sums_to_one() {
        let w = gaussian_window(3, 7.0 / 6.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[24], w.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn symmetric_extension() {
        assert_eq!(symmetric(-1, 5), 0);
        assert_eq!(symmetric(-3, 5), 2);
        assert_eq!(symmetric(5, 5), 4);
        assert_eq!(symmetric(6, 5), 3);
    }

    #[test]
    fn constant_image_has_zero_coefficients() {
        let f = mscn(&Luma::new(9, 9, vec![77.0; 81]), &MscnConfig::default()).unwrap();
        assert!(f.coeffs.iter().all(|&c| c.abs() < 1e-12));
        assert!(f.sigma.iter().all(|&s| s.abs() < 1e-6));
    }

    #[test]
    fn too_small() {
        let err = mscn(&Luma::new(6, 9, vec![0.0; 54]), &MscnConfig::default()).unwrap_err();
        assert!(matches!(err, IqaError::TooSmall { min: 7, .. }));
    }

    #[test]
    fn downsample_box() {
        let l = Luma::new(2, 3, vec![0.0, 4.0, 9.0, 8.0, 4.0, 9.0]);
        assert_eq!(l.downsample2().data, vec![4.0]);
    }
}
