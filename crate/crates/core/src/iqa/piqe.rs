use super::{mscn, IqaError, Luma, MscnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLabel {
    Inactive,
    Undistorted,
    BlockingArtifact,
    GaussianNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiqeConfig {
    pub block_size: usize,
    /// A block is spatially active when its MSCN variance exceeds this.
    pub activity_threshold: f64,
    pub segment_length: usize,
    /// An edge segment whose MSCN standard deviation falls below this
    /// marks a blocking artifact.
    pub edge_threshold: f64,
    /// Noise is flagged when the block deviation σ exceeds this multiple of
    /// `|σ − r| / max(σ, r)`, where `r` is the deviation of the two centre
    /// columns over that of the remaining columns.
    pub noise_ratio: f64,
    pub mscn: MscnConfig,
}

impl Default for PiqeConfig {
    fn default() -> Self {
        PiqeConfig {
            block_size: 16,
            activity_threshold: 0.1,
            segment_length: 6,
            edge_threshold: 0.1,
            noise_ratio: 2.0,
            mscn: MscnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiqeReport {
    /// In [0, 100]; lower is better.
    pub score: f64,
    /// Set when no block was spatially active and the score fell back to 100.
    pub no_activity: bool,
    pub blocks_y: usize,
    pub blocks_x: usize,
    /// Row-major block labels.
    pub labels: Vec<BlockLabel>,
    pub distorted: usize,
    pub active: usize,
}

fn variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    v.map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Block-wise perceptual quality estimate of a luminance image.
///
/// MSCN coefficients are split into non-overlapping blocks (partial edge
/// blocks are ignored). Active blocks are tested for low-variance edge
/// segments (blocking) and for noise, scored in [0, 1], and the mean over
/// active blocks is scaled to [0, 100].
pub fn piqe(img: &Luma, cfg: &PiqeConfig) -> Result<PiqeReport, IqaError> {
    let b = cfg.block_size;
    if b < 4 || cfg.segment_length == 0 || cfg.segment_length > b {
        return Err(IqaError::Config(format!(
            "PIQE block size {b} / segment length {} invalid",
            cfg.segment_length
        )));
    }
    let min = b.max(cfg.mscn.window_size());
    if img.height < min || img.width < min {
        return Err(IqaError::TooSmall {
            height: img.height,
            width: img.width,
            min,
        });
    }
    let field = mscn(img, &cfg.mscn)?;
    let w = field.width;
    let c = |y: usize, x: usize| field.coeffs[y * w + x];
    let (by, bx) = (img.height / b, img.width / b);
    let mut labels = Vec::with_capacity(by * bx);
    let (mut total, mut active, mut distorted) = (0.0, 0, 0);
    for j in 0..by {
        for i in 0..bx {
            let (y0, x0) = (j * b, i * b);
            let cells = (0..b * b).map(|k| c(y0 + k / b, x0 + k % b));
            let v = variance(cells.clone());
            if v <= cfg.activity_threshold {
                labels.push(BlockLabel::Inactive);
                continue;
            }
            active += 1;
            let edges: [Box<dyn Fn(usize) -> f64>; 4] = [
                Box::new(|t| c(y0, x0 + t)),
                Box::new(|t| c(y0 + b - 1, x0 + t)),
                Box::new(|t| c(y0 + t, x0)),
                Box::new(|t| c(y0 + t, x0 + b - 1)),
            ];
            let blocking = edges.iter().any(|edge| {
                (0..=b - cfg.segment_length).any(|s| {
                    variance((s..s + cfg.segment_length).map(edge)).sqrt() < cfg.edge_threshold
                })
            });
            // Centre: the two middle columns; surround: every other column.
            let mid = (b / 2 - 1)..(b / 2 + 1);
            let center = (0..b * b).filter(|k| mid.contains(&(k % b))).map(|k| c(y0 + k / b, x0 + k % b));
            let surround = (0..b * b)
                .filter(|k| !mid.contains(&(k % b)))
                .map(|k| c(y0 + k / b, x0 + k % b));
            let ratio = variance(center).sqrt() / variance(surround).sqrt().max(f64::MIN_POSITIVE);
            let sigma = v.sqrt();
            let beta = (sigma - ratio).abs() / sigma.max(ratio);
            let noisy = sigma > cfg.noise_ratio * beta;
            let vc = v.clamp(0.0, 1.0);
            let mut d = 0.0;
            if blocking {
                d += 1.0 - vc;
            }
            if noisy {
                d += vc;
            }
            let label = match (blocking, noisy) {
                (true, _) => BlockLabel::BlockingArtifact,
                (false, true) => BlockLabel::GaussianNoise,
                _ => BlockLabel::Undistorted,
            };
            if label != BlockLabel::Undistorted {
                distorted += 1;
            }
            labels.push(label);
            total += d.min(1.0);
        }
    }
    let (score, no_activity) = if active == 0 {
        (100.0, true)
    } else {
        ((100.0 * total / active as f64).clamp(0.0, 100.0), false)
    };
    Ok(PiqeReport {
        score,
        no_activity,
        blocks_y: by,
        blocks_x: bx,
        labels,
        distorted,
        active,
    })
}
