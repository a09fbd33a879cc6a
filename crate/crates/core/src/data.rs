//! Image decoding, resizing, corpus splits and unpaired batching.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Directory holding domain M images inside a corpus root.
pub const WITH_ARTIFACT_DIR: &str = "with_artifact";
/// Directory holding domain N images inside a corpus root.
pub const ARTIFACT_FREE_DIR: &str = "artifact_free";
pub const DEFAULT_TEST_FRACTION: f64 = 0.16;
pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: unsupported channel count {channels}")]
    Channels { path: PathBuf, channels: u8 },
    #[error("domain {0} has no images")]
    EmptyDomain(Domain),
    #[error("test fraction {0} outside [0, 1)")]
    Fraction(f64),
    #[error("{0} is listed in both domains")]
    Overlap(PathBuf),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("expected a 3×H×W image, got shape {0:?}")]
    Shape(Vec<usize>),
    #[error("{path}: cannot encode image: {message}")]
    Encode { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    /// Images containing artifacts.
    M,
    /// Artifact-free images.
    N,
}

impl Domain {
    pub fn dir_name(self) -> &'static str {
        match self {
            Domain::M => WITH_ARTIFACT_DIR,
            Domain::N => ARTIFACT_FREE_DIR,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Domain::M => 0,
            Domain::N => 1,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::M => "M",
            Domain::N => "N",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "M" | "m" => Ok(Domain::M),
            "N" | "n" => Ok(Domain::N),
            other => Err(format!("unknown domain {other:?}")),
        }
    }
}

/// A 3×H×W image with values in [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub data: Tensor<f32>,
    pub path: Option<PathBuf>,
    pub domain: Option<Domain>,
}

impl ImageSample {
    pub fn new(data: Tensor<f32>) -> Result<Self, DataError> {
        match data.shape() {
            [3, h, w] if *h > 0 && *w > 0 => Ok(ImageSample {
                data,
                path: None,
                domain: None,
            }),
            s => Err(DataError::Shape(s.to_vec())),
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.as_raw();
        let data = Tensor::from_fn([3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            normalize_u8(raw[p * 3 + c])
        })
        .expect("decoded images are non-empty");
        ImageSample {
            data,
            path: None,
            domain: None,
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w) = (self.height(), self.width());
        let d = self.data.data();
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = y as usize * w + x as usize;
            image::Rgb([0, 1, 2].map(|c| denormalize_u8(d[c * h * w + p])))
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| DataError::Encode {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

/// Maps 8-bit intensity to [−1, 1].
pub fn normalize_u8(v: u8) -> f32 {
    (2.0 * v as f64 / 255.0 - 1.0) as f32
}

/// Inverse of [`normalize_u8`], clamping and rounding to nearest.
pub fn denormalize_u8(v: f32) -> u8 {
    let x = ((v as f64 + 1.0) * 127.5).round();
    x.clamp(0.0, 255.0) as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageSample, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory(&bytes).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = match img.color().channel_count() {
        1..=4 => img.to_rgb8(),
        channels => {
            return Err(DataError::Channels {
                path: path.to_path_buf(),
                channels,
            })
        }
    };
    let mut s = ImageSample::from_rgb8(&rgb);
    s.path = Some(path.to_path_buf());
    Ok(s)
}

/// Bilinear resize to `size × size` with half-pixel centers and edge
/// clamping. Returns the input unchanged when it is already that size.
pub fn resize_to(img: &ImageSample, size: usize) -> ImageSample {
    let (h, w) = (img.height(), img.width());
    if h == size && w == size {
        return img.clone();
    }
    let src = img.data.data();
    let axis = |n_in: usize, i: usize| {
        let pos = (i as f64 + 0.5) * n_in as f64 / size as f64 - 0.5;
        let pos = pos.clamp(0.0, (n_in - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, pos - i0 as f64)
    };
    let rows: Vec<_> = (0..size).map(|i| axis(h, i)).collect();
    let cols: Vec<_> = (0..size).map(|i| axis(w, i)).collect();
    let mut out = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let at = |y: usize, x: usize| plane[y * w + x] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    ImageSample {
        data: Tensor::new([3, size, size], out).expect("size checked"),
        path: img.path.clone(),
        domain: img.domain,
    }
}

/// Image files (png/jpg/jpeg) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if p.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub domain: Domain,
    pub split: Split,
    /// Path relative to the corpus root.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn files(&self, domain: Domain, split: Split) -> impl Iterator<Item = &Path> + '_ {
        self.entries
            .iter()
            .filter(move |e| e.domain == domain && e.split == split)
            .map(|e| e.path.as_path())
    }

    pub fn count(&self, domain: Domain, split: Split) -> usize {
        self.files(domain, split).count()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("# seed\t{}\n", self.seed);
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.domain, e.split, e.path.display()));
        }
        s
    }

    pub fn parse_tsv(text: &str) -> Result<Self, DataError> {
        let mut seed = 0;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| DataError::Manifest { line: i + 1, message };
            if let Some(rest) = line.strip_prefix("# seed\t") {
                seed = rest.trim().parse().map_err(|_| err(format!("bad seed {rest:?}")))?;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<_> = line.split('\t').collect();
            let [d, s, p] = fields[..] else {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let split = match s {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(err(format!("unknown split {other:?}"))),
            };
            entries.push(ManifestEntry {
                domain: d.parse().map_err(err)?,
                split,
                path: PathBuf::from(p),
            });
        }
        Ok(CorpusManifest { seed, entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        Self::parse_tsv(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Shuffles each domain's files independently and marks the first
/// `round(n · test_fraction)` of each as test.
pub fn split_files(
    m: &[PathBuf],
    n: &[PathBuf],
    seed: u64,
    test_fraction: f64,
) -> Result<CorpusManifest, DataError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DataError::Fraction(test_fraction));
    }
    if let Some(p) = m.iter().find(|p| n.contains(p)) {
        return Err(DataError::Overlap(p.clone()));
    }
    let mut entries = Vec::new();
    for (domain, files) in [(Domain::M, m), (Domain::N, n)] {
        if files.is_empty() {
            return Err(DataError::EmptyDomain(domain));
        }
        let mut order: Vec<_> = files.to_vec();
        order.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(domain.stream());
        order.shuffle(&mut rng);
        let n_test = (files.len() as f64 * test_fraction).round() as usize;
        for (i, path) in order.into_iter().enumerate() {
            let split = if i < n_test { Split::Test } else { Split::Train };
            entries.push(ManifestEntry { domain, split, path });
        }
    }
    Ok(CorpusManifest { seed, entries })
}

/// Scans `root/with_artifact` and `root/artifact_free` and splits them.
/// Paths in the manifest are relative to `root`.
pub fn split_dataset(root: &Path, seed: u64, test_fraction: f64) -> Result<CorpusManifest, DataError> {
    let rel = |d: Domain| -> Result<Vec<PathBuf>, DataError> {
        Ok(list_images(&root.join(d.dir_name()))?
            .into_iter()
            .map(|p| p.strip_prefix(root).map(Path::to_path_buf).unwrap_or(p))
            .collect())
    };
    split_files(&rel(Domain::M)?, &rel(Domain::N)?, seed, test_fraction)
}

/// Loads every image of one domain and split, resized to `size`.
pub fn load_split(
    root: &Path,
    manifest: &CorpusManifest,
    domain: Domain,
    split: Split,
    size: usize,
) -> Result<Vec<ImageSample>, DataError> {
    manifest
        .files(domain, split)
        .map(|p| {
            let s = load_image(root.join(p))?;
            Ok(resize_to(&s, size).with_domain(domain))
        })
        .collect()
}

/// Deterministic pairing of two unpaired domains. Each epoch shuffles
/// both index lists independently; the epoch runs over the larger domain
/// and the smaller one wraps around.
#[derive(Debug, Clone)]
pub struct UnpairedBatcher {
    pub len_m: usize,
    pub len_n: usize,
    pub seed: u64,
}

impl UnpairedBatcher {
    pub fn new(len_m: usize, len_n: usize, seed: u64) -> Result<Self, DataError> {
        if len_m == 0 {
            return Err(DataError::EmptyDomain(Domain::M));
        }
        if len_n == 0 {
            return Err(DataError::EmptyDomain(Domain::N));
        }
        Ok(UnpairedBatcher { len_m, len_n, seed })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.len_m.max(self.len_n)
    }

    fn permutation(&self, epoch: usize, domain: Domain, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * epoch as u64 + domain.stream() + 16);
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(&mut rng);
        idx
    }

    /// `(m index, n index)` for every step of `epoch`.
    pub fn epoch(&self, epoch: usize) -> Vec<(usize, usize)> {
        let pm = self.permutation(epoch, Domain::M, self.len_m);
        let pn = self.permutation(epoch, Domain::N, self.len_n);
        (0..self.steps_per_epoch())
            .map(|i| (pm[i % self.len_m], pn[i % self.len_n]))
            .collect()
    }
}
