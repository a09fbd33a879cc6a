//! Adversarial least-squares, cycle and identity training of two
//! generator/discriminator pairs over unpaired domains.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::data::{DataError, Domain, ImageSample, UnpairedBatcher};
use crate::models::{
    build_discriminator, build_generator, BoundModel, DiscriminatorConfig, GeneratorConfig, ModelError, ModelGraph,
};
use crate::nn::Activation;
use crate::optim::{AdamConfig, AdamState, OptimError};
use crate::params::ParamStore;
use crate::tensor::{Graph, Result as TResult, Scalar, Tensor, TensorError, Var};

pub const LAMBDA_CYCLE: f64 = 10.0;
pub const LAMBDA_IDENTITY: f64 = 5.0;
pub const BUFFER_CAPACITY: usize = 50;

pub const LOSS_CSV: &str = "losses.csv";
pub const FINAL_CHECKPOINT: &str = "final.fgan";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged at step {}: non-finite loss in {:?}", .0.step, .0)]
    Diverged(LossRecord),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// History buffer size for discriminator fakes; 0 disables it.
    pub buffer_capacity: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Write a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
    /// Write a sample grid every this many epochs (0: never).
    pub sample_every: usize,
}

impl TrainConfig {
    pub fn full() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1,
            adam: AdamConfig::default(),
            lambda_cycle: LAMBDA_CYCLE,
            lambda_identity: LAMBDA_IDENTITY,
            seed: 0,
            generator: GeneratorConfig::full(),
            discriminator: DiscriminatorConfig::full(),
            buffer_capacity: BUFFER_CAPACITY,
            max_steps: None,
            checkpoint_every: 10,
            sample_every: 10,
        }
    }

    /// 32×32 images, three residual blocks, three discriminator stages,
    /// 500 steps.
    pub fn toy() -> Self {
        TrainConfig {
            epochs: 8,
            generator: GeneratorConfig::toy(),
            discriminator: DiscriminatorConfig::toy(),
            max_steps: Some(500),
            checkpoint_every: 0,
            sample_every: 4,
            ..Self::full()
        }
    }

    pub fn image_size(&self) -> usize {
        self.generator.image_size
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lambda_cycle >= 0.0) || !(self.lambda_identity >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be at least 1".into());
        }
        if self.generator.image_size != self.discriminator.image_size {
            return bad(format!(
                "generator image_size {} differs from discriminator image_size {}",
                self.generator.image_size, self.discriminator.image_size
            ));
        }
        if self.generator.input_channels != self.discriminator.input_channels {
            return bad("generator and discriminator channel counts differ".into());
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.adam.validate()?;
        Ok(())
    }
}

/// Losses of one training step. `g_m`/`g_n` are the adversarial terms of
/// the generators producing domain M and domain N images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub d_m: f64,
    pub d_n: f64,
    pub g_m: f64,
    pub g_n: f64,
    pub cycle_m: f64,
    pub cycle_n: f64,
    pub id_m: f64,
    pub id_n: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,epoch,d_m,d_n,g_m,g_n,cycle_m,cycle_n,id_m,id_n";

    pub fn losses(&self) -> [f64; 8] {
        [
            self.d_m, self.d_n, self.g_m, self.g_n, self.cycle_m, self.cycle_n, self.id_m, self.id_n,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.losses().iter().all(|v| v.is_finite())
    }

    pub fn cycle(&self) -> f64 {
        self.cycle_m + self.cycle_n
    }

    pub fn identity(&self) -> f64 {
        self.id_m + self.id_n
    }

    pub fn to_csv_row(&self) -> String {
        let l = self.losses().map(|v| v.to_string());
        format!("{},{},{}", self.step, self.epoch, l.join(","))
    }

    pub fn parse_csv_row(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return None;
        }
        let n = |i: usize| f[i].parse::<f64>().ok();
        Some(LossRecord {
            step: f[0].parse().ok()?,
            epoch: f[1].parse().ok()?,
            d_m: n(2)?,
            d_n: n(3)?,
            g_m: n(4)?,
            g_n: n(5)?,
            cycle_m: n(6)?,
            cycle_n: n(7)?,
            id_m: n(8)?,
            id_n: n(9)?,
        })
    }
}

pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<(), TrainError> {
    let mut s = String::from(LossRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(io_err(path))
}

/// `mean((label − scores)²)` with label 1 for real and 0 for fake.
pub fn lsgan_loss<T: Scalar>(g: &mut Graph<T>, scores: Var, real: bool) -> TResult<Var> {
    let shifted = g.add_scalar(scores, if real { -T::one() } else { T::zero() })?;
    let sq = g.square(shifted)?;
    g.mean(sq, None)
}

/// Mean absolute difference between an image batch and its reconstruction.
pub fn cycle_loss<T: Scalar>(g: &mut Graph<T>, x: Var, reconstructed: Var) -> TResult<Var> {
    l1(g, x, reconstructed)
}

/// Mean absolute change a generator makes to an image already in its
/// output domain.
pub fn identity_loss<T: Scalar>(g: &mut Graph<T>, translated: Var, y: Var) -> TResult<Var> {
    l1(g, translated, y)
}

fn l1<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> TResult<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d, None)
}

/// Nodes of the generator objective built by [`generator_objective`].
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub fake_m: Var,
    pub fake_n: Var,
    pub adv_m: Var,
    pub adv_n: Var,
    pub cycle_m: Var,
    pub cycle_n: Var,
    pub id_m: Var,
    pub id_n: Var,
    pub total: Var,
}

/// Builds the joint generator objective: both adversarial terms plus the
/// weighted cycle and identity terms. `g_m` maps N to M, `g_n` maps M to N.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<T: Scalar>(
    g: &mut Graph<T>,
    g_m: &BoundModel<T>,
    g_n: &BoundModel<T>,
    d_m: &BoundModel<T>,
    d_n: &BoundModel<T>,
    m: Var,
    n: Var,
    lambda_cycle: f64,
    lambda_identity: f64,
) -> Result<GeneratorTerms, TrainError> {
    let fake_n = g_n.forward(g, m)?;
    let rec_m = g_m.forward(g, fake_n)?;
    let fake_m = g_m.forward(g, n)?;
    let rec_n = g_n.forward(g, fake_m)?;
    let same_m = g_m.forward(g, m)?;
    let same_n = g_n.forward(g, n)?;

    let s = d_n.forward(g, fake_n)?;
    let adv_n = lsgan_loss(g, s, true)?;
    let s = d_m.forward(g, fake_m)?;
    let adv_m = lsgan_loss(g, s, true)?;
    let cycle_m = cycle_loss(g, m, rec_m)?;
    let cycle_n = cycle_loss(g, n, rec_n)?;
    let id_m = identity_loss(g, same_m, m)?;
    let id_n = identity_loss(g, same_n, n)?;

    let weight = |v: f64| T::from_f64(v).expect("finite weight");
    let adv = g.add(adv_m, adv_n)?;
    let cyc = g.add(cycle_m, cycle_n)?;
    let cyc = g.scale(cyc, weight(lambda_cycle))?;
    let id = g.add(id_m, id_n)?;
    let id = g.scale(id, weight(lambda_identity))?;
    let total = g.add(adv, cyc)?;
    let total = g.add(total, id)?;
    Ok(GeneratorTerms {
        fake_m,
        fake_n,
        adv_m,
        adv_n,
        cycle_m,
        cycle_n,
        id_m,
        id_n,
        total,
    })
}

/// `lsgan(D(real), real) + lsgan(D(fake), fake)`.
pub fn discriminator_objective<T: Scalar>(
    g: &mut Graph<T>,
    d: &BoundModel<T>,
    real: Var,
    fake: Var,
) -> Result<Var, TrainError> {
    let sr = d.forward(g, real)?;
    let sf = d.forward(g, fake)?;
    let lr = lsgan_loss(g, sr, true)?;
    let lf = lsgan_loss(g, sf, false)?;
    Ok(g.add(lr, lf)?)
}

/// History of generated images shown to the discriminators.
#[derive(Debug, Clone)]
pub struct FakeImageBuffer {
    capacity: usize,
    images: Vec<Tensor<f32>>,
    rng: ChaCha8Rng,
}

impl FakeImageBuffer {
    pub fn new(capacity: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        FakeImageBuffer {
            capacity,
            images: Vec::with_capacity(capacity),
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Returns one image per fresh image: while filling, the fresh image
    /// itself; afterwards, with probability ½ a stored image which the
    /// fresh one replaces, else the fresh image.
    pub fn query(&mut self, fresh: Vec<Tensor<f32>>) -> Vec<Tensor<f32>> {
        if self.capacity == 0 {
            return fresh;
        }
        fresh
            .into_iter()
            .map(|img| {
                if self.images.len() < self.capacity {
                    self.images.push(img.clone());
                    img
                } else if self.rng.gen_bool(0.5) {
                    let i = self.rng.gen_range(0..self.capacity);
                    std::mem::replace(&mut self.images[i], img)
                } else {
                    img
                }
            })
            .collect()
    }
}

fn unstack(t: &Tensor<f32>) -> Vec<Tensor<f32>> {
    let s = t.shape();
    let per: usize = s[1..].iter().product();
    t.data()
        .chunks_exact(per)
        .map(|c| Tensor::new(s[1..].to_vec(), c.to_vec()).expect("chunk"))
        .collect()
}

fn model_seed(seed: u64, k: u64) -> u64 {
    seed ^ (k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The four networks with their optimizer and buffer state.
pub struct CycleGan {
    pub config: TrainConfig,
    /// Translates domain N to domain M.
    pub g_m: ModelGraph<f32>,
    /// Translates domain M to domain N.
    pub g_n: ModelGraph<f32>,
    pub d_m: ModelGraph<f32>,
    pub d_n: ModelGraph<f32>,
    opt_g: AdamState<f32>,
    opt_d: AdamState<f32>,
    buffer_m: FakeImageBuffer,
    buffer_n: FakeImageBuffer,
    pub step: usize,
}

fn joint_params(models: &[&ModelGraph<f32>]) -> ParamStore<f32> {
    let mut out = ParamStore::new();
    for m in models {
        for (n, t) in m.prefixed_params().iter() {
            out.insert(n, t.clone());
        }
    }
    out
}

fn apply_update(
    opt: &mut AdamState<f32>,
    models: [&mut ModelGraph<f32>; 2],
    grads: &BTreeMap<String, Tensor<f32>>,
) -> Result<(), TrainError> {
    let mut joint = joint_params(&[&*models[0], &*models[1]]);
    opt.step(&mut joint, grads)?;
    for m in models {
        m.load_params(&joint)?;
    }
    Ok(())
}

impl CycleGan {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let s = config.seed;
        let g_m = build_generator("G_M", &config.generator, model_seed(s, 0))?;
        let g_n = build_generator("G_N", &config.generator, model_seed(s, 1))?;
        let d_m = build_discriminator("D_M", &config.discriminator, model_seed(s, 2))?;
        let d_n = build_discriminator("D_N", &config.discriminator, model_seed(s, 3))?;
        let opt_g = AdamState::initialized(&joint_params(&[&g_m, &g_n]), config.adam)?;
        let opt_d = AdamState::initialized(&joint_params(&[&d_m, &d_n]), config.adam)?;
        Ok(CycleGan {
            buffer_m: FakeImageBuffer::new(config.buffer_capacity, s, 1),
            buffer_n: FakeImageBuffer::new(config.buffer_capacity, s, 2),
            config,
            g_m,
            g_n,
            d_m,
            d_n,
            opt_g,
            opt_d,
            step: 0,
        })
    }

    pub fn models(&self) -> [&ModelGraph<f32>; 4] {
        [&self.g_m, &self.g_n, &self.d_m, &self.d_n]
    }

    /// Generator update followed by the discriminator update on one batch
    /// pair (`B×3×H×W` each).
    pub fn train_step(&mut self, m: &Tensor<f32>, n: &Tensor<f32>, epoch: usize) -> Result<LossRecord, TrainError> {
        let cfg = &self.config;
        let mut g = Graph::new();
        let gm = self.g_m.bind(&mut g, true)?;
        let gn = self.g_n.bind(&mut g, true)?;
        let dm = self.d_m.bind(&mut g, false)?;
        let dn = self.d_n.bind(&mut g, false)?;
        let mv = g.constant(m.clone());
        let nv = g.constant(n.clone());

        let t = generator_objective(&mut g, &gm, &gn, &dm, &dn, mv, nv, cfg.lambda_cycle, cfg.lambda_identity)?;
        let (adv_m, adv_n, cyc_m, cyc_n, id_m, id_n) = (t.adv_m, t.adv_n, t.cycle_m, t.cycle_n, t.id_m, t.id_n);

        let val = |g: &Graph<f32>, v: Var| g.value(v).data()[0] as f64;
        let mut record = LossRecord {
            step: self.step + 1,
            epoch,
            d_m: 0.0,
            d_n: 0.0,
            g_m: val(&g, adv_m),
            g_n: val(&g, adv_n),
            cycle_m: val(&g, cyc_m),
            cycle_n: val(&g, cyc_n),
            id_m: val(&g, id_m),
            id_n: val(&g, id_n),
        };
        if !record.is_finite() {
            return Err(TrainError::Diverged(record));
        }
        let fakes_m = unstack(g.value(t.fake_m));
        let fakes_n = unstack(g.value(t.fake_n));
        let grads = g.backward(t.total)?.named();
        drop(g);
        apply_update(&mut self.opt_g, [&mut self.g_m, &mut self.g_n], &grads)?;

        let hist_m = Tensor::stack(&self.buffer_m.query(fakes_m).iter().collect::<Vec<_>>())?;
        let hist_n = Tensor::stack(&self.buffer_n.query(fakes_n).iter().collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let dm = self.d_m.bind(&mut g, true)?;
        let dn = self.d_n.bind(&mut g, true)?;
        let (mv, fm) = (g.constant(m.clone()), g.constant(hist_m));
        let (nv, fn_) = (g.constant(n.clone()), g.constant(hist_n));
        let loss_m = discriminator_objective(&mut g, &dm, mv, fm)?;
        let loss_n = discriminator_objective(&mut g, &dn, nv, fn_)?;
        let total = g.add(loss_m, loss_n)?;
        record.d_m = val(&g, loss_m);
        record.d_n = val(&g, loss_n);
        if !record.is_finite() {
            return Err(TrainError::Diverged(record));
        }
        let grads = g.backward(total)?.named();
        drop(g);
        apply_update(&mut self.opt_d, [&mut self.d_m, &mut self.d_n], &grads)?;
        self.step += 1;
        Ok(record)
    }

    /// Translates a batch with one generator.
    pub fn translate(&self, to: Domain, x: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
        let model = match to {
            Domain::M => &self.g_m,
            Domain::N => &self.g_n,
        };
        Ok(model.infer(x)?)
    }

    pub fn checkpoint(&self, epoch: usize) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for m in self.models() {
            ck.add_model(m);
        }
        ck.set_meta("step", self.step.to_string());
        ck.set_meta("epoch", epoch.to_string());
        ck.set_meta("seed", self.config.seed.to_string());
        write_arch_meta(&mut ck, &self.config.generator, &self.config.discriminator);
        ck
    }
}

fn activation_name(a: Activation) -> String {
    match a {
        Activation::Relu => "relu".into(),
        Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
        Activation::Tanh => "tanh".into(),
    }
}

pub fn parse_activation(s: &str) -> Option<Activation> {
    match s {
        "relu" => Some(Activation::Relu),
        "tanh" => Some(Activation::Tanh),
        _ => s.strip_prefix("leaky_relu:")?.parse().ok().map(Activation::LeakyRelu),
    }
}

fn write_arch_meta(ck: &mut Checkpoint, g: &GeneratorConfig, d: &DiscriminatorConfig) {
    ck.set_meta("generator.input_channels", g.input_channels.to_string());
    ck.set_meta("generator.base_filters", g.base_filters.to_string());
    ck.set_meta("generator.n_res_blocks", g.n_res_blocks.to_string());
    ck.set_meta("generator.image_size", g.image_size.to_string());
    ck.set_meta("generator.activation", activation_name(g.activation));
    let f: Vec<String> = d.filters.iter().map(|v| v.to_string()).collect();
    ck.set_meta("discriminator.filters", f.join(","));
    ck.set_meta("discriminator.alpha", d.alpha.to_string());
}

/// Reads the generator architecture recorded in a training checkpoint.
pub fn generator_config_from(ck: &Checkpoint) -> Option<GeneratorConfig> {
    let get = |k: &str| ck.meta(&format!("generator.{k}"));
    Some(GeneratorConfig {
        input_channels: get("input_channels")?.parse().ok()?,
        base_filters: get("base_filters")?.parse().ok()?,
        n_res_blocks: get("n_res_blocks")?.parse().ok()?,
        image_size: get("image_size")?.parse().ok()?,
        activation: parse_activation(get("activation")?)?,
    })
}

/// Side-by-side grid: one row per sample, input on the left and its
/// translation on the right.
pub fn sample_grid(pairs: &[(ImageSample, ImageSample)]) -> image::RgbImage {
    let (h, w) = pairs
        .first()
        .map(|p| (p.0.height() as u32, p.0.width() as u32))
        .unwrap_or((1, 1));
    let mut out = image::RgbImage::new(2 * w, h * pairs.len().max(1) as u32);
    for (r, (a, b)) in pairs.iter().enumerate() {
        for (c, img) in [a, b].into_iter().enumerate() {
            image::imageops::replace(&mut out, &img.to_rgb8(), (c as u32 * w) as i64, (r as u32 * h) as i64);
        }
    }
    out
}

pub struct TrainOutcome {
    pub model: CycleGan,
    pub history: Vec<LossRecord>,
}

/// Runs the full training loop. With `out` set, writes the loss CSV,
/// periodic and final checkpoints, and sample grids under it.
pub fn train(
    config: TrainConfig,
    domain_m: &[ImageSample],
    domain_n: &[ImageSample],
    out: Option<&Path>,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let batcher = UnpairedBatcher::new(domain_m.len(), domain_n.len(), config.seed)?;
    let size = config.image_size();
    for s in domain_m.iter().chain(domain_n) {
        if s.height() != size || s.width() != size {
            return Err(TrainError::Config(format!(
                "sample {} is {}×{}, expected {size}×{size}",
                s.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                s.height(),
                s.width()
            )));
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("samples")).map_err(io_err(dir))?;
    }
    let mut gan = CycleGan::new(config.clone())?;
    let mut history = Vec::new();
    let mut csv = match out {
        Some(dir) => {
            let p = dir.join(LOSS_CSV);
            let mut f = std::fs::File::create(&p).map_err(io_err(&p))?;
            writeln!(f, "{}", LossRecord::CSV_HEADER).map_err(io_err(&p))?;
            Some((f, p))
        }
        None => None,
    };
    let limit = config.max_steps.unwrap_or(usize::MAX);
    let mut last_epoch = 0;
    'epochs: for epoch in 0..config.epochs {
        last_epoch = epoch;
        for chunk in batcher.epoch(epoch).chunks(config.batch_size) {
            if gan.step >= limit {
                break 'epochs;
            }
            let ms: Vec<_> = chunk.iter().map(|p| &domain_m[p.0].data).collect();
            let ns: Vec<_> = chunk.iter().map(|p| &domain_n[p.1].data).collect();
            let rec = gan.train_step(&Tensor::stack(&ms)?, &Tensor::stack(&ns)?, epoch)?;
            if let Some((f, p)) = csv.as_mut() {
                writeln!(f, "{}", rec.to_csv_row()).map_err(io_err(p))?;
            }
            on_step(&rec);
            history.push(rec);
        }
        if let Some(dir) = out {
            let done = epoch + 1;
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
                gan.checkpoint(done).save(dir.join(format!("checkpoint_epoch{done:04}.fgan")))?;
            }
            if config.sample_every > 0 && done % config.sample_every == 0 {
                write_samples(&gan, domain_m, domain_n, &dir.join("samples"), done)?;
            }
        }
    }
    if let Some(dir) = out {
        gan.checkpoint(last_epoch + 1).save(dir.join(FINAL_CHECKPOINT))?;
        write_samples(&gan, domain_m, domain_n, &dir.join("samples"), last_epoch + 1)?;
    }
    Ok(TrainOutcome { model: gan, history })
}

fn write_samples(
    gan: &CycleGan,
    domain_m: &[ImageSample],
    domain_n: &[ImageSample],
    dir: &Path,
    epoch: usize,
) -> Result<(), TrainError> {
    for (from, to, set) in [(Domain::M, Domain::N, domain_m), (Domain::N, Domain::M, domain_n)] {
        let mut pairs = Vec::new();
        for s in set.iter().take(4) {
            let x = Tensor::stack(&[&s.data])?;
            let y = gan.translate(to, &x)?;
            let y = y.reshape(s.data.shape().to_vec())?;
            pairs.push((s.clone(), ImageSample::new(y)?));
        }
        let path = dir.join(format!("epoch{epoch:04}_{from}to{to}.png"));
        sample_grid(&pairs)
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| DataError::Encode {
                path: path.clone(),
                message: e.to_string(),
            })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lsgan_examples() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::new([2], vec![0.0, 1.0]).unwrap());
        let l = lsgan_loss(&mut g, s, true).unwrap();
        assert_eq!(g.value(l).item(), Some(0.5));
        let z = g.constant(Tensor::zeros([1, 1, 2, 2]).unwrap());
        let l = lsgan_loss(&mut g, z, false).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
    }

    #[test]
    fn l1_examples() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([3, 2, 2]).unwrap());
        let b = g.constant(Tensor::full([3, 2, 2], 0.5).unwrap());
        let ab = cycle_loss(&mut g, a, b).unwrap();
        let ba = cycle_loss(&mut g, b, a).unwrap();
        assert_eq!(g.value(ab).item(), Some(0.5));
        assert_eq!(g.value(ab).item(), g.value(ba).item());
        let neg = g.scale(b, -1.0).unwrap();
        let id = identity_loss(&mut g, neg, b).unwrap();
        assert_eq!(g.value(id).item(), Some(1.0));
    }

    #[test]
    fn buffer_fills_then_mixes() {
        let mut b = FakeImageBuffer::new(2, 0, 0);
        let t = |v: f32| Tensor::full([1], v).unwrap();
        assert_eq!(b.query(vec![t(1.0), t(2.0)]), vec![t(1.0), t(2.0)]);
        assert_eq!(b.len(), 2);
        let mut historical = 0;
        for i in 0..200 {
            let v = 10.0 + i as f32;
            if b.query(vec![t(v)])[0] != t(v) {
                historical += 1;
            }
        }
        assert!((60..140).contains(&historical), "{historical}");
        assert_eq!(b.len(), 2);
        let mut off = FakeImageBuffer::new(0, 0, 0);
        assert_eq!(off.query(vec![t(5.0)]), vec![t(5.0)]);
        assert!(off.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::toy().validate().is_ok());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::toy()
        };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        let bad = TrainConfig {
            lambda_cycle: -1.0,
            ..TrainConfig::toy()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loss_row_roundtrip() {
        let r = LossRecord {
            step: 3,
            epoch: 0,
            d_m: 0.1,
            d_n: 0.2,
            g_m: 1.0 / 3.0,
            g_n: 4.0,
            cycle_m: 5.5,
            cycle_n: 6.0,
            id_m: 7.0,
            id_n: 8.0,
        };
        assert_eq!(LossRecord::parse_csv_row(&r.to_csv_row()), Some(r));
    }
}
