use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fundus_core::checkpoint::{Checkpoint, CheckpointError};
use fundus_core::data::{list_images, load_image, load_split, resize_to, split_dataset, DataError, Domain, ImageSample, Split, MANIFEST_FILE};
use fundus_core::iqa::{
    fit_niqe_model, read_scores_csv, score_corpus, summarize, write_scores_csv, write_summary, IqaError, Luma, NiqeModel, ScoreRow,
};
use fundus_core::models::{build_generator, ModelError};
use fundus_core::synth::{synth_image, write_corpus};
use fundus_core::tensor::Tensor;
use fundus_core::trainer::{generator_config_from, sample_grid, train as run_training, LossRecord, TrainError, FINAL_CHECKPOINT};

use crate::config::{CliConfig, ConfigError};

pub const CONFIG_ECHO: &str = "config.txt";
pub const SCORES_CSV: &str = "scores.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const NIQE_MODEL: &str = "niqe_model.fgan";
pub const SERIES_CSV: &str = "series.csv";
pub const PAIRED_CSV: &str = "paired.csv";
pub const PAIRED_SUMMARY_CSV: &str = "paired_summary.csv";
pub const LOSS_SUMMARY_CSV: &str = "loss_summary.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Shape(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Shape(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(m) => m.into(),
            CheckpointError::MissingRole(_) => CliError::Shape(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<IqaError> for CliError {
    fn from(e: IqaError) -> Self {
        match e {
            IqaError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Optim(_) => CliError::Config(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Io { .. } => CliError::Data(e.to_string()),
            TrainError::Diverged(_) => CliError::Diverged(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Tensor(_) => CliError::Shape(e.to_string()),
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn echo_config(cfg: &CliConfig, out: &Path) -> Result<(), CliError> {
    let text = cfg.to_text();
    eprint!("effective configuration:\n{text}");
    write_file(&out.join(CONFIG_ECHO), &text)
}

pub fn train(cfg: &CliConfig, corpus: &Path, out: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    if !corpus.is_dir() {
        return Err(CliError::Data(format!("corpus directory {} not found", corpus.display())));
    }
    create_dir(out)?;
    echo_config(cfg, out)?;
    let t = &cfg.train;
    let manifest = split_dataset(corpus, t.seed, cfg.test_fraction)?;
    manifest.write(out.join(MANIFEST_FILE))?;
    let size = t.image_size();
    let m = load_split(corpus, &manifest, Domain::M, Split::Train, size)?;
    let n = load_split(corpus, &manifest, Domain::N, Split::Train, size)?;
    eprintln!(
        "training on {} + {} images ({} + {} held out)",
        m.len(),
        n.len(),
        manifest.count(Domain::M, Split::Test),
        manifest.count(Domain::N, Split::Test)
    );
    let outcome = run_training(t.clone(), &m, &n, Some(out), |r| {
        if r.step == 1 || r.step % 50 == 0 {
            eprintln!(
                "step {:>6} epoch {:>4}  D {:.4}/{:.4}  G {:.4}/{:.4}  cycle {:.4}  identity {:.4}",
                r.step,
                r.epoch,
                r.d_m,
                r.d_n,
                r.g_m,
                r.g_n,
                r.cycle(),
                r.identity()
            );
        }
    })?;
    eprintln!(
        "finished after {} steps; checkpoint {}",
        outcome.history.len(),
        out.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Direction {
    /// Artifacted to artifact-free.
    M2n,
    /// Artifact-free to artifacted.
    N2m,
}

pub fn infer(checkpoint: &Path, input: &Path, out: &Path, direction: Direction, resize: bool, grid: bool) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let gc = generator_config_from(&ck)
        .ok_or_else(|| CliError::Shape(format!("{} carries no generator architecture", checkpoint.display())))?;
    let role = match direction {
        Direction::M2n => "G_N",
        Direction::N2m => "G_M",
    };
    let mut gen = build_generator::<f32>(role, &gc, 0)?;
    ck.load_model(&mut gen)?;

    let files = if input.is_dir() {
        list_images(input)?
    } else if input.is_file() {
        vec![input.to_path_buf()]
    } else {
        return Err(CliError::Data(format!("{} not found", input.display())));
    };
    create_dir(out)?;
    if grid {
        create_dir(&out.join("grids"))?;
    }
    let size = gc.image_size;
    for path in &files {
        let mut x = load_image(path)?;
        if (x.height(), x.width()) != (size, size) {
            if !resize {
                return Err(CliError::Shape(format!(
                    "{} is {}×{} but the checkpoint expects {size}×{size} (pass --resize)",
                    path.display(),
                    x.height(),
                    x.width()
                )));
            }
            x = resize_to(&x, size);
        }
        let y = gen.infer(&Tensor::stack(&[&x.data]).map_err(|e| CliError::Shape(e.to_string()))?)?;
        let y = ImageSample::new(y.reshape(x.data.shape().to_vec()).map_err(|e| CliError::Shape(e.to_string()))?)?;
        let name = PathBuf::from(path.file_stem().unwrap_or_default()).with_extension("png");
        y.save_png(out.join(&name))?;
        if grid {
            let p = out.join("grids").join(&name);
            sample_grid(&[(x, y)])
                .save_with_format(&p, image::ImageFormat::Png)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        }
    }
    eprintln!("translated {} image(s) into {}", files.len(), out.display());
    Ok(())
}

/// Parses `name=dir`; a bare directory is grouped under its own name.
pub fn parse_group(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((g, d)) if !g.is_empty() && !d.is_empty() => Ok((g.to_string(), PathBuf::from(d))),
        Some(_) => Err(format!("expected NAME=DIR, got {s:?}")),
        None => {
            let p = PathBuf::from(s);
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .ok_or_else(|| format!("cannot name the group for {s:?}"))?;
            Ok((name, p))
        }
    }
}

fn load_luma(dir: &Path, resize: Option<usize>) -> Result<Vec<Luma>, CliError> {
    list_images(dir)?
        .iter()
        .map(|p| {
            let s = load_image(p)?;
            Ok(Luma::from_sample(&resize.map_or(s.clone(), |n| resize_to(&s, n))))
        })
        .collect()
}

pub struct ScoreArgs<'a> {
    pub groups: &'a [(String, PathBuf)],
    pub niqe_model: Option<&'a Path>,
    pub fit_corpus: Option<&'a Path>,
    pub resize: Option<usize>,
    pub out: &'a Path,
}

pub fn score(cfg: &CliConfig, args: &ScoreArgs) -> Result<(), CliError> {
    create_dir(args.out)?;
    echo_config(cfg, args.out)?;
    let model = match (args.niqe_model, args.fit_corpus) {
        (Some(p), _) => NiqeModel::load(p)?,
        (None, Some(dir)) => {
            let imgs = load_luma(dir, args.resize)?;
            let model = fit_niqe_model(&imgs, &cfg.niqe)?;
            let p = args.out.join(NIQE_MODEL);
            model.save(&p)?;
            eprintln!("fitted NIQE model on {} images ({} patches): {}", imgs.len(), model.patches, p.display());
            model
        }
        (None, None) => return Err(CliError::Config("score needs --niqe-model or --fit-corpus".into())),
    };
    let mut items = Vec::new();
    for (group, dir) in args.groups {
        for p in list_images(dir)? {
            items.push((p, group.clone()));
        }
    }
    let rows = score_corpus(&items, Some(&model), &cfg.piqe, args.resize);
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("{}: {}", r.image, r.error.as_deref().unwrap_or(""));
    }
    write_scores_csv(&rows, &args.out.join(SCORES_CSV))?;
    let summary = summarize(&rows);
    write_summary(&summary, &args.out.join(SUMMARY_CSV))?;
    for s in &summary {
        println!(
            "{:<12} n={:<5} NIQE mean {}  PIQE mean {}",
            s.group,
            s.count,
            s.niqe_mean.map_or("-".into(), |v| format!("{v:.4}")),
            s.piqe_mean.map_or("-".into(), |v| format!("{v:.2}"))
        );
    }
    if !rows.is_empty() && rows.iter().all(|r| r.error.is_some()) {
        return Err(CliError::Data("no image could be scored".into()));
    }
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    read_scores_csv(path).map_err(|(line, m)| CliError::Config(format!("{} line {line}: {m}", path.display())))
}

fn read_losses(path: &Path) -> Result<Vec<LossRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LossRecord::CSV_HEADER => {}
        None => return Ok(Vec::new()),
        Some(_) => {
            return Err(CliError::Config(format!(
                "{} line 1: expected header {}",
                path.display(),
                LossRecord::CSV_HEADER
            )))
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            LossRecord::parse_csv_row(l)
                .ok_or_else(|| CliError::Config(format!("{} line {}: malformed loss row", path.display(), i + 1)))
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn file_key(image: &str) -> String {
    Path::new(image)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| image.to_string())
}

/// Pairs rows of the two groups by file name, in the order of `before`.
pub fn pair_rows<'a>(rows: &'a [ScoreRow], before: &str, after: &str) -> Vec<(&'a ScoreRow, &'a ScoreRow)> {
    let mut later: BTreeMap<String, &ScoreRow> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.group == after) {
        later.entry(file_key(&r.image)).or_insert(r);
    }
    rows.iter()
        .filter(|r| r.group == before)
        .filter_map(|r| later.get(&file_key(&r.image)).map(|o| (r, *o)))
        .collect()
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

pub fn report(losses: Option<&Path>, scores: Option<&Path>, pair: (&str, &str), out: &Path) -> Result<(), CliError> {
    if losses.is_none() && scores.is_none() {
        return Err(CliError::Config("report needs --losses and/or --scores".into()));
    }
    let loss_rows = losses.map(read_losses).transpose()?;
    let score_rows = scores.map(read_scores).transpose()?;
    create_dir(out)?;

    if let Some(rows) = &score_rows {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        let series = rows.iter().map(|r| {
            let i = index.entry(&r.group).or_insert(0);
            *i += 1;
            vec![(*i - 1).to_string(), r.image.clone(), r.group.clone(), fmt(r.niqe), fmt(r.piqe)]
        });
        write_rows(&out.join(SERIES_CSV), &["index", "image", "group", "niqe", "piqe"], series.collect::<Vec<_>>())?;
        write_summary(&summarize(rows), &out.join(SUMMARY_CSV))?;

        let pairs = pair_rows(rows, pair.0, pair.1);
        write_rows(
            &out.join(PAIRED_CSV),
            &[
                "name",
                "before",
                "after",
                "niqe_before",
                "niqe_after",
                "niqe_delta",
                "piqe_before",
                "piqe_after",
                "piqe_delta",
            ],
            pairs.iter().map(|(a, b)| {
                vec![
                    file_key(&a.image),
                    a.image.clone(),
                    b.image.clone(),
                    fmt(a.niqe),
                    fmt(b.niqe),
                    fmt(delta(a.niqe, b.niqe)),
                    fmt(a.piqe),
                    fmt(b.piqe),
                    fmt(delta(a.piqe, b.piqe)),
                ]
            }),
        )?;
        let metric_row = |name: &str, f: fn(&ScoreRow) -> Option<f64>| {
            let mut d: Vec<f64> = pairs.iter().filter_map(|(a, b)| delta(f(a), f(b))).collect();
            d.sort_by(f64::total_cmp);
            let n = d.len();
            let mean = (n > 0).then(|| d.iter().sum::<f64>() / n as f64);
            let median = (n > 0).then(|| if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / 2.0 });
            let improved = d.iter().filter(|&&x| x < 0.0).count();
            vec![name.to_string(), n.to_string(), fmt(mean), fmt(median), improved.to_string()]
        };
        write_rows(
            &out.join(PAIRED_SUMMARY_CSV),
            &["metric", "pairs", "mean_delta", "median_delta", "improved"],
            [metric_row("niqe", |r| r.niqe), metric_row("piqe", |r| r.piqe)],
        )?;
        eprintln!("{} scored images, {} pairs ({} → {})", rows.len(), pairs.len(), pair.0, pair.1);
    }

    if let Some(rows) = &loss_rows {
        let mut epochs: BTreeMap<usize, Vec<&LossRecord>> = BTreeMap::new();
        for r in rows {
            epochs.entry(r.epoch).or_default().push(r);
        }
        let body = epochs.iter().map(|(e, rs)| {
            let mut v = vec![e.to_string(), rs.len().to_string()];
            for k in 0..8 {
                v.push(format!("{:.6}", rs.iter().map(|r| r.losses()[k]).sum::<f64>() / rs.len() as f64));
            }
            v
        });
        write_rows(
            &out.join(LOSS_SUMMARY_CSV),
            &["epoch", "steps", "d_m", "d_n", "g_m", "g_n", "cycle_m", "cycle_n", "id_m", "id_n"],
            body.collect::<Vec<_>>(),
        )?;
        eprintln!("{} loss rows over {} epochs", rows.len(), epochs.len());
    }
    Ok(())
}

/// Writes a synthetic two-domain corpus plus held-out artifacted images
/// and their clean references.
pub fn synth(out: &Path, count: usize, held_out: usize, size: usize, seed: u64) -> Result<(), CliError> {
    if size == 0 || count == 0 {
        return Err(CliError::Config("count and size must be positive".into()));
    }
    let written = write_corpus(out, count, size, seed)?;
    let (a, c) = (out.join("held_out"), out.join("held_out_clean"));
    if held_out > 0 {
        create_dir(&a)?;
        create_dir(&c)?;
    }
    for i in 0..held_out {
        let s = synth_image(seed, 10_000 + i as u64, size);
        let name = format!("test_{i:04}.png");
        s.artifacted.save_png(a.join(&name))?;
        s.clean.save_png(c.join(&name))?;
    }
    eprintln!("wrote {} corpus images and {held_out} held-out pairs under {}", written.len(), out.display());
    Ok(())
}
