use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use commands::{CliError, Direction, ScoreArgs};
use config::{CliConfig, Preset};

#[derive(Parser)]
#[command(name = "fundus-gan", version, about = "Unpaired flare and vignette removal for fundus photographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    /// Overrides the seed from the preset and config file.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<CliConfig, CliError> {
        let mut cfg = CliConfig::preset(self.preset);
        if let Some(p) = &self.config {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            cfg.apply(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train both generators and discriminators on a two-folder corpus.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding `with_artifact/` and `artifact_free/`.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate an image or every image in a directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Direction::M2n)]
        direction: Direction,
        /// Resize inputs to the checkpoint's image size instead of rejecting them.
        #[arg(long)]
        resize: bool,
        /// Also write input/output side-by-side grids.
        #[arg(long)]
        grid: bool,
    },
    /// Score image directories with NIQE and PIQE.
    Score {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `NAME=DIR`, repeatable; a bare DIR is grouped under its own name.
        #[arg(long = "images", required = true, value_parser = commands::parse_group)]
        images: Vec<(String, PathBuf)>,
        #[arg(long, conflicts_with = "fit_corpus")]
        niqe_model: Option<PathBuf>,
        /// Fit a NIQE model on these clean images and save it to the out dir.
        #[arg(long)]
        fit_corpus: Option<PathBuf>,
        /// Resize every image to this size before scoring.
        #[arg(long)]
        resize: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn loss and score CSVs into plot-ready series and summary tables.
    Report {
        #[arg(long)]
        losses: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Groups compared by the paired deltas, as BEFORE,AFTER.
        #[arg(long, default_value = "input,output")]
        pair: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus for demos and smoke tests.
    Synth {
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 20)]
        held_out: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { cfg, corpus, out } => commands::train(&cfg.load()?, &corpus, &out),
        Command::Infer {
            checkpoint,
            input,
            out,
            direction,
            resize,
            grid,
        } => commands::infer(&checkpoint, &input, &out, direction, resize, grid),
        Command::Score {
            cfg,
            images,
            niqe_model,
            fit_corpus,
            resize,
            out,
        } => commands::score(
            &cfg.load()?,
            &ScoreArgs {
                groups: &images,
                niqe_model: niqe_model.as_deref(),
                fit_corpus: fit_corpus.as_deref(),
                resize,
                out: &out,
            },
        ),
        Command::Report { losses, scores, pair, out } => {
            let (before, after) = pair
                .split_once(',')
                .ok_or_else(|| CliError::Config(format!("--pair expects BEFORE,AFTER, got {pair:?}")))?;
            commands::report(losses.as_deref(), scores.as_deref(), (before, after), &out)
        }
        Command::Synth {
            count,
            held_out,
            size,
            seed,
            out,
        } => commands::synth(&out, count, held_out, size, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
