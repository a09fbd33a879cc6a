//! Plain-text run configuration: `key = value` lines with `#` comments.

use std::collections::HashSet;
use std::fmt::Display;
use std::str::FromStr;

use fundus_core::data::DEFAULT_TEST_FRACTION;
use fundus_core::iqa::{NiqeConfig, PiqeConfig};
use fundus_core::trainer::{parse_activation, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Toy,
    Full,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}`: {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("line {line}: key `{key}` set twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub piqe: PiqeConfig,
    pub niqe: NiqeConfig,
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.parse().map_err(|e: T::Err| format!("cannot parse {v:?}: {e}"))
}

impl CliConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => CliConfig {
                train: TrainConfig::full(),
                test_fraction: DEFAULT_TEST_FRACTION,
                piqe: PiqeConfig::default(),
                niqe: NiqeConfig::default(),
            },
            Preset::Toy => CliConfig {
                train: TrainConfig::toy(),
                niqe: NiqeConfig {
                    patch_size: 16,
                    ..NiqeConfig::default()
                },
                ..Self::preset(Preset::Full)
            },
        }
    }

    /// Every key with its current value, in echo order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let filters: Vec<String> = t.discriminator.filters.iter().map(|f| f.to_string()).collect();
        let activation = match t.generator.activation {
            fundus_core::nn::Activation::Relu => "relu".to_string(),
            fundus_core::nn::Activation::Tanh => "tanh".to_string(),
            fundus_core::nn::Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
        };
        vec![
            ("seed", t.seed.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_steps", t.max_steps.map_or("none".into(), |s| s.to_string())),
            ("lr", t.adam.lr.to_string()),
            ("beta1", t.adam.beta1.to_string()),
            ("beta2", t.adam.beta2.to_string()),
            ("delta", t.adam.delta.to_string()),
            ("lambda_cycle", t.lambda_cycle.to_string()),
            ("lambda_identity", t.lambda_identity.to_string()),
            ("buffer_capacity", t.buffer_capacity.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("sample_every", t.sample_every.to_string()),
            ("image_size", t.generator.image_size.to_string()),
            ("base_filters", t.generator.base_filters.to_string()),
            ("n_res_blocks", t.generator.n_res_blocks.to_string()),
            ("activation", activation),
            ("disc_filters", filters.join(",")),
            ("disc_alpha", t.discriminator.alpha.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("mscn.half", self.piqe.mscn.half.to_string()),
            ("mscn.sigma", self.piqe.mscn.sigma.to_string()),
            ("mscn.epsilon", self.piqe.mscn.epsilon.to_string()),
            ("piqe.block_size", self.piqe.block_size.to_string()),
            ("piqe.activity_threshold", self.piqe.activity_threshold.to_string()),
            ("piqe.segment_length", self.piqe.segment_length.to_string()),
            ("piqe.edge_threshold", self.piqe.edge_threshold.to_string()),
            ("piqe.noise_ratio", self.piqe.noise_ratio.to_string()),
            ("niqe.patch_size", self.niqe.patch_size.to_string()),
            ("niqe.sharpness_fraction", self.niqe.sharpness_fraction.to_string()),
            ("niqe.ridge", self.niqe.ridge.to_string()),
            ("niqe.min_images", self.niqe.min_images.to_string()),
        ]
    }

    /// Sets one key. `Ok(false)` means the key is unknown.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool, String> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(v)?,
            "epochs" => t.epochs = parse(v)?,
            "batch_size" => t.batch_size = parse(v)?,
            "max_steps" => t.max_steps = if v == "none" { None } else { Some(parse(v)?) },
            "lr" => t.adam.lr = parse(v)?,
            "beta1" => t.adam.beta1 = parse(v)?,
            "beta2" => t.adam.beta2 = parse(v)?,
            "delta" => t.adam.delta = parse(v)?,
            "lambda_cycle" => t.lambda_cycle = parse(v)?,
            "lambda_identity" => t.lambda_identity = parse(v)?,
            "buffer_capacity" => t.buffer_capacity = parse(v)?,
            "checkpoint_every" => t.checkpoint_every = parse(v)?,
            "sample_every" => t.sample_every = parse(v)?,
            "image_size" => {
                t.generator.image_size = parse(v)?;
                t.discriminator.image_size = t.generator.image_size;
            }
            "base_filters" => t.generator.base_filters = parse(v)?,
            "n_res_blocks" => t.generator.n_res_blocks = parse(v)?,
            "activation" => {
                t.generator.activation =
                    parse_activation(v).ok_or_else(|| format!("expected relu, tanh or leaky_relu:<slope>, got {v:?}"))?
            }
            "disc_filters" => {
                t.discriminator.filters = v.split(',').map(|f| parse(f.trim())).collect::<Result<_, _>>()?
            }
            "disc_alpha" => t.discriminator.alpha = parse(v)?,
            "test_fraction" => self.test_fraction = parse(v)?,
            "mscn.half" => self.piqe.mscn.half = parse(v)?,
            "mscn.sigma" => self.piqe.mscn.sigma = parse(v)?,
            "mscn.epsilon" => self.piqe.mscn.epsilon = parse(v)?,
            "piqe.block_size" => self.piqe.block_size = parse(v)?,
            "piqe.activity_threshold" => self.piqe.activity_threshold = parse(v)?,
            "piqe.segment_length" => self.piqe.segment_length = parse(v)?,
            "piqe.edge_threshold" => self.piqe.edge_threshold = parse(v)?,
            "piqe.noise_ratio" => self.piqe.noise_ratio = parse(v)?,
            "niqe.patch_size" => self.niqe.patch_size = parse(v)?,
            "niqe.sharpness_fraction" => self.niqe.sharpness_fraction = parse(v)?,
            "niqe.ridge" => self.niqe.ridge = parse(v)?,
            "niqe.min_images" => self.niqe.min_images = parse(v)?,
            _ => return Ok(false),
        }
        self.niqe.mscn = self.piqe.mscn;
        Ok(true)
    }

    /// Applies a config file on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            let bad = |message: String| ConfigError::BadValue {
                line,
                key: key.to_string(),
                message,
            };
            match self.set(key, value) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
                Err(m) => return Err(bad(m)),
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(ConfigError::Invalid(format!("test_fraction {} outside [0, 1)", self.test_fraction)));
        }
        Ok(())
    }

    /// The effective configuration in the same format it is read from.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_reparses_to_the_same_config() {
        for p in [Preset::Toy, Preset::Full] {
            let c = CliConfig::preset(p);
            let mut other = CliConfig::preset(match p {
                Preset::Toy => Preset::Full,
                Preset::Full => Preset::Toy,
            });
            other.apply(&c.to_text()).unwrap();
            assert_eq!(other, c);
        }
    }

    #[test]
    fn comments_and_errors() {
        let mut c = CliConfig::preset(Preset::Toy);
        c.apply("# header\n\nseed = 42  # trailing\nmax_steps = none\ndisc_filters = 8, 16\n")
            .unwrap();
        assert_eq!(c.train.seed, 42);
        assert_eq!(c.train.max_steps, None);
        assert_eq!(c.train.discriminator.filters, vec![8, 16]);

        let err = c.clone().apply("seed = 1\nlearning_rate = 3\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 2,
                key: "learning_rate".into()
            }
        );
        assert!(err.to_string().contains("learning_rate"));
        assert!(matches!(c.clone().apply("lr = fast"), Err(ConfigError::BadValue { line: 1, .. })));
        assert!(matches!(c.clone().apply("seed 4"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(c.clone().apply("seed = 1\nseed = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
    }

    #[test]
    fn image_size_and_mscn_are_shared() {
        let mut c = CliConfig::preset(Preset::Full);
        c.apply("image_size = 48\nmscn.epsilon = 0.5").unwrap();
        assert_eq!(c.train.discriminator.image_size, 48);
        assert_eq!(c.niqe.mscn.epsilon, 0.5);
        assert!(c.validate().is_err());
    }
}
