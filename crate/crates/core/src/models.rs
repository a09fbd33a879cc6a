//! ResNet generator and patch discriminator graphs.
//!
//! A [`ModelGraph`] is an ordered list of [`Layer`]s plus the named
//! parameters they read. Parameters live outside any tape; each forward
//! pass binds them onto a [`Graph`] through [`ModelGraph::bind`], either as
//! trainable leaves or as constants.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::{residual_block, Activation, NormMode, NormState, ResidualBlockParams, LEAKY_SLOPE};
use crate::params::ParamStore;
use crate::tensor::{Graph, PaddingMode, Scalar, Tensor, TensorError, Var};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("{role}: input extent {extent} on axis {axis} is not a multiple of {multiple}")]
    InputSize {
        role: String,
        axis: usize,
        extent: usize,
        multiple: usize,
    },
    #[error("{role}: expected {expected} input channels, got {got}")]
    InputChannels {
        role: String,
        expected: usize,
        got: usize,
    },
    #[error("{role}: parameter {name:?} has shape {found:?} in the checkpoint, model expects {expected:?}")]
    ShapeMismatch {
        role: String,
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{role}: parameter {name:?} is missing from the checkpoint")]
    MissingParam { role: String, name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        mode: PaddingMode,
        bias: bool,
    },
    ConvTranspose {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        bias: bool,
    },
    /// Zero padding `[top, bottom, left, right]`.
    ZeroPad([usize; 4]),
    Norm(NormMode),
    Act(Activation),
    Residual {
        name: String,
        channels: usize,
        activation: Activation,
    },
}

impl Layer {
    /// `(name, shape)` of every parameter the layer owns, in init order.
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Layer::Conv {
                name,
                in_ch,
                out_ch,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![(format!("{name}.weight"), vec![*out_ch, *in_ch, *kernel, *kernel])];
                if *bias {
                    v.push((format!("{name}.bias"), vec![*out_ch]));
                }
                v
            }
            Layer::ConvTranspose {
                name,
                in_ch,
                out_ch,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![(format!("{name}.weight"), vec![*in_ch, *out_ch, *kernel, *kernel])];
                if *bias {
                    v.push((format!("{name}.bias"), vec![*out_ch]));
                }
                v
            }
            Layer::Residual { name, channels, .. } => (1..=2)
                .map(|i| (format!("{name}.conv{i}.weight"), vec![*channels, *channels, 3, 3]))
                .collect(),
            Layer::ZeroPad(_) | Layer::Norm(_) | Layer::Act(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub input_channels: usize,
    pub base_filters: usize,
    pub n_res_blocks: usize,
    pub image_size: usize,
    /// Activation after the encoder and decoder convolutions.
    pub activation: Activation,
}

impl GeneratorConfig {
    /// 256×256 input, 64/128/256 filters, nine residual blocks.
    pub fn full() -> Self {
        GeneratorConfig {
            input_channels: 3,
            base_filters: 64,
            n_res_blocks: 9,
            image_size: 256,
            activation: Activation::LeakyRelu(LEAKY_SLOPE),
        }
    }

    pub fn toy() -> Self {
        GeneratorConfig {
            base_filters: 32,
            n_res_blocks: 3,
            image_size: 32,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "generator image_size {} must be a positive multiple of 4",
                self.image_size
            )));
        }
        if self.n_res_blocks == 0 {
            return Err(ModelError::InvalidConfig("n_res_blocks must be at least 1".into()));
        }
        if self.base_filters == 0 || self.input_channels == 0 {
            return Err(ModelError::InvalidConfig("channel counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub input_channels: usize,
    /// Output channels of each stride-2 stage.
    pub filters: Vec<usize>,
    pub alpha: f64,
    pub image_size: usize,
}

impl DiscriminatorConfig {
    /// Five stride-2 stages of 64, 128, 256, 512 and 512 filters.
    pub fn full() -> Self {
        DiscriminatorConfig {
            input_channels: 3,
            filters: vec![64, 128, 256, 512, 512],
            alpha: LEAKY_SLOPE,
            image_size: 256,
        }
    }

    pub fn toy() -> Self {
        DiscriminatorConfig {
            filters: vec![32, 64, 128],
            image_size: 32,
            ..Self::full()
        }
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.filters.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.filters.is_empty() || self.filters.contains(&0) {
            return Err(ModelError::InvalidConfig(
                "discriminator needs at least one stage with positive filters".into(),
            ));
        }
        let f = self.downsample_factor();
        if self.image_size == 0 || self.image_size % f != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "discriminator image_size {} must be a positive multiple of {f}",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// An ordered layer composition with its named parameters.
#[derive(Debug, Clone)]
pub struct ModelGraph<T> {
    /// Role tag, also the prefix of every bound parameter name.
    pub role: String,
    pub layers: Vec<Layer>,
    pub params: ParamStore<T>,
    input_channels: usize,
    input_multiple: usize,
}

/// Parameters of one model bound onto a specific graph.
pub struct BoundModel<'m, T> {
    model: &'m ModelGraph<T>,
    vars: HashMap<String, Var>,
}

impl<T: Scalar> ModelGraph<T> {
    fn from_layers(
        role: &str,
        layers: Vec<Layer>,
        input_channels: usize,
        input_multiple: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamStore::new();
        for layer in &layers {
            for (name, shape) in layer.param_shapes() {
                let t = if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else {
                    Tensor::from_fn(shape, |_| T::from_f64_lossy(normal.sample(&mut rng)))
                }
                .expect("layer shapes are non-empty");
                params.insert(name, t);
            }
        }
        ModelGraph {
            role: role.to_string(),
            layers,
            params,
            input_channels,
            input_multiple,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Binds every parameter onto `g`. Trainable bindings are named
    /// `"{role}/{name}"` and receive gradients; frozen ones are constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<BoundModel<'_, T>, ModelError> {
        let mut vars = HashMap::with_capacity(self.params.len());
        for (name, t) in self.params.iter() {
            let v = if trainable {
                g.param(format!("{}/{name}", self.role), t.clone())?
            } else {
                g.constant(t.clone())
            };
            vars.insert(name.to_string(), v);
        }
        Ok(BoundModel { model: self, vars })
    }

    /// Convenience single-use forward pass with frozen parameters.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var, ModelError> {
        self.bind(g, false)?.forward(g, x)
    }

    /// Runs the model on a standalone batch, returning the output values.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    /// Replaces parameters with `"{role}/{name}"` entries from `tensors`,
    /// checking every shape before changing anything.
    pub fn load_params(&mut self, tensors: &ParamStore<T>) -> Result<(), ModelError> {
        for (name, current) in self.params.iter() {
            let key = format!("{}/{name}", self.role);
            let found = tensors.get(&key).ok_or_else(|| ModelError::MissingParam {
                role: self.role.clone(),
                name: name.to_string(),
            })?;
            if found.shape() != current.shape() {
                return Err(ModelError::ShapeMismatch {
                    role: self.role.clone(),
                    name: name.to_string(),
                    expected: current.shape().to_vec(),
                    found: found.shape().to_vec(),
                });
            }
        }
        let role = self.role.clone();
        for (name, current) in self.params.iter_mut() {
            *current = tensors.get(&format!("{role}/{name}")).expect("checked").clone();
        }
        Ok(())
    }

    /// Parameters keyed as `"{role}/{name}"`.
    pub fn prefixed_params(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in self.params.iter() {
            out.insert(format!("{}/{name}", self.role), t.clone());
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            role: self.role.clone(),
            layers: self.layers.clone(),
            params: self.params.cast(),
            input_channels: self.input_channels,
            input_multiple: self.input_multiple,
        }
    }
}

impl<T: Scalar> BoundModel<'_, T> {
    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var, ModelError> {
        let m = self.model;
        let [_, c, h, w] = g.value(x).dims4("model input")?;
        if c != m.input_channels {
            return Err(ModelError::InputChannels {
                role: m.role.clone(),
                expected: m.input_channels,
                got: c,
            });
        }
        for (axis, extent) in [(2, h), (3, w)] {
            if extent % m.input_multiple != 0 {
                return Err(ModelError::InputSize {
                    role: m.role.clone(),
                    axis,
                    extent,
                    multiple: m.input_multiple,
                });
            }
        }
        let mut h = x;
        for layer in &m.layers {
            h = match layer {
                Layer::Conv {
                    name,
                    stride,
                    padding,
                    mode,
                    bias,
                    ..
                } => {
                    let w = self.vars[&format!("{name}.weight")];
                    let b = bias.then(|| self.vars[&format!("{name}.bias")]);
                    g.conv2d(h, w, b, (*stride, *stride), (*padding, *padding), *mode)?
                }
                Layer::ConvTranspose {
                    name,
                    stride,
                    padding,
                    output_padding,
                    bias,
                    ..
                } => {
                    let w = self.vars[&format!("{name}.weight")];
                    let b = bias.then(|| self.vars[&format!("{name}.bias")]);
                    g.conv_transpose2d(
                        h,
                        w,
                        b,
                        (*stride, *stride),
                        (*padding, *padding),
                        (*output_padding, *output_padding),
                    )?
                }
                Layer::ZeroPad(pads) => g.zero_pad(h, *pads)?,
                Layer::Norm(NormMode::Instance) => NormState::<T>::instance().apply(g, h)?,
                Layer::Norm(NormMode::Batch) => NormState::<T>::batch().apply(g, h)?,
                Layer::Act(a) => a.apply(g, h)?,
                Layer::Residual {
                    name,
                    channels,
                    activation,
                } => {
                    let c1 = self.vars[&format!("{name}.conv1.weight")];
                    let c2 = self.vars[&format!("{name}.conv2.weight")];
                    let mut p = ResidualBlockParams::new(g, *channels, c1, c2)?;
                    p.activation = *activation;
                    residual_block(g, h, &p)?
                }
            };
        }
        Ok(h)
    }
}

/// Encoder (7×7 then two stride-2 3×3 convolutions), residual blocks, two
/// stride-2 transposed convolutions and a tanh-headed 7×7 convolution fed
/// directly by the last instance norm. Convolutions followed by instance
/// normalization carry no bias.
pub fn build_generator<T: Scalar>(
    role: &str,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<ModelGraph<T>, ModelError> {
    cfg.validate()?;
    let f = cfg.base_filters;
    let act = cfg.activation;
    let mut layers = Vec::new();
    let conv = |name: &str, i, o, k, s, p, mode, bias| Layer::Conv {
        name: name.into(),
        in_ch: i,
        out_ch: o,
        kernel: k,
        stride: s,
        padding: p,
        mode,
        bias,
    };
    layers.push(conv("enc0", cfg.input_channels, f, 7, 1, 3, PaddingMode::Reflect, false));
    layers.extend([Layer::Norm(NormMode::Instance), Layer::Act(act)]);
    layers.push(conv("enc1", f, 2 * f, 3, 2, 1, PaddingMode::Zero, false));
    layers.extend([Layer::Norm(NormMode::Instance), Layer::Act(act)]);
    layers.push(conv("enc2", 2 * f, 4 * f, 3, 2, 1, PaddingMode::Zero, false));
    layers.extend([Layer::Norm(NormMode::Instance), Layer::Act(act)]);
    for i in 0..cfg.n_res_blocks {
        layers.push(Layer::Residual {
            name: format!("res{i}"),
            channels: 4 * f,
            activation: Activation::Relu,
        });
    }
    for (i, (cin, cout)) in [(4 * f, 2 * f), (2 * f, f)].into_iter().enumerate() {
        layers.push(Layer::ConvTranspose {
            name: format!("dec{i}"),
            in_ch: cin,
            out_ch: cout,
            kernel: 3,
            stride: 2,
            padding: 1,
            output_padding: 1,
            bias: false,
        });
        layers.push(Layer::Norm(NormMode::Instance));
        if i == 0 {
            layers.push(Layer::Act(act));
        }
    }
    layers.push(conv("head", f, cfg.input_channels, 7, 1, 3, PaddingMode::Reflect, true));
    layers.push(Layer::Act(Activation::Tanh));
    Ok(ModelGraph::from_layers(role, layers, cfg.input_channels, 4, seed))
}

/// Stride-2 4×4 convolution stages with LeakyReLU (instance norm from the
/// second stage on), then a one-filter 4×4 stride-1 head. The head pads one
/// row/column before and two after, so the score map keeps the extent of
/// the last stage. No sigmoid.
pub fn build_discriminator<T: Scalar>(
    role: &str,
    cfg: &DiscriminatorConfig,
    seed: u64,
) -> Result<ModelGraph<T>, ModelError> {
    cfg.validate()?;
    let mut layers = Vec::new();
    let mut cin = cfg.input_channels;
    for (i, &cout) in cfg.filters.iter().enumerate() {
        layers.push(Layer::Conv {
            name: format!("stage{i}"),
            in_ch: cin,
            out_ch: cout,
            kernel: 4,
            stride: 2,
            padding: 1,
            mode: PaddingMode::Zero,
            bias: i == 0,
        });
        if i > 0 {
            layers.push(Layer::Norm(NormMode::Instance));
        }
        layers.push(Layer::Act(Activation::LeakyRelu(cfg.alpha)));
        cin = cout;
    }
    layers.push(Layer::ZeroPad([1, 2, 1, 2]));
    layers.push(Layer::Conv {
        name: "head".into(),
        in_ch: cin,
        out_ch: 1,
        kernel: 4,
        stride: 1,
        padding: 0,
        mode: PaddingMode::Zero,
        bias: true,
    });
    Ok(ModelGraph::from_layers(
        role,
        layers,
        cfg.input_channels,
        cfg.downsample_factor(),
        seed,
    ))
}
