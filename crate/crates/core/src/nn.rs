//! Activations, batch/instance normalization and the residual block.

use crate::tensor::NormAxes;
use crate::tensor::{Graph, PaddingMode, Result, Scalar, TensorError, Var};

/// Slope of the negative branch used by the discriminators.
pub const LEAKY_SLOPE: f64 = 0.325;

/// Stabilizing constant added to the variance in both norm layers.
pub const NORM_DELTA: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    Batch,
    Instance,
}

/// Learned per-channel scale and shift applied after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub gamma: Var,
    pub beta: Var,
}

/// Configuration of one normalization layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormState<T> {
    pub mode: NormMode,
    pub delta: T,
    /// `None` fixes γ = 1, β = 0.
    pub affine: Option<Affine>,
}

impl<T: Scalar> NormState<T> {
    pub fn instance() -> Self {
        NormState {
            mode: NormMode::Instance,
            delta: T::from_f64_lossy(NORM_DELTA),
            affine: None,
        }
    }

    pub fn batch() -> Self {
        NormState {
            mode: NormMode::Batch,
            delta: T::from_f64_lossy(NORM_DELTA),
            affine: None,
        }
    }

    pub fn with_delta(self, delta: T) -> Self {
        NormState { delta, ..self }
    }

    pub fn with_affine(self, affine: Affine) -> Self {
        NormState {
            affine: Some(affine),
            ..self
        }
    }

    pub fn apply(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let axes = match self.mode {
            NormMode::Batch => NormAxes::Batch,
            NormMode::Instance => NormAxes::Instance,
        };
        let xhat = g.normalize(x, axes, self.delta)?;
        match self.affine {
            Some(Affine { gamma, beta }) => g.channel_affine(xhat, gamma, beta),
            None => Ok(xhat),
        }
    }
}

/// `x` for `x ≥ 0`, `alpha·x` otherwise.
pub fn leaky_relu<T: Scalar>(g: &mut Graph<T>, x: Var, alpha: T) -> Result<Var> {
    g.leaky_relu(x, alpha)
}

pub fn relu<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.leaky_relu(x, T::zero())
}

pub fn tanh_act<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.tanh(x)
}

/// Per-channel statistics over (batch, height, width), population variance.
pub fn batch_norm<T: Scalar>(g: &mut Graph<T>, x: Var, delta: T, affine: Option<Affine>) -> Result<Var> {
    NormState {
        mode: NormMode::Batch,
        delta,
        affine,
    }
    .apply(g, x)
}

/// Per-(sample, channel) statistics over the spatial grid only.
pub fn instance_norm<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    delta: T,
    affine: Option<Affine>,
) -> Result<Var> {
    NormState {
        mode: NormMode::Instance,
        delta,
        affine,
    }
    .apply(g, x)
}

/// Activation used between layers of a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => relu(g, x),
            Activation::LeakyRelu(a) => leaky_relu(g, x, T::from_f64_lossy(a)),
            Activation::Tanh => tanh_act(g, x),
        }
    }
}

/// Weights of one residual block: two `c × c × 3 × 3` stride-1 convolutions,
/// each followed by its own normalization.
#[derive(Debug, Clone, Copy)]
pub struct ResidualBlockParams<T> {
    pub channels: usize,
    pub conv1: Var,
    pub conv2: Var,
    pub norm1: NormState<T>,
    pub norm2: NormState<T>,
    pub padding: PaddingMode,
    pub activation: Activation,
}

impl<T: Scalar> ResidualBlockParams<T> {
    /// Checks both kernels are `c → c` so the skip addition is shape-legal.
    pub fn new(g: &Graph<T>, channels: usize, conv1: Var, conv2: Var) -> Result<Self> {
        for w in [conv1, conv2] {
            let [o, i, kh, kw] = g.value(w).dims4("residual_block")?;
            for (axis, name, got, want) in [
                (0, "out_channels", o, channels),
                (1, "in_channels", i, channels),
                (2, "kernel_h", kh, 3),
                (3, "kernel_w", kw, 3),
            ] {
                if got != want {
                    return Err(TensorError::AxisMismatch {
                        op: "residual_block",
                        axis,
                        axis_name: name,
                        expected: want,
                        got,
                    });
                }
            }
        }
        Ok(ResidualBlockParams {
            channels,
            conv1,
            conv2,
            norm1: NormState::instance(),
            norm2: NormState::instance(),
            padding: PaddingMode::Reflect,
            activation: Activation::Relu,
        })
    }
}

/// `x + F(x)` with `F = conv → norm → act → conv → norm`; the shortcut is
/// the identity.
pub fn residual_block<T: Scalar>(g: &mut Graph<T>, x: Var, p: &ResidualBlockParams<T>) -> Result<Var> {
    let [_, c, _, _] = g.value(x).dims4("residual_block")?;
    if c != p.channels {
        return Err(TensorError::AxisMismatch {
            op: "residual_block",
            axis: 1,
            axis_name: "channels",
            expected: p.channels,
            got: c,
        });
    }
    let h = g.conv2d(x, p.conv1, None, (1, 1), (1, 1), p.padding)?;
    let h = p.norm1.apply(g, h)?;
    let h = p.activation.apply(g, h)?;
    let h = g.conv2d(h, p.conv2, None, (1, 1), (1, 1), p.padding)?;
    let h = p.norm2.apply(g, h)?;
    g.add(x, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_branches() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[2.0, -2.0, -3.0]));
        let y = leaky_relu(&mut g, x, 0.325).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, -0.65, -0.325 * 3.0]);
        let r = relu(&mut g, x).unwrap();
        assert_eq!(g.value(r).data(), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn tanh_bounds_and_slope() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[3], &[0.0, 100.0, -100.0]));
        let y = tanh_act(&mut g, x).unwrap();
        let v = g.value(y).data().to_vec();
        assert_eq!(v[0], 0.0);
        assert!(v[1] <= 1.0 && v[1] > 0.999);
        assert!(v[2] >= -1.0);
        let s = g.sum(y, None).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data()[0], 1.0);
    }

    #[test]
    fn batch_norm_two_samples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 1, 1, 1], &[0.0, 2.0]));
        let y = batch_norm(&mut g, x, 1e-12, None).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);

        let gamma = g.constant(t(&[1], &[2.0]));
        let beta = g.constant(t(&[1], &[1.0]));
        let z = g.channel_affine(y, gamma, beta).unwrap();
        let v = g.value(z).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[5.0; 4]));
        let a = instance_norm(&mut g, x, 1e-5, None).unwrap();
        let b = batch_norm(&mut g, x, 1e-5, None).unwrap();
        assert_eq!(g.value(a).data(), &[0.0; 4]);
        assert_eq!(g.value(b).data(), &[0.0; 4]);
    }

    #[test]
    fn instance_norm_pair() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 1, 2], &[1.0, 3.0]));
        let y = instance_norm(&mut g, x, 1e-12, None).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn instance_norm_is_per_sample() {
        let a = [1.0, 4.0, -2.0, 0.5];
        let b = [10.0, 10.5, 9.0, 7.0];
        let run = |first: &[f64], second: &[f64]| {
            let mut g = Graph::<f64>::new();
            let mut d = first.to_vec();
            d.extend_from_slice(second);
            let x = g.constant(t(&[2, 1, 2, 2], &d));
            let y = instance_norm(&mut g, x, 1e-5, None).unwrap();
            g.value(y).data().to_vec()
        };
        let ab = run(&a, &b);
        let ba = run(&b, &a);
        assert_eq!(&ab[..4], &ba[4..]);
        assert_eq!(&ab[4..], &ba[..4]);
    }

    #[test]
    fn residual_block_with_zero_weights_is_identity() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..2 * 4 * 4).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = g.variable(t(&[1, 2, 4, 4], &data));
        let w1 = g.variable(Tensor::zeros([2, 2, 3, 3]).unwrap());
        let w2 = g.variable(Tensor::zeros([2, 2, 3, 3]).unwrap());
        let p = ResidualBlockParams::new(&g, 2, w1, w2).unwrap();
        let y = residual_block(&mut g, x, &p).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);

        let up: Vec<f64> = (0..32).map(|i| i as f64 - 10.0).collect();
        let up_t = g.constant(t(&[1, 2, 4, 4], &up));
        let prod = g.mul(y, up_t).unwrap();
        let loss = g.sum(prod, None).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &up[..]);
    }

    #[test]
    fn residual_block_channel_checks() {
        let mut g = Graph::<f64>::new();
        let w1 = g.variable(Tensor::zeros([2, 2, 3, 3]).unwrap());
        let w_bad = g.variable(Tensor::zeros([3, 2, 3, 3]).unwrap());
        assert!(ResidualBlockParams::new(&g, 2, w1, w_bad).is_err());
        let p = ResidualBlockParams::new(&g, 2, w1, w1).unwrap();
        let x = g.constant(Tensor::zeros([1, 3, 4, 4]).unwrap());
        assert!(matches!(
            residual_block(&mut g, x, &p),
            Err(TensorError::AxisMismatch { axis: 1, .. })
        ));
    }
}
