use std::collections::{BTreeMap, HashSet};

use super::conv::{
    conv2d_backward, conv2d_forward, conv_output_hw, conv_transpose2d_backward,
    conv_transpose2d_forward, conv_transpose_out_extent, ConvGeometry, ConvShapes, PaddingMode,
};
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NormAxes {
    /// Statistics per (sample, channel) over the spatial grid.
    Instance,
    /// Statistics per channel over (batch, spatial).
    Batch,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Reduce {
        input: Var,
        mean: bool,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    LeakyRelu(Var, T),
    Tanh(Var),
    ZeroPad {
        input: Var,
        pads: [usize; 4],
    },
    Normalize {
        input: Var,
        axes: NormAxes,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        input: Var,
        gamma: Var,
        beta: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A gradient tape: every operation appends one node, and
/// [`Graph::backward`] walks the nodes in reverse exactly once.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    param_names: HashSet<String>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            param_names: HashSet::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An anonymous leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A named trainable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<Var> {
        let name = name.into();
        if !self.param_names.insert(name.clone()) {
            return Err(TensorError::DuplicateParam(name));
        }
        let v = self.variable(value);
        self.params.push((name, v));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a value into a fresh constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.node(a)?.value.map(|x| x * c);
        let rg = self.grad_flag(&[a]);
        Ok(self.push(out, Op::Scale(a, c), rg))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.node(a)?.value.map(|x| x + c);
        let rg = self.grad_flag(&[a]);
        Ok(self.push(out, Op::AddScalar(a), rg))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.node(a)?.value.map(|x| x.abs());
        let rg = self.grad_flag(&[a]);
        Ok(self.push(out, Op::Abs(a), rg))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.node(a)?.value.map(|x| x * x);
        let rg = self.grad_flag(&[a]);
        Ok(self.push(out, Op::Square(a), rg))
    }

    pub fn sum(&mut self, a: Var, axes: Option<&[usize]>) -> Result<Var> {
        self.reduce(a, axes, false)
    }

    pub fn mean(&mut self, a: Var, axes: Option<&[usize]>) -> Result<Var> {
        self.reduce(a, axes, true)
    }

    /// Sum or mean over `axes` (all axes when `None`); reduced axes are
    /// kept with extent 1.
    fn reduce(&mut self, a: Var, axes: Option<&[usize]>, mean: bool) -> Result<Var> {
        let input = &self.node(a)?.value;
        let rank = input.shape().len();
        let axes: Vec<usize> = match axes {
            None => (0..rank).collect(),
            Some([]) => return Err(TensorError::EmptyAxes),
            Some(list) => {
                let mut v = list.to_vec();
                v.sort_unstable();
                v.dedup();
                if let Some(&bad) = v.iter().find(|&&ax| ax >= rank) {
                    return Err(TensorError::InvalidAxis { axis: bad, rank });
                }
                v
            }
        };
        let out_shape: Vec<usize> = input
            .shape()
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let map = ReduceMap::new(input.shape(), &out_shape);
        let mut out = vec![T::zero(); map.out_len];
        for (i, &v) in input.data().iter().enumerate() {
            out[map.target(i)] += v;
        }
        if mean {
            let count = T::from_usize(input.numel() / map.out_len).unwrap();
            out.iter_mut().for_each(|v| *v = *v / count);
        }
        let rg = self.grad_flag(&[a]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Reduce { input: a, mean },
            rg,
        ))
    }

    /// 2-D convolution; `weight` is `out_ch × in_ch × kh × kw`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
        mode: PaddingMode,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, cin, h, w] = self.node(input)?.value.dims4(OP)?;
        let [cout, wcin, kh, kw] = self.node(weight)?.value.dims4(OP)?;
        if wcin != cin {
            return Err(TensorError::AxisMismatch {
                op: OP,
                axis: 1,
                axis_name: "in_channels",
                expected: wcin,
                got: cin,
            });
        }
        if let Some(b) = bias {
            check_bias(OP, &self.node(b)?.value, cout)?;
        }
        let geom = ConvGeometry {
            kernel: (kh, kw),
            stride,
            padding,
            mode,
        };
        let (ho, wo) = conv_output_hw(OP, &geom, h, w)?;
        let shapes = ConvShapes {
            n,
            cin,
            h,
            w,
            cout,
            ho,
            wo,
        };
        let out = conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &shapes,
            &geom,
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.grad_flag(&deps);
        Ok(self.push(
            Tensor::from_parts(vec![n, cout, ho, wo], out),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Transposed 2-D convolution; `weight` is `in_ch × out_ch × kh × kw`,
    /// the same layout the adjoint forward convolution reads.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let [n, cin, h, w] = self.node(input)?.value.dims4(OP)?;
        let [wcin, cout, kh, kw] = self.node(weight)?.value.dims4(OP)?;
        if wcin != cin {
            return Err(TensorError::AxisMismatch {
                op: OP,
                axis: 1,
                axis_name: "in_channels",
                expected: wcin,
                got: cin,
            });
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::ZeroStride);
        }
        for (axis, op_pad, s) in [(2, output_padding.0, stride.0), (3, output_padding.1, stride.1)] {
            if op_pad >= s {
                return Err(TensorError::OutputPadding {
                    axis,
                    output_padding: op_pad,
                    stride: s,
                });
            }
        }
        if let Some(b) = bias {
            check_bias(OP, &self.node(b)?.value, cout)?;
        }
        let ho = conv_transpose_out_extent(h, kh, stride.0, padding.0, output_padding.0).ok_or(
            TensorError::KernelTooLarge {
                op: OP,
                axis: 2,
                padded: (h - 1) * stride.0 + kh + output_padding.0,
                kernel: 2 * padding.0,
            },
        )?;
        let wo = conv_transpose_out_extent(w, kw, stride.1, padding.1, output_padding.1).ok_or(
            TensorError::KernelTooLarge {
                op: OP,
                axis: 3,
                padded: (w - 1) * stride.1 + kw + output_padding.1,
                kernel: 2 * padding.1,
            },
        )?;
        let geom = ConvGeometry {
            kernel: (kh, kw),
            stride,
            padding,
            mode: PaddingMode::Zero,
        };
        let shapes = ConvShapes {
            n,
            cin,
            h,
            w,
            cout,
            ho,
            wo,
        };
        let out = conv_transpose2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &shapes,
            &geom,
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.grad_flag(&deps);
        Ok(self.push(
            Tensor::from_parts(vec![n, cout, ho, wo], out),
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Result<Var> {
        let out = self
            .node(a)?
            .value
            .map(|x| if x >= T::zero() { x } else { alpha * x });
        let rg = self.grad_flag(&[a]);
        Ok(self.push(out, Op::LeakyRelu(a, alpha), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.node(a)?.value.map(|x| x.tanh());
        let rg = self.grad_flag(&[a]);
        Ok(self.push(out, Op::Tanh(a), rg))
    }

    /// Zero padding of a rank-4 tensor by `[top, bottom, left, right]`.
    pub fn zero_pad(&mut self, a: Var, pads: [usize; 4]) -> Result<Var> {
        let x = &self.node(a)?.value;
        let [n, c, h, w] = x.dims4("zero_pad")?;
        let [top, bottom, left, right] = pads;
        let (ho, wo) = (h + top + bottom, w + left + right);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for (p, plane) in x.data().chunks_exact(h * w).enumerate() {
            for (y, row) in plane.chunks_exact(w).enumerate() {
                let start = p * ho * wo + (y + top) * wo + left;
                out[start..start + w].copy_from_slice(row);
            }
        }
        let rg = self.grad_flag(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![n, c, ho, wo], out),
            Op::ZeroPad { input: a, pads },
            rg,
        ))
    }

    /// Zero-mean, unit-variance normalization of a rank-4 tensor using
    /// population statistics over the groups selected by `axes`.
    pub(crate) fn normalize(&mut self, a: Var, axes: NormAxes, delta: T) -> Result<Var> {
        let op = match axes {
            NormAxes::Instance => "instance_norm",
            NormAxes::Batch => "batch_norm",
        };
        let x = &self.node(a)?.value;
        let dims = x.dims4(op)?;
        let groups = NormGroups::new(axes, dims);
        let src = x.data();
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(groups.count);
        let count = T::from_usize(groups.elements()).unwrap();
        for g in 0..groups.count {
            let mut sum = T::zero();
            for off in groups.slices(g) {
                for &v in &src[off..off + groups.plane] {
                    sum += v;
                }
            }
            let mu = sum / count;
            let mut sq = T::zero();
            for off in groups.slices(g) {
                for &v in &src[off..off + groups.plane] {
                    let d = v - mu;
                    sq += d * d;
                }
            }
            let inv = T::one() / (sq / count + delta).sqrt();
            for off in groups.slices(g) {
                for (o, &v) in out[off..off + groups.plane]
                    .iter_mut()
                    .zip(&src[off..off + groups.plane])
                {
                    *o = (v - mu) * inv;
                }
            }
            inv_std.push(inv);
        }
        let rg = self.grad_flag(&[a]);
        Ok(self.push(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::Normalize {
                input: a,
                axes,
                inv_std,
            },
            rg,
        ))
    }

    /// `y[n, c] = gamma[c] · x[n, c] + beta[c]` on a rank-4 tensor.
    pub fn channel_affine(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var> {
        const OP: &str = "channel_affine";
        let [_, c, h, w] = self.node(a)?.value.dims4(OP)?;
        check_bias(OP, &self.node(gamma)?.value, c)?;
        check_bias(OP, &self.node(beta)?.value, c)?;
        let plane = h * w;
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / plane) % c;
                gv[ch] * v + bv[ch]
            })
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let rg = self.grad_flag(&[a, gamma, beta]);
        Ok(self.push(out, Op::ChannelAffine { input: a, gamma, beta }, rg))
    }

    /// Reverse-mode sweep from a one-element `loss`.
    ///
    /// Every operation between the loss and the leaves is visited exactly
    /// once, latest first; a value consumed by several operations receives
    /// the sum of their contributions. The tape can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_shape = self.node(loss)?.value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|g| Tensor::from_parts(node.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, contrib: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                slot @ None => *slot = Some(contrib),
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += *c),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                if wants(*b) {
                    acc(*b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(*a, g.iter().zip(val(*b)).map(|(&gv, &y)| gv * y).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(val(*a)).map(|(&gv, &x)| gv * x).collect());
                }
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|&v| v * *c).collect()),
            Op::AddScalar(a) => acc(*a, g.to_vec()),
            Op::Abs(a) => acc(
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(&gv, &x)| {
                        if x > T::zero() {
                            gv
                        } else if x < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect(),
            ),
            Op::Square(a) => {
                let two = T::one() + T::one();
                acc(*a, g.iter().zip(val(*a)).map(|(&gv, &x)| two * x * gv).collect())
            }
            Op::Reduce { input, mean, .. } => {
                let in_shape = self.nodes[input.0].value.shape();
                let map = ReduceMap::new(in_shape, node.value.shape());
                let n_in = self.nodes[input.0].value.numel();
                let scale = if *mean {
                    T::one() / T::from_usize(n_in / map.out_len).unwrap()
                } else {
                    T::one()
                };
                acc(*input, (0..n_in).map(|j| g[map.target(j)] * scale).collect());
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let [n, cin, h, w] = self.nodes[input.0].value.dims4("conv2d").unwrap();
                let [_, cout, ho, wo] = node.value.dims4("conv2d").unwrap();
                let shapes = ConvShapes {
                    n,
                    cin,
                    h,
                    w,
                    cout,
                    ho,
                    wo,
                };
                let (dx, dw, db) = conv2d_backward(
                    val(*input),
                    val(*weight),
                    g,
                    &shapes,
                    geom,
                    wants(*input),
                    wants(*weight),
                );
                if let Some(dx) = dx {
                    acc(*input, dx);
                }
                if let Some(dw) = dw {
                    acc(*weight, dw);
                }
                if let Some(b) = bias {
                    acc(*b, db);
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let [n, cin, h, w] = self.nodes[input.0].value.dims4("conv_transpose2d").unwrap();
                let [_, cout, ho, wo] = node.value.dims4("conv_transpose2d").unwrap();
                let shapes = ConvShapes {
                    n,
                    cin,
                    h,
                    w,
                    cout,
                    ho,
                    wo,
                };
                let (dx, dw, db) = conv_transpose2d_backward(
                    val(*input),
                    val(*weight),
                    g,
                    &shapes,
                    geom,
                    wants(*input),
                    wants(*weight),
                );
                if let Some(dx) = dx {
                    acc(*input, dx);
                }
                if let Some(dw) = dw {
                    acc(*weight, dw);
                }
                if let Some(b) = bias {
                    acc(*b, db);
                }
            }
            Op::LeakyRelu(a, alpha) => acc(
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(&gv, &x)| if x >= T::zero() { gv } else { *alpha * gv })
                    .collect(),
            ),
            Op::ZeroPad { input, pads } => {
                let [_, _, h, w] = self.nodes[input.0].value.dims4("zero_pad").expect("checked");
                let [_, _, ho, wo] = node.value.dims4("zero_pad").expect("checked");
                let mut out = Vec::with_capacity(self.nodes[input.0].value.numel());
                for plane in g.chunks_exact(ho * wo) {
                    for y in 0..h {
                        let start = (y + pads[0]) * wo + pads[2];
                        out.extend_from_slice(&plane[start..start + w]);
                    }
                }
                acc(*input, out)
            }
            Op::Tanh(a) => acc(
                *a,
                g.iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect(),
            ),
            Op::Normalize {
                input,
                axes,
                inv_std,
            } => {
                let dims = node.value.dims4("normalize").unwrap();
                let groups = NormGroups::new(*axes, dims);
                let xhat = node.value.data();
                let count = T::from_usize(groups.elements()).unwrap();
                let mut dx = vec![T::zero(); xhat.len()];
                for (gi, &inv) in inv_std.iter().enumerate() {
                    let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
                    for off in groups.slices(gi) {
                        for j in off..off + groups.plane {
                            sum_g += g[j];
                            sum_gx += g[j] * xhat[j];
                        }
                    }
                    let k = inv / count;
                    for off in groups.slices(gi) {
                        for j in off..off + groups.plane {
                            dx[j] = k * (count * g[j] - sum_g - xhat[j] * sum_gx);
                        }
                    }
                }
                acc(*input, dx);
            }
            Op::ChannelAffine { input, gamma, beta } => {
                let [_, c, h, w] = node.value.dims4("channel_affine").unwrap();
                let plane = h * w;
                let x = val(*input);
                let gv = val(*gamma);
                if wants(*input) {
                    acc(
                        *input,
                        g.iter()
                            .enumerate()
                            .map(|(j, &d)| d * gv[(j / plane) % c])
                            .collect(),
                    );
                }
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (j, (&d, &xv)) in g.iter().zip(x).enumerate() {
                    let ch = (j / plane) % c;
                    dgamma[ch] += d * xv;
                    dbeta[ch] += d;
                }
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
        }
    }
}

fn check_bias<T: Scalar>(op: &'static str, b: &Tensor<T>, channels: usize) -> Result<()> {
    if b.shape() != [channels] {
        return Err(TensorError::AxisMismatch {
            op,
            axis: 0,
            axis_name: "channels",
            expected: channels,
            got: b.numel(),
        });
    }
    Ok(())
}

/// Flat-index map from a tensor onto its keep-dims reduction.
struct ReduceMap {
    in_strides: Vec<usize>,
    in_shape: Vec<usize>,
    out_strides: Vec<usize>,
    out_len: usize,
}

impl ReduceMap {
    fn new(in_shape: &[usize], out_shape: &[usize]) -> Self {
        let strides = |shape: &[usize]| {
            let mut s = vec![1; shape.len()];
            for i in (0..shape.len().saturating_sub(1)).rev() {
                s[i] = s[i + 1] * shape[i + 1];
            }
            s
        };
        let mut out_strides = strides(out_shape);
        for (s, &d) in out_strides.iter_mut().zip(out_shape) {
            if d == 1 {
                *s = 0;
            }
        }
        ReduceMap {
            in_strides: strides(in_shape),
            in_shape: in_shape.to_vec(),
            out_strides,
            out_len: out_shape.iter().product(),
        }
    }

    #[inline]
    fn target(&self, flat: usize) -> usize {
        if self.out_len == 1 {
            return 0;
        }
        let mut t = 0;
        for ((&is, &os), &d) in self.in_strides.iter().zip(&self.out_strides).zip(&self.in_shape) {
            t += ((flat / is) % d) * os;
        }
        t
    }
}

/// Enumerates the contiguous spatial planes that make up each
/// normalization group.
struct NormGroups {
    axes: NormAxes,
    batch: usize,
    channels: usize,
    plane: usize,
    count: usize,
}

impl NormGroups {
    fn new(axes: NormAxes, [n, c, h, w]: [usize; 4]) -> Self {
        let count = match axes {
            NormAxes::Instance => n * c,
            NormAxes::Batch => c,
        };
        NormGroups {
            axes,
            batch: n,
            channels: c,
            plane: h * w,
            count,
        }
    }

    fn elements(&self) -> usize {
        match self.axes {
            NormAxes::Instance => self.plane,
            NormAxes::Batch => self.plane * self.batch,
        }
    }

    fn slices(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        let (first, step, n) = match self.axes {
            NormAxes::Instance => (g * self.plane, 0, 1),
            NormAxes::Batch => (g * self.plane, self.channels * self.plane, self.batch),
        };
        (0..n).map(move |b| first + b * step)
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Accumulated gradient of `v`, if it lies on a path to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Parameter name → gradient, for every named parameter reached.
    pub fn named(&self) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .filter_map(|(n, v)| self.get(*v).map(|g| (n.clone(), g.clone())))
            .collect()
    }
}
