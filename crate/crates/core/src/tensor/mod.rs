//! Dense tensors and a tape-based reverse-mode autodiff engine.
//!
//! [`Tensor`] is a plain row-major value. Differentiable computation happens
//! on a [`Graph`], which records every operation as it executes and replays
//! the record in reverse inside [`Graph::backward`]. Images use the
//! batch × channels × height × width layout throughout.

mod conv;
mod graph;
mod gradcheck;

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use conv::{conv_out_extent, conv_transpose_out_extent, ConvGeometry, PaddingMode};
pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::NormAxes;
pub use gradcheck::{finite_diff_grad, max_relative_error};

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {got} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("{op}: expected a rank-{expected} tensor, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("{op}: shape mismatch on axis {axis} ({axis_name}): expected {expected}, got {got}")]
    AxisMismatch {
        op: &'static str,
        axis: usize,
        axis_name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: shapes {lhs:?} and {rhs:?} differ")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: padded extent {padded} on axis {axis} is smaller than kernel extent {kernel}")]
    KernelTooLarge {
        op: &'static str,
        axis: usize,
        padded: usize,
        kernel: usize,
    },
    #[error("reflect padding {pad} on axis {axis} needs an input extent above {pad}, got {extent}")]
    ReflectPadTooLarge { axis: usize, pad: usize, extent: usize },
    #[error("output padding {output_padding} on axis {axis} must be smaller than stride {stride}")]
    OutputPadding {
        axis: usize,
        output_padding: usize,
        stride: usize,
    },
    #[error("stride must be positive")]
    ZeroStride,
    #[error("reduction axes list is empty")]
    EmptyAxes,
    #[error("reduction axis {axis} is invalid for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("the tape was already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("variable {0} does not belong to this graph")]
    UnknownVar(usize),
    #[error("parameter name {0:?} bound twice on one graph")]
    DuplicateParam(String),
    #[error("function value is not finite: {0}")]
    NonFinite(f64),
    #[error("finite-difference step must be positive")]
    NonPositiveStep,
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Element dtype tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => f.write_str("f32"),
            DType::F64 => f.write_str("f64"),
        }
    }
}

/// Floating-point element type usable by the engine.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a * b + beta * c` for strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given strides and extents must lie
    /// inside the corresponding slice.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every engine scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("engine scalars convert to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Row-major matrix view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        MatRef {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// The transpose of this view, with no copy.
    pub fn t(self) -> Self {
        MatRef {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a · b + beta · c`, with `c` a dense row-major `m × n` buffer.
pub(crate) fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner extents");
    assert_eq!(c.len(), m * n, "gemm output extent");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents and strides were checked against the slice lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A dense row-major n-dimensional array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const MAX: usize = 16;
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if self.data.len() <= MAX {
            s.field("data", &self.data);
        } else {
            s.field("data", &format_args!("[{:?}, ..]", &self.data[..MAX]));
        }
        s.finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor from `f64` values, rounding to `T`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Extents of a rank-4 tensor as `[n, c, h, w]`.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(TensorError::Rank {
                op,
                expected: 4,
                got: self.shape.clone(),
            }),
        }
    }

    /// Inner product of the flattened buffers.
    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut acc = T::zero();
        for (&a, &b) in self.data.iter().zip(&other.data) {
            acc += a * b;
        }
        Ok(acc)
    }

    /// Stacks rank-3 `c × h × w` tensors into one `n × c × h × w` batch.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or(TensorError::ZeroExtent(vec![0]))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        Self::new(shape, data)
    }
}

impl<T> Tensor<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::<f32>::new([2, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            Tensor::<f32>::new([2, 0], vec![]),
            Err(TensorError::ZeroExtent(_))
        ));
        let t = Tensor::<f64>::new([2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(t.dtype(), DType::F64);
    }

    #[test]
    fn gemm_with_transposed_views() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(MatRef::new(&a, 2, 2), MatRef::new(&b, 2, 2), 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(MatRef::new(&a, 2, 2).t(), MatRef::new(&b, 2, 2), 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(MatRef::new(&a, 2, 2), MatRef::new(&b, 2, 2).t(), 1.0, &mut c);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    #[test]
    fn stack_builds_batch() {
        let a = Tensor::<f32>::full([1, 2, 2], 1.0).unwrap();
        let b = Tensor::<f32>::full([1, 2, 2], 2.0).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 1, 2, 2]);
        assert_eq!(&s.data()[4..], &[2.0; 4]);
    }
}
