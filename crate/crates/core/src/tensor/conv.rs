//! im2col-based 2-D convolution and transposed convolution kernels.
//!
//! Both operators share one patch-gather (`im2col`) and its adjoint
//! scatter (`col2im`); a transposed convolution is the adjoint of the
//! forward convolution with the same weight tensor and geometry.

use super::{gemm, MatRef, Result, Scalar, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PaddingMode {
    #[default]
    Zero,
    /// Mirror about the border pixel without repeating it.
    Reflect,
}

/// Kernel, stride and padding of a convolution, per (row, column) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub mode: PaddingMode,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize, mode: PaddingMode) -> Self {
        ConvGeometry {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            mode,
        }
    }

    pub(crate) fn window(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }
}

/// `floor((extent + 2·pad − kernel) / stride) + 1`, or `None` when the
/// padded extent is shorter than the kernel.
pub fn conv_out_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `(extent − 1)·stride − 2·pad + kernel + output_padding`.
pub fn conv_transpose_out_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (extent - 1) * stride + kernel + output_padding;
    full.checked_sub(2 * pad).filter(|&v| v > 0)
}

/// Spatial output extents of a forward convolution over an `h × w` input.
pub(crate) fn conv_output_hw(
    op: &'static str,
    geom: &ConvGeometry,
    h: usize,
    w: usize,
) -> Result<(usize, usize)> {
    if geom.stride.0 == 0 || geom.stride.1 == 0 {
        return Err(TensorError::ZeroStride);
    }
    if geom.mode == PaddingMode::Reflect {
        for (axis, pad, extent) in [(2, geom.padding.0, h), (3, geom.padding.1, w)] {
            if pad >= extent {
                return Err(TensorError::ReflectPadTooLarge { axis, pad, extent });
            }
        }
    }
    let ho = conv_out_extent(h, geom.kernel.0, geom.stride.0, geom.padding.0).ok_or(
        TensorError::KernelTooLarge {
            op,
            axis: 2,
            padded: h + 2 * geom.padding.0,
            kernel: geom.kernel.0,
        },
    )?;
    let wo = conv_out_extent(w, geom.kernel.1, geom.stride.1, geom.padding.1).ok_or(
        TensorError::KernelTooLarge {
            op,
            axis: 3,
            padded: w + 2 * geom.padding.1,
            kernel: geom.kernel.1,
        },
    )?;
    Ok((ho, wo))
}

/// Source coordinate of a padded position, or `None` for a zero pad.
#[inline]
fn source_index(pos: isize, extent: usize, mode: PaddingMode) -> Option<usize> {
    let n = extent as isize;
    if (0..n).contains(&pos) {
        return Some(pos as usize);
    }
    match mode {
        PaddingMode::Zero => None,
        PaddingMode::Reflect => {
            let r = if pos < 0 { -pos } else { 2 * (n - 1) - pos };
            Some(r as usize)
        }
    }
}

/// Precomputed source offsets for every (window tap, output pixel) pair on
/// one channel plane; `usize::MAX` marks a zero pad.
pub(crate) struct PatchIndex {
    offsets: Vec<usize>,
    window: usize,
    out_pixels: usize,
}

impl PatchIndex {
    pub fn new(geom: &ConvGeometry, h: usize, w: usize, ho: usize, wo: usize) -> Self {
        let (kh, kw) = geom.kernel;
        let mut offsets = Vec::with_capacity(kh * kw * ho * wo);
        for ki in 0..kh {
            for kj in 0..kw {
                for oy in 0..ho {
                    let iy = (oy * geom.stride.0 + ki) as isize - geom.padding.0 as isize;
                    let sy = source_index(iy, h, geom.mode);
                    for ox in 0..wo {
                        let ix = (ox * geom.stride.1 + kj) as isize - geom.padding.1 as isize;
                        let sx = source_index(ix, w, geom.mode);
                        offsets.push(match (sy, sx) {
                            (Some(y), Some(x)) => y * w + x,
                            _ => usize::MAX,
                        });
                    }
                }
            }
        }
        PatchIndex {
            offsets,
            window: kh * kw,
            out_pixels: ho * wo,
        }
    }

    /// Gathers patches of a `channels × (h·w)` plane stack into a
    /// `(channels·window) × out_pixels` matrix.
    pub fn im2col<T: Scalar>(&self, src: &[T], channels: usize, plane: usize, cols: &mut [T]) {
        let row_len = self.out_pixels;
        let per_channel = self.window * row_len;
        debug_assert_eq!(cols.len(), channels * per_channel);
        for c in 0..channels {
            let src_plane = &src[c * plane..(c + 1) * plane];
            let dst = &mut cols[c * per_channel..(c + 1) * per_channel];
            for (d, &o) in dst.iter_mut().zip(&self.offsets) {
                *d = if o == usize::MAX { T::zero() } else { src_plane[o] };
            }
        }
    }

    /// Adjoint of [`PatchIndex::im2col`]: scatters and accumulates columns
    /// back onto the plane stack.
    pub fn col2im<T: Scalar>(&self, cols: &[T], channels: usize, plane: usize, dst: &mut [T]) {
        let per_channel = self.window * self.out_pixels;
        for c in 0..channels {
            let dst_plane = &mut dst[c * plane..(c + 1) * plane];
            let src = &cols[c * per_channel..(c + 1) * per_channel];
            for (&v, &o) in src.iter().zip(&self.offsets) {
                if o != usize::MAX {
                    dst_plane[o] += v;
                }
            }
        }
    }
}

pub(crate) struct ConvShapes {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Forward convolution; weight is `cout × cin × kh × kw`.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    s: &ConvShapes,
    geom: &ConvGeometry,
) -> Vec<T> {
    let idx = PatchIndex::new(geom, s.h, s.w, s.ho, s.wo);
    let k = s.cin * geom.window();
    let npix = s.ho * s.wo;
    let mut cols = vec![T::zero(); k * npix];
    let mut out = vec![T::zero(); s.n * s.cout * npix];
    let wmat = MatRef::new(weight, s.cout, k);
    for b in 0..s.n {
        let xb = &x[b * s.cin * s.h * s.w..(b + 1) * s.cin * s.h * s.w];
        idx.im2col(xb, s.cin, s.h * s.w, &mut cols);
        let ob = &mut out[b * s.cout * npix..(b + 1) * s.cout * npix];
        gemm(wmat, MatRef::new(&cols, k, npix), T::zero(), ob);
        if let Some(bias) = bias {
            for (plane, &bv) in ob.chunks_mut(npix).zip(bias) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradients of a forward convolution: `(d_input, d_weight, d_bias)`.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    s: &ConvShapes,
    geom: &ConvGeometry,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let idx = PatchIndex::new(geom, s.h, s.w, s.ho, s.wo);
    let k = s.cin * geom.window();
    let npix = s.ho * s.wo;
    let plane_in = s.h * s.w;
    let mut cols = vec![T::zero(); k * npix];
    let mut dx = need_input.then(|| vec![T::zero(); s.n * s.cin * plane_in]);
    let mut dw = need_weight.then(|| vec![T::zero(); s.cout * k]);
    let mut db = vec![T::zero(); s.cout];
    let wmat = MatRef::new(weight, s.cout, k);
    for b in 0..s.n {
        let gb = &dout[b * s.cout * npix..(b + 1) * s.cout * npix];
        for (acc, plane) in db.iter_mut().zip(gb.chunks(npix)) {
            for &v in plane {
                *acc += v;
            }
        }
        let gmat = MatRef::new(gb, s.cout, npix);
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * s.cin * plane_in..(b + 1) * s.cin * plane_in];
            idx.im2col(xb, s.cin, plane_in, &mut cols);
            gemm(gmat, MatRef::new(&cols, k, npix).t(), T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(wmat.t(), gmat, T::zero(), &mut cols);
            let dxb = &mut dx[b * s.cin * plane_in..(b + 1) * s.cin * plane_in];
            idx.col2im(&cols, s.cin, plane_in, dxb);
        }
    }
    (dx, dw, db)
}

/// Transposed convolution; weight is `cin × cout × kh × kw`, and `s`
/// describes the operator's own input (`cin, h, w`) and output
/// (`cout, ho, wo`). `geom` is the geometry of the adjoint forward
/// convolution mapping `ho × wo` back onto `h × w`.
pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    s: &ConvShapes,
    geom: &ConvGeometry,
) -> Vec<T> {
    // Patch index of the adjoint convolution: its input is our output.
    let idx = PatchIndex::new(geom, s.ho, s.wo, s.h, s.w);
    let k = s.cout * geom.window();
    let npix = s.h * s.w;
    let plane_out = s.ho * s.wo;
    let mut cols = vec![T::zero(); k * npix];
    let mut out = vec![T::zero(); s.n * s.cout * plane_out];
    let wmat = MatRef::new(weight, s.cin, k);
    for b in 0..s.n {
        let xb = &x[b * s.cin * npix..(b + 1) * s.cin * npix];
        gemm(wmat.t(), MatRef::new(xb, s.cin, npix), T::zero(), &mut cols);
        let ob = &mut out[b * s.cout * plane_out..(b + 1) * s.cout * plane_out];
        idx.col2im(&cols, s.cout, plane_out, ob);
        if let Some(bias) = bias {
            for (plane, &bv) in ob.chunks_mut(plane_out).zip(bias) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    s: &ConvShapes,
    geom: &ConvGeometry,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let idx = PatchIndex::new(geom, s.ho, s.wo, s.h, s.w);
    let k = s.cout * geom.window();
    let npix = s.h * s.w;
    let plane_out = s.ho * s.wo;
    let mut cols = vec![T::zero(); k * npix];
    let mut dx = need_input.then(|| vec![T::zero(); s.n * s.cin * npix]);
    let mut dw = need_weight.then(|| vec![T::zero(); s.cin * k]);
    let mut db = vec![T::zero(); s.cout];
    let wmat = MatRef::new(weight, s.cin, k);
    for b in 0..s.n {
        let gb = &dout[b * s.cout * plane_out..(b + 1) * s.cout * plane_out];
        for (acc, plane) in db.iter_mut().zip(gb.chunks(plane_out)) {
            for &v in plane {
                *acc += v;
            }
        }
        idx.im2col(gb, s.cout, plane_out, &mut cols);
        let cmat = MatRef::new(&cols, k, npix);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * s.cin * npix..(b + 1) * s.cin * npix];
            gemm(wmat, cmat, T::zero(), dxb);
        }
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * s.cin * npix..(b + 1) * s.cin * npix];
            gemm(MatRef::new(xb, s.cin, npix), cmat.t(), T::one(), dw);
        }
    }
    (dx, dw, db)
}
