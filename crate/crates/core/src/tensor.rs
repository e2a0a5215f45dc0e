//! Dense row-major `f32` tensors and the structural kernels the network is
//! built from: matrix product, 2-D convolution and max-pooling.
//!
//! Images use CHW layout for a single sample and NCHW for batches.
//! `conv2d` follows the cross-correlation convention: kernels are applied
//! as stored, without flipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking `product(shape) == data.len()` and that no
    /// dimension is zero.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(shape.iter().all(|&d| d >= 1), "zero-sized dimension in {shape:?}");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> f32 {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies sample `i` out of a batched tensor (leading dimension is the batch).
    pub fn sample(&self, i: usize) -> Tensor {
        let inner = &self.shape[1..];
        let n: usize = inner.iter().product();
        let shape = if inner.is_empty() { vec![1] } else { inner.to_vec() };
        Tensor {
            shape,
            data: self.data[i * n..(i + 1) * n].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading dimension.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::dim("cannot stack zero tensors"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim(format!(
                    "cannot stack {:?} with {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::new(shape, data)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::dim(format!(
            "shape {shape:?} must have at least one dimension, all >= 1"
        )));
    }
    Ok(())
}

/// Row-major strided view handed to the GEMM kernel.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = a·b + beta·c` with `c` a dense row-major `a.rows × b.cols` buffer.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f32, c: &mut [f32]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the strides describe in-bounds elements of `a.data` / `b.data`
    // (checked by the constructors above) and `c` holds m*n elements.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of `a: m×k` and `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim(format!(
            "matmul needs m×k · k×n, got {:?} · {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    gemm(MatRef::new(&a.data, m, k), MatRef::new(&b.data, k, n), 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Geometry of one convolution: input C×H×W, square kernel, stride, padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 3],
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [c, h, w] = input;
        if stride == 0 || kernel == 0 {
            return Err(Error::dim("conv kernel and stride must be positive"));
        }
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::dim(format!(
                "kernel {kernel}×{kernel} larger than padded input {}×{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        Ok(ConvGeometry {
            in_channels: c,
            height: h,
            width: w,
            kernel,
            stride,
            padding,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Rows of the unrolled patch matrix: `C_in·k·k`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Columns of the unrolled patch matrix: `H'·W'`.
    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }
}

/// Unrolls one CHW sample into a `patch_len × positions` matrix
/// (row = (c, ky, kx), column = output position). Padding reads as zero.
pub(crate) fn im2col(x: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let p = oh * ow;
    debug_assert_eq!(cols.len(), g.patch_len() * p);
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds a patch matrix back onto a CHW
/// buffer. `x` is overwritten.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeometry, x: &mut [f32]) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let p = oh * ow;
    x.fill(0.0);
    for c in 0..g.in_channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution of one sample with pre-unrolled patches; `out` is
/// `C_out × positions`.
pub(crate) fn conv_forward_cols(
    cols: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    g: &ConvGeometry,
    out_channels: usize,
    out: &mut [f32],
) {
    let p = g.positions();
    match bias {
        Some(b) => {
            for (co, row) in out.chunks_mut(p).enumerate().take(out_channels) {
                row.fill(b[co]);
            }
        }
        None => out[..out_channels * p].fill(0.0),
    }
    gemm(
        MatRef::new(weight, out_channels, g.patch_len()),
        MatRef::new(cols, g.patch_len(), p),
        1.0,
        out,
    );
}

/// 2-D cross-correlation of one `C_in×H×W` sample with
/// `C_out×C_in×k×k` kernels. Output is `C_out×H'×W'` with
/// `H' = (H + 2·padding − k)/stride + 1`.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (g, c_out) = conv_shapes(input, kernels, stride, padding)?;
    if bias.len() != c_out {
        return Err(Error::dim(format!(
            "bias has {} entries for {c_out} output channels",
            bias.len()
        )));
    }
    let mut cols = vec![0.0; g.patch_len() * g.positions()];
    im2col(input.data(), &g, &mut cols);
    let mut out = vec![0.0; c_out * g.positions()];
    conv_forward_cols(&cols, kernels.data(), Some(bias.data()), &g, c_out, &mut out);
    Tensor::new(vec![c_out, g.out_height(), g.out_width()], out)
}

pub(crate) fn conv_shapes(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(ConvGeometry, usize)> {
    let [c, h, w] = chw(input)?;
    let ks = kernels.shape();
    if ks.len() != 4 || ks[1] != c || ks[2] != ks[3] {
        return Err(Error::dim(format!(
            "kernels {ks:?} incompatible with input {:?}",
            input.shape()
        )));
    }
    let g = ConvGeometry::new([c, h, w], ks[2], stride, padding)?;
    Ok((g, ks[0]))
}

fn chw(t: &Tensor) -> Result<[usize; 3]> {
    match t.shape() {
        &[c, h, w] => Ok([c, h, w]),
        s => Err(Error::dim(format!("expected C×H×W tensor, got {s:?}"))),
    }
}

/// Flat input index (within the C×H×W sample) of each pooling winner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgmaxIndices(pub Vec<usize>);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn new(input: [usize; 3], kernel: usize, stride: usize) -> Result<Self> {
        let [c, h, w] = input;
        if kernel == 0 || stride == 0 {
            return Err(Error::dim("pool kernel and stride must be positive"));
        }
        if kernel > h || kernel > w {
            return Err(Error::dim(format!(
                "pool window {kernel}×{kernel} exceeds input {h}×{w}"
            )));
        }
        Ok(PoolGeometry {
            channels: c,
            height: h,
            width: w,
            kernel,
            stride,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn out_len(&self) -> usize {
        self.channels * self.out_height() * self.out_width()
    }
}

/// Ties go to the first element in row-major window order.
pub(crate) fn maxpool_into(x: &[f32], g: &PoolGeometry, out: &mut [f32], argmax: &mut [usize]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let mut o = 0;
    for c in 0..g.channels {
        let base = c * g.height * g.width;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..g.kernel {
                    let row = base + (oy * g.stride + ky) * g.width + ox * g.stride;
                    for kx in 0..g.kernel {
                        let v = x[row + kx];
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                out[o] = best;
                argmax[o] = best_idx;
                o += 1;
            }
        }
    }
}

/// Max-pooling over `k×k` windows of one C×H×W sample.
pub fn maxpool2d(input: &Tensor, k: usize, stride: usize) -> Result<(Tensor, ArgmaxIndices)> {
    let g = PoolGeometry::new(chw(input)?, k, stride)?;
    let mut out = vec![0.0; g.out_len()];
    let mut idx = vec![0; g.out_len()];
    maxpool_into(input.data(), &g, &mut out, &mut idx);
    Ok((
        Tensor::new(vec![g.channels, g.out_height(), g.out_width()], out)?,
        ArgmaxIndices(idx),
    ))
}
