//! Dense row-major `f32` tensors and the convolution primitives the
//! extractors are built from.
//!
//! Spatial maps are stored channel-last (`[H, W, C]`). Convolution kernels
//! use the `[out_ch, in_ch, K, K]` layout of the weight file; they are
//! repacked once into a `[K, K, in_ch, out_ch]` matrix when a [`ConvParams`]
//! is built so the forward pass can run as a patch-matrix product.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape("tensor", "data length", len, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Reinterprets the same values under a new shape with equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extents of a rank-3 `[H, W, C]` map.
    pub fn hwc(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(op, "rank", 3, self.rank())),
        }
    }
}

/// Weights and hyperparameters of one convolution layer.
#[derive(Debug, Clone)]
pub struct ConvParams {
    kernel: Tensor,
    bias: Tensor,
    norm_scale: Tensor,
    norm_shift: Tensor,
    stride: usize,
    dilation: usize,
    // [K, K, in_ch, out_ch], row-major
    packed: Vec<f32>,
}

impl ConvParams {
    pub fn new(
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        dilation: usize,
        norm_scale: Tensor,
        norm_shift: Tensor,
    ) -> Result<Self> {
        let (out_ch, in_ch, kh, kw) = match *kernel.shape() {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(Error::shape("conv2d", "kernel rank", 4, kernel.rank())),
        };
        if kh != kw {
            return Err(Error::shape("conv2d", "kernel width", kh, kw));
        }
        if kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d: kernel size must be odd, got {kh}"
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::InvalidArgument(
                "conv2d: stride and dilation must be positive".into(),
            ));
        }
        for (name, t) in [("bias", &bias), ("norm_scale", &norm_scale), ("norm_shift", &norm_shift)] {
            if t.shape() != [out_ch] {
                return Err(Error::shape(
                    "conv2d",
                    format!("{name} length"),
                    out_ch,
                    t.len(),
                ));
            }
        }

        let k = kh;
        let mut packed = vec![0.0f32; k * k * in_ch * out_ch];
        let src = kernel.data();
        for o in 0..out_ch {
            for i in 0..in_ch {
                for u in 0..k {
                    for v in 0..k {
                        packed[((u * k + v) * in_ch + i) * out_ch + o] =
                            src[((o * in_ch + i) * k + u) * k + v];
                    }
                }
            }
        }

        Ok(Self {
            kernel,
            bias,
            norm_scale,
            norm_shift,
            stride,
            dilation,
            packed,
        })
    }

    /// A layer with unit normalization (scale 1, shift 0).
    pub fn plain(kernel: Tensor, bias: Tensor, stride: usize, dilation: usize) -> Result<Self> {
        let out_ch = kernel.shape().first().copied().unwrap_or(0).max(1);
        Self::new(
            kernel,
            bias,
            stride,
            dilation,
            Tensor::filled(vec![out_ch], 1.0),
            Tensor::zeros(vec![out_ch]),
        )
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn norm_scale(&self) -> &Tensor {
        &self.norm_scale
    }

    pub fn norm_shift(&self) -> &Tensor {
        &self.norm_shift
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }

    /// Zero padding on each side giving "same" output extents at stride 1.
    pub fn padding(&self) -> usize {
        ((self.kernel_size() - 1) * self.dilation) / 2
    }
}

/// Output rows processed per patch-matrix product; bounds the scratch buffer.
const ROW_CHUNK_ELEMS: usize = 1 << 21;

/// Zero-padded 2-D convolution of an `[H, W, C_in]` map.
///
/// The output has extents `⌈H/S⌉ × ⌈W/S⌉ × C_out`.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let (h, w, cin) = input.hwc("conv2d")?;
    if cin != p.in_channels() {
        return Err(Error::shape("conv2d", "input channels", p.in_channels(), cin));
    }
    let s = p.stride;
    let d = p.dilation;
    let k = p.kernel_size();
    let pad = p.padding() as isize;
    let cout = p.out_channels();
    let oh = h.div_ceil(s);
    let ow = w.div_ceil(s);
    let patch_len = k * k * cin;

    let mut out = vec![0.0f32; oh * ow * cout];
    for px in out.chunks_exact_mut(cout) {
        px.copy_from_slice(p.bias.data());
    }

    let src = input.data();
    let rows_per_chunk = (ROW_CHUNK_ELEMS / (ow * patch_len).max(1)).clamp(1, oh);
    let mut patches = vec![0.0f32; rows_per_chunk * ow * patch_len];

    let mut y0 = 0;
    while y0 < oh {
        let rows = rows_per_chunk.min(oh - y0);
        let m = rows * ow;
        let patches = &mut patches[..m * patch_len];
        patches.fill(0.0);
        for ry in 0..rows {
            let y = y0 + ry;
            for x in 0..ow {
                let row = &mut patches[(ry * ow + x) * patch_len..][..patch_len];
                for u in 0..k {
                    let iy = (y * s) as isize + (u * d) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for v in 0..k {
                        let ix = (x * s) as isize + (v * d) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let at = (iy as usize * w + ix as usize) * cin;
                        row[(u * k + v) * cin..][..cin].copy_from_slice(&src[at..at + cin]);
                    }
                }
            }
        }
        let dst = &mut out[y0 * ow * cout..][..m * cout];
        // SAFETY: all three buffers are dense row-major matrices whose extents
        // match the dimensions and strides passed below.
        unsafe {
            matrixmultiply::sgemm(
                m,
                patch_len,
                cout,
                1.0,
                patches.as_ptr(),
                patch_len as isize,
                1,
                p.packed.as_ptr(),
                cout as isize,
                1,
                1.0,
                dst.as_mut_ptr(),
                cout as isize,
                1,
            );
        }
        y0 += rows;
    }

    Tensor::new(vec![oh, ow, cout], out)
}

/// Convolution, per-channel affine normalization, then a rectifier.
pub fn conv_block(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let mut out = conv2d(input, p)?;
    let scale = p.norm_scale.data();
    let shift = p.norm_shift.data();
    for px in out.data_mut().chunks_exact_mut(scale.len()) {
        for ((v, &a), &b) in px.iter_mut().zip(scale).zip(shift) {
            *v = (*v * a + b).max(0.0);
        }
    }
    Ok(out)
}

/// Logistic function, saturating to the nearest representable values
/// strictly inside `(0, 1)`.
pub fn sigmoid_scalar(x: f32) -> f32 {
    const UPPER: f32 = 1.0 - f32::EPSILON / 2.0;
    let s = 1.0 / (1.0 + (-(x as f64)).exp());
    (s as f32).clamp(f32::MIN_POSITIVE, UPPER)
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}
