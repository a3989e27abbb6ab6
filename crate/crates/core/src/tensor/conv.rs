use super::gemm::{gemm, MatMut, MatRef};
use super::{FeatureMap, Scalar, Shape};
use crate::{Error, Result};

/// im2col buffers are built a band of rows at a time so the scratch matrix
/// stays below this many elements.
const COLUMN_BUDGET: usize = 1 << 21;

/// Convolution filter bank: `out_channels × in_channels × kernel_h × kernel_w`
/// weights plus one bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T = f32> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        ConvKernel {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights: vec![T::zero(); out_channels * in_channels * kernel_h * kernel_w],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn from_parts(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let kernel = ConvKernel { out_channels, in_channels, kernel_h, kernel_w, weights, bias };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.weight_len() || self.bias.len() != self.out_channels {
            return Err(Error::shape(
                "ConvKernel",
                format!(
                    "{} weights / {} biases for {}x{}x{}x{}",
                    self.weights.len(),
                    self.bias.len(),
                    self.out_channels,
                    self.in_channels,
                    self.kernel_h,
                    self.kernel_w
                ),
            ));
        }
        Ok(())
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Inputs feeding one output value: `in_channels · kernel_h · kernel_w`.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weights[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    pub fn cast<U: Scalar>(&self) -> ConvKernel<U> {
        let conv = |v: &T| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN));
        ConvKernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            weights: self.weights.iter().map(conv).collect(),
            bias: self.bias.iter().map(conv).collect(),
        }
    }
}

/// Gradients of a scalar with respect to the convolution input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: FeatureMap<T>,
    /// Same layout as the kernel: weight gradients in `weights`, bias
    /// gradients in `bias`.
    pub kernel: ConvKernel<T>,
}

fn check_conv<T: Scalar>(op: &'static str, input: Shape, kernel: &ConvKernel<T>) -> Result<()> {
    kernel.validate()?;
    if input.is_empty() {
        return Err(Error::shape(op, format!("empty input {input}")));
    }
    if kernel.in_channels != input.channels {
        return Err(Error::shape(
            op,
            format!("kernel expects {} input channels, input has {}", kernel.in_channels, input.channels),
        ));
    }
    if kernel.kernel_h.is_multiple_of(2) || kernel.kernel_w.is_multiple_of(2) {
        return Err(Error::shape(op, format!("kernel {}x{} must have odd sides", kernel.kernel_h, kernel.kernel_w)));
    }
    Ok(())
}

fn band_rows(col_rows: usize, shape: Shape) -> usize {
    (COLUMN_BUDGET / (col_rows * shape.width).max(1)).clamp(1, shape.height)
}

/// Fills `cols` (`C·kh·kw` rows × `(r1 - r0)·W` columns) with the zero-padded
/// receptive fields of output rows `r0..r1`.
fn im2col<T: Scalar>(input: &FeatureMap<T>, kh: usize, kw: usize, r0: usize, r1: usize, cols: &mut [T]) {
    let Shape { channels, height, width } = input.shape();
    let (ph, pw) = (kh / 2, kw / 2);
    let n = (r1 - r0) * width;
    let mut row = 0;
    for c in 0..channels {
        let plane = input.channel(c);
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[row * n..(row + 1) * n];
                // valid output columns x satisfy 0 <= x + kx - pw < width
                let x_lo = pw.saturating_sub(kx);
                let x_hi = (width + pw).saturating_sub(kx).min(width);
                for y in r0..r1 {
                    let out = &mut dst[(y - r0) * width..(y - r0 + 1) * width];
                    let src_y = (y + ky).wrapping_sub(ph);
                    if src_y >= height || x_lo >= x_hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[src_y * width..(src_y + 1) * width];
                    out[..x_lo].fill(T::zero());
                    out[x_hi..].fill(T::zero());
                    let s0 = x_lo + kx - pw;
                    out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
                row += 1;
            }
        }
    }
}

/// Inverse scatter of [`im2col`]: accumulates `cols` into `grad`.
fn col2im<T: Scalar>(cols: &[T], kh: usize, kw: usize, r0: usize, r1: usize, grad: &mut FeatureMap<T>) {
    let Shape { channels, height, width } = grad.shape();
    let (ph, pw) = (kh / 2, kw / 2);
    let n = (r1 - r0) * width;
    let mut row = 0;
    for c in 0..channels {
        let plane = grad.channel_mut(c);
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &cols[row * n..(row + 1) * n];
                let x_lo = pw.saturating_sub(kx);
                let x_hi = (width + pw).saturating_sub(kx).min(width);
                for y in r0..r1 {
                    let dst_y = (y + ky).wrapping_sub(ph);
                    if dst_y >= height || x_lo >= x_hi {
                        continue;
                    }
                    let s = &src[(y - r0) * width + x_lo..(y - r0) * width + x_hi];
                    let d0 = dst_y * width + x_lo + kx - pw;
                    for (d, &v) in plane[d0..d0 + s.len()].iter_mut().zip(s) {
                        *d = *d + v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Stride-1 cross-correlation with zero "same" padding of `(k - 1) / 2`.
///
/// Output has `kernel.out_channels` channels and the input's spatial size.
pub fn conv2d<T: Scalar>(input: &FeatureMap<T>, kernel: &ConvKernel<T>) -> Result<FeatureMap<T>> {
    let shape = input.shape();
    check_conv("conv2d", shape, kernel)?;
    let out_shape = Shape::new(kernel.out_channels, shape.height, shape.width);
    let mut out = FeatureMap::zeros(out_shape);
    for (o, &b) in kernel.bias.iter().enumerate() {
        out.channel_mut(o).fill(b);
    }

    let col_rows = kernel.fan_in();
    let plane = shape.plane();
    let band = band_rows(col_rows, shape);
    let mut cols = vec![T::zero(); col_rows * band * shape.width];
    let mut r0 = 0;
    while r0 < shape.height {
        let r1 = (r0 + band).min(shape.height);
        let n = (r1 - r0) * shape.width;
        let cols = &mut cols[..col_rows * n];
        im2col(input, kernel.kernel_h, kernel.kernel_w, r0, r1, cols);
        gemm(
            kernel.out_channels,
            col_rows,
            n,
            MatRef { data: &kernel.weights, rs: col_rows, cs: 1 },
            MatRef { data: cols, rs: n, cs: 1 },
            T::one(),
            MatMut { data: &mut out.data_mut()[r0 * shape.width..], rs: plane, cs: 1 },
        );
        r0 = r1;
    }
    Ok(out)
}

/// Gradients of `⟨grad_out, conv2d(input, kernel)⟩` with respect to the
/// input, the weights and the biases.
pub fn conv2d_backward<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &ConvKernel<T>,
    grad_out: &FeatureMap<T>,
) -> Result<ConvGrads<T>> {
    let shape = input.shape();
    check_conv("conv2d_backward", shape, kernel)?;
    let out_shape = Shape::new(kernel.out_channels, shape.height, shape.width);
    super::same_shape("conv2d_backward", out_shape, grad_out.shape())?;

    let mut grad_kernel = ConvKernel::zeros(kernel.out_channels, kernel.in_channels, kernel.kernel_h, kernel.kernel_w);
    for (o, gb) in grad_kernel.bias.iter_mut().enumerate() {
        *gb = grad_out.channel(o).iter().fold(T::zero(), |acc, &v| acc + v);
    }
    let mut grad_input = FeatureMap::zeros(shape);

    let col_rows = kernel.fan_in();
    let plane = shape.plane();
    let band = band_rows(col_rows, shape);
    let mut cols = vec![T::zero(); col_rows * band * shape.width];
    let mut dcols = vec![T::zero(); col_rows * band * shape.width];
    let mut r0 = 0;
    while r0 < shape.height {
        let r1 = (r0 + band).min(shape.height);
        let n = (r1 - r0) * shape.width;
        let g = &grad_out.data()[r0 * shape.width..];

        let cols = &mut cols[..col_rows * n];
        im2col(input, kernel.kernel_h, kernel.kernel_w, r0, r1, cols);
        // dW += G · colsᵀ
        gemm(
            kernel.out_channels,
            n,
            col_rows,
            MatRef { data: g, rs: plane, cs: 1 },
            MatRef { data: cols, rs: 1, cs: n },
            T::one(),
            MatMut { data: &mut grad_kernel.weights, rs: col_rows, cs: 1 },
        );

        // dcols = Wᵀ · G
        let dcols = &mut dcols[..col_rows * n];
        gemm(
            col_rows,
            kernel.out_channels,
            n,
            MatRef { data: &kernel.weights, rs: 1, cs: col_rows },
            MatRef { data: g, rs: plane, cs: 1 },
            T::zero(),
            MatMut { data: dcols, rs: n, cs: 1 },
        );
        col2im(dcols, kernel.kernel_h, kernel.kernel_w, r0, r1, &mut grad_input);
        r0 = r1;
    }

    Ok(ConvGrads { input: grad_input, kernel: grad_kernel })
}
