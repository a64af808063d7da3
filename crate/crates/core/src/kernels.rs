//! Raw numeric kernels shared by the differentiation graph: convolution via per-sample
//! matrix products and align-corners bilinear interpolation, each with its adjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding chosen so the output has `ceil(input / stride)` positions.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub const fn same(stride: usize, dilation: usize) -> Self {
        ConvGeometry {
            stride,
            dilation,
            padding: Padding::Same,
        }
    }

    pub const fn pointwise() -> Self {
        Self::same(1, 1)
    }

    /// Output length and leading pad along one axis.
    pub fn axis(&self, input: usize, k: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::Config("stride and dilation must be positive".into()));
        }
        let span = (k - 1) * self.dilation + 1;
        match self.padding {
            Padding::Same => {
                if k % 2 == 0 {
                    return Err(Error::shape("conv2d", format!("same padding needs an odd kernel, got {k}")));
                }
                let out = input.div_ceil(self.stride);
                let total = ((out - 1) * self.stride + span).saturating_sub(input);
                Ok((out, total / 2))
            }
            Padding::Valid => {
                if span > input {
                    return Err(Error::shape(
                        "conv2d",
                        format!("kernel span {span} exceeds input extent {input}"),
                    ));
                }
                Ok(((input - span) / self.stride + 1, 0))
            }
        }
    }

    pub fn output_shape(&self, input: Shape, kernel: Shape) -> Result<Shape> {
        if kernel.c != input.c {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {} input channels, input has {}", kernel.c, input.c),
            ));
        }
        if kernel.h != kernel.w {
            return Err(Error::shape("conv2d", "kernel must be square"));
        }
        let (oh, _) = self.axis(input.h, kernel.h)?;
        let (ow, _) = self.axis(input.w, kernel.w)?;
        Ok(Shape::new(input.n, kernel.n, oh, ow))
    }
}

/// Range of output columns whose tap `k_off` lands inside `[0, len)`.
#[inline]
fn valid_range(len: usize, out: usize, stride: usize, k_off: usize, pad: usize) -> (usize, usize) {
    // ix = o * stride + k_off - pad
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    let hi_num = len as isize - 1 + pad as isize - k_off as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

struct Plan {
    out: Shape,
    pad_y: usize,
    pad_x: usize,
    k: usize,
    stride: usize,
    dilation: usize,
}

impl Plan {
    fn new(input: Shape, kernel: Shape, geo: ConvGeometry) -> Result<Self> {
        let out = geo.output_shape(input, kernel)?;
        let (_, pad_y) = geo.axis(input.h, kernel.h)?;
        let (_, pad_x) = geo.axis(input.w, kernel.w)?;
        Ok(Plan {
            out,
            pad_y,
            pad_x,
            k: kernel.h,
            stride: geo.stride,
            dilation: geo.dilation,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad_x == 0 && self.pad_y == 0
    }

    /// Visits every (input row, output row, tap) triple for one input/output plane pair.
    #[inline]
    fn for_each_row(
        &self,
        input: Shape,
        ky: usize,
        kx: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize),
    ) {
        let (ylo, yhi) = valid_range(input.h, self.out.h, self.stride, ky * self.dilation, self.pad_y);
        let (xlo, xhi) = valid_range(input.w, self.out.w, self.stride, kx * self.dilation, self.pad_x);
        if xlo >= xhi {
            return;
        }
        for oy in ylo..yhi {
            let iy = oy * self.stride + ky * self.dilation - self.pad_y;
            let ix0 = xlo * self.stride + kx * self.dilation - self.pad_x;
            f(iy * input.w + ix0, oy * self.out.w + xlo, xhi - xlo, oy, iy);
        }
    }
}

impl Plan {
    /// Unfolds one sample into a `(c * k * k) × out_plane` matrix of taps, zero where a
    /// tap falls in the padding.
    fn im2col(&self, input: Shape, sample: &[f64]) -> Vec<f64> {
        let kk = self.k * self.k;
        let oplane = self.out.plane();
        let iplane = input.plane();
        let s = self.stride;
        let mut col = vec![0.0; input.c * kk * oplane];
        for ci in 0..input.c {
            let ip = &sample[ci * iplane..(ci + 1) * iplane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * kk + ky * self.k + kx) * oplane;
                    let dst = &mut col[r..r + oplane];
                    self.for_each_row(input, ky, kx, |i0, o0, len, _, _| {
                        for (j, o) in dst[o0..o0 + len].iter_mut().enumerate() {
                            *o = ip[i0 + j * s];
                        }
                    });
                }
            }
        }
        col
    }

    /// Adjoint of [`Plan::im2col`]: scatters tap gradients back onto one sample.
    fn col2im(&self, input: Shape, col: &[f64], sample: &mut [f64]) {
        let kk = self.k * self.k;
        let oplane = self.out.plane();
        let iplane = input.plane();
        let s = self.stride;
        for ci in 0..input.c {
            let ip = &mut sample[ci * iplane..(ci + 1) * iplane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * kk + ky * self.k + kx) * oplane;
                    let src = &col[r..r + oplane];
                    self.for_each_row(input, ky, kx, |i0, o0, len, _, _| {
                        for (j, g) in src[o0..o0 + len].iter().enumerate() {
                            ip[i0 + j * s] += g;
                        }
                    });
                }
            }
        }
    }
}

/// Convolution as a matrix product per sample. Each output starts from its bias and
/// accumulates taps in (input channel, kernel row, kernel column) order.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    geo: ConvGeometry,
) -> Result<Tensor> {
    let is = input.shape();
    let ks = kernel.shape();
    let plan = Plan::new(is, ks, geo)?;
    if let Some(b) = bias {
        if b.numel() != ks.n {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries for {} output channels", b.numel(), ks.n),
            ));
        }
    }
    let os = plan.out;
    let mut out = Tensor::zeros(os);
    let depth = is.c * plan.k * plan.k;
    let oplane = os.plane();
    let isample = is.c * is.plane();
    let osample = os.c * oplane;
    for b in 0..is.n {
        let x = &input.data()[b * isample..(b + 1) * isample];
        let dst = &mut out.data_mut()[b * osample..(b + 1) * osample];
        if let Some(bias) = bias {
            for (plane, &v) in dst.chunks_mut(oplane).zip(bias.data()) {
                plane.fill(v);
            }
        }
        if plan.is_pointwise() {
            gemm::gemm_acc(ks.n, depth, oplane, kernel.data(), x, dst);
        } else {
            let col = plan.im2col(is, x);
            gemm::gemm_acc(ks.n, depth, oplane, kernel.data(), &col, dst);
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Adjoint of [`conv2d_forward`] for upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    geo: ConvGeometry,
    need_input: bool,
) -> Result<ConvGrads> {
    let is = input.shape();
    let ks = kernel.shape();
    let plan = Plan::new(is, ks, geo)?;
    let os = plan.out;
    if grad_out.shape() != os {
        return Err(Error::shape("conv2d backward", format!("{} vs {os}", grad_out.shape())));
    }
    let mut gin = Tensor::zeros(if need_input { is } else { Shape::new(0, 0, 0, 0) });
    let mut gk = Tensor::zeros(ks);
    let mut gb = Tensor::zeros(Shape::new(1, ks.n, 1, 1));
    let depth = is.c * plan.k * plan.k;
    let oplane = os.plane();
    let isample = is.c * is.plane();
    let osample = os.c * oplane;
    let wt = if need_input {
        gemm::transpose(ks.n, depth, kernel.data())
    } else {
        Vec::new()
    };
    for b in 0..is.n {
        let g = &grad_out.data()[b * osample..(b + 1) * osample];
        for (acc, plane) in gb.data_mut().iter_mut().zip(g.chunks(oplane)) {
            *acc += plane.iter().sum::<f64>();
        }
        let x = &input.data()[b * isample..(b + 1) * isample];
        let col;
        let taps = if plan.is_pointwise() {
            x
        } else {
            col = plan.im2col(is, x);
            &col[..]
        };
        let taps_t = gemm::transpose(depth, oplane, taps);
        gemm::gemm_acc(ks.n, oplane, depth, g, &taps_t, gk.data_mut());
        if need_input {
            let gx = &mut gin.data_mut()[b * isample..(b + 1) * isample];
            if plan.is_pointwise() {
                gemm::gemm_acc(depth, ks.n, oplane, &wt, g, gx);
            } else {
                let mut gcol = vec![0.0; depth * oplane];
                gemm::gemm_acc(depth, ks.n, oplane, &wt, g, &mut gcol);
                plan.col2im(is, &gcol, gx);
            }
        }
    }
    Ok(ConvGrads {
        input: gin,
        kernel: gk,
        bias: gb,
    })
}

/// Source taps for align-corners interpolation from `input` to `output` samples:
/// `(lower index, upper index, weight of upper)`.
pub fn interp_axis(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            if output == 1 || input == 1 {
                return (0, 0, 0.0);
            }
            let num = o * (input - 1);
            let den = output - 1;
            let i0 = (num / den).min(input - 1);
            let frac = (num - i0 * den) as f64 / den as f64;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, frac)
        })
        .collect()
}

pub fn upsample_forward(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape();
    if out_h < s.h || out_w < s.w {
        return Err(Error::shape(
            "bilinear_upsample",
            format!("cannot downsample {}x{} to {out_h}x{out_w}", s.h, s.w),
        ));
    }
    Ok(crate::tensor::resize_bilinear(input, out_h, out_w))
}

pub fn upsample_backward(grad_out: &Tensor, input_shape: Shape) -> Tensor {
    let os = grad_out.shape();
    let mut gin = Tensor::zeros(input_shape);
    let ys = interp_axis(input_shape.h, os.h);
    let xs = interp_axis(input_shape.w, os.w);
    let iw = input_shape.w;
    let iplane = input_shape.plane();
    for b in 0..os.n {
        for c in 0..os.c {
            let g = grad_out.plane(b, c);
            let base = (b * os.c + c) * iplane;
            let dst = &mut gin.data_mut()[base..base + iplane];
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let v = g[oy * os.w + ox];
                    let top = v * (1.0 - fy);
                    let bot = v * fy;
                    dst[y0 * iw + x0] += top * (1.0 - fx);
                    dst[y0 * iw + x1] += top * fx;
                    dst[y1 * iw + x0] += bot * (1.0 - fx);
                    dst[y1 * iw + x1] += bot * fx;
                }
            }
        }
    }
    gin
}
