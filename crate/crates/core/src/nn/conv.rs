//! 2-D convolution via patch gather (im2col) and a dense product.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// A bank of `D` square filters over `C` input channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T = f32> {
    /// `(D, C, K, K)`.
    pub weights: Tensor<T>,
    /// Length `D` when present.
    pub bias: Option<Vec<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(weights: Tensor<T>, bias: Option<Vec<T>>, stride: usize, pad: usize) -> Result<Self> {
        let s = weights.shape();
        if s.h() != s.w() {
            return Err(Error::Geometry {
                op: "conv2d",
                detail: format!("kernel must be square, got {s}"),
            });
        }
        if stride == 0 {
            return Err(Error::Geometry {
                op: "conv2d",
                detail: "stride must be positive".into(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != s.n() {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: format!("{} filters", s.n()),
                    right: format!("{} biases", b.len()),
                });
            }
        }
        Ok(ConvKernel {
            weights,
            bias,
            stride,
            pad,
        })
    }

    pub fn filters(&self) -> usize {
        self.weights.shape().n()
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().c()
    }

    pub fn size(&self) -> usize {
        self.weights.shape().h()
    }

    /// Number of weights feeding one output scalar (`C·K·K`).
    pub fn fan_in(&self) -> usize {
        self.weights.shape().sample_len()
    }

    pub fn bias_at(&self, d: usize) -> T {
        self.bias.as_ref().map_or(T::zero(), |b| b[d])
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c() != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: format!("input {input}"),
                right: format!("kernel {}", self.weights.shape()),
            });
        }
        let k = self.size();
        Ok(Shape::new(
            input.n(),
            self.filters(),
            output_extent("conv2d", input.h(), k, self.stride, self.pad)?,
            output_extent("conv2d", input.w(), k, self.stride, self.pad)?,
        ))
    }
}

/// Output extent of a sliding window, floored the way Caffe and most
/// frameworks do. Errors when the padded input is smaller than the window.
pub fn output_extent(op: &'static str, size: usize, window: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = size + 2 * pad;
    if window == 0 || stride == 0 || padded < window {
        return Err(Error::Geometry {
            op,
            detail: format!(
                "window {window} (stride {stride}, pad {pad}) does not fit extent {size}"
            ),
        });
    }
    Ok((padded - window) / stride + 1)
}

/// Gathers every receptive field of one sample into a `(C·K·K) × (Ho·Wo)`
/// matrix, widened to `f64`.
pub(crate) fn im2col<T: Scalar>(
    sample: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let cols = ho * wo;
    let mut out = vec![0.0f64; c * k * k * cols];
    for ci in 0..c {
        let plane = &sample[ci * h * w..(ci + 1) * h * w];
        for k1 in 0..k {
            for k2 in 0..k {
                let row = (ci * k + k1) * k + k2;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oh in 0..ho {
                    let ih = (oh * stride + k1) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = (ow * stride + k2) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[oh * wo + ow] = src[iw as usize].as_f64();
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scatter-adds a column matrix back onto an input-shaped buffer.
fn col2im(
    col: &[f64],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    out: &mut [f64],
) {
    let cols = ho * wo;
    for ci in 0..c {
        for k1 in 0..k {
            for k2 in 0..k {
                let row = (ci * k + k1) * k + k2;
                let src = &col[row * cols..(row + 1) * cols];
                for oh in 0..ho {
                    let ih = (oh * stride + k1) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for ow in 0..wo {
                        let iw = (ow * stride + k2) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            out[(ci * h + ih as usize) * w + iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    let ishape = input.shape();
    let oshape = kernel.output_shape(ishape)?;
    let (k, d) = (kernel.size(), kernel.filters());
    let rows = kernel.fan_in();
    let cols = oshape.plane();
    let weights: Vec<f64> = kernel.weights.data().iter().map(|v| v.as_f64()).collect();
    let mut out = Tensor::zeros(oshape)?;
    out.data_mut()
        .par_chunks_mut(oshape.sample_len())
        .enumerate()
        .for_each(|(n, dst)| {
            let col = im2col(
                input.sample(n),
                (ishape.c(), ishape.h(), ishape.w()),
                k,
                kernel.stride,
                kernel.pad,
                (oshape.h(), oshape.w()),
            );
            let mut acc = vec![0.0f64; cols];
            for di in 0..d {
                acc.fill(kernel.bias_at(di).as_f64());
                let wrow = &weights[di * rows..(di + 1) * rows];
                for (r, &wv) in wrow.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let src = &col[r * cols..(r + 1) * cols];
                    for (a, &x) in acc.iter_mut().zip(src) {
                        *a += wv * x;
                    }
                }
                for (o, &a) in dst[di * cols..(di + 1) * cols].iter_mut().zip(&acc) {
                    *o = T::from_f64(a);
                }
            }
        });
    Ok(out)
}

/// Returns `(input_gradient, kernel_gradient)`; the kernel gradient carries
/// the same stride/pad and a bias gradient iff the kernel has a bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, ConvKernel<T>)> {
    let ishape = input.shape();
    let oshape = kernel.output_shape(ishape)?;
    if upstream.shape() != oshape {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            left: format!("upstream {}", upstream.shape()),
            right: format!("output {oshape}"),
        });
    }
    let (k, d) = (kernel.size(), kernel.filters());
    let rows = kernel.fan_in();
    let cols = oshape.plane();
    let geom = (ishape.c(), ishape.h(), ishape.w());
    let ogeom = (oshape.h(), oshape.w());
    let weights: Vec<f64> = kernel.weights.data().iter().map(|v| v.as_f64()).collect();

    // Per-sample partial gradients, reduced afterwards in sample order so the
    // result is independent of how rayon splits the batch.
    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..ishape.n())
        .into_par_iter()
        .map(|n| {
            let col = im2col(input.sample(n), geom, k, kernel.stride, kernel.pad, ogeom);
            let g: Vec<f64> = upstream.sample(n).iter().map(|v| v.as_f64()).collect();
            let mut gw = vec![0.0f64; d * rows];
            let mut gb = vec![0.0f64; d];
            let mut gcol = vec![0.0f64; rows * cols];
            for di in 0..d {
                let grow = &g[di * cols..(di + 1) * cols];
                gb[di] = grow.iter().sum();
                for r in 0..rows {
                    let src = &col[r * cols..(r + 1) * cols];
                    gw[di * rows + r] = src.iter().zip(grow).map(|(a, b)| a * b).sum();
                    let wv = weights[di * rows + r];
                    if wv != 0.0 {
                        for (gc, &gv) in gcol[r * cols..(r + 1) * cols].iter_mut().zip(grow) {
                            *gc += wv * gv;
                        }
                    }
                }
            }
            let mut gx = vec![0.0f64; ishape.sample_len()];
            col2im(&gcol, geom, k, kernel.stride, kernel.pad, ogeom, &mut gx);
            (gx, gw, gb)
        })
        .collect();

    let mut gx = Vec::with_capacity(ishape.len());
    let mut gw = vec![0.0f64; d * rows];
    let mut gb = vec![0.0f64; d];
    for (px, pw, pb) in partials {
        gx.extend(px.into_iter().map(T::from_f64));
        gw.iter_mut().zip(pw).for_each(|(a, b)| *a += b);
        gb.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
    }
    let grad_kernel = ConvKernel {
        weights: Tensor::from_vec(kernel.weights.shape(), gw.into_iter().map(T::from_f64).collect())?,
        bias: kernel
            .bias
            .as_ref()
            .map(|_| gb.into_iter().map(T::from_f64).collect()),
        stride: kernel.stride,
        pad: kernel.pad,
    };
    Ok((Tensor::from_vec(ishape, gx)?, grad_kernel))
}
