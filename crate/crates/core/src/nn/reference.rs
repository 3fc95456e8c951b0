//! Direct-loop reference kernels. Slow and obvious; the optimized kernels are
//! checked against these.

use crate::error::Result;
use crate::nn::conv::ConvKernel;
use crate::nn::pool::PoolWindow;
use crate::tensor::{Scalar, Tensor};

pub fn conv2d_naive<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    let os = kernel.output_shape(input.shape())?;
    let is = input.shape();
    let k = kernel.size();
    let mut out = Tensor::zeros(os)?;
    for n in 0..os.n() {
        for d in 0..os.c() {
            for oh in 0..os.h() {
                for ow in 0..os.w() {
                    let mut acc = kernel.bias_at(d).as_f64();
                    for c in 0..is.c() {
                        for k1 in 0..k {
                            for k2 in 0..k {
                                let ih = (oh * kernel.stride + k1) as isize - kernel.pad as isize;
                                let iw = (ow * kernel.stride + k2) as isize - kernel.pad as isize;
                                if ih < 0 || iw < 0 || ih >= is.h() as isize || iw >= is.w() as isize {
                                    continue;
                                }
                                acc += kernel.weights.at(d, c, k1, k2).as_f64()
                                    * input.at(n, c, ih as usize, iw as usize).as_f64();
                            }
                        }
                    }
                    out.set(n, d, oh, ow, T::from_f64(acc));
                }
            }
        }
    }
    Ok(out)
}

pub fn maxpool_naive<T: Scalar>(input: &Tensor<T>, pool: PoolWindow) -> Result<Tensor<T>> {
    let os = pool.output_shape(input.shape())?;
    let mut out = Tensor::zeros(os)?;
    for n in 0..os.n() {
        for c in 0..os.c() {
            for oh in 0..os.h() {
                for ow in 0..os.w() {
                    let mut best = T::neg_infinity();
                    for k1 in 0..pool.window {
                        for k2 in 0..pool.window {
                            let ih = (oh * pool.stride + k1) as isize - pool.pad as isize;
                            let iw = (ow * pool.stride + k2) as isize - pool.pad as isize;
                            if ih >= 0
                                && iw >= 0
                                && (ih as usize) < input.shape().h()
                                && (iw as usize) < input.shape().w()
                            {
                                best = best.max(input.at(n, c, ih as usize, iw as usize));
                            }
                        }
                    }
                    out.set(n, c, oh, ow, best);
                }
            }
        }
    }
    Ok(out)
}
