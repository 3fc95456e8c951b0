use crate::error::{Error, Result};
use crate::nn::conv::output_extent;
use crate::nn::elementwise::same_shape;
use crate::tensor::{Scalar, Shape, Tensor};

/// Max pooling geometry. Padding cells never win the max.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolWindow {
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolWindow {
    pub fn new(window: usize, stride: usize) -> Self {
        PoolWindow {
            window,
            stride,
            pad: 0,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.window > input.h() + 2 * self.pad || self.window > input.w() + 2 * self.pad {
            return Err(Error::Geometry {
                op: "maxpool",
                detail: format!("window {} larger than input {input}", self.window),
            });
        }
        Ok(Shape::new(
            input.n(),
            input.c(),
            output_extent("maxpool", input.h(), self.window, self.stride, self.pad)?,
            output_extent("maxpool", input.w(), self.window, self.stride, self.pad)?,
        ))
    }
}

/// For every output cell, the flat input index that produced the maximum
/// (first in scan order on ties).
fn argmax_map<T: Scalar>(input: &Tensor<T>, pool: PoolWindow) -> Result<(Shape, Vec<usize>)> {
    let is = input.shape();
    let os = pool.output_shape(is)?;
    let mut arg = Vec::with_capacity(os.len());
    for n in 0..is.n() {
        for c in 0..is.c() {
            for oh in 0..os.h() {
                for ow in 0..os.w() {
                    let mut best: Option<(usize, T)> = None;
                    for k1 in 0..pool.window {
                        let ih = (oh * pool.stride + k1) as isize - pool.pad as isize;
                        if ih < 0 || ih >= is.h() as isize {
                            continue;
                        }
                        for k2 in 0..pool.window {
                            let iw = (ow * pool.stride + k2) as isize - pool.pad as isize;
                            if iw < 0 || iw >= is.w() as isize {
                                continue;
                            }
                            let idx = input.index(n, c, ih as usize, iw as usize);
                            let v = input.data()[idx];
                            if best.is_none_or(|(_, b)| v > b) {
                                best = Some((idx, v));
                            }
                        }
                    }
                    let (idx, _) = best.ok_or_else(|| Error::Geometry {
                        op: "maxpool",
                        detail: "window covers only padding".into(),
                    })?;
                    arg.push(idx);
                }
            }
        }
    }
    Ok((os, arg))
}

pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>, pool: PoolWindow) -> Result<Tensor<T>> {
    if pool.window == 0 || pool.stride == 0 {
        return Err(Error::Geometry {
            op: "maxpool",
            detail: "window and stride must be >= 1".into(),
        });
    }
    let (os, arg) = argmax_map(input, pool)?;
    Tensor::from_vec(os, arg.into_iter().map(|i| input.data()[i]).collect())
}

pub fn maxpool_backward<T: Scalar>(
    input: &Tensor<T>,
    pool: PoolWindow,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (os, arg) = argmax_map(input, pool)?;
    same_shape("maxpool backward", os, upstream.shape())?;
    let mut gx = Tensor::zeros(input.shape())?;
    for (&i, &g) in arg.iter().zip(upstream.data()) {
        gx.data_mut()[i] = gx.data()[i] + g;
    }
    Ok(gx)
}

/// Global average pooling to `(N, C, 1, 1)`.
pub fn gap_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let plane = s.plane();
    let data = input
        .data()
        .chunks(plane)
        .map(|ch| T::from_f64(ch.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
        .collect();
    Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), data).expect("gap shape")
}

pub fn gap_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    same_shape("gap backward", Shape::new(s.n(), s.c(), 1, 1), upstream.shape())?;
    let plane = s.plane();
    let inv = T::from_f64(1.0 / plane as f64);
    let data = upstream
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
        .collect();
    Tensor::from_vec(s, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::reference::maxpool_naive;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_max() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool_forward(&x, PoolWindow::new(2, 2)).unwrap().data(), &[4.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::filled(Shape::new(2, 3, 6, 6), 1.5f32).unwrap();
        let y = maxpool_forward(&x, PoolWindow::new(2, 2)).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 3, 3));
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn random_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Shape::new(1, 2, 4, 4);
        let x = Tensor::from_vec(s, (0..s.len()).map(|_| rng.random::<f32>()).collect()).unwrap();
        let p = PoolWindow::new(2, 2);
        assert_eq!(maxpool_forward(&x, p).unwrap(), maxpool_naive(&x, p).unwrap());
    }

    #[test]
    fn oversized_window_errors() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2)).unwrap();
        assert!(maxpool_forward(&x, PoolWindow::new(3, 1)).is_err());
    }

    #[test]
    fn floor_output_extent() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 5, 5)).unwrap();
        let y = maxpool_forward(&x, PoolWindow::new(2, 2)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
    }

    #[test]
    fn padded_stem_pool() {
        let p = PoolWindow {
            window: 3,
            stride: 2,
            pad: 1,
        };
        assert_eq!(p.output_shape(Shape::new(1, 64, 112, 112)).unwrap(), Shape::new(1, 64, 56, 56));
    }

    #[test]
    fn gap_means() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap_forward(&x).data(), &[2.5]);
        let c = Tensor::filled(Shape::new(2, 3, 3, 5), -0.75f32).unwrap();
        assert!(gap_forward(&c).data().iter().all(|&v| v == -0.75));
    }

    #[test]
    fn gap_matches_direct_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = Shape::new(3, 4, 5, 6);
        let x = Tensor::from_vec(s, (0..s.len()).map(|_| rng.random_range(-2.0f32..2.0)).collect())
            .unwrap();
        let y = gap_forward(&x);
        for n in 0..3 {
            for c in 0..4 {
                let mut sum = 0.0f64;
                for h in 0..5 {
                    for w in 0..6 {
                        sum += x.at(n, c, h, w) as f64;
                    }
                }
                assert!((y.at(n, c, 0, 0) as f64 - sum / 30.0).abs() < 1e-6);
            }
        }
    }
}
