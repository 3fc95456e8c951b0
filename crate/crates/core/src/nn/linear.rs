use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Fully connected layer. `weights` is row-major `inputs × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcParams<T = f32> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> FcParams<T> {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::ShapeMismatch {
                op: "fc",
                left: format!("{inputs}x{outputs} layer"),
                right: format!("{} weights / {} biases", weights.len(), bias.len()),
            });
        }
        Ok(FcParams {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.sample_len() != self.inputs {
            return Err(Error::ShapeMismatch {
                op: "fc",
                left: format!("input {shape} (flattened {})", shape.sample_len()),
                right: format!("{} weight rows", self.inputs),
            });
        }
        Ok(())
    }
}

/// Affine map of each flattened sample, producing `(N, outputs, 1, 1)`.
pub fn fc_forward<T: Scalar>(input: &Tensor<T>, fc: &FcParams<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    fc.check_input(s)?;
    let mut out = Vec::with_capacity(s.n() * fc.outputs);
    let mut acc = vec![0.0f64; fc.outputs];
    for n in 0..s.n() {
        for (a, b) in acc.iter_mut().zip(&fc.bias) {
            *a = b.as_f64();
        }
        for (i, &x) in input.sample(n).iter().enumerate() {
            let x = x.as_f64();
            if x == 0.0 {
                continue;
            }
            let row = &fc.weights[i * fc.outputs..(i + 1) * fc.outputs];
            for (a, w) in acc.iter_mut().zip(row) {
                *a += x * w.as_f64();
            }
        }
        out.extend(acc.iter().map(|&a| T::from_f64(a)));
    }
    Tensor::from_vec(Shape::new(s.n(), fc.outputs, 1, 1), out)
}

pub fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    fc: &FcParams<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, FcParams<T>)> {
    let s = input.shape();
    fc.check_input(s)?;
    let expect = Shape::new(s.n(), fc.outputs, 1, 1);
    if upstream.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "fc backward",
            left: format!("upstream {}", upstream.shape()),
            right: format!("output {expect}"),
        });
    }
    let mut gw = vec![0.0f64; fc.inputs * fc.outputs];
    let mut gb = vec![0.0f64; fc.outputs];
    let mut gx = Vec::with_capacity(s.len());
    for n in 0..s.n() {
        let g: Vec<f64> = upstream.sample(n).iter().map(|v| v.as_f64()).collect();
        gb.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        for (i, &x) in input.sample(n).iter().enumerate() {
            let row = &fc.weights[i * fc.outputs..(i + 1) * fc.outputs];
            let grow = &mut gw[i * fc.outputs..(i + 1) * fc.outputs];
            let x = x.as_f64();
            let mut dx = 0.0f64;
            for o in 0..fc.outputs {
                grow[o] += x * g[o];
                dx += row[o].as_f64() * g[o];
            }
            gx.push(T::from_f64(dx));
        }
    }
    Ok((
        Tensor::from_vec(s, gx)?,
        FcParams {
            inputs: fc.inputs,
            outputs: fc.outputs,
            weights: gw.into_iter().map(T::from_f64).collect(),
            bias: gb.into_iter().map(T::from_f64).collect(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_passes_through() {
        let n = 3;
        let mut w = vec![0.0f32; n * n];
        (0..n).for_each(|i| w[i * n + i] = 1.0);
        let fc = FcParams::new(n, n, w, vec![0.0; n]).unwrap();
        let x = Tensor::from_vec(Shape::new(2, n, 1, 1), vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        assert_eq!(fc_forward(&x, &fc).unwrap(), x);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let fc = FcParams::new(4, 2, vec![0.0f32; 8], vec![1.5, -2.0]).unwrap();
        let x = Tensor::filled(Shape::new(3, 1, 2, 2), 7.0).unwrap();
        let y = fc_forward(&x, &fc).unwrap();
        for n in 0..3 {
            assert_eq!(y.sample(n), &[1.5, -2.0]);
        }
    }

    #[test]
    fn matches_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w: Vec<f32> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f32> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fc = FcParams::new(3, 4, w.clone(), b.clone()).unwrap();
        let y = fc_forward(&Tensor::from_vec(Shape::new(1, 3, 1, 1), x.clone()).unwrap(), &fc).unwrap();
        for o in 0..4 {
            let want: f64 = b[o] as f64 + (0..3).map(|i| x[i] as f64 * w[i * 4 + o] as f64).sum::<f64>();
            assert!((y.data()[o] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let fc = FcParams::new(4, 2, vec![0.0f32; 8], vec![0.0; 2]).unwrap();
        let x = Tensor::zeros(Shape::new(1, 3, 1, 1)).unwrap();
        assert!(fc_forward(&x, &fc).is_err());
    }
}
