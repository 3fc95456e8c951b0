use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the upstream gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("relu backward", input.shape(), upstream.shape())?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Inference-time batch normalization folded to a per-channel affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct BnAffine<T = f32> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

impl<T: Scalar> BnAffine<T> {
    pub fn identity(channels: usize) -> Self {
        BnAffine {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    fn check(&self, shape: Shape) -> Result<()> {
        if self.scale.len() != shape.c() || self.shift.len() != shape.c() {
            return Err(Error::ShapeMismatch {
                op: "bn_affine",
                left: format!("input {shape}"),
                right: format!("{} scales / {} shifts", self.scale.len(), self.shift.len()),
            });
        }
        Ok(())
    }
}

pub fn bn_affine_forward<T: Scalar>(input: &Tensor<T>, bn: &BnAffine<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    bn.check(s)?;
    let mut out = input.clone();
    let plane = s.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let c = i % s.c();
        let (a, b) = (bn.scale[c], bn.shift[c]);
        chunk.iter_mut().for_each(|v| *v = a * *v + b);
    }
    Ok(out)
}

pub fn bn_affine_backward<T: Scalar>(
    input: &Tensor<T>,
    bn: &BnAffine<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, BnAffine<T>)> {
    let s = input.shape();
    bn.check(s)?;
    same_shape("bn_affine backward", s, upstream.shape())?;
    let plane = s.plane();
    let mut gscale = vec![0.0f64; s.c()];
    let mut gshift = vec![0.0f64; s.c()];
    let mut gx = upstream.clone();
    for (i, (gchunk, xchunk)) in gx
        .data_mut()
        .chunks_mut(plane)
        .zip(input.data().chunks(plane))
        .enumerate()
    {
        let c = i % s.c();
        for (g, &x) in gchunk.iter_mut().zip(xchunk) {
            gscale[c] += g.as_f64() * x.as_f64();
            gshift[c] += g.as_f64();
            *g = *g * bn.scale[c];
        }
    }
    Ok((
        gx,
        BnAffine {
            scale: gscale.into_iter().map(T::from_f64).collect(),
            shift: gshift.into_iter().map(T::from_f64).collect(),
        },
    ))
}

pub fn add_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add_junction", a.shape(), b.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Softmax over each sample's flattened `C·H·W` values.
pub fn softmax_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    let len = input.shape().sample_len();
    for chunk in out.data_mut().chunks_mut(len) {
        let max = chunk.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = chunk.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (o, e) in chunk.iter_mut().zip(exps) {
            *o = T::from_f64(e / total);
        }
    }
    out
}

pub fn softmax_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("softmax backward", input.shape(), upstream.shape())?;
    let p = softmax_forward(input);
    let len = input.shape().sample_len();
    let mut out = upstream.clone();
    for (g, pk) in out.data_mut().chunks_mut(len).zip(p.data().chunks(len)) {
        let dot: f64 = g.iter().zip(pk).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        for (gv, &pv) in g.iter_mut().zip(pk) {
            *gv = T::from_f64(pv.as_f64() * (gv.as_f64() - dot));
        }
    }
    Ok(out)
}

pub(crate) fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            left: a.to_string(),
            right: b.to_string(),
        });
    }
    Ok(())
}
