//! Graph execution: forward passes (optionally with per-channel input
//! scaling at chosen layers), backpropagation and the classification loss.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, LayerParams, ModelGraph, Source};
use crate::nn::{self, PoolWindow};
use crate::tensor::{Scalar, Shape, Tensor};

/// Multiplies channel `c` of `layer`'s (first) input by `factors[c]` before the
/// layer runs. A factor of zero removes the channel's contribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScale {
    pub layer: String,
    pub factors: Vec<f64>,
}

fn apply_scale<T: Scalar>(x: &Tensor<T>, factors: &[f64]) -> Result<Tensor<T>> {
    let s = x.shape();
    if factors.len() != s.c() {
        return Err(Error::ShapeMismatch {
            op: "channel scale",
            left: format!("input {s}"),
            right: format!("{} factors", factors.len()),
        });
    }
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(s.plane()).enumerate() {
        let f = factors[i % s.c()];
        chunk
            .iter_mut()
            .for_each(|v| *v = T::from_f64(v.as_f64() * f));
    }
    Ok(out)
}

fn pool_of(kind: &LayerKind) -> PoolWindow {
    match kind {
        LayerKind::Maxpool { window, stride, pad } => PoolWindow {
            window: *window,
            stride: *stride,
            pad: *pad,
        },
        _ => unreachable!("not a pooling layer"),
    }
}

fn layer_forward<T: Scalar>(
    model: &ModelGraph<T>,
    idx: usize,
    ins: &[&Tensor<T>],
) -> Result<Tensor<T>> {
    let l = &model.arch.layers[idx];
    let params = model.params.get(&l.id);
    let x = ins[0];
    let missing = || Error::Graph(format!("layer `{}` has no parameters", l.id));
    Ok(match &l.kind {
        LayerKind::Conv { .. } => match params {
            Some(LayerParams::Conv(k)) => nn::conv2d_forward(x, k)?,
            _ => return Err(missing()),
        },
        LayerKind::Fc { .. } => match params {
            Some(LayerParams::Fc(f)) => nn::fc_forward(x, f)?,
            _ => return Err(missing()),
        },
        LayerKind::BnAffine => match params {
            Some(LayerParams::Bn(b)) => nn::bn_affine_forward(x, b)?,
            _ => return Err(missing()),
        },
        LayerKind::Relu => nn::relu_forward(x),
        LayerKind::Maxpool { .. } => nn::maxpool_forward(x, pool_of(&l.kind))?,
        LayerKind::Gap => nn::gap_forward(x),
        LayerKind::AddJunction => nn::add_forward(x, ins[1])?,
        LayerKind::Softmax => nn::softmax_forward(x),
    })
}

/// Output of every layer, in layer order.
pub fn forward_all<T: Scalar>(model: &ModelGraph<T>, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    forward_scaled(model, input, &[], None)
}

/// Final network output.
pub fn forward<T: Scalar>(model: &ModelGraph<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(forward_all(model, input)?.pop().expect("non-empty graph"))
}

/// Forward pass with channel scaling hooks, stopping after layer `stop` when
/// given.
pub fn forward_scaled<T: Scalar>(
    model: &ModelGraph<T>,
    input: &Tensor<T>,
    scales: &[ChannelScale],
    stop: Option<usize>,
) -> Result<Vec<Tensor<T>>> {
    let arch = &model.arch;
    let expect = arch.input(input.shape().n());
    if input.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "network input",
            left: input.shape().to_string(),
            right: expect.to_string(),
        });
    }
    for s in scales {
        arch.index_of(&s.layer)?;
    }
    let last = stop.unwrap_or(arch.output_index());
    let mut outs: Vec<Tensor<T>> = Vec::with_capacity(last + 1);
    for idx in 0..=last {
        let srcs = arch.sources(idx);
        let mut owned: Vec<Tensor<T>> = Vec::new();
        let mut ins: Vec<&Tensor<T>> = srcs
            .iter()
            .map(|s| match s {
                Source::Input => input,
                Source::Layer(j) => &outs[*j],
            })
            .collect();
        if let Some(s) = scales.iter().find(|s| s.layer == arch.layers[idx].id) {
            owned.push(apply_scale(ins[0], &s.factors)?);
            ins[0] = &owned[0];
        }
        let y = layer_forward(model, idx, &ins)?;
        outs.push(y);
    }
    Ok(outs)
}

/// Index of the layer whose output is treated as logits: the softmax input
/// when the network ends in softmax, the last layer otherwise.
pub fn logits_index<T: Scalar>(model: &ModelGraph<T>) -> usize {
    let arch = &model.arch;
    let last = arch.output_index();
    match (&arch.layers[last].kind, arch.sources(last)[0]) {
        (LayerKind::Softmax, Source::Layer(j)) => j,
        _ => last,
    }
}

/// Gradients of one layer: one tensor per input, plus parameter gradients.
pub type LayerGrads<T> = (Vec<Tensor<T>>, Option<LayerParams<T>>);

/// Backward pass of a single layer given its forward inputs.
pub fn layer_backward<T: Scalar>(
    model: &ModelGraph<T>,
    idx: usize,
    ins: &[&Tensor<T>],
    upstream: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let l = &model.arch.layers[idx];
    let x = ins[0];
    let params = model.params.get(&l.id);
    let missing = || Error::Graph(format!("layer `{}` has no parameters", l.id));
    Ok(match &l.kind {
        LayerKind::Conv { .. } => match params {
            Some(LayerParams::Conv(k)) => {
                let (gx, gk) = nn::conv2d_backward(x, k, upstream)?;
                (vec![gx], Some(LayerParams::Conv(gk)))
            }
            _ => return Err(missing()),
        },
        LayerKind::Fc { .. } => match params {
            Some(LayerParams::Fc(f)) => {
                let (gx, gf) = nn::fc_backward(x, f, upstream)?;
                (vec![gx], Some(LayerParams::Fc(gf)))
            }
            _ => return Err(missing()),
        },
        LayerKind::BnAffine => match params {
            Some(LayerParams::Bn(b)) => {
                let (gx, gb) = nn::bn_affine_backward(x, b, upstream)?;
                (vec![gx], Some(LayerParams::Bn(gb)))
            }
            _ => return Err(missing()),
        },
        LayerKind::Relu => (vec![nn::relu_backward(x, upstream)?], None),
        LayerKind::Maxpool { .. } => (vec![nn::maxpool_backward(x, pool_of(&l.kind), upstream)?], None),
        LayerKind::Gap => (vec![nn::gap_backward(x, upstream)?], None),
        LayerKind::Softmax => (vec![nn::softmax_backward(x, upstream)?], None),
        LayerKind::AddJunction => {
            nn::elementwise::same_shape("add_junction backward", x.shape(), upstream.shape())?;
            (vec![upstream.clone(), upstream.clone()], None)
        }
    })
}

/// Parameter gradients keyed by layer id, plus the gradient w.r.t. the
/// network input.
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    pub params: BTreeMap<String, LayerParams<T>>,
    pub input: Tensor<T>,
}

/// Backpropagates `grad` (the gradient w.r.t. the output of layer `from`)
/// through the graph. `acts` are the forward outputs from [`forward_all`].
pub fn backward<T: Scalar>(
    model: &ModelGraph<T>,
    input: &Tensor<T>,
    acts: &[Tensor<T>],
    from: usize,
    grad: Tensor<T>,
) -> Result<Gradients<T>> {
    let arch = &model.arch;
    if grad.shape() != acts[from].shape() {
        return Err(Error::ShapeMismatch {
            op: "backward",
            left: format!("gradient {}", grad.shape()),
            right: format!("output of `{}` {}", arch.layers[from].id, acts[from].shape()),
        });
    }
    let mut pending: Vec<Option<Tensor<T>>> = vec![None; from + 1];
    pending[from] = Some(grad);
    let mut input_grad: Option<Tensor<T>> = None;
    let mut params = BTreeMap::new();
    for idx in (0..=from).rev() {
        let Some(g) = pending[idx].take() else {
            continue;
        };
        let srcs = arch.sources(idx);
        let ins: Vec<&Tensor<T>> = srcs
            .iter()
            .map(|s| match s {
                Source::Input => input,
                Source::Layer(j) => &acts[*j],
            })
            .collect();
        let (gins, gp) = layer_backward(model, idx, &ins, &g)?;
        if let Some(gp) = gp {
            params.insert(arch.layers[idx].id.clone(), gp);
        }
        for (src, gi) in srcs.into_iter().zip(gins) {
            let slot = match src {
                Source::Input => &mut input_grad,
                Source::Layer(j) => &mut pending[j],
            };
            *slot = Some(match slot.take() {
                None => gi,
                Some(prev) => nn::add_forward(&prev, &gi)?,
            });
        }
    }
    let input = match input_grad {
        Some(g) => g,
        None => Tensor::zeros(input.shape())?,
    };
    Ok(Gradients { params, input })
}

/// Summed softmax cross-entropy over the batch, the gradient of that sum
/// w.r.t. the logits, and the number of argmax hits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>, usize)> {
    let s = logits.shape();
    if labels.len() != s.n() {
        return Err(Error::ShapeMismatch {
            op: "cross entropy",
            left: format!("logits {s}"),
            right: format!("{} labels", labels.len()),
        });
    }
    let k = s.sample_len();
    let probs = nn::softmax_forward(logits);
    let mut grad = probs.clone();
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for (n, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::InvalidArgument(format!("label {label} >= {k} outputs")));
        }
        let p = probs.sample(n);
        loss -= p[label].as_f64().max(1e-300).ln();
        if argmax(logits.sample(n)) == label {
            correct += 1;
        }
        let g = &mut grad.sample_mut(n)[label];
        *g = *g - T::one();
    }
    Ok((loss, grad, correct))
}

/// Index of the largest value (lowest index on ties).
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Forward in mini-batches of `batch` samples, returning the final output.
pub fn forward_batched<T: Scalar>(model: &ModelGraph<T>, input: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
    let n = input.shape().n();
    let mut data = Vec::new();
    let mut shape: Option<Shape> = None;
    for start in (0..n).step_by(batch.max(1)) {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let y = forward(model, &input.gather_samples(&idx)?)?;
        shape.get_or_insert(y.shape());
        data.extend_from_slice(y.data());
    }
    let s = shape.expect("non-empty input");
    Tensor::from_vec(Shape::new(n, s.c(), s.h(), s.w()), data)
}
