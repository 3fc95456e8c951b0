//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thinner::data::{generate_synthetic, Dataset, SyntheticSpec};
use thinner::exec::{forward_scaled, ChannelScale};
use thinner::sampling::{PruneSite, SampleSet};
use thinner::{zoo, Architecture, ModelGraph, Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dummy_site() -> PruneSite {
    PruneSite {
        layer: "a".into(),
        next: "b".into(),
        path: Vec::new(),
    }
}

/// Random Gaussian-ish `x̂` with `ŷ` equal to the row sums, as collected
/// samples satisfy.
pub fn random_samples(seed: u64, rows: usize, channels: usize) -> SampleSet {
    let mut r = rng(seed);
    let mut xhat = Vec::with_capacity(rows * channels);
    let mut yhat = Vec::with_capacity(rows);
    // per-channel scales so that channels differ in importance
    let scales: Vec<f64> = (0..channels).map(|_| r.random_range(0.05..2.0)).collect();
    for _ in 0..rows {
        let row: Vec<f64> = scales.iter().map(|s| s * (r.random::<f64>() * 2.0 - 1.0)).collect();
        yhat.push(row.iter().sum());
        xhat.extend(row);
    }
    SampleSet::new(dummy_site(), channels, xhat, yhat, seed).unwrap()
}

/// `Σ_i (Σ_{j∈removed} x̂_ij)²`, recomputed directly.
pub fn removed_form(s: &SampleSet, removed: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..s.yhat.len() {
        let mut acc = 0.0;
        for &c in removed {
            acc += s.xhat[i * s.channels + c];
        }
        total += acc * acc;
    }
    total
}

/// `Σ_i (ŷ_i − Σ_{j∈kept} w_j x̂_ij)²`, recomputed directly.
pub fn kept_form(s: &SampleSet, kept: &[usize], w: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..s.yhat.len() {
        let mut acc = s.yhat[i];
        for (&c, &wc) in kept.iter().zip(w) {
            acc -= wc * s.xhat[i * s.channels + c];
        }
        total += acc * acc;
    }
    total
}

pub fn complement(channels: usize, set: &[usize]) -> Vec<usize> {
    (0..channels).filter(|c| !set.contains(c)).collect()
}

/// Best removed set of size `t` by bitmask enumeration.
pub fn exhaustive_best(s: &SampleSet, t: usize) -> (f64, Vec<usize>) {
    let c = s.channels;
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 0u32..(1 << c) {
        if mask.count_ones() as usize != t {
            continue;
        }
        let set: Vec<usize> = (0..c).filter(|j| mask & (1 << j) != 0).collect();
        let v = removed_form(s, &set);
        if v < best.0 {
            best = (v, set);
        }
    }
    best
}

/// Least squares by plain gradient descent with a step of 1/L, where L is a
/// bound on the largest eigenvalue of `XᵀX` (its trace).
pub fn gradient_descent_lsq(s: &SampleSet, kept: &[usize], iters: usize) -> Vec<f64> {
    let n = kept.len();
    let rows = s.yhat.len();
    let col = |i: usize, j: usize| s.xhat[i * s.channels + kept[j]];
    let trace: f64 = (0..rows).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| col(i, j).powi(2)).sum();
    let step = 1.0 / trace;
    let mut w = vec![1.0; n];
    for _ in 0..iters {
        let mut g = vec![0.0; n];
        for i in 0..rows {
            let r: f64 = (0..n).map(|j| w[j] * col(i, j)).sum::<f64>() - s.yhat[i];
            for j in 0..n {
                g[j] += r * col(i, j);
            }
        }
        for j in 0..n {
            w[j] -= step * g[j];
        }
    }
    w
}

/// The original model run with `next`'s input scaled per channel: removed
/// channels by 0, kept channel `kept[j]` by `w[j]`.
pub fn masked_forward(model: &ModelGraph, site: &PruneSite, kept: &[usize], w: &[f64], x: &Tensor) -> Tensor {
    let c = model.conv(&site.next).unwrap().in_channels();
    let mut factors = vec![0.0; c];
    for (&k, &wk) in kept.iter().zip(w) {
        factors[k] = wk;
    }
    let scale = ChannelScale {
        layer: site.next.clone(),
        factors,
    };
    forward_scaled(model, x, &[scale], None).unwrap().pop().unwrap()
}

pub fn random_input(seed: u64, n: usize, shape: [usize; 3]) -> Tensor {
    let mut r = rng(seed);
    let s = Shape::new(n, shape[0], shape[1], shape[2]);
    Tensor::from_vec(s, (0..s.len()).map(|_| r.random::<f32>() * 2.0 - 1.0).collect()).unwrap()
}

/// Random biases and bn parameters on top of a He-initialized model, so the
/// tests do not depend on zero biases.
pub fn randomized(arch: Architecture, seed: u64) -> ModelGraph {
    let mut m = ModelGraph::init(arch, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for p in m.params.values_mut() {
        match p {
            thinner::graph::LayerParams::Conv(k) => {
                if let Some(b) = &mut k.bias {
                    b.iter_mut().for_each(|v| *v = r.random::<f32>() * 0.2 - 0.1);
                }
            }
            thinner::graph::LayerParams::Fc(f) => f.bias.iter_mut().for_each(|v| *v = r.random::<f32>() * 0.2 - 0.1),
            thinner::graph::LayerParams::Bn(b) => {
                b.scale.iter_mut().for_each(|v| *v = r.random_range(0.5..1.5));
                b.shift.iter_mut().for_each(|v| *v = r.random::<f32>() * 0.2 - 0.1);
            }
        }
    }
    m
}

pub fn toy_data(classes: usize, per_class: usize, shape: [usize; 3], seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec::new(classes, per_class, shape), seed).unwrap()
}

/// A random plain chain with widths drawn from `[lo, hi]`.
pub fn random_chain(seed: u64, lo: usize, hi: usize, shape: [usize; 3], classes: usize) -> ModelGraph {
    let mut r = rng(seed);
    let widths = [r.random_range(lo..=hi), r.random_range(lo..=hi), r.random_range(lo..=hi)];
    randomized(zoo::toy_chain(shape, widths, classes).unwrap(), seed)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

pub enum Loss {
    /// `Σ r ⊙ output` of layer `from`.
    Projection(Tensor<f64>),
    /// Summed cross-entropy on the logits.
    CrossEntropy(Vec<usize>),
}

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

fn loss_value(m: &ModelGraph<f64>, x: &Tensor<f64>, from: usize, loss: &Loss) -> f64 {
    let acts = forward_scaled(m, x, &[], Some(from)).unwrap();
    match loss {
        Loss::Projection(r) => acts[from].data().iter().zip(r.data()).map(|(a, b)| a * b).sum(),
        Loss::CrossEntropy(labels) => thinner::exec::cross_entropy(&acts[from], labels).unwrap().0,
    }
}

/// Evenly spread coordinates, at most `k` of `len`.
fn coords(len: usize, k: usize) -> Vec<usize> {
    if len <= k {
        (0..len).collect()
    } else {
        (0..k).map(|i| i * len / k + (i * 7) % (len / k).max(1)).collect()
    }
}

/// Central differences with step `eps` against backpropagation for the input
/// and every parameter blob, at up to `per_blob` coordinates each. The error
/// of one coordinate is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(m: &ModelGraph<f64>, x: &Tensor<f64>, from: usize, loss: &Loss, eps: f64, per_blob: usize) -> GradCheck {
    let acts = forward_scaled(m, x, &[], Some(from)).unwrap();
    let upstream = match loss {
        Loss::Projection(r) => r.clone(),
        Loss::CrossEntropy(labels) => thinner::exec::cross_entropy(&acts[from], labels).unwrap().1,
    };
    let grads = thinner::exec::backward(m, x, &acts, from, upstream).unwrap();
    let mut out = GradCheck {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    let mut record = |a: f64, n: f64, at: String| {
        let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        out.checked += 1;
        if e > out.worst {
            out.worst = e;
            out.worst_at = format!("{at}: analytic {a:e}, numeric {n:e}");
        }
    };
    for i in coords(x.data().len(), per_blob) {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let n = (loss_value(m, &xp, from, loss) - loss_value(m, &xm, from, loss)) / (2.0 * eps);
        record(grads.input.data()[i], n, format!("input[{i}]"));
    }
    for (id, p) in &m.params {
        let Some(g) = grads.params.get(id) else {
            // a layer behind `from` gets no gradient
            continue;
        };
        let names: Vec<&str> = p.blobs().iter().map(|b| b.0).collect();
        let gvals: Vec<Vec<f64>> = g.blobs().iter().map(|b| b.2.to_vec()).collect();
        for (bi, name) in names.iter().enumerate() {
            let len = p.blobs()[bi].2.len();
            for i in coords(len, per_blob) {
                let shifted = |d: f64| {
                    let mut mm = m.clone();
                    mm.params.get_mut(id).unwrap().slices_mut()[bi][i] += d;
                    loss_value(&mm, x, from, loss)
                };
                let n = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                record(gvals[bi][i], n, format!("{id}.{name}[{i}]"));
            }
        }
    }
    out
}

pub fn random_f64(seed: u64, shape: Shape) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_vec(shape, (0..shape.len()).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}
