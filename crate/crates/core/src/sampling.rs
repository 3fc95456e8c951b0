//! Training examples for channel selection.
//!
//! For a pruning site `(layer, next)`, each example is one scalar `y` of
//! `next`'s pre-activation output together with the per-channel partial sums
//! `x̂_c` of the receptive field that produced it, so that
//! `Σ_c x̂_c = y − bias`.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::forward_scaled;
use crate::graph::{Architecture, LayerKind, Source, PROJECTION_TAG};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Shape, Tensor};
use crate::graph::ModelGraph;

/// A conv layer whose filters are pruned, and the conv that reads its
/// channels and guides the selection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneSite {
    pub layer: String,
    pub next: String,
    /// Channel-wise layers (ReLU, pooling, bn_affine) between the two.
    pub path: Vec<String>,
}

impl PruneSite {
    /// Follows `layer`'s output through channel-wise layers to the conv that
    /// consumes it.
    pub fn resolve(arch: &Architecture, layer: &str) -> Result<PruneSite> {
        let site_err = |reason: String| Error::Site {
            layer: layer.to_string(),
            reason,
        };
        let start = arch.index_of(layer)?;
        let spec = &arch.layers[start];
        if !matches!(spec.kind, LayerKind::Conv { .. }) {
            return Err(site_err(format!("is a {} layer, not conv", spec.kind.name())));
        }
        if spec.has_tag(PROJECTION_TAG) {
            return Err(site_err("projection shortcuts are not pruned".into()));
        }
        let mut cur = start;
        let mut path = Vec::new();
        loop {
            let consumers = arch.consumers(cur);
            if let Some(&j) = consumers
                .iter()
                .find(|&&j| matches!(arch.layers[j].kind, LayerKind::AddJunction))
            {
                return Err(Error::JunctionConstraint {
                    layer: layer.to_string(),
                    junction: arch.layers[j].id.clone(),
                });
            }
            let [next] = consumers[..] else {
                return Err(site_err(format!(
                    "`{}` feeds {} layers; only single-consumer chains can be pruned",
                    arch.layers[cur].id,
                    consumers.len()
                )));
            };
            let l = &arch.layers[next];
            match l.kind {
                LayerKind::Conv { .. } => {
                    return Ok(PruneSite {
                        layer: layer.to_string(),
                        next: l.id.clone(),
                        path,
                    })
                }
                ref k if k.is_channelwise() => {
                    path.push(l.id.clone());
                    cur = next;
                }
                ref k => {
                    return Err(site_err(format!(
                        "reaches `{}` ({}) before any conv layer",
                        l.id,
                        k.name()
                    )))
                }
            }
        }
    }

    /// Resolves `layer` and checks that its guiding conv is `next`.
    pub fn new(arch: &Architecture, layer: &str, next: &str) -> Result<PruneSite> {
        let s = Self::resolve(arch, layer)?;
        if s.next != next {
            return Err(Error::Site {
                layer: layer.to_string(),
                reason: format!("is read by `{}`, not `{next}`", s.next),
            });
        }
        Ok(s)
    }

    /// Every conv layer that forms a valid site, in layer order.
    pub fn all(arch: &Architecture) -> Vec<PruneSite> {
        arch.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
            .filter_map(|l| Self::resolve(arch, &l.id).ok())
            .collect()
    }
}

/// `m` examples over `channels` channels. Row `i` of `xhat` holds
/// `x̂_{i,1..C}`; `yhat[i]` is the matching `y − b`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub site: PruneSite,
    pub channels: usize,
    pub xhat: Vec<f64>,
    pub yhat: Vec<f64>,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(site: PruneSite, channels: usize, xhat: Vec<f64>, yhat: Vec<f64>, seed: u64) -> Result<Self> {
        if channels == 0 || xhat.len() != channels * yhat.len() {
            return Err(Error::InvalidArgument(format!(
                "{} xhat values for {} rows of {channels} channels",
                xhat.len(),
                yhat.len()
            )));
        }
        Ok(SampleSet {
            site,
            channels,
            xhat,
            yhat,
            seed,
        })
    }

    pub fn rows(&self) -> usize {
        self.yhat.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.xhat[i * self.channels..(i + 1) * self.channels]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.xhat.iter().skip(c).step_by(self.channels).copied()
    }

    /// Copy with every value multiplied by `a`.
    pub fn scaled(&self, a: f64) -> SampleSet {
        SampleSet {
            xhat: self.xhat.iter().map(|v| v * a).collect(),
            yhat: self.yhat.iter().map(|v| v * a).collect(),
            ..self.clone()
        }
    }

    /// `Σ ŷ²`, the error of keeping nothing.
    pub fn energy(&self) -> f64 {
        self.yhat.iter().map(|y| y * y).sum()
    }

    /// CSV with a header of channel ids followed by `yhat`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.channels).map(|c| format!("c{c}")).collect();
        header.push("yhat".into());
        w.write_record(&header)?;
        for i in 0..self.rows() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.yhat[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| csv::Error::from(e).into())
    }
}

/// Draws `images` distinct images and `locations` distinct
/// `(output channel, row, col)` positions of `next`'s pre-activation output
/// per image, and records the channel decomposition of each.
pub fn collect_samples<T: Scalar>(
    model: &ModelGraph<T>,
    dataset: &Dataset,
    site: &PruneSite,
    images: usize,
    locations: usize,
    seed: u64,
) -> Result<SampleSet> {
    let arch = &model.arch;
    let next_idx = arch.index_of(&site.next)?;
    let resolved = PruneSite::resolve(arch, &site.layer)?;
    if resolved.next != site.next {
        return Err(Error::Site {
            layer: site.layer.clone(),
            reason: format!("is read by `{}`, not `{}`", resolved.next, site.next),
        });
    }
    let kernel = model.conv(&site.next)?;
    let channels = kernel.in_channels();
    if channels < 2 {
        return Err(Error::Site {
            layer: site.layer.clone(),
            reason: "only one channel; nothing to select".into(),
        });
    }
    if images == 0 || locations == 0 {
        return Err(Error::InvalidArgument("need at least one image and one location".into()));
    }
    if images > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "{images} images requested, dataset has {}",
            dataset.len()
        )));
    }
    if dataset.image_shape() != arch.input_shape {
        return Err(Error::ShapeMismatch {
            op: "collect_samples",
            left: format!("dataset images {:?}", dataset.image_shape()),
            right: format!("model input {:?}", arch.input_shape),
        });
    }
    let in_shape = arch.input_shapes()?[next_idx];
    let k = kernel.size();
    if in_shape.h() + 2 * kernel.pad < k || in_shape.w() + 2 * kernel.pad < k {
        return Err(Error::Geometry {
            op: "collect_samples",
            detail: format!("`{}` input {in_shape} smaller than its {k}x{k} kernel", site.next),
        });
    }
    let out_shape = kernel.output_shape(in_shape)?;
    let positions = out_shape.sample_len();
    if locations > positions {
        return Err(Error::InvalidArgument(format!(
            "{locations} locations requested, `{}` has only {positions} outputs",
            site.next
        )));
    }

    let mut pick = stream_rng(seed, Stream::Sampling, &[0]);
    let chosen = index::sample(&mut pick, dataset.len(), images).into_vec();
    let src = match arch.sources(next_idx)[0] {
        Source::Layer(j) => Some(j),
        Source::Input => None,
    };

    let per_image: Vec<(Vec<f64>, Vec<f64>)> = chosen
        .par_iter()
        .enumerate()
        .map(|(draw, &img)| -> Result<(Vec<f64>, Vec<f64>)> {
            let x: Tensor<T> = dataset.images.gather_samples(&[img])?.cast();
            let acts = forward_scaled(model, &x, &[], Some(next_idx))?;
            let window = match src {
                Some(j) => &acts[j],
                None => &x,
            };
            let y = &acts[next_idx];
            let mut rng = stream_rng(seed, Stream::Sampling, &[1, draw as u64]);
            let picks = index::sample(&mut rng, positions, locations).into_vec();
            let mut xs = Vec::with_capacity(locations * channels);
            let mut ys = Vec::with_capacity(locations);
            for p in picks {
                let (d, rest) = (p / out_shape.plane(), p % out_shape.plane());
                let (oh, ow) = (rest / out_shape.w(), rest % out_shape.w());
                for c in 0..channels {
                    xs.push(partial_response(window, kernel.weights.data(), k, kernel.stride, kernel.pad, channels, d, c, oh, ow));
                }
                ys.push(y.at(0, d, oh, ow).as_f64() - kernel.bias_at(d).as_f64());
            }
            Ok((xs, ys))
        })
        .collect::<Result<_>>()?;

    let mut xhat = Vec::with_capacity(images * locations * channels);
    let mut yhat = Vec::with_capacity(images * locations);
    for (xs, ys) in per_image {
        xhat.extend(xs);
        yhat.extend(ys);
    }
    SampleSet::new(site.clone(), channels, xhat, yhat, seed)
}

/// `x̂_c`: filter `d`'s channel-`c` slice applied to channel `c` of the
/// window at output position `(oh, ow)`.
#[allow(clippy::too_many_arguments)]
fn partial_response<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    k: usize,
    stride: usize,
    pad: usize,
    channels: usize,
    d: usize,
    c: usize,
    oh: usize,
    ow: usize,
) -> f64 {
    let s: Shape = input.shape();
    let base = (d * channels + c) * k * k;
    let mut acc = 0.0f64;
    for k1 in 0..k {
        let ih = (oh * stride + k1) as isize - pad as isize;
        if ih < 0 || ih >= s.h() as isize {
            continue;
        }
        for k2 in 0..k {
            let iw = (ow * stride + k2) as isize - pad as isize;
            if iw < 0 || iw >= s.w() as isize {
                continue;
            }
            acc += weights[base + k1 * k + k2].as_f64() * input.at(0, c, ih as usize, iw as usize).as_f64();
        }
    }
    acc
}

/// `Σ_i (ŷ_i − Σ_{j∈keep} w_j·x̂_ij)²`, with `w` defaulting to all ones.
pub fn reconstruction_error(samples: &SampleSet, keep: &[usize], w: Option<&[f64]>) -> Result<f64> {
    if let Some(&c) = keep.iter().find(|&&c| c >= samples.channels) {
        return Err(Error::InvalidArgument(format!(
            "channel {c} out of range for {} channels",
            samples.channels
        )));
    }
    if let Some(w) = w {
        if w.len() != keep.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} kept channels",
                w.len(),
                keep.len()
            )));
        }
    }
    let mut total = 0.0f64;
    for i in 0..samples.rows() {
        let row = samples.row(i);
        let approx: f64 = match w {
            Some(w) => keep.iter().zip(w).map(|(&c, wv)| wv * row[c]).sum(),
            None => keep.iter().map(|&c| row[c]).sum(),
        };
        let r = samples.yhat[i] - approx;
        total += r * r;
    }
    Ok(total)
}
