//! Structural edits: folding channel scales into the next layer, removing
//! filters with their downstream channels, and locating the prunable convs of
//! residual blocks.

use crate::error::{Error, Result};
use crate::graph::{Architecture, LayerKind, LayerParams, ModelGraph, Source, PROJECTION_TAG};
use crate::lsq::ScalingVector;
use crate::sampling::PruneSite;
use crate::tensor::{Scalar, Shape, Tensor};

fn check_kept(kept: &[usize], channels: usize) -> Result<()> {
    if kept.is_empty() {
        return Err(Error::InvalidArgument("kept set is empty".into()));
    }
    if kept.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("kept set must be strictly ascending".into()));
    }
    if kept[kept.len() - 1] >= channels {
        return Err(Error::InvalidArgument(format!(
            "kept channel {} out of range for {channels} channels",
            kept[kept.len() - 1]
        )));
    }
    Ok(())
}

/// Multiplies input channel `kept[j]` of every filter in `site.next` by
/// `w[j]`, in place.
pub fn fold_scaling_in_place<T: Scalar>(
    model: &mut ModelGraph<T>,
    site: &PruneSite,
    kept: &[usize],
    w: &ScalingVector,
) -> Result<()> {
    if w.len() != kept.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scaling factors for {} kept channels",
            w.len(),
            kept.len()
        )));
    }
    let k = model.conv_mut(&site.next)?;
    let s = k.weights.shape();
    if let Some(&c) = kept.iter().find(|&&c| c >= s.c()) {
        return Err(Error::InvalidArgument(format!("channel {c} out of range for `{}`", site.next)));
    }
    let plane = s.plane();
    for d in 0..s.n() {
        for (&c, &f) in kept.iter().zip(w.as_slice()) {
            let off = (d * s.c() + c) * plane;
            for v in &mut k.weights.data_mut()[off..off + plane] {
                *v = T::from_f64(v.as_f64() * f);
            }
        }
    }
    Ok(())
}

pub fn fold_scaling<T: Scalar>(
    model: &ModelGraph<T>,
    site: &PruneSite,
    kept: &[usize],
    w: &ScalingVector,
) -> Result<ModelGraph<T>> {
    let mut m = model.clone();
    fold_scaling_in_place(&mut m, site, kept, w)?;
    Ok(m)
}

fn select<T: Copy>(v: &[T], kept: &[usize]) -> Vec<T> {
    kept.iter().map(|&i| v[i]).collect()
}

/// Keeps only filters `kept` of `site.layer`, the matching channels of any
/// bn_affine on the path, and the matching input channels of `site.next`.
/// Leaves the model untouched on error.
pub fn prune_layer_pair_in_place<T: Scalar>(
    model: &mut ModelGraph<T>,
    site: &PruneSite,
    kept: &[usize],
) -> Result<()> {
    let resolved = PruneSite::resolve(&model.arch, &site.layer)?;
    if resolved.next != site.next {
        return Err(Error::Site {
            layer: site.layer.clone(),
            reason: format!("is read by `{}`, not `{}`", resolved.next, site.next),
        });
    }
    let filters = model.conv(&site.layer)?.filters();
    check_kept(kept, filters)?;
    if kept.len() == filters {
        return Ok(());
    }

    // layer i: drop filters
    let k = model.conv(&site.layer)?;
    let ws = k.weights.shape();
    let len = ws.sample_len();
    let mut w = Vec::with_capacity(kept.len() * len);
    for &d in kept {
        w.extend_from_slice(&k.weights.data()[d * len..(d + 1) * len]);
    }
    let new_weights = Tensor::from_vec(Shape::new(kept.len(), ws.c(), ws.h(), ws.w()), w)?;
    let new_bias = k.bias.as_ref().map(|b| select(b, kept));

    // layer i+1: drop input channels
    let nk = model.conv(&site.next)?;
    let ns = nk.weights.shape();
    let plane = ns.plane();
    let mut nw = Vec::with_capacity(ns.n() * kept.len() * plane);
    for d in 0..ns.n() {
        for &c in kept {
            let off = (d * ns.c() + c) * plane;
            nw.extend_from_slice(&nk.weights.data()[off..off + plane]);
        }
    }
    let next_weights = Tensor::from_vec(Shape::new(ns.n(), kept.len(), ns.h(), ns.w()), nw)?;

    for id in &resolved.path {
        if let Some(LayerParams::Bn(b)) = model.params.get_mut(id) {
            b.scale = select(&b.scale, kept);
            b.shift = select(&b.shift, kept);
        }
    }
    let k = model.conv_mut(&site.layer)?;
    k.weights = new_weights;
    k.bias = new_bias;
    model.conv_mut(&site.next)?.weights = next_weights;
    let idx = model.arch.index_of(&site.layer)?;
    if let LayerKind::Conv { filters, .. } = &mut model.arch.layers[idx].kind {
        *filters = kept.len();
    }
    model.validate()
}

pub fn prune_layer_pair<T: Scalar>(model: &ModelGraph<T>, site: &PruneSite, kept: &[usize]) -> Result<ModelGraph<T>> {
    let mut m = model.clone();
    prune_layer_pair_in_place(&mut m, site, kept)?;
    Ok(m)
}

/// Sites for the convs inside each residual branch except the branch's last
/// conv: for a bottleneck, (first, second) and (second, third). Projection
/// shortcuts and block outputs are never returned.
pub fn resnet_block_sites(arch: &Architecture) -> Vec<PruneSite> {
    let mut sites = Vec::new();
    for (j, l) in arch.layers.iter().enumerate() {
        if !matches!(l.kind, LayerKind::AddJunction) {
            continue;
        }
        for src in arch.sources(j) {
            let Some(tail) = branch_tail(arch, src) else {
                continue;
            };
            let convs = branch_convs(arch, tail);
            for pair in convs.windows(2) {
                let (a, b) = (&arch.layers[pair[0]].id, &arch.layers[pair[1]].id);
                if let Ok(s) = PruneSite::new(arch, a, b) {
                    sites.push(s);
                }
            }
        }
    }
    sites
}

/// The last non-projection conv feeding a junction input through
/// channel-wise layers.
fn branch_tail(arch: &Architecture, src: Source) -> Option<usize> {
    let mut cur = match src {
        Source::Layer(i) => i,
        Source::Input => return None,
    };
    loop {
        let l = &arch.layers[cur];
        match l.kind {
            LayerKind::Conv { .. } => return (!l.has_tag(PROJECTION_TAG)).then_some(cur),
            LayerKind::BnAffine | LayerKind::Relu => match arch.sources(cur)[0] {
                Source::Layer(i) if arch.consumers(i).len() == 1 => cur = i,
                _ => return None,
            },
            _ => return None,
        }
    }
}

/// Convs of the single-consumer chain ending at `tail`, in forward order.
fn branch_convs(arch: &Architecture, tail: usize) -> Vec<usize> {
    let mut convs = vec![tail];
    let mut cur = tail;
    while let Source::Layer(i) = arch.sources(cur)[0] {
        if arch.consumers(i).len() != 1 {
            break;
        }
        let l = &arch.layers[i];
        match l.kind {
            LayerKind::Conv { .. } if !l.has_tag(PROJECTION_TAG) => convs.push(i),
            LayerKind::BnAffine | LayerKind::Relu => {}
            _ => break,
        }
        cur = i;
    }
    convs.reverse();
    convs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;

    #[test]
    fn single_bottleneck_has_two_sites() {
        let mut b = zoo::NetBuilder::new();
        b.conv_nobias("stem", 8, 3, 1, 1).bn("bn").relu("r");
        zoo::bottleneck(&mut b, "x", 4, 8, 1, false);
        b.gap("g").fc("fc", 2);
        let a = b.build("one", [3, 6, 6], 2).unwrap();
        let s = resnet_block_sites(&a);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].layer.as_str(), s[0].next.as_str()), ("resx_branch2a", "resx_branch2b"));
        assert_eq!((s[1].layer.as_str(), s[1].next.as_str()), ("resx_branch2b", "resx_branch2c"));
        assert_eq!(s[0].path, vec!["bnx_branch2a", "resx_branch2a_relu"]);
    }

    #[test]
    fn plain_chain_has_no_block_sites() {
        assert!(resnet_block_sites(&zoo::vgg16(10).unwrap()).is_empty());
    }

    #[test]
    fn block_output_conv_is_refused() {
        let a = zoo::toy_resnet([3, 8, 8], 2).unwrap();
        let err = PruneSite::resolve(&a, "res2a_branch2c").unwrap_err();
        assert!(matches!(err, Error::JunctionConstraint { ref junction, .. } if junction == "res2a"), "{err}");
        assert!(PruneSite::resolve(&a, "res3a_branch1").is_err());
    }

    #[test]
    fn kept_set_validated() {
        let m = ModelGraph::<f32>::init(zoo::toy_chain([3, 8, 8], [4, 4, 4], 2).unwrap(), 0).unwrap();
        let site = PruneSite::resolve(&m.arch, "conv1").unwrap();
        assert!(prune_layer_pair(&m, &site, &[]).is_err());
        assert!(prune_layer_pair(&m, &site, &[2, 1]).is_err());
        assert!(prune_layer_pair(&m, &site, &[0, 4]).is_err());
        let w = ScalingVector(vec![1.0]);
        assert!(fold_scaling(&m, &site, &[0, 1], &w).is_err());
    }

    #[test]
    fn keep_all_is_identity() {
        let m = ModelGraph::<f32>::init(zoo::toy_chain([3, 8, 8], [4, 4, 4], 2).unwrap(), 0).unwrap();
        let site = PruneSite::resolve(&m.arch, "conv2").unwrap();
        assert!(prune_layer_pair(&m, &site, &[0, 1, 2, 3]).unwrap().bit_eq(&m));
        let ones = ScalingVector::ones(4);
        assert!(fold_scaling(&m, &site, &[0, 1, 2, 3], &ones).unwrap().bit_eq(&m));
    }
}
