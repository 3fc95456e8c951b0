//! Channel subset selection.
//!
//! The next-layer criterion removes, one channel at a time, the channel whose
//! removal keeps `Σ_i (Σ_{j∈T} x̂_ij)²` smallest, where `T` is the removed
//! set. Baseline criteria (absolute weight sum, average percentage of zeros,
//! uniform random) are provided for comparison.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::forward_scaled;
use crate::graph::{LayerKind, ModelGraph};
use crate::rng::{stream_rng, Stream};
use crate::sampling::SampleSet;
use crate::tensor::Scalar;

/// Largest channel count [`brute_force_select`] accepts.
pub const BRUTE_FORCE_MAX_CHANNELS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Kept channels, ascending.
    pub kept: Vec<usize>,
    /// Removed channels in the order they were removed.
    pub removed: Vec<usize>,
    /// Removal objective after each removal (empty for score-based criteria).
    pub objective_trace: Vec<f64>,
    pub rate: f64,
}

impl SelectionResult {
    pub fn channels(&self) -> usize {
        self.kept.len() + self.removed.len()
    }

    /// Final removal objective, zero when nothing was removed.
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }

    fn keep_all(channels: usize, rate: f64) -> Self {
        SelectionResult {
            kept: (0..channels).collect(),
            removed: Vec::new(),
            objective_trace: Vec::new(),
            rate,
        }
    }

    fn from_removed(channels: usize, removed: Vec<usize>, trace: Vec<f64>, rate: f64) -> Self {
        let mut gone = vec![false; channels];
        removed.iter().for_each(|&c| gone[c] = true);
        SelectionResult {
            kept: (0..channels).filter(|&c| !gone[c]).collect(),
            removed,
            objective_trace: trace,
            rate,
        }
    }
}

/// `round(channels · rate)` with halves rounded away from zero, at least one.
pub fn kept_count(channels: usize, rate: f64) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("compression rate {rate} outside (0, 1]")));
    }
    if channels == 0 {
        return Err(Error::InvalidArgument("no channels".into()));
    }
    Ok(((channels as f64 * rate).round() as usize).clamp(1, channels))
}

/// Removal objective evaluated from scratch for the set `removed`.
pub fn removal_objective(samples: &SampleSet, removed: &[usize]) -> f64 {
    (0..samples.rows())
        .map(|i| {
            let row = samples.row(i);
            let s: f64 = removed.iter().map(|&c| row[c]).sum();
            s * s
        })
        .sum()
}

/// Running per-row sums `Σ_{j∈T} x̂_ij` over the current removed set.
#[derive(Clone, Debug)]
pub struct GreedyState {
    partial: Vec<f64>,
    removed: Vec<bool>,
    objective: f64,
}

impl GreedyState {
    pub fn new(samples: &SampleSet) -> Self {
        GreedyState {
            partial: vec![0.0; samples.rows()],
            removed: vec![false; samples.channels],
            objective: 0.0,
        }
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn is_removed(&self, c: usize) -> bool {
        self.removed.get(c).copied().unwrap_or(false)
    }

    fn check(&self, candidate: usize) -> Result<()> {
        if candidate >= self.removed.len() {
            return Err(Error::InvalidArgument(format!("channel {candidate} out of range")));
        }
        if self.removed[candidate] {
            return Err(Error::InvalidArgument(format!("channel {candidate} already removed")));
        }
        Ok(())
    }

    /// Objective if `candidate` joined the removed set: `Σ_i (partial_i + x̂_ic)²`.
    pub fn incremental_objective(&self, samples: &SampleSet, candidate: usize) -> Result<f64> {
        self.check(candidate)?;
        Ok(self.value_with(samples, candidate))
    }

    fn value_with(&self, samples: &SampleSet, c: usize) -> f64 {
        self.partial
            .iter()
            .zip(samples.column(c))
            .map(|(p, x)| {
                let s = p + x;
                s * s
            })
            .sum()
    }

    pub fn remove(&mut self, samples: &SampleSet, candidate: usize) -> Result<()> {
        self.check(candidate)?;
        for (p, x) in self.partial.iter_mut().zip(samples.column(candidate)) {
            *p += x;
        }
        self.removed[candidate] = true;
        self.objective = self.partial.iter().map(|p| p * p).sum();
        Ok(())
    }
}

/// Greedy removal until `round(C·rate)` channels remain. Each step moves the
/// remaining channel with the smallest resulting objective (lowest index on
/// ties) into the removed set.
pub fn greedy_select(samples: &SampleSet, rate: f64) -> Result<SelectionResult> {
    let c = samples.channels;
    let keep = kept_count(c, rate)?;
    let mut state = GreedyState::new(samples);
    let mut removed = Vec::with_capacity(c - keep);
    let mut trace = Vec::with_capacity(c - keep);
    while removed.len() < c - keep {
        let values: Vec<(usize, f64)> = (0..c)
            .into_par_iter()
            .filter(|&j| !state.is_removed(j))
            .map(|j| (j, state.value_with(samples, j)))
            .collect();
        let mut best = values[0];
        for &(j, v) in &values[1..] {
            if v < best.1 {
                best = (j, v);
            }
        }
        state.remove(samples, best.0)?;
        removed.push(best.0);
        trace.push(state.objective());
    }
    Ok(SelectionResult::from_removed(c, removed, trace, rate))
}

/// Exhaustive search over all removed sets of the required size. The
/// lexicographically first optimum wins ties.
pub fn brute_force_select(samples: &SampleSet, rate: f64) -> Result<SelectionResult> {
    let c = samples.channels;
    if c > BRUTE_FORCE_MAX_CHANNELS {
        return Err(Error::InvalidArgument(format!(
            "brute force limited to {BRUTE_FORCE_MAX_CHANNELS} channels, got {c}"
        )));
    }
    let t = c - kept_count(c, rate)?;
    if t == 0 {
        return Ok(SelectionResult::keep_all(c, rate));
    }
    let mut combo: Vec<usize> = (0..t).collect();
    let mut best = (f64::INFINITY, combo.clone());
    loop {
        let v = removal_objective(samples, &combo);
        if v < best.0 {
            best = (v, combo.clone());
        }
        // advance to the next combination in lexicographic order
        let Some(i) = (0..t).rev().find(|&i| combo[i] < c - t + i) else {
            break;
        };
        combo[i] += 1;
        for j in i + 1..t {
            combo[j] = combo[j - 1] + 1;
        }
    }
    Ok(SelectionResult::from_removed(c, best.1, vec![best.0], rate))
}

/// Keeps the `round(C·rate)` best-scoring channels. With `keep_high`, larger
/// scores are better; ties favor the lower index. Removal order runs from the
/// worst score upward.
pub fn select_by_score(scores: &[f64], rate: f64, keep_high: bool) -> Result<SelectionResult> {
    let c = scores.len();
    let keep = kept_count(c, rate)?;
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let ord = scores[a].total_cmp(&scores[b]);
        let ord = if keep_high { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    let removed: Vec<usize> = order[keep..].iter().rev().copied().collect();
    Ok(SelectionResult::from_removed(c, removed, Vec::new(), rate))
}

/// `s_d = Σ |W(d, :, :, :)|` for every filter of conv `layer`.
pub fn criterion_weight_sum<T: Scalar>(model: &ModelGraph<T>, layer: &str) -> Result<Vec<f64>> {
    let k = model.conv(layer)?;
    let len = k.fan_in();
    Ok(k.weights
        .data()
        .chunks(len)
        .map(|f| f.iter().map(|v| v.as_f64().abs()).sum())
        .collect())
}

/// Fraction of exact zeros in each output channel of the ReLU that follows
/// conv `layer` (possibly through bn_affine), averaged over the dataset.
pub fn criterion_apoz<T: Scalar>(model: &ModelGraph<T>, dataset: &Dataset, layer: &str) -> Result<Vec<f64>> {
    let arch = &model.arch;
    let start = arch.index_of(layer)?;
    if !matches!(arch.layers[start].kind, LayerKind::Conv { .. }) {
        return Err(Error::Site {
            layer: layer.into(),
            reason: "APoZ needs a conv layer".into(),
        });
    }
    let mut cur = start;
    let relu = loop {
        let consumers = arch.consumers(cur);
        let [next] = consumers[..] else {
            return Err(Error::Site {
                layer: layer.into(),
                reason: "no ReLU follows the layer".into(),
            });
        };
        match arch.layers[next].kind {
            LayerKind::Relu => break next,
            LayerKind::BnAffine => cur = next,
            _ => {
                return Err(Error::Site {
                    layer: layer.into(),
                    reason: "no ReLU follows the layer".into(),
                })
            }
        }
    };
    let n = dataset.len();
    let mut zeros: Vec<u64> = Vec::new();
    let mut total = 0u64;
    for start in (0..n).step_by(32) {
        let idx: Vec<usize> = (start..(start + 32).min(n)).collect();
        let x = dataset.images.gather_samples(&idx)?.cast::<T>();
        let acts = forward_scaled(model, &x, &[], Some(relu))?;
        let a = &acts[relu];
        let s = a.shape();
        zeros.resize(s.c(), 0);
        for (i, plane) in a.data().chunks(s.plane()).enumerate() {
            zeros[i % s.c()] += plane.iter().filter(|v| **v == T::zero()).count() as u64;
        }
        total += (s.n() * s.plane()) as u64;
    }
    Ok(zeros.into_iter().map(|z| z as f64 / total as f64).collect())
}

/// Uniformly random kept set of the required size.
pub fn criterion_random(channels: usize, rate: f64, seed: u64) -> Result<SelectionResult> {
    let keep = kept_count(channels, rate)?;
    let mut rng = stream_rng(seed, Stream::Selection, &[channels as u64]);
    let kept = index::sample(&mut rng, channels, keep).into_vec();
    let mut flag = vec![false; channels];
    kept.iter().for_each(|&c| flag[c] = true);
    let removed = (0..channels).filter(|&c| !flag[c]).collect();
    Ok(SelectionResult::from_removed(channels, removed, Vec::new(), rate))
}
