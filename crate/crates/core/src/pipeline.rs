//! Layer-by-layer pruning driven by a schedule, and side-by-side comparison of
//! selection methods.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::finetune::{evaluate, train_in_place, EpochMetrics, TrainConfig};
use crate::graph::ModelGraph;
use crate::lsq::{least_squares_weights, ScalingVector};
use crate::metrics::cost_report;
use crate::rng::{derive_seed, Stream};
use crate::sampling::{collect_samples, reconstruction_error, PruneSite, SampleSet};
use crate::selection::{
    criterion_apoz, criterion_random, criterion_weight_sum, greedy_select, kept_count, select_by_score,
    SelectionResult,
};
use crate::surgery::{fold_scaling_in_place, prune_layer_pair_in_place};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Greedy next-layer selection followed by least-squares rescaling.
    Thinet,
    /// Greedy selection without rescaling.
    ThinetNoW,
    /// Keep the filters with the largest absolute weight sum.
    WeightSum,
    /// Keep the channels with the fewest zero activations after ReLU.
    Apoz,
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Thinet,
        Method::ThinetNoW,
        Method::WeightSum,
        Method::Apoz,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Thinet => "thinet",
            Method::ThinetNoW => "thinet_no_w",
            Method::WeightSum => "weight_sum",
            Method::Apoz => "apoz",
            Method::Random => "random",
        }
    }

    /// Whether selection itself reads activations.
    pub fn needs_data(self) -> bool {
        matches!(self, Method::Thinet | Method::ThinetNoW | Method::Apoz)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::InvalidArgument(format!("unknown method `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub layer: String,
    /// Fraction of filters kept.
    pub rate: f64,
}

pub fn load_schedule(path: impl AsRef<Path>) -> Result<Vec<ScheduleEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schedule(&text).map_err(|e| Error::InvalidArgument(format!("schedule {}: {e}", path.display())))
}

/// Parses `[{"layer": "...", "rate": 0.5}, ...]`.
pub fn parse_schedule(text: &str) -> Result<Vec<ScheduleEntry>> {
    let entries: Vec<ScheduleEntry> = serde_json::from_str(text).map_err(|e| {
        Error::InvalidArgument(format!("{e}; expected a JSON array of {{\"layer\": string, \"rate\": number in (0, 1]}}"))
    })?;
    for (i, e) in entries.iter().enumerate() {
        if !(e.rate > 0.0 && e.rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "entry {i} (`{}`): rate {} outside (0, 1]",
                e.layer, e.rate
            )));
        }
    }
    Ok(entries)
}

/// Same rate for each of `layers`.
pub fn uniform_schedule<S: AsRef<str>>(layers: &[S], rate: f64) -> Vec<ScheduleEntry> {
    layers
        .iter()
        .map(|l| ScheduleEntry {
            layer: l.as_ref().to_string(),
            rate,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Images drawn per site (capped at the dataset size).
    pub images: usize,
    /// Locations sampled per image.
    pub locations: usize,
    pub seed: u64,
    /// Fine-tuning after each site, if any.
    pub recovery: Option<TrainConfig>,
    /// Fine-tuning once all sites are pruned, if any.
    pub final_tune: Option<TrainConfig>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            images: 100,
            locations: 10,
            seed: 0,
            recovery: None,
            final_tune: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteReport {
    pub index: usize,
    pub layer: String,
    pub next: String,
    pub rate: f64,
    pub channels: usize,
    pub kept: Vec<usize>,
    /// Reconstruction error on the site's samples with the scaling actually
    /// folded into the model (all ones unless the method rescales).
    pub recon_error: Option<f64>,
    /// Same, with every kept channel at scale 1.
    pub recon_error_unscaled: Option<f64>,
    /// `Σ ŷ²` over the samples; the error of keeping nothing.
    pub energy: Option<f64>,
    /// Objective of the greedy selection, when one was run.
    pub objective: Option<f64>,
    pub params_before: u64,
    pub params_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub history: Vec<EpochMetrics>,
}

impl SiteReport {
    pub fn relative_error(&self) -> Option<f64> {
        match (self.recon_error, self.energy) {
            (Some(e), Some(t)) if t > 0.0 => Some(e / t),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub model: String,
    pub method: Method,
    pub seed: u64,
    pub sites: Vec<SiteReport>,
    pub params_before: u64,
    pub params_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub final_history: Vec<EpochMetrics>,
}

#[derive(Serialize)]
struct SiteRow<'a> {
    method: Method,
    index: usize,
    layer: &'a str,
    next: &'a str,
    rate: f64,
    channels: usize,
    kept: usize,
    recon_error: Option<f64>,
    recon_error_unscaled: Option<f64>,
    relative_error: Option<f64>,
    params_before: u64,
    params_after: u64,
    flops_before: u64,
    flops_after: u64,
}

impl PruneReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.sites {
            w.serialize(SiteRow {
                method: self.method,
                index: s.index,
                layer: &s.layer,
                next: &s.next,
                rate: s.rate,
                channels: s.channels,
                kept: s.kept.len(),
                recon_error: s.recon_error,
                recon_error_unscaled: s.recon_error_unscaled,
                relative_error: s.relative_error(),
                params_before: s.params_before,
                params_after: s.params_after,
                flops_before: s.flops_before,
                flops_after: s.flops_after,
            })?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

fn selection_for(
    model: &ModelGraph,
    data: Option<&Dataset>,
    samples: Option<&SampleSet>,
    site: &PruneSite,
    channels: usize,
    rate: f64,
    method: Method,
    seed: u64,
) -> Result<SelectionResult> {
    let missing = || Error::InvalidArgument(format!("method `{method}` needs a dataset"));
    match method {
        Method::Thinet | Method::ThinetNoW => greedy_select(samples.ok_or_else(missing)?, rate),
        Method::WeightSum => select_by_score(&criterion_weight_sum(model, &site.layer)?, rate, true),
        Method::Apoz => select_by_score(&criterion_apoz(model, data.ok_or_else(missing)?, &site.layer)?, rate, false),
        Method::Random => criterion_random(channels, rate, seed),
    }
}

/// Prunes one site of `model` in place and reports on it.
fn prune_site(
    model: &mut ModelGraph,
    data: Option<&Dataset>,
    index: usize,
    entry: &ScheduleEntry,
    method: Method,
    cfg: &PruneConfig,
) -> Result<SiteReport> {
    let site = PruneSite::resolve(&model.arch, &entry.layer)?;
    let channels = model.conv(&site.layer)?.filters();
    let keep = kept_count(channels, entry.rate)?;
    let before = cost_report(&model.arch)?;
    let samples = match data {
        Some(d) => Some(collect_samples(
            model,
            d,
            &site,
            cfg.images.min(d.len()),
            cfg.locations,
            derive_seed(cfg.seed, Stream::Sampling, &[index as u64]),
        )?),
        None if method.needs_data() => {
            return Err(Error::InvalidArgument(format!("method `{method}` needs a dataset")))
        }
        None => None,
    };

    let (kept, objective, scale) = if keep == channels {
        ((0..channels).collect::<Vec<_>>(), None, ScalingVector::ones(channels))
    } else {
        let sel_seed = derive_seed(cfg.seed, Stream::Selection, &[index as u64]);
        let sel = selection_for(model, data, samples.as_ref(), &site, channels, entry.rate, method, sel_seed)?;
        let objective = (!sel.objective_trace.is_empty()).then(|| sel.objective());
        let scale = match (method, &samples) {
            (Method::Thinet, Some(s)) => least_squares_weights(s, &sel.kept)?,
            _ => ScalingVector::ones(sel.kept.len()),
        };
        (sel.kept, objective, scale)
    };

    let (recon_error, recon_error_unscaled, energy) = match &samples {
        Some(s) => (
            Some(reconstruction_error(s, &kept, Some(scale.as_slice()))?),
            Some(reconstruction_error(s, &kept, None)?),
            Some(s.energy()),
        ),
        None => (None, None, None),
    };

    if keep < channels {
        if method == Method::Thinet {
            fold_scaling_in_place(model, &site, &kept, &scale)?;
        }
        prune_layer_pair_in_place(model, &site, &kept)?;
    }

    let mut history = Vec::new();
    if let (Some(tc), Some(d)) = (&cfg.recovery, data) {
        let tc = TrainConfig {
            seed: derive_seed(tc.seed, Stream::Shuffle, &[index as u64]),
            ..tc.clone()
        };
        history = train_in_place(model, d, &tc)?;
    }
    let after = cost_report(&model.arch)?;
    Ok(SiteReport {
        index,
        layer: site.layer,
        next: site.next,
        rate: entry.rate,
        channels,
        kept,
        recon_error,
        recon_error_unscaled,
        energy,
        objective,
        params_before: before.total_params,
        params_after: after.total_params,
        flops_before: before.total_flops,
        flops_after: after.total_flops,
        history,
    })
}

/// Applies `schedule` in order. Each site sees the model as left by the
/// previous one. Errors name the site they came from.
pub fn prune_network(
    model: &ModelGraph,
    data: Option<&Dataset>,
    schedule: &[ScheduleEntry],
    method: Method,
    cfg: &PruneConfig,
) -> Result<(ModelGraph, PruneReport)> {
    if let Some(d) = data {
        d.check_classes(model.arch.classes)?;
    }
    for e in schedule {
        PruneSite::resolve(&model.arch, &e.layer).map_err(|err| Error::at_site(&e.layer, err))?;
        kept_count(1, e.rate).map_err(|err| Error::at_site(&e.layer, err))?;
    }
    let start = cost_report(&model.arch)?;
    let mut m = model.clone();
    let mut sites = Vec::with_capacity(schedule.len());
    for (i, e) in schedule.iter().enumerate() {
        let r = prune_site(&mut m, data, i, e, method, cfg).map_err(|err| Error::at_site(&e.layer, err))?;
        sites.push(r);
    }
    let mut final_history = Vec::new();
    if let (Some(tc), Some(d)) = (&cfg.final_tune, data) {
        final_history = train_in_place(&mut m, d, tc)?;
    }
    let end = cost_report(&m.arch)?;
    let report = PruneReport {
        model: model.arch.name.clone(),
        method,
        seed: cfg.seed,
        sites,
        params_before: start.total_params,
        params_after: end.total_params,
        flops_before: start.total_flops,
        flops_after: end.total_flops,
        final_history,
    };
    Ok((m, report))
}

/// One row per (method, rate, site); `accuracy` is that of the whole pruned
/// model on the evaluation set and repeats across the method's sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    pub rate: f64,
    pub site: String,
    pub recon_error: Option<f64>,
    pub relative_error: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Prunes `layers` at each rate with each method, starting from the same
/// model every time.
pub fn compare_methods(
    model: &ModelGraph,
    data: &Dataset,
    eval: Option<&Dataset>,
    layers: &[String],
    methods: &[Method],
    rates: &[f64],
    cfg: &PruneConfig,
) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for &method in methods {
        for &rate in rates {
            let schedule = uniform_schedule(layers, rate);
            let (pruned, report) = prune_network(model, Some(data), &schedule, method, cfg)?;
            let accuracy = eval.map(|e| evaluate(&pruned, e)).transpose()?.map(|r| r.accuracy);
            rows.extend(report.sites.iter().map(|s| CompareRow {
                method,
                rate,
                site: s.layer.clone(),
                recon_error: s.recon_error,
                relative_error: s.relative_error(),
                accuracy,
            }));
        }
    }
    Ok(rows)
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
