//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use thinner::data::{generate_synthetic, Dataset, SyntheticSpec};
use thinner::exec::forward;
use thinner::finetune::{evaluate, train, TrainConfig};
use thinner::graph::LayerSpec;
use thinner::lsq::least_squares_weights;
use thinner::metrics::cost_report;
use thinner::pipeline::{prune_network, uniform_schedule, Method, PruneConfig};
use thinner::sampling::{collect_samples, reconstruction_error, PruneSite, SampleSet};
use thinner::selection::{brute_force_select, greedy_select};
use thinner::surgery::{fold_scaling, prune_layer_pair, resnet_block_sites};
use thinner::zoo::{self, NetBuilder};
use thinner::{Architecture, LayerKind, ModelGraph};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want
}

// ---- 1. structure -------------------------------------------------------

fn structure_counts(arch: Architecture, params: f64, flops: f64, tol: f64) -> Outcome {
    let t = Instant::now();
    let r = cost_report(&arch).map_err(|e| e.to_string())?;
    let took = t.elapsed();
    check(
        close(r.total_params as f64, params, tol) && close(r.total_flops as f64, flops, tol) && took < Duration::from_secs(1),
        format!(
            "{:.2}M params (want {:.2}M), {:.2}B FLOPs (want {:.2}B), ±{}%, {} ms",
            r.total_params as f64 / 1e6,
            params / 1e6,
            r.total_flops as f64 / 1e9,
            flops / 1e9,
            tol * 100.0,
            took.as_millis()
        ),
    )
}

fn pruned_counts(model: ModelGraph, params: f64, flops: f64, tol: f64) -> Outcome {
    let schedule = uniform_schedule(&zoo::VGG16_CONVS[..10], 0.5);
    let (_, r) = prune_network(&model, None, &schedule, Method::WeightSum, &PruneConfig::default()).map_err(|e| e.to_string())?;
    check(
        close(r.params_after as f64, params, tol) && close(r.flops_after as f64, flops, tol),
        format!(
            "{:.2}M params (want {:.2}M), {:.2}B FLOPs (want {:.2}B), ±{}%",
            r.params_after as f64 / 1e6,
            params / 1e6,
            r.flops_after as f64 / 1e9,
            flops / 1e9,
            tol * 100.0
        ),
    )
}

// ---- 2. properties ------------------------------------------------------

fn collected(seed: u64) -> Vec<SampleSet> {
    let m = random_chain(seed, 3, 10, [3, 12, 12], 4);
    let data = toy_data(4, 10, [3, 12, 12], seed);
    ["conv1", "conv2"]
        .iter()
        .map(|l| {
            let site = PruneSite::resolve(&m.arch, l).unwrap();
            collect_samples(&m, &data, &site, 40, 10, seed).unwrap()
        })
        .collect()
}

fn identity() -> Outcome {
    let (mut rows, mut worst) = (0, 0.0f64);
    let nets = 6;
    for seed in 0..nets {
        for s in collected(seed) {
            for i in 0..s.rows() {
                worst = worst.max((s.row(i).iter().sum::<f64>() - s.yhat[i]).abs());
            }
            rows += s.rows();
        }
    }
    check(rows >= 1000 && worst <= 1e-4, format!("{rows} rows on {nets} nets, max |Σx̂ − ŷ| = {worst:.2e} (≤ 1e-4)"))
}

fn duality() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let sets: Vec<SampleSet> = (10..15).flat_map(collected).collect();
    let mut scaled = 0.0f64;
    for k in 0..100 {
        let s = &sets[k % sets.len()];
        // proper partitions only: both sides non-empty
        let kept = loop {
            let kept: Vec<usize> = (0..s.channels).filter(|_| r.random::<bool>()).collect();
            if !kept.is_empty() && kept.len() < s.channels {
                break kept;
            }
        };
        let removed = complement(s.channels, &kept);
        let a = reconstruction_error(s, &kept, None).unwrap();
        let b = removed_form(s, &removed);
        worst = worst.max(rel_diff(a, b));
        scaled = scaled.max((a - b).abs() / s.energy());
    }
    check(worst <= 1e-5, format!("100 proper partitions, max relative gap {worst:.2e} (≤ 1e-5), max gap / Σŷ² {scaled:.2e}"))
}

fn greedy_stepwise() -> Outcome {
    let mut steps = 0;
    for inst in 0..50u64 {
        let mut r = rng(inst);
        let c = r.random_range(2..=16);
        let rows = r.random_range(1..=200);
        let s = random_samples(1000 + inst, rows, c);
        let sel = greedy_select(&s, r.random_range(0.05..1.0)).unwrap();
        let mut removed = Vec::new();
        for &chosen in &sel.removed {
            let value = |cand: usize| {
                let mut t = removed.clone();
                t.push(cand);
                removed_form(&s, &t)
            };
            let mine = value(chosen);
            if let Some(b) = complement(c, &removed).into_iter().find(|&o| value(o) < mine * (1.0 - 1e-12)) {
                return Err(format!("instance {inst}: chose {chosen} over better {b}"));
            }
            removed.push(chosen);
            steps += 1;
        }
    }
    Ok(format!("50 instances (C ≤ 16, m ≤ 200), {steps} steps each optimal over a full rescan"))
}

fn brute_vs_greedy() -> Outcome {
    let mut worst_ratio = f64::INFINITY;
    for inst in 0..50u64 {
        let mut r = rng(500 + inst);
        let c = r.random_range(2..=12);
        let s = random_samples(2000 + inst, r.random_range(5..=150), c);
        let rate = r.random_range(0.1..0.95);
        let g = greedy_select(&s, rate).unwrap().objective();
        let b = brute_force_select(&s, rate).unwrap();
        let (oracle, _) = exhaustive_best(&s, b.removed.len());
        if b.objective() > g * (1.0 + 1e-12) || rel_diff(b.objective(), oracle) > 1e-12 {
            return Err(format!("instance {inst}: brute {} greedy {g} oracle {oracle}", b.objective()));
        }
        if b.objective() > 0.0 {
            worst_ratio = worst_ratio.min(b.objective() / g);
        }
    }
    Ok(format!("50 instances (C ≤ 12): brute ≤ greedy, brute = exhaustive oracle; min brute/greedy {worst_ratio:.3}"))
}

fn lsq_dominance() -> Outcome {
    let mut worst_gap = 0.0f64;
    for inst in 0..100u64 {
        let mut r = rng(3000 + inst);
        let c = r.random_range(3..=12);
        let s = random_samples(4000 + inst, r.random_range(3 * c..=150), c);
        let mut kept: Vec<usize> = (0..c).filter(|_| r.random::<bool>()).collect();
        if kept.is_empty() {
            kept.push(0);
        }
        let w = least_squares_weights(&s, &kept).unwrap();
        let with = reconstruction_error(&s, &kept, Some(w.as_slice())).unwrap();
        let without = reconstruction_error(&s, &kept, None).unwrap();
        if with > without * (1.0 + 1e-12) + 1e-12 {
            return Err(format!("instance {inst}: {with} > {without}"));
        }
        let gd = gradient_descent_lsq(&s, &kept, 20_000);
        worst_gap = worst_gap.max(rel_diff(with, kept_form(&s, &kept, &gd)));
    }
    check(
        worst_gap <= 1e-4,
        format!("100 instances: error(ŵ) ≤ error(1) everywhere; residual vs gradient-descent oracle max rel. gap {worst_gap:.2e} (≤ 1e-4)"),
    )
}

fn masked_gap(m: &ModelGraph, layer: &str, seed: u64) -> f64 {
    let site = PruneSite::resolve(&m.arch, layer).unwrap();
    let data = toy_data(3, 6, m.arch.input_shape, seed);
    let s = collect_samples(m, &data, &site, 12, 8, seed).unwrap();
    let sel = greedy_select(&s, 0.5).unwrap();
    let w = least_squares_weights(&s, &sel.kept).unwrap();
    let p = prune_layer_pair(&fold_scaling(m, &site, &sel.kept, &w).unwrap(), &site, &sel.kept).unwrap();
    (0..20)
        .map(|i| {
            let x = random_input(seed * 100 + i, 1, m.arch.input_shape);
            forward(&p, &x).unwrap().max_abs_diff(&masked_forward(m, &site, &sel.kept, w.as_slice(), &x))
        })
        .fold(0.0, f64::max)
}

fn surgery() -> Outcome {
    let (mut chain, mut res) = (0.0f64, 0.0f64);
    let mut n = 0;
    for seed in 0..4 {
        let m = random_chain(seed, 3, 8, [3, 8, 8], 3);
        for l in ["conv1", "conv2"] {
            chain = chain.max(masked_gap(&m, l, seed));
            n += 1;
        }
        let m = randomized(zoo::toy_resnet([3, 8, 8], 3).unwrap(), seed);
        for s in resnet_block_sites(&m.arch) {
            res = res.max(masked_gap(&m, &s.layer, seed));
            n += 1;
        }
    }
    check(
        chain <= 1e-4 && res <= 1e-4,
        format!("{n} instances × 20 inputs: max |Δ| chain {chain:.2e}, residual {res:.2e} (≤ 1e-4)"),
    )
}

fn gradients() -> Outcome {
    let single = |f: &dyn Fn(&mut NetBuilder), input: [usize; 3]| {
        let mut b = NetBuilder::new();
        f(&mut b);
        b.build("single", input, 2).unwrap()
    };
    let mut add = NetBuilder::new();
    add.conv("a", 3, 3, 1, 1).from("input").conv("b", 3, 1, 1, 0).add("sum", "a", "b");
    let cases: Vec<(&str, Architecture)> = vec![
        ("conv", single(&|b| { b.conv("c", 3, 3, 2, 1); }, [2, 6, 6])),
        ("relu", single(&|b| { b.relu("r"); }, [2, 4, 4])),
        ("maxpool", single(&|b| { b.maxpool("p", 2, 2); }, [2, 4, 4])),
        (
            "maxpool pad",
            single(
                &|b| {
                    b.push(LayerSpec::new("p", LayerKind::Maxpool { window: 3, stride: 2, pad: 1 }, &["input"]));
                },
                [2, 5, 5],
            ),
        ),
        ("gap", single(&|b| { b.gap("g"); }, [3, 4, 4])),
        ("fc", single(&|b| { b.fc("f", 4); }, [3, 2, 2])),
        ("bn_affine", single(&|b| { b.bn("n"); }, [3, 3, 3])),
        ("softmax", single(&|b| { b.softmax("s"); }, [5, 1, 1])),
        ("add_junction", add.build("add", [2, 4, 4], 2).unwrap()),
        ("toy_resnet", zoo::toy_resnet([3, 8, 8], 3).unwrap()),
    ];
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (i, (name, arch)) in cases.into_iter().enumerate() {
        let m = randomized(arch, 70 + i as u64).cast::<f64>();
        let x = random_f64(80 + i as u64, m.arch.input(2));
        let r = random_f64(90 + i as u64, forward(&m, &x).unwrap().shape());
        let g = grad_check(&m, &x, m.arch.output_index(), &Loss::Projection(r), 1e-5, 24);
        checked += g.checked;
        if g.worst > worst.0 {
            worst = (g.worst, format!("{name} {}", g.worst_at));
        }
    }
    // 3-conv toy net under cross-entropy, every coordinate, ε = 1e-3
    let m = randomized(zoo::toy_chain([2, 8, 8], [3, 3, 3], 3).unwrap(), 21).cast::<f64>();
    let x = random_f64(22, m.arch.input(3));
    let g = grad_check(&m, &x, thinner::exec::logits_index(&m), &Loss::CrossEntropy(vec![0, 2, 1]), 1e-3, usize::MAX);
    checked += g.checked;
    if g.worst > worst.0 {
        worst = (g.worst, format!("toy_chain {}", g.worst_at));
    }
    check(
        worst.0 < 1e-4,
        format!("{checked} coordinates over all layer kinds, max relative error {:.2e} (< 1e-4){}", worst.0, if worst.0 > 1e-6 { format!(" at {}", worst.1) } else { String::new() }),
    )
}

// ---- 3. desk-scale method comparison -------------------------------------

struct Comparison {
    wins: usize,
    seeds: usize,
    mean_err: Vec<(Method, f64)>,
    thinet_acc: f64,
    random_mean: f64,
    random_std: f64,
    min_baseline: f64,
    elapsed: Duration,
}

const SHAPE: [usize; 3] = [3, 16, 16];
const COMPARED: [Method; 4] = [Method::Thinet, Method::WeightSum, Method::Apoz, Method::Random];

fn fixture(seed: u64) -> (Dataset, Dataset) {
    let all = generate_synthetic(&SyntheticSpec::new(4, 75, SHAPE), 1000 + seed).unwrap();
    all.split_at(200).unwrap()
}

fn run_comparison() -> Comparison {
    let t = Instant::now();
    let seeds = 8u64;
    let mut wins = 0;
    let mut err_sum = vec![0.0; COMPARED.len()];
    let mut thinet_acc = Vec::new();
    let mut random_acc = Vec::new();
    let mut min_baseline = 1.0f64;
    for seed in 0..seeds {
        let (train_set, test_set) = fixture(seed);
        let base = ModelGraph::init(zoo::toy_chain(SHAPE, [16, 16, 16], 4).unwrap(), seed).unwrap();
        let (base, h) = train(&base, &train_set, &TrainConfig::step_decay(30, 0.01, seed)).unwrap();
        min_baseline = min_baseline.min(h.last().unwrap().accuracy);
        let schedule = uniform_schedule(&["conv1", "conv2"], 0.25);
        let cfg = PruneConfig {
            images: 100,
            locations: 10,
            seed,
            recovery: None,
            final_tune: Some(TrainConfig::step_decay(5, 0.01, seed)),
        };
        let mut errs = Vec::new();
        for (k, &method) in COMPARED.iter().enumerate() {
            let (pruned, report) = prune_network(&base, Some(&train_set), &schedule, method, &cfg).unwrap();
            let rel: Vec<f64> = report.sites.iter().map(|s| s.relative_error().unwrap()).collect();
            let mean = rel.iter().sum::<f64>() / rel.len() as f64;
            err_sum[k] += mean;
            errs.push(mean);
            let acc = evaluate(&pruned, &test_set).unwrap().accuracy;
            match method {
                Method::Thinet => thinet_acc.push(acc),
                Method::Random => random_acc.push(acc),
                _ => {}
            }
        }
        if errs[1..].iter().all(|e| errs[0] <= *e) {
            wins += 1;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rm = mean(&random_acc);
    let rs = (random_acc.iter().map(|a| (a - rm).powi(2)).sum::<f64>() / (random_acc.len() - 1) as f64).sqrt();
    Comparison {
        wins,
        seeds: seeds as usize,
        mean_err: COMPARED.iter().zip(&err_sum).map(|(m, e)| (*m, e / seeds as f64)).collect(),
        thinet_acc: mean(&thinet_acc),
        random_mean: rm,
        random_std: rs,
        min_baseline,
        elapsed: t.elapsed(),
    }
}

// ---- 4. determinism -----------------------------------------------------

fn cli(args: &[&str]) -> Result<(), String> {
    let mut v = vec!["thinner", "--threads", "1"];
    v.extend_from_slice(args);
    match thinner::cli::main_from_args(v) {
        0 => Ok(()),
        c => Err(format!("`{}` exited with {c}", args.join(" "))),
    }
}

fn replay_matches(dir: &Path, name: &str) -> Result<usize, String> {
    let first = dir.join(name);
    let second = dir.join(format!("{name}_replay"));
    let (m, s) = (first.join("manifest.json"), second.to_str().unwrap().to_string());
    cli(&["replay", "--manifest", m.to_str().unwrap(), "--out", &s])?;
    let manifest = thinner::cli::RunManifest::load(&m).map_err(|e| e.to_string())?;
    for f in &manifest.outputs {
        let a = std::fs::read(first.join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(second.join(f)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{name}: {f} differs after replay"));
        }
    }
    Ok(manifest.outputs.len())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = tmp.path();
    let p = |rel: &str| d.join(rel).to_str().unwrap().to_string();
    std::fs::write(d.join("sched.json"), r#"[{"layer": "conv1", "rate": 0.5}, {"layer": "conv2", "rate": 0.5}]"#).unwrap();
    cli(&["gen-data", "--classes", "3", "--per-class", "10", "--shape", "3,8,8", "--seed", "4", "--out", &p("gen-data")])?;
    cli(&["build", "--arch", "toy-chain", "--classes", "3", "--input", "3,8,8", "--widths", "8,8,4", "--seed", "5", "--out", &p("build")])?;
    let (model, data) = (p("build/model.json"), p("gen-data/data.thds"));
    cli(&["stats", "--model", &model, "--out", &p("stats")])?;
    cli(&[
        "prune", "--model", &model, "--data", &data, "--schedule", &p("sched.json"), "--images", "20", "--seed", "6",
        "--recovery-epochs", "1", "--finetune-epochs", "2", "--out", &p("prune"),
    ])?;
    cli(&["compare", "--model", &model, "--data", &data, "--rates", "0.5,0.25", "--images", "20", "--finetune-epochs", "1", "--seed", "7", "--out", &p("compare")])?;
    cli(&["finetune", "--model", &model, "--data", &data, "--epochs", "3", "--batch", "8", "--seed", "8", "--out", &p("finetune")])?;
    cli(&["eval", "--model", &model, "--data", &data, "--out", &p("eval")])?;
    let mut files = 0;
    let names = ["gen-data", "build", "stats", "prune", "compare", "finetune", "eval"];
    for name in names {
        files += replay_matches(d, name)?;
    }
    Ok(format!("{} commands replayed from their manifests with --threads 1, {files} output files bit-identical", names.len()))
}

// ---- driver -------------------------------------------------------------

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let (tag, detail) = match out {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{id}] {name}: {detail} ({:.1}s)", t.elapsed().as_secs_f64());
    };

    report("1a", "VGG-16 params/FLOPs", &mut || structure_counts(zoo::vgg16(1000).unwrap(), 138.34e6, 30.94e9, 5e-3));
    report("1b", "ResNet-50 params/FLOPs", &mut || structure_counts(zoo::resnet50(1000).unwrap(), 25.56e6, 7.72e9, 1e-2));
    report("1c", "VGG-16 rate 0.5 on conv1_1..conv4_3", &mut || pruned_counts(zoo::build_vgg16(1000, 0).unwrap(), 131.44e6, 9.58e9, 1e-2));
    report("1d", "VGG-16-GAP rate 0.5 on conv1_1..conv4_3", &mut || pruned_counts(zoo::build_vgg16_gap(1000, 0).unwrap(), 8.32e6, 9.34e9, 5e-2));

    report("2a", "channel decomposition identity", &mut identity);
    report("2b", "kept/removed objective duality", &mut duality);
    report("2c", "greedy step-wise optimality", &mut greedy_stepwise);
    report("2d", "brute force ≤ greedy", &mut brute_vs_greedy);
    report("2e", "least-squares dominance", &mut lsq_dominance);
    report("2f", "surgery equivalence", &mut surgery);
    report("2g", "gradient correctness", &mut gradients);

    let mut cmp: Option<Comparison> = None;
    report("3a", "desk-scale baseline ≥ 95% train accuracy", &mut || {
        let c = cmp.get_or_insert_with(run_comparison);
        check(c.min_baseline >= 0.95, format!("lowest train accuracy over {} seeds {:.3}", c.seeds, c.min_baseline))
    });
    let c = cmp.as_ref();
    report("3b", "reconstruction error: thinet ≤ weight_sum, apoz, random", &mut || {
        let c = c.ok_or("comparison did not run")?;
        let errs: Vec<String> = c.mean_err.iter().map(|(m, e)| format!("{m} {e:.4}")).collect();
        check(
            c.wins >= 7,
            format!("thinet lowest in {}/{} seeds (need ≥ 7); mean relative error {}", c.wins, c.seeds, errs.join(", ")),
        )
    });
    report("3c", "fine-tuned accuracy: thinet ≥ random mean − 1 std", &mut || {
        let c = c.ok_or("comparison did not run")?;
        check(
            c.thinet_acc >= c.random_mean - c.random_std,
            format!("thinet {:.3} vs random {:.3} ± {:.3}", c.thinet_acc, c.random_mean, c.random_std),
        )
    });
    report("3d", "comparison runtime < 10 min", &mut || {
        let c = c.ok_or("comparison did not run")?;
        check(c.elapsed < Duration::from_secs(600), format!("{:.1}s", c.elapsed.as_secs_f64()))
    });

    report("4", "manifest replay is bit-exact", &mut determinism);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
