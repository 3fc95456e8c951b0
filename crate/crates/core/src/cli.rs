//! Command-line front end. Every command that writes files also writes a
//! `manifest.json` next to them from which `thinner replay` can re-run it.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::finetune::{evaluate, train, write_history_csv, LrStep, TrainConfig};
use crate::graph::{Architecture, ModelGraph};
use crate::io::{load_architecture, load_dataset, load_model, save_dataset, save_model};
use crate::metrics::cost_report;
use crate::pipeline::{compare_methods, load_schedule, prune_network, write_compare_csv, Method, PruneConfig};
use crate::sampling::PruneSite;
use crate::zoo;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const DATA_FILE: &str = "data.thds";

#[derive(Parser, Debug)]
#[command(name = "thinner", version, about = "Filter-level pruning for convolutional networks")]
pub struct Cli {
    /// Worker threads (1 gives bit-exact reruns; default: all cores).
    #[arg(long, global = true, env = "THINNER_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Parameter and FLOP counts per layer.
    Stats(StatsArgs),
    /// Write a freshly initialized built-in architecture.
    Build(BuildArgs),
    /// Generate the synthetic classification set.
    GenData(GenDataArgs),
    /// Prune a model according to a schedule.
    Prune(PruneArgs),
    /// Compare selection methods across rates.
    Compare(CompareArgs),
    /// Fine-tune a model.
    Finetune(FinetuneArgs),
    /// Accuracy and loss of a model on a dataset.
    Eval(EvalArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchName {
    Vgg16,
    Vgg16Gap,
    Resnet50,
    ToyChain,
    ToyResnet,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchArgs {
    #[arg(long, value_enum)]
    pub arch: ArchName,
    /// Output classes (default 1000 for the full-size nets, 4 for the toys).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Input shape C,H,W (toy nets only; default 3,16,16).
    #[arg(long, value_delimiter = ',')]
    pub input: Option<Vec<usize>>,
    /// Conv widths of toy-chain (default 16,16,16).
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
}

impl ArchArgs {
    pub fn build(&self) -> Result<Architecture> {
        let big = matches!(self.arch, ArchName::Vgg16 | ArchName::Vgg16Gap | ArchName::Resnet50);
        let classes = self.classes.unwrap_or(if big { 1000 } else { 4 });
        if big && (self.input.is_some() || self.widths.is_some()) {
            return Err(Error::InvalidArgument("--input and --widths apply to toy nets only".into()));
        }
        let input = triple(self.input.as_deref().unwrap_or(&[3, 16, 16]), "--input")?;
        match self.arch {
            ArchName::Vgg16 => zoo::vgg16(classes),
            ArchName::Vgg16Gap => zoo::vgg16_gap(classes),
            ArchName::Resnet50 => zoo::resnet50(classes),
            ArchName::ToyChain => zoo::toy_chain(input, triple(self.widths.as_deref().unwrap_or(&[16, 16, 16]), "--widths")?, classes),
            ArchName::ToyResnet => {
                if self.widths.is_some() {
                    return Err(Error::InvalidArgument("--widths applies to toy-chain only".into()));
                }
                zoo::toy_resnet(input, classes)
            }
        }
    }
}

fn triple(v: &[usize], flag: &str) -> Result<[usize; 3]> {
    <[usize; 3]>::try_from(v).map_err(|_| Error::InvalidArgument(format!("{flag} takes three comma-separated values")))
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsArgs {
    /// Model manifest; only the architecture is read.
    #[arg(long, required_unless_present = "arch", conflicts_with = "arch")]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(default)]
    pub builtin: Option<ArchArgs>,
    /// Directory for stats.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Image shape C,H,W.
    #[arg(long, value_delimiter = ',', default_values_t = [3, 16, 16])]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset; required by thinet, thinet_no_w and apoz.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON array of {"layer", "rate"} entries.
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long, default_value = "thinet")]
    pub method: String,
    /// Images sampled per site.
    #[arg(long, default_value_t = 100)]
    pub images: usize,
    /// Locations sampled per image.
    #[arg(long, default_value_t = 10)]
    pub locations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fine-tuning epochs after the last site.
    #[arg(long, default_value_t = 0)]
    pub finetune_epochs: usize,
    /// Fine-tuning epochs after every site.
    #[arg(long, default_value_t = 0)]
    pub recovery_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "thinet,thinet_no_w,weight_sum,apoz,random")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sites to prune, taken from a schedule's layers (rates ignored);
    /// default: every prunable conv.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub images: usize,
    #[arg(long, default_value_t = 10)]
    pub locations: usize,
    #[arg(long, default_value_t = 0)]
    pub finetune_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for eval.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A manifest.json written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the reproduced outputs.
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Stats(_) => "stats",
            Command::Build(_) => "build",
            Command::GenData(_) => "gen-data",
            Command::Prune(_) => "prune",
            Command::Compare(_) => "compare",
            Command::Finetune(_) => "finetune",
            Command::Eval(_) => "eval",
            Command::Replay(_) => "replay",
        }
    }

    fn set_out(&mut self, dir: PathBuf) {
        match self {
            Command::Stats(a) => a.out = Some(dir),
            Command::Eval(a) => a.out = Some(dir),
            Command::Build(a) => a.out = dir,
            Command::GenData(a) => a.out = dir,
            Command::Prune(a) => a.out = dir,
            Command::Compare(a) => a.out = dir,
            Command::Finetune(a) => a.out = dir,
            Command::Replay(a) => a.out = dir,
        }
    }
}

/// Everything needed to re-run a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub threads: Option<usize>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    /// File names inside the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct Run {
    threads: Option<usize>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Run {
    fn new(threads: Option<usize>) -> Self {
        Run {
            threads,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn seed(&mut self, name: &str, seed: u64) -> u64 {
        self.seeds.insert(name.into(), seed);
        seed
    }

    fn input(&mut self, p: &Path) -> PathBuf {
        self.inputs.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn model(&mut self, p: &Path) -> Result<ModelGraph> {
        load_model(self.input(p))
    }

    fn data(&mut self, p: &Path, classes: usize) -> Result<Dataset> {
        load_dataset(self.input(p), Some(classes))
    }

    fn write_model(&mut self, dir: &Path, m: &ModelGraph) -> Result<()> {
        let path = dir.join(MODEL_FILE);
        save_model(m, &path)?;
        // read back so a zero exit means the files are loadable
        load_model(&path)?;
        self.outputs.push(MODEL_FILE.into());
        self.outputs.push(MODEL_FILE.replace(".json", ".bin"));
        Ok(())
    }

    fn create(&mut self, dir: &Path, name: &str) -> Result<BufWriter<File>> {
        let path = dir.join(name);
        self.outputs.push(name.into());
        Ok(BufWriter::new(File::create(&path).map_err(|e| Error::io(path, e))?))
    }

    fn finish(self, dir: &Path, command: &Command) -> Result<()> {
        let m = RunManifest {
            tool: "thinner".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.clone(),
            threads: self.threads,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(path, e))
    }
}

fn out_dir(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| n.parse()).collect()
}

fn tune_config(epochs: usize, lr: f64, seed: u64) -> Option<TrainConfig> {
    (epochs > 0).then(|| TrainConfig::step_decay(epochs, lr, seed))
}

fn print_table(arch: &Architecture) -> Result<crate::metrics::CostReport> {
    let report = cost_report(arch)?;
    print!("{}", report.to_table());
    Ok(report)
}

fn execute(command: &Command, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new(threads);
    match command {
        Command::Stats(a) => {
            let arch = match (&a.model, &a.builtin) {
                (Some(p), _) => load_architecture(run.input(p))?,
                (None, Some(b)) => b.build()?,
                (None, None) => return Err(Error::InvalidArgument("stats needs --model or --arch".into())),
            };
            let report = print_table(&arch)?;
            if let Some(dir) = &a.out {
                let dir = out_dir(dir)?;
                report.write_csv(run.create(dir, "stats.csv")?)?;
                run.finish(dir, command)?;
            }
        }
        Command::Build(a) => {
            let dir = out_dir(&a.out)?;
            let model = ModelGraph::init(a.arch.build()?, run.seed("init", a.seed))?;
            run.write_model(dir, &model)?;
            println!("{}: {} parameters", model.arch.name, model.param_count());
            run.finish(dir, command)?;
        }
        Command::GenData(a) => {
            let dir = out_dir(&a.out)?;
            let spec = SyntheticSpec {
                noise: a.noise,
                ..SyntheticSpec::new(a.classes, a.per_class, triple(&a.shape, "--shape")?)
            };
            let data = generate_synthetic(&spec, run.seed("data", a.seed))?;
            let path = dir.join(DATA_FILE);
            save_dataset(&data, &path)?;
            load_dataset(&path, Some(a.classes))?;
            run.outputs.push(DATA_FILE.into());
            println!("{} images of shape {:?}", data.len(), data.image_shape());
            run.finish(dir, command)?;
        }
        Command::Prune(a) => {
            let method: Method = a.method.parse()?;
            let schedule = load_schedule(run.input(&a.schedule))?;
            let model = run.model(&a.model)?;
            let data = a.data.as_ref().map(|p| run.data(p, model.arch.classes)).transpose()?;
            let seed = run.seed("prune", a.seed);
            let cfg = PruneConfig {
                images: a.images,
                locations: a.locations,
                seed,
                recovery: tune_config(a.recovery_epochs, a.lr / 10.0, seed),
                final_tune: tune_config(a.finetune_epochs, a.lr, seed),
            };
            let dir = out_dir(&a.out)?;
            let (pruned, report) = prune_network(&model, data.as_ref(), &schedule, method, &cfg)?;
            drop(model);
            run.write_model(dir, &pruned)?;
            report.write_csv(run.create(dir, "report.csv")?)?;
            report.write_json(run.create(dir, "report.json")?)?;
            println!(
                "{}: params {} -> {}, FLOPs {} -> {}",
                method, report.params_before, report.params_after, report.flops_before, report.flops_after
            );
            run.finish(dir, command)?;
        }
        Command::Compare(a) => {
            let methods = methods(&a.methods)?;
            let model = run.model(&a.model)?;
            let data = run.data(&a.data, model.arch.classes)?;
            let layers: Vec<String> = match &a.schedule {
                Some(p) => load_schedule(run.input(p))?.into_iter().map(|e| e.layer).collect(),
                None => PruneSite::all(&model.arch).into_iter().map(|s| s.layer).collect(),
            };
            let seed = run.seed("compare", a.seed);
            let cfg = PruneConfig {
                images: a.images,
                locations: a.locations,
                seed,
                recovery: None,
                final_tune: tune_config(a.finetune_epochs, a.lr, seed),
            };
            let dir = out_dir(&a.out)?;
            let rows = compare_methods(&model, &data, Some(&data), &layers, &methods, &a.rates, &cfg)?;
            write_compare_csv(&rows, run.create(dir, "compare.csv")?)?;
            println!("{} rows", rows.len());
            run.finish(dir, command)?;
        }
        Command::Finetune(a) => {
            let model = run.model(&a.model)?;
            let data = run.data(&a.data, model.arch.classes)?;
            let cfg = TrainConfig {
                epochs: a.epochs,
                lr: vec![LrStep { from: 0, lr: a.lr }],
                batch: a.batch,
                momentum: a.momentum,
                weight_decay: a.weight_decay,
                seed: run.seed("shuffle", a.seed),
            };
            let cfg = TrainConfig {
                lr: TrainConfig::step_decay(a.epochs, a.lr, 0).lr,
                ..cfg
            };
            let dir = out_dir(&a.out)?;
            let (tuned, history) = train(&model, &data, &cfg)?;
            run.write_model(dir, &tuned)?;
            write_history_csv(&history, run.create(dir, "history.csv")?)?;
            if let Some(h) = history.last() {
                println!("epoch {}: loss {:.4}, accuracy {:.4}", h.epoch, h.loss, h.accuracy);
            }
            run.finish(dir, command)?;
        }
        Command::Eval(a) => {
            let model = run.model(&a.model)?;
            let data = run.data(&a.data, model.arch.classes)?;
            let r = evaluate(&model, &data)?;
            println!("accuracy {:.4}, loss {:.4}", r.accuracy, r.loss);
            if let Some(dir) = &a.out {
                let dir = out_dir(dir)?;
                serde_json::to_writer_pretty(run.create(dir, "eval.json")?, &r)?;
                run.finish(dir, command)?;
            }
        }
        Command::Replay(a) => {
            let m = RunManifest::load(&a.manifest)?;
            if matches!(m.command, Command::Replay(_)) {
                return Err(Error::InvalidArgument("a manifest never records a replay".into()));
            }
            let mut cmd = m.command;
            cmd.set_out(a.out.clone());
            return with_threads(threads.or(m.threads), || execute(&cmd, threads.or(m.threads)));
        }
    }
    Ok(())
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == Some(0) {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    with_threads(cli.threads, || execute(&cli.command, cli.threads))
}

/// Parses `args` (program name first), runs, and returns the exit code.
/// Errors go to standard error.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!(": {s}"));
                src = s.source();
            }
            eprintln!("{msg}");
            1
        }
    }
}
