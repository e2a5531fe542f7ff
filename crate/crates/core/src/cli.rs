//! The `cim` command line.
//!
//! Exit codes: 0 success, 2 validation error, 1 runtime or IO error.
//! Any subcommand accepts `--config file.json`, a flat object whose keys are
//! the long flag names; flags given on the command line win. The seed falls
//! back to `CIM_SEED`, then 0.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cctm::{compute_cctm, mistake_rate};
use crate::dancing::{self, TrainingTrace};
use crate::datagen::{self, Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::interference::{self, SurfaceMetric, SurfaceSpec};
use crate::nn::{MlpModel, MlpSpec};
use crate::optim::{self, Preset, Schedule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

pub const DEFAULT_HIDDEN: &[usize] = &[16];

#[derive(Debug, Parser)]
#[command(
    name = "cim",
    version,
    about = "Class interference analysis for small classifiers"
)]
pub struct Cli {
    /// Worker threads for parallel evaluation; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file with default values for the command's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write train/test CSVs.
    GenData(GenDataArgs),
    /// Train a classifier and record a per-epoch training trace.
    Train(TrainArgs),
    /// Cross-class test matrix of a model on a dataset.
    Cctm(CctmArgs),
    /// Sample an interference surface between two classes.
    Surface(SurfaceArgs),
    /// Dancing notes of one class from a training trace.
    Notes(NotesArgs),
    /// Label-dance score between two classes from a training trace.
    Dance(DanceArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct GenDataArgs {
    /// `interference` (four classes, tunable overlap) or `custom`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Overlap of classes 0 and 1 in [0, 1] (interference preset).
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Class means for the custom preset: `x0,x1;x0,x1;...`.
    #[arg(long)]
    pub means: Option<String>,
    #[arg(long)]
    pub std: Option<f64>,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Fraction of each class that goes to train.csv.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// small-lr, big-lr or anneal-lr.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// constant or cosine.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden layer widths, comma separated (empty for a linear model).
    #[arg(long)]
    pub hidden: Option<String>,
    /// Number of classes; inferred from the training labels when absent.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initialization seed; defaults to the training seed.
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Record the trace every k epochs.
    #[arg(long)]
    pub trace_every: Option<usize>,
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    #[arg(long)]
    pub out_trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct CctmArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rates CSV; counts go next to it as `<name>_counts.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Class names for the CSV header, comma separated.
    #[arg(long)]
    pub names: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SurfaceArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset the class gradients and the metric are computed on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Class pair `c1,c2`.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Grid points per axis (odd).
    #[arg(long)]
    pub points: Option<usize>,
    /// mistake, xent or class:<k>.
    #[arg(long)]
    pub metric: Option<String>,
    /// Flatness threshold above the center value.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary statistics JSON.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct NotesArgs {
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct DanceArgs {
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Class pair `c1,c2`.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Detected events as JSON.
    #[arg(long)]
    pub events: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            if !value.is_object() {
                return Err(Error::invalid("config file must hold a JSON object"));
            }
            Some(value)
        }
        None => None,
    };
    let command = cli.command;
    let go = move || -> Result<()> {
        match command {
            Command::GenData(a) => cmd_gen_data(merge(a, config.as_ref())?),
            Command::Train(a) => cmd_train(merge(a, config.as_ref())?),
            Command::Cctm(a) => cmd_cctm(merge(a, config.as_ref())?),
            Command::Surface(a) => cmd_surface(merge(a, config.as_ref())?),
            Command::Notes(a) => cmd_notes(merge(a, config.as_ref())?),
            Command::Dance(a) => cmd_dance(merge(a, config.as_ref())?),
        }
    };
    match cli.threads {
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(go),
        None => go(),
    }
}

/// Overlays the flags that were given on top of the config file values.
fn merge<A>(flags: A, config: Option<&serde_json::Value>) -> Result<A>
where
    A: Serialize + DeserializeOwned,
{
    let Some(config) = config else {
        return Ok(flags);
    };
    let mut merged = config.clone();
    let serde_json::Value::Object(given) = serde_json::to_value(&flags)? else {
        unreachable!("argument structs serialize to objects");
    };
    let target = merged.as_object_mut().expect("checked object");
    for (k, v) in given {
        if !v.is_null() {
            target.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::invalid(format!("config file: {e}")))
}

fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var("CIM_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("CIM_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::invalid(format!("missing required --{flag}")))
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(Error::invalid(format!("`{s}` is not a class pair `c1,c2`"))),
        },
        _ => Err(Error::invalid(format!("`{s}` is not a class pair `c1,c2`"))),
    }
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad hidden width `{w}`")))
        })
        .collect()
}

fn parse_means(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';')
        .map(|m| {
            m.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad mean coordinate `{v}`")))
                })
                .collect()
        })
        .collect()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_data_for_model(path: &Path, model: &MlpModel) -> Result<Dataset> {
    let c = model.num_classes();
    let found = datagen::infer_num_classes(path)?;
    if found > c {
        return Err(Error::invalid(format!(
            "{} has labels up to {} but the model has {c} classes",
            path.display(),
            found - 1
        )));
    }
    datagen::load_csv(path, c)
}

pub fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let out = required(args.out, "out")?;
    let split = args.split.unwrap_or(0.8);
    if !(0.0..=1.0).contains(&split) {
        return Err(Error::invalid(format!(
            "--split must be in [0, 1], got {split}"
        )));
    }
    let spec = match args.preset.as_deref().unwrap_or("interference") {
        "interference" => {
            let mut spec = datagen::interference_preset_spec(args.overlap.unwrap_or(0.8), seed)?;
            spec.per_class = args.per_class.unwrap_or(spec.per_class);
            spec.class_std = args.std.unwrap_or(spec.class_std);
            spec
        }
        "custom" => {
            let means = parse_means(&required(args.means, "means")?)?;
            DatasetSpec {
                num_classes: means.len(),
                dim: means.first().map_or(0, Vec::len),
                per_class: args.per_class.unwrap_or(500),
                class_means: means,
                class_std: args.std.unwrap_or(1.0),
                seed,
            }
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown dataset preset `{other}` (expected interference or custom)"
            )))
        }
    };
    let data = datagen::generate(&spec)?;
    let (train, test) = data.stratified_split(split)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    datagen::save_csv(&train, out.join("train.csv"))?;
    datagen::save_csv(&test, out.join("test.csv"))?;
    println!(
        "wrote {} train / {} test samples ({} classes) to {}",
        train.len(),
        test.len(),
        spec.num_classes,
        out.display()
    );
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let preset: Preset = args.preset.as_deref().unwrap_or("anneal-lr").parse()?;
    let mut cfg = preset.config(seed);
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = &args.schedule {
        cfg.schedule = v.parse::<Schedule>()?;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    cfg.validate()?;
    if cfg.base_lr <= 0.0 {
        return Err(Error::invalid("--lr must be positive"));
    }
    let trace_every = args.trace_every.unwrap_or(1);
    if trace_every == 0 {
        return Err(Error::invalid("--trace-every must be at least 1"));
    }
    let hidden = match &args.hidden {
        Some(h) => parse_widths(h)?,
        None => DEFAULT_HIDDEN.to_vec(),
    };
    let train_path = required(args.train, "train")?;
    let num_classes = match args.classes {
        Some(c) => c,
        None => datagen::infer_num_classes(&train_path)?,
    };
    let out_model = args.out_model.unwrap_or_else(|| PathBuf::from("model.cim"));
    let out_trace = args
        .out_trace
        .unwrap_or_else(|| PathBuf::from("trace.json"));

    let train = datagen::load_csv(&train_path, num_classes)?;
    let test = args
        .test
        .as_ref()
        .map(|p| datagen::load_csv(p, num_classes))
        .transpose()?;
    let spec = MlpSpec::new(train.dim(), hidden, num_classes)?;
    let model = MlpModel::init(spec, args.model_seed.unwrap_or(seed))?;

    println!(
        "training {} samples, {} parameters, preset {preset}, {} epochs",
        train.len(),
        model.params().len(),
        cfg.epochs
    );
    let mut trace = TrainingTrace::with_stride(num_classes, trace_every)?;
    let last = cfg.epochs - 1;
    let stdout = std::io::stdout();
    let mut hook = |epoch: usize, lr: f64, m: &MlpModel| -> Result<()> {
        if epoch % trace_every == 0 {
            trace.record_epoch(m, &train, epoch, lr)?;
        }
        if epoch == 0 || epoch == last || (epoch + 1) % 20 == 0 {
            let rate = match trace.records.last() {
                Some(r) if r.epoch == epoch => r.mistake_rate,
                _ => mistake_rate(m, &train)?,
            };
            let _ = writeln!(
                stdout.lock(),
                "epoch {epoch} lr {lr} train_mistake {rate:.6}"
            );
        }
        Ok(())
    };
    let model = optim::train(model, &train, &cfg, &mut hook)?;

    write_file(&out_model, model.to_bytes())?;
    write_file(&out_trace, trace.to_json()? + "\n")?;
    println!(
        "final train mistake rate {:.6}",
        mistake_rate(&model, &train)?
    );
    if let Some(test) = &test {
        println!("final test mistake rate {:.6}", mistake_rate(&model, test)?);
    }
    println!("wrote {} and {}", out_model.display(), out_trace.display());
    Ok(())
}

pub fn cmd_cctm(args: CctmArgs) -> Result<()> {
    let model = MlpModel::load(required(args.model, "model")?)?;
    let data = load_data_for_model(&required(args.data, "data")?, &model)?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("cctm.csv"));
    let names: Vec<String> = args
        .names
        .map(|n| n.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    if !names.is_empty() && names.len() != model.num_classes() {
        return Err(Error::invalid(format!(
            "{} names given for {} classes",
            names.len(),
            model.num_classes()
        )));
    }
    let cctm = compute_cctm(&model, &data)?;
    write_file(&out, cctm.rates_csv(&names))?;
    let counts = crate::cctm::counts_path(&out);
    write_file(&counts, cctm.counts_csv(&names))?;
    let recall: Vec<String> = cctm.recall().iter().map(|r| format!("{r:.4}")).collect();
    println!("recall [{}]", recall.join(", "));
    println!("mistake rate {:.6}", cctm.mistake_rate());
    println!("wrote {} and {}", out.display(), counts.display());
    Ok(())
}

pub fn cmd_surface(args: SurfaceArgs) -> Result<()> {
    let (c1, c2) = parse_pair(args.classes.as_deref().unwrap_or("0,1"))?;
    let metric: SurfaceMetric = args.metric.as_deref().unwrap_or("mistake").parse()?;
    let spec = SurfaceSpec::new(
        c1,
        c2,
        args.sigma.unwrap_or(interference::DEFAULT_SIGMA),
        args.points.unwrap_or(interference::DEFAULT_POINTS),
        metric,
    )?;
    let tau = args.tau.unwrap_or(interference::DEFAULT_TAU);
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("--tau must be >= 0, got {tau}")));
    }
    let model = MlpModel::load(required(args.model, "model")?)?;
    let c = model.num_classes();
    if c1 >= c || c2 >= c {
        return Err(Error::invalid(format!(
            "classes ({c1}, {c2}) out of range for {c} classes"
        )));
    }
    if let SurfaceMetric::ClassLoss(k) = metric {
        if k >= c {
            return Err(Error::invalid(format!(
                "class:{k} out of range for {c} classes"
            )));
        }
    }
    let data = load_data_for_model(&required(args.data, "data")?, &model)?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("surface.csv"));

    let grads = interference::compute_class_gradients(&model, &data)?;
    for (k, norm) in grads.norms().iter().enumerate() {
        println!("class {k} gradient norm {norm:.6e}");
    }
    let grid = interference::sample_surface(&model, &grads, &data, &spec)?;
    write_file(&out, grid.to_csv())?;
    let stats = interference::surface_stats(&grid, tau);
    println!(
        "{} nodes, center {:.6}, min {:.6}, max {:.6}, flat fraction {:.6}",
        grid.node_count(),
        stats.center,
        stats.min,
        stats.max,
        stats.flat_fraction
    );
    if let Some(path) = &args.stats {
        write_file(path, serde_json::to_string_pretty(&stats)? + "\n")?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_notes(args: NotesArgs) -> Result<()> {
    let trace = TrainingTrace::load(required(args.trace, "trace")?)?;
    let class = required(args.class, "class")?;
    let threshold = args.threshold.unwrap_or(dancing::DEFAULT_NOTE_THRESHOLD);
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(Error::invalid(format!(
            "--threshold must be >= 0, got {threshold}"
        )));
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from("notes.csv"));
    let notes = dancing::dancing_notes(&trace, class, threshold)?;
    write_file(&out, notes.to_csv())?;
    let quiet = notes
        .notes
        .iter()
        .filter(|&&n| n == dancing::NO_INTERFERENCE)
        .count();
    println!(
        "class {class}: {} epochs, {quiet} without interference",
        notes.notes.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_dance(args: DanceArgs) -> Result<()> {
    let trace = TrainingTrace::load(required(args.trace, "trace")?)?;
    let (c1, c2) = parse_pair(&required(args.classes, "classes")?)?;
    let window = args.window.unwrap_or(dancing::DEFAULT_DANCE_WINDOW);
    let threshold = args.threshold.unwrap_or(dancing::DEFAULT_DANCE_THRESHOLD);
    let out = args.out.unwrap_or_else(|| PathBuf::from("dance.csv"));
    let scores = dancing::dance_score(&trace, c1, c2, window)?;
    let epochs: Vec<usize> = trace.records.iter().map(|r| r.epoch).collect();
    let events = dancing::runs_above(&epochs, &scores, threshold);
    write_file(&out, dancing::dance_csv(&trace, &scores))?;
    if let Some(path) = &args.events {
        write_file(path, serde_json::to_string_pretty(&events)? + "\n")?;
    }
    println!("classes {c1},{c2}: {} dance events", events.len());
    for e in &events {
        println!("  epochs {}..={}", e.start, e.end);
    }
    println!("wrote {}", out.display());
    Ok(())
}
