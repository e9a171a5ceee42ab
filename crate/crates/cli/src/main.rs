//! `gclab` command-line front end.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gclab::contrast::{DiscriminatorKind, EstimatorKind};
use gclab::encoders::{EncoderKind, ReadoutKind};
use gclab::graph::{generate_sbm, generate_size_classes, load_dataset_with, save_dataset_json, Dataset, FeatureFill, Format};
use gclab::harness::{
    best_model_search, best_pool_comb, best_pool_single, execute_batch, generate_controlled_pairs, preset, profile_modules,
    rank_pairs, read_configs, read_results, run_experiment, write_configs, write_results, Axis, ExecOptions,
    ExperimentConfig, ProfileOptions, ResultRecord, SearchSpace, TIE_THRESHOLD,
};
use gclab::samplers::SamplerKind;
use gclab::trainer::FrameworkSpec;
use gclab::Error;

#[derive(Parser)]
#[command(name = "gclab", version, about = "Modular graph contrastive learning")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one spec; prints the evaluation report as JSON.
    Run(RunArgs),
    /// Write a controlled-pair batch file (JSON lines).
    Gen(GenArgs),
    /// Run a batch file on a worker pool and merge the results CSV.
    Exec(ExecArgs),
    /// Rank, combination and leaderboard tables from a results CSV.
    Analyze(AnalyzeArgs),
    /// Print or run a named preset.
    Preset(PresetArgs),
    /// Time encoders and samplers against a baseline spec.
    Profile(ProfileArgs),
    /// Write a synthetic dataset as JSON.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Fill {
    Constant,
    Degree,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset file: `.json`, or an edge list with an optional `.labels` sibling.
    #[arg(long)]
    dataset: PathBuf,
    /// Features for graphs stored without any.
    #[arg(long, value_enum, default_value = "constant")]
    features: Fill,
}

impl DataArgs {
    fn load(&self) -> gclab::Result<Dataset> {
        load(&self.dataset, self.features)
    }
}

fn load(path: &Path, fill: Fill) -> gclab::Result<Dataset> {
    let fill = match fill {
        Fill::Constant => FeatureFill::Constant,
        Fill::Degree => FeatureFill::DegreeOneHot,
    };
    load_dataset_with(path, Format::from_path(path), fill)
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Start from a named preset instead of the defaults.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    readout: Option<ReadoutKind>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    disc: Option<DiscriminatorKind>,
    #[arg(long)]
    est: Option<EstimatorKind>,
    #[arg(long, value_parser = ["64", "128"])]
    dim: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    layers: Option<u8>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Add the two-layer projection head.
    #[arg(long)]
    projection: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SpecArgs {
    fn spec(&self) -> gclab::Result<FrameworkSpec> {
        let mut s = match &self.preset {
            Some(name) => preset(name)?,
            None => FrameworkSpec::default(),
        };
        if let Some(v) = self.encoder {
            s.encoder.kind = v;
        }
        if let Some(v) = self.readout {
            s.encoder.readout = v;
        }
        if let Some(v) = self.sampler {
            s.sampler.kind = v;
        }
        if let Some(v) = self.disc {
            s.discriminator = v;
        }
        if let Some(v) = self.est {
            s.estimator = v;
        }
        if let Some(v) = &self.dim {
            s.encoder.emb_dim = v.parse().expect("validated by clap");
        }
        if let Some(v) = self.layers {
            s.encoder.layers = v as usize;
        }
        if let Some(v) = self.lr {
            s.lr = v;
        }
        if let Some(v) = self.epochs {
            s.max_epochs = v;
        }
        if let Some(v) = self.patience {
            s.patience = v;
        }
        s.encoder.projection_head |= self.projection;
        s.seed = self.seed;
        Ok(s)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    spec: SpecArgs,
    /// Append the result row to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Search: draw this many specs from --space and report the leaderboard.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    space: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    axis: Axis,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    space: Option<PathBuf>,
    /// Dataset recorded in every config.
    #[arg(long, default_value = "")]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Batch file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExecArgs {
    /// Batch file from `gen`.
    #[arg(long)]
    batch: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Seed of the evaluation splits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset for configs that name none, or for all with --override-dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    override_dataset: bool,
    /// Caps max_epochs of every config.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum, default_value = "constant")]
    features: Fill,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Pairwise,
    Full,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Results CSV.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: Mode,
    /// Pool percentage for the combination tables.
    #[arg(long, default_value_t = 10.0)]
    t: f64,
    /// Output prefix; writes `<out>.ranking.csv`, `<out>.comb.csv`, `<out>.leaderboard.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PresetArgs {
    name: String,
    /// Print the spec as JSON.
    #[arg(long)]
    print: bool,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "constant")]
    features: Fill,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Output stem; writes `<out>.encoders.csv` and `<out>.samplers.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Block sizes of a stochastic block model (node task).
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    /// Feature width: one-hot block signal plus Gaussian noise; 0 for none.
    #[arg(long, default_value_t = 16)]
    feat_dim: usize,
    /// Cycle sizes, one class each (graph task); overrides the block model.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Incompatible { .. } => Failure::Usage(e.to_string()),
            e if e.is_data_error() => Failure::Data(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn print_json<T: serde::Serialize>(v: &T) -> Outcome {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn dataset_label(p: &Path) -> String {
    p.display().to_string()
}

fn run_one(spec: FrameworkSpec, dataset: &Dataset, label: String, split_seed: u64, out: Option<&Path>) -> Outcome {
    let config = ExperimentConfig::new(spec, label);
    let outcome = run_experiment(&config, dataset, split_seed);
    if let Some(path) = out {
        write_results(path, std::slice::from_ref(&outcome.record), true)?;
    }
    match outcome.eval {
        Some(report) => print_json(&report),
        None => {
            let msg = outcome.record.error.unwrap_or_else(|| "run failed".into());
            let prefix = "incompatible modules";
            if msg.starts_with(prefix) {
                Err(Failure::Usage(msg))
            } else {
                Err(Failure::Runtime(msg))
            }
        }
    }
}

fn cmd_run(a: RunArgs) -> Outcome {
    let spec = a.spec.spec()?;
    spec.encoder.validate()?;
    let dataset = a.data.load()?;
    let label = dataset_label(&a.data.dataset);
    if let Some(budget) = a.budget {
        let mut space = match &a.space {
            Some(p) => SearchSpace::load(p)?,
            None => SearchSpace::default(),
        };
        if let Some(e) = a.spec.epochs {
            space.base.max_epochs = e;
        }
        let result = best_model_search(&space, &dataset, &label, budget, a.spec.seed)?;
        if let Some(path) = &a.out {
            write_results(path, &result.leaderboard, true)?;
        }
        let best = result.best();
        println!("best {} score {:.4}", best.config.spec.module_tuple(), best.score.unwrap_or(0.0));
        return Ok(());
    }
    run_one(spec, &dataset, label, a.spec.seed, a.out.as_deref())
}

fn cmd_gen(a: GenArgs) -> Outcome {
    let space = match &a.space {
        Some(p) => SearchSpace::load(p)?,
        None => SearchSpace::default(),
    };
    let configs = generate_controlled_pairs(&space, a.axis, a.m, &a.dataset, a.seed)?;
    match &a.out {
        Some(p) => write_configs(p, &configs)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            for c in &configs {
                let line = serde_json::to_string(c).map_err(|e| Failure::Runtime(e.to_string()))?;
                writeln!(stdout, "{line}").map_err(|e| Failure::Runtime(e.to_string()))?;
            }
        }
    }
    Ok(())
}

fn cmd_exec(a: ExecArgs) -> Outcome {
    let mut configs = read_configs(&a.batch)?;
    let fallback = a.dataset.as_ref().map(|p| dataset_label(p));
    for c in &mut configs {
        if c.dataset.is_empty() || a.override_dataset {
            c.dataset = fallback
                .clone()
                .ok_or_else(|| Failure::Usage("configs name no dataset; pass --dataset".into()))?;
        }
        if let Some(e) = a.epochs {
            c.spec.max_epochs = c.spec.max_epochs.min(e);
        }
    }
    let opts = ExecOptions {
        workers: a.workers,
        split_seed: a.seed,
        out: a.out.clone(),
    };
    let fill = a.features;
    let summary = execute_batch(&configs, |name| load(Path::new(name), fill), &opts)?;
    eprintln!(
        "ran {} ({} failed), skipped {} already complete",
        summary.ran, summary.failed, summary.skipped
    );
    Ok(())
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_analyze(a: AnalyzeArgs) -> Outcome {
    let records = read_results(&a.results)?;
    if !(a.t > 0.0 && a.t < 100.0) {
        return Err(Failure::Usage(format!("--t must be in (0, 100), got {}", a.t)));
    }
    let single = matches!(a.mode, Mode::Single | Mode::Full);
    let pairwise = matches!(a.mode, Mode::Pairwise | Mode::Full);
    if single {
        let ranking = rank_pairs(&records, TIE_THRESHOLD)?;
        ranking.write_csv(&with_suffix(&a.out, ".ranking.csv"))?;
        best_pool_single(&records, a.t)?.write_csv(&with_suffix(&a.out, ".single.csv"))?;
        for m in &ranking.mean_ranks {
            println!("{}\t{}\tmean rank {:.3} over {} groups", m.axis, m.instantiation, m.mean_rank, m.groups);
        }
    }
    if pairwise {
        best_pool_comb(&records, a.t)?.write_csv(&with_suffix(&a.out, ".comb.csv"))?;
    }
    if matches!(a.mode, Mode::Full) {
        let mut board: Vec<&ResultRecord> = records.iter().filter(|r| r.is_ok()).collect();
        board.sort_by(|x, y| y.score.unwrap_or(0.0).total_cmp(&x.score.unwrap_or(0.0)));
        let board: Vec<ResultRecord> = board.into_iter().cloned().collect();
        write_results(&with_suffix(&a.out, ".leaderboard.csv"), &board, false)?;
    }
    Ok(())
}

fn cmd_preset(a: PresetArgs) -> Outcome {
    let mut spec = preset(&a.name)?;
    spec.seed = a.seed;
    if let Some(e) = a.epochs {
        spec.max_epochs = e;
    }
    if a.print || a.dataset.is_none() {
        print_json(&spec)?;
    }
    if let Some(path) = &a.dataset {
        let dataset = load(path, a.features)?;
        run_one(spec, &dataset, dataset_label(path), a.seed, a.out.as_deref())?;
    }
    Ok(())
}

fn cmd_profile(a: ProfileArgs) -> Outcome {
    let dataset = a.data.load()?;
    let mut base = a.spec.spec()?;
    if a.spec.preset.is_none() {
        base = FrameworkSpec {
            seed: base.seed,
            ..preset("line")?
        };
    }
    let opts = ProfileOptions {
        repeats: a.repeats,
        ..ProfileOptions::default()
    };
    let table = profile_modules(&dataset, &base, &opts)?;
    print!("{}", table.render());
    if let Some(stem) = &a.out {
        table.write_csv(stem)?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Outcome {
    let d = match &a.sizes {
        Some(sizes) => generate_size_classes(sizes, a.per_class, a.seed)?,
        None => generate_sbm(&a.blocks, a.p_in, a.p_out, a.feat_dim, a.seed)?,
    };
    save_dataset_json(&d, &a.out)?;
    let mut summary = BTreeMap::new();
    summary.insert("graphs", d.graphs.len());
    summary.insert("nodes", d.total_nodes());
    summary.insert("items", d.num_items());
    print_json(&summary)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Exec(a) => cmd_exec(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Preset(a) => cmd_preset(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("data error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("runtime error: {m}");
            ExitCode::from(3)
        }
    }
}
