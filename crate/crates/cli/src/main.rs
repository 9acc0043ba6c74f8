use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use coordscope::coordination::Resolution;
use coordscope::narrative::ClusterSpace;
use coordscope::pipeline::{run_pipeline, PipelineError, RunConfig, Stage, SUMMARY};
use coordscope::simindex::IdfScope;
use coordscope::synthlab::{evaluate, generate, GeneratorConfig, GroundTruth, SynthError, Window};
use coordscope::time::parse_timestamp;
use coordscope::DetectionReport;

#[derive(Parser, Debug)]
#[command(name = "coordscope", version, about = "Cross-channel coordination detection for message corpora")]
struct Cli {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse JSONL inputs into corpus.jsonl.
    Ingest(Opts),
    /// Keep messages mentioning a keyword.
    Filter(Opts),
    /// Per-channel counts and shares.
    Stats(Opts),
    /// Near-duplicate cross-channel pairs at one threshold.
    Detect(Opts),
    /// Pair counts over a threshold grid.
    Sweep(Opts),
    /// Timestamp-shuffling negative control.
    Control(Opts),
    /// Census of buckets holding more than one channel.
    Feasibility(Opts),
    /// Volume, CDF, inter-arrival, bursts, lead-lag and ACR artifacts.
    Analytics {
        /// Print this artifact after the run.
        #[arg(value_enum)]
        kind: Option<AnalyticsKind>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Narrative clusters, 2-D projection and entropy for a window.
    Narrative(Opts),
    /// Channel graph of detected pairs.
    Graph(Opts),
    /// Synthetic corpora with planted campaigns.
    #[command(subcommand)]
    Synth(Synth),
    /// Every stage, in order.
    Run(Opts),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AnalyticsKind {
    Volume,
    Cdf,
    Interarrival,
    Bursts,
    Leadlag,
    Acr,
}

impl AnalyticsKind {
    fn artifact(self) -> &'static str {
        match self {
            AnalyticsKind::Volume => "volume.csv",
            AnalyticsKind::Cdf => "channel_cdf.csv",
            AnalyticsKind::Interarrival => "interarrival.csv",
            AnalyticsKind::Bursts => "bursts.csv",
            AnalyticsKind::Leadlag => "leadlag.csv",
            AnalyticsKind::Acr => "acr.csv",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Synth {
    /// Write a synthetic corpus and its ground truth.
    Generate {
        /// Generator configuration (JSON).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Score a detection report against ground truth.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// JSONL input file; repeat for several.
    #[arg(long = "input", short = 'i')]
    inputs: Vec<PathBuf>,
    /// Keyword file, one keyword per line.
    #[arg(long)]
    keywords: Option<PathBuf>,
    /// Bucket resolution: h or D.
    #[arg(long)]
    bucket: Option<Resolution>,
    #[arg(long)]
    tau: Option<f64>,
    /// Threshold grid lo:hi:step.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    ngram_min: Option<usize>,
    #[arg(long)]
    ngram_max: Option<usize>,
    #[arg(long)]
    min_df: Option<usize>,
    /// bucket or global.
    #[arg(long)]
    idf_scope: Option<IdfScope>,
    /// Narrative window start (date, timestamp or epoch seconds).
    #[arg(long)]
    from: Option<String>,
    /// Narrative window end, exclusive.
    #[arg(long)]
    to: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// tfidf or svd:<d>.
    #[arg(long)]
    cluster_space: Option<ClusterSpace>,
    #[arg(long)]
    max_lag: Option<usize>,
}

/// A failure and the exit code it maps to.
struct Failure(i32, String);

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure(e.exit_code(), e.to_string())
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure(2, msg.into())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn base_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_json(&read(path)?)?,
        None => RunConfig::new(cli.out.clone().ok_or_else(|| config_error("--out is required without --config"))?),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, o: &Opts) -> Result<(), Failure> {
    if !o.inputs.is_empty() {
        cfg.inputs = o.inputs.clone();
    }
    if o.keywords.is_some() {
        cfg.keywords = o.keywords.clone();
    }
    cfg.resolution = o.bucket.unwrap_or(cfg.resolution);
    cfg.tau = o.tau.unwrap_or(cfg.tau);
    if o.sweep.is_some() {
        cfg.sweep = o.sweep.clone();
    }
    cfg.replicates = o.replicates.unwrap_or(cfg.replicates);
    cfg.ngram.n_min = o.ngram_min.unwrap_or(cfg.ngram.n_min);
    cfg.ngram.n_max = o.ngram_max.unwrap_or(cfg.ngram.n_max);
    cfg.ngram.min_df = o.min_df.unwrap_or(cfg.ngram.min_df);
    cfg.idf_scope = o.idf_scope.unwrap_or(cfg.idf_scope);
    cfg.k = o.k.unwrap_or(cfg.k);
    cfg.cluster_space = o.cluster_space.unwrap_or(cfg.cluster_space);
    cfg.max_lag = o.max_lag.unwrap_or(cfg.max_lag);
    let ts = |s: &str| parse_timestamp(s).ok_or_else(|| config_error(format!("cannot parse time {s:?}")));
    match (&o.from, &o.to) {
        (Some(a), Some(b)) => cfg.window = Some(Window::new(ts(a)?, ts(b)?)),
        (None, None) => {}
        _ => return Err(config_error("--from and --to must be given together")),
    }
    Ok(())
}

/// Upstream stages implied by the inputs, followed by `last`.
fn stages_for(cfg: &RunConfig, last: &[Stage]) -> Vec<Stage> {
    let mut stages = Vec::new();
    if !cfg.inputs.is_empty() {
        stages.push(Stage::Ingest);
        if cfg.keywords.is_some() {
            stages.push(Stage::Filter);
        }
    }
    for s in last {
        if !stages.contains(s) {
            stages.push(*s);
        }
    }
    stages
}

fn pipeline(cli: &Cli, opts: &Opts, stages: Option<&[Stage]>) -> Result<RunConfig, Failure> {
    let mut cfg = base_config(cli)?;
    apply(&mut cfg, opts)?;
    cfg.stages = match stages {
        Some(last) => stages_for(&cfg, last),
        // a full run keeps the configured stage list but skips what has no input
        None => {
            let wanted = if cli.config.is_some() { cfg.stages.clone() } else { Stage::ALL.to_vec() };
            wanted
                .into_iter()
                .filter(|s| match s {
                    Stage::Ingest => !cfg.inputs.is_empty(),
                    Stage::Filter => !cfg.inputs.is_empty() && cfg.keywords.is_some(),
                    _ => true,
                })
                .collect()
        }
    };
    let manifest = run_pipeline(&cfg)?;
    log::info!("{} artifacts in {}", manifest.artifacts.len(), cfg.out_dir.display());
    Ok(cfg)
}

fn print_file(path: &Path) -> Result<(), Failure> {
    print!("{}", read(path)?);
    Ok(())
}

fn synth_failure(e: SynthError) -> Failure {
    match e {
        SynthError::InvalidConfig(_) => config_error(e.to_string()),
        _ => Failure(3, e.to_string()),
    }
}

fn synth(cli: &Cli, cmd: &Synth) -> Result<(), Failure> {
    match cmd {
        Synth::Generate { spec } => {
            let out = cli.out.clone().ok_or_else(|| config_error("--out is required"))?;
            let mut cfg: GeneratorConfig =
                serde_json::from_str(&read(spec)?).map_err(|e| config_error(format!("{}: {e}", spec.display())))?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let (corpus, truth) = generate(&cfg).map_err(synth_failure)?;
            let unwritable = |e: std::io::Error| Failure(2, format!("{}: {e}", out.display()));
            fs::create_dir_all(&out).map_err(unwritable)?;
            fs::write(out.join("synthetic.jsonl"), corpus.to_jsonl()).map_err(unwritable)?;
            fs::write(out.join("ground_truth.json"), truth.to_json()).map_err(unwritable)?;
            println!("{} messages, {} planted pairs", corpus.len(), truth.planted_pairs.len());
            Ok(())
        }
        Synth::Evaluate { report, truth } => {
            let report: DetectionReport =
                serde_json::from_str(&read(report)?).map_err(|e| Failure(3, format!("{}: {e}", report.display())))?;
            let truth: GroundTruth =
                serde_json::from_str(&read(truth)?).map_err(|e| Failure(3, format!("{}: {e}", truth.display())))?;
            let eval = evaluate(&report, &truth).map_err(synth_failure)?;
            let json = serde_json::to_string_pretty(&eval).expect("evaluation serializes");
            if let Some(out) = &cli.out {
                fs::create_dir_all(out)
                    .and_then(|()| fs::write(out.join("evaluation.json"), format!("{json}\n")))
                    .map_err(|e| Failure(2, format!("{}: {e}", out.display())))?;
            }
            println!("{json}");
            Ok(())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let single = |opts: &Opts, stage: Stage| -> Result<(), Failure> {
        let cfg = pipeline(cli, opts, Some(&[stage]))?;
        print_file(&cfg.out_dir.join(SUMMARY))
    };
    match &cli.command {
        Command::Ingest(o) => {
            let cfg = pipeline(cli, o, Some(&[Stage::Ingest]))?;
            print_file(&cfg.out_dir.join(SUMMARY))
        }
        Command::Filter(o) => {
            if o.keywords.is_none() && cli.config.is_none() {
                return Err(config_error("filter needs --keywords"));
            }
            let cfg = pipeline(cli, o, Some(&[]))?;
            print_file(&cfg.out_dir.join(SUMMARY))
        }
        Command::Stats(o) => single(o, Stage::Stats),
        Command::Detect(o) => single(o, Stage::Detect),
        Command::Sweep(o) => single(o, Stage::Sweep),
        Command::Control(o) => single(o, Stage::Control),
        Command::Feasibility(o) => single(o, Stage::Feasibility),
        Command::Narrative(o) => single(o, Stage::Narrative),
        Command::Graph(o) => single(o, Stage::Graph),
        Command::Analytics { kind, opts } => {
            let cfg = pipeline(cli, opts, Some(&[Stage::Analytics]))?;
            match kind {
                Some(k) => print_file(&cfg.out_dir.join(k.artifact())),
                None => print_file(&cfg.out_dir.join(SUMMARY)),
            }
        }
        Command::Run(o) => {
            let cfg = pipeline(cli, o, None)?;
            print_file(&cfg.out_dir.join(SUMMARY))
        }
        Command::Synth(cmd) => synth(cli, cmd),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
