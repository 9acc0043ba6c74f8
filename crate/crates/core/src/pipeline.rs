//! End-to-end orchestration: runs the requested stages in dependency order,
//! writes each stage's artifacts into one output directory, and finishes
//! with a human-readable summary and a digest manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    acr_csv, acr_from, bursts_csv, cdf_csv, channel_cdf, detect_bursts, interarrival, lead_lag, volume_series, AcrPoint,
    AnalyticsError, BurstConfig,
};
use crate::coordination::{
    feasibility, negative_control, parse_sweep, project_graph, score_pairs, validate_tau, DetectionReport, DetectorConfig,
    Resolution, ScoreSet,
};
use crate::corpus::{corpus_stats, keyword_filter, load_keywords, parse_jsonl, Corpus, FieldMapping};
use crate::export::{csv_bytes, fmt_f64, json_bytes, sha256_hex};
use crate::narrative::{analyze_window, scatter_csv, ClusterSpace};
use crate::simindex::{IdfScope, NGramConfig};
use crate::synthlab::Window;

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.txt";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const DEFAULT_SWEEP: &str = "0.5:0.95:0.05";
const PROBE: &str = ".coordscope-write-probe";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Filter,
    Stats,
    Detect,
    Sweep,
    Control,
    Feasibility,
    Analytics,
    Narrative,
    Graph,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Filter,
        Stage::Stats,
        Stage::Detect,
        Stage::Sweep,
        Stage::Control,
        Stage::Feasibility,
        Stage::Analytics,
        Stage::Narrative,
        Stage::Graph,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Stats => "stats",
            Stage::Detect => "detect",
            Stage::Sweep => "sweep",
            Stage::Control => "control",
            Stage::Feasibility => "feasibility",
            Stage::Analytics => "analytics",
            Stage::Narrative => "narrative",
            Stage::Graph => "graph",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_resolution() -> Resolution {
    Resolution::Daily
}
fn default_tau() -> f64 {
    0.85
}
fn default_replicates() -> usize {
    20
}
fn default_k() -> usize {
    5
}
fn default_max_lag() -> usize {
    7
}
fn default_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

/// Full run configuration; the JSON config file mirrors this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// JSONL inputs. When empty, the corpus is read back from `corpus.jsonl`
    /// in the output directory.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub mapping: FieldMapping,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
    #[serde(default = "default_resolution")]
    pub resolution: Resolution,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// `lo:hi:step`, inclusive.
    #[serde(default)]
    pub sweep: Option<String>,
    #[serde(default)]
    pub ngram: NGramConfig,
    #[serde(default)]
    pub idf_scope: IdfScope,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Narrative window, half-open. Defaults to the whole corpus.
    #[serde(default)]
    pub window: Option<Window>,
    #[serde(default)]
    pub cluster_space: ClusterSpace,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default)]
    pub burst: BurstConfig,
    pub out_dir: PathBuf,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
}

impl RunConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            inputs: Vec::new(),
            mapping: FieldMapping::default(),
            keywords: None,
            resolution: default_resolution(),
            tau: default_tau(),
            sweep: None,
            ngram: NGramConfig::default(),
            idf_scope: IdfScope::default(),
            seed: 0,
            replicates: default_replicates(),
            k: default_k(),
            window: None,
            cluster_space: ClusterSpace::default(),
            max_lag: default_max_lag(),
            burst: BurstConfig::default(),
            out_dir: out_dir.into(),
            stages: default_stages(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("config: {e}")))
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig { resolution: self.resolution, ngram: self.ngram, idf_scope: self.idf_scope }
    }

    pub fn taus(&self) -> Result<Vec<f64>, PipelineError> {
        parse_sweep(self.sweep.as_deref().unwrap_or(DEFAULT_SWEEP)).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn runs(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: String| Err(PipelineError::Config(m));
        for p in self.inputs.iter().chain(&self.keywords) {
            if !p.is_file() {
                return cfg(format!("input {} does not exist", p.display()));
            }
        }
        if self.stages.is_empty() {
            return cfg("no stages requested".into());
        }
        if self.inputs.is_empty() && (self.runs(Stage::Ingest) || self.runs(Stage::Filter)) {
            return cfg("ingest needs at least one input file".into());
        }
        if self.runs(Stage::Filter) && self.keywords.is_none() {
            return cfg("filter stage needs a keyword file".into());
        }
        validate_tau(self.tau).map_err(|e| PipelineError::Config(e.to_string()))?;
        self.taus()?;
        self.ngram.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.runs(Stage::Control) && self.replicates == 0 {
            return cfg("control needs at least one replicate".into());
        }
        if self.runs(Stage::Narrative) && self.k < 2 {
            return cfg(format!("k must be at least 2, got {}", self.k));
        }
        if let Some(w) = self.window {
            if w.end <= w.start {
                return cfg("narrative window end must be after its start".into());
            }
        }
        if !(self.burst.z.is_finite() && self.burst.window >= 1) {
            return cfg("burst z must be finite and window at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stage {stage} failed: {cause}")]
    Stage { stage: Stage, cause: String },
    #[error("output directory {path} is not writable: {cause}")]
    Unwritable { path: PathBuf, cause: String },
}

impl PipelineError {
    /// Process exit code: 2 configuration, 3 data, 4 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Unwritable { .. } => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Stage { .. } => 4,
        }
    }
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
    /// Stage that wrote the file in this run, `report` for the summary, or
    /// `cached` for files left by an earlier run.
    pub producer: String,
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub ok: bool,
    pub wall_ms: f64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit: String,
    pub version: String,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl RunManifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn metric(&self, stage: Stage, name: &str) -> Option<f64> {
        self.stage(stage).and_then(|s| s.metrics.get(name).copied())
    }

    pub fn to_json(&self) -> Vec<u8> {
        json_bytes(self)
    }
}

fn fail(stage: Stage) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage { stage, cause: e.to_string() }
}

/// Files, metrics and summary text produced by one stage.
struct StageOut<'d> {
    dir: &'d Path,
    record: StageRecord,
    written: Vec<String>,
    summary: Option<String>,
}

impl StageOut<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        self.written.push(name.to_string());
        fs::write(self.dir.join(name), bytes).map_err(|e| fail(self.record.stage)(&format!("writing {name}: {e}")))?;
        self.record.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.record.metrics.insert(name.to_string(), value);
    }

    fn input(&mut self, name: &str, digest: String) {
        self.record.inputs.insert(name.to_string(), digest);
    }

    fn note(&mut self, note: String) {
        log::info!("{}: {note}", self.record.stage);
        self.record.notes.push(note);
    }

    fn say(&mut self, text: String) {
        let s = self.summary.get_or_insert_with(String::new);
        s.push_str(&text);
        if !text.ends_with('\n') {
            s.push('\n');
        }
    }
}

struct Recorder<'d> {
    dir: &'d Path,
    records: Vec<StageRecord>,
    produced: BTreeMap<String, (String, bool)>,
    summary: Vec<(Stage, String)>,
}

impl<'d> Recorder<'d> {
    fn stage<T>(&mut self, stage: Stage, body: impl FnOnce(&mut StageOut<'d>) -> Result<T, PipelineError>) -> Result<T, PipelineError> {
        log::info!("stage {stage}");
        let started = Instant::now();
        let mut out = StageOut {
            dir: self.dir,
            record: StageRecord {
                stage,
                ok: true,
                wall_ms: 0.0,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                metrics: BTreeMap::new(),
                notes: Vec::new(),
                error: None,
            },
            written: Vec::new(),
            summary: None,
        };
        let result = body(&mut out);
        out.record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        if let Err(e) = &result {
            out.record.ok = false;
            out.record.error = Some(e.to_string());
        }
        for name in out.written {
            self.produced.insert(name, (stage.name().to_string(), result.is_err()));
        }
        if let Some(s) = out.summary {
            self.summary.push((stage, s));
        }
        self.records.push(out.record);
        result
    }

    fn render_summary(&self, cfg: &RunConfig) -> String {
        let mut out = format!(
            "coordscope {} run summary\nresolution {}, tau {}, seed {}\n",
            env!("CARGO_PKG_VERSION"),
            cfg.resolution,
            fmt_f64(cfg.tau),
            cfg.seed
        );
        for (stage, body) in &self.summary {
            let title = stage.name();
            let _ = write!(out, "\n[{title}]\n{body}");
        }
        for r in self.records.iter().filter(|r| !r.ok) {
            let _ = writeln!(out, "\n[{}] FAILED: {}", r.stage, r.error.as_deref().unwrap_or(""));
        }
        out
    }
}

fn ensure_writable(dir: &Path) -> Result<(), PipelineError> {
    let unwritable = |e: std::io::Error| PipelineError::Unwritable { path: dir.to_path_buf(), cause: e.to_string() };
    fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(PROBE);
    fs::write(&probe, b"").map_err(unwritable)?;
    fs::remove_file(&probe).map_err(unwritable)
}

/// Reads the corpus cached by an earlier run.
pub fn load_cached_corpus(dir: &Path) -> Result<Corpus, PipelineError> {
    let path = dir.join(CORPUS_FILE);
    let file = fs::File::open(&path).map_err(|e| PipelineError::Config(format!("no inputs given and cannot read {}: {e}", path.display())))?;
    let parsed = parse_jsonl(BufReader::new(file), &FieldMapping::default()).map_err(|e| PipelineError::Data(e.to_string()))?;
    if !parsed.issues.is_empty() {
        return Err(PipelineError::Data(format!("{} has {} unreadable lines", path.display(), parsed.issues.len())));
    }
    Ok(parsed.corpus)
}

/// Runs every requested stage in dependency order, writes `summary.txt`, and
/// writes the manifest last. When a stage fails the manifest is still
/// written, that stage's files are flagged incomplete, and the error is
/// returned.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let dir = cfg.out_dir.as_path();
    ensure_writable(dir)?;
    // a manifest from an earlier run must not describe this one
    let _ = fs::remove_file(dir.join(MANIFEST));

    let mut rec = Recorder { dir, records: Vec::new(), produced: BTreeMap::new(), summary: Vec::new() };
    let result = run_stages(cfg, &mut rec);
    let manifest = finish(cfg, &rec)?;
    result.map(|()| manifest)
}

fn run_stages(cfg: &RunConfig, rec: &mut Recorder<'_>) -> Result<(), PipelineError> {
    let mut corpus: Option<Corpus> = None;

    if cfg.runs(Stage::Ingest) {
        corpus = Some(rec.stage(Stage::Ingest, |out| {
            let mut shards = Vec::new();
            let mut issues = Vec::new();
            for path in &cfg.inputs {
                let bytes = fs::read(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
                out.input(&path.display().to_string(), sha256_hex(&bytes));
                let parsed = parse_jsonl(bytes.as_slice(), &cfg.mapping).map_err(|e| PipelineError::Data(e.to_string()))?;
                for i in &parsed.issues {
                    let kind = serde_json::to_value(i.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                    issues.push(vec![path.display().to_string(), i.line.to_string(), kind, i.message.clone()]);
                }
                shards.push(parsed.corpus);
            }
            let corpus = Corpus::merge(shards);
            out.metric("messages", corpus.len() as f64);
            out.metric("issues", issues.len() as f64);
            out.write("ingest_errors.csv", &csv_bytes(&["file", "line", "kind", "message"], issues.iter()))?;
            if !cfg.runs(Stage::Filter) {
                out.write(CORPUS_FILE, &corpus.to_jsonl())?;
            }
            out.say(format!("{} messages from {} file(s), {} unreadable record(s)", corpus.len(), cfg.inputs.len(), issues.len()));
            Ok(corpus)
        })?);
    }

    if cfg.runs(Stage::Filter) {
        let base = corpus.take().expect("ingest runs whenever filter does");
        corpus = Some(rec.stage(Stage::Filter, |out| {
            let path = cfg.keywords.as_ref().expect("validated");
            let text = fs::read_to_string(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
            out.input(&path.display().to_string(), sha256_hex(text.as_bytes()));
            let keywords = load_keywords(&text);
            let filtered = keyword_filter(&base, &keywords).map_err(|e| PipelineError::Config(e.to_string()))?;
            out.metric("before", base.len() as f64);
            out.metric("after", filtered.len() as f64);
            out.write(CORPUS_FILE, &filtered.to_jsonl())?;
            out.say(format!("{} of {} messages match {} keyword(s)", filtered.len(), base.len(), keywords.len()));
            Ok(filtered)
        })?);
    }

    let graph_only_from_cache = cfg.stages.iter().all(|s| matches!(s, Stage::Ingest | Stage::Filter | Stage::Graph))
        && !cfg.runs(Stage::Detect);
    let analysis_stages = cfg.stages.iter().any(|s| !matches!(s, Stage::Ingest | Stage::Filter));
    if !analysis_stages {
        return Ok(());
    }
    let corpus = match corpus {
        Some(c) => c,
        None if graph_only_from_cache => Corpus::default(),
        None => load_cached_corpus(rec.dir)?,
    };
    if corpus.is_empty() && !graph_only_from_cache {
        return Err(PipelineError::Data("corpus is empty; nothing to analyse".into()));
    }
    analyse(cfg, rec, &corpus)
}

fn ensure_scores<'c, 's>(slot: &'s mut Option<ScoreSet<'c>>, corpus: &'c Corpus, det: &DetectorConfig, stage: Stage) -> Result<&'s ScoreSet<'c>, PipelineError> {
    if slot.is_none() {
        *slot = Some(score_pairs(corpus, det).map_err(|e| fail(stage)(&e))?);
    }
    Ok(slot.as_ref().expect("filled above"))
}

fn analyse(cfg: &RunConfig, rec: &mut Recorder<'_>, corpus: &Corpus) -> Result<(), PipelineError> {
    let det = cfg.detector();
    let taus = cfg.taus()?;
    let digest = if corpus.is_empty() { String::new() } else { corpus.digest() };
    let mut scores: Option<ScoreSet<'_>> = None;
    let mut report: Option<DetectionReport> = None;

    if cfg.runs(Stage::Stats) {
        rec.stage(Stage::Stats, |out| {
            out.input("corpus", digest.clone());
            let stats = corpus_stats(corpus).map_err(|e| PipelineError::Data(e.to_string()))?;
            out.write("stats.json", &stats.to_json())?;
            out.write("channel_stats.csv", &stats.to_csv())?;
            out.metric("total", stats.total as f64);
            out.metric("channels", stats.channels as f64);
            let mut s = format!(
                "{} messages in {} channels, {} to {}\nmedian {} and mean {:.1} messages per channel\n",
                stats.total, stats.channels, stats.date_min, stats.date_max, fmt_f64(stats.median_per_channel), stats.mean_per_channel
            );
            for (c, n) in stats.ranked() {
                let _ = writeln!(s, "  {c:<30} {n:>8} {:>7.2}%", stats.per_channel_pct[c]);
            }
            out.say(s);
            Ok(())
        })?;
    }

    if cfg.runs(Stage::Detect) {
        report = Some(rec.stage(Stage::Detect, |out| {
            out.input("corpus", digest.clone());
            let set = ensure_scores(&mut scores, corpus, &det, Stage::Detect)?;
            let r = set.report(cfg.tau).map_err(|e| fail(Stage::Detect)(&e))?;
            out.write("pairs.csv", &r.pairs_csv())?;
            out.write("histogram.csv", &r.histogram.to_csv())?;
            out.write(REPORT_FILE, &r.to_json())?;
            out.metric("pairs", r.pairs.len() as f64);
            out.metric("total_buckets", r.total_buckets as f64);
            out.metric("comparable_buckets", r.comparable_buckets as f64);
            out.metric("evaluated_pairs", r.evaluated_pairs as f64);
            out.say(format!(
                "{} cross-channel pairs at tau >= {} ({} buckets, {} comparable, {} pairs scored)",
                r.pairs.len(),
                fmt_f64(cfg.tau),
                r.total_buckets,
                r.comparable_buckets,
                r.evaluated_pairs
            ));
            Ok(r)
        })?);
    }

    if cfg.runs(Stage::Sweep) {
        rec.stage(Stage::Sweep, |out| {
            out.input("corpus", digest.clone());
            let set = ensure_scores(&mut scores, corpus, &det, Stage::Sweep)?;
            let curve = set.sweep(&taus).map_err(|e| fail(Stage::Sweep)(&e))?;
            out.write("pairs_vs_threshold.csv", &curve.to_csv())?;
            out.metric("taus", taus.len() as f64);
            out.metric("max_pairs", curve.pair_counts.iter().copied().max().unwrap_or(0) as f64);
            let mut s = String::new();
            for (t, n) in curve.taus.iter().zip(&curve.pair_counts) {
                let _ = writeln!(s, "  tau {:<5} {n:>8}", fmt_f64(*t));
            }
            out.say(s);
            Ok(())
        })?;
    }

    if cfg.runs(Stage::Control) {
        rec.stage(Stage::Control, |out| {
            out.input("corpus", digest.clone());
            let ctl = negative_control(corpus, &det, &taus, cfg.tau, cfg.seed, cfg.replicates).map_err(|e| fail(Stage::Control)(&e))?;
            out.write("control.json", &ctl.to_json())?;
            out.write("control_curves.csv", &ctl.curves_csv())?;
            out.write("control_summary.csv", &ctl.rows_csv())?;
            let original = &ctl.rows[0];
            let shuffled = &ctl.rows[1..];
            let n = shuffled.len() as f64;
            let mean = |f: fn(&crate::coordination::ControlRow) -> usize| shuffled.iter().map(|r| f(r) as f64).sum::<f64>() / n;
            let shuffled_pairs = mean(|r| r.pairs);
            out.metric("original_pairs", original.pairs as f64);
            out.metric("shuffled_pairs_mean", shuffled_pairs);
            out.metric("shuffled_pairs_max", shuffled.iter().map(|r| r.pairs).max().unwrap_or(0) as f64);
            out.metric("pairs", shuffled_pairs);
            let mut s = format!("{:<16} {:>8} {:>11} {:>12} {:>8}\n", "condition", "buckets", "comparable", "pair_buckets", "pairs");
            let _ = writeln!(s, "{:<16} {:>8} {:>11} {:>12} {:>8}", "original", original.buckets, original.comparable_buckets, original.pair_buckets, original.pairs);
            let _ = writeln!(
                s,
                "{:<16} {:>8} {:>11} {:>12} {:>8}",
                format!("shuffled (x{})", shuffled.len()),
                fmt_f64(mean(|r| r.buckets)),
                fmt_f64(mean(|r| r.comparable_buckets)),
                fmt_f64(mean(|r| r.pair_buckets)),
                fmt_f64(shuffled_pairs)
            );
            out.say(s);
            Ok(())
        })?;
    }

    if cfg.runs(Stage::Feasibility) {
        rec.stage(Stage::Feasibility, |out| {
            out.input("corpus", digest.clone());
            let f = feasibility(corpus, cfg.resolution);
            out.write("feasibility.json", &f.to_json())?;
            out.write("feasibility_buckets.csv", &f.buckets_csv())?;
            out.metric("total_buckets", f.total_buckets as f64);
            out.metric("comparable_buckets", f.comparable_buckets as f64);
            let unit = match cfg.resolution {
                Resolution::Hourly => "hourly",
                Resolution::Daily => "daily",
            };
            out.say(if f.is_estimable() {
                format!("{} of {} {unit} buckets contain at least two channels; coordination is estimable.", f.comparable_buckets, f.total_buckets)
            } else {
                format!(
                    "Coordination is not estimable on this corpus due to structural sparsity: none of the {} {unit} buckets contains messages from more than one channel.",
                    f.total_buckets
                )
            });
            Ok(())
        })?;
    }

    if cfg.runs(Stage::Analytics) {
        rec.stage(Stage::Analytics, |out| {
            out.input("corpus", digest.clone());
            let an = |e: AnalyticsError| fail(Stage::Analytics)(&e);
            let volume = volume_series(corpus, cfg.resolution).map_err(an)?;
            out.write("volume.csv", &volume.to_csv())?;
            let stats = corpus_stats(corpus).map_err(|e| PipelineError::Data(e.to_string()))?;
            out.write("channel_cdf.csv", &cdf_csv(&channel_cdf(&stats)))?;
            let gaps = interarrival(corpus, true);
            for s in &gaps.skipped {
                out.note(format!("inter-arrival: channel {s} has fewer than two messages"));
            }
            out.write("interarrival.csv", &gaps.to_csv())?;

            let bursts = match detect_bursts(&volume, &cfg.burst) {
                Ok(b) => b,
                Err(e @ AnalyticsError::SeriesTooShort { .. }) => {
                    out.note(format!("bursts skipped: {e}"));
                    Vec::new()
                }
                Err(e) => return Err(an(e)),
            };
            out.write("bursts.csv", &bursts_csv(&bursts))?;
            out.metric("bursts", bursts.len() as f64);

            let (lag_csv, first_rows) = match lead_lag(&volume, cfg.max_lag, &bursts, corpus) {
                Ok(r) => {
                    for c in &r.excluded {
                        out.note(format!("lead-lag: channel {c} has an all-zero series"));
                    }
                    (r.to_csv(), r.first_reporter.iter().map(|(c, n)| vec![c.clone(), n.to_string()]).collect())
                }
                Err(e @ AnalyticsError::TooFewChannels(_)) => {
                    out.note(format!("lead-lag skipped: {e}"));
                    (csv_bytes::<_, Vec<String>, String>(&["channel_a", "channel_b", "best_lag", "correlation"], []), Vec::new())
                }
                Err(e) => return Err(an(e)),
            };
            out.write("leadlag.csv", &lag_csv)?;
            out.write("first_reporters.csv", &csv_bytes(&["channel", "bursts_first"], first_rows))?;

            let daily_report = match (cfg.resolution, &scores) {
                (Resolution::Daily, Some(set)) => set.report(cfg.tau),
                _ => {
                    let daily = DetectorConfig { resolution: Resolution::Daily, ..det };
                    score_pairs(corpus, &daily).and_then(|s| s.report(cfg.tau))
                }
            }
            .map_err(|e| fail(Stage::Analytics)(&e))?;
            let daily_volume = volume_series(corpus, Resolution::Daily).map_err(an)?;
            let acr = acr_from(&daily_volume, &daily_report).map_err(an)?;
            out.write("acr.csv", &acr_csv(&acr))?;
            out.metric("acr_days", acr.len() as f64);

            let mut s = String::new();
            if bursts.is_empty() {
                s.push_str("no bursts detected\n");
            }
            for b in &bursts {
                let _ = writeln!(s, "burst {} to {}, peak {} (baseline {:.2} +/- {:.2})", b.start.label(), b.end.label(), b.peak_volume, b.baseline_mean, b.baseline_std);
            }
            s.push_str(&acr_extremes(&acr));
            out.say(s);
            Ok(())
        })?;
    }

    if cfg.runs(Stage::Narrative) {
        rec.stage(Stage::Narrative, |out| {
            out.input("corpus", digest.clone());
            let window = cfg.window.map(|w| (w.start, w.end)).unwrap_or_else(|| {
                let m = corpus.messages();
                (m[0].timestamp, m[m.len() - 1].timestamp + 1)
            });
            let res = analyze_window(corpus, window, cfg.k, cfg.seed, &cfg.ngram, cfg.cluster_space).map_err(|e| fail(Stage::Narrative)(&e))?;
            if res.projection.is_none() {
                out.note("window is rank deficient; scatter coordinates left blank".into());
            }
            out.write("narrative_scatter.csv", &scatter_csv(&res.model, res.projection.as_ref(), corpus))?;
            out.write("entropy.json", &res.entropy.to_json())?;
            out.metric("messages", res.model.members.len() as f64);
            out.metric("overall_entropy", res.entropy.overall);
            let mut s = format!("{} messages, k={}, cluster sizes {:?}\n", res.model.members.len(), cfg.k, res.entropy.cluster_sizes);
            let _ = writeln!(s, "  {:<30} {:.4} bits", "overall", res.entropy.overall);
            for (c, h) in &res.entropy.per_channel {
                let _ = writeln!(s, "  {c:<30} {h:.4} bits");
            }
            out.say(s);
            Ok(())
        })?;
    }

    if cfg.runs(Stage::Graph) {
        rec.stage(Stage::Graph, |out| {
            let r = match report.take() {
                Some(r) => r,
                None => {
                    let bytes = fs::read(rec_dir(cfg).join(REPORT_FILE))
                        .map_err(|e| PipelineError::Config(format!("graph needs detect or a cached {REPORT_FILE}: {e}")))?;
                    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Data(format!("{REPORT_FILE}: {e}")))?
                }
            };
            out.input(REPORT_FILE, sha256_hex(&r.to_json()));
            let g = project_graph(&r.pairs);
            out.write("graph.json", &g.to_json())?;
            out.write("graph_edges.csv", &g.edges_csv())?;
            out.metric("nodes", g.nodes.len() as f64);
            out.metric("edges", g.edges.len() as f64);
            out.say(format!("{} nodes, {} edges", g.nodes.len(), g.edges.len()));
            Ok(())
        })?;
    }
    Ok(())
}

fn rec_dir(cfg: &RunConfig) -> &Path {
    cfg.out_dir.as_path()
}

fn acr_extremes(acr: &[AcrPoint]) -> String {
    let active: Vec<&AcrPoint> = acr.iter().filter(|p| p.volume > 0).collect();
    let (Some(hi), Some(lo)) = (
        active.iter().max_by(|a, b| a.acr.total_cmp(&b.acr).then(b.day.cmp(&a.day))),
        active.iter().min_by(|a, b| a.acr.total_cmp(&b.acr).then(a.day.cmp(&b.day))),
    ) else {
        return "ACR: no active days\n".into();
    };
    let with_pairs = acr.iter().filter(|p| p.coord_pairs > 0).count();
    format!(
        "ACR max {} on {} (volume {}, pairs {}); min {} on {} (volume {}, pairs {}); {with_pairs} day(s) with detected pairs\n",
        fmt_f64(hi.acr),
        hi.day,
        hi.volume,
        hi.coord_pairs,
        fmt_f64(lo.acr),
        lo.day,
        lo.volume,
        lo.coord_pairs
    )
}

fn finish(cfg: &RunConfig, rec: &Recorder<'_>) -> Result<RunManifest, PipelineError> {
    let dir = rec.dir;
    let unwritable = |e: std::io::Error| PipelineError::Unwritable { path: dir.to_path_buf(), cause: e.to_string() };
    fs::write(dir.join(SUMMARY), rec.render_summary(cfg)).map_err(unwritable)?;

    let mut artifacts = BTreeMap::new();
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(unwritable)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST && n != PROBE)
        .collect();
    names.sort();
    for name in names {
        let bytes = fs::read(dir.join(&name)).map_err(unwritable)?;
        let (producer, incomplete) = if name == SUMMARY {
            ("report".to_string(), false)
        } else {
            rec.produced.get(&name).cloned().unwrap_or_else(|| ("cached".to_string(), false))
        };
        artifacts.insert(name, ArtifactEntry { sha256: sha256_hex(&bytes), bytes: bytes.len() as u64, producer, incomplete });
    }
    let manifest = RunManifest {
        toolkit: "coordscope".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        stages: rec.records.clone(),
        artifacts,
    };
    fs::write(dir.join(MANIFEST), manifest.to_json()).map_err(unwritable)?;
    Ok(manifest)
}
