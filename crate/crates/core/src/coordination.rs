//! Temporal bucketing and cross-channel near-duplicate detection.
//!
//! Messages are grouped into UTC-aligned hourly or daily buckets. Inside each
//! bucket every pair of messages from two different channels is scored with
//! TF-IDF cosine similarity; pairs scoring at least `tau` are coordination
//! candidates. Scores are computed once per (corpus, config) in a
//! [`ScoreSet`], and every threshold view (detection report, sweep, graph) is
//! a re-thresholding of that set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Message};
use crate::export::{csv_bytes, fmt_f64, json_bytes};
use crate::seed::rng_for;
use crate::simindex::{IdfScope, NGramConfig, SimIndexError, SparseVector, TermTable};
use crate::time::{floor_to, format_iso, SECONDS_PER_DAY, SECONDS_PER_HOUR};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum CoordinationError {
    #[error("tau must lie in (0, 1], got {0}")]
    InvalidTau(f64),
    #[error("threshold list is empty")]
    EmptyTaus,
    #[error("thresholds must be strictly ascending")]
    UnsortedTaus,
    #[error("invalid sweep spec {0:?} (expected lo:hi:step)")]
    InvalidSweep(String),
    #[error("negative control needs at least one replicate")]
    NoReplicates,
    #[error(transparent)]
    SimIndex(#[from] SimIndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "h")]
    Hourly,
    #[serde(rename = "D")]
    Daily,
}

impl Resolution {
    pub fn seconds(self) -> i64 {
        match self {
            Resolution::Hourly => SECONDS_PER_HOUR,
            Resolution::Daily => SECONDS_PER_DAY,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Resolution::Hourly => "h",
            Resolution::Daily => "D",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Resolution {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "h" | "H" | "hourly" | "hour" => Ok(Resolution::Hourly),
            "D" | "d" | "daily" | "day" => Ok(Resolution::Daily),
            other => Err(format!("unknown bucket resolution {other:?} (expected h|D)")),
        }
    }
}

/// A UTC-aligned temporal window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketKey {
    pub resolution: Resolution,
    /// Epoch seconds of the window start.
    pub start: i64,
}

impl BucketKey {
    pub fn containing(ts: i64, resolution: Resolution) -> Self {
        BucketKey { resolution, start: floor_to(ts, resolution.seconds()) }
    }

    pub fn end(&self) -> i64 {
        self.start + self.resolution.seconds()
    }

    pub fn next(&self) -> Self {
        BucketKey { resolution: self.resolution, start: self.end() }
    }

    /// ISO-8601 start for hourly buckets, calendar date for daily ones.
    pub fn label(&self) -> String {
        match self.resolution {
            Resolution::Hourly => format_iso(self.start),
            Resolution::Daily => crate::time::format_date(self.start),
        }
    }
}

/// Groups messages by floor-aligned bucket; empty buckets are absent.
pub fn bucketize(corpus: &Corpus, resolution: Resolution) -> BTreeMap<BucketKey, Vec<&Message>> {
    let mut buckets: BTreeMap<BucketKey, Vec<&Message>> = BTreeMap::new();
    for m in corpus.messages() {
        buckets.entry(BucketKey::containing(m.timestamp, resolution)).or_default().push(m);
    }
    buckets
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub resolution: Resolution,
    pub ngram: NGramConfig,
    pub idf_scope: IdfScope,
}

impl DetectorConfig {
    pub fn new(resolution: Resolution) -> Self {
        DetectorConfig { resolution, ngram: NGramConfig::default(), idf_scope: IdfScope::default() }
    }
}

/// A cross-channel pair from one bucket, in canonical orientation:
/// `(channel_a, msg_a) < (channel_b, msg_b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationPair {
    pub bucket: BucketKey,
    pub msg_a: String,
    pub msg_b: String,
    pub channel_a: String,
    pub channel_b: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    fn empty() -> Self {
        Histogram { counts: vec![0; HISTOGRAM_BINS] }
    }

    /// Equal-width bin over `[0, 1]`; a score of exactly 1 lands in the last bin.
    pub fn bin_of(score: f64) -> usize {
        ((score * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let n = self.counts.len() as f64;
        csv_bytes(
            &["bin_lo", "bin_hi", "count"],
            self.counts
                .iter()
                .enumerate()
                .map(|(i, c)| vec![fmt_f64(i as f64 / n), fmt_f64((i + 1) as f64 / n), c.to_string()]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub config: DetectorConfig,
    pub corpus_digest: String,
    pub resolution: Resolution,
    pub tau: f64,
    pub total_buckets: usize,
    pub comparable_buckets: usize,
    pub pair_buckets: usize,
    pub evaluated_pairs: usize,
    pub pairs: Vec<CoordinationPair>,
    pub histogram: Histogram,
}

impl DetectionReport {
    pub fn to_json(&self) -> Vec<u8> {
        json_bytes(self)
    }

    pub fn pairs_csv(&self) -> Vec<u8> {
        pairs_csv(&self.pairs)
    }

    /// Detected pairs per bucket start.
    pub fn pairs_per_bucket(&self) -> BTreeMap<i64, usize> {
        let mut out = BTreeMap::new();
        for p in &self.pairs {
            *out.entry(p.bucket.start).or_default() += 1;
        }
        out
    }
}

pub fn pairs_csv(pairs: &[CoordinationPair]) -> Vec<u8> {
    csv_bytes(
        &["bucket_start", "resolution", "channel_a", "msg_a", "channel_b", "msg_b", "score"],
        pairs.iter().map(|p| {
            vec![
                format_iso(p.bucket.start),
                p.bucket.resolution.code().to_string(),
                p.channel_a.clone(),
                p.msg_a.clone(),
                p.channel_b.clone(),
                p.msg_b.clone(),
                fmt_f64(p.score),
            ]
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCensus {
    pub bucket: BucketKey,
    pub messages: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy)]
struct ScoredPair {
    bucket: u32,
    a: u32,
    b: u32,
    score: f64,
}

/// Every evaluated cross-channel pair of a corpus with its score.
#[derive(Debug, Clone)]
pub struct ScoreSet<'c> {
    corpus: &'c Corpus,
    config: DetectorConfig,
    census: Vec<BucketCensus>,
    scored: Vec<ScoredPair>,
}

/// Scores all cross-channel pairs inside every bucket. Buckets are scored in
/// parallel and merged in bucket order.
pub fn score_pairs<'c>(corpus: &'c Corpus, config: &DetectorConfig) -> Result<ScoreSet<'c>, CoordinationError> {
    let table = term_table(corpus, config)?;
    let stamps: Vec<i64> = corpus.messages().iter().map(|m| m.timestamp).collect();
    Ok(score_with(corpus, config, &table, &stamps))
}

fn term_table(corpus: &Corpus, config: &DetectorConfig) -> Result<TermTable, CoordinationError> {
    let texts: Vec<&str> = corpus.messages().iter().map(|m| m.norm_text.as_str()).collect();
    Ok(TermTable::build(&texts, &config.ngram)?)
}

/// Scores `corpus` as if message `i` were posted at `stamps[i]`.
fn score_with<'c>(corpus: &'c Corpus, config: &DetectorConfig, table: &TermTable, stamps: &[i64]) -> ScoreSet<'c> {
    let messages = corpus.messages();
    // position of each message in (channel, id) order, and a dense channel index
    let mut by_channel: Vec<u32> = (0..messages.len() as u32).collect();
    by_channel.sort_by(|&x, &y| {
        let (mx, my) = (&messages[x as usize], &messages[y as usize]);
        mx.channel.cmp(&my.channel).then_with(|| mx.id.cmp(&my.id))
    });
    let mut rank = vec![0u32; messages.len()];
    let mut channel = vec![0u32; messages.len()];
    for (r, w) in by_channel.iter().enumerate() {
        rank[*w as usize] = r as u32;
        if r > 0 {
            let prev = by_channel[r - 1] as usize;
            channel[*w as usize] = channel[prev] + (messages[prev].channel != messages[*w as usize].channel) as u32;
        }
    }

    let mut groups: BTreeMap<BucketKey, Vec<u32>> = BTreeMap::new();
    for (i, &ts) in stamps.iter().enumerate() {
        groups.entry(BucketKey::containing(ts, config.resolution)).or_default().push(i as u32);
    }
    let groups: Vec<(BucketKey, Vec<u32>)> = groups.into_iter().collect();

    let global = match config.idf_scope {
        IdfScope::Global => Some(table.vectorize(&(0..messages.len() as u32).collect::<Vec<_>>())),
        IdfScope::Bucket => None,
    };

    let per_bucket: Vec<(BucketCensus, Vec<ScoredPair>)> = groups
        .par_iter()
        .enumerate()
        .map(|(bi, (key, members))| {
            let mut members = members.clone();
            members.sort_unstable_by_key(|&i| rank[i as usize]);
            let channels = 1 + members.windows(2).filter(|w| channel[w[0] as usize] != channel[w[1] as usize]).count();
            let census = BucketCensus { bucket: *key, messages: members.len(), channels };
            if channels < 2 {
                return (census, Vec::new());
            }
            let local;
            let (vectors, vocab): (Vec<&SparseVector>, usize) = match &global {
                Some((all, vocab)) => (members.iter().map(|&i| &all[i as usize]).collect(), *vocab),
                None => {
                    local = table.vectorize(&members);
                    (local.0.iter().collect(), local.1)
                }
            };
            // x is scattered into a dense buffer; summing y's entries in index
            // order adds exact zeros for unshared terms, so each score equals
            // the merge-join cosine bit for bit
            let mut dense = vec![0.0; vocab];
            let mut scored = Vec::new();
            for x in 0..members.len() {
                let vx = vectors[x];
                vx.iter().for_each(|(i, v)| dense[i as usize] = v);
                for y in x + 1..members.len() {
                    let (a, b) = (members[x], members[y]);
                    if channel[a as usize] == channel[b as usize] {
                        continue;
                    }
                    let vy = vectors[y];
                    let score = if vx.is_empty() || vy.is_empty() {
                        0.0
                    } else if vx == vy {
                        1.0
                    } else {
                        vy.dot_dense(&dense).clamp(0.0, 1.0)
                    };
                    scored.push(ScoredPair { bucket: bi as u32, a, b, score });
                }
                vx.indices().iter().for_each(|&i| dense[i as usize] = 0.0);
            }
            (census, scored)
        })
        .collect();

    let mut census = Vec::with_capacity(per_bucket.len());
    let mut scored = Vec::new();
    for (c, s) in per_bucket {
        census.push(c);
        scored.extend(s);
    }
    ScoreSet { corpus, config: *config, census, scored }
}

pub fn validate_tau(tau: f64) -> Result<(), CoordinationError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(CoordinationError::InvalidTau(tau))
    }
}

pub fn validate_taus(taus: &[f64]) -> Result<(), CoordinationError> {
    if taus.is_empty() {
        return Err(CoordinationError::EmptyTaus);
    }
    for &t in taus {
        validate_tau(t)?;
    }
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoordinationError::UnsortedTaus);
    }
    Ok(())
}

impl<'c> ScoreSet<'c> {
    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn census(&self) -> &[BucketCensus] {
        &self.census
    }

    pub fn total_buckets(&self) -> usize {
        self.census.len()
    }

    pub fn comparable_buckets(&self) -> usize {
        self.census.iter().filter(|c| c.channels >= 2).count()
    }

    pub fn evaluated_pairs(&self) -> usize {
        self.scored.len()
    }

    /// Raw scores of every evaluated pair, in report order.
    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scored.iter().map(|p| p.score)
    }

    pub fn count_at(&self, tau: f64) -> usize {
        self.scored.iter().filter(|p| p.score >= tau).count()
    }

    /// Pairs scoring at least `tau`, ordered by bucket then canonical pair.
    pub fn pairs_at(&self, tau: f64) -> Vec<CoordinationPair> {
        let messages = self.corpus.messages();
        self.scored
            .iter()
            .filter(|p| p.score >= tau)
            .map(|p| {
                let (a, b) = (&messages[p.a as usize], &messages[p.b as usize]);
                CoordinationPair {
                    bucket: self.census[p.bucket as usize].bucket,
                    msg_a: a.id.clone(),
                    msg_b: b.id.clone(),
                    channel_a: a.channel.clone(),
                    channel_b: b.channel.clone(),
                    score: p.score,
                }
            })
            .collect()
    }

    pub fn histogram(&self) -> Histogram {
        let mut h = Histogram::empty();
        for p in &self.scored {
            h.counts[Histogram::bin_of(p.score)] += 1;
        }
        h
    }

    pub fn report(&self, tau: f64) -> Result<DetectionReport, CoordinationError> {
        validate_tau(tau)?;
        let pairs = self.pairs_at(tau);
        let pair_buckets = pairs.iter().map(|p| p.bucket).collect::<BTreeSet<_>>().len();
        Ok(DetectionReport {
            config: self.config,
            corpus_digest: self.corpus.digest(),
            resolution: self.config.resolution,
            tau,
            total_buckets: self.total_buckets(),
            comparable_buckets: self.comparable_buckets(),
            pair_buckets,
            evaluated_pairs: self.scored.len(),
            pairs,
            histogram: self.histogram(),
        })
    }

    pub fn sweep(&self, taus: &[f64]) -> Result<SweepCurve, CoordinationError> {
        validate_taus(taus)?;
        let mut scores: Vec<f64> = self.scores().collect();
        scores.sort_unstable_by(|a, b| a.total_cmp(b));
        // pairs with score >= tau = len - (first index with score >= tau)
        let pair_counts = taus.iter().map(|&t| scores.len() - scores.partition_point(|&s| s < t)).collect();
        Ok(SweepCurve { resolution: self.config.resolution, taus: taus.to_vec(), pair_counts })
    }

    pub fn control_row(&self, condition: &str, tau: f64) -> ControlRow {
        let pairs = self.pairs_at(tau);
        ControlRow {
            condition: condition.to_string(),
            buckets: self.total_buckets(),
            comparable_buckets: self.comparable_buckets(),
            pair_buckets: pairs.iter().map(|p| p.bucket).collect::<BTreeSet<_>>().len(),
            pairs: pairs.len(),
        }
    }
}

/// Scores the corpus and keeps pairs at or above `tau`. An empty corpus gives
/// an all-zero report.
pub fn detect(corpus: &Corpus, config: &DetectorConfig, tau: f64) -> Result<DetectionReport, CoordinationError> {
    validate_tau(tau)?;
    score_pairs(corpus, config)?.report(tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub resolution: Resolution,
    pub taus: Vec<f64>,
    pub pair_counts: Vec<usize>,
}

impl SweepCurve {
    pub fn to_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["tau", "pairs"],
            self.taus.iter().zip(&self.pair_counts).map(|(t, n)| vec![fmt_f64(*t), n.to_string()]),
        )
    }
}

pub fn threshold_sweep(corpus: &Corpus, config: &DetectorConfig, taus: &[f64]) -> Result<SweepCurve, CoordinationError> {
    validate_taus(taus)?;
    score_pairs(corpus, config)?.sweep(taus)
}

/// Parses `lo:hi:step` into an inclusive ascending grid. Grid points are
/// rounded to 10 decimals so `0.5:0.99:0.01` yields exactly 0.55, 0.56, ...
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>, CoordinationError> {
    let bad = || CoordinationError::InvalidSweep(spec.to_string());
    let parts: Vec<f64> = spec.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [lo, hi, step] = parts[..] else { return Err(bad()) };
    if !step.is_finite() || step <= 0.0 || !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(bad());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let taus: Vec<f64> = (0..=n).map(|i| ((lo + i as f64 * step) * 1e10).round() / 1e10).collect();
    validate_taus(&taus)?;
    Ok(taus)
}

/// Permutes timestamps within each channel. Each channel draws from its own
/// stream derived from `seed` and the channel name, so the result does not
/// depend on channel iteration order. Ids, texts and channels are untouched.
pub fn shuffle_timestamps(corpus: &Corpus, seed: u64) -> Corpus {
    let mut messages: Vec<Message> = corpus.messages().to_vec();
    for (m, ts) in messages.iter_mut().zip(shuffled_stamps(corpus, seed)) {
        m.timestamp = ts;
    }
    Corpus::new(messages).expect("timestamps drawn from a valid corpus")
}

/// The timestamps [`shuffle_timestamps`] assigns, aligned with `corpus.messages()`.
fn shuffled_stamps(corpus: &Corpus, seed: u64) -> Vec<i64> {
    let mut by_channel: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in corpus.messages().iter().enumerate() {
        by_channel.entry(m.channel.as_str()).or_default().push(i);
    }
    let mut stamps: Vec<i64> = corpus.messages().iter().map(|m| m.timestamp).collect();
    for (channel, idx) in by_channel {
        let mut drawn: Vec<i64> = idx.iter().map(|&i| stamps[i]).collect();
        drawn.shuffle(&mut rng_for(seed, channel));
        for (&i, ts) in idx.iter().zip(drawn) {
            stamps[i] = ts;
        }
    }
    stamps
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlRow {
    pub condition: String,
    pub buckets: usize,
    pub comparable_buckets: usize,
    pub pair_buckets: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub resolution: Resolution,
    pub seed: u64,
    pub replicates: usize,
    /// Threshold used for the summary rows.
    pub reference_tau: f64,
    pub original: SweepCurve,
    pub shuffled: Vec<SweepCurve>,
    pub mean_shuffled: Vec<f64>,
    pub rows: Vec<ControlRow>,
}

impl ControlReport {
    pub fn to_json(&self) -> Vec<u8> {
        json_bytes(self)
    }

    /// `tau,original,shuffled_mean` per threshold.
    pub fn curves_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["tau", "original", "shuffled_mean"],
            self.original
                .taus
                .iter()
                .zip(&self.original.pair_counts)
                .zip(&self.mean_shuffled)
                .map(|((t, o), s)| vec![fmt_f64(*t), o.to_string(), fmt_f64(*s)]),
        )
    }

    pub fn rows_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["condition", "buckets", "comparable_buckets", "pair_buckets", "pairs"],
            self.rows.iter().map(|r| {
                vec![
                    r.condition.clone(),
                    r.buckets.to_string(),
                    r.comparable_buckets.to_string(),
                    r.pair_buckets.to_string(),
                    r.pairs.to_string(),
                ]
            }),
        )
    }
}

pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    crate::seed::derive_seed(seed, &format!("replicate-{replicate}"))
}

/// Sweeps the original corpus and `replicates` timestamp-shuffled copies.
pub fn negative_control(
    corpus: &Corpus,
    config: &DetectorConfig,
    taus: &[f64],
    reference_tau: f64,
    seed: u64,
    replicates: usize,
) -> Result<ControlReport, CoordinationError> {
    validate_taus(taus)?;
    validate_tau(reference_tau)?;
    if replicates == 0 {
        return Err(CoordinationError::NoReplicates);
    }
    let table = term_table(corpus, config)?;
    let stamps: Vec<i64> = corpus.messages().iter().map(|m| m.timestamp).collect();
    let original_scores = score_with(corpus, config, &table, &stamps);
    let original = original_scores.sweep(taus)?;
    let mut rows = vec![original_scores.control_row("original", reference_tau)];

    let shuffled: Vec<(SweepCurve, ControlRow)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            // same messages, permuted clocks: scoring the original corpus
            // under the shuffled stamps equals scoring the shuffled corpus
            let scores = score_with(corpus, config, &table, &shuffled_stamps(corpus, replicate_seed(seed, r)));
            Ok((scores.sweep(taus)?, scores.control_row(&format!("shuffled-{r}"), reference_tau)))
        })
        .collect::<Result<_, CoordinationError>>()?;

    let mut mean_shuffled = vec![0.0; taus.len()];
    for (curve, _) in &shuffled {
        for (acc, &n) in mean_shuffled.iter_mut().zip(&curve.pair_counts) {
            *acc += n as f64;
        }
    }
    mean_shuffled.iter_mut().for_each(|v| *v /= replicates as f64);
    let (curves, replicate_rows): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
    rows.extend(replicate_rows);

    Ok(ControlReport {
        resolution: config.resolution,
        seed,
        replicates,
        reference_tau,
        original,
        shuffled: curves,
        mean_shuffled,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    pub resolution: Resolution,
    pub total_buckets: usize,
    pub comparable_buckets: usize,
    /// Distinct channels per bucket, in bucket order.
    pub per_bucket_channel_counts: Vec<(BucketKey, usize)>,
}

impl Feasibility {
    /// Cross-source coordination can only be estimated when some bucket holds
    /// at least two channels.
    pub fn is_estimable(&self) -> bool {
        self.comparable_buckets > 0
    }

    pub fn to_json(&self) -> Vec<u8> {
        json_bytes(self)
    }

    pub fn buckets_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["bucket_start", "channels"],
            self.per_bucket_channel_counts.iter().map(|(k, n)| vec![format_iso(k.start), n.to_string()]),
        )
    }
}

pub fn feasibility(corpus: &Corpus, resolution: Resolution) -> Feasibility {
    let per_bucket: Vec<(BucketKey, usize)> = bucketize(corpus, resolution)
        .into_iter()
        .map(|(k, ms)| (k, ms.iter().map(|m| m.channel.as_str()).collect::<BTreeSet<_>>().len()))
        .collect();
    Feasibility {
        resolution,
        total_buckets: per_bucket.len(),
        comparable_buckets: per_bucket.iter().filter(|(_, n)| *n >= 2).count(),
        per_bucket_channel_counts: per_bucket,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub channel_a: String,
    pub channel_b: String,
    pub weight: usize,
}

/// Channel-channel projection of detected pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<GraphEdge>,
}

impl CoordGraph {
    pub fn weight(&self, a: &str, b: &str) -> Option<usize> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.edges.iter().find(|e| e.channel_a == a && e.channel_b == b).map(|e| e.weight)
    }

    pub fn to_json(&self) -> Vec<u8> {
        json_bytes(self)
    }

    pub fn edges_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["channel_a", "channel_b", "weight"],
            self.edges.iter().map(|e| vec![e.channel_a.clone(), e.channel_b.clone(), e.weight.to_string()]),
        )
    }
}

pub fn project_graph(pairs: &[CoordinationPair]) -> CoordGraph {
    let mut edges: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for p in pairs {
        if p.channel_a == p.channel_b {
            continue;
        }
        let key = if p.channel_a < p.channel_b {
            (p.channel_a.as_str(), p.channel_b.as_str())
        } else {
            (p.channel_b.as_str(), p.channel_a.as_str())
        };
        *edges.entry(key).or_default() += 1;
    }
    let nodes: BTreeSet<&str> = edges.keys().flat_map(|(a, b)| [*a, *b]).collect();
    CoordGraph {
        nodes: nodes.into_iter().map(String::from).collect(),
        edges: edges
            .into_iter()
            .map(|((a, b), weight)| GraphEdge { channel_a: a.into(), channel_b: b.into(), weight })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Platform;
    use crate::time::day_start;

    fn msg(id: &str, channel: &str, ts: i64, text: &str) -> Message {
        Message::new(id, channel, Platform::ChannelBroadcast, ts, text)
    }

    fn corpus(msgs: Vec<Message>) -> Corpus {
        Corpus::new(msgs).unwrap()
    }

    #[test]
    fn hourly_and_daily_boundaries() {
        let base = day_start(2026, 1, 3);
        let c = corpus(vec![msg("1", "a", base + 10 * 3600 + 300, ""), msg("2", "b", base + 10 * 3600 + 3300, "")]);
        assert_eq!(bucketize(&c, Resolution::Hourly).len(), 1);

        let c = corpus(vec![msg("1", "a", base - 60, ""), msg("2", "a", base + 60, "")]);
        let daily = bucketize(&c, Resolution::Daily);
        assert_eq!(daily.len(), 2);
        assert!(daily.keys().all(|k| k.start % SECONDS_PER_DAY == 0));
    }

    #[test]
    fn identical_cross_channel_text_is_one_pair() {
        let t = day_start(2026, 1, 3) + 3600;
        let c = corpus(vec![
            msg("1", "rt", t, "Maduro captured in Caracas, officials say"),
            msg("2", "bbc", t + 120, "maduro   captured in caracas, officials say https://bbc.in/x"),
            msg("3", "rt", t + 240, "maduro captured in caracas, officials say"),
        ]);
        let r = detect(&c, &DetectorConfig::new(Resolution::Hourly), 0.85).unwrap();
        // rt/rt is same-channel; bbc pairs with both rt copies
        assert_eq!(r.pairs.len(), 2);
        assert!(r.pairs.iter().all(|p| p.score == 1.0 && p.channel_a == "bbc" && p.channel_b == "rt"));
        assert_eq!((r.total_buckets, r.comparable_buckets, r.pair_buckets), (1, 1, 1));
        assert_eq!(r.histogram.total(), 2);
        assert_eq!(r.histogram.counts[HISTOGRAM_BINS - 1], 2);
    }

    #[test]
    fn single_pair_identity() {
        let t = 7200;
        let c = corpus(vec![msg("x", "a", t, "same words here"), msg("y", "b", t + 5, "same words here")]);
        let r = detect(&c, &DetectorConfig::new(Resolution::Hourly), 0.85).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.pairs[0].score, 1.0);
    }

    #[test]
    fn inclusive_threshold_boundary() {
        let t = 7200;
        let c = corpus(vec![msg("x", "a", t, "abcdef ghij"), msg("y", "b", t, "abcdef ghik")]);
        let scores = score_pairs(&c, &DetectorConfig::new(Resolution::Hourly)).unwrap();
        let s = scores.scores().next().unwrap();
        assert_eq!(scores.count_at(s), 1);
        assert_eq!(scores.count_at(s + 1e-12), 0);
    }

    #[test]
    fn empty_corpus_gives_zero_report() {
        let r = detect(&Corpus::default(), &DetectorConfig::new(Resolution::Daily), 0.85).unwrap();
        assert_eq!((r.total_buckets, r.comparable_buckets, r.pair_buckets, r.pairs.len()), (0, 0, 0, 0));
        assert_eq!(r.histogram.counts.len(), HISTOGRAM_BINS);
    }

    #[test]
    fn tau_validation() {
        let c = Corpus::default();
        let cfg = DetectorConfig::new(Resolution::Daily);
        assert!(matches!(detect(&c, &cfg, 0.0), Err(CoordinationError::InvalidTau(_))));
        assert!(matches!(detect(&c, &cfg, 1.1), Err(CoordinationError::InvalidTau(_))));
        assert!(detect(&c, &cfg, 1.0).is_ok());
        assert!(matches!(threshold_sweep(&c, &cfg, &[]), Err(CoordinationError::EmptyTaus)));
        assert!(matches!(threshold_sweep(&c, &cfg, &[0.9, 0.5]), Err(CoordinationError::UnsortedTaus)));
    }

    #[test]
    fn sweep_step_function() {
        // find a text pair whose cosine is known, then sweep around it
        let t = 3600;
        let c = corpus(vec![msg("x", "a", t, "the quick brown fox jumps"), msg("y", "b", t, "the quick brown fox leaps")]);
        let cfg = DetectorConfig::new(Resolution::Hourly);
        let s = score_pairs(&c, &cfg).unwrap().scores().next().unwrap();
        let curve = threshold_sweep(&c, &cfg, &[s / 2.0, s, (s + 1.0) / 2.0]).unwrap();
        assert_eq!(curve.pair_counts, vec![1, 1, 0]);
    }

    #[test]
    fn sweep_spec_parsing() {
        let taus = parse_sweep("0.5:0.99:0.01").unwrap();
        assert_eq!(taus.len(), 50);
        assert_eq!(taus[5], 0.55);
        assert_eq!(*taus.last().unwrap(), 0.99);
        assert_eq!(parse_sweep("0.5:0.95:0.05").unwrap().len(), 10);
        assert!(parse_sweep("0.5:0.9").is_err());
        assert!(parse_sweep("0:0.9:0.1").is_err());
        assert!(parse_sweep("0.5:0.9:0").is_err());
    }

    #[test]
    fn shuffle_single_message_channel_unchanged() {
        let c = corpus(vec![msg("1", "solo", 100, "x")]);
        assert_eq!(shuffle_timestamps(&c, 42), c);
    }

    #[test]
    fn shuffle_is_deterministic_and_preserves_channel_stamps() {
        let msgs = (0..30).map(|i| msg(&format!("m{i}"), ["a", "b", "c"][i % 3], (i as i64) * 997, "t")).collect();
        let c = corpus(msgs);
        let s1 = shuffle_timestamps(&c, 9);
        let s2 = shuffle_timestamps(&c, 9);
        assert_eq!(s1.to_jsonl(), s2.to_jsonl());
        for ch in ["a", "b", "c"] {
            let stamps = |c: &Corpus| {
                let mut v: Vec<i64> = c.messages().iter().filter(|m| m.channel == ch).map(|m| m.timestamp).collect();
                v.sort();
                v
            };
            assert_eq!(stamps(&c), stamps(&s1));
        }
        assert_ne!(s1.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn same_channel_duplicates_never_pair() {
        let msgs = (0..6).map(|i| msg(&format!("m{i}"), if i < 3 { "a" } else { "b" }, 3600 * (i as i64 % 3), if i < 3 { "copy one" } else { "other text entirely" })).collect();
        let c = corpus(msgs);
        let cfg = DetectorConfig::new(Resolution::Hourly);
        let ctl = negative_control(&c, &cfg, &[0.5, 0.85], 0.85, 1, 5).unwrap();
        assert_eq!(ctl.original.pair_counts, vec![0, 0]);
        assert!(ctl.shuffled.iter().all(|s| s.pair_counts == vec![0, 0]));
        assert!(matches!(negative_control(&c, &cfg, &[0.85], 0.85, 1, 0), Err(CoordinationError::NoReplicates)));
    }

    #[test]
    fn feasibility_single_channel() {
        let msgs = (0..50).map(|i| msg(&format!("m{i}"), "only", i * 1000, "")).collect();
        let f = feasibility(&corpus(msgs), Resolution::Hourly);
        assert_eq!(f.comparable_buckets, 0);
        assert!(!f.is_estimable());
        assert!(f.total_buckets > 0);
    }

    #[test]
    fn graph_projection() {
        let g = project_graph(&[]);
        assert_eq!((g.nodes.len(), g.edges.len()), (0, 0));

        let pair = |i: usize| CoordinationPair {
            bucket: BucketKey::containing(0, Resolution::Hourly),
            msg_a: format!("a{i}"),
            msg_b: format!("b{i}"),
            channel_a: "A".into(),
            channel_b: "B".into(),
            score: 0.9,
        };
        let g = project_graph(&[pair(0), pair(1), pair(2)]);
        assert_eq!(g.nodes, vec!["A", "B"]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.weight("B", "A"), Some(3));
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(Histogram::bin_of(0.0), 0);
        assert_eq!(Histogram::bin_of(0.0199), 0);
        assert_eq!(Histogram::bin_of(0.02), 1);
        assert_eq!(Histogram::bin_of(1.0), 49);
        let csv = String::from_utf8(Histogram::empty().to_csv()).unwrap();
        assert_eq!(csv.lines().count(), 51);
        assert!(csv.starts_with("bin_lo,bin_hi,count\n0,0.02,0\n"));
    }

    #[test]
    fn global_idf_scope_runs() {
        let t = 3600;
        let c = corpus(vec![msg("x", "a", t, "shared text"), msg("y", "b", t, "shared text"), msg("z", "c", 99_999, "other")]);
        let mut cfg = DetectorConfig::new(Resolution::Hourly);
        cfg.idf_scope = IdfScope::Global;
        let r = detect(&c, &cfg, 0.85).unwrap();
        assert_eq!(r.pairs.len(), 1);
    }

    #[test]
    fn replicate_scoring_equals_scoring_the_shuffled_corpus() {
        let base = day_start(2026, 1, 3);
        let texts = ["the vote is delayed again", "the vote is delayed once again", "markets rally on oil", "oil markets rally", "storm warning for the coast"];
        let mut msgs = Vec::new();
        for i in 0..60i64 {
            let ch = ["a", "b", "c"][(i % 3) as usize];
            msgs.push(msg(&format!("m{i:02}"), ch, base + (i * 7919) % (6 * 3600), texts[(i % 5) as usize]));
        }
        let c = corpus(msgs);
        let cfg = DetectorConfig::new(Resolution::Hourly);
        let table = term_table(&c, &cfg).unwrap();
        for seed in 0..5 {
            let shuffled = shuffle_timestamps(&c, seed);
            let direct = score_pairs(&shuffled, &cfg).unwrap();
            let via = score_with(&c, &cfg, &table, &shuffled_stamps(&c, seed));
            assert_eq!(direct.census(), via.census());
            let key = |p: &CoordinationPair| (p.bucket, p.msg_a.clone(), p.msg_b.clone(), p.score.to_bits());
            let a: Vec<_> = direct.pairs_at(0.05).iter().map(key).collect();
            let b: Vec<_> = via.pairs_at(0.05).iter().map(key).collect();
            assert!(!a.is_empty());
            assert_eq!(a, b);
        }
    }
}
