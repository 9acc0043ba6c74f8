//! Volume and temporal diagnostics: volume series, channel CDFs, inter-arrival
//! gaps, burst windows, lead-lag structure and the attention-coordination
//! ratio (ACR).

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::{detect, BucketKey, CoordinationError, DetectionReport, DetectorConfig, Resolution};
use crate::corpus::{Corpus, CorpusStats};
use crate::export::{csv_bytes, fmt_f64, json_bytes};
use crate::time::utc_date;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("series has {len} buckets; burst detection needs at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("lead-lag needs at least two channels with non-zero volume (found {0})")]
    TooFewChannels(usize),
    #[error("ACR needs a daily detection report, got resolution {0}")]
    NotDaily(Resolution),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumePoint {
    pub bucket: BucketKey,
    /// Aligned with [`VolumeSeries::channels`].
    pub counts: Vec<usize>,
    pub total: usize,
}

/// Zero-filled per-channel and total counts from the first to the last
/// occupied bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeSeries {
    pub resolution: Resolution,
    pub channels: Vec<String>,
    pub points: Vec<VolumePoint>,
}

impl VolumeSeries {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn totals(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.total).collect()
    }

    pub fn channel_series(&self, channel: &str) -> Option<Vec<usize>> {
        let idx = self.channels.iter().position(|c| c == channel)?;
        Some(self.points.iter().map(|p| p.counts[idx]).collect())
    }

    pub fn count(&self, bucket_start: i64, channel: &str) -> usize {
        let idx = self.channels.iter().position(|c| c == channel);
        match (idx, self.points.iter().find(|p| p.bucket.start == bucket_start)) {
            (Some(i), Some(p)) => p.counts[i],
            _ => 0,
        }
    }

    /// Point with the largest total; earliest wins ties.
    pub fn peak(&self) -> Option<&VolumePoint> {
        self.points.iter().rev().max_by_key(|p| p.total)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["date", "channel", "count"],
            self.points.iter().flat_map(|p| {
                let label = p.bucket.label();
                self.channels.iter().zip(&p.counts).map(move |(c, n)| vec![label.clone(), c.clone(), n.to_string()])
            }),
        )
    }
}

pub fn volume_series(corpus: &Corpus, resolution: Resolution) -> Result<VolumeSeries, AnalyticsError> {
    let (first, last) = match (corpus.messages().first(), corpus.messages().last()) {
        (Some(f), Some(l)) => (BucketKey::containing(f.timestamp, resolution), BucketKey::containing(l.timestamp, resolution)),
        _ => return Err(AnalyticsError::EmptyCorpus),
    };
    let channels: Vec<String> = corpus.channels().into_iter().map(String::from).collect();
    let width = resolution.seconds();
    let n = ((last.start - first.start) / width + 1) as usize;
    let mut points: Vec<VolumePoint> = (0..n)
        .map(|i| VolumePoint {
            bucket: BucketKey { resolution, start: first.start + i as i64 * width },
            counts: vec![0; channels.len()],
            total: 0,
        })
        .collect();
    for m in corpus.messages() {
        let i = ((BucketKey::containing(m.timestamp, resolution).start - first.start) / width) as usize;
        let c = channels.binary_search(&m.channel).expect("channel listed");
        points[i].counts[c] += 1;
        points[i].total += 1;
    }
    Ok(VolumeSeries { resolution, channels, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub count: usize,
    pub cumulative_fraction: f64,
}

/// Empirical CDF of per-channel message counts: one step per channel, sorted
/// by count ascending.
pub fn channel_cdf(stats: &CorpusStats) -> Vec<CdfPoint> {
    let mut counts: Vec<usize> = stats.per_channel_counts.values().copied().collect();
    counts.sort_unstable();
    let n = counts.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| CdfPoint { count, cumulative_fraction: (i + 1) as f64 / n })
        .collect()
}

pub fn cdf_csv(points: &[CdfPoint]) -> Vec<u8> {
    csv_bytes(
        &["count", "cumulative_fraction"],
        points.iter().map(|p| vec![p.count.to_string(), fmt_f64(p.cumulative_fraction)]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStream {
    pub stream: String,
    pub gaps: Vec<i64>,
}

impl GapStream {
    pub fn mean(&self) -> f64 {
        self.gaps.iter().sum::<i64>() as f64 / self.gaps.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interarrival {
    pub streams: Vec<GapStream>,
    /// Streams with fewer than two messages.
    pub skipped: Vec<String>,
}

impl Interarrival {
    pub fn to_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["stream", "gap_seconds"],
            self.streams.iter().flat_map(|s| s.gaps.iter().map(move |g| vec![s.stream.clone(), g.to_string()])),
        )
    }
}

/// Gaps between successive timestamps, either pooled over the corpus (stream
/// `"all"`) or per channel.
pub fn interarrival(corpus: &Corpus, per_channel: bool) -> Interarrival {
    let mut streams: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for m in corpus.messages() {
        let key = if per_channel { m.channel.clone() } else { "all".to_string() };
        streams.entry(key).or_default().push(m.timestamp);
    }
    let mut out = Interarrival { streams: Vec::new(), skipped: Vec::new() };
    for (stream, stamps) in streams {
        if stamps.len() < 2 {
            log::info!("inter-arrival: stream {stream:?} has fewer than two messages; skipped");
            out.skipped.push(stream);
            continue;
        }
        let gaps = stamps.windows(2).map(|w| w[1] - w[0]).collect();
        out.streams.push(GapStream { stream, gaps });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstConfig {
    pub z: f64,
    /// Trailing baseline length in buckets.
    pub window: usize,
    /// Minimum baseline points before a bucket can be flagged.
    pub min_baseline: usize,
}

impl Default for BurstConfig {
    fn default() -> Self {
        BurstConfig { z: 3.0, window: 14, min_baseline: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstWindow {
    pub start: BucketKey,
    pub end: BucketKey,
    pub peak_volume: usize,
    pub baseline_mean: f64,
    pub baseline_std: f64,
}

pub fn bursts_csv(bursts: &[BurstWindow]) -> Vec<u8> {
    csv_bytes(
        &["start", "end", "peak", "baseline_mean", "baseline_std"],
        bursts.iter().map(|b| {
            vec![b.start.label(), b.end.label(), b.peak_volume.to_string(), fmt_f64(b.baseline_mean), fmt_f64(b.baseline_std)]
        }),
    )
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Flags buckets whose total exceeds `mean + z * std` of the trailing
/// baseline, then merges consecutive flagged buckets into windows.
///
/// The baseline of a bucket is the last `window` earlier buckets that were not
/// themselves flagged, so a burst never inflates its own baseline. A window
/// reports the baseline of its opening bucket.
pub fn detect_bursts(series: &VolumeSeries, cfg: &BurstConfig) -> Result<Vec<BurstWindow>, AnalyticsError> {
    let needed = cfg.min_baseline + 1;
    if series.len() < needed {
        return Err(AnalyticsError::SeriesTooShort { len: series.len(), needed });
    }
    let totals = series.totals();
    let mut flagged: Vec<Option<(f64, f64)>> = vec![None; totals.len()];
    let mut baseline: Vec<f64> = Vec::with_capacity(cfg.window);
    for i in 0..totals.len() {
        baseline.clear();
        baseline.extend(
            (0..i).rev().filter(|&j| flagged[j].is_none()).take(cfg.window).map(|j| totals[j] as f64),
        );
        if baseline.len() < cfg.min_baseline.max(1) {
            continue;
        }
        let (mean, std) = mean_std(&baseline);
        if totals[i] as f64 > mean + cfg.z * std {
            flagged[i] = Some((mean, std));
        }
    }

    let mut windows = Vec::new();
    let mut i = 0;
    while i < totals.len() {
        let Some((mean, std)) = flagged[i] else {
            i += 1;
            continue;
        };
        let start = i;
        while i + 1 < totals.len() && flagged[i + 1].is_some() {
            i += 1;
        }
        windows.push(BurstWindow {
            start: series.points[start].bucket,
            end: series.points[i].bucket,
            peak_volume: totals[start..=i].iter().copied().max().unwrap_or(0),
            baseline_mean: mean,
            baseline_std: std,
        });
        i += 1;
    }
    Ok(windows)
}

/// Pearson correlation of `x[t]` with `y[t + lag]` over the overlapping
/// range, for each lag in `[-max_lag, max_lag]`. Returns the lag with the
/// highest correlation (ties: smaller |lag|, then the negative lag), or `None`
/// when no lag has two non-constant overlapping segments.
pub fn cross_correlation(x: &[f64], y: &[f64], max_lag: usize) -> Option<(i64, f64)> {
    let t = x.len().min(y.len()) as i64;
    let mut best: Option<(i64, f64)> = None;
    for lag in -(max_lag as i64)..=(max_lag as i64) {
        let len = t - lag.abs();
        if len < 2 {
            continue;
        }
        let (xs, ys) = if lag >= 0 {
            (&x[..len as usize], &y[lag as usize..(lag + len) as usize])
        } else {
            (&x[(-lag) as usize..((-lag) + len) as usize], &y[..len as usize])
        };
        let Some(r) = pearson(xs, ys) else { continue };
        let better = match best {
            None => true,
            Some((bl, br)) => r > br || (r == br && (lag.abs() < bl.abs() || (lag.abs() == bl.abs() && lag < bl))),
        };
        if better {
            best = Some((lag, r));
        }
    }
    best
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagEntry {
    pub channel_a: String,
    pub channel_b: String,
    /// Positive when `channel_b` follows `channel_a`.
    pub best_lag: i64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadLagReport {
    pub max_lag: usize,
    /// One entry per unordered pair with `channel_a < channel_b`.
    pub pairwise: Vec<LagEntry>,
    /// Bursts in which each channel posted the earliest message.
    pub first_reporter: BTreeMap<String, usize>,
    /// Channels with an all-zero series.
    pub excluded: Vec<String>,
}

impl LeadLagReport {
    /// Lag and correlation for an ordered pair; the reverse orientation
    /// negates the lag.
    pub fn lag(&self, a: &str, b: &str) -> Option<(i64, f64)> {
        self.pairwise.iter().find_map(|e| {
            if e.channel_a == a && e.channel_b == b {
                Some((e.best_lag, e.correlation))
            } else if e.channel_a == b && e.channel_b == a {
                Some((-e.best_lag, e.correlation))
            } else {
                None
            }
        })
    }

    pub fn to_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["channel_a", "channel_b", "best_lag", "correlation"],
            self.pairwise.iter().map(|e| {
                vec![e.channel_a.clone(), e.channel_b.clone(), e.best_lag.to_string(), fmt_f64(e.correlation)]
            }),
        )
    }

    pub fn to_json(&self) -> Vec<u8> {
        json_bytes(self)
    }
}

/// Pairwise lagged cross-correlation of per-channel volume plus burst-level
/// first-reporter attribution.
pub fn lead_lag(
    series: &VolumeSeries,
    max_lag: usize,
    bursts: &[BurstWindow],
    corpus: &Corpus,
) -> Result<LeadLagReport, AnalyticsError> {
    let mut active: Vec<(&str, Vec<f64>)> = Vec::new();
    let mut excluded = Vec::new();
    for (i, c) in series.channels.iter().enumerate() {
        let s: Vec<f64> = series.points.iter().map(|p| p.counts[i] as f64).collect();
        if s.iter().all(|&v| v == 0.0) {
            excluded.push(c.clone());
        } else {
            active.push((c.as_str(), s));
        }
    }
    if active.len() < 2 {
        return Err(AnalyticsError::TooFewChannels(active.len()));
    }

    let mut pairwise = Vec::new();
    for i in 0..active.len() {
        for j in i + 1..active.len() {
            if let Some((lag, r)) = cross_correlation(&active[i].1, &active[j].1, max_lag) {
                pairwise.push(LagEntry {
                    channel_a: active[i].0.to_string(),
                    channel_b: active[j].0.to_string(),
                    best_lag: lag,
                    correlation: r,
                });
            }
        }
    }

    let mut first_reporter: BTreeMap<String, usize> = BTreeMap::new();
    for b in bursts {
        let (lo, hi) = (b.start.start, b.end.end());
        // corpus order is (timestamp, id); take the earliest, ties by channel
        let earliest = corpus
            .messages()
            .iter()
            .filter(|m| m.timestamp >= lo && m.timestamp < hi)
            .min_by(|x, y| x.timestamp.cmp(&y.timestamp).then_with(|| x.channel.cmp(&y.channel)));
        if let Some(m) = earliest {
            *first_reporter.entry(m.channel.clone()).or_default() += 1;
        }
    }

    Ok(LeadLagReport { max_lag, pairwise, first_reporter, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcrPoint {
    pub day: NaiveDate,
    pub volume: u64,
    pub coord_pairs: u64,
    /// `volume / (1 + coord_pairs)`, correctly rounded.
    pub acr: f64,
}

impl AcrPoint {
    pub fn new(day: NaiveDate, volume: u64, coord_pairs: u64) -> Self {
        AcrPoint { day, volume, coord_pairs, acr: volume as f64 / (1 + coord_pairs) as f64 }
    }

    /// The exact rational value that `acr` rounds.
    pub fn ratio(&self) -> Ratio<u64> {
        Ratio::new(self.volume, 1 + self.coord_pairs)
    }
}

pub fn acr_csv(points: &[AcrPoint]) -> Vec<u8> {
    csv_bytes(
        &["date", "volume", "pairs", "acr"],
        points.iter().map(|p| vec![p.day.to_string(), p.volume.to_string(), p.coord_pairs.to_string(), fmt_f64(p.acr)]),
    )
}

/// Joins a daily volume series with a daily detection report. Every day of
/// the zero-filled span appears; empty days get ACR 0.
pub fn acr_from(volume: &VolumeSeries, report: &DetectionReport) -> Result<Vec<AcrPoint>, AnalyticsError> {
    for r in [volume.resolution, report.resolution] {
        if r != Resolution::Daily {
            return Err(AnalyticsError::NotDaily(r));
        }
    }
    let pairs = report.pairs_per_bucket();
    Ok(volume
        .points
        .iter()
        .map(|p| AcrPoint::new(utc_date(p.bucket.start), p.total as u64, pairs.get(&p.bucket.start).copied().unwrap_or(0) as u64))
        .collect())
}

/// Daily ACR at threshold `tau`. The detector's resolution is forced to daily.
pub fn acr_series(corpus: &Corpus, tau: f64, config: &DetectorConfig) -> Result<Vec<AcrPoint>, AnalyticsError> {
    let daily = DetectorConfig { resolution: Resolution::Daily, ..*config };
    let report = detect(corpus, &daily, tau)?;
    if corpus.is_empty() {
        return Ok(Vec::new());
    }
    acr_from(&volume_series(corpus, Resolution::Daily)?, &report)
}

/// Channels that appear in at least one burst window, for summaries.
pub fn burst_channels(bursts: &[BurstWindow], corpus: &Corpus) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for b in bursts {
        for m in corpus.messages().iter().filter(|m| m.timestamp >= b.start.start && m.timestamp < b.end.end()) {
            out.insert(m.channel.clone());
        }
    }
    out
}
