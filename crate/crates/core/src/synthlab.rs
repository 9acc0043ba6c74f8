//! Synthetic corpora with known ground truth: background chatter, event
//! bursts and planted near-duplicate campaigns, plus scoring of detector
//! output against the planted pairs.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::{BucketKey, DetectionReport, Resolution};
use crate::corpus::{Corpus, CorpusError, Message, Platform};
use crate::export::json_bytes;
use crate::seed::rng_for;
use crate::time::SECONDS_PER_HOUR;

pub mod fixtures;

/// Substitution alphabet for campaign noise.
pub const NOISE_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
pub const MAX_CHANNELS: usize = 50;
const CONSONANTS: &[u8] = b"bcdfghjklmnpqrstvwxz";
const VOWELS: &[u8] = b"aeiou";
const WORDS_PER_CHANNEL: usize = 200;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("report was computed on corpus {report} but ground truth belongs to {truth}")]
    CorpusMismatch { report: String, truth: String },
    #[error("report resolution {report} differs from ground-truth resolution {truth}")]
    ResolutionMismatch { report: Resolution, truth: Resolution },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

mod ts {
    //! Epoch seconds on output; epoch seconds or a date/time string on input.
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(v: &i64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(*v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(v),
            Raw::Str(s) => crate::time::parse_timestamp(&s).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {s:?}"))),
        }
    }
}

/// Half-open `[start, end)` interval in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    #[serde(with = "ts")]
    pub start: i64,
    #[serde(with = "ts")]
    pub end: i64,
}

impl Window {
    pub fn new(start: i64, end: i64) -> Self {
        Window { start, end }
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start && ts < self.end
    }

    fn within(&self, outer: &Window) -> bool {
        self.start >= outer.start && self.end <= outer.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstSpec {
    pub window: Window,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub template_text: String,
    /// Channel indices in `0..channels`.
    pub participating_channels: Vec<usize>,
    pub window: Window,
    #[serde(default = "one")]
    pub copies_per_channel: usize,
    #[serde(default)]
    pub noise_rate: f64,
}

fn one() -> usize {
    1
}

fn hourly() -> Resolution {
    Resolution::Hourly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub span: Window,
    /// Expected background messages per channel per day.
    pub base_rate: f64,
    pub vocabulary_seed: u64,
    #[serde(default)]
    pub bursts: Vec<BurstSpec>,
    #[serde(default)]
    pub campaigns: Vec<CampaignSpec>,
    pub seed: u64,
    /// Resolution at which planted pairs are enumerated.
    #[serde(default = "hourly")]
    pub resolution: Resolution,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.channels == 0 || self.channels > MAX_CHANNELS {
            return bad(format!("channels must be in 1..={MAX_CHANNELS}, got {}", self.channels));
        }
        if self.span.end <= self.span.start {
            return bad("span end must be after span start".into());
        }
        if self.span.start < 0 {
            return bad("span must not start before the epoch".into());
        }
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return bad(format!("base_rate must be positive, got {}", self.base_rate));
        }
        for (i, b) in self.bursts.iter().enumerate() {
            if !(b.multiplier >= 1.0 && b.multiplier.is_finite()) {
                return bad(format!("burst {i}: multiplier must be >= 1, got {}", b.multiplier));
            }
            if b.window.end <= b.window.start || !b.window.within(&self.span) {
                return bad(format!("burst {i}: window must be non-empty and inside the span"));
            }
        }
        for (i, c) in self.campaigns.iter().enumerate() {
            let distinct: BTreeSet<usize> = c.participating_channels.iter().copied().collect();
            if distinct.len() != c.participating_channels.len() {
                return bad(format!("campaign {i}: participating channels must be distinct"));
            }
            if distinct.len() < 2 {
                return bad(format!("campaign {i}: needs at least two channels"));
            }
            if let Some(&ch) = distinct.iter().find(|&&ch| ch >= self.channels) {
                return bad(format!("campaign {i}: channel index {ch} out of range"));
            }
            if c.window.end <= c.window.start || !c.window.within(&self.span) {
                return bad(format!("campaign {i}: window must be non-empty and inside the span"));
            }
            if !(0.0..=0.3).contains(&c.noise_rate) {
                return bad(format!("campaign {i}: noise_rate must be in [0, 0.3], got {}", c.noise_rate));
            }
            if c.copies_per_channel == 0 {
                return bad(format!("campaign {i}: copies_per_channel must be at least 1"));
            }
            if c.template_text.trim().is_empty() {
                return bad(format!("campaign {i}: empty template"));
            }
        }
        Ok(())
    }

    /// Product of the multipliers of every burst covering `ts`.
    fn rate_multiplier(&self, ts: i64) -> f64 {
        self.bursts.iter().filter(|b| b.window.contains(ts)).map(|b| b.multiplier).product()
    }
}

pub fn channel_name(index: usize) -> String {
    format!("ch{index:02}")
}

/// Per-channel word lists built from disjoint consonant-vowel syllable sets,
/// so that character n-grams rarely cross channel boundaries.
pub fn channel_vocabularies(channels: usize, vocabulary_seed: u64) -> Vec<Vec<String>> {
    let mut syllables: Vec<[u8; 2]> = CONSONANTS.iter().flat_map(|&c| VOWELS.iter().map(move |&v| [c, v])).collect();
    let mut rng = rng_for(vocabulary_seed, "syllables");
    syllables.shuffle(&mut rng);
    let per = syllables.len() / channels.max(1);
    (0..channels)
        .map(|c| {
            let pool = &syllables[c * per..(c + 1) * per];
            let mut rng = rng_for(vocabulary_seed, &format!("words/{c}"));
            (0..WORDS_PER_CHANNEL)
                .map(|_| {
                    let n = rng.random_range(1..=3);
                    let bytes: Vec<u8> = (0..n).flat_map(|_| pool[rng.random_range(0..pool.len())]).collect();
                    String::from_utf8(bytes).expect("ascii syllables")
                })
                .collect()
        })
        .collect()
}

fn background_text(words: &[String], rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(6..=14);
    (0..n).map(|_| words[rng.random_range(0..words.len())].as_str()).collect::<Vec<_>>().join(" ")
}

/// Replaces each character independently with probability `rate` by a
/// different letter from [`NOISE_ALPHABET`].
pub fn perturb(template: &str, rate: f64, rng: &mut ChaCha8Rng) -> String {
    template
        .chars()
        .map(|ch| {
            if rate <= 0.0 || !rng.random_bool(rate) {
                return ch;
            }
            loop {
                let sub = NOISE_ALPHABET[rng.random_range(0..NOISE_ALPHABET.len())] as char;
                if sub != ch {
                    return sub;
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub resolution: Resolution,
    pub corpus_digest: String,
    /// Unordered pairs stored with the smaller id first.
    pub planted_pairs: BTreeSet<(String, String)>,
    /// Campaign index of every campaign message; background ids are absent.
    pub campaign_of: BTreeMap<String, usize>,
}

impl GroundTruth {
    pub fn campaign(&self, id: &str) -> Option<usize> {
        self.campaign_of.get(id).copied()
    }

    pub fn to_json(&self) -> Vec<u8> {
        json_bytes(self)
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Background-only messages for one channel, drawn hour by hour.
fn background_channel(cfg: &GeneratorConfig, c: usize, words: &[String]) -> Vec<Message> {
    let name = channel_name(c);
    let mut rng = rng_for(cfg.seed, &format!("background/{name}"));
    let per_hour = cfg.base_rate / 24.0;
    let mut out = Vec::new();
    let mut hour = crate::time::floor_to(cfg.span.start, SECONDS_PER_HOUR);
    while hour < cfg.span.end {
        let lo = hour.max(cfg.span.start);
        let hi = (hour + SECONDS_PER_HOUR).min(cfg.span.end);
        let lambda = per_hour * cfg.rate_multiplier(lo) * (hi - lo) as f64 / SECONDS_PER_HOUR as f64;
        let n = if lambda > 0.0 { Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize } else { 0 };
        for _ in 0..n {
            let ts = rng.random_range(lo..hi);
            let text = background_text(words, &mut rng);
            out.push(Message::new(format!("{name}-{:06}", out.len()), name.clone(), Platform::ChannelBroadcast, ts, text));
        }
        hour += SECONDS_PER_HOUR;
    }
    out
}

/// Generates the corpus and its ground truth; identical configs give
/// byte-identical output.
pub fn generate(cfg: &GeneratorConfig) -> Result<(Corpus, GroundTruth), SynthError> {
    cfg.validate()?;
    let vocab = channel_vocabularies(cfg.channels, cfg.vocabulary_seed);
    let mut messages: Vec<Message> = (0..cfg.channels)
        .into_par_iter()
        .flat_map_iter(|c| background_channel(cfg, c, &vocab[c]))
        .collect();

    let mut campaign_of = BTreeMap::new();
    let mut planted_msgs: Vec<(usize, Message)> = Vec::new();
    for (ci, camp) in cfg.campaigns.iter().enumerate() {
        for &c in &camp.participating_channels {
            let name = channel_name(c);
            for copy in 0..camp.copies_per_channel {
                let id = format!("c{ci}-{name}-{copy}");
                let mut rng = rng_for(cfg.seed, &format!("campaign/{id}"));
                let ts = rng.random_range(camp.window.start..camp.window.end);
                let text = perturb(&camp.template_text, camp.noise_rate, &mut rng);
                campaign_of.insert(id.clone(), ci);
                planted_msgs.push((ci, Message::new(id, name.clone(), Platform::ChannelBroadcast, ts, text)));
            }
        }
    }

    let mut planted_pairs = BTreeSet::new();
    for (i, (ci, a)) in planted_msgs.iter().enumerate() {
        for (cj, b) in &planted_msgs[i + 1..] {
            if ci == cj
                && a.channel != b.channel
                && BucketKey::containing(a.timestamp, cfg.resolution) == BucketKey::containing(b.timestamp, cfg.resolution)
            {
                planted_pairs.insert(unordered(&a.id, &b.id));
            }
        }
    }
    messages.extend(planted_msgs.into_iter().map(|(_, m)| m));
    let corpus = Corpus::new(messages)?;
    let truth = GroundTruth { resolution: cfg.resolution, corpus_digest: corpus.digest(), planted_pairs, campaign_of };
    Ok((corpus, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores detected pairs against planted pairs, ignoring orientation.
/// Precision is 1 with no detections; recall is 1 with nothing planted.
pub fn evaluate(report: &DetectionReport, truth: &GroundTruth) -> Result<Evaluation, SynthError> {
    if report.corpus_digest != truth.corpus_digest {
        return Err(SynthError::CorpusMismatch { report: report.corpus_digest.clone(), truth: truth.corpus_digest.clone() });
    }
    if report.resolution != truth.resolution {
        return Err(SynthError::ResolutionMismatch { report: report.resolution, truth: truth.resolution });
    }
    let detected: BTreeSet<(String, String)> = report.pairs.iter().map(|p| unordered(&p.msg_a, &p.msg_b)).collect();
    let tp = detected.intersection(&truth.planted_pairs).count();
    let fp = detected.len() - tp;
    let fn_ = truth.planted_pairs.len() - tp;
    let precision = if detected.is_empty() { 1.0 } else { tp as f64 / detected.len() as f64 };
    let recall = if truth.planted_pairs.is_empty() { 1.0 } else { tp as f64 / truth.planted_pairs.len() as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(Evaluation { true_positives: tp, false_positives: fp, false_negatives: fn_, precision, recall, f1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderFollowerConfig {
    pub start: i64,
    pub buckets: usize,
    pub resolution: Resolution,
    /// Follower delay in whole buckets.
    pub delay: usize,
    /// Mean leader messages per bucket.
    pub mean_rate: f64,
    pub seed: u64,
}

/// Two channels, `leader` and `follower`, where the follower reposts every
/// leader message exactly `delay` buckets later.
pub fn leader_follower(cfg: &LeaderFollowerConfig) -> Result<Corpus, SynthError> {
    if cfg.buckets == 0 || cfg.mean_rate.is_nan() || cfg.mean_rate <= 0.0 {
        return Err(SynthError::InvalidConfig("leader-follower needs buckets > 0 and a positive rate".into()));
    }
    let width = cfg.resolution.seconds();
    let vocab = channel_vocabularies(2, cfg.seed);
    let mut rng = rng_for(cfg.seed, "leader-follower");
    let poisson = Poisson::new(cfg.mean_rate).expect("positive rate");
    let mut messages = Vec::new();
    for b in 0..cfg.buckets {
        let lo = cfg.start + b as i64 * width;
        let n = poisson.sample(&mut rng) as usize;
        for _ in 0..n {
            let ts = rng.random_range(lo..lo + width);
            let k = messages.len() / 2;
            messages.push(Message::new(format!("lead-{k:06}"), "leader", Platform::ChannelBroadcast, ts, background_text(&vocab[0], &mut rng)));
            messages.push(Message::new(
                format!("follow-{k:06}"),
                "follower",
                Platform::ChannelBroadcast,
                ts + cfg.delay as i64 * width,
                background_text(&vocab[1], &mut rng),
            ));
        }
    }
    Ok(Corpus::new(messages)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordination::{detect, DetectorConfig};
    use crate::time::{day_start, SECONDS_PER_DAY};

    fn base_cfg() -> GeneratorConfig {
        let start = day_start(2025, 3, 1);
        GeneratorConfig {
            channels: 10,
            span: Window::new(start, start + 30 * SECONDS_PER_DAY),
            base_rate: 5.0,
            vocabulary_seed: 17,
            bursts: vec![],
            campaigns: vec![],
            seed: 99,
            resolution: Resolution::Hourly,
        }
    }

    fn campaign(start: i64, channels: Vec<usize>, noise: f64) -> CampaignSpec {
        CampaignSpec {
            template_text: "Officials confirm the shipment left the port at dawn under naval escort".into(),
            participating_channels: channels,
            window: Window::new(start, start + SECONDS_PER_HOUR),
            copies_per_channel: 1,
            noise_rate: noise,
        }
    }

    #[test]
    fn poisson_total_and_determinism() {
        let cfg = base_cfg();
        let (a, ta) = generate(&cfg).unwrap();
        let (b, tb) = generate(&cfg).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(ta, tb);
        let sigma = 1500f64.sqrt();
        assert!((a.len() as f64 - 1500.0).abs() < 3.0 * sigma, "{}", a.len());
    }

    #[test]
    fn three_channel_campaign_plants_three_pairs() {
        let mut cfg = base_cfg();
        let at = cfg.span.start + 5 * SECONDS_PER_DAY + 7 * SECONDS_PER_HOUR;
        cfg.campaigns.push(campaign(at, vec![0, 3, 7], 0.0));
        let (corpus, truth) = generate(&cfg).unwrap();
        assert_eq!(truth.planted_pairs.len(), 3);
        let report = detect(&corpus, &DetectorConfig::new(Resolution::Hourly), 1.0).unwrap();
        let planted: Vec<_> = report
            .pairs
            .iter()
            .filter(|p| truth.planted_pairs.contains(&unordered(&p.msg_a, &p.msg_b)))
            .collect();
        assert_eq!(planted.len(), 3);
        assert!(planted.iter().all(|p| p.score == 1.0));
        let eval = evaluate(&report, &truth).unwrap();
        assert_eq!(eval.recall, 1.0);
    }

    #[test]
    fn evaluate_conventions_and_mismatch() {
        let cfg = base_cfg();
        let (corpus, truth) = generate(&cfg).unwrap();
        let report = detect(&corpus, &DetectorConfig::new(Resolution::Hourly), 0.85).unwrap();
        let e = evaluate(&report, &truth).unwrap();
        assert_eq!((e.precision, e.recall), (1.0, 1.0));

        let mut other = truth.clone();
        other.corpus_digest = "0".repeat(64);
        assert!(matches!(evaluate(&report, &other), Err(SynthError::CorpusMismatch { .. })));
        let daily = detect(&corpus, &DetectorConfig::new(Resolution::Daily), 0.85).unwrap();
        assert!(matches!(evaluate(&daily, &truth), Err(SynthError::ResolutionMismatch { .. })));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = base_cfg();
        cfg.base_rate = 0.0;
        assert!(generate(&cfg).is_err());
        let mut cfg = base_cfg();
        cfg.campaigns.push(campaign(cfg.span.end, vec![0, 1], 0.0));
        assert!(generate(&cfg).is_err());
        let mut cfg = base_cfg();
        cfg.campaigns.push(campaign(cfg.span.start, vec![1, 1], 0.0));
        assert!(generate(&cfg).is_err());
        let mut cfg = base_cfg();
        cfg.campaigns.push(campaign(cfg.span.start, vec![0, 1], 0.5));
        assert!(generate(&cfg).is_err());
        let mut cfg = base_cfg();
        cfg.bursts.push(BurstSpec { window: cfg.span, multiplier: 0.5 });
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn perturb_rates() {
        let mut rng = rng_for(1, "t");
        assert_eq!(perturb("same text", 0.0, &mut rng), "same text");
        let text = "a".repeat(10_000);
        let noisy = perturb(&text, 0.1, &mut rng);
        let changed = noisy.chars().filter(|&c| c != 'a').count();
        assert!((800..1200).contains(&changed), "{changed}");
        assert_eq!(noisy.chars().count(), 10_000);
    }

    #[test]
    fn vocabularies_are_disjoint() {
        let v = channel_vocabularies(10, 3);
        let sets: Vec<BTreeSet<&str>> = v.iter().map(|w| w.iter().map(String::as_str).collect()).collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                assert!(sets[i].is_disjoint(&sets[j]));
            }
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = base_cfg();
        cfg.campaigns.push(campaign(cfg.span.start, vec![0, 1], 0.05));
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<GeneratorConfig>(&text).unwrap(), cfg);

        let parsed: GeneratorConfig = serde_json::from_str(
            r#"{"channels": 3, "span": {"start": "2025-01-01", "end": "2025-01-03"}, "base_rate": 2, "vocabulary_seed": 1, "seed": 2}"#,
        )
        .unwrap();
        assert_eq!(parsed.span.end - parsed.span.start, 2 * SECONDS_PER_DAY);
        assert_eq!(parsed.resolution, Resolution::Hourly);
    }

    #[test]
    fn follower_is_shifted_copy() {
        let cfg = LeaderFollowerConfig { start: day_start(2025, 1, 1), buckets: 50, resolution: Resolution::Daily, delay: 2, mean_rate: 3.0, seed: 4 };
        let c = leader_follower(&cfg).unwrap();
        let lead: Vec<i64> = c.messages().iter().filter(|m| m.channel == "leader").map(|m| m.timestamp).collect();
        let follow: Vec<i64> = c.messages().iter().filter(|m| m.channel == "follower").map(|m| m.timestamp).collect();
        assert_eq!(lead.len(), follow.len());
        assert!(lead.iter().zip(&follow).all(|(l, f)| f - l == 2 * SECONDS_PER_DAY));
    }
}
