//! Message ingestion, normalization, keyword filtering and corpus statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::export::{csv_bytes, fmt_f64, json_bytes, sha256_hex};
use crate::time::{parse_timestamp, utc_date};

const URL_PREFIXES: [&str; 3] = ["http://", "https://", "www."];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("keyword list is empty")]
    EmptyKeywords,
    #[error("keyword list contains an empty keyword")]
    BlankKeyword,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("message {id} has negative timestamp {timestamp}")]
    NegativeTimestamp { id: String, timestamp: i64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Platform {
    #[default]
    ChannelBroadcast,
    ForumSubmission,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::ChannelBroadcast => "channel-broadcast",
            Platform::ForumSubmission => "forum-submission",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "channel-broadcast" | "telegram" | "channel" => Some(Platform::ChannelBroadcast),
            "forum-submission" | "reddit" | "forum" => Some(Platform::ForumSubmission),
            _ => None,
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One normalized post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub channel: String,
    pub platform: Platform,
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub raw_text: String,
    pub norm_text: String,
}

impl Message {
    /// Builds a message and fills `norm_text` from `raw_text`.
    pub fn new(
        id: impl Into<String>,
        channel: impl Into<String>,
        platform: Platform,
        timestamp: i64,
        raw_text: impl Into<String>,
    ) -> Self {
        let raw_text = raw_text.into();
        let norm_text = normalize_text(&raw_text);
        Message { id: id.into(), channel: channel.into(), platform, timestamp, raw_text, norm_text }
    }
}

/// Messages ordered by `(timestamp, id)` with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    messages: Vec<Message>,
}

impl Corpus {
    /// Sorts the messages into corpus order. When two messages share an id the
    /// later one in `messages` wins and a warning is logged.
    pub fn new(messages: Vec<Message>) -> Result<Self, CorpusError> {
        if let Some(bad) = messages.iter().find(|m| m.timestamp < 0) {
            return Err(CorpusError::NegativeTimestamp { id: bad.id.clone(), timestamp: bad.timestamp });
        }
        let mut last_index: HashMap<&str, usize> = HashMap::with_capacity(messages.len());
        for (i, m) in messages.iter().enumerate() {
            if let Some(prev) = last_index.insert(m.id.as_str(), i) {
                log::warn!("duplicate message id {:?}: record {} supersedes record {}", m.id, i, prev);
            }
        }
        let keep: Vec<bool> = {
            let mut keep = vec![false; messages.len()];
            for &i in last_index.values() {
                keep[i] = true;
            }
            keep
        };
        let mut messages: Vec<Message> =
            messages.into_iter().zip(keep).filter_map(|(m, k)| k.then_some(m)).collect();
        messages.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
        Ok(Corpus { messages })
    }

    /// Concatenates shards in order and re-establishes corpus order; later
    /// shards win on duplicate ids.
    pub fn merge(shards: impl IntoIterator<Item = Corpus>) -> Self {
        let all: Vec<Message> = shards.into_iter().flat_map(|c| c.messages).collect();
        Corpus::new(all).expect("shards already validated")
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn into_messages(self) -> Vec<Message> {
        self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn channels(&self) -> BTreeSet<&str> {
        self.messages.iter().map(|m| m.channel.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Message> {
        self.messages.iter().find(|m| m.id == id)
    }

    /// Messages with `from <= timestamp < to`.
    pub fn window(&self, from: i64, to: i64) -> Corpus {
        let messages = self.messages.iter().filter(|m| m.timestamp >= from && m.timestamp < to).cloned().collect();
        Corpus { messages }
    }

    /// SHA-256 of the canonical JSONL form; identifies a corpus across
    /// reports and ground-truth files.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_jsonl())
    }

    /// Writes the corpus as JSONL using the default field mapping so it can be
    /// re-ingested unchanged.
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in &self.messages {
            let record = serde_json::json!({
                "id": m.id,
                "channel": m.channel,
                "platform": m.platform.as_str(),
                "date": m.timestamp,
                "text": m.raw_text,
            });
            serde_json::to_writer(&mut out, &record).expect("in-memory write");
            out.push(b'\n');
        }
        out
    }
}

/// Names of the JSON keys holding each message field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub id: String,
    pub channel: String,
    pub timestamp: String,
    pub text: String,
    /// Optional key carrying a per-record platform label.
    pub platform: Option<String>,
    pub default_platform: Platform,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            id: "id".into(),
            channel: "channel".into(),
            timestamp: "date".into(),
            text: "text".into(),
            platform: Some("platform".into()),
            default_platform: Platform::ChannelBroadcast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IssueKind {
    /// The line is not a JSON object.
    Parse,
    /// A mapped field is missing or has an unusable value.
    Schema,
    /// A later line carries the same id; this line was dropped.
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordIssue {
    /// 1-based line number in the input stream.
    pub line: usize,
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub corpus: Corpus,
    pub issues: Vec<RecordIssue>,
    pub non_empty_lines: usize,
}

impl ParseOutcome {
    pub fn issues_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["line", "kind", "message"],
            self.issues.iter().map(|i| {
                let kind = match i.kind {
                    IssueKind::Parse => "parse",
                    IssueKind::Schema => "schema",
                    IssueKind::Superseded => "superseded",
                };
                vec![i.line.to_string(), kind.to_string(), i.message.clone()]
            }),
        )
    }
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn record_timestamp(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f.floor() as i64)),
        Value::String(s) => parse_timestamp(s),
        _ => None,
    }
}

fn parse_record(line: &str, mapping: &FieldMapping) -> Result<Message, (IssueKind, String)> {
    let value: Value = serde_json::from_str(line).map_err(|e| (IssueKind::Parse, e.to_string()))?;
    let obj = value.as_object().ok_or((IssueKind::Parse, "line is not a JSON object".to_string()))?;
    let field = |key: &str| obj.get(key).ok_or((IssueKind::Schema, format!("missing field {key:?}")));

    let id = scalar_string(field(&mapping.id)?)
        .ok_or((IssueKind::Schema, format!("field {:?} is not a string or number", mapping.id)))?;
    let channel = scalar_string(field(&mapping.channel)?)
        .ok_or((IssueKind::Schema, format!("field {:?} is not a string or number", mapping.channel)))?;
    let timestamp = record_timestamp(field(&mapping.timestamp)?)
        .ok_or((IssueKind::Schema, format!("field {:?} is not an epoch or ISO-8601 timestamp", mapping.timestamp)))?;
    if timestamp < 0 {
        return Err((IssueKind::Schema, format!("negative timestamp {timestamp}")));
    }
    let text = match field(&mapping.text)? {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        _ => return Err((IssueKind::Schema, format!("field {:?} is not a string", mapping.text))),
    };
    let platform = mapping
        .platform
        .as_ref()
        .and_then(|key| obj.get(key))
        .and_then(Value::as_str)
        .and_then(Platform::parse)
        .unwrap_or(mapping.default_platform);
    Ok(Message::new(id, channel, platform, timestamp, text))
}

/// Reads one JSON object per line. Blank lines are skipped; bad lines are
/// reported in [`ParseOutcome::issues`] with their line number. Every
/// non-empty line ends up either as a message or as exactly one issue.
pub fn parse_jsonl<R: BufRead>(mut reader: R, mapping: &FieldMapping) -> Result<ParseOutcome, CorpusError> {
    let mut parsed: Vec<(usize, Message)> = Vec::new();
    let mut issues = Vec::new();
    let mut non_empty_lines = 0;
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = match std::str::from_utf8(&buf) {
            Ok(s) => s.trim(),
            Err(e) => {
                non_empty_lines += 1;
                issues.push(RecordIssue { line: line_no, kind: IssueKind::Parse, message: e.to_string() });
                continue;
            }
        };
        if line.is_empty() {
            continue;
        }
        non_empty_lines += 1;
        match parse_record(line, mapping) {
            Ok(m) => parsed.push((line_no, m)),
            Err((kind, message)) => issues.push(RecordIssue { line: line_no, kind, message }),
        }
    }

    let mut latest: HashMap<String, usize> = HashMap::new();
    for (line, m) in &parsed {
        latest.insert(m.id.clone(), *line);
    }
    let mut messages = Vec::with_capacity(latest.len());
    for (line, m) in parsed {
        if latest[&m.id] == line {
            messages.push(m);
        } else {
            log::warn!("line {line}: message id {:?} superseded by a later record", m.id);
            issues.push(RecordIssue {
                line,
                kind: IssueKind::Superseded,
                message: format!("id {:?} superseded by line {}", m.id, latest[&m.id]),
            });
        }
    }
    issues.sort_by_key(|i| i.line);
    Ok(ParseOutcome { corpus: Corpus::new(messages)?, issues, non_empty_lines })
}

/// Lowercases, strips control characters, removes URLs and collapses
/// whitespace. Punctuation and emoji are kept.
pub fn normalize_text(raw: &str) -> String {
    let mut cleaned = String::with_capacity(raw.len());
    for ch in raw.chars() {
        if ch.is_whitespace() {
            cleaned.push(' ');
        } else if !ch.is_control() {
            cleaned.extend(ch.to_lowercase());
        }
    }
    let mut out = String::with_capacity(cleaned.len());
    for token in cleaned.split(' ') {
        let cut = URL_PREFIXES.iter().filter_map(|p| token.find(p)).min().unwrap_or(token.len());
        let kept = &token[..cut];
        if kept.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(kept);
    }
    out
}

/// Keeps messages whose normalized text contains any keyword as a substring.
pub fn keyword_filter(corpus: &Corpus, keywords: &[String]) -> Result<Corpus, CorpusError> {
    if keywords.is_empty() {
        return Err(CorpusError::EmptyKeywords);
    }
    if keywords.iter().any(|k| k.is_empty()) {
        return Err(CorpusError::BlankKeyword);
    }
    let messages = corpus
        .messages
        .iter()
        .filter(|m| keywords.iter().any(|k| m.norm_text.contains(k.as_str())))
        .cloned()
        .collect();
    Ok(Corpus { messages })
}

/// One keyword per line; `#` starts a comment line. Keywords are trimmed and
/// lowercased.
pub fn load_keywords(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_channel_counts: BTreeMap<String, usize>,
    pub per_channel_pct: BTreeMap<String, f64>,
    pub total: usize,
    pub channels: usize,
    pub date_min: NaiveDate,
    pub date_max: NaiveDate,
    pub median_per_channel: f64,
    pub mean_per_channel: f64,
}

impl CorpusStats {
    /// Channels by descending count, ties by name.
    pub fn ranked(&self) -> Vec<(&str, usize)> {
        let mut rows: Vec<(&str, usize)> = self.per_channel_counts.iter().map(|(c, n)| (c.as_str(), *n)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        rows
    }

    pub fn to_csv(&self) -> Vec<u8> {
        csv_bytes(
            &["channel", "count", "percentage"],
            self.ranked()
                .into_iter()
                .map(|(c, n)| vec![c.to_string(), n.to_string(), fmt_f64(self.per_channel_pct[c])]),
        )
    }

    pub fn to_json(&self) -> Vec<u8> {
        json_bytes(self)
    }
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    let (first, last) = match (corpus.messages.first(), corpus.messages.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(CorpusError::EmptyCorpus),
    };
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for m in &corpus.messages {
        *counts.entry(m.channel.clone()).or_default() += 1;
    }
    let total = corpus.len();
    let pct = counts.iter().map(|(c, &n)| (c.clone(), n as f64 / total as f64 * 100.0)).collect();

    let mut sorted: Vec<usize> = counts.values().copied().collect();
    sorted.sort_unstable();
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2] as f64
    } else {
        (sorted[k / 2 - 1] + sorted[k / 2]) as f64 / 2.0
    };

    Ok(CorpusStats {
        channels: k,
        per_channel_counts: counts,
        per_channel_pct: pct,
        total,
        date_min: utc_date(first.timestamp),
        date_max: utc_date(last.timestamp),
        median_per_channel: median,
        mean_per_channel: total as f64 / k as f64,
    })
}
