//! Deterministic fixture corpora mirroring published summary figures:
//! a skewed channel-share corpus, a structurally sparse forum corpus, a
//! broadcast corpus with 120 comparable days, and a January 2026 attention
//! spike without near-duplicate content.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::channel_vocabularies;
use crate::corpus::{Corpus, Message, Platform};
use crate::seed::rng_for;
use crate::time::{day_start, SECONDS_PER_DAY, SECONDS_PER_HOUR};

/// Per-channel message counts of the channel-share fixture, largest first.
pub const CHANNEL_SHARE_COUNTS: [(&str, usize); 9] = [
    ("rt_news", 1461),
    ("bbc_world", 310),
    ("france24", 178),
    ("bbc_world_feed", 73),
    ("euronews", 12),
    ("associated_press", 8),
    ("dw_news", 3),
    ("sky_news", 1),
    ("cnn_breaking", 1),
];

pub const TOPIC_KEYWORDS: [&str; 3] = ["venezuela", "maduro", "caracas"];

fn words(vocab: &[String], n: usize, rng: &mut ChaCha8Rng) -> String {
    (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].as_str()).collect::<Vec<_>>().join(" ")
}

/// Syllable chatter that is guaranteed not to mention a topic keyword.
fn off_topic(vocab: &[String], rng: &mut ChaCha8Rng) -> String {
    loop {
        let n = rng.random_range(6..=12);
        let text = words(vocab, n, rng);
        if !TOPIC_KEYWORDS.iter().any(|k| text.contains(k)) {
            return text;
        }
    }
}

fn on_topic(vocab: &[String], keyword: &str, rng: &mut ChaCha8Rng) -> String {
    let (a, b) = (rng.random_range(2..=6), rng.random_range(2..=6));
    format!("{} {} {}", words(vocab, a, rng), keyword.to_uppercase(), words(vocab, b, rng))
}

/// The channel-share corpus before keyword filtering: every fifth message of
/// a channel is off-topic, the rest mention a keyword, and each channel is
/// spread evenly from May 2017 to January 2026.
pub fn channel_share_raw() -> Corpus {
    let start = day_start(2017, 5, 2);
    let end = day_start(2026, 1, 15);
    let vocab = channel_vocabularies(CHANNEL_SHARE_COUNTS.len(), 2038);
    let mut messages = Vec::new();
    for (c, &(name, count)) in CHANNEL_SHARE_COUNTS.iter().enumerate() {
        let mut rng = rng_for(7, name);
        let mut n = count;
        while n - n / 5 < count {
            n += 1;
        }
        for i in 0..n {
            let ts = if n == 1 { end - c as i64 * SECONDS_PER_HOUR } else { start + (end - start) / (n - 1) as i64 * i as i64 };
            let text = if i % 5 == 4 { off_topic(&vocab[c], &mut rng) } else { on_topic(&vocab[c], TOPIC_KEYWORDS[i % 3], &mut rng) };
            messages.push(Message::new(format!("{name}-{i:05}"), name, Platform::ChannelBroadcast, ts, text));
        }
    }
    Corpus::new(messages).expect("fixture timestamps are positive")
}

/// Subreddit names used by the sparse forum fixture.
pub const SPARSE_FORUMS: [&str; 2] = ["r/venezuela", "r/VenezuelaPolitics"];

/// 246 forum submissions over 67 distinct days where every day holds
/// submissions from a single forum (45 days of four, 22 days of three).
pub fn sparse_forum() -> Corpus {
    let vocab = channel_vocabularies(2, 246);
    let mut rng = rng_for(67, "sparse-forum");
    let first = day_start(2025, 9, 1);
    let mut messages = Vec::new();
    for day in 0..67usize {
        let forum = SPARSE_FORUMS[day % 2];
        let per_day = if day < 45 { 4 } else { 3 };
        let day_ts = first + (day as i64 * 2 + (day % 2) as i64) * SECONDS_PER_DAY;
        for j in 0..per_day {
            let ts = day_ts + rng.random_range(0..SECONDS_PER_DAY);
            let n = rng.random_range(6..=12);
            let text = format!("venezuela {}", words(&vocab[day % 2], n, &mut rng));
            messages.push(Message::new(format!("t3_{day:02}{j}"), forum, Platform::ForumSubmission, ts, text));
        }
    }
    Corpus::new(messages).expect("fixture timestamps are positive")
}

/// Four broadcast channels over 150 days: 120 days carry at least two
/// channels, the other 30 a single channel.
pub fn comparable_broadcast() -> Corpus {
    let channels = ["ch_a", "ch_b", "ch_c", "ch_d"];
    let vocab = channel_vocabularies(channels.len(), 120);
    let mut rng = rng_for(120, "comparable");
    let first = day_start(2025, 8, 1);
    let mut messages = Vec::new();
    for day in 0..150usize {
        let active: Vec<usize> = if day % 5 == 4 { vec![day % 4] } else { (0..2 + day % 3).map(|k| (day + k) % 4).collect() };
        for &c in &active {
            for j in 0..1 + rng.random_range(0..3) {
                let ts = first + day as i64 * SECONDS_PER_DAY + rng.random_range(0..SECONDS_PER_DAY);
                let n = rng.random_range(6..=12);
                let text = words(&vocab[c], n, &mut rng);
                messages.push(Message::new(format!("{}-{day:03}-{j}", channels[c]), channels[c], Platform::ChannelBroadcast, ts, text));
            }
        }
    }
    Corpus::new(messages).expect("fixture timestamps are positive")
}

pub const SPIKE_CHANNELS: [&str; 5] = ["rt_news", "bbc_world", "france24", "euronews", "dw_news"];

/// First day (inclusive) and last day (exclusive) of the spike window.
pub fn spike_window() -> (i64, i64) {
    (day_start(2026, 1, 3), day_start(2026, 1, 7))
}

/// Daily totals for 1 Dec 2025 to 20 Jan 2026: a low cyclic baseline with a
/// burst on 3-6 January peaking on the 4th.
pub fn spike_daily_totals() -> Vec<(i64, usize)> {
    let first = day_start(2025, 12, 1);
    let baseline = [3usize, 4, 2, 3, 5, 3, 4];
    let burst = [(day_start(2026, 1, 3), 40), (day_start(2026, 1, 4), 95), (day_start(2026, 1, 5), 60), (day_start(2026, 1, 6), 30)];
    (0..51)
        .map(|d| {
            let ts = first + d as i64 * SECONDS_PER_DAY;
            let total = burst.iter().find(|(b, _)| *b == ts).map(|&(_, n)| n).unwrap_or(baseline[d % baseline.len()]);
            (ts, total)
        })
        .collect()
}

/// Heterogeneous broadcast text following [`spike_daily_totals`]; no two
/// messages from different channels are near duplicates.
pub fn january_spike() -> Corpus {
    let vocab = channel_vocabularies(SPIKE_CHANNELS.len(), 2026);
    let mut rng = rng_for(2026, "january-spike");
    let mut messages = Vec::new();
    for (d, (day, total)) in spike_daily_totals().into_iter().enumerate() {
        for j in 0..total {
            let c = (j + d) % SPIKE_CHANNELS.len();
            let ts = day + rng.random_range(0..SECONDS_PER_DAY);
            let n = rng.random_range(8..=16);
            let text = format!("venezuela {}", words(&vocab[c], n, &mut rng));
            messages.push(Message::new(format!("{}-{d:02}-{j:03}", SPIKE_CHANNELS[c]), SPIKE_CHANNELS[c], Platform::ChannelBroadcast, ts, text));
        }
    }
    Corpus::new(messages).expect("fixture timestamps are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::keyword_filter;

    #[test]
    fn channel_share_filters_to_table_counts() {
        let raw = channel_share_raw();
        let kw: Vec<String> = TOPIC_KEYWORDS.iter().map(|s| s.to_string()).collect();
        let topical = keyword_filter(&raw, &kw).unwrap();
        assert!(raw.len() > topical.len());
        for (name, count) in CHANNEL_SHARE_COUNTS {
            assert_eq!(topical.messages().iter().filter(|m| m.channel == name).count(), count, "{name}");
        }
    }

    #[test]
    fn sparse_forum_shape() {
        let c = sparse_forum();
        assert_eq!(c.len(), 246);
    }
}
