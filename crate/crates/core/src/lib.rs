//! Cross-channel coordination detection for channel-based message corpora.
//!
//! The toolkit groups messages into UTC-aligned temporal buckets, scores every
//! cross-channel pair inside a bucket with character n-gram TF-IDF cosine
//! similarity, and reports pairs at or above a threshold as coordination
//! candidates. Around that detector sit the diagnostics needed to tell
//! attention synchronization apart from content coordination:
//!
//! - [`corpus`]: JSONL ingestion, minimal text normalization, keyword
//!   filtering and descriptive statistics.
//! - [`simindex`]: character n-gram extraction, TF-IDF fitting and sparse
//!   cosine similarity.
//! - [`coordination`]: bucketing, detection, threshold sweeps, the
//!   timestamp-shuffling negative control, feasibility census and the
//!   channel graph projection.
//! - [`analytics`]: volume series, channel CDFs, inter-arrival gaps, burst
//!   detection, lead-lag diagnostics and the attention-coordination ratio.
//! - [`narrative`]: k-means narrative clustering, rank-2 SVD projection and
//!   narrative entropy.
//! - [`synthlab`]: synthetic corpora with planted campaigns and scoring of
//!   detector output against ground truth.
//! - [`pipeline`]: end-to-end orchestration writing plot-ready CSV/JSON
//!   artifacts and a digest manifest.

pub mod analytics;
pub mod coordination;
pub mod corpus;
pub mod export;
pub mod narrative;
pub mod pipeline;
pub mod seed;
pub mod simindex;
pub mod synthlab;
pub mod time;

pub use coordination::{BucketKey, CoordinationPair, DetectionReport, DetectorConfig, Resolution};
pub use corpus::{Corpus, FieldMapping, Message, Platform};
pub use simindex::{NGramConfig, SparseVector, TfidfModel};
