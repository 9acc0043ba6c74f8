//! Character n-gram TF-IDF vectors and cosine similarity.
//!
//! Weights are raw n-gram counts times a smoothed idf,
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, followed by L2 normalization.
//! The vocabulary is ordered lexicographically so column indices are stable
//! for a given document set.

use std::collections::HashMap;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_NGRAM: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimIndexError {
    #[error("invalid n-gram config: need 1 <= n_min <= n_max <= {MAX_NGRAM} and min_df >= 1 (got n_min={n_min}, n_max={n_max}, min_df={min_df})")]
    InvalidConfig { n_min: usize, n_max: usize, min_df: usize },
    #[error("cannot fit a model on zero documents")]
    NoDocuments,
    #[error("no n-gram reaches min_df={min_df} across {docs} documents")]
    EmptyVocabulary { min_df: usize, docs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NGramConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub min_df: usize,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig { n_min: 3, n_max: 5, min_df: 1 }
    }
}

impl NGramConfig {
    pub fn new(n_min: usize, n_max: usize, min_df: usize) -> Result<Self, SimIndexError> {
        let cfg = NGramConfig { n_min, n_max, min_df };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimIndexError> {
        if self.n_min >= 1 && self.n_min <= self.n_max && self.n_max <= MAX_NGRAM && self.min_df >= 1 {
            Ok(())
        } else {
            Err(SimIndexError::InvalidConfig { n_min: self.n_min, n_max: self.n_max, min_df: self.min_df })
        }
    }
}

/// Whether IDF statistics come from each temporal bucket or the whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdfScope {
    #[default]
    Bucket,
    Global,
}

impl std::str::FromStr for IdfScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bucket" => Ok(IdfScope::Bucket),
            "global" => Ok(IdfScope::Global),
            other => Err(format!("unknown idf scope {other:?} (expected bucket|global)")),
        }
    }
}

/// Every contiguous character substring of each length in `[n_min, n_max]`,
/// with multiplicity. Slices borrow from `text`.
pub fn extract_ngrams<'a>(text: &'a str, cfg: &NGramConfig) -> Vec<&'a str> {
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len())).collect();
    let chars = bounds.len() - 1;
    let mut out = Vec::new();
    for n in cfg.n_min..=cfg.n_max {
        if chars < n {
            break;
        }
        out.extend((0..=chars - n).map(|i| &text[bounds[i]..bounds[i + n]]));
    }
    out
}

pub fn ngram_counts<'a>(text: &'a str, cfg: &NGramConfig) -> HashMap<&'a str, u32> {
    let mut counts = HashMap::new();
    for g in extract_ngrams(text, cfg) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Sparse vector with strictly ascending indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Sorts entries by index. Panics on duplicate indices.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_unstable_by_key(|p| p.0);
        assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0), "duplicate index in sparse vector");
        let (indices, values) = pairs.into_iter().unzip();
        SparseVector { indices, values }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm; zero vectors stay empty.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= norm);
        } else {
            self.indices.clear();
            self.values.clear();
        }
        self
    }

    /// Merge-join dot product.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Dot product against a dense vector.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i as usize]).sum()
    }
}

/// Cosine of two unit vectors from the same model, clamped to `[0, 1]`.
/// Identical vectors score exactly 1 and an empty operand scores 0.
pub fn cosine(u: &SparseVector, v: &SparseVector) -> f64 {
    if u.is_empty() || v.is_empty() {
        return 0.0;
    }
    if u == v {
        return 1.0;
    }
    u.dot(v).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    cfg: NGramConfig,
    vocabulary: HashMap<String, u32>,
    terms: Vec<String>,
    idf: Vec<f64>,
    doc_count: usize,
}

impl TfidfModel {
    /// Fits vocabulary and idf on `docs`.
    pub fn fit<S: AsRef<str>>(docs: &[S], cfg: &NGramConfig) -> Result<Self, SimIndexError> {
        Self::fit_transform(docs, cfg).map(|(model, _)| model)
    }

    /// Fits on `docs` and returns each document's vector, extracting n-grams
    /// only once.
    pub fn fit_transform<S: AsRef<str>>(
        docs: &[S],
        cfg: &NGramConfig,
    ) -> Result<(Self, Vec<SparseVector>), SimIndexError> {
        cfg.validate()?;
        if docs.is_empty() {
            return Err(SimIndexError::NoDocuments);
        }
        let counts: Vec<HashMap<&str, u32>> = docs.iter().map(|d| ngram_counts(d.as_ref(), cfg)).collect();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in &counts {
            for &g in doc.keys() {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = df.into_iter().filter(|&(_, d)| d >= cfg.min_df).collect();
        if kept.is_empty() {
            return Err(SimIndexError::EmptyVocabulary { min_df: cfg.min_df, docs: docs.len() });
        }
        kept.sort_unstable_by(|a, b| a.0.cmp(b.0));

        let n = docs.len() as f64;
        let terms: Vec<String> = kept.iter().map(|(g, _)| g.to_string()).collect();
        let idf: Vec<f64> = kept.iter().map(|&(_, d)| smooth_idf(n, d as f64)).collect();
        let vocabulary: HashMap<String, u32> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let model = TfidfModel { cfg: *cfg, vocabulary, terms, idf, doc_count: docs.len() };
        let vectors = counts.iter().map(|c| model.weigh(c)).collect();
        Ok((model, vectors))
    }

    pub fn transform(&self, doc: &str) -> SparseVector {
        self.weigh(&ngram_counts(doc, &self.cfg))
    }

    fn weigh(&self, counts: &HashMap<&str, u32>) -> SparseVector {
        let pairs: Vec<(u32, f64)> = counts
            .iter()
            .filter_map(|(g, &c)| self.vocabulary.get(*g).map(|&i| (i, c as f64 * self.idf[i as usize])))
            .collect();
        SparseVector::from_pairs(pairs).normalized()
    }

    pub fn config(&self) -> &NGramConfig {
        &self.cfg
    }

    pub fn vocabulary_len(&self) -> usize {
        self.terms.len()
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.vocabulary.get(term).copied()
    }

    pub fn term(&self, index: u32) -> &str {
        &self.terms[index as usize]
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    /// Multiplies every idf value by `factor`.
    pub fn scale_idf(&mut self, factor: f64) {
        self.idf.iter_mut().for_each(|v| *v *= factor);
    }
}

fn smooth_idf(n_docs: f64, df: f64) -> f64 {
    ((1.0 + n_docs) / (1.0 + df)).ln() + 1.0
}

/// N-gram counts of a whole document collection, interned once.
///
/// Term ids follow the lexicographic order of the n-grams, so vectors built
/// for any subset index their terms in the same order as a [`TfidfModel`]
/// fitted on that subset and carry bit-identical values.
#[derive(Debug, Clone)]
pub struct TermTable {
    cfg: NGramConfig,
    docs: Vec<Vec<(u32, u32)>>,
    terms: usize,
}

impl TermTable {
    pub fn build<S: AsRef<str> + Sync>(docs: &[S], cfg: &NGramConfig) -> Result<Self, SimIndexError> {
        cfg.validate()?;
        let mut first_seen: FxHashMap<&str, u32> = FxHashMap::default();
        let mut terms: Vec<&str> = Vec::new();
        let provisional: Vec<Vec<u32>> = docs
            .iter()
            .map(|d| {
                extract_ngrams(d.as_ref(), cfg)
                    .into_iter()
                    .map(|g| {
                        *first_seen.entry(g).or_insert_with(|| {
                            terms.push(g);
                            (terms.len() - 1) as u32
                        })
                    })
                    .collect()
            })
            .collect();
        let mut order: Vec<u32> = (0..terms.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| terms[a as usize].cmp(terms[b as usize]));
        let mut rank = vec![0u32; terms.len()];
        for (r, &t) in order.iter().enumerate() {
            rank[t as usize] = r as u32;
        }
        let docs = provisional
            .into_par_iter()
            .map(|ids| {
                let mut ranked: Vec<u32> = ids.into_iter().map(|t| rank[t as usize]).collect();
                ranked.sort_unstable();
                ranked.chunk_by(|a, b| a == b).map(|run| (run[0], run.len() as u32)).collect()
            })
            .collect();
        Ok(TermTable { cfg: *cfg, docs, terms: terms.len() })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn term_count(&self) -> usize {
        self.terms
    }

    /// `(term id, count)` pairs of document `i`, ascending by id.
    pub fn doc(&self, i: usize) -> &[(u32, u32)] {
        &self.docs[i]
    }

    /// TF-IDF vectors for `members`, with document frequencies taken within
    /// the subset. Returns the vectors (indexed by rank in the subset
    /// vocabulary) and the vocabulary size. Terms below `min_df` are dropped;
    /// a subset without surviving terms yields empty vectors.
    pub fn vectorize(&self, members: &[u32]) -> (Vec<SparseVector>, usize) {
        // df per term, then each surviving term's rank in the subset vocabulary
        let mut slot = vec![0u32; self.terms];
        let mut seen: Vec<u32> = Vec::new();
        for &m in members {
            for &(t, _) in &self.docs[m as usize] {
                if slot[t as usize] == 0 {
                    seen.push(t);
                }
                slot[t as usize] += 1;
            }
        }
        seen.sort_unstable();
        let n = members.len() as f64;
        let mut idf: Vec<f64> = Vec::with_capacity(seen.len());
        for &t in &seen {
            let df = slot[t as usize] as usize;
            slot[t as usize] = if df >= self.cfg.min_df {
                idf.push(smooth_idf(n, df as f64));
                idf.len() as u32
            } else {
                0
            };
        }
        let vectors = members
            .iter()
            .map(|&m| {
                let mut indices = Vec::with_capacity(self.docs[m as usize].len());
                let mut values = Vec::with_capacity(self.docs[m as usize].len());
                for &(t, c) in &self.docs[m as usize] {
                    let rank = slot[t as usize];
                    if rank > 0 {
                        indices.push(rank - 1);
                        values.push(c as f64 * idf[rank as usize - 1]);
                    }
                }
                SparseVector { indices, values }.normalized()
            })
            .collect();
        (vectors, idf.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n_min: usize, n_max: usize) -> NGramConfig {
        NGramConfig::new(n_min, n_max, 1).unwrap()
    }

    #[test]
    fn ngram_enumeration() {
        assert_eq!(extract_ngrams("abc", &cfg(2, 2)), vec!["ab", "bc"]);
        let counts = ngram_counts("aaa", &cfg(2, 2));
        assert_eq!(counts.len(), 1);
        assert_eq!(counts["aa"], 2);
        assert!(extract_ngrams("ab", &cfg(3, 5)).is_empty());
        assert_eq!(extract_ngrams("ñañ", &cfg(2, 2)), vec!["ña", "añ"]);
    }

    #[test]
    fn ngram_count_matches_substring_enumeration() {
        // brute force over all (start, len) substrings
        let word = "venezuela";
        let len = word.chars().count();
        let brute: usize = (3..=5).map(|n| (0..len).filter(|s| s + n <= len).count()).sum();
        assert_eq!(brute, 18);
        assert_eq!(extract_ngrams(word, &cfg(3, 5)).len(), brute);
    }

    #[test]
    fn config_validation() {
        assert!(NGramConfig::new(0, 3, 1).is_err());
        assert!(NGramConfig::new(4, 3, 1).is_err());
        assert!(NGramConfig::new(3, 9, 1).is_err());
        assert!(NGramConfig::new(3, 5, 0).is_err());
        assert!(NGramConfig::new(1, 8, 2).is_ok());
    }

    #[test]
    fn idf_formula() {
        let m = TfidfModel::fit(&["ab", "ab"], &cfg(2, 2)).unwrap();
        assert_eq!(m.vocabulary_len(), 1);
        assert_eq!(m.idf()[0], 1.0);

        let m = TfidfModel::fit(&["ab", "cd"], &cfg(2, 2)).unwrap();
        let i = m.index_of("ab").unwrap() as usize;
        // ln(3/2) + 1
        assert!((m.idf()[i] - 1.405_465_108_108_164_4).abs() < 1e-12);
        assert_eq!(m.term(0), "ab");
        assert_eq!(m.term(1), "cd");
    }

    #[test]
    fn fit_errors() {
        let strict = NGramConfig::new(2, 2, 2).unwrap();
        assert_eq!(
            TfidfModel::fit(&["ab", "cd"], &strict),
            Err(SimIndexError::EmptyVocabulary { min_df: 2, docs: 2 })
        );
        assert_eq!(TfidfModel::fit::<&str>(&[], &cfg(2, 2)), Err(SimIndexError::NoDocuments));
        assert!(matches!(TfidfModel::fit(&["a", ""], &cfg(3, 5)), Err(SimIndexError::EmptyVocabulary { .. })));
    }

    #[test]
    fn transform_examples() {
        let m = TfidfModel::fit(&["ab", "zz"], &cfg(2, 2)).unwrap();
        let v = m.transform("ab");
        assert_eq!(v.nnz(), 1);
        assert_eq!(v.values()[0], 1.0);
        assert!(m.transform("qq").is_empty());

        // "ab" and "ba" share df, so equal idf; counts in "abab" are ab:2, ba:1
        let m = TfidfModel::fit(&["ab ba", "ba ab"], &cfg(2, 2)).unwrap();
        let v = m.transform("abab");
        let ab = m.index_of("ab").unwrap();
        let ba = m.index_of("ba").unwrap();
        let get = |i: u32| v.iter().find(|e| e.0 == i).unwrap().1;
        assert!((get(ab) - 2.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((get(ba) - 1.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let docs = ["maduro captured in caracas", "maduro captured in caracas", "xyz qrs"];
        let (_, v) = TfidfModel::fit_transform(&docs, &cfg(3, 5)).unwrap();
        assert_eq!(cosine(&v[0], &v[1]), 1.0);
        assert_eq!(cosine(&v[0], &v[2]), 0.0);
        assert_eq!(cosine(&v[0], &SparseVector::default()), 0.0);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(docs in proptest::collection::vec("[a-d ]{0,20}", 2..8)) {
            if let Ok((_, vs)) = TfidfModel::fit_transform(&docs, &cfg(2, 4)) {
                for a in &vs {
                    for b in &vs {
                        let ab = cosine(a, b);
                        prop_assert_eq!(ab.to_bits(), cosine(b, a).to_bits());
                        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
                    }
                    if !a.is_empty() {
                        prop_assert!((a.norm() - 1.0).abs() < 1e-9);
                    }
                    prop_assert!(a.indices().windows(2).all(|w| w[0] < w[1]));
                }
            }
        }

        #[test]
        fn idf_scaling_leaves_cosines(docs in proptest::collection::vec("[a-c]{1,15}", 2..6), factor in 0.01f64..100.0) {
            let model = TfidfModel::fit(&docs, &cfg(1, 3)).unwrap();
            let mut scaled = model.clone();
            scaled.scale_idf(factor);
            for a in &docs {
                for b in &docs {
                    let before = cosine(&model.transform(a), &model.transform(b));
                    let after = cosine(&scaled.transform(a), &scaled.transform(b));
                    prop_assert!((before - after).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn training_docs_reconstruct_unit_vectors(docs in proptest::collection::vec("[a-z ]{3,30}", 1..6)) {
            let model = TfidfModel::fit(&docs, &cfg(3, 5)).unwrap();
            for d in &docs {
                let v = model.transform(d);
                prop_assert!((v.norm() - 1.0).abs() < 1e-9);
                prop_assert!(v.indices().iter().all(|&i| (i as usize) < model.vocabulary_len()));
            }
            prop_assert!(model.idf().iter().all(|&x| x > 0.0));
        }

        #[test]
        fn term_table_matches_fitted_model(
            docs in proptest::collection::vec("[a-dñ ]{0,25}", 1..10),
            pick in proptest::collection::vec(any::<bool>(), 10),
            min_df in 1usize..3,
        ) {
            let ngram = NGramConfig::new(2, 4, min_df).unwrap();
            let table = TermTable::build(&docs, &ngram).unwrap();
            let members: Vec<u32> = (0..docs.len() as u32).filter(|&i| pick[i as usize]).collect();
            prop_assume!(!members.is_empty());
            let subset: Vec<&str> = members.iter().map(|&i| docs[i as usize].as_str()).collect();
            let (vectors, vocab) = table.vectorize(&members);
            match TfidfModel::fit_transform(&subset, &ngram) {
                Ok((model, expected)) => {
                    prop_assert_eq!(vocab, model.vocabulary_len());
                    prop_assert_eq!(vectors, expected);
                }
                Err(_) => prop_assert!(vectors.iter().all(SparseVector::is_empty)),
            }
        }
    }
}
