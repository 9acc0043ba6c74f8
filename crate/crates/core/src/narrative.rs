//! Narrative clustering of a time window: k-means over TF-IDF vectors, a
//! rank-2 SVD projection for scatter plots, and base-2 narrative entropy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::export::{csv_bytes, fmt_f64, json_bytes};
use crate::seed::rng_for;
use crate::simindex::{NGramConfig, SimIndexError, SparseVector, TfidfModel};

pub const MAX_ITERATIONS: usize = 300;
pub const KMEANS_RESTARTS: usize = 10;
const SVD_TOLERANCE: f64 = 1e-7;
const SVD_MAX_SWEEPS: usize = 2000;

#[derive(Debug, Error)]
pub enum NarrativeError {
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("window has {usable} messages with non-empty vectors; k={k} needs {shortfall} more")]
    TooFewMessages { usable: usize, k: usize, shortfall: usize },
    #[error("input has rank below 2")]
    RankDeficient,
    #[error("need at least 2 vectors for a projection, got {0}")]
    TooFewVectors(usize),
    #[error("invalid cluster space {0:?} (expected tfidf or svd:<d>)")]
    InvalidSpace(String),
    #[error(transparent)]
    SimIndex(#[from] SimIndexError),
}

/// Space in which k-means runs. The 2-D projection is export-only either way.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ClusterSpace {
    #[default]
    Tfidf,
    Svd(usize),
}

impl fmt::Display for ClusterSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterSpace::Tfidf => f.write_str("tfidf"),
            ClusterSpace::Svd(d) => write!(f, "svd:{d}"),
        }
    }
}

impl TryFrom<String> for ClusterSpace {
    type Error = NarrativeError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ClusterSpace> for String {
    fn from(space: ClusterSpace) -> String {
        space.to_string()
    }
}

impl FromStr for ClusterSpace {
    type Err = NarrativeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "tfidf" {
            return Ok(ClusterSpace::Tfidf);
        }
        match s.strip_prefix("svd:").map(str::parse::<usize>) {
            Some(Ok(d)) if d >= 1 => Ok(ClusterSpace::Svd(d)),
            _ => Err(NarrativeError::InvalidSpace(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub space: ClusterSpace,
    pub centroids: Vec<Vec<f64>>,
    /// Message id to cluster index.
    pub assignments: BTreeMap<String, usize>,
    /// Window message ids in corpus order.
    pub members: Vec<String>,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in self.assignments.values() {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn labels(&self) -> Vec<usize> {
        self.members.iter().map(|id| self.assignments[id]).collect()
    }
}

/// Result of a plain k-means fit over arbitrary sparse points.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(x: &SparseVector, xnorm2: f64, c: &[f64], cnorm2: f64) -> f64 {
    (xnorm2 - 2.0 * x.dot_dense(c) + cnorm2).max(0.0)
}

fn nearest(x: &SparseVector, xnorm2: f64, centroids: &[Vec<f64>], cnorms: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, (c, &cn)) in centroids.iter().zip(cnorms).enumerate() {
        let d = sq_dist(x, xnorm2, c, cn);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Draws a slot with probability proportional to `weights`; `None` when every
/// weight is zero.
fn weighted_pick(weights: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut r = rng.random::<f64>() * total;
    let mut pick = None;
    for (slot, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            pick = Some(slot);
            if r < w {
                break;
            }
            r -= w;
        }
    }
    pick
}

/// Greedy k-means++: each new centre is the best of `2 + ln k` D²-sampled
/// candidates, judged by the potential it leaves behind.
fn kmeans_pp(points: &[SparseVector], norms: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let usable: Vec<usize> = (0..points.len()).filter(|&i| !points[i].is_empty()).collect();
    let dense = |i: usize| {
        let mut c = vec![0.0; dim];
        for (t, v) in points[i].iter() {
            c[t as usize] = v;
        }
        c
    };
    let trials = 2 + (k as f64).ln().floor() as usize;
    let distances = |centre: usize| -> Vec<f64> {
        let c = dense(centre);
        let cn = c.iter().map(|v| v * v).sum::<f64>();
        usable.iter().map(|&i| sq_dist(&points[i], norms[i], &c, cn)).collect()
    };
    let first = usable[rng.random_range(0..usable.len())];
    let mut chosen = vec![first];
    let mut d2 = distances(first);
    while chosen.len() < k {
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = match weighted_pick(&d2, rng) {
                Some(slot) => usable[slot],
                None => {
                    // all remaining points coincide with a chosen centre
                    let rest: Vec<usize> = usable.iter().copied().filter(|i| !chosen.contains(i)).collect();
                    rest[rng.random_range(0..rest.len())]
                }
            };
            let merged: Vec<f64> = d2.iter().zip(distances(candidate)).map(|(a, b)| a.min(b)).collect();
            let potential: f64 = merged.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, candidate, merged));
            }
        }
        let (_, pick, merged) = best.expect("at least one trial");
        chosen.push(pick);
        d2 = merged;
    }
    chosen.into_iter().map(dense).collect()
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Returns whether anything moved.
fn repair_empty(labels: &mut [usize], k: usize, points: &[SparseVector], norms: &[f64], centroids: &[Vec<f64>], cnorms: &[f64]) -> bool {
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let mut moved = false;
    for e in 0..k {
        if sizes[e] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &l) in labels.iter().enumerate() {
            if sizes[l] < 2 {
                continue;
            }
            let d = sq_dist(&points[i], norms[i], &centroids[l], cnorms[l]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("n >= k leaves a cluster with two members");
        sizes[labels[i]] -= 1;
        labels[i] = e;
        sizes[e] = 1;
        moved = true;
    }
    moved
}

/// Lloyd's k-means with k-means++ seeding, restarted [`KMEANS_RESTARTS`]
/// times from independent seed streams; the fit with the lowest final
/// objective wins (earliest restart on ties). Assignment ties go to the
/// lowest cluster index and empty clusters are re-seeded with the farthest
/// point, so the fit always has `k` non-empty clusters.
pub fn kmeans(points: &[SparseVector], dim: usize, k: usize, seed: u64, max_iter: usize) -> Result<KMeansFit, NarrativeError> {
    if k < 2 {
        return Err(NarrativeError::InvalidK(k));
    }
    let usable = points.iter().filter(|p| !p.is_empty()).count();
    if usable < k {
        return Err(NarrativeError::TooFewMessages { usable, k, shortfall: k - usable });
    }
    let norms: Vec<f64> = points.iter().map(|p| p.values().iter().map(|v| v * v).sum()).collect();
    let mut best: Option<KMeansFit> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = rng_for(seed, &format!("kmeans/{restart}"));
        let fit = lloyd(points, &norms, dim, k, &mut rng, max_iter);
        let last = |f: &KMeansFit| f.objective_trace.last().copied().unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|b| last(&fit) < last(b)) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &[SparseVector], norms: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng, max_iter: usize) -> KMeansFit {
    let mut centroids = kmeans_pp(points, norms, dim, k, rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < max_iter.max(1) {
        iterations += 1;
        let cnorms: Vec<f64> = centroids.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let mut next: Vec<usize> = points
            .par_iter()
            .zip(norms.par_iter())
            .map(|(p, &n)| nearest(p, n, &centroids, &cnorms))
            .collect();
        let repaired = repair_empty(&mut next, k, points, norms, &centroids, &cnorms);
        let changed = next != labels;
        labels = next;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sizes[l] += 1;
            for (t, v) in p.iter() {
                sums[l][t as usize] += v;
            }
        }
        for (c, &s) in sums.iter_mut().zip(&sizes) {
            c.iter_mut().for_each(|v| *v /= s as f64);
        }
        centroids = sums;

        let cnorms: Vec<f64> = centroids.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let objective: f64 = points
            .iter()
            .zip(norms)
            .zip(&labels)
            .map(|((p, &n), &l)| sq_dist(p, n, &centroids[l], cnorms[l]))
            .sum();
        trace.push(objective);
        if !changed && !repaired {
            break;
        }
    }
    KMeansFit { centroids, labels, objective_trace: trace, iterations }
}

/// Window messages and their TF-IDF vectors fitted on the window alone.
fn window_vectors(corpus: &Corpus, window: (i64, i64), ngram: &NGramConfig) -> Result<(Corpus, Vec<SparseVector>, usize), NarrativeError> {
    let sub = corpus.window(window.0, window.1);
    if sub.is_empty() {
        return Err(NarrativeError::TooFewMessages { usable: 0, k: 0, shortfall: 0 });
    }
    let texts: Vec<&str> = sub.messages().iter().map(|m| m.norm_text.as_str()).collect();
    let (model, vectors) = TfidfModel::fit_transform(&texts, ngram)?;
    let dim = model.vocabulary_len();
    Ok((sub, vectors, dim))
}

/// Clusters the messages in the half-open window `[start, end)` into `k`
/// narratives over the default TF-IDF space.
pub fn cluster_window(corpus: &Corpus, window: (i64, i64), k: usize, seed: u64, ngram: &NGramConfig) -> Result<ClusterModel, NarrativeError> {
    cluster_window_in(corpus, window, k, seed, ngram, ClusterSpace::Tfidf)
}

pub fn cluster_window_in(
    corpus: &Corpus,
    window: (i64, i64),
    k: usize,
    seed: u64,
    ngram: &NGramConfig,
    space: ClusterSpace,
) -> Result<ClusterModel, NarrativeError> {
    if k < 2 {
        return Err(NarrativeError::InvalidK(k));
    }
    let (sub, vectors, dim) = match window_vectors(corpus, window, ngram) {
        Err(NarrativeError::TooFewMessages { .. }) | Err(NarrativeError::SimIndex(SimIndexError::EmptyVocabulary { .. })) => {
            return Err(NarrativeError::TooFewMessages { usable: 0, k, shortfall: k })
        }
        other => other?,
    };
    let usable = vectors.iter().filter(|v| !v.is_empty()).count();
    if usable < k {
        return Err(NarrativeError::TooFewMessages { usable, k, shortfall: k - usable });
    }
    let fit = match space {
        ClusterSpace::Tfidf => kmeans(&vectors, dim, k, seed, MAX_ITERATIONS)?,
        ClusterSpace::Svd(d) => {
            let svd = truncated_svd(&vectors, dim, d, seed)?;
            let points: Vec<SparseVector> = svd
                .coords
                .iter()
                .map(|row| SparseVector::from_pairs(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i as u32, *v)).collect()))
                .collect();
            kmeans(&points, d, k, seed, MAX_ITERATIONS)?
        }
    };
    let members: Vec<String> = sub.messages().iter().map(|m| m.id.clone()).collect();
    let assignments = members.iter().cloned().zip(fit.labels.iter().copied()).collect();
    Ok(ClusterModel {
        k,
        space,
        centroids: fit.centroids,
        assignments,
        members,
        objective_trace: fit.objective_trace,
        iterations: fit.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svd {
    /// Singular values, descending.
    pub values: Vec<f64>,
    /// Per-row coordinates: left singular vectors scaled by the values.
    pub coords: Vec<Vec<f64>>,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub coords: BTreeMap<String, (f64, f64)>,
    pub explained: [f64; 2],
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major, n×n).
/// Returns eigenvalues descending with matching eigenvector columns.
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    (0..n).for_each(|i| v[i * n + i] = 1.0);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        let scale: f64 = (0..n).map(|i| a[i * n + i].powi(2)).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (arp, arq) = (a[r * n + p], a[r * n + q]);
                    a[r * n + p] = c * arp - s * arq;
                    a[r * n + q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let (apr, aqr) = (a[p * n + r], a[q * n + r]);
                    a[p * n + r] = c * apr - s * aqr;
                    a[q * n + r] = s * apr + c * aqr;
                }
                for r in 0..n {
                    let (vrp, vrq) = (v[r * n + p], v[r * n + q]);
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]).then(x.cmp(&y)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (col, &i) in order.iter().enumerate() {
        for r in 0..n {
            vecs[r * n + col] = v[r * n + i];
        }
    }
    (values, vecs)
}

/// Modified Gram-Schmidt on the columns of `q` (rows×b, row-major). Columns
/// that collapse are replaced with fresh random directions.
fn orthonormalize(q: &mut [f64], rows: usize, b: usize, rng: &mut ChaCha8Rng) {
    for j in 0..b {
        for attempt in 0..3 {
            for i in 0..j {
                let dot: f64 = (0..rows).map(|r| q[r * b + i] * q[r * b + j]).sum();
                (0..rows).for_each(|r| q[r * b + j] -= dot * q[r * b + i]);
            }
            let norm = (0..rows).map(|r| q[r * b + j].powi(2)).sum::<f64>().sqrt();
            if norm > 1e-10 {
                (0..rows).for_each(|r| q[r * b + j] /= norm);
                break;
            }
            if attempt == 2 {
                (0..rows).for_each(|r| q[r * b + j] = 0.0);
            } else {
                (0..rows).for_each(|r| q[r * b + j] = rng.sample(StandardNormal));
            }
        }
    }
}

/// Rank-`rank` truncated SVD of the row matrix `rows` (each row a sparse
/// vector over `dim` columns) by seeded block subspace iteration with a
/// Rayleigh-Ritz step. Stops once every leading singular value changes by
/// less than 1e-7 relative between sweeps.
pub fn truncated_svd(rows: &[SparseVector], dim: usize, rank: usize, seed: u64) -> Result<Svd, NarrativeError> {
    let n = rows.len();
    if n < 2 {
        return Err(NarrativeError::TooFewVectors(n));
    }
    let dim = dim.max(rows.iter().filter_map(|r| r.indices().last()).map(|&i| i as usize + 1).max().unwrap_or(0));
    let b = (rank + 8).min(n).min(dim);
    if b < rank.max(2) {
        return Err(NarrativeError::RankDeficient);
    }
    let mut rng = rng_for(seed, "svd");
    let mut q: Vec<f64> = (0..dim * b).map(|_| rng.sample(StandardNormal)).collect();
    orthonormalize(&mut q, dim, b, &mut rng);

    let apply = |q: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n * b];
        for (i, row) in rows.iter().enumerate() {
            let out = &mut y[i * b..(i + 1) * b];
            for (t, v) in row.iter() {
                let qr = &q[t as usize * b..(t as usize + 1) * b];
                out.iter_mut().zip(qr).for_each(|(o, x)| *o += v * x);
            }
        }
        y
    };
    let apply_t = |y: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; dim * b];
        for (i, row) in rows.iter().enumerate() {
            let yr = &y[i * b..(i + 1) * b];
            for (t, v) in row.iter() {
                let out = &mut z[t as usize * b..(t as usize + 1) * b];
                out.iter_mut().zip(yr).for_each(|(o, x)| *o += v * x);
            }
        }
        z
    };

    let mut prev: Vec<f64> = vec![f64::NAN; rank];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let y = apply(&q);
        // Rayleigh-Ritz on the current basis
        let mut gram = vec![0.0; b * b];
        for i in 0..n {
            let yr = &y[i * b..(i + 1) * b];
            for p in 0..b {
                for s in 0..b {
                    gram[p * b + s] += yr[p] * yr[s];
                }
            }
        }
        let (lambda, w) = jacobi_eigen(gram, b);
        let sigma: Vec<f64> = lambda.iter().take(rank).map(|l| l.max(0.0).sqrt()).collect();
        let converged = sigma.iter().zip(&prev).all(|(s, p)| (s - p).abs() <= SVD_TOLERANCE * s.abs().max(f64::MIN_POSITIVE));
        if converged || sweeps >= SVD_MAX_SWEEPS {
            if sigma.len() < 2 || sigma[0] <= 0.0 || sigma[1] <= 1e-10 * sigma[0] {
                return Err(NarrativeError::RankDeficient);
            }
            let mut coords = vec![vec![0.0; rank]; n];
            for (i, c) in coords.iter_mut().enumerate() {
                let yr = &y[i * b..(i + 1) * b];
                for (col, cv) in c.iter_mut().enumerate() {
                    *cv = (0..b).map(|p| yr[p] * w[p * b + col]).sum();
                }
            }
            // sign convention: the largest-magnitude coordinate of each component is positive
            for col in 0..rank {
                let pivot = coords.iter().map(|c| c[col]).fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
                if pivot < 0.0 {
                    coords.iter_mut().for_each(|c| c[col] = -c[col]);
                }
            }
            return Ok(Svd { values: sigma, coords, sweeps });
        }
        prev = sigma;
        q = apply_t(&y);
        orthonormalize(&mut q, dim, b, &mut rng);
    }
}

/// Projects row vectors onto the first two singular directions. Vectors
/// are keyed by `ids` in the returned projection.
pub fn svd_project(vectors: &[SparseVector], seed: u64) -> Result<Svd, NarrativeError> {
    truncated_svd(vectors, 0, 2, seed)
}

pub fn projection_2d(ids: &[String], svd: &Svd) -> Projection2D {
    Projection2D {
        coords: ids.iter().cloned().zip(svd.coords.iter().map(|c| (c[0], c[1]))).collect(),
        explained: [svd.values[0], svd.values[1]],
    }
}

/// Base-2 Shannon entropy of a count distribution, with 0·log 0 = 0.
pub fn shannon_entropy_bits(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts.iter().filter(|&&c| c > 0) {
        let p = c as f64 / n as f64;
        h -= p * p.log2();
    }
    h.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub k: usize,
    pub overall: f64,
    pub per_channel: BTreeMap<String, f64>,
    pub cluster_sizes: Vec<usize>,
}

impl EntropyReport {
    pub fn to_json(&self) -> Vec<u8> {
        json_bytes(self)
    }
}

pub fn narrative_entropy(model: &ClusterModel, corpus: &Corpus) -> EntropyReport {
    let mut per_channel_counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (id, &c) in &model.assignments {
        let Some(m) = corpus.get(id) else { continue };
        per_channel_counts.entry(m.channel.clone()).or_insert_with(|| vec![0; model.k])[c] += 1;
    }
    let cluster_sizes = model.cluster_sizes();
    EntropyReport {
        k: model.k,
        overall: shannon_entropy_bits(&cluster_sizes),
        per_channel: per_channel_counts.into_iter().map(|(ch, counts)| (ch, shannon_entropy_bits(&counts))).collect(),
        cluster_sizes,
    }
}

/// `msg_id,channel,cluster,x,y` rows in window order.
pub fn scatter_csv(model: &ClusterModel, projection: Option<&Projection2D>, corpus: &Corpus) -> Vec<u8> {
    csv_bytes(
        &["msg_id", "channel", "cluster", "x", "y"],
        model.members.iter().map(|id| {
            let channel = corpus.get(id).map(|m| m.channel.clone()).unwrap_or_default();
            let (x, y) = projection
                .and_then(|p| p.coords.get(id))
                .map(|&(x, y)| (fmt_f64(x), fmt_f64(y)))
                .unwrap_or_default();
            vec![id.clone(), channel, model.assignments[id].to_string(), x, y]
        }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeResult {
    pub model: ClusterModel,
    pub projection: Option<Projection2D>,
    pub entropy: EntropyReport,
}

/// Clustering, projection and entropy for one window. A rank-deficient
/// window still yields clusters and entropy, just no coordinates.
pub fn analyze_window(
    corpus: &Corpus,
    window: (i64, i64),
    k: usize,
    seed: u64,
    ngram: &NGramConfig,
    space: ClusterSpace,
) -> Result<NarrativeResult, NarrativeError> {
    let model = cluster_window_in(corpus, window, k, seed, ngram, space)?;
    let (_, vectors, dim) = window_vectors(corpus, window, ngram)?;
    let projection = match truncated_svd(&vectors, dim, 2, seed) {
        Ok(svd) => Some(projection_2d(&model.members, &svd)),
        Err(NarrativeError::RankDeficient) | Err(NarrativeError::TooFewVectors(_)) => {
            log::warn!("narrative window is rank deficient; scatter has no coordinates");
            None
        }
        Err(e) => return Err(e),
    };
    let entropy = narrative_entropy(&model, corpus);
    Ok(NarrativeResult { model, projection, entropy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Message, Platform};
    use proptest::prelude::*;

    fn corpus_of(texts: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, (ch, t))| Message::new(format!("m{i:03}"), *ch, Platform::ChannelBroadcast, 1000 + i as i64, *t))
                .collect(),
        )
        .unwrap()
    }

    fn all() -> (i64, i64) {
        (0, i64::MAX)
    }

    #[test]
    fn two_pure_clusters() {
        let mut texts = vec![("a", "oil exports collapse amid sanctions"); 2];
        texts.extend(vec![("b", "football final ends in penalty shootout"); 2]);
        let c = corpus_of(&texts);
        let m = cluster_window(&c, all(), 2, 7, &NGramConfig::default()).unwrap();
        let l = m.labels();
        assert_eq!(l[0], l[1]);
        assert_eq!(l[2], l[3]);
        assert_ne!(l[0], l[2]);
        assert_eq!(m.cluster_sizes(), vec![2, 2]);
    }

    #[test]
    fn too_few_usable_messages() {
        let c = corpus_of(&[("a", "hello world"), ("b", "xy"), ("c", "")]);
        let err = cluster_window(&c, all(), 3, 1, &NGramConfig::default()).unwrap_err();
        assert!(matches!(err, NarrativeError::TooFewMessages { usable: 1, k: 3, shortfall: 2 }), "{err}");
        assert!(matches!(cluster_window(&c, all(), 1, 1, &NGramConfig::default()), Err(NarrativeError::InvalidK(1))));
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(shannon_entropy_bits(&[10, 0, 0, 0, 0]), 0.0);
        assert!((shannon_entropy_bits(&[3; 5]) - 5f64.log2()).abs() < 1e-12);
        // counts 8,6,3,2,1 over 20 via log2 N - sum(n log2 n)/N
        let counts = [8usize, 6, 3, 2, 1];
        let oracle = 20f64.log2() - counts.iter().map(|&c| c as f64 * (c as f64).log2()).sum::<f64>() / 20.0;
        let h = shannon_entropy_bits(&counts);
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 2.008694969562842).abs() < 1e-12);
    }

    #[test]
    fn duplicated_document_is_rank_deficient() {
        let (_, v) = TfidfModel::fit_transform(&["same text here"; 4], &NGramConfig::default()).unwrap();
        assert!(matches!(svd_project(&v, 3), Err(NarrativeError::RankDeficient)));
        assert!(matches!(svd_project(&v[..1], 3), Err(NarrativeError::TooFewVectors(1))));
    }

    #[test]
    fn orthogonal_groups_split_components() {
        let v = |pairs: &[(u32, f64)]| SparseVector::from_pairs(pairs.to_vec()).normalized();
        let rows = vec![
            v(&[(0, 1.0), (1, 1.0)]),
            v(&[(0, 1.0), (1, 0.9)]),
            v(&[(0, 0.9), (1, 1.0)]),
            v(&[(2, 1.0), (3, 1.0)]),
            v(&[(2, 1.0), (3, 0.8)]),
        ];
        let svd = svd_project(&rows, 11).unwrap();
        assert!(svd.values[0] >= svd.values[1]);
        for c in &svd.coords[..3] {
            assert!(c[0] > 0.1 && c[1].abs() < 1e-9);
        }
        for c in &svd.coords[3..] {
            assert!(c[0].abs() < 1e-9 && c[1] > 0.1);
        }
    }

    #[test]
    fn jacobi_recovers_diagonal() {
        let (vals, _) = jacobi_eigen(vec![2.0, 1.0, 1.0, 2.0], 2);
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_space_parsing() {
        assert_eq!("tfidf".parse::<ClusterSpace>().unwrap(), ClusterSpace::Tfidf);
        assert_eq!("svd:10".parse::<ClusterSpace>().unwrap(), ClusterSpace::Svd(10));
        assert!("svd:0".parse::<ClusterSpace>().is_err());
        assert_eq!(ClusterSpace::Svd(4).to_string(), "svd:4");
        assert_eq!(serde_json::to_string(&ClusterSpace::Svd(4)).unwrap(), "\"svd:4\"");
    }

    #[test]
    fn single_cluster_channel_has_zero_entropy() {
        let mut texts = vec![];
        for i in 0..6 {
            texts.push(("solo", "blackout hits the capital overnight"));
            texts.push(("mixed", if i % 2 == 0 { "blackout hits the capital overnight" } else { "election council sets new date" }));
        }
        let c = corpus_of(&texts);
        let m = cluster_window(&c, all(), 2, 5, &NGramConfig::default()).unwrap();
        let e = narrative_entropy(&m, &c);
        assert_eq!(e.per_channel["solo"], 0.0);
        assert!((e.per_channel["mixed"] - 1.0).abs() < 1e-12);
        assert_eq!(e.cluster_sizes.iter().sum::<usize>(), 12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn kmeans_invariants(seed in 0u64..1000, words in proptest::collection::vec("[a-e]{4,9}( [a-e]{3,7}){0,3}", 8..30), k in 2usize..5) {
            let texts: Vec<(&str, &str)> = words.iter().enumerate().map(|(i, w)| (if i % 2 == 0 { "x" } else { "y" }, w.as_str())).collect();
            let c = corpus_of(&texts);
            match cluster_window(&c, all(), k, seed, &NGramConfig::default()) {
                Ok(m) => {
                    prop_assert_eq!(m.assignments.len(), c.len());
                    prop_assert!(m.cluster_sizes().iter().all(|&s| s > 0));
                    for w in m.objective_trace.windows(2) {
                        prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
                    }
                    let again = cluster_window(&c, all(), k, seed, &NGramConfig::default()).unwrap();
                    prop_assert_eq!(&again, &m);
                    let e = narrative_entropy(&m, &c);
                    let bound = (k as f64).log2() + 1e-12;
                    prop_assert!(e.overall >= 0.0 && e.overall <= bound);
                    prop_assert!(e.per_channel.values().all(|&h| (0.0..=bound).contains(&h)));
                }
                Err(NarrativeError::TooFewMessages { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn entropy_is_permutation_invariant(counts in proptest::collection::vec(0usize..40, 2..8), rot in 0usize..8) {
            let mut rotated = counts.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            let a = shannon_entropy_bits(&counts);
            let b = shannon_entropy_bits(&rotated);
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a <= (len as f64).log2() + 1e-12);
        }
    }
}
