//! Evaluation suite: ranking accuracy (AUROC), correlation, geometric-mean
//! aggregation of accuracy and retention scores, KL divergence between
//! per-class probability profiles, and a Fréchet distance over pluggable
//! image embeddings.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::imaging::{resize, GrayImage};
use crate::linalg::{jacobi_symmetric, mat_mul, sqrt_psd};

/// Probabilities are clamped into `[CLAMP, 1 - CLAMP]` before divergence
/// computations, so classifier outputs of exactly 0 or 1 stay finite.
pub const PROBABILITY_CLAMP: f64 = 1e-9;

/// Paired binary labels and real-valued prediction scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    labels: Vec<bool>,
    scores: Vec<f64>,
}

impl ScoreSet {
    /// Pairs labels with scores; lengths must match and scores be finite.
    pub fn new(labels: Vec<bool>, scores: Vec<f64>) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: scores.len(),
            });
        }
        for (index, &value) in scores.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: "scores",
                    index,
                    value,
                });
            }
        }
        Ok(Self { labels, scores })
    }

    /// Number of paired examples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Whether the set holds no examples.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The binary ground-truth labels.
    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// The prediction scores.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Area under the ROC curve via the rank-statistic identity: the fraction
/// of (positive, negative) pairs ranked correctly, ties counted half.
///
/// Computed from midranks in `O(n log n)`; every intermediate is a multiple
/// of one half, so the result is exactly the brute-force pair count.
pub fn auroc(set: &ScoreSet) -> Result<f64> {
    let n = set.len();
    let positives = set.labels.iter().filter(|&&label| label).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| set.scores[i].total_cmp(&set.scores[j]));
    let mut ranks = vec![0.0f64; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && set.scores[order[end + 1]] == set.scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end+1 share their average.
        let midrank = (start + end + 2) as f64 / 2.0;
        for &index in &order[start..=end] {
            ranks[index] = midrank;
        }
        start = end + 1;
    }

    let positive_rank_sum: f64 = set
        .labels
        .iter()
        .zip(&ranks)
        .filter_map(|(&label, &rank)| label.then_some(rank))
        .sum();
    let u = positive_rank_sum - (positives * (positives + 1)) as f64 / 2.0;
    Ok(u / (positives as f64 * negatives as f64))
}

/// Pearson product-moment correlation between two equal-length series.
///
/// Evaluated as `S_xy / sqrt(S_xx * S_yy)` with a single square root, so
/// exact rational cases (like 0.5) come out exact.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: x.len(),
        });
    }
    for (series, context) in [(x, "x"), (y, "y")] {
        for (index, &value) in series.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: if context == "x" { "x" } else { "y" },
                    index,
                    value,
                });
            }
        }
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mean_x, b - mean_y);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance { name: "x" });
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance { name: "y" });
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Aggregates accuracy scores `a` and retention scores `f` into one number:
/// the geometric mean of the two lists' geometric means,
/// `sqrt((prod a)^(1/n) * (prod f)^(1/m))`.
///
/// Evaluated in log space so hundreds of small factors cannot underflow;
/// a single zero anywhere collapses the whole score to zero, short-circuited
/// before the logs.
pub fn cmig(accuracy: &[f64], retention: &[f64]) -> Result<f64> {
    for (values, name) in [(accuracy, "accuracy"), (retention, "retention")] {
        if values.is_empty() {
            return Err(Error::InvalidParameter {
                name: if name == "accuracy" {
                    "accuracy"
                } else {
                    "retention"
                },
                reason: "geometric mean needs at least one value",
            });
        }
        for &value in values {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(Error::MetricOutOfRange {
                    name: if name == "accuracy" {
                        "accuracy"
                    } else {
                        "retention"
                    },
                    value,
                });
            }
        }
    }
    if accuracy.contains(&0.0) || retention.contains(&0.0) {
        return Ok(0.0);
    }
    let log_mean =
        |values: &[f64]| values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64;
    Ok((0.5 * (log_mean(accuracy) + log_mean(retention))).exp())
}

/// Average predicted probability per pathology class, keyed by class name
/// and held in sorted order. Probabilities are clamped into
/// `[PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP]` at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PathologyDistribution {
    classes: Vec<String>,
    probabilities: Vec<f64>,
}

impl PathologyDistribution {
    /// Builds a distribution from (class, probability) pairs.
    ///
    /// Probabilities must lie in `[0, 1]`; duplicate class names are
    /// rejected. Entries are stored sorted by class name.
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut pairs: Vec<(String, f64)> = entries.into_iter().collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        for window in pairs.windows(2) {
            if window[0].0 == window[1].0 {
                return Err(Error::InvalidParameter {
                    name: "classes",
                    reason: "duplicate class name",
                });
            }
        }
        let mut classes = Vec::with_capacity(pairs.len());
        let mut probabilities = Vec::with_capacity(pairs.len());
        for (class, probability) in pairs {
            if !probability.is_finite() || !(0.0..=1.0).contains(&probability) {
                return Err(Error::ProbabilityRange {
                    class,
                    value: probability,
                });
            }
            probabilities.push(probability.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP));
            classes.push(class);
        }
        Ok(Self {
            classes,
            probabilities,
        })
    }

    /// Class names in sorted order.
    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(String::as_str)
    }

    /// Clamped probabilities, aligned with `classes`.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Number of classes.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    /// Whether the distribution has no classes.
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Kullback–Leibler divergence `sum_i P(i) ln(P(i) / Q(i))` in nats.
///
/// Both inputs must cover the same class list. Identical distributions
/// yield exactly zero (each log ratio is `ln(1)`); the construction-time
/// clamp keeps near-zero denominators finite.
pub fn kl_divergence(p: &PathologyDistribution, q: &PathologyDistribution) -> Result<f64> {
    if p.classes != q.classes {
        return Err(Error::ClassMismatch);
    }
    Ok(p.probabilities
        .iter()
        .zip(&q.probabilities)
        .map(|(&pp, &qq)| pp * (pp / qq).ln())
        .sum())
}

/// Mean vector, covariance matrix, and sample count of a set of feature
/// embeddings — the sufficient statistics for the Fréchet distance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStats {
    mean: Vec<f64>,
    covariance: Vec<f64>,
    samples: usize,
}

impl EmbeddingStats {
    /// Wraps precomputed statistics. The covariance must be `dim * dim`
    /// row-major, finite, and symmetric within 1e-12.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>, samples: usize) -> Result<Self> {
        let dim = mean.len();
        if covariance.len() != dim * dim {
            return Err(Error::LengthMismatch {
                left: dim * dim,
                right: covariance.len(),
            });
        }
        for (index, &value) in mean.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: "mean",
                    index,
                    value,
                });
            }
        }
        for (index, &value) in covariance.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: "covariance",
                    index,
                    value,
                });
            }
        }
        let mut max_asymmetry = 0.0f64;
        for i in 0..dim {
            for j in i + 1..dim {
                max_asymmetry =
                    max_asymmetry.max((covariance[i * dim + j] - covariance[j * dim + i]).abs());
            }
        }
        if max_asymmetry > 1e-12 {
            return Err(Error::AsymmetricCovariance { max_asymmetry });
        }
        Ok(Self {
            mean,
            covariance,
            samples,
        })
    }

    /// Embedding dimension.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The mean vector.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// The covariance matrix, row-major `dim * dim`.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// Number of samples that produced these statistics.
    pub fn samples(&self) -> usize {
        self.samples
    }
}

/// Fréchet distance between two Gaussians fitted to embedding sets:
/// `|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})`.
///
/// Matrix square roots go through symmetric eigendecomposition with
/// negative eigenvalues (rounding noise on PSD inputs) clamped to zero;
/// the final value is clamped at zero for the same reason. For equal
/// covariances the trace term cancels and the distance is exactly the
/// squared mean difference, up to rounding.
pub fn frechet_distance(s1: &EmbeddingStats, s2: &EmbeddingStats) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::LengthMismatch {
            left: s1.dim(),
            right: s2.dim(),
        });
    }
    let dim = s1.dim();
    let mean_term: f64 = s1
        .mean
        .iter()
        .zip(&s2.mean)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();

    let root1 = sqrt_psd(&s1.covariance, dim);
    let mut middle = mat_mul(&root1, &mat_mul(&s2.covariance, &root1, dim), dim);
    // Symmetrize before the second decomposition; the product is symmetric
    // in exact arithmetic but accumulates rounding skew.
    for i in 0..dim {
        for j in i + 1..dim {
            let average = (middle[i * dim + j] + middle[j * dim + i]) / 2.0;
            middle[i * dim + j] = average;
            middle[j * dim + i] = average;
        }
    }
    let (eigenvalues, _) = jacobi_symmetric(&middle, dim);
    let trace_sqrt: f64 = eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let trace = |m: &[f64]| (0..dim).map(|i| m[i * dim + i]).sum::<f64>();

    Ok((mean_term + trace(&s1.covariance) + trace(&s2.covariance) - 2.0 * trace_sqrt).max(0.0))
}

/// Turns an image into a fixed-length feature vector.
pub trait FeatureExtractor {
    /// Embeds one image. All embeddings from one extractor must share a
    /// dimension.
    fn embed(&self, image: &GrayImage) -> Result<Vec<f64>>;
}

/// Uses the flattened pixels themselves as the embedding. Only images of
/// one shape are mutually comparable.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn embed(&self, image: &GrayImage) -> Result<Vec<f64>> {
        Ok(image.data().to_vec())
    }
}

/// Desk-scale stand-in for a pretrained embedder: average-pool the image to
/// `pool x pool` by bilinear resize, then apply a fixed seeded random
/// linear projection to `out_dim` features. Deterministic for a given
/// (pool, out_dim, seed) and independent of input resolution.
#[derive(Debug, Clone)]
pub struct PooledProjectionExtractor {
    pool: usize,
    out_dim: usize,
    weights: Vec<f64>,
}

impl PooledProjectionExtractor {
    /// Builds an extractor with projection weights drawn once from a
    /// seeded Gaussian, scaled by `1 / pool` so feature magnitudes stay
    /// comparable across pool sizes.
    pub fn new(pool: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if pool == 0 || out_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "extractor",
                reason: "pool size and output dimension must be positive",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / pool as f64;
        let weights = (0..pool * pool * out_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Ok(Self {
            pool,
            out_dim,
            weights,
        })
    }

    /// Output feature dimension.
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

impl Default for PooledProjectionExtractor {
    /// 16×16 pooling into 32 features with a fixed seed: every run of the
    /// tool embeds into the same space, so distances stay comparable.
    fn default() -> Self {
        Self::new(16, 32, 0x7001).expect("default extractor parameters are valid")
    }
}

impl FeatureExtractor for PooledProjectionExtractor {
    fn embed(&self, image: &GrayImage) -> Result<Vec<f64>> {
        let pooled = resize(image, self.pool, self.pool)?;
        let pixels = pooled.data();
        let in_dim = self.pool * self.pool;
        let mut out = Vec::with_capacity(self.out_dim);
        for j in 0..self.out_dim {
            let row = &self.weights[j * in_dim..(j + 1) * in_dim];
            out.push(row.iter().zip(pixels).map(|(&w, &p)| w * p).sum());
        }
        Ok(out)
    }
}

/// Embeds every image and fits mean plus unbiased covariance.
pub fn embed_and_fit(
    images: &[GrayImage],
    extractor: &dyn FeatureExtractor,
) -> Result<EmbeddingStats> {
    if images.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: images.len(),
        });
    }
    let mut embeddings = Vec::with_capacity(images.len());
    for image in images {
        let embedding = extractor.embed(image)?;
        if let Some(first) = embeddings.first() {
            let first: &Vec<f64> = first;
            if embedding.len() != first.len() {
                return Err(Error::LengthMismatch {
                    left: first.len(),
                    right: embedding.len(),
                });
            }
        }
        embeddings.push(embedding);
    }

    let n = embeddings.len();
    let dim = embeddings[0].len();
    let mut mean = vec![0.0f64; dim];
    for embedding in &embeddings {
        for (accumulator, &value) in mean.iter_mut().zip(embedding) {
            *accumulator += value;
        }
    }
    for value in &mut mean {
        *value /= n as f64;
    }

    let mut covariance = vec![0.0f64; dim * dim];
    for embedding in &embeddings {
        for i in 0..dim {
            let di = embedding[i] - mean[i];
            for j in i..dim {
                covariance[i * dim + j] += di * (embedding[j] - mean[j]);
            }
        }
    }
    let denominator = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            covariance[i * dim + j] /= denominator;
            covariance[j * dim + i] = covariance[i * dim + j];
        }
    }
    EmbeddingStats::new(mean, covariance, n)
}

/// Named per-finding scores plus the aggregate numbers, ready for export.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    /// Named accuracy scores, each in `[0, 1]`.
    pub accuracy: BTreeMap<String, f64>,
    /// Named retention scores, each in `[0, 1]`.
    pub retention: BTreeMap<String, f64>,
    /// Geometric-mean aggregate of the two score families.
    pub cmig: f64,
    /// Divergence between real and edited per-class probability profiles.
    pub kl: f64,
    /// Fréchet distance between real and edited embedding statistics.
    pub fid: f64,
    /// Number of evaluated samples.
    #[cfg_attr(feature = "serde", serde(rename = "n"))]
    pub samples: usize,
}

/// Assembles a report from named scores and the distribution-level
/// numbers, computing the aggregate in the process.
pub fn assemble_report(
    accuracy: BTreeMap<String, f64>,
    retention: BTreeMap<String, f64>,
    kl: f64,
    fid: f64,
    samples: usize,
) -> Result<MetricReport> {
    let accuracy_values: Vec<f64> = accuracy.values().copied().collect();
    let retention_values: Vec<f64> = retention.values().copied().collect();
    let aggregate = cmig(&accuracy_values, &retention_values)?;
    for (value, name) in [(kl, "kl"), (fid, "fid")] {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidParameter {
                name: if name == "kl" { "kl" } else { "fid" },
                reason: "must be finite and non-negative",
            });
        }
    }
    Ok(MetricReport {
        accuracy,
        retention,
        cmig: aggregate,
        kl,
        fid,
        samples,
    })
}
