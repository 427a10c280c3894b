//! Divergences, classification scores and distance correlation for paired
//! reference (human) / candidate (model) distribution tables.
//!
//! Direction convention: the reference distribution is always `P`, the candidate `Q`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{JudgmentDistribution, NliLabel};
use crate::io::sha256_hex;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("id sets differ: {} only in reference {:?}, {} only in candidate {:?}", only_reference.len(), preview(only_reference), only_candidate.len(), preview(only_candidate))]
    IdMismatch {
        only_reference: Vec<String>,
        only_candidate: Vec<String>,
    },
    #[error("row counts differ: {0} vs {1}")]
    RowCount(usize, usize),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid metric config: {0}")]
    Config(String),
}

fn preview(ids: &[String]) -> &[String] {
    &ids[..ids.len().min(5)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingTarget {
    #[default]
    QOnly,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub epsilon: f64,
    pub applied_to: SmoothingTarget,
    pub renormalize: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            applied_to: SmoothingTarget::QOnly,
            renormalize: true,
        }
    }
}

impl SmoothingConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.1) {
            return Err(MetricError::Config(format!("smoothing epsilon must be in (0, 0.1), got {}", self.epsilon)));
        }
        Ok(())
    }

    fn smooth(&self, d: [f64; 3]) -> [f64; 3] {
        let s = d.map(|x| x + self.epsilon);
        if self.renormalize {
            let total: f64 = s.iter().sum();
            s.map(|x| x / total)
        } else {
            s
        }
    }

    /// The (P, Q) pair actually fed to the log terms.
    pub fn apply(&self, p: [f64; 3], q: [f64; 3]) -> ([f64; 3], [f64; 3]) {
        let p = match self.applied_to {
            SmoothingTarget::QOnly => p,
            SmoothingTarget::Both => self.smooth(p),
        };
        (p, self.smooth(q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[serde(rename = "e")]
    Natural,
    #[serde(rename = "2")]
    Two,
}

impl std::str::FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e" | "natural" => Ok(LogBase::Natural),
            "2" | "two" => Ok(LogBase::Two),
            other => Err(format!("unknown log base {other:?} (expected e or 2)")),
        }
    }
}

impl LogBase {
    /// Factor converting a natural-log quantity into this base.
    fn scale(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Two => std::f64::consts::LOG2_E,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub smoothing: SmoothingConfig,
    /// Base for KL and cross-entropy.
    pub kl_base: LogBase,
    pub jsd_base: LogBase,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            smoothing: SmoothingConfig::default(),
            kl_base: LogBase::Natural,
            jsd_base: LogBase::Two,
        }
    }
}

impl MetricConfig {
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Σ p ln(p/q) with 0·ln(0/q) = 0; no smoothing, so may be infinite.
pub fn kl_unsmoothed(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let mut total = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi > 0.0 {
            total += pi * (pi / qi).ln();
        }
    }
    total.max(0.0)
}

/// KL(P‖Q) in nats after smoothing.
pub fn kl(p: &JudgmentDistribution, q: &JudgmentDistribution, smoothing: &SmoothingConfig) -> f64 {
    let (p, q) = smoothing.apply(p.probs(), q.probs());
    kl_unsmoothed(&p, &q)
}

/// Square-root Jensen–Shannon divergence, base 2 (bounded by 1).
pub fn jsd(p: &JudgmentDistribution, q: &JudgmentDistribution) -> f64 {
    jsd_with_base(p, q, LogBase::Two)
}

pub fn jsd_with_base(p: &JudgmentDistribution, q: &JudgmentDistribution, base: LogBase) -> f64 {
    let (p, q) = (p.probs(), q.probs());
    let m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])];
    let div = 0.5 * (kl_unsmoothed(&p, &m) + kl_unsmoothed(&q, &m)) * base.scale();
    let upper = if base == LogBase::Two { 1.0 } else { f64::INFINITY };
    div.max(0.0).sqrt().min(upper)
}

pub fn tvd(p: &JudgmentDistribution, q: &JudgmentDistribution) -> f64 {
    let (p, q) = (p.probs(), q.probs());
    (0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()).min(1.0)
}

/// Shannon entropy in nats.
pub fn entropy(p: &JudgmentDistribution) -> f64 {
    entropy_of(&p.probs())
}

fn entropy_of(p: &[f64; 3]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// −Σ P ln Q after smoothing; equals entropy(P) + KL(P‖Q) under the same smoothing.
pub fn soft_cross_entropy(p: &JudgmentDistribution, q: &JudgmentDistribution, smoothing: &SmoothingConfig) -> f64 {
    let (p, q) = smoothing.apply(p.probs(), q.probs());
    -p.iter().zip(&q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * qi.ln()).sum::<f64>()
}

/// Entropy of the distribution that [`soft_cross_entropy`] actually uses as P.
pub fn smoothed_entropy(p: &JudgmentDistribution, smoothing: &SmoothingConfig) -> f64 {
    entropy_of(&smoothing.apply(p.probs(), [1.0 / 3.0; 3]).0)
}

/// n×3 rows ordered by item id.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionMatrix {
    ids: Vec<String>,
    rows: Vec<[f64; 3]>,
}

impl DistributionMatrix {
    pub fn from_table(table: &BTreeMap<String, JudgmentDistribution>) -> Self {
        Self {
            ids: table.keys().cloned().collect(),
            rows: table.values().map(|d| d.probs()).collect(),
        }
    }

    /// Rows in the given order, ids taken as row positions.
    pub fn from_rows(rows: &[JudgmentDistribution]) -> Self {
        Self {
            ids: (0..rows.len()).map(|i| i.to_string()).collect(),
            rows: rows.iter().map(|d| d.probs()).collect(),
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

const ROW_BLOCK: usize = 64;

/// Double-centered pairwise Euclidean distance matrix, row-major.
fn centered_distances<const D: usize>(x: &[[f64; D]]) -> Vec<f64> {
    let n = x.len();
    let mut a = vec![0.0; n * n];
    a.par_chunks_mut(n * ROW_BLOCK).enumerate().for_each(|(block, chunk)| {
        for (r, row) in chunk.chunks_mut(n).enumerate() {
            let i = block * ROW_BLOCK + r;
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = x[i].iter().zip(&x[j]).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            }
        }
    });
    let row_means: Vec<f64> = a.chunks(n).map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    // distance matrices are symmetric, so column means equal row means
    a.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = *cell - row_means[i] - row_means[j] + grand;
        }
    });
    a
}

/// Mean of elementwise products; per-row partial sums are reduced in row order.
fn mean_product(a: &[f64], b: &[f64], n: usize) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(n)
        .zip(b.par_chunks(n))
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(u, v)| u * v).sum::<f64>())
        .collect();
    partial.iter().sum::<f64>() / (n * n) as f64
}

/// Sample distance correlation of two row-aligned point sets; 0 when either is constant.
pub fn distance_correlation_rows<const D: usize, const E: usize>(x: &[[f64; D]], y: &[[f64; E]]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::RowCount(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(MetricError::TooFewRows { needed: 2, got: n });
    }
    let a = centered_distances(x);
    let b = centered_distances(y);
    let dcov = mean_product(&a, &b, n);
    let dvar_x = mean_product(&a, &a, n);
    let dvar_y = mean_product(&b, &b, n);
    if dvar_x <= 0.0 || dvar_y <= 0.0 {
        return Ok(0.0);
    }
    let dcor2 = (dcov / (dvar_x * dvar_y).sqrt()).clamp(0.0, 1.0);
    Ok(dcor2.sqrt())
}

pub fn distance_correlation(x: &DistributionMatrix, y: &DistributionMatrix) -> Result<f64, MetricError> {
    distance_correlation_rows(&x.rows, &y.rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    /// `confusion[gold][predicted]`, canonical label order.
    pub confusion: [[usize; 3]; 3],
}

fn check_ids<A, B>(reference: &BTreeMap<String, A>, candidate: &BTreeMap<String, B>) -> Result<(), MetricError> {
    let only_reference: Vec<String> = reference.keys().filter(|k| !candidate.contains_key(*k)).cloned().collect();
    let only_candidate: Vec<String> = candidate.keys().filter(|k| !reference.contains_key(*k)).cloned().collect();
    if only_reference.is_empty() && only_candidate.is_empty() {
        Ok(())
    } else {
        Err(MetricError::IdMismatch {
            only_reference,
            only_candidate,
        })
    }
}

/// Accuracy, support-weighted F1 and macro F1 over the three labels.
/// Undefined precision or recall counts as 0; absent classes contribute F1 = 0 to the macro mean.
pub fn classification_scores(
    predictions: &BTreeMap<String, NliLabel>,
    golds: &BTreeMap<String, NliLabel>,
) -> Result<ClassificationScores, MetricError> {
    check_ids(golds, predictions)?;
    if golds.is_empty() {
        return Err(MetricError::TooFewRows { needed: 1, got: 0 });
    }
    let mut confusion = [[0usize; 3]; 3];
    for (id, gold) in golds {
        confusion[gold.index()][predictions[id].index()] += 1;
    }
    let n = golds.len() as f64;
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    let mut weighted = 0.0;
    let mut macro_sum = 0.0;
    for (c, row) in confusion.iter().enumerate() {
        let tp = row[c] as f64;
        let support: usize = row.iter().sum();
        let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
        let f1 = if support + predicted == 0 {
            0.0
        } else {
            2.0 * tp / (support + predicted) as f64
        };
        weighted += support as f64 / n * f1;
        macro_sum += f1;
    }
    Ok(ClassificationScores {
        accuracy: correct as f64 / n,
        weighted_f1: weighted,
        macro_f1: macro_sum / 3.0,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseError {
    pub id: String,
    pub abs: [f64; 3],
    pub norm: f64,
}

pub fn pairwise_errors(reference: &DistributionMatrix, candidate: &DistributionMatrix) -> Result<Vec<PairwiseError>, MetricError> {
    if reference.ids != candidate.ids {
        if reference.len() != candidate.len() {
            return Err(MetricError::RowCount(reference.len(), candidate.len()));
        }
        let r: BTreeMap<String, ()> = reference.ids.iter().map(|i| (i.clone(), ())).collect();
        let c: BTreeMap<String, ()> = candidate.ids.iter().map(|i| (i.clone(), ())).collect();
        check_ids(&r, &c)?;
    }
    Ok(reference
        .ids
        .iter()
        .zip(reference.rows.iter().zip(&candidate.rows))
        .map(|(id, (p, q))| {
            let abs = [(p[0] - q[0]).abs(), (p[1] - q[1]).abs(), (p[2] - q[2]).abs()];
            PairwiseError {
                id: id.clone(),
                abs,
                norm: abs.iter().map(|x| x * x).sum::<f64>().sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub id: String,
    pub kl: f64,
    pub jsd: f64,
    pub tvd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub kl: f64,
    pub jsd: f64,
    pub tvd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationBlock {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub soft_cross_entropy: f64,
    /// Items whose reference or candidate argmax was decided by the tie rule.
    pub tie_broken: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub means: MeanMetrics,
    pub distance_correlation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationBlock>,
    pub config: MetricConfig,
    pub config_digest: String,
    /// Input role → file digest, filled by the caller.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    pub instances: Vec<InstanceMetrics>,
}

/// Compares a reference table (P) with a candidate table (Q) over identical id sets.
///
/// With `predictions`, the classification block scores them against the reference argmax
/// and adds mean soft cross-entropy of Q against P.
pub fn dataset_report(
    reference: &BTreeMap<String, JudgmentDistribution>,
    candidate: &BTreeMap<String, JudgmentDistribution>,
    config: &MetricConfig,
    predictions: Option<&BTreeMap<String, NliLabel>>,
) -> Result<MetricReport, MetricError> {
    config.smoothing.validate()?;
    check_ids(reference, candidate)?;
    if reference.is_empty() {
        return Err(MetricError::TooFewRows { needed: 1, got: 0 });
    }
    let pairs: Vec<(&String, &JudgmentDistribution, &JudgmentDistribution)> =
        reference.iter().map(|(id, p)| (id, p, &candidate[id])).collect();
    let kl_scale = config.kl_base.scale();
    let instances: Vec<InstanceMetrics> = pairs
        .par_iter()
        .map(|(id, p, q)| InstanceMetrics {
            id: (*id).clone(),
            kl: kl(p, q, &config.smoothing) * kl_scale,
            jsd: jsd_with_base(p, q, config.jsd_base),
            tvd: tvd(p, q),
        })
        .collect();
    let n = instances.len() as f64;
    let means = MeanMetrics {
        kl: instances.iter().map(|r| r.kl).sum::<f64>() / n,
        jsd: instances.iter().map(|r| r.jsd).sum::<f64>() / n,
        tvd: instances.iter().map(|r| r.tvd).sum::<f64>() / n,
    };
    let dcor = if reference.len() >= 2 {
        distance_correlation(&DistributionMatrix::from_table(reference), &DistributionMatrix::from_table(candidate))?
    } else {
        0.0
    };
    let classification = match predictions {
        None => None,
        Some(preds) => {
            let mut tie_broken = Vec::new();
            let golds: BTreeMap<String, NliLabel> = reference
                .iter()
                .map(|(id, p)| {
                    let (label, tie) = p.argmax_with_tie();
                    if tie {
                        tie_broken.push(id.clone());
                    }
                    (id.clone(), label)
                })
                .collect();
            for (id, q) in candidate {
                if q.argmax_with_tie().1 && !tie_broken.contains(id) {
                    tie_broken.push(id.clone());
                }
            }
            tie_broken.sort();
            let scores = classification_scores(preds, &golds)?;
            let ce = pairs.iter().map(|(_, p, q)| soft_cross_entropy(p, q, &config.smoothing)).sum::<f64>() / n * kl_scale;
            Some(ClassificationBlock {
                accuracy: scores.accuracy,
                weighted_f1: scores.weighted_f1,
                macro_f1: scores.macro_f1,
                soft_cross_entropy: ce,
                tie_broken,
            })
        }
    };
    Ok(MetricReport {
        n: instances.len(),
        means,
        distance_correlation: dcor,
        classification,
        config: *config,
        config_digest: config.digest(),
        inputs: BTreeMap::new(),
        split_seed: None,
        instances,
    })
}

/// Argmax label per item (ties to canonical order).
pub fn argmax_table(table: &BTreeMap<String, JudgmentDistribution>) -> BTreeMap<String, NliLabel> {
    table.iter().map(|(id, d)| (id.clone(), d.argmax())).collect()
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-instance CSV; provenance goes in leading `#` comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# config_digest={}", self.config_digest).unwrap();
        for (role, digest) in &self.inputs {
            writeln!(out, "# input.{role}={digest}").unwrap();
        }
        out.push_str("id,kl,jsd,tvd\n");
        for r in &self.instances {
            writeln!(out, "{},{:.12},{:.12},{:.12}", csv_field(&r.id), r.kl, r.jsd, r.tvd).unwrap();
        }
        out
    }

    /// The one-line summary printed by the compare command.
    pub fn summary_line(&self) -> String {
        format!(
            "n={} KL={:.3} JSD={:.3} TVD={:.3} D.Corr={:.3}",
            self.n, self.means.kl, self.means.jsd, self.means.tvd, self.distance_correlation
        )
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot;
    use crate::data::NliLabel::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn jd(p: [f64; 3]) -> JudgmentDistribution {
        JudgmentDistribution::new(p).unwrap()
    }

    fn simplex() -> impl Strategy<Value = JudgmentDistribution> {
        proptest::array::uniform3(0.0f64..1.0)
            .prop_filter("non-zero", |w| w.iter().sum::<f64>() > 1e-6)
            .prop_map(|w| JudgmentDistribution::from_weights(w).unwrap())
    }

    /// Textbook route: dCov² = S1 + S2 − 2·S3 over raw distances.
    fn dcor_oracle(x: &[[f64; 3]], y: &[[f64; 3]]) -> f64 {
        let n = x.len();
        let d = |m: &[[f64; 3]], i: usize, j: usize| -> f64 {
            ((m[i][0] - m[j][0]).powi(2) + (m[i][1] - m[j][1]).powi(2) + (m[i][2] - m[j][2]).powi(2)).sqrt()
        };
        let dcov2 = |a: &[[f64; 3]], b: &[[f64; 3]]| -> f64 {
            let nf = n as f64;
            let mut s1 = 0.0;
            let (mut sa, mut sb) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    s1 += d(a, i, j) * d(b, i, j);
                    sa += d(a, i, j);
                    sb += d(b, i, j);
                }
            }
            let mut s3 = 0.0;
            for i in 0..n {
                let ra: f64 = (0..n).map(|j| d(a, i, j)).sum();
                let rb: f64 = (0..n).map(|j| d(b, i, j)).sum();
                s3 += ra * rb;
            }
            s1 / (nf * nf) + (sa / (nf * nf)) * (sb / (nf * nf)) - 2.0 * s3 / (nf * nf * nf)
        };
        let vx = dcov2(x, x);
        let vy = dcov2(y, y);
        if vx <= 0.0 || vy <= 0.0 {
            return 0.0;
        }
        (dcov2(x, y) / (vx * vy).sqrt()).max(0.0).sqrt()
    }

    #[test]
    fn kl_examples() {
        let s = SmoothingConfig::default();
        let u = JudgmentDistribution::uniform();
        assert_abs_diff_eq!(kl(&u, &u, &s), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kl(&one_hot(Entailment), &u, &s), 3f64.ln(), epsilon = 1e-12);
        let s_both = SmoothingConfig {
            applied_to: SmoothingTarget::Both,
            ..s
        };
        assert!(kl(&one_hot(Entailment), &u, &s_both) < 3f64.ln());
        // one-hot Q stays finite
        assert!(kl(&u, &one_hot(Entailment), &s).is_finite());
    }

    #[test]
    fn jsd_and_tvd_examples() {
        assert_abs_diff_eq!(jsd(&one_hot(Entailment), &one_hot(Neutral)), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(tvd(&one_hot(Entailment), &one_hot(Neutral)), 1.0, epsilon = 1e-15);
        let p = jd([0.5, 0.5, 0.0]);
        let q = jd([0.0, 0.5, 0.5]);
        // hand oracle: M = [.25,.5,.25]; KL(P‖M) = .5 log2 2 = .5 each → sqrt(.5)
        assert_abs_diff_eq!(jsd(&p, &q), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(jsd_with_base(&p, &q, LogBase::Natural), (0.5 * 2f64.ln()).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(tvd(&p, &q), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let s = SmoothingConfig::default();
        let u = JudgmentDistribution::uniform();
        assert_abs_diff_eq!(soft_cross_entropy(&u, &u, &s), 3f64.ln(), epsilon = 1e-12);
        let e = one_hot(Entailment);
        assert!(soft_cross_entropy(&e, &e, &s) < 1e-3);
    }

    #[test]
    fn smoothing_validation() {
        assert!(SmoothingConfig::with_epsilon(0.0).validate().is_err());
        assert!(SmoothingConfig::with_epsilon(0.1).validate().is_err());
        assert!(SmoothingConfig::with_epsilon(1e-5).validate().is_ok());
    }

    #[test]
    fn classification_hand_oracle() {
        let ids = ["a", "b", "c", "d"];
        let golds: BTreeMap<String, NliLabel> =
            ids.iter().zip([Entailment, Entailment, Neutral, Contradiction]).map(|(i, l)| (i.to_string(), l)).collect();
        let preds: BTreeMap<String, NliLabel> =
            ids.iter().zip([Entailment, Neutral, Neutral, Contradiction]).map(|(i, l)| (i.to_string(), l)).collect();
        let s = classification_scores(&preds, &golds).unwrap();
        // E: P=1 R=.5 F1=2/3; N: P=.5 R=1 F1=2/3; C: F1=1; weights .5/.25/.25
        assert_abs_diff_eq!(s.weighted_f1, 0.5 * 2.0 / 3.0 + 0.25 * 2.0 / 3.0 + 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weighted_f1, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(s.macro_f1, 7.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.accuracy, 0.75, epsilon = 1e-15);
        let perfect = classification_scores(&golds, &golds).unwrap();
        assert_eq!((perfect.accuracy, perfect.weighted_f1), (1.0, 1.0));
        // class C absent everywhere → contributes 0 to macro
        assert_abs_diff_eq!(perfect.macro_f1, 1.0, epsilon = 1e-15);
        let wrong: BTreeMap<String, NliLabel> = golds.keys().map(|k| (k.clone(), Contradiction)).collect();
        let golds_en: BTreeMap<String, NliLabel> = golds.keys().map(|k| (k.clone(), Entailment)).collect();
        assert_eq!(classification_scores(&wrong, &golds_en).unwrap().weighted_f1, 0.0);
        assert!(classification_scores(&BTreeMap::new(), &BTreeMap::new()).is_err());
    }

    #[test]
    fn absent_class_counts_zero_in_macro() {
        let golds: BTreeMap<String, NliLabel> = [("a".to_string(), Entailment), ("b".to_string(), Neutral)].into();
        let s = classification_scores(&golds, &golds).unwrap();
        assert_abs_diff_eq!(s.macro_f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weighted_f1, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dcor_examples() {
        let x = [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6], [0.4, 0.4, 0.2]];
        let uniform = [[1.0 / 3.0; 3]; 4];
        assert_eq!(distance_correlation_rows(&x, &uniform).unwrap(), 0.0);
        assert_abs_diff_eq!(distance_correlation_rows(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(distance_correlation_rows(&x, &x).unwrap(), dcor_oracle(&x, &x), epsilon = 1e-12);
        assert_eq!(distance_correlation_rows(&x, &x[..3]), Err(MetricError::RowCount(4, 3)));
        assert!(distance_correlation_rows(&x[..1], &x[..1]).is_err());
    }

    #[test]
    fn dcor_large_matrix_matches_oracle() {
        // more rows than one parallel block
        let x: Vec<[f64; 3]> = (0..150)
            .map(|i| {
                let a = ((i * 37) % 101) as f64 + 1.0;
                let b = ((i * 53) % 97) as f64 + 1.0;
                let c = ((i * 11) % 89) as f64 + 1.0;
                let t = a + b + c;
                [a / t, b / t, c / t]
            })
            .collect();
        let y: Vec<[f64; 3]> = x.iter().map(|r| [r[2], r[0], r[1] * 0.5 + 0.25]).collect();
        assert_abs_diff_eq!(distance_correlation_rows(&x, &y).unwrap(), dcor_oracle(&x, &y), epsilon = 1e-10);
    }

    #[test]
    fn pairwise_error_examples() {
        let a = DistributionMatrix::from_rows(&[one_hot(Entailment)]);
        let b = DistributionMatrix::from_rows(&[one_hot(Neutral)]);
        let e = &pairwise_errors(&a, &b).unwrap()[0];
        assert_eq!(e.abs, [1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(e.norm, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(pairwise_errors(&a, &a).unwrap()[0].norm, 0.0);
        assert_eq!(pairwise_errors(&b, &a).unwrap()[0].norm, e.norm);
    }

    fn table(rows: &[[f64; 3]]) -> BTreeMap<String, JudgmentDistribution> {
        rows.iter().enumerate().map(|(i, r)| (format!("id{i:02}"), jd(*r))).collect()
    }

    #[test]
    fn report_self_and_mismatch() {
        let t = table(&[[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]]);
        let r = dataset_report(&t, &t, &MetricConfig::default(), Some(&argmax_table(&t))).unwrap();
        assert_eq!(r.n, 3);
        assert!(r.means.kl < 1e-3 && r.means.jsd == 0.0 && r.means.tvd == 0.0);
        assert_abs_diff_eq!(r.distance_correlation, 1.0, epsilon = 1e-12);
        assert_eq!(r.classification.as_ref().unwrap().accuracy, 1.0);
        let mean_kl = r.instances.iter().map(|i| i.kl).sum::<f64>() / 3.0;
        assert_eq!(r.means.kl, mean_kl);
        let mut other = t.clone();
        other.remove("id00");
        other.insert("zz".into(), JudgmentDistribution::uniform());
        match dataset_report(&t, &other, &MetricConfig::default(), None) {
            Err(MetricError::IdMismatch { only_reference, only_candidate }) => {
                assert_eq!(only_reference, vec!["id00"]);
                assert_eq!(only_candidate, vec!["zz"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_csv_has_provenance() {
        let t = table(&[[0.8, 0.1, 0.1], [0.1, 0.8, 0.1]]);
        let mut r = dataset_report(&t, &t, &MetricConfig::default(), None).unwrap();
        r.inputs.insert("reference".into(), "abc".into());
        let csv = r.to_csv();
        assert!(csv.starts_with(&format!("# config_digest={}\n# input.reference=abc\nid,kl,jsd,tvd\n", r.config_digest)));
        assert_eq!(csv.lines().count(), 5);
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn kl_nonnegative_zero_iff_equal(p in simplex(), q in simplex()) {
            let s = SmoothingConfig { applied_to: SmoothingTarget::Both, ..SmoothingConfig::default() };
            let d = kl(&p, &q, &s);
            prop_assert!(d >= 0.0);
            prop_assert!(kl(&p, &p, &s) < 1e-15);
            let max_gap = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if max_gap > 1e-3 {
                prop_assert!(d > 0.0);
            }
        }

        #[test]
        fn jsd_tvd_metric_properties(p in simplex(), q in simplex(), r in simplex()) {
            prop_assert_eq!(jsd(&p, &q), jsd(&q, &p));
            for v in [jsd(&p, &q), tvd(&p, &q)] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(jsd(&p, &r) <= jsd(&p, &q) + jsd(&q, &r) + 1e-12);
            prop_assert!(tvd(&p, &r) <= tvd(&p, &q) + tvd(&q, &r) + 1e-12);
        }

        #[test]
        fn cross_entropy_decomposes(p in simplex(), q in simplex(), both in any::<bool>()) {
            let s = SmoothingConfig {
                applied_to: if both { SmoothingTarget::Both } else { SmoothingTarget::QOnly },
                ..SmoothingConfig::default()
            };
            let ce = soft_cross_entropy(&p, &q, &s);
            prop_assert!((ce - smoothed_entropy(&p, &s) - kl(&p, &q, &s)).abs() < 1e-9);
        }

        #[test]
        fn dcor_matches_oracle_and_invariances(
            x in proptest::collection::vec(simplex(), 2..12),
            seed in proptest::collection::vec(simplex(), 12),
            shift in proptest::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            let n = x.len();
            let xr: Vec<[f64; 3]> = x.iter().map(|d| d.probs()).collect();
            let yr: Vec<[f64; 3]> = seed[..n].iter().map(|d| d.probs()).collect();
            let got = distance_correlation_rows(&xr, &yr).unwrap();
            prop_assert!((0.0..=1.0).contains(&got));
            prop_assert!((got - dcor_oracle(&xr, &yr)).abs() < 1e-10);
            let shifted: Vec<[f64; 3]> = xr.iter().map(|r| [r[0] + shift[0], r[1] + shift[1], r[2] + shift[2]]).collect();
            prop_assert!((distance_correlation_rows(&shifted, &yr).unwrap() - got).abs() < 1e-10);
            let (s, c) = angle.sin_cos();
            let rotated: Vec<[f64; 3]> = xr.iter().map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]]).collect();
            prop_assert!((distance_correlation_rows(&rotated, &yr).unwrap() - got).abs() < 1e-10);
        }
    }
}
