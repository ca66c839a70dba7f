//! Semantic volume with a per-response incoherence weight.
//!
//! For `k` sampled responses with unit embeddings `Φ` and sequence
//! probabilities `p_i`, the score is
//!
//! ```text
//! V = 1/(2k) · log det(C (ΦΦᵀ + εI) C),   C = diag(exp(α (1 − p_i)))
//!   = U + α·Q
//! U = 1/(2k) · log det(ΦΦᵀ + εI)
//! Q = 1/k · Σ (1 − p_i)
//! ```
//!
//! [`umpire_score`] evaluates the decomposed form; [`umpire_direct`] forms the
//! scaled kernel explicitly and is kept as a reference path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::ingest::{shuffled_indices, InstanceRecord};
use crate::linalg::{self, EmbeddingMatrix};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Largest exponent accepted by the explicit-kernel reference path.
const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub epsilon: f64,
    pub alpha: f64,
    /// Use `p_i = exp(seq_logprob / token_count)` instead of `exp(seq_logprob)`.
    pub length_normalized: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, alpha: 1.0, length_normalized: false }
    }
}

impl KernelConfig {
    pub fn new(epsilon: f64, alpha: f64, length_normalized: bool) -> Result<Self> {
        let cfg = Self { epsilon, alpha, length_normalized };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(validation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(validation(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One sampled response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub embedding: Vec<f64>,
    /// Natural-log probability of the whole response.
    pub seq_logprob: f64,
    /// `None` when the source file did not carry a count; length
    /// normalization is then skipped for this sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<i64>,
}

impl ResponseSample {
    pub fn new(embedding: Vec<f64>, seq_logprob: f64) -> Self {
        Self {
            embedding,
            seq_logprob,
            token_count: None,
            token_logprobs: None,
            text: None,
            cluster_id: None,
        }
    }

    pub fn with_tokens(mut self, token_count: u32) -> Self {
        self.token_count = Some(token_count);
        self
    }

    pub fn with_cluster(mut self, cluster_id: i64) -> Self {
        self.cluster_id = Some(cluster_id);
        self
    }

    /// Model probability of the response, optionally length normalized.
    pub fn probability(&self, length_normalized: bool) -> f64 {
        match (length_normalized, self.token_count) {
            (true, Some(n)) => (self.seq_logprob / f64::from(n)).exp(),
            _ => self.seq_logprob.exp(),
        }
    }
}

/// Per-instance scores.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub v: f64,
    pub u: f64,
    pub q: f64,
    pub baselines: BTreeMap<String, f64>,
}

/// Label-free α together with the medians it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub median_u: f64,
    pub median_q: f64,
    pub subset_size: usize,
}

fn check_samples(samples: &[ResponseSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(validation("at least one sample is required"));
    }
    for (i, s) in samples.iter().enumerate() {
        if !(s.seq_logprob <= 0.0) {
            return Err(validation(format!(
                "sample {i} has seq_logprob {} (must be <= 0)",
                s.seq_logprob
            )));
        }
        if s.token_count == Some(0) {
            return Err(validation(format!("sample {i} has token_count 0")));
        }
    }
    Ok(())
}

fn embedding_matrix(samples: &[ResponseSample]) -> Result<EmbeddingMatrix> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.embedding.as_slice()).collect();
    EmbeddingMatrix::from_rows(&rows)
}

/// `f_i = 1 − p_i` for each sample.
pub fn incoherence_scores(samples: &[ResponseSample], config: &KernelConfig) -> Result<Vec<f64>> {
    check_samples(samples)?;
    Ok(samples
        .iter()
        .map(|s| 1.0 - s.probability(config.length_normalized))
        .collect())
}

/// `U = 1/(2k) · log det(ΦΦᵀ + εI)`.
pub fn semantic_volume(samples: &[ResponseSample], config: &KernelConfig) -> Result<f64> {
    check_samples(samples)?;
    config.validate()?;
    let phi = embedding_matrix(samples)?;
    let logdet = linalg::logdet_volume(&phi, config.epsilon)?;
    Ok(logdet / (2.0 * samples.len() as f64))
}

/// Explicit `1/(2k) · log det(C (ΦΦᵀ + εI) C)`.
pub fn umpire_direct(samples: &[ResponseSample], config: &KernelConfig) -> Result<f64> {
    config.validate()?;
    let f = incoherence_scores(samples, config)?;
    let mut scale = Vec::with_capacity(f.len());
    for (i, fi) in f.iter().enumerate() {
        let arg = config.alpha * fi;
        if arg.abs() > EXP_CLAMP {
            return Err(Error::Numerical(format!(
                "incoherence exponent {arg} for sample {i} exceeds ±{EXP_CLAMP}"
            )));
        }
        scale.push(arg.exp());
    }
    let phi = embedding_matrix(samples)?;
    // C = I leaves the kernel at ΦΦᵀ + εI, which has its own route
    let logdet = if scale.iter().all(|&c| c == 1.0) {
        linalg::logdet_volume(&phi, config.epsilon)?
    } else {
        linalg::logdet_scaled_kernel(&phi, config.epsilon, &scale)?
    };
    Ok(logdet / (2.0 * samples.len() as f64))
}

/// `V = U + α·Q`; baselines are left empty.
pub fn umpire_score(samples: &[ResponseSample], config: &KernelConfig) -> Result<ScoreBundle> {
    let u = semantic_volume(samples, config)?;
    let f = incoherence_scores(samples, config)?;
    let q = f.iter().sum::<f64>() / f.len() as f64;
    Ok(ScoreBundle { v: u + config.alpha * q, u, q, baselines: BTreeMap::new() })
}

/// α = |median U| / median Q over a seeded subset of `instances`.
///
/// Labels are never read. Returns α = 0 when the median incoherence is
/// (numerically) zero.
pub fn adaptive_alpha(
    instances: &[InstanceRecord],
    config: &KernelConfig,
    subset_fraction: f64,
    seed: u64,
) -> Result<AlphaEstimate> {
    if !(subset_fraction > 0.0 && subset_fraction <= 1.0) {
        return Err(validation(format!("subset fraction must be in (0, 1], got {subset_fraction}")));
    }
    if instances.is_empty() {
        return Err(validation("adaptive alpha needs at least one instance"));
    }
    let size = ((instances.len() as f64 * subset_fraction).round() as usize).max(1);
    let order = shuffled_indices(instances.len(), seed);
    let subset: Vec<&InstanceRecord> = order[..size].iter().map(|&i| &instances[i]).collect();
    alpha_from_subset(&subset, config)
}

pub(crate) fn alpha_from_subset(
    subset: &[&InstanceRecord],
    config: &KernelConfig,
) -> Result<AlphaEstimate> {
    if subset.is_empty() {
        return Err(validation("adaptive alpha subset is empty"));
    }
    let mut us = Vec::with_capacity(subset.len());
    let mut qs = Vec::with_capacity(subset.len());
    for rec in subset {
        let bundle = umpire_score(&rec.samples, config)?;
        us.push(bundle.u);
        qs.push(bundle.q);
    }
    let median_u = median(&us);
    let median_q = median(&qs);
    let alpha = if median_q <= 1e-12 { 0.0 } else { median_u.abs() / median_q };
    Ok(AlphaEstimate { alpha, median_u, median_q, subset_size: subset.len() })
}

/// `L = α + ½·ln(1 + 1/ε)`: how far one sample swap can move `k·V`.
pub fn bounded_difference_constant(config: &KernelConfig) -> f64 {
    config.alpha + 0.5 * (1.0 / config.epsilon).ln_1p()
}

/// Median with the even-length case averaged. Panics on empty input.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn random_samples(rng: &mut impl Rng, k: usize, d: usize) -> Vec<ResponseSample> {
        (0..k)
            .map(|_| ResponseSample::new(unit(rng, d), rng.random_range(0.001f64..1.0).ln()))
            .collect()
    }

    fn det3(m: [[f64; 3]; 3]) -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    fn record(samples: Vec<ResponseSample>) -> InstanceRecord {
        InstanceRecord::new("x", samples)
    }

    #[test]
    fn incoherence_of_certain_response_is_zero() {
        let f = incoherence_scores(&[ResponseSample::new(vec![1.0], 0.0)], &KernelConfig::default())
            .unwrap();
        assert_eq!(f, vec![0.0]);
    }

    #[test]
    fn incoherence_plain_probability() {
        let s = ResponseSample::new(vec![1.0], 0.25f64.ln());
        let f = incoherence_scores(&[s], &KernelConfig::default()).unwrap();
        assert!((f[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn incoherence_length_normalized() {
        let s = ResponseSample::new(vec![1.0], -4.0).with_tokens(4);
        let cfg = KernelConfig { length_normalized: true, ..Default::default() };
        let f = incoherence_scores(&[s.clone()], &cfg).unwrap();
        assert!((f[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        // without a token count the plain probability is used
        let bare = ResponseSample::new(vec![1.0], -4.0);
        let f = incoherence_scores(&[bare], &cfg).unwrap();
        assert!((f[0] - (1.0 - (-4.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn positive_logprob_names_sample() {
        let samples = vec![ResponseSample::new(vec![1.0], -1.0), ResponseSample::new(vec![1.0], 0.5)];
        let err = incoherence_scores(&samples, &KernelConfig::default()).unwrap_err();
        assert!(err.to_string().contains("sample 1"), "{err}");
    }

    #[test]
    fn volume_single_sample() {
        let cfg = KernelConfig { epsilon: 1e-3, ..Default::default() };
        let u = semantic_volume(&[ResponseSample::new(vec![0.0, 1.0], -1.0)], &cfg).unwrap();
        assert!((u - 0.5 * (1.0 + 1e-3f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn volume_identical_pair() {
        let eps = 1e-8;
        let cfg = KernelConfig { epsilon: eps, ..Default::default() };
        let s = ResponseSample::new(vec![0.6, 0.8], -1.0);
        let u = semantic_volume(&[s.clone(), s], &cfg).unwrap();
        let want = 0.25 * (eps * (2.0 + eps)).ln();
        assert!((u - want).abs() < 1e-7 * want.abs());
    }

    #[test]
    fn volume_matches_cofactor_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let eps = 1e-8;
        let cfg = KernelConfig { epsilon: eps, ..Default::default() };
        for _ in 0..20 {
            let samples = random_samples(&mut rng, 3, 6);
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = linalg::dot(&samples[i].embedding, &samples[j].embedding);
                }
                m[i][i] += eps;
            }
            let want = det3(m).ln() / 6.0;
            let got = semantic_volume(&samples, &cfg).unwrap();
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn direct_reduces_to_volume_without_incoherence() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let samples = random_samples(&mut rng, 4, 8);
        let cfg = KernelConfig { alpha: 0.0, ..Default::default() };
        assert_eq!(umpire_direct(&samples, &cfg).unwrap(), semantic_volume(&samples, &cfg).unwrap());

        let certain: Vec<ResponseSample> = samples
            .iter()
            .map(|s| ResponseSample::new(s.embedding.clone(), 0.0))
            .collect();
        let cfg = KernelConfig { alpha: 3.0, ..Default::default() };
        assert_eq!(umpire_direct(&certain, &cfg).unwrap(), semantic_volume(&certain, &cfg).unwrap());
    }

    #[test]
    fn direct_matches_decomposition() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let cfg = KernelConfig { alpha: 2.0, ..Default::default() };
        for _ in 0..50 {
            let samples = random_samples(&mut rng, 4, 8);
            let v = umpire_score(&samples, &cfg).unwrap().v;
            let direct = umpire_direct(&samples, &cfg).unwrap();
            assert!((v - direct).abs() <= 1e-9 * v.abs().max(1.0), "{v} vs {direct}");
        }
    }

    #[test]
    fn direct_guards_exponent_range() {
        let s = ResponseSample::new(vec![1.0], 0.5f64.ln());
        let cfg = KernelConfig { alpha: 2000.0, ..Default::default() };
        assert!(matches!(umpire_direct(&[s], &cfg), Err(Error::Numerical(_))));
    }

    #[test]
    fn certain_orthogonal_pair() {
        let cfg = KernelConfig { alpha: 5.0, ..Default::default() };
        let samples = vec![
            ResponseSample::new(vec![1.0, 0.0], 0.0),
            ResponseSample::new(vec![0.0, 1.0], 0.0),
        ];
        let b = umpire_score(&samples, &cfg).unwrap();
        assert_eq!(b.q, 0.0);
        assert!((b.v - 0.5 * (1.0 + cfg.epsilon).ln()).abs() < 1e-15);
    }

    #[test]
    fn q_is_mean_incoherence() {
        let cfg = KernelConfig { alpha: 1.0, ..Default::default() };
        let samples = vec![
            ResponseSample::new(vec![1.0, 0.0], 0.5f64.ln()),
            ResponseSample::new(vec![0.0, 1.0], 0.25f64.ln()),
        ];
        let b = umpire_score(&samples, &cfg).unwrap();
        assert!((b.q - 0.625).abs() < 1e-15);
        assert!((b.v - (b.u + 0.625)).abs() < 1e-15);
    }

    #[test]
    fn lower_probability_raises_score() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let cfg = KernelConfig { alpha: 1.5, ..Default::default() };
        for _ in 0..100 {
            let mut samples = random_samples(&mut rng, 5, 6);
            let before = umpire_score(&samples, &cfg).unwrap().v;
            let i = rng.random_range(0..5);
            samples[i].seq_logprob -= rng.random_range(0.01..2.0);
            let after = umpire_score(&samples, &cfg).unwrap().v;
            assert!(after > before);
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let cfg = KernelConfig { alpha: 2.0, ..Default::default() };
        let samples = random_samples(&mut rng, 6, 10);
        let mut rev = samples.clone();
        rev.reverse();
        let a = umpire_score(&samples, &cfg).unwrap();
        let b = umpire_score(&rev, &cfg).unwrap();
        assert!((a.u - b.u).abs() < 1e-12);
        assert!((a.q - b.q).abs() < 1e-15);
        assert!((a.v - b.v).abs() < 1e-12);
    }

    #[test]
    fn swap_moves_score_by_at_most_l_over_k() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let cfg = KernelConfig { alpha: 3.0, ..Default::default() };
        let l = bounded_difference_constant(&cfg);
        for _ in 0..1000 {
            let k = rng.random_range(2..=12);
            let d = rng.random_range(2..=12);
            let mut samples = random_samples(&mut rng, k, d);
            let before = umpire_score(&samples, &cfg).unwrap().v;
            let i = rng.random_range(0..k);
            samples[i] = random_samples(&mut rng, 1, d).pop().unwrap();
            let after = umpire_score(&samples, &cfg).unwrap().v;
            assert!((after - before).abs() <= l / k as f64 + 1e-9);
        }
    }

    #[test]
    fn adaptive_alpha_degenerate_certainty() {
        let recs: Vec<InstanceRecord> = (0..5)
            .map(|_| record(vec![ResponseSample::new(vec![1.0, 0.0], 0.0)]))
            .collect();
        let est = adaptive_alpha(&recs, &KernelConfig::default(), 1.0, 0).unwrap();
        assert_eq!(est.alpha, 0.0);
    }

    #[test]
    fn adaptive_alpha_single_instance() {
        // a sample whose p = 0.5 gives q = 0.5; construct u directly
        let s = ResponseSample::new(vec![1.0, 0.0], 0.5f64.ln());
        let cfg = KernelConfig::default();
        let rec = record(vec![s.clone(), s]);
        let b = umpire_score(&rec.samples, &cfg).unwrap();
        let est = adaptive_alpha(&[rec], &cfg, 1.0, 0).unwrap();
        assert!((est.alpha - b.u.abs() / 0.5).abs() < 1e-12);
    }

    #[test]
    fn adaptive_alpha_matches_sort_median() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let cfg = KernelConfig::default();
        let recs: Vec<InstanceRecord> = (0..100)
            .map(|_| {
                let k = rng.random_range(2..8);
                record(random_samples(&mut rng, k, 6))
            })
            .collect();
        let est = adaptive_alpha(&recs, &cfg, 1.0, 4).unwrap();
        let mut us: Vec<f64> = recs.iter().map(|r| umpire_score(&r.samples, &cfg).unwrap().u).collect();
        let mut qs: Vec<f64> = recs.iter().map(|r| umpire_score(&r.samples, &cfg).unwrap().q).collect();
        us.sort_by(|a, b| a.partial_cmp(b).unwrap());
        qs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mu = (us[49] + us[50]) / 2.0;
        let mq = (qs[49] + qs[50]) / 2.0;
        assert!((est.alpha - mu.abs() / mq).abs() < 1e-12);
    }

    #[test]
    fn adaptive_alpha_rejects_bad_fraction() {
        let recs = vec![record(vec![ResponseSample::new(vec![1.0], -1.0)])];
        assert!(adaptive_alpha(&recs, &KernelConfig::default(), 0.0, 0).is_err());
        assert!(adaptive_alpha(&[], &KernelConfig::default(), 0.5, 0).is_err());
    }

    #[test]
    fn bounded_difference_values() {
        let l = bounded_difference_constant(&KernelConfig { epsilon: 1.0, alpha: 0.0, length_normalized: false });
        assert!((l - 0.5 * 2f64.ln()).abs() < 1e-15);
        let l = bounded_difference_constant(&KernelConfig { epsilon: 1e-8, alpha: 2.0, length_normalized: false });
        assert!((l - (2.0 + 0.5 * (1.0 + 1e8f64).ln())).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for eps in [1.0, 10.0, 1e3, 1e6, 1e12] {
            let l = bounded_difference_constant(&KernelConfig { epsilon: eps, alpha: 0.0, length_normalized: false });
            assert!(l > 0.0 && l < prev);
            prev = l;
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
