//! Synthetic generators and brute-force checks.
//!
//! Embeddings follow a mixture-of-modes model: a response is drawn from
//! mode `j` with probability `w_j`, then from that mode's response profile,
//! and embedded as `normalize(μ_j + σ·z)` with `z` standard normal. Each
//! sampled response carries `p = w_j · profile_j(y)`, the mass of the exact
//! (mode, response) outcome under the generating distribution, so the mean
//! incoherence of a sample is an unbiased estimate of that distribution's
//! quadratic entropy.
//!
//! All randomness comes from ChaCha20 streams keyed by `(seed, stream)`, see
//! [`stream_rng`].

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::ingest::InstanceRecord;
use crate::kernel::{bounded_difference_constant, umpire_score, KernelConfig, ResponseSample};
use crate::linalg::SymMatrix;

pub const WEIGHT_TOLERANCE: f64 = 1e-12;
pub const DIRECTION_TOLERANCE: f64 = 1e-9;

/// Independent generator for one `(seed, stream)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_distribution(probs: &[f64], what: &str) -> Result<()> {
    if probs.is_empty() {
        return Err(validation(format!("{what} is empty")));
    }
    if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(validation(format!("{what}[{i}] = {} is not a probability", probs[i])));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(validation(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

fn unit_normalize(v: &mut [f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numerical(format!("cannot normalize vector of norm {norm}")));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

pub fn random_unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if unit_normalize(&mut v).is_ok() {
            return v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub mode_directions: Vec<Vec<f64>>,
    /// Isotropic noise scale added before renormalization.
    pub within_sigma: f64,
    /// One distribution over response identities per mode.
    pub prob_profiles: Vec<Vec<f64>>,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let m = self.weights.len();
        check_distribution(&self.weights, "weights")?;
        if self.mode_directions.len() != m || self.prob_profiles.len() != m {
            return Err(validation(format!(
                "{m} weights but {} mode_directions and {} prob_profiles",
                self.mode_directions.len(),
                self.prob_profiles.len()
            )));
        }
        let d = self.mode_directions[0].len();
        if d == 0 {
            return Err(validation("mode_directions must be nonempty vectors"));
        }
        for (j, mu) in self.mode_directions.iter().enumerate() {
            if mu.len() != d {
                return Err(validation(format!(
                    "mode_directions[{j}] has dimension {}, expected {d}",
                    mu.len()
                )));
            }
            let norm = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= DIRECTION_TOLERANCE) {
                return Err(validation(format!("mode_directions[{j}] has norm {norm}")));
            }
        }
        if !(self.within_sigma >= 0.0 && self.within_sigma.is_finite()) {
            return Err(validation(format!("within_sigma must be >= 0, got {}", self.within_sigma)));
        }
        for (j, profile) in self.prob_profiles.iter().enumerate() {
            check_distribution(profile, &format!("prob_profiles[{j}]"))?;
            if profile.iter().any(|&p| p == 0.0) {
                return Err(validation(format!("prob_profiles[{j}] has a zero-mass response")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mode_directions.first().map_or(0, Vec::len)
    }

    /// Flattened distribution over (mode, response) outcomes with the mode
    /// map as partition.
    pub fn response_distribution(&self) -> DiscreteDist {
        let mut probs = Vec::new();
        let mut partition = Vec::new();
        for (j, (w, profile)) in self.weights.iter().zip(&self.prob_profiles).enumerate() {
            for p in profile {
                if w * p > 0.0 {
                    probs.push(w * p);
                    partition.push(j);
                }
            }
        }
        DiscreteDist { probs, partition: Some(partition) }
    }

    /// `Σ_j w_j (μ_j − μ̄)(μ_j − μ̄)ᵀ`.
    pub fn between_covariance(&self) -> SymMatrix {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (w, mu) in self.weights.iter().zip(&self.mode_directions) {
            for (m, x) in mean.iter_mut().zip(mu) {
                *m += w * x;
            }
        }
        let mut data = vec![0.0; d * d];
        for (w, mu) in self.weights.iter().zip(&self.mode_directions) {
            let c: Vec<f64> = mu.iter().zip(&mean).map(|(x, m)| x - m).collect();
            for a in 0..d {
                for b in 0..d {
                    data[a * d + b] += w * c[a] * c[b];
                }
            }
        }
        symmetrize(d, data)
    }

    /// `σ²·I + Σ_between`, using pre-normalization moments.
    pub fn mixture_covariance(&self) -> SymMatrix {
        self.between_covariance().shifted(self.within_sigma * self.within_sigma)
    }
}

fn symmetrize(d: usize, mut data: Vec<f64>) -> SymMatrix {
    for a in 0..d {
        for b in (a + 1)..d {
            let v = 0.5 * (data[a * d + b] + data[b * d + a]);
            data[a * d + b] = v;
            data[b * d + a] = v;
        }
    }
    SymMatrix::from_row_major(d, data).expect("symmetric by construction")
}

/// A distribution over indexed outcomes, optionally grouped into cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    pub probs: Vec<f64>,
    /// `partition[y]` is the cell of outcome `y`.
    pub partition: Option<Vec<usize>>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let dist = Self { probs, partition: None };
        dist.validate()?;
        Ok(dist)
    }

    pub fn with_partition(mut self, partition: Vec<usize>) -> Self {
        self.partition = Some(partition);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_distribution(&self.probs, "probs")?;
        if self.probs.iter().any(|&p| p == 0.0) {
            return Err(validation("outcome probabilities must be positive"));
        }
        Ok(())
    }

    /// Flat Dirichlet draw over `n` outcomes.
    pub fn random(rng: &mut impl Rng, n: usize) -> Self {
        let mut probs: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1).max(1e-300)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self { probs, partition: None }
    }

    /// Summed mass of each partition cell.
    pub fn cell_masses(&self) -> Result<Vec<f64>> {
        let partition = self
            .partition
            .as_ref()
            .ok_or_else(|| validation("distribution has no partition"))?;
        if partition.len() != self.probs.len() {
            return Err(validation(format!(
                "partition covers {} outcomes but the distribution has {}",
                partition.len(),
                self.probs.len()
            )));
        }
        let cells = partition.iter().max().map_or(0, |m| m + 1);
        let mut w = vec![0.0; cells];
        for (p, &c) in self.probs.iter().zip(partition) {
            w[c] += p;
        }
        Ok(w)
    }

    /// Draws an outcome index.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        WeightedIndex::new(&self.probs).expect("validated weights").sample(rng)
    }
}

/// `1 − Σ p_y²`.
pub fn h2_exact(dist: &DiscreteDist) -> f64 {
    1.0 - dist.probs.iter().map(|p| p * p).sum::<f64>()
}

/// `1 − Σ_j w_j²` over partition cells.
pub fn h2_coarsened(dist: &DiscreteDist) -> Result<f64> {
    Ok(1.0 - dist.cell_masses()?.iter().map(|w| w * w).sum::<f64>())
}

/// `(max_j w_j, 1 − H2)`; the first is never below the second.
pub fn dominant_mode_bound(dist: &DiscreteDist) -> Result<(f64, f64)> {
    let w_max = dist.cell_masses()?.into_iter().fold(0.0, f64::max);
    let lower = 1.0 - h2_exact(dist);
    if w_max < lower - WEIGHT_TOLERANCE {
        return Err(Error::Numerical(format!(
            "dominant-mode bound violated: w_max = {w_max} < {lower}"
        )));
    }
    Ok((w_max, lower))
}

/// Smallest coarsened quadratic entropy of any distribution with at least
/// `r` cells of mass at least `beta`.
pub fn many_modes_bound(r: usize, beta: f64) -> Result<f64> {
    if r < 2 {
        return Err(validation(format!("r must be >= 2, got {r}")));
    }
    if !(beta >= 0.0) || r as f64 * beta > 1.0 + WEIGHT_TOLERANCE {
        return Err(validation(format!("need beta >= 0 and r·beta <= 1 (r = {r}, beta = {beta})")));
    }
    let rest = (r - 1) as f64 * beta;
    Ok(1.0 - (1.0 - rest).powi(2) - (r - 1) as f64 * beta * beta)
}

/// Mean of `1 − p_y` over `k` draws `y` from `dist`.
pub fn sample_h2_estimate(dist: &DiscreteDist, k: usize, rng: &mut impl Rng) -> f64 {
    let index = WeightedIndex::new(&dist.probs).expect("validated weights");
    (0..k).map(|_| 1.0 - dist.probs[index.sample(rng)]).sum::<f64>() / k as f64
}

fn draw_response(spec: &MixtureSpec, modes: &WeightedIndex<f64>, profiles: &[WeightedIndex<f64>], rng: &mut impl Rng) -> ResponseSample {
    let j = modes.sample(rng);
    let y = profiles[j].sample(rng);
    embed_response(spec, j, y, rng)
}

fn embed_response(spec: &MixtureSpec, j: usize, y: usize, rng: &mut impl Rng) -> ResponseSample {
    let mu = &spec.mode_directions[j];
    let mut embedding: Vec<f64> = mu
        .iter()
        .map(|m| m + spec.within_sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    if unit_normalize(&mut embedding).is_err() {
        embedding.clone_from(mu);
    }
    let p = spec.weights[j] * spec.prob_profiles[j][y];
    let logp = p.ln();
    let mut sample = ResponseSample::new(embedding, logp).with_tokens(1).with_cluster(j as i64);
    sample.token_logprobs = Some(vec![logp]);
    sample.text = Some(format!("mode{j}-resp{y}"));
    sample
}

/// Draws `k` responses plus a greedy response from `spec`.
pub fn sample_with(spec: &MixtureSpec, k: usize, id: impl Into<String>, rng: &mut impl Rng) -> Result<InstanceRecord> {
    if k == 0 {
        return Err(validation("k must be >= 1"));
    }
    spec.validate()?;
    let modes = WeightedIndex::new(&spec.weights).map_err(|e| validation(e.to_string()))?;
    let profiles: Vec<WeightedIndex<f64>> = spec
        .prob_profiles
        .iter()
        .map(|p| WeightedIndex::new(p).map_err(|e| validation(e.to_string())))
        .collect::<Result<_>>()?;
    let samples = (0..k).map(|_| draw_response(spec, &modes, &profiles, rng)).collect();
    // greedy decoding returns the most probable outcome, first on ties
    let (mut best, mut best_p) = ((0, 0), f64::NEG_INFINITY);
    for (j, profile) in spec.prob_profiles.iter().enumerate() {
        for (y, p) in profile.iter().enumerate() {
            if spec.weights[j] * p > best_p {
                best_p = spec.weights[j] * p;
                best = (j, y);
            }
        }
    }
    let mut record = InstanceRecord::new(id, samples);
    record.greedy = Some(embed_response(spec, best.0, best.1, rng));
    Ok(record)
}

pub fn sample_instance(spec: &MixtureSpec, k: usize, seed: u64) -> Result<InstanceRecord> {
    sample_with(spec, k, format!("synth-{seed}"), &mut stream_rng(seed, 0))
}

fn psd_violation(m: &SymMatrix) -> Option<f64> {
    let eig = m.eigenvalues();
    let scale = eig.iter().fold(1.0_f64, |a, e| a.max(e.abs()));
    eig.into_iter().find(|&e| e < -1e-12 * scale)
}

/// `(det(Σ_mix,a + εI), det(Σ_mix,b + εI))` for `b` whose between-mode
/// covariance dominates that of `a`.
pub fn population_volume_monotonicity(a: &MixtureSpec, b: &MixtureSpec, epsilon: f64) -> Result<(f64, f64)> {
    a.validate()?;
    b.validate()?;
    if !(epsilon > 0.0) {
        return Err(validation(format!("epsilon must be positive, got {epsilon}")));
    }
    if a.dim() != b.dim() {
        return Err(validation(format!("dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    if b.within_sigma < a.within_sigma {
        return Err(validation(format!(
            "within_sigma decreases from {} to {}",
            a.within_sigma, b.within_sigma
        )));
    }
    let ba = a.between_covariance();
    let bb = b.between_covariance();
    let d = a.dim();
    let diff: Vec<f64> = bb.as_slice().iter().zip(ba.as_slice()).map(|(x, y)| x - y).collect();
    if let Some(e) = psd_violation(&symmetrize(d, diff)) {
        return Err(validation(format!(
            "between-mode covariance of b does not dominate a (eigenvalue {e} of the difference)"
        )));
    }
    let det_a = a.mixture_covariance().shifted(epsilon).logdet_spd()?.exp();
    let det_b = b.mixture_covariance().shifted(epsilon).logdet_spd()?.exp();
    if det_b < det_a - 1e-12 {
        return Err(Error::Numerical(format!("det_b = {det_b} < det_a = {det_a}")));
    }
    Ok((det_a, det_b))
}

/// Three-sigma binomial slack around a bound, capped at probability one.
pub fn binomial_slack(bound: f64, trials: usize) -> f64 {
    let b = bound.clamp(0.0, 1.0);
    3.0 * (b * (1.0 - b) / trials as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationResult {
    pub mean: f64,
    pub empirical_tail: f64,
    /// `2·exp(−2kη²/L²)`.
    pub bound: f64,
    pub slack: f64,
    pub lipschitz: f64,
    pub trials: usize,
}

impl ConcentrationResult {
    pub fn holds(&self) -> bool {
        self.empirical_tail <= self.bound + self.slack
    }
}

fn trial_scores(spec: &MixtureSpec, k: usize, trials: usize, config: &KernelConfig, seed: u64, stride: u64, offset: u64) -> Result<Vec<f64>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t * stride + offset);
            let rec = sample_with(spec, k, "trial", &mut rng)?;
            Ok(umpire_score(&rec.samples, config)?.v)
        })
        .collect()
}

/// Fraction of trials whose score deviates from the trial mean by more
/// than `eta`.
pub fn concentration_experiment(
    spec: &MixtureSpec,
    k: usize,
    trials: usize,
    eta: f64,
    config: &KernelConfig,
    seed: u64,
) -> Result<ConcentrationResult> {
    if trials < 100 {
        return Err(validation(format!("need at least 100 trials, got {trials}")));
    }
    if !(eta > 0.0) {
        return Err(validation(format!("eta must be positive, got {eta}")));
    }
    config.validate()?;
    let v = trial_scores(spec, k, trials, config, seed, 1, 0)?;
    let mean = v.iter().sum::<f64>() / trials as f64;
    let tail = v.iter().filter(|x| (*x - mean).abs() > eta).count() as f64 / trials as f64;
    let lipschitz = bounded_difference_constant(config);
    let bound = 2.0 * (-2.0 * k as f64 * eta * eta / (lipschitz * lipschitz)).exp();
    Ok(ConcentrationResult {
        mean,
        empirical_tail: tail,
        bound,
        slack: binomial_slack(bound, trials),
        lipschitz,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisrankingResult {
    /// Mean score of `a` minus mean score of `b`.
    pub gap: f64,
    pub misrank_rate: f64,
    /// `4·exp(−kΔ²/(2L²))`.
    pub bound: f64,
    pub slack: f64,
}

impl MisrankingResult {
    pub fn holds(&self) -> bool {
        self.misrank_rate <= self.bound + self.slack
    }
}

/// Paired trials estimating `P(V_a ≤ V_b)` when `a` has the larger mean.
pub fn misranking_experiment(
    a: &MixtureSpec,
    b: &MixtureSpec,
    k: usize,
    trials: usize,
    config: &KernelConfig,
    seed: u64,
) -> Result<MisrankingResult> {
    if trials < 100 {
        return Err(validation(format!("need at least 100 trials, got {trials}")));
    }
    config.validate()?;
    let va = trial_scores(a, k, trials, config, seed, 2, 0)?;
    let vb = trial_scores(b, k, trials, config, seed, 2, 1)?;
    let n = trials as f64;
    let gap = (va.iter().sum::<f64>() - vb.iter().sum::<f64>()) / n;
    if !(gap > 0.0) {
        return Err(validation(format!("spec a must have the larger mean score (gap {gap})")));
    }
    let misrank = va.iter().zip(&vb).filter(|(x, y)| x <= y).count() as f64 / n;
    let l = bounded_difference_constant(config);
    let bound = 4.0 * (-(k as f64) * gap * gap / (2.0 * l * l)).exp();
    Ok(MisrankingResult { gap, misrank_rate: misrank, bound, slack: binomial_slack(bound, trials) })
}

/// Per-group generator for planted benchmarks: `modes` random directions
/// with equal weight, each sharing one response profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub modes: usize,
    pub within_sigma: f64,
    pub profile: Vec<f64>,
}

impl GroupSpec {
    fn validate(&self, name: &str) -> Result<()> {
        if self.modes == 0 {
            return Err(validation(format!("{name}.modes must be >= 1")));
        }
        if !(self.within_sigma >= 0.0 && self.within_sigma.is_finite()) {
            return Err(validation(format!("{name}.within_sigma must be >= 0")));
        }
        check_distribution(&self.profile, &format!("{name}.profile"))
    }

    fn mixture(&self, dim: usize, rng: &mut impl Rng) -> MixtureSpec {
        let w = 1.0 / self.modes as f64;
        MixtureSpec {
            weights: vec![w; self.modes],
            mode_directions: (0..self.modes).map(|_| random_unit_vector(rng, dim)).collect(),
            within_sigma: self.within_sigma,
            prob_profiles: vec![self.profile.clone(); self.modes],
        }
    }
}

/// Labeled benchmark: correct instances have one semantic mode and
/// probable responses, wrong instances spread over several modes with
/// improbable responses, and a lexical-variance share of the wrong
/// instances keeps one mode but spreads probability mass over many
/// paraphrases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSpec {
    pub dim: usize,
    pub k: usize,
    /// Share of correct instances when only a total count is given.
    pub correct_fraction: f64,
    /// Share of wrong instances drawn from the lexical-variance group.
    pub lexical_fraction: f64,
    pub correct: GroupSpec,
    pub wrong: GroupSpec,
    pub lexical: GroupSpec,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            k: 20,
            correct_fraction: 0.7,
            lexical_fraction: 0.25,
            correct: GroupSpec { modes: 1, within_sigma: 0.03, profile: vec![0.5, 0.5] },
            wrong: GroupSpec { modes: 4, within_sigma: 0.03, profile: vec![0.4, 0.3, 0.3] },
            lexical: GroupSpec { modes: 1, within_sigma: 0.03, profile: vec![0.0625; 16] },
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.k == 0 {
            return Err(validation("dim and k must be >= 1"));
        }
        for (name, f) in [("correct_fraction", self.correct_fraction), ("lexical_fraction", self.lexical_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(validation(format!("{name} must be in [0, 1], got {f}")));
            }
        }
        self.correct.validate("correct")?;
        self.wrong.validate("wrong")?;
        self.lexical.validate("lexical")
    }

    pub fn split_counts(&self, n: usize) -> (usize, usize) {
        let n_correct = (n as f64 * self.correct_fraction).round() as usize;
        (n_correct, n - n_correct)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedGroup {
    Correct,
    Wrong,
    Lexical,
}

impl PlantedGroup {
    pub fn prefix(self) -> &'static str {
        match self {
            Self::Correct => "correct",
            Self::Wrong => "wrong",
            Self::Lexical => "lexical",
        }
    }

    /// Recovers the group from a planted-benchmark id.
    pub fn from_id(id: &str) -> Option<Self> {
        let prefix = id.split('-').next()?;
        [Self::Correct, Self::Wrong, Self::Lexical].into_iter().find(|g| g.prefix() == prefix)
    }

    pub fn label(self) -> u8 {
        u8::from(self == Self::Correct)
    }
}

pub fn planted_benchmark(n_correct: usize, n_wrong: usize, seed: u64) -> Result<Vec<InstanceRecord>> {
    planted_benchmark_with(&PlantedSpec::default(), n_correct, n_wrong, seed)
}

/// Records in a seeded random order; ids are `<group>-<index>`.
pub fn planted_benchmark_with(spec: &PlantedSpec, n_correct: usize, n_wrong: usize, seed: u64) -> Result<Vec<InstanceRecord>> {
    spec.validate()?;
    if n_correct + n_wrong == 0 {
        return Err(validation("planted benchmark needs at least one instance"));
    }
    let n_lexical = (n_wrong as f64 * spec.lexical_fraction).round() as usize;
    let mut groups = Vec::with_capacity(n_correct + n_wrong);
    groups.extend(std::iter::repeat_n(PlantedGroup::Correct, n_correct));
    groups.extend(std::iter::repeat_n(PlantedGroup::Lexical, n_lexical));
    groups.extend(std::iter::repeat_n(PlantedGroup::Wrong, n_wrong - n_lexical));
    groups.shuffle(&mut stream_rng(seed, 0));
    groups
        .par_iter()
        .enumerate()
        .map(|(i, &group)| {
            let mut rng = stream_rng(seed, i as u64 + 1);
            let g = match group {
                PlantedGroup::Correct => &spec.correct,
                PlantedGroup::Wrong => &spec.wrong,
                PlantedGroup::Lexical => &spec.lexical,
            };
            let mixture = g.mixture(spec.dim, &mut rng);
            let mut rec = sample_with(&mixture, spec.k, format!("{}-{i:05}", group.prefix()), &mut rng)?;
            rec.label = Some(group.label());
            Ok(rec)
        })
        .collect()
}

/// What `cmd_synth` can generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthSpec {
    /// Unlabeled instances from one fixed mixture.
    Mixture { k: usize, mixture: MixtureSpec },
    Planted(PlantedSpec),
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Mixture { k, mixture } => {
                if *k == 0 {
                    return Err(validation("k must be >= 1"));
                }
                mixture.validate()
            }
            Self::Planted(p) => p.validate(),
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<InstanceRecord>> {
        self.validate()?;
        match self {
            Self::Mixture { k, mixture } => (0..n)
                .into_par_iter()
                .map(|i| sample_with(mixture, *k, format!("synth-{i:05}"), &mut stream_rng(seed, i as u64)))
                .collect(),
            Self::Planted(p) => {
                let (c, w) = p.split_counts(n);
                planted_benchmark_with(p, c, w, seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PlantedBenchmark,
    LexicalVariance,
    Concentration,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Self::PlantedBenchmark, Self::LexicalVariance, Self::Concentration];

    pub fn name(self) -> &'static str {
        match self {
            Self::PlantedBenchmark => "planted-benchmark",
            Self::LexicalVariance => "lexical-variance",
            Self::Concentration => "concentration",
        }
    }

    pub fn spec(self) -> SynthSpec {
        match self {
            Self::PlantedBenchmark => SynthSpec::Planted(PlantedSpec::default()),
            Self::LexicalVariance => SynthSpec::Planted(PlantedSpec { lexical_fraction: 1.0, ..Default::default() }),
            Self::Concentration => SynthSpec::Mixture { k: 20, mixture: concentration_mixture() },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| validation(format!("unknown preset {s:?}")))
    }
}

/// Three orthogonal modes in 16 dimensions with uneven weights.
pub fn concentration_mixture() -> MixtureSpec {
    let d = 16;
    let axis = |i: usize| (0..d).map(|j| f64::from(u8::from(i == j))).collect::<Vec<f64>>();
    MixtureSpec {
        weights: vec![0.5, 0.3, 0.2],
        mode_directions: vec![axis(0), axis(1), axis(2)],
        within_sigma: 0.1,
        prob_profiles: vec![vec![0.6, 0.4], vec![0.5, 0.3, 0.2], vec![1.0]],
    }
}

/// Covariates and labels for the nested logistic test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtSample {
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub labels: Vec<u8>,
}

/// `q ~ U(0,1)`, `u ~ N(0,1)`, `P(label = 1) = σ(b0 + b1·q + b2·u)`.
pub fn lrt_planted(n: usize, coefficients: [f64; 3], seed: u64) -> LrtSample {
    let mut rng = stream_rng(seed, 0);
    let mut out = LrtSample { q: Vec::with_capacity(n), u: Vec::with_capacity(n), labels: Vec::with_capacity(n) };
    for _ in 0..n {
        let q: f64 = rng.random();
        let u: f64 = rng.sample(StandardNormal);
        let eta = coefficients[0] + coefficients[1] * q + coefficients[2] * u;
        let p = 1.0 / (1.0 + (-eta).exp());
        out.q.push(q);
        out.u.push(u);
        out.labels.push(u8::from(rng.random::<f64>() < p));
    }
    out
}
