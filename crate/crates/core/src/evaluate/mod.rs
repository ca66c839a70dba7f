//! Metric suite for uncertainty scores against binary correctness labels.
//!
//! Labels follow the instance-file convention: 1 = correct, 0 = wrong.
//! Scores are uncertainties, so the "positive" class for ranking metrics is
//! the wrong instances and higher scores should mean more errors.

mod lrt;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

pub use lrt::{chi2_1_sf, fit_logistic, lrt_q_vs_qu, LogisticFit, LrtResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cpc_bins: usize,
    pub ece_bins: usize,
    pub dev_fraction: f64,
    pub fpr_levels: Vec<f64>,
    pub combined_weights: [f64; 3],
    pub rng_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cpc_bins: 50,
            ece_bins: 15,
            dev_fraction: 0.05,
            fpr_levels: vec![0.10, 0.01],
            combined_weights: [1.0, 1.0, 1.0],
            rng_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cpc_bins < 2 {
            return Err(validation(format!("cpc_bins must be >= 2, got {}", self.cpc_bins)));
        }
        if self.ece_bins < 1 {
            return Err(validation("ece_bins must be >= 1"));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(validation(format!("dev_fraction must be in (0, 1), got {}", self.dev_fraction)));
        }
        if let Some(l) = self.fpr_levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(validation(format!("FPR level {l} is not in (0, 1)")));
        }
        if self.combined_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(validation("combined weights must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    /// Largest score in the bin.
    pub upper: f64,
    /// Fraction of wrong instances in the bin.
    pub error_rate: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub bins: Vec<ReliabilityBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_eval: usize,
    pub n_dev: usize,
    pub auroc: f64,
    /// Keyed by the FPR level as written in the config.
    pub tpr_at_fpr: BTreeMap<String, f64>,
    /// `None` when either bin coordinate has zero variance.
    pub cpc: Option<f64>,
    pub cpc_bins: usize,
    /// `None` when the dev scores are constant, so min-max scaling is
    /// undefined.
    pub ece: Option<f64>,
    pub ece_bins: usize,
    pub aurac: f64,
    pub pearson_quality: Option<f64>,
    /// `None` when CPC or ECE is undefined.
    pub combined: Option<f64>,
    pub curve: ReliabilityCurve,
    pub lrt: Option<LrtResult>,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Structural(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(validation(format!("score {i} is NaN")));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(validation(format!("label {i} is not 0 or 1")));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let correct = labels.iter().filter(|&&l| l == 1).count();
    (labels.len() - correct, correct)
}

fn require_both_classes(labels: &[u8]) -> Result<(usize, usize)> {
    let (wrong, correct) = class_counts(labels);
    if wrong == 0 || correct == 0 {
        return Err(validation(format!(
            "both classes are required ({wrong} wrong, {correct} correct)"
        )));
    }
    Ok((wrong, correct))
}

/// Indices sorted by score, ties kept in input order.
fn order_by_score(scores: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    idx
}

/// Consecutive runs of equal scores in `order`.
fn tie_groups<'a>(scores: &'a [f64], order: &'a [usize]) -> impl Iterator<Item = &'a [usize]> + 'a {
    order.chunk_by(move |&a, &b| scores[a] == scores[b])
}

/// Probability that a random wrong instance outscores a random correct one,
/// ties counted as one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (wrong, correct) = require_both_classes(labels)?;
    let order = order_by_score(scores, false);
    // twice the Mann–Whitney count, kept integral
    let mut doubled: u128 = 0;
    let mut correct_below: u128 = 0;
    for group in tie_groups(scores, &order) {
        let c = group.iter().filter(|&&i| labels[i] == 1).count() as u128;
        let w = group.len() as u128 - c;
        doubled += 2 * w * correct_below + w * c;
        correct_below += c;
    }
    Ok(doubled as f64 / (2.0 * wrong as f64 * correct as f64))
}

/// ROC vertices `(fpr, tpr)` from the highest threshold down; tied scores
/// form a single straight segment.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    check_inputs(scores, labels)?;
    let (wrong, correct) = require_both_classes(labels)?;
    let order = order_by_score(scores, true);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in tie_groups(scores, &order) {
        let c = group.iter().filter(|&&i| labels[i] == 1).count();
        fp += c;
        tp += group.len() - c;
        points.push((fp as f64 / correct as f64, tp as f64 / wrong as f64));
    }
    Ok(points)
}

/// Highest TPR reachable at FPR ≤ `level`, interpolating along the ROC so
/// that tied scores behave like a randomized threshold.
pub fn tpr_at_fpr(scores: &[f64], labels: &[u8], level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(validation(format!("FPR level must be in (0, 1), got {level}")));
    }
    let points = roc_points(scores, labels)?;
    let mut best: f64 = 0.0;
    for pair in points.windows(2) {
        let ((f0, t0), (f1, t1)) = (pair[0], pair[1]);
        if f1 <= level {
            best = best.max(t1);
        } else if f0 <= level {
            // f0 <= level < f1, so the segment has positive width
            best = best.max(t0 + (t1 - t0) * (level - f0) / (f1 - f0));
        }
    }
    Ok(best)
}

/// Sizes of `bins` contiguous groups over `n` items, larger groups first.
fn bin_sizes(n: usize, bins: usize) -> impl Iterator<Item = usize> {
    let (base, rem) = (n / bins, n % bins);
    (0..bins).map(move |j| base + usize::from(j < rem))
}

/// Equal-count bins over instances sorted by ascending score.
pub fn reliability_curve(scores: &[f64], labels: &[u8], bins: usize) -> Result<ReliabilityCurve> {
    check_inputs(scores, labels)?;
    if bins == 0 {
        return Err(validation("need at least one bin"));
    }
    if scores.len() < bins {
        return Err(validation(format!("{} instances cannot fill {bins} bins", scores.len())));
    }
    let order = order_by_score(scores, false);
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for size in bin_sizes(scores.len(), bins) {
        let chunk = &order[start..start + size];
        start += size;
        let errors = chunk.iter().filter(|&&i| labels[i] == 0).count();
        out.push(ReliabilityBin {
            upper: scores[*chunk.last().expect("bins are nonempty")],
            error_rate: errors as f64 / size as f64,
            count: size,
        });
    }
    Ok(ReliabilityCurve { bins: out })
}

/// Pearson correlation, `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between bin upper scores and bin error rates.
pub fn cpc(curve: &ReliabilityCurve) -> Option<f64> {
    let v: Vec<f64> = curve.bins.iter().map(|b| b.upper).collect();
    let r: Vec<f64> = curve.bins.iter().map(|b| b.error_rate).collect();
    pearson(&v, &r)
}

/// Maps eval scores into `[0, 1]` using the min/max of unlabeled dev scores.
pub fn minmax_scale(scores: &[f64], dev_scores: &[f64]) -> Result<Vec<f64>> {
    if dev_scores.is_empty() {
        return Err(validation("min-max scaling needs a nonempty dev set"));
    }
    let lo = dev_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = dev_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(validation(format!("dev scores are degenerate (min = max = {lo})")));
    }
    Ok(scores.iter().map(|s| ((s - lo) / (hi - lo)).clamp(0.0, 1.0)).collect())
}

/// Expected calibration error of min-max scaled scores as error-probability
/// estimates, over equal-count bins.
pub fn ece_minmax(scores: &[f64], labels: &[u8], dev_scores: &[f64], bins: usize) -> Result<f64> {
    check_inputs(scores, labels)?;
    let scaled = minmax_scale(scores, dev_scores)?;
    ece_scaled(&scaled, labels, bins)
}

/// ECE for scores that are already probabilities of error.
pub fn ece_scaled(scaled: &[f64], labels: &[u8], bins: usize) -> Result<f64> {
    check_inputs(scaled, labels)?;
    if bins == 0 || scaled.len() < bins {
        return Err(validation(format!("{} instances cannot fill {bins} bins", scaled.len())));
    }
    let n = scaled.len() as f64;
    let order = order_by_score(scaled, false);
    let mut ece = 0.0;
    let mut start = 0;
    for size in bin_sizes(scaled.len(), bins) {
        let chunk = &order[start..start + size];
        start += size;
        let err = chunk.iter().filter(|&&i| labels[i] == 0).count() as f64 / size as f64;
        let conf = chunk.iter().map(|&i| scaled[i]).sum::<f64>() / size as f64;
        ece += size as f64 / n * (err - conf).abs();
    }
    Ok(ece)
}

/// Accuracy of the retained set after rejecting the `i` highest-score
/// instances, for `i = 0..N`.
pub fn rejection_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(validation("rejection curve needs at least one instance"));
    }
    let order = order_by_score(scores, true);
    let n = order.len();
    // correct counts over order[i..]
    let mut suffix = vec![0usize; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + usize::from(labels[order[i]] == 1);
    }
    Ok((0..n).map(|i| suffix[i] as f64 / (n - i) as f64).collect())
}

/// Trapezoidal area under the rejection-accuracy curve on `[0, 1]`; the
/// point at full rejection repeats the last retained accuracy.
pub fn aurac(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let acc = rejection_curve(scores, labels)?;
    let n = acc.len();
    let mut area = 0.0;
    for i in 0..n {
        let next = if i + 1 < n { acc[i + 1] } else { acc[n - 1] };
        area += 0.5 * (acc[i] + next);
    }
    Ok(area / n as f64)
}

/// Correlation between scores and negated quality.
pub fn pearson_quality(scores: &[f64], qualities: &[f64]) -> Result<Option<f64>> {
    if scores.len() != qualities.len() {
        return Err(Error::Structural(format!(
            "{} scores but {} quality values",
            scores.len(),
            qualities.len()
        )));
    }
    let neg: Vec<f64> = qualities.iter().map(|q| -q).collect();
    Ok(pearson(scores, &neg))
}

pub fn combined_score(auroc: f64, cpc: f64, ece: f64, weights: [f64; 3]) -> f64 {
    weights[0] * auroc + weights[1] * cpc - weights[2] * ece
}

/// Formats an FPR level as a stable report key.
pub fn fpr_key(level: f64) -> String {
    format!("{level}")
}

/// Every metric on an eval set; `dev_scores` are only used for min-max
/// scaling.
pub fn evaluate(
    scores: &[f64],
    labels: &[u8],
    dev_scores: &[f64],
    qualities: Option<&[f64]>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    check_inputs(scores, labels)?;
    let n = scores.len();
    let cpc_bins = config.cpc_bins.min(n);
    let ece_bins = config.ece_bins.min(n);
    if cpc_bins < config.cpc_bins || ece_bins < config.ece_bins {
        log::warn!(
            "{n} eval instances: using {cpc_bins} CPC bins and {ece_bins} ECE bins instead of {} and {}",
            config.cpc_bins,
            config.ece_bins
        );
    }
    let auroc_v = auroc(scores, labels)?;
    let mut tpr = BTreeMap::new();
    for &level in &config.fpr_levels {
        tpr.insert(fpr_key(level), tpr_at_fpr(scores, labels, level)?);
    }
    let curve = reliability_curve(scores, labels, cpc_bins)?;
    let cpc_v = cpc(&curve);
    let degenerate_dev = dev_scores.first().is_some_and(|&d0| dev_scores.iter().all(|&d| d == d0));
    let ece = if degenerate_dev {
        log::warn!("dev scores are constant; ECE is undefined");
        None
    } else {
        Some(ece_minmax(scores, labels, dev_scores, ece_bins)?)
    };
    let aurac_v = aurac(scores, labels)?;
    let pearson_q = match qualities {
        Some(q) => pearson_quality(scores, q)?,
        None => None,
    };
    let combined = cpc_v.zip(ece).map(|(c, e)| combined_score(auroc_v, c, e, config.combined_weights));
    Ok(EvalReport {
        n_eval: n,
        n_dev: dev_scores.len(),
        auroc: auroc_v,
        tpr_at_fpr: tpr,
        cpc: cpc_v,
        cpc_bins,
        ece,
        ece_bins,
        aurac: aurac_v,
        pearson_quality: pearson_q,
        combined,
        curve,
        lrt: None,
    })
}
