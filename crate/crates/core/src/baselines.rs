//! Comparison scores computable from the same instance files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::ingest::InstanceRecord;
use crate::kernel::ResponseSample;
use crate::linalg::{self, SymMatrix};

pub const DEFAULT_EIGEN_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Eigenscore,
    LnEntropy,
    MeanTokenEntropy,
    Perplexity,
    SemanticEntropyDiscrete,
    SeqProb,
}

impl Baseline {
    pub const ALL: [Baseline; 6] = [
        Baseline::Eigenscore,
        Baseline::LnEntropy,
        Baseline::MeanTokenEntropy,
        Baseline::Perplexity,
        Baseline::SemanticEntropyDiscrete,
        Baseline::SeqProb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Eigenscore => "eigenscore",
            Baseline::LnEntropy => "ln_entropy",
            Baseline::MeanTokenEntropy => "mean_token_entropy",
            Baseline::Perplexity => "perplexity",
            Baseline::SemanticEntropyDiscrete => "semantic_entropy_discrete",
            Baseline::SeqProb => "seq_prob",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| validation(format!("unknown baseline '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSelection {
    pub enabled: BTreeSet<Baseline>,
    pub eigen_jitter: f64,
}

impl Default for BaselineSelection {
    fn default() -> Self {
        Self { enabled: BTreeSet::new(), eigen_jitter: DEFAULT_EIGEN_JITTER }
    }
}

impl BaselineSelection {
    /// Parses a comma-separated list; `all` enables everything, empty or
    /// `none` disables everything.
    pub fn parse_list(list: &str, eigen_jitter: f64) -> Result<Self> {
        let list = list.trim();
        let enabled = match list {
            "" | "none" => BTreeSet::new(),
            "all" => Baseline::ALL.into_iter().collect(),
            _ => list.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
        };
        let sel = Self { enabled, eigen_jitter };
        sel.validate()?;
        Ok(sel)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eigen_jitter > 0.0 && self.eigen_jitter.is_finite()) {
            return Err(validation(format!("eigen_jitter must be positive, got {}", self.eigen_jitter)));
        }
        Ok(())
    }

    /// Column names in output order.
    pub fn names(&self) -> Vec<&'static str> {
        self.enabled.iter().map(|b| b.name()).collect()
    }

    /// Every enabled baseline for one record. Any enabled baseline that the
    /// record cannot support is an error.
    pub fn compute(&self, record: &InstanceRecord) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        for &b in &self.enabled {
            let value = match b {
                Baseline::LnEntropy => ln_entropy(&record.samples),
                Baseline::Eigenscore => eigenscore(&record.samples, self.eigen_jitter),
                Baseline::SemanticEntropyDiscrete => semantic_entropy_discrete(&record.samples),
                Baseline::SeqProb | Baseline::Perplexity | Baseline::MeanTokenEntropy => {
                    let greedy = record.greedy.as_ref().ok_or_else(|| {
                        validation(format!("baseline {b} needs a greedy sample"))
                    })?;
                    match b {
                        Baseline::SeqProb => Ok(-greedy.seq_logprob),
                        Baseline::Perplexity => Ok(perplexity(greedy)),
                        _ => match &greedy.token_logprobs {
                            Some(t) => mean_token_entropy(t),
                            None => Err(validation(
                                "mean_token_entropy needs per-token log-probabilities on the greedy sample",
                            )),
                        },
                    }
                }
            }
            .map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("record '{}': {m}", record.id)),
                other => other,
            })?;
            out.insert(b.name().to_string(), value);
        }
        Ok(out)
    }
}

/// Monte Carlo length-normalized entropy, `−(1/k) Σ seq_logprob_i / N_i`.
pub fn ln_entropy(samples: &[ResponseSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(validation("ln_entropy needs at least one sample"));
    }
    let mut acc = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let n = match s.token_count {
            Some(n) if n >= 1 => n,
            _ => return Err(validation(format!("sample {i} has no token count"))),
        };
        acc += s.seq_logprob / f64::from(n);
    }
    Ok(-acc / samples.len() as f64)
}

/// Mean of `log(λ + jitter)` over the eigenvalues of the centered Gram
/// matrix `Z Zᵀ / k`, computed as a jittered log-determinant.
pub fn eigenscore(samples: &[ResponseSample], jitter: f64) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        return Err(validation(format!("eigenscore needs at least 2 samples, got {k}")));
    }
    if !(jitter > 0.0) {
        return Err(validation(format!("eigenscore jitter must be positive, got {jitter}")));
    }
    let d = samples[0].embedding.len();
    if let Some(i) = samples.iter().position(|s| s.embedding.len() != d) {
        return Err(Error::Structural(format!(
            "sample {i} has dimension {} but sample 0 has {d}",
            samples[i].embedding.len()
        )));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(&s.embedding) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.embedding.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut data = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let v = linalg::dot(&centered[i], &centered[j]) / k as f64;
            data[i * k + j] = v;
            data[j * k + i] = v;
        }
    }
    let cov = SymMatrix::from_row_major(k, data)?.shifted(jitter);
    Ok(cov.logdet_spd()? / k as f64)
}

/// Shannon entropy (nats) of the empirical cluster frequencies.
pub fn semantic_entropy_discrete(samples: &[ResponseSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(validation("semantic entropy needs at least one sample"));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let c = s
            .cluster_id
            .ok_or_else(|| validation(format!("sample {i} has no cluster_id")))?;
        *counts.entry(c).or_default() += 1;
    }
    let k = samples.len() as f64;
    Ok(-counts
        .values()
        .map(|&n| {
            let p = n as f64 / k;
            p * p.ln()
        })
        .sum::<f64>())
}

/// `exp(−seq_logprob / N)`; N falls back to the per-token list length, then 1.
pub fn perplexity(greedy: &ResponseSample) -> f64 {
    let n = greedy
        .token_count
        .map(f64::from)
        .or_else(|| greedy.token_logprobs.as_ref().map(|t| t.len() as f64))
        .filter(|n| *n >= 1.0)
        .unwrap_or(1.0);
    (-greedy.seq_logprob / n).exp()
}

/// Mean negative log-probability of the realized tokens.
pub fn mean_token_entropy(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(validation("mean_token_entropy needs at least one token"));
    }
    Ok(-token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64)
}

/// `seq_prob`, `perplexity` and, when per-token data is given,
/// `mean_token_entropy` for the greedy response.
pub fn single_sample_scores(
    greedy: &ResponseSample,
    token_logprobs: Option<&[f64]>,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    out.insert(Baseline::SeqProb.name().into(), -greedy.seq_logprob);
    out.insert(Baseline::Perplexity.name().into(), perplexity(greedy));
    if let Some(t) = token_logprobs {
        out.insert(Baseline::MeanTokenEntropy.name().into(), mean_token_entropy(t)?);
    }
    Ok(out)
}
