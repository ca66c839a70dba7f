//! End-to-end runs over datasets and score tables.

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineSelection;
use crate::error::{validation, Error, Result};
use crate::evaluate::{evaluate, lrt_q_vs_qu, EvalConfig, EvalReport};
use crate::ingest::{split_indices, Dataset, ScoreTable};
use crate::kernel::{adaptive_alpha, umpire_score, AlphaEstimate, KernelConfig, ScoreBundle};

/// Share of the non-dev instances used to pick the best α in a sweep.
pub const TUNE_FRACTION: f64 = 0.10;

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(validation("thread count must be >= 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Numerical(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Scores every record; bundles are in dataset order.
pub fn score_dataset(dataset: &Dataset, kernel: &KernelConfig, baselines: &BaselineSelection) -> Result<Vec<ScoreBundle>> {
    use rayon::prelude::*;
    kernel.validate()?;
    baselines.validate()?;
    dataset
        .records
        .par_iter()
        .map(|rec| {
            let mut bundle = umpire_score(&rec.samples, kernel).map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("record '{}': {m}", rec.id)),
                other => other,
            })?;
            bundle.baselines = baselines.compute(rec)?;
            Ok(bundle)
        })
        .collect()
}

/// How α is chosen for a scoring run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaChoice {
    Fixed(f64),
    Adaptive { fraction: f64, seed: u64 },
}

/// Kernel config with α filled in, plus the estimate when adaptive.
pub fn resolve_alpha(dataset: &Dataset, kernel: &KernelConfig, choice: AlphaChoice) -> Result<(KernelConfig, Option<AlphaEstimate>)> {
    match choice {
        AlphaChoice::Fixed(a) => {
            let cfg = kernel.with_alpha(a);
            cfg.validate()?;
            Ok((cfg, None))
        }
        AlphaChoice::Adaptive { fraction, seed } => {
            let est = adaptive_alpha(&dataset.records, kernel, fraction, seed)?;
            Ok((kernel.with_alpha(est.alpha), Some(est)))
        }
    }
}

fn pick<T: Copy>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i]).collect()
}

/// Metrics for one score column: the seeded dev split supplies unlabeled
/// min-max bounds and the rest is evaluated. The LRT, when requested, uses
/// the `q` and `u` columns of the same eval rows.
pub fn evaluate_column(table: &ScoreTable, column: &str, config: &EvalConfig, with_lrt: bool) -> Result<EvalReport> {
    config.validate()?;
    let scores = table.column(column)?;
    let labels = table.labels()?;
    let (dev, eval) = split_indices(scores.len(), config.dev_fraction, config.rng_seed)?;
    let qualities = table.qualities().map(|q| pick(&q, &eval));
    let mut report = evaluate(
        &pick(&scores, &eval),
        &pick(&labels, &eval),
        &pick(&scores, &dev),
        qualities.as_deref(),
        config,
    )?;
    if with_lrt {
        let q = pick(&table.column("q")?, &eval);
        let u = pick(&table.column("u")?, &eval);
        report.lrt = Some(lrt_q_vs_qu(&q, &u, &pick(&labels, &eval))?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    /// True for the row produced by adaptive α rather than the grid.
    pub adaptive: bool,
    pub auroc: f64,
    pub ece: Option<f64>,
    pub cpc: Option<f64>,
    pub combined: Option<f64>,
    /// Combined score on the labeled tuning split.
    pub tune_combined: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Grid α with the highest tuning-split combined score.
    pub best_alpha: Option<f64>,
    pub adaptive: AlphaEstimate,
    pub n_dev: usize,
    pub n_tune: usize,
    pub n_eval: usize,
}

/// Evaluates `v = u + α·q` for each grid α and for adaptive α.
///
/// A dev split provides min-max bounds, a labeled tuning split drawn from
/// the remainder selects the best grid α, and every row reports metrics on
/// the instances left after both.
pub fn sweep(
    dataset: &Dataset,
    kernel: &KernelConfig,
    grid: &[f64],
    config: &EvalConfig,
    adaptive_fraction: f64,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(validation("alpha grid is empty"));
    }
    if let Some(a) = grid.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(validation(format!("grid value {a} is not a nonnegative number")));
    }
    config.validate()?;
    let labels: Vec<u8> = dataset
        .records
        .iter()
        .map(|r| r.label.ok_or_else(|| validation(format!("record '{}' has no label", r.id))))
        .collect::<Result<_>>()?;
    let base = score_dataset(dataset, &kernel.with_alpha(0.0), &BaselineSelection::default())?;
    let n = base.len();
    let (dev, rest) = split_indices(n, config.dev_fraction, config.rng_seed)?;
    let (tune_pos, eval_pos) = split_indices(rest.len(), TUNE_FRACTION, config.rng_seed.wrapping_add(1))?;
    let tune: Vec<usize> = tune_pos.iter().map(|&i| rest[i]).collect();
    let eval: Vec<usize> = eval_pos.iter().map(|&i| rest[i]).collect();
    let est = adaptive_alpha(&dataset.records, kernel, adaptive_fraction, config.rng_seed)?;

    let row = |alpha: f64, adaptive: bool| -> Result<SweepRow> {
        let v: Vec<f64> = base.iter().map(|b| b.u + alpha * b.q).collect();
        let dev_v = pick(&v, &dev);
        let held = evaluate(&pick(&v, &eval), &pick(&labels, &eval), &dev_v, None, config)?;
        let tuned = evaluate(&pick(&v, &tune), &pick(&labels, &tune), &dev_v, None, config)?;
        Ok(SweepRow {
            alpha,
            adaptive,
            auroc: held.auroc,
            ece: held.ece,
            cpc: held.cpc,
            combined: held.combined,
            tune_combined: tuned.combined,
        })
    };
    let mut rows = grid.iter().map(|&a| row(a, false)).collect::<Result<Vec<_>>>()?;
    let mut best: Option<(f64, f64)> = None;
    for r in &rows {
        if let Some(c) = r.tune_combined {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((r.alpha, c));
            }
        }
    }
    rows.push(row(est.alpha, true)?);
    Ok(SweepReport {
        rows,
        best_alpha: best.map(|b| b.0),
        adaptive: est,
        n_dev: dev.len(),
        n_tune: tune.len(),
        n_eval: eval.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub column: String,
    pub auroc_a: f64,
    pub auroc_b: f64,
    /// `auroc_a − auroc_b`.
    pub delta_auroc: f64,
    pub ece_a: Option<f64>,
    pub ece_b: Option<f64>,
    pub delta_ece: Option<f64>,
}

/// Per-column AUROC and ECE differences between two score files over the
/// same labeled instances. Rows of `b` are matched to `a` by id.
pub fn compare(a: &ScoreTable, b: &ScoreTable, config: &EvalConfig) -> Result<Vec<MetricDelta>> {
    if a.rows.len() != b.rows.len() {
        return Err(validation(format!("score files have {} and {} rows", a.rows.len(), b.rows.len())));
    }
    let index: std::collections::HashMap<&str, usize> =
        b.rows.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut aligned = Vec::with_capacity(a.rows.len());
    for row in &a.rows {
        let &j = index
            .get(row.id.as_str())
            .ok_or_else(|| validation(format!("id '{}' is missing from the second file", row.id)))?;
        if b.rows[j].label != row.label {
            return Err(validation(format!("labels differ for id '{}'", row.id)));
        }
        aligned.push(b.rows[j].clone());
    }
    let b = ScoreTable { metric_columns: b.metric_columns.clone(), rows: aligned };
    let mut out = Vec::new();
    for column in a.metric_columns.iter().filter(|c| b.metric_columns.contains(c)) {
        let ra = evaluate_column(a, column, config, false)?;
        let rb = evaluate_column(&b, column, config, false)?;
        out.push(MetricDelta {
            column: column.clone(),
            auroc_a: ra.auroc,
            auroc_b: rb.auroc,
            delta_auroc: ra.auroc - rb.auroc,
            ece_a: ra.ece,
            ece_b: rb.ece,
            delta_ece: ra.ece.zip(rb.ece).map(|(x, y)| x - y),
        });
    }
    if out.is_empty() {
        return Err(validation("the score files share no metric columns"));
    }
    Ok(out)
}
