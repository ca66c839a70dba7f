//! Nested logistic-regression likelihood-ratio test: does `u` add anything
//! to `q` when predicting correctness?

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{validation, Error, Result};

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
/// Coefficients (on standardized covariates) beyond this mean separation.
const SEPARATION_LIMIT: f64 = 30.0;
const SEPARATION_GAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per standardized covariate.
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub p_value: f64,
    pub restricted_log_likelihood: f64,
    pub full_log_likelihood: f64,
    /// Either fit hit the separation limit; the statistic is then unreliable.
    pub separated: bool,
    /// `u` was numerically collinear with `(1, q)` and dropped from the full model.
    pub u_dropped: bool,
}

/// Upper tail of χ² with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(1.0).expect("df = 1 is valid").sf(x)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn standardize(col: &[f64]) -> Vec<f64> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        col.iter().map(|x| (x - mean) / sd).collect()
    } else {
        vec![0.0; col.len()]
    }
}

fn log_likelihood(rows: &[Vec<f64>], y: &[f64], beta: &[f64]) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(x, &yi)| {
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            yi * eta - softplus(eta)
        })
        .sum()
}

/// Solves `(H + λI) x = g` for symmetric PSD `H`, raising `λ` until the
/// Cholesky factorization succeeds.
fn solve_damped(h: &[Vec<f64>], g: &[f64]) -> Result<Vec<f64>> {
    let p = g.len();
    let scale = (0..p).map(|i| h[i][i]).fold(0.0, f64::max).max(1e-300);
    let mut lambda = 0.0;
    for _ in 0..40 {
        if let Some(x) = cholesky_solve(h, g, lambda) {
            return Ok(x);
        }
        lambda = if lambda == 0.0 { 1e-12 * scale } else { lambda * 10.0 };
    }
    Err(Error::Numerical("logistic Hessian could not be factorized".into()))
}

fn cholesky_solve(h: &[Vec<f64>], g: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let p = g.len();
    let mut l = vec![vec![0.0; p]; p];
    for j in 0..p {
        let mut d = h[j][j] + lambda;
        for t in 0..j {
            d -= l[j][t] * l[j][t];
        }
        if !(d > 1e-14 * (h[j][j] + lambda).abs().max(1e-300)) {
            return None;
        }
        l[j][j] = d.sqrt();
        for i in (j + 1)..p {
            let mut s = h[i][j];
            for t in 0..j {
                s -= l[i][t] * l[j][t];
            }
            l[i][j] = s / l[j][j];
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut s = g[i];
        for t in 0..i {
            s -= l[i][t] * z[t];
        }
        z[i] = s / l[i][i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = z[i];
        for t in (i + 1)..p {
            s -= l[t][i] * x[t];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Every fitted probability lies within `SEPARATION_GAP` of its label.
fn fitted_exactly(rows: &[Vec<f64>], y: &[f64], beta: &[f64]) -> bool {
    rows.iter().zip(y).all(|(x, &yi)| {
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        (sigmoid(eta) - yi).abs() < SEPARATION_GAP
    })
}

/// Maximum-likelihood logistic regression of `y ∈ {0,1}` on an intercept
/// plus the given covariates (each standardized first), by damped Newton.
pub fn fit_logistic(covariates: &[&[f64]], y: &[f64]) -> Result<LogisticFit> {
    let n = y.len();
    if covariates.iter().any(|c| c.len() != n) {
        return Err(Error::Structural("covariate length differs from response length".into()));
    }
    let cols: Vec<Vec<f64>> = covariates.iter().map(|c| standardize(c)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| std::iter::once(1.0).chain(cols.iter().map(|c| c[i])).collect())
        .collect();
    let p = cols.len() + 1;
    let mut beta = vec![0.0; p];
    let mut ll = log_likelihood(&rows, y, &beta);

    for iter in 0..=MAX_ITER {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (x, &yi) in rows.iter().zip(y) {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            let w = mu * (1.0 - mu);
            for a in 0..p {
                grad[a] += x[a] * (yi - mu);
                for b in 0..=a {
                    hess[a][b] += w * x[a] * x[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[b][a] = hess[a][b];
            }
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm <= GRAD_TOL {
            // the gradient also vanishes when every point is fitted almost exactly
            let separated = fitted_exactly(&rows, y, &beta);
            return Ok(LogisticFit { coefficients: beta, log_likelihood: ll, iterations: iter, separated });
        }
        if beta.iter().any(|b| b.abs() > SEPARATION_LIMIT) {
            return Ok(LogisticFit { coefficients: beta, log_likelihood: ll, iterations: iter, separated: true });
        }
        if iter == MAX_ITER {
            break;
        }
        let step = solve_damped(&hess, &grad)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cand_ll = log_likelihood(&rows, y, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Numerical(format!(
                "logistic Newton line search stalled at iteration {iter} (gradient norm {gnorm:e})"
            )));
        }
    }
    Err(Error::Numerical(format!("logistic regression did not converge in {MAX_ITER} iterations")))
}

/// True when `u` lies (numerically) in the span of `(1, q)`.
fn collinear_with(u: &[f64], q: &[f64]) -> bool {
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mq = q.iter().sum::<f64>() / n;
    let uc: Vec<f64> = u.iter().map(|x| x - mu).collect();
    let qc: Vec<f64> = q.iter().map(|x| x - mq).collect();
    let uu: f64 = uc.iter().map(|x| x * x).sum();
    let qq: f64 = qc.iter().map(|x| x * x).sum();
    let uq: f64 = uc.iter().zip(&qc).map(|(a, b)| a * b).sum();
    let resid = if qq > 0.0 { uu - uq * uq / qq } else { uu };
    let scale = u.iter().map(|x| x * x).sum::<f64>();
    resid <= 1e-18 * scale.max(f64::MIN_POSITIVE) || uu <= 1e-24 * scale.max(f64::MIN_POSITIVE)
}

/// Restricted `a ~ σ(β0 + β1 q)` against full `a ~ σ(β0 + β1 q + β2 u)`.
pub fn lrt_q_vs_qu(q_values: &[f64], u_values: &[f64], labels: &[u8]) -> Result<LrtResult> {
    let n = labels.len();
    if q_values.len() != n || u_values.len() != n {
        return Err(Error::Structural("q, u and labels must have equal length".into()));
    }
    if n < 10 {
        return Err(validation(format!("likelihood-ratio test needs at least 10 instances, got {n}")));
    }
    if q_values.iter().chain(u_values).any(|x| !x.is_finite()) {
        return Err(validation("q and u must be finite"));
    }
    let correct = labels.iter().filter(|&&l| l == 1).count();
    if correct == 0 || correct == n {
        return Err(validation("likelihood-ratio test needs both classes"));
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let restricted = fit_logistic(&[q_values], &y)?;
    let u_dropped = collinear_with(u_values, q_values);
    let full = if u_dropped { restricted.clone() } else { fit_logistic(&[q_values, u_values], &y)? };
    let statistic = (-2.0 * (restricted.log_likelihood - full.log_likelihood)).max(0.0);
    Ok(LrtResult {
        statistic,
        p_value: chi2_1_sf(statistic),
        restricted_log_likelihood: restricted.log_likelihood,
        full_log_likelihood: full.log_likelihood,
        separated: restricted.separated || full.separated,
        u_dropped,
    })
}
