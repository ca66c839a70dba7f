//! Gram matrices and jittered log-determinants.
//!
//! `log det(ΦΦᵀ + εI_k)` can be evaluated either on the k×k Gram matrix or,
//! through the matrix determinant lemma, on the d×d second-moment matrix
//! `I_d + Φᵀ Φ / ε`. Both routes are kept public so they can cross-check
//! each other; [`logdet_volume`] picks the smaller one.

use twofloat::TwoFloat;

use crate::error::{Error, Result};

/// Rows within this distance of unit norm are taken as-is.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Row-major `k × d` matrix of unit-norm embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f64>,
    k: usize,
    d: usize,
}

impl EmbeddingMatrix {
    /// Builds the matrix from rows, renormalizing any row whose norm is off
    /// by more than [`NORM_TOLERANCE`].
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::Structural("embedding matrix needs at least one row".into()));
        }
        let d = rows[0].as_ref().len();
        if d == 0 {
            return Err(Error::Structural("embedding dimension must be at least 1".into()));
        }
        let mut data = Vec::with_capacity(k * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::Structural(format!(
                    "row {i} has dimension {} but row 0 has dimension {d}",
                    row.len()
                )));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::Numerical(format!("row {i} has norm {norm}")));
            }
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                log::warn!("embedding row {i} has norm {norm:.9}; renormalizing");
                data.extend(row.iter().map(|x| x / norm));
            } else {
                data.extend_from_slice(row);
            }
        }
        Ok(Self { data, k, d })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }
}

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: Vec<f64>,
    n: usize,
}

impl SymMatrix {
    /// Wraps a row-major `n × n` buffer. Symmetry is checked to 1e-12.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Structural(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Structural(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { data, n })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { data, n }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Returns `self + shift·I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            out.data[i * self.n + i] += shift;
        }
        out
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Structural(format!(
                "cannot add {}x{} and {}x{} matrices",
                self.n, self.n, other.n, other.n
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { data, n: self.n })
    }

    /// `D A D` for a diagonal `D` given by its entries.
    pub fn diag_congruence(&self, diag: &[f64]) -> Result<Self> {
        if diag.len() != self.n {
            return Err(Error::Structural(format!(
                "diagonal of length {} for a {}x{} matrix",
                diag.len(),
                self.n,
                self.n
            )));
        }
        let n = self.n;
        let mut data = self.data.clone();
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] *= diag[i] * diag[j];
            }
        }
        Ok(Self { data, n })
    }

    /// Log-determinant of a symmetric positive-definite matrix via Cholesky.
    ///
    /// Accumulates `ln` of each pivot `L_ii²` directly, so no square root
    /// enters the sum.
    pub fn logdet_spd(&self) -> Result<f64> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        let mut logdet = 0.0;
        for j in 0..n {
            let mut pivot = self.data[j * n + j];
            for p in 0..j {
                pivot -= l[j * n + p] * l[j * n + p];
            }
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { minor: j + 1, pivot });
            }
            logdet += pivot.ln();
            let diag = pivot.sqrt();
            l[j * n + j] = diag;
            for i in (j + 1)..n {
                let mut s = self.data[i * n + j];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                l[i * n + j] = s / diag;
            }
        }
        Ok(logdet)
    }

    /// Eigenvalues in ascending order, by cyclic Jacobi rotations.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = self.data.clone();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i * n + j] * a[i * n + j])
                .sum::<f64>()
                .sqrt();
            if off <= 1e-15 * scale || off == 0.0 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
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
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
        eig.sort_by(f64::total_cmp);
        eig
    }
}

/// `k × k` Gram matrix of embedding inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(SymMatrix);

impl GramMatrix {
    pub fn matrix(&self) -> &SymMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }
}

/// `Φ Φᵀ`. Only the upper triangle is computed and then mirrored, so the
/// result is exactly symmetric.
pub fn gram(phi: &EmbeddingMatrix) -> GramMatrix {
    let k = phi.k;
    let mut data = vec![0.0; k * k];
    for i in 0..k {
        let ri = phi.row(i);
        for j in i..k {
            let v = dot(ri, phi.row(j));
            data[i * k + j] = v;
            data[j * k + i] = v;
        }
    }
    GramMatrix(SymMatrix { data, n: k })
}

/// `log det(G + εI)` by Cholesky on the k×k Gram matrix.
pub fn logdet_jittered(g: &GramMatrix, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    g.0.shifted(epsilon).logdet_spd()
}

/// Quotient with one residual correction; the plain double-double division
/// is only f64-accurate.
fn dd_div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q = a / b;
    q + (a - q * b) / b
}

/// `log det(C (ΦΦᵀ + εI) C)` with `C = diag(scale)`, formed explicitly.
///
/// The kernel and its Cholesky factor are carried in double-double
/// arithmetic. In f64 the rounding of Gram entries alone moves the `ε`-sized
/// eigenvalues by about `1e-8` relative when k > d; here that drops to
/// roughly `1e-24`, far below the f64 paths this is checked against.
pub fn logdet_scaled_kernel(phi: &EmbeddingMatrix, epsilon: f64, scale: &[f64]) -> Result<f64> {
    check_epsilon(epsilon)?;
    let k = phi.k;
    if scale.len() != k {
        return Err(Error::Structural(format!("scale of length {} for {k} rows", scale.len())));
    }
    let zero = TwoFloat::from(0.0);
    let mut a = vec![zero; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut g = phi.row(i).iter().zip(phi.row(j)).fold(zero, |acc, (&x, &y)| acc + TwoFloat::new_mul(x, y));
            if i == j {
                g += epsilon;
            }
            let v = g * TwoFloat::new_mul(scale[i], scale[j]);
            a[i * k + j] = v;
            a[j * k + i] = v;
        }
    }
    let mut l = vec![zero; k * k];
    let mut logdet = 0.0;
    for j in 0..k {
        let mut pivot = a[j * k + j];
        for p in 0..j {
            pivot -= l[j * k + p] * l[j * k + p];
        }
        let (hi, lo) = (pivot.hi(), pivot.lo());
        if !(hi > 0.0) || !hi.is_finite() {
            return Err(Error::NotPositiveDefinite { minor: j + 1, pivot: hi });
        }
        logdet += hi.ln() + (lo / hi).ln_1p();
        let diag = pivot.sqrt();
        l[j * k + j] = diag;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            l[i * k + j] = dd_div(s, diag);
        }
    }
    Ok(logdet)
}

/// `k·ln ε + log det(I_d + Φᵀ Φ / ε)`, the d×d route to the same value as
/// [`logdet_jittered`].
///
/// The triangular factor of `ΦᵀΦ + εI_d` is built by Givens updates of
/// `√ε·I_d` with each row of Φ, so `ΦᵀΦ` is never formed and the `ε`-sized
/// eigenvalues keep their relative accuracy.
pub fn logdet_second_moment(phi: &EmbeddingMatrix, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let (k, d) = (phi.k, phi.d);
    // upper-triangular, row-major
    let mut r = vec![0.0; d * d];
    for j in 0..d {
        r[j * d + j] = epsilon.sqrt();
    }
    let mut x = vec![0.0; d];
    for row in phi.rows() {
        x.copy_from_slice(row);
        for j in 0..d {
            if x[j] == 0.0 {
                continue;
            }
            let rjj = r[j * d + j];
            let h = rjj.hypot(x[j]);
            let (c, s) = (rjj / h, x[j] / h);
            r[j * d + j] = h;
            x[j] = 0.0;
            for l in j + 1..d {
                let (a, b) = (r[j * d + l], x[l]);
                r[j * d + l] = c * a + s * b;
                x[l] = c * b - s * a;
            }
        }
    }
    // ln det(I + ΦᵀΦ/ε) = Σ ln(r_jj² / ε)
    let inner: f64 = (0..d).map(|j| 2.0 * r[j * d + j].ln() - epsilon.ln()).sum();
    let value = k as f64 * epsilon.ln() + inner;
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "second-moment log-determinant is not finite (inner {inner})"
        )));
    }
    Ok(value)
}

/// `log det(ΦΦᵀ + εI_k)` using the k×k route when `k ≤ d` and the d×d route
/// otherwise.
pub fn logdet_volume(phi: &EmbeddingMatrix, epsilon: f64) -> Result<f64> {
    if phi.k <= phi.d {
        logdet_jittered(&gram(phi), epsilon)
    } else {
        logdet_second_moment(phi, epsilon)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("jitter must be positive and finite, got {epsilon}")))
    }
}
