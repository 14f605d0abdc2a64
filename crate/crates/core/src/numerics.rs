//! Dense complex linear algebra shared by every other module.
//!
//! Matrices are `nalgebra` column-major storage, so `vec`/`mat` are plain
//! copies of the backing buffer and every Kronecker / Khatri-Rao identity
//! is stated in the column-major convention.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-12;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `exp(j·phase)`.
#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two column vectors.
pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    CVector::from_fn(a.len() * b.len(), |k, _| a[k / b.len()] * b[k % b.len()])
}

/// Column-wise Kronecker product `a ⊙ b`.
pub fn khatri_rao(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.ncols() != b.ncols() {
        return shape_err(format!(
            "khatri_rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        ));
    }
    let (ar, br) = (a.nrows(), b.nrows());
    let mut out = CMatrix::zeros(ar * br, a.ncols());
    for j in 0..a.ncols() {
        for i in 0..ar {
            let s = a[(i, j)];
            for p in 0..br {
                out[(i * br + p, j)] = s * b[(p, j)];
            }
        }
    }
    Ok(out)
}

/// Column-major vectorisation.
pub fn vec(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn mat(x: &CVector, rows: usize, cols: usize) -> Result<CMatrix> {
    if x.len() != rows * cols {
        return shape_err(format!(
            "cannot reshape a length-{} vector into {rows}x{cols}",
            x.len()
        ));
    }
    Ok(CMatrix::from_column_slice(rows, cols, x.as_slice()))
}

/// The `mn × mn` permutation `K` with `K·vec(A) = vec(Aᵀ)` for every `m × n` matrix `A`.
pub fn commutation_matrix(m: usize, n: usize) -> CMatrix {
    let mut k = CMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            k[(j + i * n, i + j * m)] = C64::new(1.0, 0.0);
        }
    }
    k
}

/// Applies the commutation matrix without building it.
pub fn commute_vec(x: &CVector, m: usize, n: usize) -> Result<CVector> {
    if x.len() != m * n {
        return shape_err(format!("commute_vec: length {} != {m}*{n}", x.len()));
    }
    let mut out = CVector::zeros(m * n);
    for i in 0..m {
        for j in 0..n {
            out[j + i * n] = x[i + j * m];
        }
    }
    Ok(out)
}

/// Thin SVD with singular values in non-increasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    pub s: DVector<f64>,
    pub v: CMatrix,
}

impl Svd {
    /// `U·diag(s)·Vᴴ`.
    pub fn compose(&self) -> CMatrix {
        let mut us = self.u.clone();
        for (j, &sj) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(sj);
        }
        us * self.v.adjoint()
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }
}

/// Full thin SVD (`min(rows, cols)` triplets), sorted.
pub fn svd(a: &CMatrix) -> Result<Svd> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("svd input has non-finite entries".into()));
    }
    let dec = SVD::try_new(a.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("svd did not converge".into()))?;
    let u = dec.u.expect("requested U");
    let v = dec.v_t.expect("requested Vᴴ").adjoint();
    Ok(Svd {
        u,
        s: dec.singular_values,
        v,
    })
}

/// Best Frobenius rank-`r` approximation factors.
pub fn truncated_svd(a: &CMatrix, r: usize) -> Result<Svd> {
    let (rows, cols) = a.shape();
    if r > rows.min(cols) {
        return Err(Error::RankTooLarge {
            rank: r,
            rows,
            cols,
        });
    }
    let full = svd(a)?;
    Ok(Svd {
        u: full.u.columns(0, r).into_owned(),
        s: full.s.rows(0, r).into_owned(),
        v: full.v.columns(0, r).into_owned(),
    })
}

/// Number of singular values above `RANK_TOL · σ₁`.
pub fn numerical_rank(a: &CMatrix) -> Result<usize> {
    let s = svd(a)?.s;
    let top = s.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > RANK_TOL * top).count())
}

/// Vector of `n` entries `exp(jφ)` with `φ ~ U[0, 2π)`.
pub fn random_unit_modulus<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    CVector::from_fn(n, |_, _| cis(rng.random::<f64>() * std::f64::consts::TAU))
}

/// One `CN(0, variance)` draw.
pub fn complex_normal<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> C64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(sd * re, sd * im)
}

/// Matrix with i.i.d. `CN(0, variance)` entries.
pub fn complex_normal_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    variance: f64,
    rng: &mut R,
) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(variance, rng))
}

/// `Re tr(aᴴ b)`, the real Euclidean metric on complex matrices.
pub fn inner_re(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn frob_sq(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `‖est − truth‖²_F / ‖truth‖²_F`.
pub fn nmse(est: &CMatrix, truth: &CMatrix) -> f64 {
    frob_sq(&(est - truth)) / frob_sq(truth)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Inverse of a square matrix via LU.
pub fn inverse(a: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() {
        return shape_err(format!(
            "cannot invert a {}x{} matrix",
            a.nrows(),
            a.ncols()
        ));
    }
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix".into()))
}

/// Solves `a·x = b` for Hermitian positive definite `a`, falling back to LU.
pub fn solve_hpd(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular system".into()))
}

/// Real trace of a matrix whose trace is known to be real up to round-off.
pub fn trace_re(a: &CMatrix) -> f64 {
    a.trace().re
}

/// Determinant of a Hermitian positive definite matrix, as `log₂ det`.
pub fn log2_det_hpd(a: &CMatrix) -> Result<f64> {
    let ch = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("log-det of a non-positive-definite matrix".into()))?;
    let l = ch.l();
    Ok(2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.log2()).sum::<f64>())
}

pub fn all_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
