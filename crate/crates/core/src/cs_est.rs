//! CS-EST: three-stage compressive estimation of the cascaded channel.
//!
//! Stage 1 finds the UE departure atoms from the slots where the IRS holds
//! one reflection vector, stage 2 finds the BS arrival atoms from all slots,
//! and stage 3 recovers the sparse cascaded gains over the IRS dictionary.
//! Operation counts are tallied as real flops with one complex
//! multiply-add counted as 8.

use std::time::{Duration, Instant};

use crate::channel::{Dictionaries, PilotBlock};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{kron, CMatrix, CVector, C64};

/// Real flops per complex multiply-add.
const CMAC: u64 = 8;

/// A linear map `Θ` that OMP can correlate against and read columns from.
pub trait SensingOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `Θᴴ·res`, adding the work done to `flops`.
    fn correlate(&self, res: &CMatrix, flops: &mut u64) -> CMatrix;
    fn column(&self, idx: usize) -> CVector;
}

impl SensingOperator for CMatrix {
    fn rows(&self) -> usize {
        self.nrows()
    }

    fn cols(&self) -> usize {
        self.ncols()
    }

    fn correlate(&self, res: &CMatrix, flops: &mut u64) -> CMatrix {
        *flops += CMAC * (self.nrows() * self.ncols() * res.ncols()) as u64;
        self.ad_mul(res)
    }

    fn column(&self, idx: usize) -> CVector {
        self.column(idx).into_owned()
    }
}

#[derive(Debug, Clone)]
pub struct OmpResult {
    /// Selected atoms in selection order.
    pub support: Vec<usize>,
    /// Least-squares coefficients of the selected atoms, one row per atom.
    pub coeffs: CMatrix,
    /// Frobenius norm of the residual before the first and after each selection.
    pub residual_norms: Vec<f64>,
    pub residual: CMatrix,
    pub flops: u64,
}

/// Solves the normal equations `gram·x = rhs` by Cholesky, rejecting
/// numerically collinear atom sets.
fn solve_normal(gram: &CMatrix, rhs: &CMatrix, flops: &mut u64) -> Result<CMatrix> {
    let k = gram.nrows();
    *flops += CMAC * (k * k * k / 3 + 2 * k * k * rhs.ncols()) as u64;
    let diag_max = gram.diagonal().iter().map(|z| z.re).fold(0.0, f64::max);
    let chol = gram
        .clone()
        .cholesky()
        .filter(|c| {
            let l = c.l_dirty();
            (0..k).all(|i| l[(i, i)].re * l[(i, i)].re > 1e-12 * diag_max)
        })
        .ok_or_else(|| {
            Error::Numerical(format!("selected atoms are collinear (support size {k})"))
        })?;
    Ok(chol.solve(rhs))
}

/// Simultaneous OMP on the multiple-measurement model `obs ≈ Θ·Γ` with a
/// `k`-row-sparse `Γ`. Atom ties go to the lowest index; coefficients are
/// refit against `obs` after each selection.
pub fn omp<S: SensingOperator + ?Sized>(theta: &S, obs: &CMatrix, k: usize) -> Result<OmpResult> {
    if obs.nrows() != theta.rows() {
        return shape_err(format!(
            "observation has {} rows, sensing operator {}",
            obs.nrows(),
            theta.rows()
        ));
    }
    if k == 0 || k > theta.cols() {
        return Err(Error::Config(format!(
            "sparsity {k} must lie in 1..={}",
            theta.cols()
        )));
    }
    let mut flops = 0u64;
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut atoms = CMatrix::zeros(obs.nrows(), 0);
    let mut residual = obs.clone();
    let mut coeffs = CMatrix::zeros(0, obs.ncols());
    // Normal equations of the refit, grown by one row and column per selection.
    let mut gram = CMatrix::zeros(0, 0);
    let mut rhs = CMatrix::zeros(0, obs.ncols());
    let mut residual_norms = vec![obs.norm()];

    for _ in 0..k {
        let psi = theta.correlate(&residual, &mut flops);
        let mut best: Option<(usize, f64)> = None;
        for (idx, row) in psi.row_iter().enumerate() {
            if support.contains(&idx) {
                continue;
            }
            let energy = row.norm_squared();
            if best.is_none_or(|(_, e)| energy > e) {
                best = Some((idx, energy));
            }
        }
        let (idx, _) = best.expect("k does not exceed the atom count");
        support.push(idx);
        let n = atoms.ncols();
        let atom = theta.column(idx);
        let cross = atoms.ad_mul(&atom);
        gram = gram
            .insert_column(n, C64::new(0.0, 0.0))
            .insert_row(n, C64::new(0.0, 0.0));
        for i in 0..n {
            gram[(i, n)] = cross[i];
            gram[(n, i)] = cross[i].conj();
        }
        gram[(n, n)] = C64::new(atom.norm_squared(), 0.0);
        rhs = rhs.insert_row(n, C64::new(0.0, 0.0));
        rhs.set_row(n, &(atom.adjoint() * obs));
        flops += CMAC * (atom.len() * (n + 1 + obs.ncols())) as u64;
        atoms = atoms.insert_column(n, C64::new(0.0, 0.0));
        atoms.set_column(n, &atom);

        coeffs = solve_normal(&gram, &rhs, &mut flops)?;
        flops += CMAC * (atoms.nrows() * atoms.ncols() * obs.ncols()) as u64;
        residual = obs - &atoms * &coeffs;
        residual_norms.push(residual.norm());
    }

    Ok(OmpResult {
        support,
        coeffs,
        residual_norms,
        residual,
        flops,
    })
}

/// [`omp`] on a dense sensing matrix.
pub fn omp_mmv(theta: &CMatrix, obs: &CMatrix, k: usize) -> Result<OmpResult> {
    omp(theta, obs, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsEstConfig {
    /// Leading slots with a held reflection vector; `None` uses `ceil(T/4)`.
    pub t1: Option<usize>,
    pub p_hat: usize,
    pub q_hat: usize,
    /// Refuse stage-3 problems with more candidate gains than this.
    pub max_stage3_columns: usize,
}

impl CsEstConfig {
    pub fn new(p_hat: usize, q_hat: usize) -> Self {
        Self {
            t1: None,
            p_hat,
            q_hat,
            max_stage3_columns: 50_000_000,
        }
    }

    pub fn t1_for(&self, slots: usize) -> usize {
        self.t1.unwrap_or(slots.div_ceil(4))
    }

    fn validate(&self, slots: usize) -> Result<usize> {
        let t1 = self.t1_for(slots);
        if t1 == 0 || t1 > slots {
            return Err(Error::Config(format!("T1 = {t1} must lie in 1..={slots}")));
        }
        if self.p_hat == 0 || self.q_hat == 0 {
            return Err(Error::Config("path counts must be at least 1".into()));
        }
        Ok(t1)
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageStats {
    pub flops: u64,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct CsEstResult {
    /// Selected UE dictionary columns and their indices.
    pub a_ue_bar: CMatrix,
    pub ue_support: Vec<usize>,
    pub a_bs_bar: CMatrix,
    pub bs_support: Vec<usize>,
    /// `vec(Λ̄)`, entry `j·PQ + q·P + p`.
    pub lambda: CVector,
    pub h_c_hat: CMatrix,
    pub stages: [StageStats; 3],
}

impl CsEstResult {
    pub fn total_flops(&self) -> u64 {
        self.stages.iter().map(|s| s.flops).sum()
    }
}

fn columns(a: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(a.nrows(), idx.len(), |i, j| a[(i, idx[j])])
}

/// Stage 1: UE departure atoms from the first `t1` slots.
pub fn stage1_ue_aods(
    pilots: &PilotBlock,
    dict: &Dictionaries,
    cfg: &CsEstConfig,
) -> Result<(Vec<usize>, u64)> {
    let t1 = cfg.validate(pilots.slots())?;
    let n_ue = dict.a_ue.nrows();
    // Rows of S₁ are s_tᴴ.
    let s1 = CMatrix::from_fn(t1, n_ue, |t, k| pilots.s[t][k].conj());
    let r1h = pilots.r.columns(0, t1).adjoint();
    let mut flops = CMAC * (t1 * n_ue * dict.a_ue.ncols()) as u64;
    let theta = s1 * &dict.a_ue;
    let res = omp_mmv(&theta, &r1h, cfg.q_hat)?;
    flops += res.flops;
    Ok((res.support, flops))
}

/// Stage 2: BS arrival atoms from all slots.
pub fn stage2_bs_aoas(
    pilots: &PilotBlock,
    dict: &Dictionaries,
    cfg: &CsEstConfig,
) -> Result<(Vec<usize>, u64)> {
    cfg.validate(pilots.slots())?;
    let res = omp_mmv(&dict.a_bs, &pilots.r, cfg.p_hat)?;
    Ok((res.support, res.flops))
}

/// Grid index along one axis of the atom at `u_i − u_j`.
fn difference_index(ki: usize, kj: usize, g: usize) -> usize {
    (ki + g + g / 2 - kj) % g
}

/// Permutation `L_j` with `√M·(A_Iᵀ ∘ 1·a_jᴴ) = L_j·A_Iᵀ`, where `a_j` is
/// column `j` of `A_I`. Needs even IRS grid sizes so that differences of
/// grid points stay on the grid.
pub fn permutation_l(dict: &Dictionaries, j: usize) -> Result<CMatrix> {
    let (gy, gz) = (dict.geometry.g_y, dict.geometry.g_z);
    if gy % 2 != 0 || gz % 2 != 0 {
        return Err(Error::Config(format!(
            "IRS grid {gy}x{gz} is not closed under subtraction (sizes must be even)"
        )));
    }
    let gi = gy * gz;
    if j >= gi {
        return Err(Error::Config(format!(
            "atom index {j} out of range for {gi} IRS atoms"
        )));
    }
    let (jy, jz) = (j / gz, j % gz);
    let mut l = CMatrix::zeros(gi, gi);
    for i in 0..gi {
        let (iy, iz) = (i / gz, i % gz);
        let col = difference_index(iy, jy, gy) * gz + difference_index(iz, jz, gz);
        l[(i, col)] = C64::new(1.0, 0.0);
    }
    Ok(l)
}

/// Stage-3 sensing operator with block rows `a_tᵀ ⊗ c_tᵀ ⊗ Ā_BS`,
/// `a_t = A_Iᵀv_t`, `c_t = Ā_UEᴴs_t`; never materialized in full.
struct GainSensing<'a> {
    a_bs_bar: &'a CMatrix,
    /// `[a_1 .. a_T]`, `G_I × T`.
    a: CMatrix,
    /// `[c_1 .. c_T]`, `Q × T`.
    c: CMatrix,
}

impl GainSensing<'_> {
    fn pq(&self) -> usize {
        self.a_bs_bar.ncols() * self.c.nrows()
    }
}

impl SensingOperator for GainSensing<'_> {
    fn rows(&self) -> usize {
        self.a_bs_bar.nrows() * self.a.ncols()
    }

    fn cols(&self) -> usize {
        self.pq() * self.a.nrows()
    }

    fn correlate(&self, res: &CMatrix, flops: &mut u64) -> CMatrix {
        let n_bs = self.a_bs_bar.nrows();
        let p = self.a_bs_bar.ncols();
        let q = self.c.nrows();
        let t = self.a.ncols();
        let gi = self.a.nrows();
        let pq = p * q;
        let e = CMatrix::from_column_slice(n_bs, t, res.as_slice());
        let z = self.a_bs_bar.ad_mul(&e);
        let w = CMatrix::from_fn(pq, t, |row, col| {
            self.c[(row / p, col)].conj() * z[(row % p, col)]
        });
        let corr = w * self.a.adjoint();
        *flops += CMAC * (n_bs * p * t + pq * t + pq * t * gi) as u64;
        CMatrix::from_column_slice(pq * gi, 1, corr.as_slice())
    }

    fn column(&self, idx: usize) -> CVector {
        let p = self.a_bs_bar.ncols();
        let pq = self.pq();
        let (j, rem) = (idx / pq, idx % pq);
        let (qi, pi) = (rem / p, rem % p);
        let n_bs = self.a_bs_bar.nrows();
        let atom = self.a_bs_bar.column(pi);
        CVector::from_fn(self.rows(), |row, _| {
            let (t, n) = (row / n_bs, row % n_bs);
            self.a[(j, t)] * self.c[(qi, t)] * atom[n]
        })
    }
}

/// Stage 3: sparse cascaded gains and the reconstructed cascaded channel.
pub fn stage3_gains(
    pilots: &PilotBlock,
    a_ue_bar: &CMatrix,
    a_bs_bar: &CMatrix,
    dict: &Dictionaries,
    cfg: &CsEstConfig,
) -> Result<(CVector, CMatrix, u64)> {
    let p = a_bs_bar.ncols();
    let q = a_ue_bar.ncols();
    let gi = dict.a_i.ncols();
    let m = dict.a_i.nrows();
    let t = pilots.slots();
    let n_cols = p * q * gi;
    if n_cols > cfg.max_stage3_columns {
        return Err(Error::Config(format!(
            "stage 3 would search {n_cols} gains (P̂={p} × Q̂={q} × G_I={gi}), above the limit of {}",
            cfg.max_stage3_columns
        )));
    }
    if pilots.v.iter().any(|v| v.len() != m) || a_bs_bar.nrows() != pilots.r.nrows() {
        return shape_err("pilots and dictionaries disagree on array sizes");
    }

    let v = CMatrix::from_columns(&pilots.v);
    let s = CMatrix::from_columns(&pilots.s);
    let mut flops = CMAC * (gi * m * t + q * a_ue_bar.nrows() * t) as u64;
    let op = GainSensing {
        a_bs_bar,
        a: dict.a_i.tr_mul(&v),
        c: a_ue_bar.ad_mul(&s),
    };
    let obs = CMatrix::from_column_slice(pilots.r.len(), 1, pilots.r.as_slice());
    let res = omp(&op, &obs, p * q)?;
    flops += res.flops;

    let mut lambda = CVector::zeros(n_cols);
    for (row, &idx) in res.support.iter().enumerate() {
        lambda[idx] = res.coeffs[(row, 0)];
    }
    let lambda_bar = CMatrix::from_column_slice(p * q, gi, lambda.as_slice());
    let left = kron(&a_ue_bar.map(|z| z.conj()), a_bs_bar);
    let h_c_hat = left * lambda_bar * dict.a_i.transpose();
    flops += CMAC
        * (a_bs_bar.nrows() * a_ue_bar.nrows() * p * q * gi
            + a_bs_bar.nrows() * a_ue_bar.nrows() * gi * m) as u64;
    Ok((lambda, h_c_hat, flops))
}

/// Runs the three stages in order.
pub fn cs_est(pilots: &PilotBlock, dict: &Dictionaries, cfg: &CsEstConfig) -> Result<CsEstResult> {
    cfg.validate(pilots.slots())?;

    let start = Instant::now();
    let (ue_support, f1) = stage1_ue_aods(pilots, dict, cfg)?;
    let s1 = StageStats {
        flops: f1,
        elapsed: start.elapsed(),
    };

    let start = Instant::now();
    let (bs_support, f2) = stage2_bs_aoas(pilots, dict, cfg)?;
    let s2 = StageStats {
        flops: f2,
        elapsed: start.elapsed(),
    };

    let start = Instant::now();
    let a_ue_bar = columns(&dict.a_ue, &ue_support);
    let a_bs_bar = columns(&dict.a_bs, &bs_support);
    let (lambda, h_c_hat, f3) = stage3_gains(pilots, &a_ue_bar, &a_bs_bar, dict, cfg)?;
    let s3 = StageStats {
        flops: f3,
        elapsed: start.elapsed(),
    };

    Ok(CsEstResult {
        a_ue_bar,
        ue_support,
        a_bs_bar,
        bs_support,
        lambda,
        h_c_hat,
        stages: [s1, s2, s3],
    })
}
