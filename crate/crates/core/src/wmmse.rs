//! ALT-WMMSE: joint design of the transmit beamformer `F` and the IRS
//! reflection vector `v_d` for a downlink given a cascaded-channel estimate.
//!
//! The objective tracked across iterations is
//! `g = tr(Ω·E_mmse) − ln det Ω`, where `E_mmse` is the MSE matrix of the
//! MMSE receiver for the current `(F, v_d)`. The cascaded channel and the
//! noise power are rescaled internally by a common factor; spectral
//! efficiency and `g` do not depend on it.

use rand::Rng;

use crate::channel::effective_channel;
use crate::error::{Error, Result};
use crate::manifold::{cg_minimize, CgOptions, Circle};
use crate::numerics::{
    frob_sq, inverse, log2_det_hpd, random_unit_modulus, solve_hpd, svd, trace_re, CMatrix,
    CVector, C64,
};

#[derive(Debug, Clone)]
pub struct DownlinkScenario {
    /// Cascaded channel `Hᵀ ⊙ G`, `N_BS·N_UE × M`.
    pub h_c: CMatrix,
    pub n_bs: usize,
    pub n_ue: usize,
    pub sigma2_d: f64,
    pub n_s: usize,
    /// Slots spent on training.
    pub t_used: usize,
    /// Slots per coherence block.
    pub t_tot: usize,
}

impl DownlinkScenario {
    pub fn m(&self) -> usize {
        self.h_c.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.h_c.nrows() != self.n_bs * self.n_ue {
            return Err(Error::Shape(format!(
                "cascaded channel has {} rows, expected N_BS·N_UE = {}",
                self.h_c.nrows(),
                self.n_bs * self.n_ue
            )));
        }
        if self.n_s == 0 || self.n_s > self.n_bs.min(self.n_ue) {
            return Err(Error::Config(format!(
                "N_s = {} must lie in 1..={}",
                self.n_s,
                self.n_bs.min(self.n_ue)
            )));
        }
        if self.t_used >= self.t_tot {
            return Err(Error::Config(format!(
                "training uses {} of {} slots",
                self.t_used, self.t_tot
            )));
        }
        if !(self.sigma2_d > 0.0 && self.sigma2_d.is_finite()) {
            return Err(Error::Config(
                "downlink noise power must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `1 − T/T_tot`.
    pub fn prefactor(&self) -> f64 {
        1.0 - self.t_used as f64 / self.t_tot as f64
    }

    pub fn effective(&self, v: &CVector) -> Result<CMatrix> {
        effective_channel(&self.h_c, v, self.n_bs, self.n_ue)
    }

    /// Same scenario with `H_c` and `σ_d²` divided by a common scale.
    fn normalized(&self) -> Self {
        let mean = frob_sq(&self.h_c) / self.h_c.len().max(1) as f64;
        let c = if mean > 0.0 && mean.is_finite() {
            mean.sqrt()
        } else {
            1.0
        };
        Self {
            h_c: &self.h_c / C64::new(c, 0.0),
            sigma2_d: self.sigma2_d / (c * c),
            ..self.clone()
        }
    }
}

/// `(1 − T/T_tot)·log₂det(I + FᴴH_eᴴH_eF/σ_d²)` in bits/s/Hz.
pub fn spectral_efficiency(h_e: &CMatrix, f: &CMatrix, scen: &DownlinkScenario) -> Result<f64> {
    let hf = h_e * f;
    let n = f.ncols();
    let a = CMatrix::identity(n, n) + hf.ad_mul(&hf) / C64::new(scen.sigma2_d, 0.0);
    Ok(scen.prefactor() * log2_det_hpd(&a)?.max(0.0))
}

/// `E = I − FᴴH_eᴴW − WᴴH_eF + σ_d²WᴴW + WᴴH_eFFᴴH_eᴴW`.
pub fn mse_matrix(h_e: &CMatrix, f: &CMatrix, w: &CMatrix, scen: &DownlinkScenario) -> CMatrix {
    let n = f.ncols();
    let whf = w.ad_mul(&(h_e * f));
    let e = CMatrix::identity(n, n) - whf.adjoint() - &whf
        + w.ad_mul(w) * C64::new(scen.sigma2_d, 0.0)
        + &whf * whf.adjoint();
    hermitian_part(&e)
}

fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// MMSE receiver `W = (H_eFFᴴH_eᴴ + σ_d²I)⁻¹H_eF` and weight `Ω = E⁻¹`.
pub fn update_w_omega(
    h_e: &CMatrix,
    f: &CMatrix,
    scen: &DownlinkScenario,
) -> Result<(CMatrix, CMatrix)> {
    let hf = h_e * f;
    let n_ue = h_e.nrows();
    let cov = &hf * hf.adjoint() + CMatrix::identity(n_ue, n_ue) * C64::new(scen.sigma2_d, 0.0);
    let w = solve_hpd(&hermitian_part(&cov), &hf)?;
    let e = mse_matrix(h_e, f, &w, scen);
    let omega = hermitian_part(&inverse(&e)?);
    Ok((w, omega))
}

/// Outcome of the closed-form beamformer update.
#[derive(Debug, Clone)]
pub struct FUpdate {
    pub f: CMatrix,
    /// `ξ = ‖F̃‖_F⁻¹`; zero when `F̃ = 0`.
    pub xi: f64,
    pub degenerate: bool,
}

/// `F̃ = (H_eᴴWΩWᴴH_e + σ_d²ψI)⁻¹H_eᴴWΩ` with `ψ = tr(ΩWᴴW)`, normalized to unit Frobenius norm.
pub fn update_f(
    h_e: &CMatrix,
    w: &CMatrix,
    omega: &CMatrix,
    scen: &DownlinkScenario,
) -> Result<FUpdate> {
    let n_bs = h_e.ncols();
    let n_s = w.ncols();
    let psi = trace_re(&(omega * w.ad_mul(w)));
    let hw = h_e.ad_mul(w);
    let rhs = &hw * omega;
    let lhs =
        &rhs * hw.adjoint() + CMatrix::identity(n_bs, n_bs) * C64::new(scen.sigma2_d * psi, 0.0);
    let f_tilde = if rhs.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        CMatrix::zeros(n_bs, n_s)
    } else {
        solve_hpd(&hermitian_part(&lhs), &rhs)?
    };
    let norm = f_tilde.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Ok(FUpdate {
            f: CMatrix::zeros(n_bs, n_s),
            xi: 0.0,
            degenerate: true,
        });
    }
    Ok(FUpdate {
        f: f_tilde / C64::new(norm, 0.0),
        xi: 1.0 / norm,
        degenerate: false,
    })
}

fn t_matrix(h_e: &CMatrix, f: &CMatrix, omega_inv: &CMatrix, sigma2: f64) -> CMatrix {
    let hf = h_e * f;
    let n = f.ncols();
    let x = hf.ad_mul(&hf) / C64::new(sigma2, 0.0);
    omega_inv * (CMatrix::identity(n, n) + x)
}

/// `g₁ = tr((Ω⁻¹ + Ω⁻¹FᴴH_eᴴH_eF/σ_d²)⁻¹)` with `H_e` built from `(h_c, v)`.
pub fn g1_objective(
    v: &CVector,
    f: &CMatrix,
    omega: &CMatrix,
    scen: &DownlinkScenario,
) -> Result<f64> {
    let h_e = scen.effective(v)?;
    let omega_inv = inverse(omega)?;
    let t = t_matrix(&h_e, f, &omega_inv, scen.sigma2_d);
    Ok(trace_re(&inverse(&t)?))
}

/// Conjugate gradient `∂g₁/∂v*` = `−H_cᵀ·vec((H_eFT⁻²Ω⁻¹Fᴴ)ᵀ)/σ_d²`.
pub fn egrad_v(
    v: &CVector,
    f: &CMatrix,
    omega: &CMatrix,
    scen: &DownlinkScenario,
) -> Result<CVector> {
    let h_e = scen.effective(v)?;
    let omega_inv = inverse(omega)?;
    let t_inv = inverse(&t_matrix(&h_e, f, &omega_inv, scen.sigma2_d))?;
    let b = &h_e * f * &t_inv * &t_inv * omega_inv * f.adjoint();
    let bt = b.transpose();
    let m = CVector::from_column_slice(bt.as_slice());
    Ok(scen.h_c.tr_mul(&m) * C64::new(-1.0 / scen.sigma2_d, 0.0))
}

/// `tr(Ω·E_mmse) − ln det Ω` for the MMSE receiver of `(F, v)`.
pub fn g_objective(
    v: &CVector,
    f: &CMatrix,
    omega: &CMatrix,
    scen: &DownlinkScenario,
) -> Result<f64> {
    let g1 = g1_objective(v, f, omega, scen)?;
    Ok(g1 - log2_det_hpd(omega)? * std::f64::consts::LN_2)
}

#[derive(Debug, Clone)]
pub struct BeamformingSolution {
    pub f: CMatrix,
    pub v_d: CVector,
    pub w: CMatrix,
    pub omega: CMatrix,
    /// `g` at the start and after each outer iteration.
    pub g_trace: Vec<f64>,
    /// Spectral efficiency on the scenario channel, bits/s/Hz.
    pub se: f64,
    pub iterations: usize,
    /// Inner reflection-vector solves that ended on a failed line search.
    pub stalls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseOptions {
    /// Outer threshold ε₃ on the decrease of `g`.
    pub eps: f64,
    pub max_iters: usize,
    /// Inner circle-manifold CG settings for the `v_d` update.
    pub inner: CgOptions,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_iters: 200,
            inner: CgOptions {
                epsilon: 1e-3,
                max_iters: 200,
                ..CgOptions::default()
            },
        }
    }
}

/// Top `N_s` right singular vectors of `H_e`, scaled to unit Frobenius norm.
pub fn initial_beamformer(h_e: &CMatrix, n_s: usize) -> Result<CMatrix> {
    let d = svd(h_e)?;
    let n_bs = h_e.ncols();
    let mut f = CMatrix::zeros(n_bs, n_s);
    for k in 0..n_s.min(d.v.ncols()) {
        f.set_column(k, &d.v.column(k));
    }
    if d.v.ncols() < n_s {
        // Fewer singular directions than streams: pad with unused basis vectors.
        for k in d.v.ncols()..n_s {
            f[(k % n_bs, k)] = C64::new(1.0, 0.0);
        }
    }
    Ok(f / C64::new((n_s as f64).sqrt(), 0.0))
}

fn finish(
    scen: &DownlinkScenario,
    norm: &DownlinkScenario,
    f: CMatrix,
    v: CVector,
    g_trace: Vec<f64>,
    iterations: usize,
    stalls: usize,
) -> Result<BeamformingSolution> {
    let h_e = norm.effective(&v)?;
    let (w, omega) = update_w_omega(&h_e, &f, norm)?;
    let se = spectral_efficiency(&scen.effective(&v)?, &f, scen)?;
    // W from the normalized problem maps back by the channel scale.
    let c = (scen.sigma2_d / norm.sigma2_d).sqrt();
    Ok(BeamformingSolution {
        w: w / C64::new(c, 0.0),
        f,
        v_d: v,
        omega,
        g_trace,
        se,
        iterations,
        stalls,
    })
}

/// Alternates the `v_d` (circle-manifold CG on `g₁`), `(W, Ω)` and `F`
/// updates until `g` decreases by at most `opts.eps`.
pub fn alt_wmmse<R: Rng + ?Sized>(
    scen: &DownlinkScenario,
    opts: &WmmseOptions,
    rng: &mut R,
) -> Result<BeamformingSolution> {
    let v0 = random_unit_modulus(scen.m(), rng);
    alt_wmmse_from(scen, opts, v0)
}

/// [`alt_wmmse`] from a given initial reflection vector.
pub fn alt_wmmse_from(
    scen: &DownlinkScenario,
    opts: &WmmseOptions,
    v0: CVector,
) -> Result<BeamformingSolution> {
    scen.validate()?;
    if v0.len() != scen.m() {
        return Err(Error::Shape(
            "initial reflection vector has the wrong length".into(),
        ));
    }
    let norm = scen.normalized();
    let circle = Circle { len: scen.m() };
    let mut v = v0;
    let mut f = initial_beamformer(&norm.effective(&v)?, norm.n_s)?;
    let (_, mut omega) = update_w_omega(&norm.effective(&v)?, &f, &norm)?;
    let mut g_prev = g_objective(&v, &f, &omega, &norm)?;
    let mut g_trace = vec![g_prev];
    let mut stalls = 0;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;

        let run = cg_minimize(
            &circle,
            |x: &CVector| g1_objective(x, &f, &omega, &norm).unwrap_or(f64::INFINITY),
            |x: &CVector| {
                egrad_v(x, &f, &omega, &norm).expect("finite start point") * C64::new(2.0, 0.0)
            },
            v.clone(),
            &opts.inner,
        )?;
        stalls += usize::from(run.stalled);
        v = run.point;

        let h_e = norm.effective(&v)?;
        let (w, om) = update_w_omega(&h_e, &f, &norm)?;
        omega = om;
        let upd = update_f(&h_e, &w, &omega, &norm)?;
        if !upd.degenerate {
            f = upd.f;
        }

        let g = g_objective(&v, &f, &omega, &norm)?;
        g_trace.push(g);
        let decrease = g_prev - g;
        g_prev = g;
        if decrease <= opts.eps {
            break;
        }
    }
    finish(scen, &norm, f, v, g_trace, iterations, stalls)
}

/// WMMSE beamformer for a fixed reflection vector (only `W`, `Ω`, `F` are updated).
pub fn wmmse_fixed_v(
    scen: &DownlinkScenario,
    v: &CVector,
    opts: &WmmseOptions,
) -> Result<BeamformingSolution> {
    scen.validate()?;
    let norm = scen.normalized();
    let h_e = norm.effective(v)?;
    let mut f = initial_beamformer(&h_e, norm.n_s)?;
    let (_, mut omega) = update_w_omega(&h_e, &f, &norm)?;
    let mut g_prev = g_objective(v, &f, &omega, &norm)?;
    let mut g_trace = vec![g_prev];
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let (w, om) = update_w_omega(&h_e, &f, &norm)?;
        omega = om;
        let upd = update_f(&h_e, &w, &omega, &norm)?;
        if !upd.degenerate {
            f = upd.f;
        }
        let g = g_objective(v, &f, &omega, &norm)?;
        g_trace.push(g);
        let decrease = g_prev - g;
        g_prev = g;
        if decrease <= opts.eps {
            break;
        }
    }
    finish(scen, &norm, f, v.clone(), g_trace, iterations, 0)
}
