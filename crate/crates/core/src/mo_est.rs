//! MO-EST: alternating fixed-rank manifold optimization for the IRS→BS
//! channel `Ĝ` and the UE→IRS channel `Ĥ` from uplink pilots, with an
//! ℓ1 penalty on their angular-domain coefficients.
//!
//! The received pilots are scaled to unit mean power per entry before the
//! optimization runs; regularization weights and the stopping thresholds
//! refer to that normalized objective. The returned `Ĝ` is scaled back, so
//! `Ĥᵀ ⊙ Ĝ` estimates the cascaded channel in physical units.

use rand::Rng;

use crate::channel::{Dictionaries, PilotBlock};
use crate::error::{shape_err, Error, Result};
use crate::manifold::{cg_minimize, CgOptions, FixedRank, FixedRankPoint};
use crate::numerics::{frob_sq, khatri_rao, CMatrix, C64};

/// Angular coefficients smaller than this get a zero subgradient.
pub const L1_KINK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MoEstConfig {
    /// ℓ1 weights on the normalized objective; `None` picks `10⁻²·σ²·T`.
    pub mu_g: Option<f64>,
    pub mu_h: Option<f64>,
    pub p_hat: usize,
    pub q_hat: usize,
    /// Inner CG threshold ε₁.
    pub eps_inner: f64,
    /// Outer alternating-minimization threshold ε₂.
    pub eps_outer: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl MoEstConfig {
    pub fn new(p_hat: usize, q_hat: usize) -> Self {
        Self {
            mu_g: None,
            mu_h: None,
            p_hat,
            q_hat,
            eps_inner: 1e-3,
            eps_outer: 1e-3,
            max_outer: 50,
            max_inner: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for mu in [self.mu_g, self.mu_h].into_iter().flatten() {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::Config(
                    "regularization weights must be finite and non-negative".into(),
                ));
            }
        }
        if !(self.eps_inner > 0.0 && self.eps_outer > 0.0) {
            return Err(Error::Config(
                "convergence thresholds must be positive".into(),
            ));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Config("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MoEstResult {
    pub g_hat: FixedRankPoint,
    pub h_hat: FixedRankPoint,
    /// Normalized objective before the first outer iteration and after each one.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Inner CG runs that ended on a failed line search.
    pub stalls: usize,
    /// Regularization weights actually used.
    pub mu_g: f64,
    pub mu_h: f64,
    /// Factor the received pilots were divided by.
    pub scale: f64,
}

impl MoEstResult {
    /// `Ĥᵀ ⊙ Ĝ`.
    pub fn cascaded(&self) -> CMatrix {
        khatri_rao(&self.h_hat.dense.transpose(), &self.g_hat.dense).expect("factor shapes agree")
    }
}

/// Pilot matrices `S = [s₁..s_T]`, `V = [v₁..v_T]` and `R = [r₁..r_T]`.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub s: CMatrix,
    pub v: CMatrix,
    pub r: CMatrix,
}

impl TrainingData {
    pub fn from_pilots(p: &PilotBlock) -> Result<Self> {
        let t = p.slots();
        if t == 0 {
            return Err(Error::Config(
                "at least one training slot is required".into(),
            ));
        }
        if p.r.ncols() != t || p.v.len() != t {
            return shape_err("pilot block slot counts disagree");
        }
        let s = CMatrix::from_columns(&p.s);
        let v = CMatrix::from_columns(&p.v);
        Ok(Self {
            s,
            v,
            r: p.r.clone(),
        })
    }

    pub fn slots(&self) -> usize {
        self.s.ncols()
    }

    /// `F = [Φ₁Ĥs₁ .. Φ_TĤs_T]`.
    pub fn f_matrix(&self, h_hat: &CMatrix) -> CMatrix {
        (h_hat * &self.s).component_mul(&self.v)
    }

    /// `R − Ĝ·F`.
    pub fn residual(&self, g_hat: &CMatrix, h_hat: &CMatrix) -> CMatrix {
        &self.r - g_hat * self.f_matrix(h_hat)
    }
}

fn l1_coeffs(left: &CMatrix, x: &CMatrix, right: &CMatrix) -> CMatrix {
    left.adjoint() * x * right
}

fn l1_norm(c: &CMatrix) -> f64 {
    c.iter().map(|z| z.norm()).sum()
}

fn phase_of(c: &CMatrix) -> CMatrix {
    c.map(|z| {
        let n = z.norm();
        if n < L1_KINK {
            C64::new(0.0, 0.0)
        } else {
            z / n
        }
    })
}

fn check_shapes(
    g_hat: &CMatrix,
    h_hat: &CMatrix,
    data: &TrainingData,
    dict: &Dictionaries,
) -> Result<()> {
    let n_bs = data.r.nrows();
    let m = data.v.nrows();
    let n_ue = data.s.nrows();
    if g_hat.shape() != (n_bs, m) || h_hat.shape() != (m, n_ue) {
        return shape_err("channel estimates do not match the pilot dimensions");
    }
    if dict.a_bs.nrows() != n_bs || dict.a_i.nrows() != m || dict.a_ue.nrows() != n_ue {
        return shape_err("dictionaries do not match the pilot dimensions");
    }
    Ok(())
}

/// `Σ‖r_t − ĜΦ_tĤs_t‖² + μ_G‖A_BSᴴĜA_I‖₁ + μ_H‖A_IᴴĤA_UE‖₁`.
pub fn objective_f(
    g_hat: &CMatrix,
    h_hat: &CMatrix,
    data: &TrainingData,
    dict: &Dictionaries,
    mu_g: f64,
    mu_h: f64,
) -> Result<f64> {
    check_shapes(g_hat, h_hat, data, dict)?;
    let mut f = frob_sq(&data.residual(g_hat, h_hat));
    if mu_g != 0.0 {
        f += mu_g * l1_norm(&l1_coeffs(&dict.a_bs, g_hat, &dict.a_i));
    }
    if mu_h != 0.0 {
        f += mu_h * l1_norm(&l1_coeffs(&dict.a_i, h_hat, &dict.a_ue));
    }
    Ok(f)
}

/// Conjugate gradient `∂f₁/∂X*` of the `Ĝ` subproblem:
/// `−RFᴴ + XFFᴴ + (μ_G/2)·A_BS·Y·A_Iᴴ`.
pub fn egrad_g(
    x: &CMatrix,
    r_mat: &CMatrix,
    f_mat: &CMatrix,
    mu_g: f64,
    dict: &Dictionaries,
) -> CMatrix {
    let mut grad = -(r_mat - x * f_mat) * f_mat.adjoint();
    if mu_g != 0.0 {
        let y = phase_of(&l1_coeffs(&dict.a_bs, x, &dict.a_i));
        grad += &dict.a_bs * y * dict.a_i.adjoint() * C64::new(mu_g / 2.0, 0.0);
    }
    grad
}

/// Conjugate gradient `∂f₂/∂Ĥ*` of the `Ĥ` subproblem:
/// `(μ_H/2)·A_I·Y₂·A_UEᴴ + Σ_t Φ_tᴴĜᴴ(ĜΦ_tĤs_t − r_t)s_tᴴ`.
pub fn egrad_h(
    h_hat: &CMatrix,
    g_hat: &CMatrix,
    data: &TrainingData,
    mu_h: f64,
    dict: &Dictionaries,
) -> CMatrix {
    let e = data.residual(g_hat, h_hat);
    let back = (g_hat.adjoint() * e).component_mul(&data.v.map(|z| z.conj()));
    let mut grad = -(back * data.s.adjoint());
    if mu_h != 0.0 {
        let y = phase_of(&l1_coeffs(&dict.a_i, h_hat, &dict.a_ue));
        grad += &dict.a_i * y * dict.a_ue.adjoint() * C64::new(mu_h / 2.0, 0.0);
    }
    grad
}

/// Normalizes the pilots, returning the scaled data and the scale `ρ`.
pub fn normalize(data: &TrainingData) -> (TrainingData, f64) {
    let entries = data.r.len() as f64;
    let mut rho = (frob_sq(&data.r) / entries).sqrt();
    if !(rho > 0.0 && rho.is_finite()) {
        rho = 1.0;
    }
    let scaled = TrainingData {
        s: data.s.clone(),
        v: data.v.clone(),
        r: &data.r / C64::new(rho, 0.0),
    };
    (scaled, rho)
}

/// Default ℓ1 weight `10⁻²·σ²·T` with `σ²` in normalized units.
pub fn default_mu(noise_power: f64, scale: f64, slots: usize) -> f64 {
    1e-2 * noise_power / (scale * scale) * slots as f64
}

/// Runs MO-EST on a pilot block.
pub fn mo_est<R: Rng + ?Sized>(
    pilots: &PilotBlock,
    dict: &Dictionaries,
    cfg: &MoEstConfig,
    rng: &mut R,
) -> Result<MoEstResult> {
    cfg.validate()?;
    let raw = TrainingData::from_pilots(pilots)?;
    let (data, rho) = normalize(&raw);
    let n_bs = data.r.nrows();
    let m = data.v.nrows();
    let n_ue = data.s.nrows();
    let g_manifold = FixedRank::new(n_bs, m, cfg.p_hat)?;
    let h_manifold = FixedRank::new(m, n_ue, cfg.q_hat)?;
    let t = data.slots();
    let mu_g = cfg
        .mu_g
        .unwrap_or_else(|| default_mu(pilots.noise_power, rho, t));
    let mu_h = cfg
        .mu_h
        .unwrap_or_else(|| default_mu(pilots.noise_power, rho, t));

    let mut h_hat = FixedRankPoint::random(m, n_ue, cfg.q_hat, rng)?;
    let mut g_hat = FixedRankPoint::random(n_bs, m, cfg.p_hat, rng)?;
    check_shapes(&g_hat.dense, &h_hat.dense, &data, dict)?;

    let inner = CgOptions {
        epsilon: cfg.eps_inner,
        max_iters: cfg.max_inner,
        ..CgOptions::default()
    };
    let two = C64::new(2.0, 0.0);
    let mut f_prev = objective_f(&g_hat.dense, &h_hat.dense, &data, dict, mu_g, mu_h)?;
    let mut trace = vec![f_prev];
    let mut stalls = 0;
    let mut iterations = 0;

    while iterations < cfg.max_outer {
        iterations += 1;

        let f_mat = data.f_matrix(&h_hat.dense);
        let h_l1 = mu_h * l1_norm(&l1_coeffs(&dict.a_i, &h_hat.dense, &dict.a_ue));
        let g_run = cg_minimize(
            &g_manifold,
            |x: &FixedRankPoint| {
                let mut f = frob_sq(&(&data.r - &x.dense * &f_mat)) + h_l1;
                if mu_g != 0.0 {
                    f += mu_g * l1_norm(&l1_coeffs(&dict.a_bs, &x.dense, &dict.a_i));
                }
                f
            },
            |x: &FixedRankPoint| egrad_g(&x.dense, &data.r, &f_mat, mu_g, dict) * two,
            g_hat.clone(),
            &inner,
        )?;
        stalls += usize::from(g_run.stalled);
        g_hat = g_run.point;

        let g_dense = g_hat.dense.clone();
        let h_run = cg_minimize(
            &h_manifold,
            |x: &FixedRankPoint| {
                objective_f(&g_dense, &x.dense, &data, dict, mu_g, mu_h).expect("shapes checked")
            },
            |x: &FixedRankPoint| egrad_h(&x.dense, &g_dense, &data, mu_h, dict) * two,
            h_hat.clone(),
            &inner,
        )?;
        stalls += usize::from(h_run.stalled);
        h_hat = h_run.point;

        let f = objective_f(&g_hat.dense, &h_hat.dense, &data, dict, mu_g, mu_h)?;
        trace.push(f);
        let decrease = f_prev - f;
        f_prev = f;
        if decrease <= cfg.eps_outer {
            break;
        }
    }

    Ok(MoEstResult {
        g_hat: g_hat.scaled(rho),
        h_hat,
        trace,
        iterations,
        stalls,
        mu_g,
        mu_h,
        scale: rho,
    })
}

/// Picks the `(μ_G, μ_H)` pair from `grid` whose estimate, fitted on the
/// training slots, leaves the smallest residual on held-out slots (every
/// fifth slot, at least one). Ties go to the earliest grid entry.
pub fn tune_mu<R: Rng + Clone>(
    pilots: &PilotBlock,
    dict: &Dictionaries,
    base: &MoEstConfig,
    grid: &[(f64, f64)],
    rng: &mut R,
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::Config("the μ grid is empty".into()));
    }
    let t = pilots.slots();
    if t < 2 {
        return Err(Error::Config(
            "tuning needs at least two training slots".into(),
        ));
    }
    let mut held: Vec<usize> = (0..t).filter(|i| i % 5 == 4).collect();
    if held.is_empty() {
        held.push(t - 1);
    }
    let train: Vec<usize> = (0..t).filter(|i| !held.contains(i)).collect();
    let train_block = pilots.select(&train);
    let held_data = TrainingData::from_pilots(&pilots.select(&held))?;

    let mut best: Option<(f64, (f64, f64))> = None;
    for &(mu_g, mu_h) in grid {
        let cfg = MoEstConfig {
            mu_g: Some(mu_g),
            mu_h: Some(mu_h),
            ..base.clone()
        };
        // Every candidate starts from the same random initialization.
        let mut local = rng.clone();
        let est = mo_est(&train_block, dict, &cfg, &mut local)?;
        let resid = frob_sq(&held_data.residual(&est.g_hat.dense, &est.h_hat.dense));
        if best.is_none_or(|(b, _)| resid < b) {
            best = Some((resid, (mu_g, mu_h)));
        }
    }
    let (_, pair) = best.expect("grid is non-empty");
    // Advance the caller's generator once so repeated calls differ.
    let _: u64 = rng.random();
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        build_dictionaries, random_training, sample_paths, simulate_uplink, synth_channels,
        ReflectionPattern, SystemGeometry,
    };
    use crate::numerics::{complex_normal_matrix, inner_re, nmse};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small() -> SystemGeometry {
        SystemGeometry {
            n_bs: 8,
            n_ue: 4,
            m_y: 2,
            m_z: 4,
            g_bs: 8,
            g_ue: 4,
            g_y: 2,
            g_z: 4,
            d_bi: 150.0,
            d_iu: 10.0,
        }
    }

    fn setup(
        seed: u64,
        t: usize,
        sigma2: f64,
    ) -> (crate::channel::ChannelRealization, PilotBlock, Dictionaries) {
        let geom = small();
        let mut r = rng(seed);
        let paths = sample_paths(&geom, 2, 2, &mut r, false).unwrap();
        let ch = synth_channels(&geom, &paths).unwrap();
        let (s, v) = random_training(&geom, t, 1.0, ReflectionPattern::Random, &mut r);
        let pb = simulate_uplink(&ch, &s, &v, sigma2, &mut r).unwrap();
        (ch, pb, build_dictionaries(&geom).unwrap())
    }

    #[test]
    fn objective_examples() {
        let (ch, pb, d) = setup(1, 10, 0.0);
        let data = TrainingData::from_pilots(&pb).unwrap();
        let at_truth = objective_f(&ch.g, &ch.h, &data, &d, 0.0, 0.0).unwrap();
        assert!(at_truth <= 1e-18 * frob_sq(&pb.r));
        let zero = CMatrix::zeros(8, 8);
        let f0 = objective_f(&zero, &ch.h, &data, &d, 0.0, 0.0).unwrap();
        assert!((f0 - frob_sq(&pb.r)).abs() <= 1e-12 * f0);
    }

    #[test]
    fn objective_matches_slotwise_sum() {
        let (_, pb, d) = setup(2, 10, 1e-22);
        let data = TrainingData::from_pilots(&pb).unwrap();
        let mut g = rng(3);
        let gh = complex_normal_matrix(8, 8, 1e-10, &mut g);
        let hh = complex_normal_matrix(8, 4, 1e-6, &mut g);
        let mu_g = 0.3e-16;
        let mut oracle = 0.0;
        for t in 0..10 {
            let phi = CMatrix::from_diagonal(&pb.v[t]);
            let e = pb.r.column(t) - &gh * phi * &hh * &pb.s[t];
            oracle += e.norm_squared();
        }
        let c = d.a_bs.adjoint() * &gh * &d.a_i;
        oracle += mu_g * c.iter().map(|z| z.norm()).sum::<f64>();
        let f = objective_f(&gh, &hh, &data, &d, mu_g, 0.0).unwrap();
        assert!((f - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn egrad_g_examples() {
        let (ch, pb, d) = setup(4, 10, 0.0);
        let data = TrainingData::from_pilots(&pb).unwrap();
        let f_mat = data.f_matrix(&ch.h);
        let at_zero = egrad_g(&CMatrix::zeros(8, 8), &data.r, &f_mat, 0.0, &d);
        assert!((at_zero + &data.r * f_mat.adjoint()).camax() < 1e-30);
        let fit = &ch.g * &f_mat;
        let perfect = egrad_g(&ch.g, &fit, &f_mat, 0.0, &d);
        assert!(perfect.camax() <= 1e-12 * (&fit * f_mat.adjoint()).camax());
    }

    #[test]
    fn egrad_h_examples() {
        let (ch, pb, d) = setup(5, 10, 0.0);
        let data = TrainingData::from_pilots(&pb).unwrap();
        let grad = egrad_h(&ch.h, &ch.g, &data, 0.0, &d);
        let scale = (ch.g.adjoint() * &data.r * data.s.adjoint()).camax();
        assert!(grad.camax() <= 1e-12 * scale);

        let hh = complex_normal_matrix(8, 4, 1.0, &mut rng(6));
        let grad = egrad_h(&hh, &CMatrix::zeros(8, 8), &data, 0.7, &d);
        let y = phase_of(&(d.a_i.adjoint() * &hh * &d.a_ue));
        let expected = &d.a_i * y * d.a_ue.adjoint() * C64::new(0.35, 0.0);
        assert!((grad - expected).camax() < 1e-12);
    }

    fn fd_check(cost: impl Fn(&CMatrix) -> f64, grad: &CMatrix, x: &CMatrix, seed: u64) {
        let mut g = rng(seed);
        for _ in 0..20 {
            let dir = complex_normal_matrix(x.nrows(), x.ncols(), 1.0, &mut g);
            let dir = &dir * C64::new(x.norm() / dir.norm(), 0.0);
            let h = 1e-6;
            let fd = (cost(&(x + &dir * C64::new(h, 0.0))) - cost(&(x - &dir * C64::new(h, 0.0))))
                / (2.0 * h);
            let an = 2.0 * inner_re(grad, &dir);
            assert!((fd - an).abs() <= 1e-5 * an.abs(), "{fd} vs {an}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (_, pb, d) = setup(7, 10, 1e-22);
        let (data, _) = normalize(&TrainingData::from_pilots(&pb).unwrap());
        let mut g = rng(8);
        let gh = complex_normal_matrix(8, 8, 1.0, &mut g);
        let hh = complex_normal_matrix(8, 4, 1.0, &mut g);
        let f_mat = data.f_matrix(&hh);
        let grad = egrad_g(&gh, &data.r, &f_mat, 0.5, &d);
        fd_check(
            |x| objective_f(x, &hh, &data, &d, 0.5, 0.0).unwrap(),
            &grad,
            &gh,
            9,
        );
        let grad = egrad_h(&hh, &gh, &data, 0.5, &d);
        fd_check(
            |x| objective_f(&gh, x, &data, &d, 0.0, 0.5).unwrap(),
            &grad,
            &hh,
            10,
        );
    }

    #[test]
    fn noiseless_estimation_is_accurate_and_monotone() {
        let (ch, pb, d) = setup(11, 60, 0.0);
        let est = mo_est(&pb, &d, &MoEstConfig::new(2, 2), &mut rng(12)).unwrap();
        for w in est.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert_eq!(est.g_hat.rank(), 2);
        let err = nmse(&est.cascaded(), &ch.h_c);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn nmse_is_invariant_to_counter_scaling() {
        let (ch, pb, d) = setup(13, 30, 0.0);
        let est = mo_est(&pb, &d, &MoEstConfig::new(2, 2), &mut rng(14)).unwrap();
        let swapped = khatri_rao(
            &est.h_hat.scaled(3.0).dense.transpose(),
            &est.g_hat.scaled(1.0 / 3.0).dense,
        )
        .unwrap();
        let a = nmse(&est.cascaded(), &ch.h_c);
        let b = nmse(&swapped, &ch.h_c);
        assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
    }

    #[test]
    fn rank_bounds_are_enforced() {
        let (_, pb, d) = setup(15, 10, 0.0);
        assert!(mo_est(&pb, &d, &MoEstConfig::new(9, 2), &mut rng(0)).is_err());
        let mut bad = MoEstConfig::new(2, 2);
        bad.mu_g = Some(-1.0);
        assert!(mo_est(&pb, &d, &bad, &mut rng(0)).is_err());
    }

    #[test]
    fn tune_mu_examples() {
        let (_, pb, d) = setup(16, 20, 0.0);
        let base = MoEstConfig::new(2, 2);
        assert_eq!(
            tune_mu(&pb, &d, &base, &[(0.0, 0.0)], &mut rng(1)).unwrap(),
            (0.0, 0.0)
        );
        assert!(tune_mu(&pb, &d, &base, &[], &mut rng(1)).is_err());
        let grid = [(0.0, 0.0), (1e-3, 1e-3), (1e-1, 1e-1)];
        let a = tune_mu(&pb, &d, &base, &grid, &mut rng(2)).unwrap();
        let b = tune_mu(&pb, &d, &base, &grid, &mut rng(2)).unwrap();
        assert_eq!(a, b);
    }
}
