//! Saleh-Valenzuela channel synthesis, angular dictionaries and the uplink
//! training observation model of an IRS-assisted point-to-point MIMO link.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{
    cis, commute_vec, complex_normal, khatri_rao, kron, kron_vec, mat, CMatrix, CVector, C64,
};

/// Minimum separation between spatial frequencies of distinct departure (and arrival) directions.
pub const MIN_FREQ_SEPARATION: f64 = 1e-6;

/// Array sizes, dictionary resolutions and link distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemGeometry {
    pub n_bs: usize,
    pub n_ue: usize,
    pub m_y: usize,
    pub m_z: usize,
    pub g_bs: usize,
    pub g_ue: usize,
    pub g_y: usize,
    pub g_z: usize,
    /// BS–IRS distance in metres.
    pub d_bi: f64,
    /// IRS–UE distance in metres.
    pub d_iu: f64,
}

impl SystemGeometry {
    /// 16-antenna BS, 8-antenna UE, 4×4 IRS, critically sampled dictionaries.
    pub fn desk() -> Self {
        Self {
            n_bs: 16,
            n_ue: 8,
            m_y: 4,
            m_z: 4,
            g_bs: 16,
            g_ue: 8,
            g_y: 4,
            g_z: 4,
            d_bi: 150.0,
            d_iu: 10.0,
        }
    }

    /// 36-antenna BS, 16-antenna UE, 6×6 IRS.
    pub fn paper_scale() -> Self {
        Self {
            n_bs: 36,
            n_ue: 16,
            m_y: 6,
            m_z: 6,
            g_bs: 36,
            g_ue: 16,
            g_y: 6,
            g_z: 6,
            d_bi: 150.0,
            d_iu: 10.0,
        }
    }

    pub fn m(&self) -> usize {
        self.m_y * self.m_z
    }

    pub fn g_i(&self) -> usize {
        self.g_y * self.g_z
    }

    /// Same arrays with every dictionary resolution equal to its array size.
    pub fn critically_sampled(&self) -> Self {
        Self {
            g_bs: self.n_bs,
            g_ue: self.n_ue,
            g_y: self.m_y,
            g_z: self.m_z,
            ..self.clone()
        }
    }

    pub fn is_critically_sampled(&self) -> bool {
        self.g_bs == self.n_bs
            && self.g_ue == self.n_ue
            && self.g_y == self.m_y
            && self.g_z == self.m_z
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_bs", self.n_bs),
            ("n_ue", self.n_ue),
            ("m_y", self.m_y),
            ("m_z", self.m_z),
            ("g_bs", self.g_bs),
            ("g_ue", self.g_ue),
            ("g_y", self.g_y),
            ("g_z", self.g_z),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.d_bi > 0.0 && self.d_iu > 0.0) {
            return Err(Error::Config("distances must be positive".into()));
        }
        Ok(())
    }

    fn validate_dictionaries(&self) -> Result<()> {
        self.validate()?;
        let pairs = [
            ("g_bs", self.g_bs, "n_bs", self.n_bs),
            ("g_ue", self.g_ue, "n_ue", self.n_ue),
            ("g_y", self.g_y, "m_y", self.m_y),
            ("g_z", self.g_z, "m_z", self.m_z),
        ];
        for (gn, g, nn, n) in pairs {
            if g < n {
                return Err(Error::Config(format!(
                    "{gn} = {g} is smaller than {nn} = {n}"
                )));
            }
        }
        Ok(())
    }
}

/// Large-scale path gain `10^(−6.14 − 2·log10 d)`.
pub fn pathloss(distance_m: f64) -> f64 {
    10f64.powf(-6.14 - 2.0 * distance_m.log10())
}

/// Half-wavelength ULA response `f(u, n)`, entry `k` is `exp(jπku)/√n`.
pub fn steering_ula(u: f64, n: usize) -> CVector {
    let scale = 1.0 / (n as f64).sqrt();
    CVector::from_fn(n, |k, _| cis(PI * k as f64 * u) * scale)
}

/// IRS response from the two spatial frequencies `(sinθ·sinφ, cosφ)`.
pub fn steering_irs_freq(u_y: f64, u_z: f64, m_y: usize, m_z: usize) -> CVector {
    kron_vec(&steering_ula(u_y, m_y), &steering_ula(u_z, m_z))
}

/// IRS response for azimuth `theta` and elevation `phi`.
pub fn steering_irs(theta: f64, phi: f64, m_y: usize, m_z: usize) -> CVector {
    steering_irs_freq(theta.sin() * phi.sin(), phi.cos(), m_y, m_z)
}

/// Maps a spatial frequency onto the period `[−1, 1)`.
pub fn wrap_freq(u: f64) -> f64 {
    let w = (u + 1.0).rem_euclid(2.0) - 1.0;
    if w >= 1.0 {
        -1.0
    } else {
        w
    }
}

/// Grid value `−1 + 2k/g`.
pub fn grid_value(k: usize, g: usize) -> f64 {
    -1.0 + 2.0 * k as f64 / g as f64
}

/// Index of the grid point nearest to `u` (modulo 2).
pub fn nearest_grid_index(u: f64, g: usize) -> usize {
    let pos = (wrap_freq(u) + 1.0) * g as f64 / 2.0;
    (pos.round() as usize) % g
}

/// Grid index of `u` when it is (to 1e-9) a grid point.
pub fn grid_index(u: f64, g: usize) -> Option<usize> {
    let k = nearest_grid_index(u, g);
    let d = wrap_freq(u - grid_value(k, g));
    (d.abs() < 1e-9).then_some(k)
}

/// One path of the IRS→BS channel `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsIrsPath {
    pub gain: C64,
    /// Arrival angle θ_r at the BS.
    pub aoa: f64,
    /// Departure azimuth θ_t and elevation φ_t at the IRS.
    pub aod_azimuth: f64,
    pub aod_elevation: f64,
    /// Spatial frequency at the BS, `cos θ_r` (possibly snapped).
    pub u_bs: f64,
    /// Spatial frequencies at the IRS, `(sinθ_t·sinφ_t, cosφ_t)` (possibly snapped).
    pub u_irs: (f64, f64),
}

/// One path of the UE→IRS channel `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct IrsUePath {
    pub gain: C64,
    /// Arrival azimuth ψ_r and elevation φ_r at the IRS.
    pub aoa_azimuth: f64,
    pub aoa_elevation: f64,
    /// Departure angle ψ_t at the UE.
    pub aod: f64,
    pub u_irs: (f64, f64),
    pub u_ue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub g_paths: Vec<BsIrsPath>,
    pub h_paths: Vec<IrsUePath>,
}

impl PathSet {
    pub fn p(&self) -> usize {
        self.g_paths.len()
    }

    pub fn q(&self) -> usize {
        self.h_paths.len()
    }
}

fn uniform_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // (0, 2π]
    TAU * (1.0 - rng.random::<f64>())
}

fn snap(u: f64, g: usize, on_grid: bool) -> f64 {
    if on_grid {
        grid_value(nearest_grid_index(u, g), g)
    } else {
        wrap_freq(u)
    }
}

fn freq_close(a: f64, b: f64) -> bool {
    wrap_freq(a - b).abs() < MIN_FREQ_SEPARATION
}

fn pair_close(a: (f64, f64), b: (f64, f64)) -> bool {
    freq_close(a.0, b.0) && freq_close(a.1, b.1)
}

const MAX_RESAMPLES: usize = 10_000;

/// Draws `p` paths for `G` and `q` paths for `H`.
///
/// The first path of each channel is the LoS component with variance `τ`
/// from [`pathloss`]; the others have variance `10^(−0.5)·τ`. All angles
/// are uniform on `(0, 2π]`. With `on_grid` every spatial frequency is
/// snapped to the nearest point of the geometry's dictionary grids.
/// Arrival and departure frequencies are kept pairwise distinct within each
/// channel.
pub fn sample_paths<R: Rng + ?Sized>(
    geom: &SystemGeometry,
    p: usize,
    q: usize,
    rng: &mut R,
    on_grid: bool,
) -> Result<PathSet> {
    geom.validate()?;
    let m = geom.m();
    if p == 0 || q == 0 {
        return Err(Error::Config("path counts must be at least 1".into()));
    }
    if p > geom.n_bs.min(m) {
        return Err(Error::Config(format!(
            "P = {p} exceeds min(N_BS, M) = {}",
            geom.n_bs.min(m)
        )));
    }
    if q > geom.n_ue.min(m) {
        return Err(Error::Config(format!(
            "Q = {q} exceeds min(N_UE, M) = {}",
            geom.n_ue.min(m)
        )));
    }
    if on_grid && (p > geom.g_bs || q > geom.g_ue || p.max(q) > geom.g_i()) {
        return Err(Error::Config(
            "not enough grid points for distinct on-grid paths".into(),
        ));
    }

    let tau_bi = pathloss(geom.d_bi);
    let tau_iu = pathloss(geom.d_iu);
    let nlos = 10f64.powf(-0.5);

    let mut g_paths: Vec<BsIrsPath> = Vec::with_capacity(p);
    for idx in 0..p {
        let var = if idx == 0 { tau_bi } else { nlos * tau_bi };
        let gain = complex_normal(var, rng);
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_RESAMPLES {
                return Err(Error::Numerical(
                    "could not draw distinct path directions".into(),
                ));
            }
            let aoa = uniform_angle(rng);
            let theta_t = uniform_angle(rng);
            let phi_t = uniform_angle(rng);
            let u_bs = snap(aoa.cos(), geom.g_bs, on_grid);
            let u_irs = (
                snap(theta_t.sin() * phi_t.sin(), geom.g_y, on_grid),
                snap(phi_t.cos(), geom.g_z, on_grid),
            );
            let clash = g_paths
                .iter()
                .any(|o| freq_close(o.u_bs, u_bs) || pair_close(o.u_irs, u_irs));
            if !clash {
                g_paths.push(BsIrsPath {
                    gain,
                    aoa,
                    aod_azimuth: theta_t,
                    aod_elevation: phi_t,
                    u_bs,
                    u_irs,
                });
                break;
            }
        }
    }

    let mut h_paths: Vec<IrsUePath> = Vec::with_capacity(q);
    for idx in 0..q {
        let var = if idx == 0 { tau_iu } else { nlos * tau_iu };
        let gain = complex_normal(var, rng);
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_RESAMPLES {
                return Err(Error::Numerical(
                    "could not draw distinct path directions".into(),
                ));
            }
            let psi_r = uniform_angle(rng);
            let phi_r = uniform_angle(rng);
            let psi_t = uniform_angle(rng);
            let u_irs = (
                snap(psi_r.sin() * phi_r.sin(), geom.g_y, on_grid),
                snap(phi_r.cos(), geom.g_z, on_grid),
            );
            let u_ue = snap(psi_t.cos(), geom.g_ue, on_grid);
            let clash = h_paths
                .iter()
                .any(|o| freq_close(o.u_ue, u_ue) || pair_close(o.u_irs, u_irs));
            if !clash {
                h_paths.push(IrsUePath {
                    gain,
                    aoa_azimuth: psi_r,
                    aoa_elevation: phi_r,
                    aod: psi_t,
                    u_irs,
                    u_ue,
                });
                break;
            }
        }
    }

    Ok(PathSet { g_paths, h_paths })
}

/// Dense channels together with the paths they were built from.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// IRS→BS, `N_BS × M`.
    pub g: CMatrix,
    /// UE→IRS, `M × N_UE`.
    pub h: CMatrix,
    pub paths: PathSet,
    /// Cascaded channel `Hᵀ ⊙ G`, `N_BS·N_UE × M`.
    pub h_c: CMatrix,
}

/// Builds `G` and `H` from a path set.
pub fn synth_channels(geom: &SystemGeometry, paths: &PathSet) -> Result<ChannelRealization> {
    geom.validate()?;
    let m = geom.m();
    let p = paths.p() as f64;
    let q = paths.q() as f64;

    let mut g = CMatrix::zeros(geom.n_bs, m);
    let g_scale = ((geom.n_bs * m) as f64 / p).sqrt();
    for path in &paths.g_paths {
        let a_r = steering_ula(path.u_bs, geom.n_bs);
        let a_t = steering_irs_freq(path.u_irs.0, path.u_irs.1, geom.m_y, geom.m_z);
        g += (a_r * a_t.adjoint()) * (path.gain * g_scale);
    }

    let mut h = CMatrix::zeros(m, geom.n_ue);
    let h_scale = ((geom.n_ue * m) as f64 / q).sqrt();
    for path in &paths.h_paths {
        let a_r = steering_irs_freq(path.u_irs.0, path.u_irs.1, geom.m_y, geom.m_z);
        let a_t = steering_ula(path.u_ue, geom.n_ue);
        h += (a_r * a_t.adjoint()) * (path.gain * h_scale);
    }

    let h_c = khatri_rao(&h.transpose(), &g)?;
    Ok(ChannelRealization {
        g,
        h,
        paths: paths.clone(),
        h_c,
    })
}

/// Cascaded channel `Hᵀ ⊙ G`.
pub fn cascaded(ch: &ChannelRealization) -> CMatrix {
    cascaded_from(&ch.g, &ch.h)
}

pub fn cascaded_from(g: &CMatrix, h: &CMatrix) -> CMatrix {
    khatri_rao(&h.transpose(), g).expect("G and H share the IRS dimension")
}

/// Angular dictionaries over uniform grids `{−1 + 2i/G}`.
#[derive(Debug, Clone)]
pub struct Dictionaries {
    pub a_bs: CMatrix,
    pub a_ue: CMatrix,
    pub a_y: CMatrix,
    pub a_z: CMatrix,
    /// `A_y ⊗ A_z`.
    pub a_i: CMatrix,
    pub grid_bs: Vec<f64>,
    pub grid_ue: Vec<f64>,
    pub grid_y: Vec<f64>,
    pub grid_z: Vec<f64>,
    pub geometry: SystemGeometry,
}

fn ula_dictionary(n: usize, g: usize) -> (CMatrix, Vec<f64>) {
    let grid: Vec<f64> = (0..g).map(|k| grid_value(k, g)).collect();
    let mut a = CMatrix::zeros(n, g);
    for (k, &u) in grid.iter().enumerate() {
        a.set_column(k, &steering_ula(u, n));
    }
    (a, grid)
}

pub fn build_dictionaries(geom: &SystemGeometry) -> Result<Dictionaries> {
    geom.validate_dictionaries()?;
    let (a_bs, grid_bs) = ula_dictionary(geom.n_bs, geom.g_bs);
    let (a_ue, grid_ue) = ula_dictionary(geom.n_ue, geom.g_ue);
    let (a_y, grid_y) = ula_dictionary(geom.m_y, geom.g_y);
    let (a_z, grid_z) = ula_dictionary(geom.m_z, geom.g_z);
    let a_i = kron(&a_y, &a_z);
    Ok(Dictionaries {
        a_bs,
        a_ue,
        a_y,
        a_z,
        a_i,
        grid_bs,
        grid_ue,
        grid_y,
        grid_z,
        geometry: geom.clone(),
    })
}

impl Dictionaries {
    pub fn is_unitary(&self) -> bool {
        self.geometry.is_critically_sampled()
    }

    /// Column of `A_I` for grid indices `(iy, iz)`.
    pub fn irs_index(&self, iy: usize, iz: usize) -> usize {
        iy * self.geometry.g_z + iz
    }

    /// Column of `A_I` nearest to an IRS spatial-frequency pair.
    pub fn nearest_irs_index(&self, u: (f64, f64)) -> usize {
        self.irs_index(
            nearest_grid_index(u.0, self.geometry.g_y),
            nearest_grid_index(u.1, self.geometry.g_z),
        )
    }
}

/// `(A_BSᴴ G A_I, A_Iᴴ H A_UE)` for unitary dictionaries.
pub fn angular_coefficients(
    ch: &ChannelRealization,
    dict: &Dictionaries,
) -> Result<(CMatrix, CMatrix)> {
    if !dict.is_unitary() {
        return Err(Error::Config(
            "angular coefficients need critically sampled (unitary) dictionaries".into(),
        ));
    }
    if ch.g.shape() != (dict.a_bs.nrows(), dict.a_i.nrows())
        || ch.h.shape() != (dict.a_i.nrows(), dict.a_ue.nrows())
    {
        return shape_err("channel and dictionaries disagree on array sizes");
    }
    let lambda_g = dict.a_bs.adjoint() * &ch.g * &dict.a_i;
    let lambda_h = dict.a_i.adjoint() * &ch.h * &dict.a_ue;
    Ok((lambda_g, lambda_h))
}

/// Effective downlink channel `mat(K·H_c*·v)` of shape `N_UE × N_BS`.
pub fn effective_channel(h_c: &CMatrix, v: &CVector, n_bs: usize, n_ue: usize) -> Result<CMatrix> {
    if h_c.nrows() != n_bs * n_ue || h_c.ncols() != v.len() {
        return shape_err(format!(
            "cascaded channel is {}x{}, expected {}x{}",
            h_c.nrows(),
            h_c.ncols(),
            n_bs * n_ue,
            v.len()
        ));
    }
    let x = h_c.map(|z| z.conj()) * v;
    let kx = commute_vec(&x, n_bs, n_ue)?;
    mat(&kx, n_ue, n_bs)
}

/// `Hᴴ·diag(v)·Gᴴ` evaluated directly.
pub fn effective_channel_direct(g: &CMatrix, h: &CMatrix, v: &CVector) -> CMatrix {
    let mut dv_gh = g.adjoint();
    for (i, mut row) in dv_gh.row_iter_mut().enumerate() {
        row *= v[i];
    }
    h.adjoint() * dv_gh
}

/// How the IRS reflection vectors vary across training slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReflectionPattern {
    /// Fresh random phases every slot.
    Random,
    /// The first `t1` slots share one reflection vector, later slots are random.
    HeldFor { t1: usize },
}

/// Random quasi-omnidirectional pilots `s_t` (‖s_t‖² = `p_tr`) and reflections `v_t`.
pub fn random_training<R: Rng + ?Sized>(
    geom: &SystemGeometry,
    t: usize,
    p_tr: f64,
    pattern: ReflectionPattern,
    rng: &mut R,
) -> (Vec<CVector>, Vec<CVector>) {
    let amp = (p_tr / geom.n_ue as f64).sqrt();
    let s: Vec<CVector> = (0..t)
        .map(|_| crate::numerics::random_unit_modulus(geom.n_ue, rng) * C64::new(amp, 0.0))
        .collect();
    let mut v = Vec::with_capacity(t);
    let held = crate::numerics::random_unit_modulus(geom.m(), rng);
    for slot in 0..t {
        match pattern {
            ReflectionPattern::HeldFor { t1 } if slot < t1 => v.push(held.clone()),
            _ => v.push(crate::numerics::random_unit_modulus(geom.m(), rng)),
        }
    }
    (s, v)
}

/// Training slots and the observations they produced.
#[derive(Debug, Clone)]
pub struct PilotBlock {
    pub s: Vec<CVector>,
    pub v: Vec<CVector>,
    /// Received pilots, `N_BS × T`.
    pub r: CMatrix,
    pub noise_power: f64,
    pub p_tr: f64,
}

impl PilotBlock {
    pub fn slots(&self) -> usize {
        self.s.len()
    }

    /// Keeps only the listed slots, in order.
    pub fn select(&self, slots: &[usize]) -> PilotBlock {
        let mut r = CMatrix::zeros(self.r.nrows(), slots.len());
        for (j, &t) in slots.iter().enumerate() {
            r.set_column(j, &self.r.column(t));
        }
        PilotBlock {
            s: slots.iter().map(|&t| self.s[t].clone()).collect(),
            v: slots.iter().map(|&t| self.v[t].clone()).collect(),
            r,
            noise_power: self.noise_power,
            p_tr: self.p_tr,
        }
    }
}

/// `r_t = G·diag(v_t)·H·s_t + z_t` with `z_t ~ CN(0, σ²I)`.
pub fn simulate_uplink<R: Rng + ?Sized>(
    ch: &ChannelRealization,
    s: &[CVector],
    v: &[CVector],
    sigma2: f64,
    rng: &mut R,
) -> Result<PilotBlock> {
    if s.len() != v.len() {
        return shape_err("pilot and reflection lists differ in length");
    }
    if sigma2 < 0.0 || !sigma2.is_finite() {
        return Err(Error::Config(
            "noise power must be finite and non-negative".into(),
        ));
    }
    let (n_bs, m) = ch.g.shape();
    let n_ue = ch.h.ncols();
    let p_tr = s.first().map(|x| x.norm_squared()).unwrap_or(0.0);
    for (t, (st, vt)) in s.iter().zip(v).enumerate() {
        if st.len() != n_ue || vt.len() != m {
            return shape_err(format!(
                "slot {t}: pilot or reflection has the wrong length"
            ));
        }
        if vt.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::Config(format!(
                "slot {t}: reflection is not unit-modulus"
            )));
        }
        if (st.norm_squared() - p_tr).abs() > 1e-9 * p_tr.max(1e-300) {
            return Err(Error::Config(format!(
                "slot {t}: pilot power differs from slot 0"
            )));
        }
    }

    let mut r = CMatrix::zeros(n_bs, s.len());
    for (t, (st, vt)) in s.iter().zip(v).enumerate() {
        let hs = &ch.h * st;
        let phi_hs = hs.component_mul(vt);
        let mut rt = &ch.g * phi_hs;
        if sigma2 > 0.0 {
            for z in rt.iter_mut() {
                *z += complex_normal(sigma2, rng);
            }
        }
        r.set_column(t, &rt);
    }
    Ok(PilotBlock {
        s: s.to_vec(),
        v: v.to_vec(),
        r,
        noise_power: sigma2,
        p_tr,
    })
}
