use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::channel::SystemGeometry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    MoEst,
    CsEst,
    /// Beamforming on the true cascaded channel, same training overhead.
    PerfectCsi,
    /// True cascaded channel, random reflection vector, WMMSE beamformer.
    RandomPhaseBaseline,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::MoEst,
        Algorithm::CsEst,
        Algorithm::PerfectCsi,
        Algorithm::RandomPhaseBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MoEst => "mo_est",
            Algorithm::CsEst => "cs_est",
            Algorithm::PerfectCsi => "perfect_csi",
            Algorithm::RandomPhaseBaseline => "random_phase_baseline",
        }
    }

    pub fn estimates_channel(self) -> bool {
        matches!(self, Algorithm::MoEst | Algorithm::CsEst)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    T,
    Pnr,
    Snr,
    KHat,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::T => "T",
            SweepAxis::Pnr => "PNR",
            SweepAxis::Snr => "SNR",
            SweepAxis::KHat => "K_hat",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, SweepAxis::T | SweepAxis::KHat)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" => Ok(SweepAxis::T),
            "PNR" => Ok(SweepAxis::Pnr),
            "SNR" => Ok(SweepAxis::Snr),
            "K_hat" => Ok(SweepAxis::KHat),
            _ => Err(Error::Config(format!(
                "unknown sweep axis `{s}` (expected T, PNR, SNR or K_hat)"
            ))),
        }
    }
}

/// MO-EST settings. `None` weights fall back to the estimator's default.
#[derive(Debug, Clone, PartialEq)]
pub struct MoSettings {
    pub mu_g: Option<f64>,
    pub mu_h: Option<f64>,
    pub eps_inner: f64,
    pub eps_outer: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for MoSettings {
    fn default() -> Self {
        Self {
            mu_g: None,
            mu_h: None,
            eps_inner: 1e-3,
            eps_outer: 1e-3,
            max_outer: 50,
            max_inner: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseSettings {
    pub eps: f64,
    pub max_iters: usize,
    pub n_s: usize,
}

impl Default for WmmseSettings {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_iters: 200,
            n_s: 3,
        }
    }
}

/// One point of a sweep: every swept quantity resolved to a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub t: usize,
    pub pnr_db: f64,
    pub snr_db: f64,
    pub k_hat: usize,
}

/// A Monte-Carlo experiment.
///
/// The dictionary resolutions in `geometry` are the CS-EST grids. MO-EST
/// always works with critically sampled dictionaries of the same arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: SystemGeometry,
    pub algorithm: Algorithm,
    pub sweep: SweepAxis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Training slots when `T` is not the swept axis.
    pub t: usize,
    pub pnr_db: f64,
    pub snr_db: f64,
    pub t_tot: usize,
    pub k_true: usize,
    pub k_hat: usize,
    pub p_tr: f64,
    pub on_grid: bool,
    pub mo: MoSettings,
    /// CS-EST held-reflection slots; `None` uses the estimator default.
    pub cs_t1: Option<usize>,
    pub wmmse: WmmseSettings,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Record per-trial wall time. Off by default so output bytes are reproducible.
    pub wall_clock: bool,
}

impl ExperimentConfig {
    /// Small system for laptops and CI: MO-EST NMSE versus `T` at PNR 0 dB.
    pub fn desk_scale() -> Self {
        Self {
            geometry: SystemGeometry::desk(),
            algorithm: Algorithm::MoEst,
            sweep: SweepAxis::T,
            values: vec![50.0, 100.0, 150.0],
            trials: 20,
            seed: 1,
            t: 150,
            pnr_db: 0.0,
            snr_db: 10.0,
            t_tot: 2000,
            k_true: 3,
            k_hat: 3,
            p_tr: 1.0,
            on_grid: false,
            mo: MoSettings::default(),
            cs_t1: None,
            wmmse: WmmseSettings::default(),
            threads: 0,
            wall_clock: false,
        }
    }

    /// Full-size arrays with 64/64/16×16 CS-EST grids. Slow.
    pub fn paper_scale() -> Self {
        Self {
            geometry: SystemGeometry {
                g_bs: 64,
                g_ue: 64,
                g_y: 16,
                g_z: 16,
                ..SystemGeometry::paper_scale()
            },
            algorithm: Algorithm::CsEst,
            sweep: SweepAxis::T,
            values: vec![50.0, 100.0, 150.0, 200.0, 250.0],
            trials: 1000,
            ..Self::desk_scale()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk-scale" => Ok(Self::desk_scale()),
            "paper-scale" => Ok(Self::paper_scale()),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (expected desk-scale or paper-scale)"
            ))),
        }
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let base = SweepPoint {
            t: self.t,
            pnr_db: self.pnr_db,
            snr_db: self.snr_db,
            k_hat: self.k_hat,
        };
        self.values
            .iter()
            .map(|&x| match self.sweep {
                SweepAxis::T => SweepPoint {
                    t: x as usize,
                    ..base
                },
                SweepAxis::Pnr => SweepPoint { pnr_db: x, ..base },
                SweepAxis::Snr => SweepPoint { snr_db: x, ..base },
                SweepAxis::KHat => SweepPoint {
                    k_hat: x as usize,
                    ..base
                },
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let g = &self.geometry;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(Error::Config("the sweep value list is empty".into()));
        }
        if let Some(x) = self.values.iter().find(|x| !x.is_finite()) {
            return Err(Error::Config(format!("sweep value {x} is not finite")));
        }
        if self.sweep.is_integer() {
            if let Some(x) = self.values.iter().find(|x| x.fract() != 0.0 || **x < 0.0) {
                return Err(Error::Config(format!(
                    "{} values must be non-negative integers, got {x}",
                    self.sweep.name()
                )));
            }
        }
        if self.t_tot == 0 {
            return Err(Error::Config("t_tot must be at least 1".into()));
        }
        if !(self.p_tr > 0.0 && self.p_tr.is_finite()) {
            return Err(Error::Config("p_tr must be positive".into()));
        }
        let max_rank = g.m().min(g.n_bs).min(g.n_ue);
        if self.k_true == 0 || self.k_true > max_rank {
            return Err(Error::Config(format!("k_true must lie in 1..={max_rank}")));
        }
        let n_s_max = g.n_bs.min(g.n_ue);
        if self.wmmse.n_s == 0 || self.wmmse.n_s > n_s_max {
            return Err(Error::Config(format!("n_s must lie in 1..={n_s_max}")));
        }
        if !(self.wmmse.eps > 0.0) || self.wmmse.max_iters == 0 {
            return Err(Error::Config(
                "wmmse_eps must be positive and wmmse_max_iters at least 1".into(),
            ));
        }
        let mo = &self.mo;
        for mu in [mo.mu_g, mo.mu_h].into_iter().flatten() {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::Config(
                    "mo_mu_g and mo_mu_h must be finite and non-negative".into(),
                ));
            }
        }
        if !(mo.eps_inner > 0.0 && mo.eps_outer > 0.0) || mo.max_inner == 0 || mo.max_outer == 0 {
            return Err(Error::Config(
                "MO-EST thresholds must be positive and iteration limits at least 1".into(),
            ));
        }
        if self.algorithm == Algorithm::CsEst && (g.g_y % 2 == 1 || g.g_z % 2 == 1) {
            return Err(Error::Config(
                "cs_est needs even IRS grid sizes g_y and g_z".into(),
            ));
        }
        if self.algorithm == Algorithm::CsEst || self.on_grid {
            let pairs = [
                (g.g_bs, g.n_bs, "g_bs"),
                (g.g_ue, g.n_ue, "g_ue"),
                (g.g_y, g.m_y, "g_y"),
                (g.g_z, g.m_z, "g_z"),
            ];
            if let Some((_, _, name)) = pairs.iter().find(|(gr, n, _)| gr < n) {
                return Err(Error::Config(format!(
                    "{name} is smaller than its array size"
                )));
            }
        }
        for p in self.points() {
            if p.t >= self.t_tot {
                return Err(Error::Config(format!(
                    "T = {} must be below t_tot = {}",
                    p.t, self.t_tot
                )));
            }
            if self.algorithm.estimates_channel() {
                if p.t == 0 {
                    return Err(Error::Config(
                        "estimators need at least one training slot".into(),
                    ));
                }
                if p.k_hat == 0 || p.k_hat > max_rank {
                    return Err(Error::Config(format!("k_hat must lie in 1..={max_rank}")));
                }
            }
            if self.algorithm == Algorithm::CsEst {
                if let Some(t1) = self.cs_t1 {
                    if t1 == 0 || t1 > p.t {
                        return Err(Error::Config(format!(
                            "cs_t1 = {t1} must lie in 1..={}",
                            p.t
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parses the flat `key = value` format written by [`to_config_string`](Self::to_config_string).
    ///
    /// Keys not given keep their desk-scale defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::desk_scale();
        let mut seen = HashSet::new();
        let mut k_hat_given = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => at(m),
                other => other,
            })?;
            k_hat_given |= key == "k_hat";
        }
        if !k_hat_given {
            cfg.k_hat = cfg.k_true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.geometry;
        match key {
            "n_bs" => g.n_bs = num(key, value)?,
            "n_ue" => g.n_ue = num(key, value)?,
            "m_y" => g.m_y = num(key, value)?,
            "m_z" => g.m_z = num(key, value)?,
            "g_bs" => g.g_bs = num(key, value)?,
            "g_ue" => g.g_ue = num(key, value)?,
            "g_y" => g.g_y = num(key, value)?,
            "g_z" => g.g_z = num(key, value)?,
            "d_bi" => g.d_bi = num(key, value)?,
            "d_iu" => g.d_iu = num(key, value)?,
            "algorithm" => self.algorithm = value.parse()?,
            "sweep" => self.sweep = value.parse()?,
            "values" => {
                self.values = value
                    .split(',')
                    .map(|v| num(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "trials" => self.trials = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "t" => self.t = num(key, value)?,
            "pnr_db" => self.pnr_db = num(key, value)?,
            "snr_db" => self.snr_db = num(key, value)?,
            "t_tot" => self.t_tot = num(key, value)?,
            "k_true" => self.k_true = num(key, value)?,
            "k_hat" => self.k_hat = num(key, value)?,
            "p_tr" => self.p_tr = num(key, value)?,
            "on_grid" => self.on_grid = num(key, value)?,
            "n_s" => self.wmmse.n_s = num(key, value)?,
            "wmmse_eps" => self.wmmse.eps = num(key, value)?,
            "wmmse_max_iters" => self.wmmse.max_iters = num(key, value)?,
            "mo_mu_g" => self.mo.mu_g = auto(key, value)?,
            "mo_mu_h" => self.mo.mu_h = auto(key, value)?,
            "mo_eps_inner" => self.mo.eps_inner = num(key, value)?,
            "mo_eps_outer" => self.mo.eps_outer = num(key, value)?,
            "mo_max_outer" => self.mo.max_outer = num(key, value)?,
            "mo_max_inner" => self.mo.max_inner = num(key, value)?,
            "cs_t1" => self.cs_t1 = auto(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "wall_clock" => self.wall_clock = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`parse`](Self::parse) accepts.
    pub fn to_config_string(&self) -> String {
        fn opt<T: std::fmt::Display>(x: &Option<T>) -> String {
            x.as_ref()
                .map_or_else(|| "auto".to_string(), |v| v.to_string())
        }
        let g = &self.geometry;
        let values: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "# arrays and CS-EST dictionary grids");
        for (k, v) in [
            ("n_bs", g.n_bs),
            ("n_ue", g.n_ue),
            ("m_y", g.m_y),
            ("m_z", g.m_z),
            ("g_bs", g.g_bs),
            ("g_ue", g.g_ue),
            ("g_y", g.g_y),
            ("g_z", g.g_z),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "d_bi = {}", g.d_bi);
        let _ = writeln!(s, "d_iu = {}", g.d_iu);
        let _ = writeln!(s, "\nalgorithm = {}", self.algorithm.name());
        let _ = writeln!(s, "sweep = {}", self.sweep.name());
        let _ = writeln!(s, "values = {}", values.join(", "));
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "\n# values used when not swept");
        let _ = writeln!(s, "t = {}", self.t);
        let _ = writeln!(s, "pnr_db = {}", self.pnr_db);
        let _ = writeln!(s, "snr_db = {}", self.snr_db);
        let _ = writeln!(s, "k_hat = {}", self.k_hat);
        let _ = writeln!(s, "\nt_tot = {}", self.t_tot);
        let _ = writeln!(s, "k_true = {}", self.k_true);
        let _ = writeln!(s, "p_tr = {}", self.p_tr);
        let _ = writeln!(s, "on_grid = {}", self.on_grid);
        let _ = writeln!(s, "\nmo_mu_g = {}", opt(&self.mo.mu_g));
        let _ = writeln!(s, "mo_mu_h = {}", opt(&self.mo.mu_h));
        let _ = writeln!(s, "mo_eps_inner = {}", self.mo.eps_inner);
        let _ = writeln!(s, "mo_eps_outer = {}", self.mo.eps_outer);
        let _ = writeln!(s, "mo_max_outer = {}", self.mo.max_outer);
        let _ = writeln!(s, "mo_max_inner = {}", self.mo.max_inner);
        let _ = writeln!(s, "cs_t1 = {}", opt(&self.cs_t1));
        let _ = writeln!(s, "\nn_s = {}", self.wmmse.n_s);
        let _ = writeln!(s, "wmmse_eps = {}", self.wmmse.eps);
        let _ = writeln!(s, "wmmse_max_iters = {}", self.wmmse.max_iters);
        let _ = writeln!(s, "\nthreads = {}", self.threads);
        let _ = writeln!(s, "wall_clock = {}", self.wall_clock);
        s
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}
