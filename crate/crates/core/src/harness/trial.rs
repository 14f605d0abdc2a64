use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig, SweepPoint};
use super::{nmse, pnr_to_sigma2, snr_to_sigma2};
use crate::channel::{
    build_dictionaries, random_training, sample_paths, simulate_uplink, synth_channels,
    ReflectionPattern,
};
use crate::cs_est::{cs_est, CsEstConfig};
use crate::error::Result;
use crate::manifold::CgOptions;
use crate::mo_est::{mo_est, MoEstConfig};
use crate::numerics::random_unit_modulus;
use crate::wmmse::{alt_wmmse, spectral_efficiency, wmmse_fixed_v, DownlinkScenario, WmmseOptions};
use crate::CMatrix;

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub algorithm: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub pnr_db: f64,
    pub snr_db: f64,
    /// NaN when the trial failed.
    pub nmse: f64,
    pub se_bits_s_hz: f64,
    pub outer_iters: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    /// Why the trial failed, if it did.
    pub failure: Option<String>,
}

/// Seed of trial `index`, the `index`-th ChaCha8 stream of the master seed.
///
/// Independent of how many trials run and in which order.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

// Each random quantity in a trial draws from its own stream, so changing
// e.g. the estimator does not change the channel or the noise.
const STREAM_CHANNEL: u64 = 0;
const STREAM_PILOTS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_ESTIMATOR: u64 = 3;
const STREAM_BEAMFORMER: u64 = 4;
const STREAM_BASELINE: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Metrics {
    nmse: f64,
    se: f64,
    outer_iters: usize,
}

/// Generates a channel, trains, estimates, designs `(F, v_d)` on the
/// estimate and scores the design on the true channel.
///
/// Fails only on an invalid configuration. Errors inside the pipeline are
/// reported through [`TrialOutcome::failure`] with NaN metrics.
pub fn run_trial(cfg: &ExperimentConfig, point: &SweepPoint, seed: u64) -> Result<TrialOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let result = pipeline(cfg, point, seed);
    let wall_ms = if cfg.wall_clock {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let (m, failure) = match result {
        Ok(m) => (m, None),
        Err(e) => (
            Metrics {
                nmse: f64::NAN,
                se: f64::NAN,
                outer_iters: 0,
            },
            Some(e.to_string()),
        ),
    };
    Ok(TrialOutcome {
        record: TrialRecord {
            seed,
            algorithm: cfg.algorithm.name().to_string(),
            t: point.t,
            pnr_db: point.pnr_db,
            snr_db: point.snr_db,
            nmse: m.nmse,
            se_bits_s_hz: m.se,
            outer_iters: m.outer_iters,
            wall_ms,
        },
        failure,
    })
}

fn pipeline(cfg: &ExperimentConfig, point: &SweepPoint, seed: u64) -> Result<Metrics> {
    let geom = &cfg.geometry;
    let paths = sample_paths(
        geom,
        cfg.k_true,
        cfg.k_true,
        &mut stream(seed, STREAM_CHANNEL),
        cfg.on_grid,
    )?;
    let ch = synth_channels(geom, &paths)?;

    let true_scen = DownlinkScenario {
        h_c: ch.h_c.clone(),
        n_bs: geom.n_bs,
        n_ue: geom.n_ue,
        sigma2_d: snr_to_sigma2(point.snr_db, geom.d_bi, geom.d_iu),
        n_s: cfg.wmmse.n_s,
        t_used: point.t,
        t_tot: cfg.t_tot,
    };
    let opts = WmmseOptions {
        eps: cfg.wmmse.eps,
        max_iters: cfg.wmmse.max_iters,
        inner: CgOptions {
            epsilon: cfg.wmmse.eps,
            max_iters: cfg.wmmse.max_iters,
            ..CgOptions::default()
        },
    };

    let (h_c_hat, est_iters): (CMatrix, usize) = match cfg.algorithm {
        Algorithm::PerfectCsi => {
            let sol = alt_wmmse(&true_scen, &opts, &mut stream(seed, STREAM_BEAMFORMER))?;
            return Ok(Metrics {
                nmse: 0.0,
                se: sol.se,
                outer_iters: sol.iterations,
            });
        }
        Algorithm::RandomPhaseBaseline => {
            let v = random_unit_modulus(geom.m(), &mut stream(seed, STREAM_BASELINE));
            let sol = wmmse_fixed_v(&true_scen, &v, &opts)?;
            return Ok(Metrics {
                nmse: 0.0,
                se: sol.se,
                outer_iters: sol.iterations,
            });
        }
        Algorithm::MoEst => {
            let sigma2 = pnr_to_sigma2(point.pnr_db, geom.d_bi, geom.d_iu, cfg.p_tr);
            let (s, v) = random_training(
                geom,
                point.t,
                cfg.p_tr,
                ReflectionPattern::Random,
                &mut stream(seed, STREAM_PILOTS),
            );
            let pilots = simulate_uplink(&ch, &s, &v, sigma2, &mut stream(seed, STREAM_NOISE))?;
            let dict = build_dictionaries(&geom.critically_sampled())?;
            let mo = MoEstConfig {
                mu_g: cfg.mo.mu_g,
                mu_h: cfg.mo.mu_h,
                eps_inner: cfg.mo.eps_inner,
                eps_outer: cfg.mo.eps_outer,
                max_outer: cfg.mo.max_outer,
                max_inner: cfg.mo.max_inner,
                ..MoEstConfig::new(point.k_hat, point.k_hat)
            };
            let est = mo_est(&pilots, &dict, &mo, &mut stream(seed, STREAM_ESTIMATOR))?;
            (est.cascaded(), est.iterations)
        }
        Algorithm::CsEst => {
            let sigma2 = pnr_to_sigma2(point.pnr_db, geom.d_bi, geom.d_iu, cfg.p_tr);
            let cs = CsEstConfig {
                t1: cfg.cs_t1,
                ..CsEstConfig::new(point.k_hat, point.k_hat)
            };
            let t1 = cs.t1_for(point.t);
            let (s, v) = random_training(
                geom,
                point.t,
                cfg.p_tr,
                ReflectionPattern::HeldFor { t1 },
                &mut stream(seed, STREAM_PILOTS),
            );
            let pilots = simulate_uplink(&ch, &s, &v, sigma2, &mut stream(seed, STREAM_NOISE))?;
            let dict = build_dictionaries(geom)?;
            let est = cs_est(&pilots, &dict, &cs)?;
            // OMP selections: Q̂ UE AoDs, P̂ BS AoAs, then P̂·Q̂ cascaded gains.
            let (q, p) = (est.ue_support.len(), est.bs_support.len());
            let selections = q + p + p * q;
            (est.h_c_hat, selections)
        }
    };

    let err = nmse(&ch.h_c, &h_c_hat)?;
    let design = DownlinkScenario {
        h_c: h_c_hat,
        ..true_scen.clone()
    };
    let sol = alt_wmmse(&design, &opts, &mut stream(seed, STREAM_BEAMFORMER))?;
    let se = spectral_efficiency(&true_scen.effective(&sol.v_d)?, &sol.f, &true_scen)?;
    Ok(Metrics {
        nmse: err,
        se,
        outer_iters: est_iters,
    })
}
