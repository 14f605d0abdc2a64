//! Quick invariant checks run by `irs-sim selftest`.
//!
//! Each check is a small version of a property covered by the test suite,
//! cheap enough to run on an installed binary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{run_trial, Algorithm, ExperimentConfig, SweepAxis};
use crate::channel::{
    angular_coefficients, build_dictionaries, effective_channel, effective_channel_direct,
    random_training, sample_paths, simulate_uplink, synth_channels, ReflectionPattern,
    SystemGeometry,
};
use crate::cs_est::{cs_est, CsEstConfig};
use crate::manifold::{FixedRank, FixedRankPoint, Manifold};
use crate::numerics::{
    commutation_matrix, complex_normal_matrix, max_abs_diff, nmse, random_unit_modulus, svd, vec,
};
use crate::wmmse::{
    alt_wmmse, egrad_v, g1_objective, update_w_omega, DownlinkScenario, WmmseOptions,
};
use crate::{CMatrix, CVector, C64};

pub struct Check {
    pub name: &'static str,
    pub outcome: std::result::Result<(), String>,
}

type Outcome = std::result::Result<(), Box<dyn std::error::Error>>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(msg().into())
    }
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

fn identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = complex_normal_matrix(3, 5, 1.0, &mut rng);
    let k = commutation_matrix(3, 5);
    ensure((k * vec(&a) - vec(&a.transpose())).camax() == 0.0, || {
        "commutation matrix does not transpose".into()
    })?;
    let geom = small();
    let ch = synth_channels(&geom, &sample_paths(&geom, 2, 3, &mut rng, false)?)?;
    let v = random_unit_modulus(geom.m(), &mut rng);
    let via = effective_channel(&ch.h_c, &v, geom.n_bs, geom.n_ue)?;
    let direct = effective_channel_direct(&ch.g, &ch.h, &v);
    let err = max_abs_diff(&via, &direct) / direct.camax();
    ensure(err < 1e-10, || {
        format!("effective channel mismatch {err:e}")
    })
}

fn lemmas() -> Outcome {
    let geom = small();
    let dict = build_dictionaries(&geom)?;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = synth_channels(&geom, &sample_paths(&geom, 2, 3, &mut rng, true)?)?;
        let sg = svd(&ch.g)?.s;
        let sh = svd(&ch.h)?.s;
        ensure(sg[2] / sg[0] < 1e-10 && sh[3] / sh[0] < 1e-10, || {
            format!("rank ratio too large on seed {seed}")
        })?;
        let (lg, lh) = angular_coefficients(&ch, &dict)?;
        let count = |m: &CMatrix| m.iter().filter(|z| z.norm() > 1e-10 * m.camax()).count();
        ensure(count(&lg) == 2 && count(&lh) == 3, || {
            format!("sparsity counts wrong on seed {seed}")
        })?;
    }
    Ok(())
}

fn manifold() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mf = FixedRank::new(8, 6, 2)?;
    let x = FixedRankPoint::random(8, 6, 2, &mut rng)?;
    let e = complex_normal_matrix(8, 6, 1.0, &mut rng);
    let t = mf.project(&x, &e)?;
    let once = mf.embed(&x, &t);
    let twice = mf.embed(&x, &mf.project(&x, &once)?);
    ensure(max_abs_diff(&once, &twice) < 1e-10, || {
        "projection is not idempotent".into()
    })?;
    let y = mf.retract(&x, &t, 0.0)?;
    ensure(max_abs_diff(&y.dense, &x.dense) < 1e-12, || {
        "zero-step retraction moved the point".into()
    })?;
    let z = mf.retract(&x, &t, 0.3)?;
    let s = svd(&z.dense)?.s;
    ensure(s[2] / s[0] < 1e-12, || {
        "retraction left the rank-2 manifold".into()
    })
}

fn wmmse_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let geom = small();
    let ch = synth_channels(&geom, &sample_paths(&geom, 2, 2, &mut rng, false)?)?;
    let scale = ch.h_c.norm() / (ch.h_c.len() as f64).sqrt();
    let scen = DownlinkScenario {
        h_c: &ch.h_c / C64::new(scale, 0.0),
        n_bs: geom.n_bs,
        n_ue: geom.n_ue,
        sigma2_d: 0.1,
        n_s: 2,
        t_used: 0,
        t_tot: 2000,
    };
    let v = random_unit_modulus(geom.m(), &mut rng);
    let f = complex_normal_matrix(geom.n_bs, 2, 0.1, &mut rng);
    let (_, omega) = update_w_omega(&scen.effective(&v)?, &f, &scen)?;
    let grad = egrad_v(&v, &f, &omega, &scen)?;
    let cost = |x: &CVector| g1_objective(x, &f, &omega, &scen).unwrap_or(f64::NAN);
    for _ in 0..5 {
        let d = complex_normal_matrix(geom.m(), 1, 1.0, &mut rng)
            .column(0)
            .into_owned();
        let h = 1e-6;
        let fd =
            (cost(&(&v + &d * C64::new(h, 0.0))) - cost(&(&v - &d * C64::new(h, 0.0)))) / (2.0 * h);
        let an = 2.0 * grad.dotc(&d).re;
        ensure((fd - an).abs() <= 1e-4 * an.abs().max(1e-12), || {
            format!("egrad_v {an:e} vs FD {fd:e}")
        })?;
    }
    Ok(())
}

fn cs_recovery() -> Outcome {
    let geom = SystemGeometry::desk();
    let dict = build_dictionaries(&geom)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ch = synth_channels(&geom, &sample_paths(&geom, 2, 2, &mut rng, true)?)?;
    let cfg = CsEstConfig {
        t1: Some(15),
        ..CsEstConfig::new(2, 2)
    };
    let (s, v) = random_training(
        &geom,
        60,
        1.0,
        ReflectionPattern::HeldFor { t1: 15 },
        &mut rng,
    );
    let pilots = simulate_uplink(&ch, &s, &v, 0.0, &mut rng)?;
    let est = cs_est(&pilots, &dict, &cfg)?;
    let err = nmse(&est.h_c_hat, &ch.h_c);
    ensure(err < 1e-10, || format!("noiseless NMSE {err:e}"))
}

fn wmmse_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let geom = small();
    let ch = synth_channels(&geom, &sample_paths(&geom, 3, 3, &mut rng, false)?)?;
    let scen = DownlinkScenario {
        h_c: ch.h_c,
        n_bs: geom.n_bs,
        n_ue: geom.n_ue,
        sigma2_d: super::snr_to_sigma2(10.0, geom.d_bi, geom.d_iu),
        n_s: 2,
        t_used: 0,
        t_tot: 2000,
    };
    let sol = alt_wmmse(&scen, &WmmseOptions::default(), &mut rng)?;
    let bad = sol.g_trace.windows(2).find(|w| w[1] > w[0] + 1e-9);
    ensure(bad.is_none(), || format!("g increased: {bad:?}"))
}

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.algorithm = Algorithm::CsEst;
    cfg.sweep = SweepAxis::T;
    cfg.values = vec![40.0];
    let point = cfg.points()[0];
    let a = run_trial(&cfg, &point, 99)?;
    let b = run_trial(&cfg, &point, 99)?;
    ensure(a.record == b.record && a.failure.is_none(), || {
        "repeated trial differs".into()
    })
}

/// Runs every check and reports each one.
pub fn run() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Outcome); 7] = [
        ("identities", identities),
        ("lemmas", lemmas),
        ("manifold", manifold),
        ("wmmse gradient", wmmse_gradient),
        ("cs_est noiseless recovery", cs_recovery),
        ("alt_wmmse monotone", wmmse_monotone),
        ("trial determinism", determinism),
    ];
    checks
        .into_iter()
        .map(|(name, f)| Check {
            name,
            outcome: f().map_err(|e| e.to_string()),
        })
        .collect()
}
