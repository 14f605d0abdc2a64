//! Seeded Monte-Carlo experiments: configuration, single trials, sweeps,
//! CSV output and the metrics they report.

mod config;
pub mod selftest;
mod sweep;
mod trial;

pub use config::{Algorithm, ExperimentConfig, MoSettings, SweepAxis, SweepPoint, WmmseSettings};
pub use sweep::{
    median, read_csv, summarize, sweep, write_csv, write_summary, SummaryRow, SweepOutput,
    CSV_HEADER,
};
pub use trial::{run_trial, trial_seed, TrialOutcome, TrialRecord};

use crate::channel::pathloss;
use crate::error::{Error, Result};
use crate::numerics::frob_sq;
use crate::CMatrix;

/// Uplink noise power for a pilot-to-noise ratio `P_tr·τ_BI·τ_IU/σ²` in dB.
pub fn pnr_to_sigma2(pnr_db: f64, d_bi: f64, d_iu: f64, p_tr: f64) -> f64 {
    p_tr * pathloss(d_bi) * pathloss(d_iu) / 10f64.powf(pnr_db / 10.0)
}

/// Downlink noise power for an SNR `τ_BI·τ_IU/σ_d²` in dB (unit transmit power).
pub fn snr_to_sigma2(snr_db: f64, d_bi: f64, d_iu: f64) -> f64 {
    pnr_to_sigma2(snr_db, d_bi, d_iu, 1.0)
}

/// `‖H_c − Ĥ_c‖²/‖H_c‖²` for one realization.
pub fn nmse(h_c_true: &CMatrix, h_c_hat: &CMatrix) -> Result<f64> {
    if h_c_true.shape() != h_c_hat.shape() {
        return Err(Error::Shape(format!(
            "estimate is {:?}, channel is {:?}",
            h_c_hat.shape(),
            h_c_true.shape()
        )));
    }
    let den = frob_sq(h_c_true);
    if den == 0.0 {
        return Err(Error::Numerical(
            "NMSE of a zero channel is undefined".into(),
        ));
    }
    Ok(frob_sq(&(h_c_true - h_c_hat)) / den)
}
