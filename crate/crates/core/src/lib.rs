//! Channel estimation and reflect-beamforming for IRS-assisted MIMO links.

pub mod channel;
pub mod cs_est;
pub mod error;
pub mod harness;
pub mod manifold;
pub mod mo_est;
pub mod numerics;
pub mod wmmse;

pub use error::{Error, Result};
pub use numerics::{CMatrix, CVector, C64};
