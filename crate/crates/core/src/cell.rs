use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_HOUR: f64 = 3600.0;

pub fn ah_to_as(ah: f64) -> f64 {
    ah * SECONDS_PER_HOUR
}

pub fn as_to_ah(amp_seconds: f64) -> f64 {
    amp_seconds / SECONDS_PER_HOUR
}

pub fn mohm_to_ohm(mohm: f64) -> f64 {
    mohm * 1e-3
}

/// Capacity (amp-seconds) and series resistance (ohms) of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    q: f64,
    r: f64,
}

impl CellParams {
    pub fn new(q_as: f64, r_ohm: f64) -> Result<Self> {
        if !(q_as > 0.0 && q_as.is_finite()) {
            return Err(Error::InvalidParameter(format!("capacity must be positive, got {q_as} A*s")));
        }
        if !(r_ohm > 0.0 && r_ohm.is_finite()) {
            return Err(Error::InvalidParameter(format!("resistance must be positive, got {r_ohm} ohm")));
        }
        Ok(Self { q: q_as, r: r_ohm })
    }

    /// Convenience constructor from amp-hours and milliohms.
    pub fn from_ah_mohm(q_ah: f64, r_mohm: f64) -> Result<Self> {
        Self::new(ah_to_as(q_ah), mohm_to_ohm(r_mohm))
    }

    /// Capacity in amp-seconds.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Resistance in ohms.
    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn with_q(self, q_as: f64) -> Result<Self> {
        Self::new(q_as, self.r)
    }

    pub fn with_r(self, r_ohm: f64) -> Result<Self> {
        Self::new(self.q, r_ohm)
    }
}
