//! Incremental capacity loss under a power-law growth model and the
//! resistance growth tied to it.
//!
//! Over a cycle with reaction rate `r(t)` the loss advances as
//! `dL = (int r^(1/p) dt + L^(1/p))^p - L`, which chains exactly into
//! `L = r t^p` for a constant rate. Resistance grows as
//! `G = lambda1 L + lambda2 n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a cell's reaction rate is derived from its cycling conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RateLaw {
    /// `r = gamma |I|` from the cell's current.
    Current { gamma: f64 },
    /// `r = gamma / (z_min + 1)` from the lowest SOC reached on discharge.
    Dod { gamma: f64 },
    /// Fixed rate.
    Constant { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub p: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rate_law: RateLaw,
    /// Admits `p > 1`, an accelerating loss outside the physical range.
    #[serde(default)]
    pub allow_accelerating: bool,
}

impl DegradationParams {
    pub fn new(p: f64, lambda1: f64, lambda2: f64, rate_law: RateLaw) -> Result<Self> {
        let params = Self {
            p,
            lambda1,
            lambda2,
            rate_law,
            allow_accelerating: false,
        };
        params.validate()?;
        Ok(params)
    }

    /// Same parameters with `p > 1` permitted.
    pub fn accelerating(self) -> Self {
        Self {
            allow_accelerating: true,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !self.p.is_finite() || self.p < 0.5 {
            return bad(format!("exponent p must be at least 0.5, got {}", self.p));
        }
        if self.p > 1.0 && !self.allow_accelerating {
            return bad(format!(
                "exponent p = {} exceeds 1.0; set allow_accelerating to model accelerating loss",
                self.p
            ));
        }
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative".into());
        }
        match self.rate_law {
            RateLaw::Current { gamma } | RateLaw::Dod { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                bad(format!("rate-law gamma must be positive, got {gamma}"))
            }
            RateLaw::Constant { r } if !(r >= 0.0 && r.is_finite()) => Err(Error::NegativeRate(r)),
            _ => Ok(()),
        }
    }
}

/// Cumulative loss `L` (amp-seconds), resistance growth `G` (ohms) and the
/// number of completed cycles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DegradationState {
    pub l_total: f64,
    pub g_total: f64,
    pub cycle: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleWindow {
    pub t_start: f64,
    pub t_end: f64,
}

impl CycleWindow {
    pub fn new(t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::InvalidParameter(format!(
                "cycle window must have t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        Ok(Self { t_start, t_end })
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Loss increment for a given `int r^(1/p) dt`.
///
/// Written as `L ((1 + a / L^(1/p))^p - 1)` so that small increments on a
/// large accumulated loss do not cancel.
pub fn loss_from_integral(integral: f64, p: f64, l_prev: f64) -> f64 {
    if integral <= 0.0 {
        return 0.0;
    }
    if l_prev <= 0.0 {
        return integral.powf(p);
    }
    let ratio = integral / l_prev.powf(1.0 / p);
    l_prev * (p * ratio.ln_1p()).exp_m1()
}

fn check_common(p: f64, l_prev: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("exponent p must be positive, got {p}")));
    }
    if !(l_prev >= 0.0) {
        return Err(Error::InvalidParameter(format!("accumulated loss must be non-negative, got {l_prev}")));
    }
    Ok(())
}

/// Loss over `dt` seconds at constant rate `r`.
pub fn incremental_loss_const(r: f64, p: f64, l_prev: f64, dt: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::NegativeRate(r));
    }
    check_common(p, l_prev)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("duration must be positive, got {dt}")));
    }
    Ok(loss_from_integral(r.powf(1.0 / p) * dt, p, l_prev))
}

/// Trapezoidal `int r^(1/p) dt` over the samples `(t, r)` inside `window`.
pub fn rate_integral(signal: &[(f64, f64)], p: f64, window: CycleWindow) -> Result<f64> {
    if let Some(&(_, r)) = signal.iter().find(|&&(_, r)| !(r >= 0.0)) {
        return Err(Error::NegativeRate(r));
    }
    let inside: Vec<(f64, f64)> = signal
        .iter()
        .copied()
        .filter(|&(t, _)| t >= window.t_start && t <= window.t_end)
        .collect();
    if inside.len() < 2 {
        return Err(Error::InvalidParameter("rate signal needs at least two samples in the window".into()));
    }
    let inv = 1.0 / p;
    Ok(inside
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1.powf(inv) + w[1].1.powf(inv)))
        .sum())
}

/// Loss over a cycle with a sampled, time-varying rate.
pub fn incremental_loss_varying(signal: &[(f64, f64)], p: f64, l_prev: f64, window: CycleWindow) -> Result<f64> {
    check_common(p, l_prev)?;
    Ok(loss_from_integral(rate_integral(signal, p, window)?, p, l_prev))
}

/// Adds one cycle's loss and recomputes the resistance growth.
pub fn apply_cycle(state: DegradationState, delta_l: f64, params: &DegradationParams) -> DegradationState {
    let l_total = state.l_total + delta_l.max(0.0);
    let cycle = state.cycle + 1;
    DegradationState {
        l_total,
        g_total: params.lambda1 * l_total + params.lambda2 * cycle as f64,
        cycle,
    }
}

pub fn rate_from_current(gamma1: f64, i_ss: f64) -> f64 {
    gamma1 * i_ss.abs()
}

pub fn rate_from_dod(gamma2: f64, z_min: f64) -> Result<f64> {
    if z_min < 0.0 || z_min.is_nan() {
        return Err(Error::NegativeSoc(z_min));
    }
    Ok(gamma2 / (z_min + 1.0))
}

/// Rate this law assigns for a cell drive current and minimum SOC.
pub fn rate_for(law: RateLaw, current: f64, z_min: f64) -> Result<f64> {
    match law {
        RateLaw::Current { gamma } => Ok(rate_from_current(gamma, current)),
        RateLaw::Dod { gamma } => rate_from_dod(gamma, z_min),
        RateLaw::Constant { r } => Ok(r),
    }
}

/// Capacity-loss trajectory at a rate that may change from cycle to cycle.
/// Entry `n` is `L` after `n + 1` cycles.
pub fn loss_schedule(rates: &[f64], p: f64, dt: f64) -> Result<Vec<f64>> {
    let mut l = 0.0;
    rates
        .iter()
        .map(|&r| {
            l += incremental_loss_const(r, p, l, dt)?;
            Ok(l)
        })
        .collect()
}
