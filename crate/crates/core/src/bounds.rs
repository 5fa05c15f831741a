//! Input-to-state bound on the SOC imbalance of a parallel pair with a
//! monotone OCV whose slope lies in `[k1, k2]`, and a harness that checks
//! simulated traces against it.
//!
//! With `A = -(1/R_tot)(1/Q1 + 1/Q2)` and `B = (1/R_tot)(R1/Q2 - R2/Q1)`, if
//! `i_max <= |A k1 / B|` then
//! `|dz(t)| <= |dz0| e^(k1 A t) + |B / (A k1)| i_max (1 - e^(k1 A t))`.

use std::io::Write;

use serde::Serialize;

use crate::cell::CellParams;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::ocv::OcvCurve;
use crate::simulator::{self, CellPair, Protocol, SimConfig, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundParams {
    pub a_coef: f64,
    pub b_coef: f64,
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundValue {
    pub value: f64,
    /// The input condition holds, so the value is a proven bound.
    pub guaranteed: bool,
}

/// Coefficients for a pair; the slope bounds cover both cells' curves over
/// the full SOC domain.
pub fn bound_params(cells: [CellParams; 2], ocv: &[OcvCurve; 2]) -> BoundParams {
    let (q1, q2) = (cells[0].q(), cells[1].q());
    let (r1, r2) = (cells[0].r(), cells[1].r());
    let r_tot = r1 + r2;
    let s1 = ocv[0].slope_bounds();
    let s2 = ocv[1].slope_bounds();
    BoundParams {
        a_coef: -(1.0 / q1 + 1.0 / q2) / r_tot,
        b_coef: (r1 / q2 - r2 / q1) / r_tot,
        k1: s1.0.min(s2.0),
        k2: s1.1.max(s2.1),
    }
}

impl BoundParams {
    /// Largest admissible current `|A k1 / B|`; infinite when `B = 0`.
    pub fn threshold(&self) -> f64 {
        if self.b_coef == 0.0 {
            f64::INFINITY
        } else {
            (self.a_coef * self.k1 / self.b_coef).abs()
        }
    }

    pub fn input_condition(&self, i_max: f64) -> bool {
        i_max <= self.threshold()
    }

    /// Limit of the bound as `t -> inf`: `|B / (A k1)| i_max`.
    pub fn asymptote(&self, i_max: f64) -> f64 {
        (self.b_coef / (self.a_coef * self.k1)).abs() * i_max
    }

    /// Decay rate `k1 A` (1/s, negative).
    pub fn rate(&self) -> f64 {
        self.k1 * self.a_coef
    }

    pub fn bound(&self, dz0: f64, i_max: f64, t: f64) -> BoundValue {
        let e = (self.rate() * t).exp();
        BoundValue {
            value: dz0.abs() * e + self.asymptote(i_max) * (1.0 - e),
            guaranteed: self.input_condition(i_max),
        }
    }
}

pub fn input_condition(bp: &BoundParams, i_max: f64) -> bool {
    bp.input_condition(i_max)
}

pub fn imbalance_bound(bp: &BoundParams, dz0: f64, i_max: f64, t: f64) -> BoundValue {
    bp.bound(dz0, i_max, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub t_s: f64,
    pub abs_dz: f64,
    pub bound: f64,
    pub guaranteed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub params: BoundParams,
    pub i_max: f64,
    pub dz0: f64,
    pub rows: Vec<BoundRow>,
    /// Samples where `|dz| > bound`.
    pub violations: usize,
    /// Smallest `bound - |dz|` over the trace.
    pub min_margin: f64,
}

impl BoundCheck {
    pub fn guaranteed(&self) -> bool {
        self.params.input_condition(self.i_max)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_s", "abs_dz", "bound", "guaranteed"])?;
        for r in &self.rows {
            w.write_record([r.t_s.to_string(), r.abs_dz.to_string(), r.bound.to_string(), r.guaranteed.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compares every sample of a trace with the bound. `i_max` is the largest
/// total current magnitude applied anywhere in the trace.
pub fn verify_trace(trace: &Trace, ocv: &[OcvCurve; 2]) -> Result<BoundCheck> {
    verify_trace_with(trace, ocv, None)
}

/// Like [`verify_trace`], but with an explicit input bound `i_max` when
/// given (it must cover the applied currents for the bound to be meaningful).
pub fn verify_trace_with(trace: &Trace, ocv: &[OcvCurve; 2], i_max: Option<f64>) -> Result<BoundCheck> {
    if let Some(i) = i_max {
        if !(i >= 0.0 && i.is_finite()) {
            return Err(Error::InvalidParameter(format!("i_max must be finite and non-negative, got {i}")));
        }
    }
    let first = trace
        .samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot check bounds on an empty trace".into()))?;
    let params = bound_params(trace.cells, ocv);
    let i_max = i_max.unwrap_or_else(|| trace.samples.iter().map(|s| s.total_current().abs()).fold(0.0, f64::max));
    let dz0 = first.dz();
    let t0 = first.t_s;
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    let rows = trace
        .samples
        .iter()
        .map(|s| {
            let b = params.bound(dz0, i_max, s.t_s - t0);
            let abs_dz = s.dz().abs();
            let margin = b.value - abs_dz;
            if margin < 0.0 {
                violations += 1;
            }
            min_margin = min_margin.min(margin);
            BoundRow {
                t_s: s.t_s,
                abs_dz,
                bound: b.value,
                guaranteed: b.guaranteed,
            }
        })
        .collect();
    Ok(BoundCheck {
        params,
        i_max,
        dz0,
        rows,
        violations,
        min_margin,
    })
}

/// One case of a bound-verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCase {
    pub pair: CellPair,
    pub initial_soc: [f64; 2],
    pub protocol: Protocol,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseOutcome {
    pub samples: usize,
    pub violations: usize,
    pub min_margin: f64,
    pub i_max: f64,
    pub threshold: f64,
    pub guaranteed: bool,
    pub final_bound: f64,
}

/// Simulates every case and checks it against the bound. Cases are
/// independent and run under `exec`; outcomes keep the input order.
pub fn run_suite(cases: &[BoundCase], exec: Execution) -> Result<Vec<CaseOutcome>> {
    exec::map(exec, cases, |case| {
        let config = SimConfig::new(case.pair.clone(), case.dt, case.protocol.clone(), case.initial_soc);
        let trace = simulator::run(&config)?;
        let check = verify_trace(&trace, &case.pair.ocv)?;
        Ok(CaseOutcome {
            samples: check.rows.len(),
            violations: check.violations,
            min_margin: check.min_margin,
            i_max: check.i_max,
            threshold: check.params.threshold(),
            guaranteed: check.guaranteed(),
            final_bound: check.rows.last().map_or(f64::NAN, |r| r.bound),
        })
    })
    .into_iter()
    .collect()
}
