//! Forward-Euler time stepping of two parallel cells with arbitrary monotone
//! OCV curves under CC / CV / rest protocols.
//!
//! Applied current is positive on discharge; `dz_i/dt = -I_i / Q_i`.

mod orbit;
mod realign;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cell::CellParams;
use crate::error::{Error, Result};
use crate::ocv::OcvCurve;

pub use orbit::{phase_orbit, PhaseOrbit};
pub use realign::{realign, write_overlay_csv, OverlayRow};
pub use trace::{ChargeBalance, Trace, TraceSample};

/// Default SOC guard band; leaving it signals a protocol without a proper
/// termination condition rather than integration noise.
pub const DEFAULT_SOC_GUARD: (f64, f64) = (-0.001, 1.001);

/// Default cap on any single phase, in seconds.
pub const DEFAULT_MAX_PHASE_S: f64 = 172_800.0;

/// Two cells and the OCV curve seen by each.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPair {
    pub cells: [CellParams; 2],
    pub ocv: [OcvCurve; 2],
}

impl CellPair {
    pub fn new(cells: [CellParams; 2], ocv: [OcvCurve; 2]) -> Self {
        Self { cells, ocv }
    }

    /// Both cells share one curve.
    pub fn shared(cell1: CellParams, cell2: CellParams, ocv: OcvCurve) -> Self {
        Self {
            cells: [cell1, cell2],
            ocv: [ocv.clone(), ocv],
        }
    }

    pub fn r_tot(&self) -> f64 {
        self.cells[0].r() + self.cells[1].r()
    }

    pub fn q_tot(&self) -> f64 {
        self.cells[0].q() + self.cells[1].q()
    }

    fn ocv_at(&self, z: [f64; 2]) -> [f64; 2] {
        [self.ocv[0].eval_extended(z[0]), self.ocv[1].eval_extended(z[1])]
    }

    /// Branch currents for an applied (total) current.
    pub fn cc_currents(&self, z: [f64; 2], i_applied: f64) -> BranchCurrents {
        let u = self.ocv_at(z);
        let (r1, r2) = (self.cells[0].r(), self.cells[1].r());
        let i1 = (u[0] - u[1] + r2 * i_applied) / (r1 + r2);
        let i2 = i_applied - i1;
        BranchCurrents {
            i: [i1, i2],
            v_t: u[0] - i1 * r1,
        }
    }

    /// Branch currents for a fixed terminal voltage.
    pub fn cv_currents(&self, z: [f64; 2], v_set: f64) -> BranchCurrents {
        let u = self.ocv_at(z);
        BranchCurrents {
            i: [(u[0] - v_set) / self.cells[0].r(), (u[1] - v_set) / self.cells[1].r()],
            v_t: v_set,
        }
    }

    fn advance(&self, state: PairState, i: [f64; 2], dt: f64) -> PairState {
        PairState {
            t: state.t + dt,
            z: [
                state.z[0] - i[0] * dt / self.cells[0].q(),
                state.z[1] - i[1] * dt / self.cells[1].q(),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairState {
    pub t: f64,
    pub z: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchCurrents {
    pub i: [f64; 2],
    pub v_t: f64,
}

impl BranchCurrents {
    pub fn total(&self) -> f64 {
        self.i[0] + self.i[1]
    }
}

/// One forward-Euler step at constant applied current. Returns the advanced
/// state and the currents applied over the step.
pub fn step_cc(state: PairState, pair: &CellPair, i_applied: f64, dt: f64) -> (PairState, BranchCurrents) {
    let currents = pair.cc_currents(state.z, i_applied);
    (pair.advance(state, currents.i, dt), currents)
}

/// One forward-Euler step at constant terminal voltage.
pub fn step_cv(state: PairState, pair: &CellPair, v_set: f64, dt: f64) -> (PairState, BranchCurrents) {
    let currents = pair.cv_currents(state.z, v_set);
    (pair.advance(state, currents.i, dt), currents)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Phase {
    /// Constant current; negative current charges and stops once the terminal
    /// voltage reaches the limit from below, otherwise stops once it falls to
    /// the limit.
    Cc { current_a: f64, stop_voltage_v: f64 },
    /// Constant current for a fixed duration.
    CcTimed { current_a: f64, duration_s: f64 },
    /// Constant voltage; stops when the total current magnitude falls to the cutoff.
    Cv { set_point_v: f64, cutoff_a: f64 },
    Rest { duration_s: f64 },
}

impl Phase {
    /// Number of steps of a fixed-duration phase.
    pub fn fixed_steps(&self, dt: f64) -> Option<u64> {
        match *self {
            Phase::Rest { duration_s } | Phase::CcTimed { duration_s, .. } => {
                Some((duration_s / dt).round().max(1.0) as u64)
            }
            _ => None,
        }
    }

    pub fn kind(&self) -> PhaseKind {
        match *self {
            Phase::Cc { current_a, .. } | Phase::CcTimed { current_a, .. } if current_a < 0.0 => PhaseKind::CcCharge,
            Phase::Cc { .. } | Phase::CcTimed { .. } => PhaseKind::CcDischarge,
            Phase::Cv { .. } => PhaseKind::Cv,
            Phase::Rest { .. } => PhaseKind::Rest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseKind {
    CcCharge,
    CcDischarge,
    Cv,
    Rest,
}

impl PhaseKind {
    pub fn label(self) -> &'static str {
        match self {
            PhaseKind::CcCharge => "cc-charge",
            PhaseKind::CcDischarge => "cc-discharge",
            PhaseKind::Cv => "cv",
            PhaseKind::Rest => "rest",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        [PhaseKind::CcCharge, PhaseKind::CcDischarge, PhaseKind::Cv, PhaseKind::Rest]
            .into_iter()
            .find(|k| k.label() == label)
    }
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub phases: Vec<Phase>,
    pub cycles: usize,
}

impl Protocol {
    /// CC charge to `v_max`, CV hold at `v_max` until `cutoff_a`, CC discharge to `v_min`.
    pub fn cccv(current_a: f64, v_max: f64, cutoff_a: f64, v_min: f64, cycles: usize) -> Self {
        let i = current_a.abs();
        Self {
            phases: vec![
                Phase::Cc {
                    current_a: -i,
                    stop_voltage_v: v_max,
                },
                Phase::Cv {
                    set_point_v: v_max,
                    cutoff_a,
                },
                Phase::Cc {
                    current_a: i,
                    stop_voltage_v: v_min,
                },
            ],
            cycles,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub pair: CellPair,
    pub dt: f64,
    pub protocol: Protocol,
    pub initial_soc: [f64; 2],
    /// `None` disables the guard.
    pub soc_guard: Option<(f64, f64)>,
    pub max_phase_duration_s: f64,
}

impl SimConfig {
    pub fn new(pair: CellPair, dt: f64, protocol: Protocol, initial_soc: [f64; 2]) -> Self {
        Self {
            pair,
            dt,
            protocol,
            initial_soc,
            soc_guard: Some(DEFAULT_SOC_GUARD),
            max_phase_duration_s: DEFAULT_MAX_PHASE_S,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.initial_soc.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return bad(format!("initial SOCs must lie in [0, 1], got {:?}", self.initial_soc));
        }
        if self.protocol.cycles == 0 {
            return bad("protocol needs at least one cycle".into());
        }
        if self.protocol.phases.is_empty() {
            return bad("protocol needs at least one phase".into());
        }
        if !(self.max_phase_duration_s > 0.0) {
            return bad("max phase duration must be positive".into());
        }
        if let Some((lo, hi)) = self.soc_guard {
            if !(lo < hi) {
                return bad(format!("SOC guard band ({lo}, {hi}) is empty"));
            }
        }
        let windows = [self.pair.ocv[0].voltage_window(), self.pair.ocv[1].voltage_window()];
        let v_lo = windows[0].0.min(windows[1].0);
        let v_hi = windows[0].1.max(windows[1].1);
        let in_range = |v: f64| v.is_finite() && v >= v_lo && v <= v_hi;
        for (k, phase) in self.protocol.phases.iter().enumerate() {
            match *phase {
                Phase::Cc {
                    current_a,
                    stop_voltage_v,
                } => {
                    if !current_a.is_finite() {
                        return bad(format!("phase {}: current must be finite", k + 1));
                    }
                    if !in_range(stop_voltage_v) {
                        return bad(format!(
                            "phase {}: voltage limit {stop_voltage_v} V outside OCV range [{v_lo}, {v_hi}] V",
                            k + 1
                        ));
                    }
                }
                Phase::Cv { set_point_v, cutoff_a } => {
                    if !(cutoff_a > 0.0) {
                        return bad(format!("phase {}: CV cutoff must be positive", k + 1));
                    }
                    if !in_range(set_point_v) {
                        return bad(format!(
                            "phase {}: set-point {set_point_v} V outside OCV range [{v_lo}, {v_hi}] V",
                            k + 1
                        ));
                    }
                }
                Phase::Rest { duration_s } => {
                    if !(duration_s > 0.0 && duration_s.is_finite()) {
                        return bad(format!("phase {}: rest duration must be positive", k + 1));
                    }
                }
                Phase::CcTimed { current_a, duration_s } => {
                    if !current_a.is_finite() || !(duration_s > 0.0 && duration_s.is_finite()) {
                        return bad(format!("phase {}: timed CC needs a finite current and positive duration", k + 1));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs the protocol.
///
/// Sample `k` holds the state at `t_k = k dt` and the currents applied over
/// `[t_k, t_k + dt)`. Each phase checks its stop condition before every step;
/// the state that triggers a stop becomes the first sample of the next phase.
/// A final sample closes the trace.
pub fn run(config: &SimConfig) -> Result<Trace> {
    config.validate()?;
    let pair = &config.pair;
    let dt = config.dt;
    let max_steps = (config.max_phase_duration_s / dt).ceil() as u64;
    let mut state = PairState {
        t: 0.0,
        z: config.initial_soc,
    };
    let mut step: u64 = 0;
    let mut samples = Vec::new();
    let mut last = (1, 0, config.protocol.phases[0].kind(), BranchCurrents { i: [0.0; 2], v_t: 0.0 });

    for cycle in 1..=config.protocol.cycles {
        for (index, phase) in config.protocol.phases.iter().enumerate() {
            let kind = phase.kind();
            let fixed_steps = phase.fixed_steps(dt);
            let mut elapsed: u64 = 0;
            loop {
                let currents = match *phase {
                    Phase::Cc { current_a, .. } | Phase::CcTimed { current_a, .. } => pair.cc_currents(state.z, current_a),
                    Phase::Cv { set_point_v, .. } => pair.cv_currents(state.z, set_point_v),
                    Phase::Rest { .. } => pair.cc_currents(state.z, 0.0),
                };
                last = (cycle, index, kind, currents);
                let done = match *phase {
                    Phase::Cc {
                        current_a,
                        stop_voltage_v,
                    } => {
                        if current_a < 0.0 {
                            currents.v_t >= stop_voltage_v
                        } else {
                            currents.v_t <= stop_voltage_v
                        }
                    }
                    Phase::Cv { cutoff_a, .. } => currents.total().abs() <= cutoff_a,
                    Phase::Rest { .. } | Phase::CcTimed { .. } => Some(elapsed) == fixed_steps,
                };
                if done {
                    break;
                }
                if elapsed >= max_steps {
                    return Err(Error::PhaseTimeout {
                        cycle,
                        phase: index + 1,
                        kind,
                        max_s: config.max_phase_duration_s,
                    });
                }
                samples.push(TraceSample {
                    t_s: step as f64 * dt,
                    cycle,
                    phase_index: index,
                    kind,
                    z: state.z,
                    i: currents.i,
                    v_t: currents.v_t,
                });
                state = pair.advance(state, currents.i, dt);
                step += 1;
                elapsed += 1;
                if !state.z.iter().all(|z| z.is_finite()) {
                    return Err(Error::NonFinite { cycle, what: "SOC" });
                }
                if let Some((lo, hi)) = config.soc_guard {
                    if state.z.iter().any(|&z| z < lo || z > hi) {
                        return Err(Error::SocGuard {
                            cycle,
                            phase: index + 1,
                            kind,
                            t_s: step as f64 * dt,
                            z1: state.z[0],
                            z2: state.z[1],
                        });
                    }
                }
            }
        }
    }
    let (cycle, phase_index, kind, currents) = last;
    samples.push(TraceSample {
        t_s: step as f64 * dt,
        cycle,
        phase_index,
        kind,
        z: state.z,
        i: currents.i,
        v_t: currents.v_t,
    });
    Ok(Trace::new(samples, pair.cells, dt))
}
