//! Closed-form dynamics of two cells in parallel with a shared affine OCV.
//!
//! Sign convention: applied current is positive on discharge and
//! `dz_i/dt = -I_i / Q_i`. Imbalances are cell 2 minus cell 1. Closed forms
//! are evaluated without clamping SOC to `[0, 1]`.

use serde::Serialize;

use crate::cell::CellParams;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::ocv::AffineOcv;
use crate::simulator::{Phase, Protocol, Trace, TraceSample, DEFAULT_MAX_PHASE_S};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineSystem {
    pub cell1: CellParams,
    pub cell2: CellParams,
    pub ocv: AffineOcv,
}

/// Time constant `tau` (s) and input sensitivity `kappa` (1/A).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineDerived {
    pub tau: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchSolution {
    pub i1: f64,
    pub i2: f64,
    /// SOC-rebalancing part of each branch current.
    pub i_rebalance: [f64; 2],
    /// Resistive-divider part of each branch current.
    pub i_ohmic: [f64; 2],
    pub terminal_voltage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvSolution {
    pub z: [f64; 2],
    pub i: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyState {
    pub dz_ss: f64,
    pub di_ss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxImbalance {
    pub max_abs_dz: f64,
    pub max_abs_di: f64,
}

impl AffineSystem {
    pub fn new(cell1: CellParams, cell2: CellParams, ocv: AffineOcv) -> Self {
        Self { cell1, cell2, ocv }
    }

    pub fn alpha(&self) -> f64 {
        self.ocv.alpha()
    }

    pub fn r_tot(&self) -> f64 {
        self.cell1.r() + self.cell2.r()
    }

    pub fn q_tot(&self) -> f64 {
        self.cell1.q() + self.cell2.q()
    }

    /// `R2 - R1`.
    pub fn delta_r(&self) -> f64 {
        self.cell2.r() - self.cell1.r()
    }

    /// `Q2 - Q1`.
    pub fn delta_q(&self) -> f64 {
        self.cell2.q() - self.cell1.q()
    }

    pub fn derived(&self) -> AffineDerived {
        let (q1, q2) = (self.cell1.q(), self.cell2.q());
        let (r1, r2) = (self.cell1.r(), self.cell2.r());
        let q_tot = q1 + q2;
        AffineDerived {
            tau: self.r_tot() / self.alpha() * (q1 * q2 / q_tot),
            kappa: (r2 * q2 - r1 * q1) / (self.alpha() * q_tot),
        }
    }

    pub fn tau(&self) -> f64 {
        self.derived().tau
    }

    pub fn kappa(&self) -> f64 {
        self.derived().kappa
    }

    /// `exp(-t / tau)`.
    fn decay(&self, t: f64) -> f64 {
        (-t / self.tau()).exp()
    }

    /// SOC imbalance `dz(t)` under constant current.
    pub fn soc_imbalance(&self, dz0: f64, i_applied: f64, t: f64) -> f64 {
        let e = self.decay(t);
        dz0 * e + self.kappa() * (1.0 - e) * i_applied
    }

    /// Both SOCs under constant current.
    ///
    /// The capacity-weighted mean SOC falls linearly at `I / Q_tot` and the
    /// imbalance relaxes with `tau`; each SOC is recovered from the pair.
    pub fn soc_trajectory(&self, z0: [f64; 2], i_applied: f64, t: f64) -> [f64; 2] {
        let (q1, q2) = (self.cell1.q(), self.cell2.q());
        let q_tot = q1 + q2;
        let mean = (q1 * z0[0] + q2 * z0[1]) / q_tot - i_applied * t / q_tot;
        let dz = self.soc_imbalance(z0[1] - z0[0], i_applied, t);
        [mean - q2 / q_tot * dz, mean + q1 / q_tot * dz]
    }

    /// Terminal voltage for the given SOCs and applied current.
    pub fn terminal_voltage(&self, z: [f64; 2], i_applied: f64) -> f64 {
        let (r1, r2) = (self.cell1.r(), self.cell2.r());
        (r1 * self.ocv.eval(z[1]) + r2 * self.ocv.eval(z[0]) - r1 * r2 * i_applied) / (r1 + r2)
    }

    /// Branch currents at SOC state `z`.
    pub fn branch_currents_at(&self, z: [f64; 2], i_applied: f64) -> BranchSolution {
        let r_tot = self.r_tot();
        let rebalance = self.alpha() / r_tot * (z[1] - z[0]);
        let ohmic = [self.cell2.r() / r_tot * i_applied, self.cell1.r() / r_tot * i_applied];
        let i1 = ohmic[0] - rebalance;
        BranchSolution {
            i1,
            i2: i_applied - i1,
            i_rebalance: [-rebalance, rebalance],
            i_ohmic: ohmic,
            terminal_voltage: self.terminal_voltage(z, i_applied),
        }
    }

    /// Branch currents at time `t` from initial SOCs `z0`.
    pub fn branch_currents(&self, z0: [f64; 2], i_applied: f64, t: f64) -> BranchSolution {
        self.branch_currents_at(self.soc_trajectory(z0, i_applied, t), i_applied)
    }

    /// `dI(t) = (2 alpha / R_tot) dz(t) - (dR / R_tot) I`.
    pub fn current_imbalance(&self, dz0: f64, i_applied: f64, t: f64) -> f64 {
        let r_tot = self.r_tot();
        2.0 * self.alpha() / r_tot * self.soc_imbalance(dz0, i_applied, t) - self.delta_r() / r_tot * i_applied
    }

    /// Per-cell CV time constants `Q_i R_i / alpha`.
    pub fn cv_time_constants(&self) -> [f64; 2] {
        [
            self.cell1.q() * self.cell1.r() / self.alpha(),
            self.cell2.q() * self.cell2.r() / self.alpha(),
        ]
    }

    /// Potentiostatic hold at `alpha + beta`: each SOC relaxes to 1 with its own
    /// time constant and `I_i = (alpha / R_i)(z_i - 1)`.
    pub fn cv_solution(&self, z0: [f64; 2], t: f64) -> CvSolution {
        let taus = self.cv_time_constants();
        let rs = [self.cell1.r(), self.cell2.r()];
        let mut z = [0.0; 2];
        let mut i = [0.0; 2];
        for k in 0..2 {
            let e = (-t / taus[k]).exp();
            z[k] = 1.0 - (1.0 - z0[k]) * e;
            i[k] = self.alpha() / rs[k] * (z[k] - 1.0);
        }
        CvSolution { z, i }
    }

    /// CV set-point `U(1) = alpha + beta`.
    pub fn cv_set_point(&self) -> f64 {
        self.ocv.eval(1.0)
    }

    pub fn steady_state(&self, i_applied: f64) -> SteadyState {
        SteadyState {
            dz_ss: self.kappa() * i_applied,
            di_ss: self.delta_q() / self.q_tot() * i_applied,
        }
    }

    /// Peak imbalances under constant current; both trajectories are
    /// monotone between their initial and steady-state values.
    pub fn max_imbalance(&self, dz0: f64, i_applied: f64) -> MaxImbalance {
        let ss = self.steady_state(i_applied);
        MaxImbalance {
            max_abs_dz: dz0.abs().max(ss.dz_ss.abs()),
            max_abs_di: (2.0 * self.alpha() / self.r_tot() * dz0).abs().max(ss.di_ss.abs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub q_ratio: f64,
    pub r_ratio: f64,
    pub dz_ss: f64,
    pub di_ss: f64,
    /// Aged cell carries less discharge current at steady state.
    pub current_rule_convergent: bool,
    /// Aged cell ends discharge at a higher SOC.
    pub dod_rule_convergent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateMap {
    pub q_ratios: Vec<f64>,
    pub r_ratios: Vec<f64>,
    /// Row-major: q ratio outer, r ratio inner.
    pub points: Vec<SweepPoint>,
}

impl SteadyStateMap {
    pub fn get(&self, qi: usize, ri: usize) -> &SweepPoint {
        &self.points[qi * self.r_ratios.len() + ri]
    }
}

/// Steady-state imbalance map over `(Q2/Q1, R2/R1)` with cell 2 fixed.
///
/// Values are reported at `i_applied`; the convergence flags are sign tests
/// evaluated for discharge at `|i_applied|`.
pub fn sweep_steady_state(
    cell2: CellParams,
    q_ratios: &[f64],
    r_ratios: &[f64],
    i_applied: f64,
    alpha: f64,
    exec: Execution,
) -> Result<SteadyStateMap> {
    if q_ratios.is_empty() || r_ratios.is_empty() {
        return Err(Error::InvalidParameter("sweep grids must be non-empty".into()));
    }
    if let Some(bad) = q_ratios.iter().chain(r_ratios).find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter(format!("sweep ratios must be positive, got {bad}")));
    }
    // beta does not enter any steady-state quantity
    let ocv = AffineOcv::new(alpha, 1.0)?;
    let cells: Vec<(f64, f64)> = q_ratios
        .iter()
        .flat_map(|&q| r_ratios.iter().map(move |&r| (q, r)))
        .collect();
    let points = exec::map(exec, &cells, |&(q_ratio, r_ratio)| -> Result<SweepPoint> {
        let cell1 = CellParams::new(cell2.q() / q_ratio, cell2.r() / r_ratio)?;
        let sys = AffineSystem::new(cell1, cell2, ocv);
        let ss = sys.steady_state(i_applied);
        let discharge = sys.steady_state(i_applied.abs());
        Ok(SweepPoint {
            q_ratio,
            r_ratio,
            dz_ss: ss.dz_ss,
            di_ss: ss.di_ss,
            current_rule_convergent: discharge.di_ss < 0.0,
            dod_rule_convergent: discharge.dz_ss > 0.0,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SteadyStateMap {
        q_ratios: q_ratios.to_vec(),
        r_ratios: r_ratios.to_vec(),
        points,
    })
}

/// Samples the closed forms along a protocol on a uniform grid of step `dt`,
/// with the same stop conventions as the time-stepping simulator: stop
/// conditions are checked on the grid and the triggering state starts the
/// next phase. CV holds must use the set-point `U(1)`, where a closed form
/// exists.
pub fn protocol_trace(sys: &AffineSystem, protocol: &Protocol, z0: [f64; 2], dt: f64) -> Result<Trace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if protocol.cycles == 0 || protocol.phases.is_empty() {
        return Err(Error::InvalidParameter("protocol needs at least one cycle and one phase".into()));
    }
    let max_steps = (DEFAULT_MAX_PHASE_S / dt).ceil() as u64;
    let mut z = z0;
    let mut step: u64 = 0;
    let mut samples = Vec::new();
    let mut last = None;
    for cycle in 1..=protocol.cycles {
        for (index, phase) in protocol.phases.iter().enumerate() {
            if let Phase::Cv { set_point_v, .. } = *phase {
                if (set_point_v - sys.cv_set_point()).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "closed-form CV hold needs the set-point U(1) = {} V, got {set_point_v} V",
                        sys.cv_set_point()
                    )));
                }
            }
            let kind = phase.kind();
            let fixed_steps = phase.fixed_steps(dt);
            let start = z;
            let mut elapsed: u64 = 0;
            loop {
                let t = elapsed as f64 * dt;
                let (zk, i, v_t) = match *phase {
                    Phase::Cc { current_a, .. } | Phase::CcTimed { current_a, .. } => {
                        let zk = sys.soc_trajectory(start, current_a, t);
                        let b = sys.branch_currents_at(zk, current_a);
                        (zk, [b.i1, b.i2], b.terminal_voltage)
                    }
                    Phase::Rest { .. } => {
                        let zk = sys.soc_trajectory(start, 0.0, t);
                        let b = sys.branch_currents_at(zk, 0.0);
                        (zk, [b.i1, b.i2], b.terminal_voltage)
                    }
                    Phase::Cv { set_point_v, .. } => {
                        let s = sys.cv_solution(start, t);
                        (s.z, s.i, set_point_v)
                    }
                };
                z = zk;
                last = Some((cycle, index, kind, i, v_t));
                let done = match *phase {
                    Phase::Cc {
                        current_a,
                        stop_voltage_v,
                    } => {
                        if current_a < 0.0 {
                            v_t >= stop_voltage_v
                        } else {
                            v_t <= stop_voltage_v
                        }
                    }
                    Phase::Cv { cutoff_a, .. } => (i[0] + i[1]).abs() <= cutoff_a,
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
                        max_s: DEFAULT_MAX_PHASE_S,
                    });
                }
                samples.push(TraceSample {
                    t_s: step as f64 * dt,
                    cycle,
                    phase_index: index,
                    kind,
                    z: zk,
                    i,
                    v_t,
                });
                step += 1;
                elapsed += 1;
            }
        }
    }
    if let Some((cycle, phase_index, kind, i, v_t)) = last {
        samples.push(TraceSample {
            t_s: step as f64 * dt,
            cycle,
            phase_index,
            kind,
            z,
            i,
            v_t,
        });
    }
    Ok(Trace::new(samples, [sys.cell1, sys.cell2], dt))
}
