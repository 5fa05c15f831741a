//! Successive update of imbalance dynamics and degradation: each cycle's
//! currents or depths of discharge set the reaction rates, the resulting
//! losses shrink the capacities and grow the resistances, and the next cycle
//! runs on the updated cells.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analytic::AffineSystem;
use crate::cell::CellParams;
use crate::degradation::{self, CycleWindow, DegradationParams, DegradationState, RateLaw};
use crate::error::{Error, Result};
use crate::ocv::{AffineOcv, OcvCurve};
use crate::simulator::{self, CellPair, PhaseKind, Protocol, SimConfig};

/// Per-cycle duration used by the analytic mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CycleDuration {
    /// `Q_tot / |I|` of the fresh pair, kept for every cycle.
    #[default]
    Fixed,
    /// `Q_tot / |I|` of the current pair, shrinking as the cells fade.
    Recomputed,
    /// Explicit duration in seconds.
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgingMode {
    /// Closed-form steady-state currents and end-of-discharge SOCs of the
    /// affine system under full constant-current cycles.
    Fast {
        alpha: f64,
        current_a: f64,
        cycle_duration: CycleDuration,
    },
    /// One simulated protocol cycle per aging cycle, started from the SOCs
    /// the previous cycle ended at.
    HighFidelity {
        ocv: [OcvCurve; 2],
        protocol: Protocol,
        dt: f64,
        initial_soc: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgingConfig {
    pub cells: [CellParams; 2],
    pub degradation: [DegradationParams; 2],
    /// Stop once either capacity falls to this floor, amp-seconds.
    pub q_min: f64,
    pub max_cycles: usize,
    pub mode: AgingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    FloorReached,
    MaxCycles,
}

/// State after `cycle` completed cycles, with the quantities that drove the
/// last update. Cycle 0 is the fresh pair and carries no drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgingRecord {
    pub cycle: usize,
    pub q: [f64; 2],
    pub r: [f64; 2],
    /// Effective reaction rate used in this cycle.
    pub rate: Option<[f64; 2]>,
    /// Cell current fed to the current law (steady-state or peak magnitude).
    pub drive_current: Option<[f64; 2]>,
    pub z_min: Option<[f64; 2]>,
    pub delta_l: Option<[f64; 2]>,
}

impl AgingRecord {
    pub fn dq(&self) -> f64 {
        self.q[1] - self.q[0]
    }

    pub fn dr(&self) -> f64 {
        self.r[1] - self.r[0]
    }

    pub fn q_ratio(&self) -> f64 {
        self.q[1] / self.q[0]
    }

    pub fn r_ratio(&self) -> f64 {
        self.r[1] / self.r[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgingTrace {
    pub records: Vec<AgingRecord>,
    pub termination: Termination,
    /// First cycle at which each capacity reached the floor.
    pub floor_cycle: [Option<usize>; 2],
    pub q_min: f64,
}

pub const AGING_CSV_HEADER: [&str; 10] = [
    "cycle", "q1_as", "q2_as", "r1_ohm", "r2_ohm", "dq_as", "q_ratio", "r_ratio", "rate1", "rate2",
];

/// One row of the aging CSV; rates are empty for the fresh pair and for
/// measured data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgingRow {
    pub cycle: usize,
    pub q1_as: f64,
    pub q2_as: f64,
    pub r1_ohm: f64,
    pub r2_ohm: f64,
    pub dq_as: f64,
    pub q_ratio: f64,
    pub r_ratio: f64,
    pub rate1: Option<f64>,
    pub rate2: Option<f64>,
}

impl From<&AgingRecord> for AgingRow {
    fn from(r: &AgingRecord) -> Self {
        Self {
            cycle: r.cycle,
            q1_as: r.q[0],
            q2_as: r.q[1],
            r1_ohm: r.r[0],
            r2_ohm: r.r[1],
            dq_as: r.dq(),
            q_ratio: r.q_ratio(),
            r_ratio: r.r_ratio(),
            rate1: r.rate.map(|x| x[0]),
            rate2: r.rate.map(|x| x[1]),
        }
    }
}

impl AgingTrace {
    pub fn rows(&self) -> Vec<AgingRow> {
        self.records.iter().map(AgingRow::from).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(&self.rows(), writer)
    }
}

pub fn write_rows<W: Write>(rows: &[AgingRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(AGING_CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.cycle.to_string(),
            r.q1_as.to_string(),
            r.q2_as.to_string(),
            r.r1_ohm.to_string(),
            r.r2_ohm.to_string(),
            r.dq_as.to_string(),
            r.q_ratio.to_string(),
            r.r_ratio.to_string(),
            opt(r.rate1),
            opt(r.rate2),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an aging CSV. The header must match the schema exactly; `#` lines
/// are comments.
pub fn read_rows<R: Read>(reader: R) -> Result<Vec<AgingRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(AGING_CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: headers.position().map_or(1, |p| p.line()),
            reason: format!(
                "expected columns `{}`, found `{}`",
                AGING_CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

impl AgingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.max_cycles == 0 {
            return bad("max_cycles must be at least 1".into());
        }
        if !(self.q_min >= 0.0) {
            return bad(format!("q_min must be non-negative, got {}", self.q_min));
        }
        if self.cells.iter().any(|c| c.q() <= self.q_min) {
            return bad("initial capacities must exceed q_min".into());
        }
        for d in &self.degradation {
            d.validate()?;
        }
        match &self.mode {
            AgingMode::Fast {
                alpha,
                current_a,
                cycle_duration,
            } => {
                if !(*alpha > 0.0) {
                    return bad(format!("alpha must be positive, got {alpha}"));
                }
                if !(*current_a != 0.0 && current_a.is_finite()) {
                    return bad("cycling current must be non-zero".into());
                }
                if let CycleDuration::Seconds(s) = cycle_duration {
                    if !(*s > 0.0) {
                        return bad(format!("cycle duration must be positive, got {s}"));
                    }
                }
            }
            AgingMode::HighFidelity { protocol, dt, .. } => {
                if protocol.cycles != 1 {
                    return bad("the per-cycle protocol must describe exactly one cycle".into());
                }
                if !(*dt > 0.0) {
                    return bad(format!("dt must be positive, got {dt}"));
                }
            }
        }
        Ok(())
    }
}

struct CycleDrive {
    rate: [f64; 2],
    drive_current: [f64; 2],
    z_min: [f64; 2],
    delta_l: [f64; 2],
}

/// How the current law is fed.
#[derive(Clone, Copy)]
enum Feed {
    Coupled,
    Fixed(f64),
}

fn check_finite(cycle: usize, what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { cycle, what })
    }
}

#[allow(clippy::too_many_arguments)]
fn fast_cycle(
    cells: [CellParams; 2],
    fresh_q: [f64; 2],
    alpha: f64,
    current_a: f64,
    duration: CycleDuration,
    params: &[DegradationParams; 2],
    state: &[DegradationState; 2],
    feed: Feed,
) -> Result<CycleDrive> {
    let sys = AffineSystem::new(cells[0], cells[1], AffineOcv::new(alpha, 1.0)?);
    let fresh_q_tot = fresh_q[0] + fresh_q[1];
    let q_tot = sys.q_tot();
    let i = current_a.abs();
    let i_ss = [cells[0].q() / q_tot * i, cells[1].q() / q_tot * i];
    let t_discharge = q_tot / i;
    let z_end = sys.soc_trajectory([1.0, 1.0], i, t_discharge);
    let z_min = [z_end[0].max(0.0), z_end[1].max(0.0)];
    // a control cell cycles alone at its fixed current
    let dt = |k: usize| match (duration, feed) {
        (CycleDuration::Seconds(s), _) => s,
        (CycleDuration::Fixed, Feed::Coupled) => fresh_q_tot / i,
        (CycleDuration::Recomputed, Feed::Coupled) => t_discharge,
        (CycleDuration::Fixed, Feed::Fixed(f)) => fresh_q[k] / f.abs(),
        (CycleDuration::Recomputed, Feed::Fixed(f)) => cells[k].q() / f.abs(),
    };
    let mut out = CycleDrive {
        rate: [0.0; 2],
        drive_current: i_ss,
        z_min,
        delta_l: [0.0; 2],
    };
    for k in 0..2 {
        let current = match feed {
            Feed::Coupled => i_ss[k],
            Feed::Fixed(f) => f,
        };
        out.drive_current[k] = current;
        out.rate[k] = degradation::rate_for(params[k].rate_law, current, z_min[k])?;
        out.delta_l[k] = degradation::incremental_loss_const(out.rate[k], params[k].p, state[k].l_total, dt(k))?;
    }
    Ok(out)
}

fn simulated_cycle(
    pair: CellPair,
    protocol: &Protocol,
    dt: f64,
    start: [f64; 2],
    params: &[DegradationParams; 2],
    state: &[DegradationState; 2],
    feed: Feed,
) -> Result<(CycleDrive, [f64; 2])> {
    let trace = simulator::run(&SimConfig::new(pair, dt, protocol.clone(), start))?;
    let samples = &trace.samples;
    let first = samples.first().map_or(0.0, |s| s.t_s);
    let last = samples.last().map_or(0.0, |s| s.t_s);
    let window = CycleWindow::new(first, last)?;
    let discharge: Vec<_> = samples.iter().filter(|s| s.kind == PhaseKind::CcDischarge).collect();
    let pool: Vec<_> = if discharge.is_empty() { samples.iter().collect() } else { discharge };
    let mut out = CycleDrive {
        rate: [0.0; 2],
        drive_current: [0.0; 2],
        z_min: [0.0; 2],
        delta_l: [0.0; 2],
    };
    for k in 0..2 {
        out.z_min[k] = pool.iter().map(|s| s.z[k]).fold(f64::INFINITY, f64::min).max(0.0);
        out.drive_current[k] = samples.iter().map(|s| s.i[k].abs()).fold(0.0, f64::max);
        let p = params[k].p;
        let l = state[k].l_total;
        let (rate, dl) = match (params[k].rate_law, feed) {
            (RateLaw::Current { gamma }, Feed::Coupled) => {
                let signal: Vec<(f64, f64)> = samples.iter().map(|s| (s.t_s, gamma * s.i[k].abs())).collect();
                let integral = degradation::rate_integral(&signal, p, window)?;
                let effective = (integral / window.duration()).powf(p);
                (effective, degradation::loss_from_integral(integral, p, l))
            }
            (law, feed) => {
                let current = match feed {
                    Feed::Fixed(f) => f,
                    Feed::Coupled => out.drive_current[k],
                };
                let r = degradation::rate_for(law, current, out.z_min[k])?;
                (r, degradation::incremental_loss_const(r, p, l, window.duration())?)
            }
        };
        out.rate[k] = rate;
        out.delta_l[k] = dl;
    }
    let end = samples.last().map_or(start, |s| [s.z[0].clamp(0.0, 1.0), s.z[1].clamp(0.0, 1.0)]);
    Ok((out, end))
}

fn run_loop(config: &AgingConfig, feed: Feed) -> Result<AgingTrace> {
    config.validate()?;
    let fresh = config.cells;
    let fresh_q = [fresh[0].q(), fresh[1].q()];
    let mut state = [DegradationState::default(); 2];
    let mut cells = fresh;
    let mut soc = match &config.mode {
        AgingMode::HighFidelity { initial_soc, .. } => *initial_soc,
        AgingMode::Fast { .. } => [1.0, 1.0],
    };
    let mut records = vec![AgingRecord {
        cycle: 0,
        q: [fresh[0].q(), fresh[1].q()],
        r: [fresh[0].r(), fresh[1].r()],
        rate: None,
        drive_current: None,
        z_min: None,
        delta_l: None,
    }];
    let mut floor_cycle = [None; 2];
    let mut termination = Termination::MaxCycles;

    for n in 1..=config.max_cycles {
        let drive = match &config.mode {
            AgingMode::Fast {
                alpha,
                current_a,
                cycle_duration,
            } => fast_cycle(
                cells,
                fresh_q,
                *alpha,
                *current_a,
                *cycle_duration,
                &config.degradation,
                &state,
                feed,
            )?,
            AgingMode::HighFidelity {
                ocv, protocol, dt, ..
            } => {
                let (drive, end) = simulated_cycle(
                    CellPair::new(cells, ocv.clone()),
                    protocol,
                    *dt,
                    soc,
                    &config.degradation,
                    &state,
                    feed,
                )?;
                soc = end;
                drive
            }
        };
        check_finite(n, "reaction rate", &drive.rate)?;
        check_finite(n, "capacity loss", &drive.delta_l)?;
        let mut q = [0.0; 2];
        let mut r = [0.0; 2];
        let mut drive = drive;
        for k in 0..2 {
            // a cell cannot lose more than it has left above the floor
            drive.delta_l[k] = drive.delta_l[k].min(cells[k].q() - config.q_min);
            state[k] = degradation::apply_cycle(state[k], drive.delta_l[k], &config.degradation[k]);
            // incremental form keeps the capacity ratio exact under proportional losses
            q[k] = cells[k].q() - drive.delta_l[k];
            r[k] = fresh[k].r() + state[k].g_total;
        }
        check_finite(n, "capacity", &q)?;
        check_finite(n, "resistance", &r)?;
        records.push(AgingRecord {
            cycle: n,
            q,
            r,
            rate: Some(drive.rate),
            drive_current: Some(drive.drive_current),
            z_min: Some(drive.z_min),
            delta_l: Some(drive.delta_l),
        });
        let mut floored = false;
        for k in 0..2 {
            if q[k] <= config.q_min {
                floor_cycle[k].get_or_insert(n);
                floored = true;
            }
        }
        if floored {
            termination = Termination::FloorReached;
            break;
        }
        cells = [CellParams::new(q[0], r[0])?, CellParams::new(q[1], r[1])?];
    }
    Ok(AgingTrace {
        records,
        termination,
        floor_cycle,
        q_min: config.q_min,
    })
}

/// Runs the coupled aging loop until either capacity reaches `q_min` or
/// `max_cycles` is exhausted.
pub fn run_aging(config: &AgingConfig) -> Result<AgingTrace> {
    run_loop(config, Feed::Coupled)
}

/// Same loop with the current law fed a fixed current, so each cell ages
/// independently of its partner. Constant-rate laws are unaffected; the DOD
/// law has no fixed-current form and is rejected.
pub fn control_run(config: &AgingConfig, fixed_current: f64) -> Result<AgingTrace> {
    if config.degradation.iter().any(|d| matches!(d.rate_law, RateLaw::Dod { .. })) {
        return Err(Error::InvalidParameter(
            "control runs fix the current; the DOD rate law does not apply".into(),
        ));
    }
    run_loop(config, Feed::Fixed(fixed_current))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converging,
    Diverging,
    Neutral,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Converging => "converging",
            Verdict::Diverging => "diverging",
            Verdict::Neutral => "neutral",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceMetrics {
    pub cycles: Vec<usize>,
    pub abs_dq: Vec<f64>,
    pub abs_dr: Vec<f64>,
    pub q_ratio: Vec<f64>,
    pub r_ratio: Vec<f64>,
    pub capacity: Verdict,
    pub resistance: Verdict,
    /// Least-squares slope of `|dQ|` against cycle over the trailing window.
    pub capacity_slope: f64,
    pub resistance_slope: f64,
    pub window: usize,
}

/// Default trailing window, in records.
pub const DEFAULT_WINDOW: usize = 50;

fn trailing_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

fn verdict(slope: f64, values: &[f64], span: f64) -> Verdict {
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    // relative change over the window below round-off counts as flat
    if scale == 0.0 || (slope * span).abs() <= 1e-12 * scale {
        Verdict::Neutral
    } else if slope < 0.0 {
        Verdict::Converging
    } else {
        Verdict::Diverging
    }
}

/// Gap metrics and converging/diverging verdicts from the slope of `|dQ|`
/// and `|dR|` over the last `window` rows.
pub fn convergence_metrics(rows: &[AgingRow], window: usize) -> Result<ConvergenceMetrics> {
    if rows.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "convergence metrics need at least 2 rows, got {}",
            rows.len()
        )));
    }
    let cycles: Vec<usize> = rows.iter().map(|r| r.cycle).collect();
    let abs_dq: Vec<f64> = rows.iter().map(|r| (r.q2_as - r.q1_as).abs()).collect();
    let abs_dr: Vec<f64> = rows.iter().map(|r| (r.r2_ohm - r.r1_ohm).abs()).collect();
    let w = window.clamp(2, rows.len());
    let tail = rows.len() - w;
    let x: Vec<f64> = cycles[tail..].iter().map(|&c| c as f64).collect();
    let span = x[x.len() - 1] - x[0];
    let capacity_slope = trailing_slope(&x, &abs_dq[tail..]);
    let resistance_slope = trailing_slope(&x, &abs_dr[tail..]);
    Ok(ConvergenceMetrics {
        capacity: verdict(capacity_slope, &abs_dq[tail..], span),
        resistance: verdict(resistance_slope, &abs_dr[tail..], span),
        cycles,
        q_ratio: rows.iter().map(|r| r.q_ratio).collect(),
        r_ratio: rows.iter().map(|r| r.r_ratio).collect(),
        abs_dq,
        abs_dr,
        capacity_slope,
        resistance_slope,
        window: w,
    })
}
