//! One function per subcommand. Each reads its config, runs the library,
//! writes its artifacts and returns a short human-readable report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pairsim::analytic::{self, AffineSystem};
use pairsim::bounds;
use pairsim::coupled::{self, AgingConfig, AgingMode, AgingRow, AgingTrace, ConvergenceMetrics, Verdict};
use pairsim::degradation;
use pairsim::simulator::{self, CellPair, Phase, PhaseKind, Protocol, SimConfig, Trace};
use pairsim::{Execution, OcvCurve};
use serde::Serialize;

use crate::config::{
    self, AnalyticConfig, BoundsCase, BoundsConfig, CompareConfig, DegradeConfig, DegradeMode, Experiment, Loaded,
    SimulateConfig, SweepConfig,
};
use crate::error::CliError;
use crate::output::OutDir;
use crate::plot::{LinePlot, Series};
use crate::suite;

/// Flags shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub plot: bool,
    /// 1 runs sequentially, 0 uses every core, `n` uses `n` threads.
    pub workers: usize,
    pub seed: Option<u64>,
}

impl Options {
    pub fn new(config: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            config: Some(config.into()),
            out: out.into(),
            plot: false,
            workers: 1,
            seed: None,
        }
    }

    fn config_path(&self) -> Result<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| CliError::config("this command needs --config <path>").into())
    }

    fn exec(&self) -> Execution {
        if self.workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn load<T: for<'de> serde::Deserialize<'de>>(&self, experiment: Experiment) -> Result<Loaded<T>> {
        config::load(self.config_path()?, experiment)
    }
}

/// What a command did: summary lines for the terminal and the files it wrote.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Report {
    fn finish(mut self, out: &OutDir) -> Self {
        self.files = out.written().to_vec();
        self
    }
}

fn fmt(v: f64) -> String {
    v.to_string()
}

/// Three significant digits, as printed in reports.
pub fn sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 2 - v.abs().log10().floor() as i32;
    format!("{:.*}", digits.max(0) as usize, v)
}

fn trace_row(s: &simulator::TraceSample) -> Vec<String> {
    vec![
        fmt(s.t_s),
        s.cycle.to_string(),
        s.kind.label().to_string(),
        fmt(s.z[0]),
        fmt(s.z[1]),
        fmt(s.i[0]),
        fmt(s.i[1]),
        fmt(s.v_t),
    ]
}

fn write_svg(out: &mut OutDir, name: &str, plot: LinePlot) -> Result<()> {
    out.write_bytes(name, plot.render().as_bytes())?;
    Ok(())
}

fn imbalance_plot(title: &str, trace: &Trace) -> LinePlot {
    LinePlot {
        title: title.into(),
        x_label: "time (s)".into(),
        y_label: "imbalance (-, A)".into(),
        series: vec![
            Series::new("dz", trace.samples.iter().map(|s| (s.t_s, s.dz())).collect()),
            Series::new("dI (A)", trace.samples.iter().map(|s| (s.t_s, s.di())).collect()),
        ],
    }
}

// ---------------------------------------------------------------- analytic

#[derive(Serialize)]
struct PhaseSteadyState {
    phase: usize,
    kind: PhaseKind,
    current_a: f64,
    dz_ss: f64,
    di_ss: f64,
}

#[derive(Serialize)]
struct AnalyticSummary {
    tau_s: f64,
    kappa_per_a: f64,
    cv_set_point_v: f64,
    cv_time_constants_s: [f64; 2],
    steady_state: Vec<PhaseSteadyState>,
    samples: usize,
    final_t_s: f64,
    final_dz: f64,
    final_di: f64,
}

pub fn cmd_analytic(opts: &Options) -> Result<Report> {
    let loaded: Loaded<AnalyticConfig> = opts.load(Experiment::Analytic)?;
    let cfg = &loaded.body;
    let cells = config::cell_pair(&cfg.cells)?;
    let curve = cfg.ocv.curve(&loaded.base_dir)?;
    let affine = *curve
        .as_affine()
        .ok_or_else(|| CliError::config("analytic experiments need a linear OCV (`affine` or a bundled affine curve)"))?;
    let sys = AffineSystem::new(cells[0], cells[1], affine);
    let protocol = cfg.protocol.protocol()?;
    let trace = analytic::protocol_trace(&sys, &protocol, cfg.initial_soc, cfg.dt_s)?;

    let steady_state = protocol
        .phases
        .iter()
        .enumerate()
        .filter_map(|(k, phase)| match *phase {
            Phase::Cc { current_a, .. } | Phase::CcTimed { current_a, .. } => {
                let ss = sys.steady_state(current_a);
                Some(PhaseSteadyState {
                    phase: k + 1,
                    kind: phase.kind(),
                    current_a,
                    dz_ss: ss.dz_ss,
                    di_ss: ss.di_ss,
                })
            }
            _ => None,
        })
        .collect();
    let last = trace.samples.last().context("empty trace")?;
    let summary = AnalyticSummary {
        tau_s: sys.tau(),
        kappa_per_a: sys.kappa(),
        cv_set_point_v: sys.cv_set_point(),
        cv_time_constants_s: sys.cv_time_constants(),
        steady_state,
        samples: trace.len(),
        final_t_s: last.t_s,
        final_dz: last.dz(),
        final_di: last.di(),
    };

    let mut out = OutDir::create(&opts.out)?;
    let mut header: Vec<&str> = Trace::CSV_HEADER.to_vec();
    header.extend(["dz", "di"]);
    out.write_table(
        "analytic.csv",
        &header,
        trace.samples.iter().map(|s| {
            let mut row = trace_row(s);
            row.extend([fmt(s.dz()), fmt(s.di())]);
            row
        }),
    )?;
    out.write_json("steady_state.json", &summary)?;
    if opts.plot {
        write_svg(&mut out, "analytic.svg", imbalance_plot("closed-form imbalance", &trace))?;
    }
    let mut report = Report::default();
    report.lines.push(format!(
        "tau = {:.1} s, kappa = {:.4e} 1/A, {} samples",
        summary.tau_s,
        summary.kappa_per_a,
        trace.len()
    ));
    for p in &summary.steady_state {
        report.lines.push(format!(
            "phase {} ({}) at {} A: dz_ss = {:.4e}, dI_ss = {:.4} A",
            p.phase, p.kind, p.current_a, p.dz_ss, p.di_ss
        ));
    }
    Ok(report.finish(&out))
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub cycles: usize,
    pub samples: usize,
    pub duration_s: f64,
    pub max_abs_dz_per_cycle: Vec<f64>,
    /// Hausdorff distance between consecutive cycle orbits.
    pub orbit_closure: Vec<f64>,
    pub charge_balance_relative_error: f64,
    pub max_voltage_residual_v: f64,
    /// After the first cycle: worst `|dI + (dR / R_tot) I| / max |I|`.
    pub post_first_cycle_di_error_frac: Option<f64>,
    pub post_first_cycle_max_abs_dz: Option<f64>,
    pub overlay: Option<String>,
}

/// Post-processing shared by `simulate` and the acceptance checks.
pub fn summarize_trace(trace: &Trace, pair: &CellPair) -> SimulateSummary {
    let cycles = trace.cycle_count();
    let max_abs_dz_per_cycle = (1..=cycles).map(|c| trace.max_abs_dz(trace.cycle_range(c))).collect();
    let orbit_closure = simulator::phase_orbit(trace).map(|o| o.closure).unwrap_or_default();
    let balance = trace.charge_balance(0, trace.len() - 1);
    let r = [pair.cells[0].r(), pair.cells[1].r()];
    let max_voltage_residual_v = trace
        .samples
        .iter()
        .map(|s| {
            let v1 = pair.ocv[0].eval_extended(s.z[0]) - s.i[0] * r[0];
            let v2 = pair.ocv[1].eval_extended(s.z[1]) - s.i[1] * r[1];
            (v1 - s.v_t).abs().max((v2 - s.v_t).abs())
        })
        .fold(0.0, f64::max);
    let (mut di_err, mut dz_max) = (None, None);
    if cycles >= 2 {
        let after = &trace.samples[trace.cycle_range(2).start..];
        let i_max = trace.samples.iter().map(|s| s.total_current().abs()).fold(0.0, f64::max);
        let ohmic = (r[1] - r[0]) / (r[0] + r[1]);
        let worst = after
            .iter()
            .map(|s| (s.di() + ohmic * s.total_current()).abs())
            .fold(0.0, f64::max);
        di_err = Some(if i_max > 0.0 { worst / i_max } else { worst });
        dz_max = Some(after.iter().map(|s| s.dz().abs()).fold(0.0, f64::max));
    }
    SimulateSummary {
        cycles,
        samples: trace.len(),
        duration_s: trace.samples.last().map_or(0.0, |s| s.t_s),
        max_abs_dz_per_cycle,
        orbit_closure,
        charge_balance_relative_error: balance.relative_error(),
        max_voltage_residual_v,
        post_first_cycle_di_error_frac: di_err,
        post_first_cycle_max_abs_dz: dz_max,
        overlay: None,
    }
}

fn sim_config(
    pair: CellPair,
    dt: f64,
    protocol: Protocol,
    initial_soc: [f64; 2],
    guard: Option<[f64; 2]>,
    max_phase_s: Option<f64>,
) -> SimConfig {
    let mut config = SimConfig::new(pair, dt, protocol, initial_soc);
    config.soc_guard = guard.map(|[lo, hi]| (lo, hi));
    if let Some(max) = max_phase_s {
        config.max_phase_duration_s = max;
    }
    config
}

pub fn cmd_simulate(opts: &Options) -> Result<Report> {
    let loaded: Loaded<SimulateConfig> = opts.load(Experiment::Simulate)?;
    let cfg = &loaded.body;
    let pair = cfg.pair.pair(&loaded.base_dir)?;
    let protocol = cfg.protocol.protocol()?;
    let config = sim_config(
        pair.clone(),
        cfg.dt_s,
        protocol.clone(),
        cfg.initial_soc,
        cfg.soc_guard,
        cfg.max_phase_s,
    );
    let trace = simulator::run(&config)?;
    let mut summary = summarize_trace(&trace, &pair);

    let overlay_curve: Option<OcvCurve> = match (&cfg.overlay_ocv, cfg.overlay) {
        (_, false) => None,
        (Some(spec), true) => Some(spec.curve(&loaded.base_dir)?),
        (None, true) if cfg.pair.ocv_cell2.is_none() => cfg.pair.ocv.affine_counterpart(),
        (None, true) => None,
    };
    let overlay = match overlay_curve {
        Some(curve) if pair.ocv[0].as_affine().is_none() => {
            let linear = CellPair::shared(pair.cells[0], pair.cells[1], curve);
            let one_cycle = Protocol {
                phases: protocol.phases.clone(),
                cycles: 1,
            };
            let linear_config = sim_config(linear, cfg.dt_s, one_cycle, cfg.initial_soc, cfg.soc_guard, cfg.max_phase_s);
            let linear_trace = simulator::run(&linear_config).context("linear overlay run")?;
            summary.overlay = Some("overlay.csv".into());
            Some(simulator::realign(&trace, &linear_trace)?)
        }
        _ => None,
    };

    let mut out = OutDir::create(&opts.out)?;
    out.write_with("trace.csv", |buf| trace.write_csv(buf))?;
    if let Some(rows) = &overlay {
        out.write_with("overlay.csv", |buf| simulator::write_overlay_csv(rows, buf))?;
    }
    out.write_json("summary.json", &summary)?;
    if opts.plot {
        write_svg(&mut out, "imbalance.svg", imbalance_plot("SOC and current imbalance", &trace))?;
        let series = (1..=trace.cycle_count())
            .map(|c| {
                Series::new(
                    format!("cycle {c}"),
                    trace.samples[trace.cycle_range(c)].iter().map(|s| (s.z[0], s.z[1])).collect(),
                )
            })
            .collect();
        let orbit = LinePlot {
            title: "phase orbit".into(),
            x_label: "z1".into(),
            y_label: "z2".into(),
            series,
        };
        write_svg(&mut out, "orbit.svg", orbit)?;
    }

    let mut report = Report::default();
    report.lines.push(format!(
        "{} cycles, {} samples, charge balance error {:.2e}",
        summary.cycles, summary.samples, summary.charge_balance_relative_error
    ));
    report.lines.push(format!(
        "max |dz| per cycle: {}",
        summary.max_abs_dz_per_cycle.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
    ));
    if !summary.orbit_closure.is_empty() {
        report.lines.push(format!(
            "orbit closure: {}",
            summary.orbit_closure.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ));
    }
    Ok(report.finish(&out))
}

// ---------------------------------------------------------------- sweep

#[derive(Serialize)]
struct SweepSummary {
    q_count: usize,
    r_count: usize,
    current_a: f64,
    current_rule_convergent: usize,
    dod_rule_convergent: usize,
    /// Points whose SOC-rule sign disagrees with `Q2 R2 > Q1 R1`.
    qr_line_mismatches: usize,
}

pub fn cmd_sweep(opts: &Options) -> Result<Report> {
    let loaded: Loaded<SweepConfig> = opts.load(Experiment::Sweep)?;
    let cfg = &loaded.body;
    let cell2 = cfg.cell2.params().context("cell2")?;
    let (q, r) = (cfg.q_ratios.values(), cfg.r_ratios.values());
    let exec = opts.exec();
    let map = pairsim::exec::with_workers(opts.workers, || {
        analytic::sweep_steady_state(cell2, &q, &r, cfg.current_a, cfg.alpha, exec)
    })?;
    let mismatches = map
        .points
        .iter()
        .filter(|p| {
            let product = p.q_ratio * p.r_ratio;
            (product - 1.0).abs() > 1e-12 && p.dod_rule_convergent != (product > 1.0)
        })
        .count();
    let summary = SweepSummary {
        q_count: q.len(),
        r_count: r.len(),
        current_a: cfg.current_a,
        current_rule_convergent: map.points.iter().filter(|p| p.current_rule_convergent).count(),
        dod_rule_convergent: map.points.iter().filter(|p| p.dod_rule_convergent).count(),
        qr_line_mismatches: mismatches,
    };

    let mut out = OutDir::create(&opts.out)?;
    out.write_table(
        "sweep.csv",
        &["q_ratio", "r_ratio", "dz_ss", "di_ss", "current_rule_convergent", "dod_rule_convergent"],
        map.points.iter().map(|p| {
            vec![
                fmt(p.q_ratio),
                fmt(p.r_ratio),
                fmt(p.dz_ss),
                fmt(p.di_ss),
                p.current_rule_convergent.to_string(),
                p.dod_rule_convergent.to_string(),
            ]
        }),
    )?;
    out.write_json("summary.json", &summary)?;
    if opts.plot {
        // smallest resistance ratio at which the SOC rule turns convergent
        let boundary: Vec<(f64, f64)> = (0..q.len())
            .filter_map(|qi| {
                (0..r.len())
                    .find(|&ri| map.get(qi, ri).dod_rule_convergent)
                    .map(|ri| (q[qi], r[ri]))
            })
            .collect();
        let line = q.iter().map(|&x| (x, 1.0 / x)).collect();
        let plot = LinePlot {
            title: "SOC-rule convergence boundary".into(),
            x_label: "Q2/Q1".into(),
            y_label: "R2/R1".into(),
            series: vec![Series::new("first convergent R2/R1", boundary), Series::new("Q2R2 = Q1R1", line)],
        };
        write_svg(&mut out, "sweep_boundary.svg", plot)?;
    }
    let mut report = Report::default();
    report.lines.push(format!(
        "{} x {} grid: {} current-rule convergent, {} SOC-rule convergent, {} off the QR line",
        summary.q_count, summary.r_count, summary.current_rule_convergent, summary.dod_rule_convergent, mismatches
    ));
    Ok(report.finish(&out))
}

// ---------------------------------------------------------------- bounds

#[derive(Serialize)]
struct BoundSummary {
    a_coef: f64,
    b_coef: f64,
    k1: f64,
    k2: f64,
    threshold_a: f64,
    i_max_a: f64,
    guaranteed: bool,
    dz0: f64,
    asymptote: f64,
    final_bound: f64,
    samples: usize,
    violations: usize,
    min_margin: f64,
}

#[derive(Serialize)]
struct SuiteSummary {
    seed: u64,
    cases: usize,
    requested: usize,
    total_violations: usize,
    all_guaranteed: bool,
    min_margin: f64,
}

pub fn cmd_bounds(opts: &Options) -> Result<Report> {
    let loaded: Loaded<BoundsConfig> = opts.load(Experiment::Bounds)?;
    let cfg = &loaded.body;
    let mut out = OutDir::create(&opts.out)?;
    let mut report = Report::default();

    if let Some(spec) = &cfg.suite {
        let seed = opts.seed.or(loaded.seed).unwrap_or(0);
        let cases = suite::random_cases(spec.cases, seed, spec.dt_s, spec.cycles);
        let exec = opts.exec();
        let outcomes = pairsim::exec::with_workers(opts.workers, || bounds::run_suite(&cases, exec))?;
        out.write_table(
            "suite.csv",
            &["case", "samples", "i_max_a", "threshold_a", "guaranteed", "violations", "min_margin", "final_bound"],
            outcomes.iter().enumerate().map(|(k, o)| {
                vec![
                    k.to_string(),
                    o.samples.to_string(),
                    fmt(o.i_max),
                    fmt(o.threshold),
                    o.guaranteed.to_string(),
                    o.violations.to_string(),
                    fmt(o.min_margin),
                    fmt(o.final_bound),
                ]
            }),
        )?;
        let summary = SuiteSummary {
            seed,
            cases: outcomes.len(),
            requested: spec.cases,
            total_violations: outcomes.iter().map(|o| o.violations).sum(),
            all_guaranteed: outcomes.iter().all(|o| o.guaranteed),
            min_margin: outcomes.iter().map(|o| o.min_margin).fold(f64::INFINITY, f64::min),
        };
        out.write_json("suite_summary.json", &summary)?;
        report.lines.push(format!(
            "{} random cases (seed {seed}): {} violations, min margin {:.3e}",
            summary.cases, summary.total_violations, summary.min_margin
        ));
        return Ok(report.finish(&out));
    }

    let case: BoundsCase = serde_json::from_value(loaded.raw.clone()).context("invalid bounds case")?;
    let pair = case.pair.pair(&loaded.base_dir)?;
    let protocol = case.protocol.protocol()?;
    let trace = simulator::run(&SimConfig::new(pair.clone(), case.dt_s, protocol, case.initial_soc))?;
    let check = bounds::verify_trace_with(&trace, &pair.ocv, cfg.i_max_a)?;
    let summary = BoundSummary {
        a_coef: check.params.a_coef,
        b_coef: check.params.b_coef,
        k1: check.params.k1,
        k2: check.params.k2,
        threshold_a: check.params.threshold(),
        i_max_a: check.i_max,
        guaranteed: check.guaranteed(),
        dz0: check.dz0,
        asymptote: check.params.asymptote(check.i_max),
        final_bound: check.rows.last().map_or(f64::NAN, |r| r.bound),
        samples: check.rows.len(),
        violations: check.violations,
        min_margin: check.min_margin,
    };
    out.write_with("bounds.csv", |buf| check.write_csv(buf))?;
    out.write_json("summary.json", &summary)?;
    if opts.plot {
        let plot = LinePlot {
            title: "SOC imbalance and its bound".into(),
            x_label: "time (s)".into(),
            y_label: "|dz|".into(),
            series: vec![
                Series::new("|dz|", check.rows.iter().map(|r| (r.t_s, r.abs_dz)).collect()),
                Series::new("bound", check.rows.iter().map(|r| (r.t_s, r.bound)).collect()),
            ],
        };
        write_svg(&mut out, "bounds.svg", plot)?;
    }
    report.lines.push(format!(
        "threshold {:.3} A, i_max {:.3} A, guaranteed {}, {} violations over {} samples",
        summary.threshold_a, summary.i_max_a, summary.guaranteed, summary.violations, summary.samples
    ));
    Ok(report.finish(&out))
}

// ---------------------------------------------------------------- degrade

#[derive(Serialize)]
struct AgingSummary {
    termination: coupled::Termination,
    cycles: usize,
    floor_cycle: [Option<usize>; 2],
    capacity: Verdict,
    resistance: Verdict,
    capacity_slope: f64,
    resistance_slope: f64,
    window: usize,
    abs_dq_nonincreasing: bool,
    q_ratio_first: f64,
    q_ratio_last: f64,
    /// Cycle at which the `_last` ratios were taken.
    ratio_last_cycle: usize,
    r_ratio_first: f64,
    r_ratio_last: f64,
    control: Option<ControlSummary>,
}

#[derive(Serialize)]
struct ControlSummary {
    current_a: f64,
    cycles: usize,
    floor_cycle: [Option<usize>; 2],
    /// Capacity of each coupled cell minus its control after the shorter run.
    coupled_minus_control_as: [f64; 2],
}

fn aging_summary(trace: &AgingTrace, metrics: &ConvergenceMetrics) -> AgingSummary {
    let first = trace.records.first().expect("fresh record");
    // a run that ends on the floor can leave both capacities at zero, where the
    // ratio is undefined; report the last record on which it is still defined
    let last = trace
        .records
        .iter()
        .rev()
        .find(|r| r.q[0] > 0.0 && r.q[1] > 0.0)
        .unwrap_or(first);
    let final_cycle = trace.records.last().map_or(0, |r| r.cycle);
    AgingSummary {
        termination: trace.termination,
        cycles: final_cycle,
        floor_cycle: trace.floor_cycle,
        capacity: metrics.capacity,
        resistance: metrics.resistance,
        capacity_slope: metrics.capacity_slope,
        resistance_slope: metrics.resistance_slope,
        window: metrics.window,
        abs_dq_nonincreasing: metrics.abs_dq.windows(2).all(|w| w[1] <= w[0]),
        q_ratio_first: first.q_ratio(),
        q_ratio_last: last.q_ratio(),
        ratio_last_cycle: last.cycle,
        r_ratio_first: first.r_ratio(),
        r_ratio_last: last.r_ratio(),
        control: None,
    }
}

fn aging_plots(out: &mut OutDir, trace: &AgingTrace) -> Result<()> {
    let series = |f: fn(&coupled::AgingRecord, usize) -> f64, k| {
        trace.records.iter().map(|r| (r.cycle as f64, f(r, k))).collect::<Vec<_>>()
    };
    let q = |r: &coupled::AgingRecord, k: usize| r.q[k] / 3600.0;
    let res = |r: &coupled::AgingRecord, k: usize| r.r[k] * 1e3;
    write_svg(
        out,
        "capacity.svg",
        LinePlot {
            title: "capacity fade".into(),
            x_label: "cycle".into(),
            y_label: "capacity (Ah)".into(),
            series: vec![Series::new("cell 1", series(q, 0)), Series::new("cell 2", series(q, 1))],
        },
    )?;
    write_svg(
        out,
        "resistance.svg",
        LinePlot {
            title: "resistance growth".into(),
            x_label: "cycle".into(),
            y_label: "resistance (mOhm)".into(),
            series: vec![Series::new("cell 1", series(res, 0)), Series::new("cell 2", series(res, 1))],
        },
    )
}

pub fn cmd_degrade(opts: &Options) -> Result<Report> {
    let loaded: Loaded<DegradeConfig> = opts.load(Experiment::Degrade)?;
    let cfg = &loaded.body;
    let mode = match &cfg.mode {
        DegradeMode::RateSchedule {
            p,
            dt_s,
            segments,
            lambda1,
            lambda2,
            allow_accelerating,
        } => {
            return rate_schedule(opts, *p, *dt_s, segments, *lambda1, *lambda2, *allow_accelerating);
        }
        DegradeMode::Fast {
            alpha,
            current_a,
            cycle_duration,
        } => AgingMode::Fast {
            alpha: *alpha,
            current_a: *current_a,
            cycle_duration: *cycle_duration,
        },
        DegradeMode::HighFidelity {
            ocv,
            ocv_cell2,
            protocol,
            dt_s,
            initial_soc,
        } => {
            let first = ocv.curve(&loaded.base_dir)?;
            let second = match ocv_cell2 {
                Some(spec) => spec.curve(&loaded.base_dir)?,
                None => first.clone(),
            };
            AgingMode::HighFidelity {
                ocv: [first, second],
                protocol: Protocol {
                    phases: protocol.clone(),
                    cycles: 1,
                },
                dt: *dt_s,
                initial_soc: *initial_soc,
            }
        }
    };
    let config = AgingConfig {
        cells: cfg.cells()?,
        degradation: cfg.degradation()?,
        q_min: cfg.q_min()?,
        max_cycles: cfg.max_cycles()?,
        mode,
    };
    let window = cfg.window.unwrap_or(coupled::DEFAULT_WINDOW);
    let trace = coupled::run_aging(&config)?;
    let metrics = coupled::convergence_metrics(&trace.rows(), window)?;
    let mut summary = aging_summary(&trace, &metrics);

    let mut out = OutDir::create(&opts.out)?;
    out.write_with("aging.csv", |buf| trace.write_csv(buf))?;
    if let Some(current) = cfg.control_current_a {
        let control = coupled::control_run(&config, current)?;
        out.write_with("control.csv", |buf| control.write_csv(buf))?;
        let n = control.records.len().min(trace.records.len()) - 1;
        let (c, t) = (&control.records[n], &trace.records[n]);
        summary.control = Some(ControlSummary {
            current_a: current,
            cycles: control.records.len() - 1,
            floor_cycle: control.floor_cycle,
            coupled_minus_control_as: [t.q[0] - c.q[0], t.q[1] - c.q[1]],
        });
    }
    out.write_json("metrics.json", &summary)?;
    if opts.plot {
        aging_plots(&mut out, &trace)?;
    }
    let mut report = Report::default();
    report.lines.push(format!(
        "{} cycles ({:?}), floor at {:?}",
        summary.cycles, summary.termination, summary.floor_cycle
    ));
    report.lines.push(format!(
        "Q2/Q1 {} -> {} (cycle {}) {}",
        sig3(summary.q_ratio_first),
        sig3(summary.q_ratio_last),
        summary.ratio_last_cycle,
        summary.capacity
    ));
    report.lines.push(format!(
        "R2/R1 {} -> {} {}",
        sig3(summary.r_ratio_first),
        sig3(summary.r_ratio_last),
        summary.resistance
    ));
    Ok(report.finish(&out))
}

#[derive(Serialize)]
struct ScheduleSummary {
    cycles: usize,
    p: f64,
    final_loss_as: f64,
    final_growth_ohm: f64,
    low_rate: f64,
    high_rate: f64,
    final_loss_low_as: f64,
    final_loss_high_as: f64,
    bracketed: bool,
}

fn rate_schedule(
    opts: &Options,
    p: f64,
    dt: f64,
    segments: &[config::ScheduleSegment],
    lambda1: f64,
    lambda2: f64,
    allow_accelerating: bool,
) -> Result<Report> {
    if segments.is_empty() || segments.iter().all(|s| s.cycles == 0) {
        return Err(CliError::config("`segments` must describe at least one cycle").into());
    }
    let params = degradation::DegradationParams {
        p,
        lambda1,
        lambda2,
        rate_law: degradation::RateLaw::Constant { r: 0.0 },
        allow_accelerating,
    };
    params.validate()?;
    let rates: Vec<f64> = segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.r, s.cycles))
        .collect();
    let low = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let high = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let loss = degradation::loss_schedule(&rates, p, dt)?;
    let loss_low = degradation::loss_schedule(&vec![low; rates.len()], p, dt)?;
    let loss_high = degradation::loss_schedule(&vec![high; rates.len()], p, dt)?;
    let bracketed = loss
        .iter()
        .zip(&loss_low)
        .zip(&loss_high)
        .all(|((l, lo), hi)| lo <= l && l <= hi);
    let growth = |n: usize| lambda1 * loss[n] + lambda2 * (n + 1) as f64;
    let n = rates.len();
    let summary = ScheduleSummary {
        cycles: n,
        p,
        final_loss_as: loss[n - 1],
        final_growth_ohm: growth(n - 1),
        low_rate: low,
        high_rate: high,
        final_loss_low_as: loss_low[n - 1],
        final_loss_high_as: loss_high[n - 1],
        bracketed,
    };
    let mut out = OutDir::create(&opts.out)?;
    out.write_table(
        "rate_schedule.csv",
        &["cycle", "rate", "l_as", "g_ohm", "l_low_as", "l_high_as"],
        (0..n).map(|k| {
            vec![
                (k + 1).to_string(),
                fmt(rates[k]),
                fmt(loss[k]),
                fmt(growth(k)),
                fmt(loss_low[k]),
                fmt(loss_high[k]),
            ]
        }),
    )?;
    out.write_json("metrics.json", &summary)?;
    if opts.plot {
        let pts = |v: &[f64]| v.iter().enumerate().map(|(k, &l)| ((k + 1) as f64, l)).collect();
        let plot = LinePlot {
            title: "capacity loss under a rate schedule".into(),
            x_label: "cycle".into(),
            y_label: "loss (As)".into(),
            series: vec![
                Series::new("scheduled", pts(&loss)),
                Series::new(format!("constant r = {low}"), pts(&loss_low)),
                Series::new(format!("constant r = {high}"), pts(&loss_high)),
            ],
        };
        write_svg(&mut out, "rate_schedule.svg", plot)?;
    }
    let mut report = Report::default();
    report.lines.push(format!(
        "{n} cycles: loss {:.4e} As (constant-rate brackets {:.4e} .. {:.4e}), bracketed {bracketed}",
        summary.final_loss_as, summary.final_loss_low_as, summary.final_loss_high_as
    ));
    Ok(report.finish(&out))
}

// ---------------------------------------------------------------- compare

/// Ratio change between the first and last rows of an aging table.
#[derive(Debug, Clone, Serialize)]
pub struct RatioChange {
    pub first_cycle: usize,
    pub last_cycle: usize,
    /// Ratios as stored in the table.
    pub q_ratio: [f64; 2],
    pub r_ratio: [f64; 2],
    /// Ratios recomputed from the stored capacities and resistances.
    pub q_ratio_recomputed: [f64; 2],
    pub r_ratio_recomputed: [f64; 2],
    pub capacity: Verdict,
    pub resistance: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelError {
    pub matched_cycles: usize,
    /// Worst absolute difference per column over the matched cycles.
    pub max_abs_error: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub reference: RatioChange,
    pub model: Option<RatioChange>,
    pub error: Option<ModelError>,
}

fn read_aging(path: &Path) -> Result<Vec<AgingRow>> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let rows = coupled::read_rows(file).with_context(|| format!("aging table {}", path.display()))?;
    if rows.len() < 2 {
        return Err(CliError::config(format!("{} needs at least 2 rows", path.display())).into());
    }
    Ok(rows)
}

fn ratio_change(rows: &[AgingRow], window: usize) -> Result<RatioChange> {
    let metrics = coupled::convergence_metrics(rows, window)?;
    let (a, b) = (&rows[0], &rows[rows.len() - 1]);
    Ok(RatioChange {
        first_cycle: a.cycle,
        last_cycle: b.cycle,
        q_ratio: [a.q_ratio, b.q_ratio],
        r_ratio: [a.r_ratio, b.r_ratio],
        q_ratio_recomputed: [a.q2_as / a.q1_as, b.q2_as / b.q1_as],
        r_ratio_recomputed: [a.r2_ohm / a.r1_ohm, b.r2_ohm / b.r1_ohm],
        capacity: metrics.capacity,
        resistance: metrics.resistance,
    })
}

/// A named accessor for one numeric aging-table column.
type Column = (&'static str, fn(&AgingRow) -> f64);

fn model_error(reference: &[AgingRow], model: &[AgingRow]) -> Result<ModelError> {
    let by_cycle: BTreeMap<usize, &AgingRow> = model.iter().map(|r| (r.cycle, r)).collect();
    let columns: [Column; 7] = [
        ("q1_as", |r| r.q1_as),
        ("q2_as", |r| r.q2_as),
        ("r1_ohm", |r| r.r1_ohm),
        ("r2_ohm", |r| r.r2_ohm),
        ("dq_as", |r| r.dq_as),
        ("q_ratio", |r| r.q_ratio),
        ("r_ratio", |r| r.r_ratio),
    ];
    let mut max_abs_error: BTreeMap<String, f64> = columns.iter().map(|(n, _)| (n.to_string(), 0.0)).collect();
    let mut matched = 0;
    for a in reference {
        let Some(b) = by_cycle.get(&a.cycle) else { continue };
        matched += 1;
        for (name, get) in &columns {
            let e = max_abs_error.get_mut(*name).expect("column");
            *e = e.max((get(a) - get(b)).abs());
        }
    }
    if matched == 0 {
        return Err(CliError::config("reference and model tables share no cycle numbers").into());
    }
    Ok(ModelError {
        matched_cycles: matched,
        max_abs_error,
    })
}

fn ratio_lines(label: &str, c: &RatioChange) -> Vec<String> {
    vec![
        format!(
            "{label} Q2/Q1 {} -> {} {} (recomputed {} -> {}), cycles {} -> {}",
            sig3(c.q_ratio[0]),
            sig3(c.q_ratio[1]),
            c.capacity,
            sig3(c.q_ratio_recomputed[0]),
            sig3(c.q_ratio_recomputed[1]),
            c.first_cycle,
            c.last_cycle
        ),
        format!(
            "{label} R2/R1 {} -> {} {} (recomputed {} -> {})",
            sig3(c.r_ratio[0]),
            sig3(c.r_ratio[1]),
            c.resistance,
            sig3(c.r_ratio_recomputed[0]),
            sig3(c.r_ratio_recomputed[1])
        ),
    ]
}

/// Compares aging tables. `reference` is required; `model` adds an error report.
pub fn compare(reference: &Path, model: Option<&Path>, window: usize) -> Result<(CompareReport, Vec<String>)> {
    let reference_rows = read_aging(reference)?;
    let reference_change = ratio_change(&reference_rows, window)?;
    let mut lines = ratio_lines("reference", &reference_change);
    let (model_change, error) = match model {
        Some(path) => {
            let rows = read_aging(path)?;
            let change = ratio_change(&rows, window)?;
            let error = model_error(&reference_rows, &rows)?;
            lines.extend(ratio_lines("model", &change));
            lines.push(format!("matched cycles: {}", error.matched_cycles));
            for (name, e) in &error.max_abs_error {
                lines.push(format!("max |error| {name}: {e:e}"));
            }
            (Some(change), Some(error))
        }
        None => (None, None),
    };
    Ok((
        CompareReport {
            reference: reference_change,
            model: model_change,
            error,
        },
        lines,
    ))
}

pub fn cmd_compare(opts: &Options, reference: Option<&Path>, model: Option<&Path>) -> Result<Report> {
    let from_config: Option<Loaded<CompareConfig>> = match &opts.config {
        Some(path) => Some(config::load(path, Experiment::Compare)?),
        None => None,
    };
    let base = from_config.as_ref().map(|l| l.base_dir.clone()).unwrap_or_default();
    let body = from_config.map(|l| l.body).unwrap_or_default();
    let reference = reference
        .map(Path::to_path_buf)
        .or_else(|| body.reference.as_ref().map(|p| base.join(p)))
        .ok_or_else(|| CliError::config("compare needs --reference <csv> or a `reference` entry"))?;
    let model = model
        .map(Path::to_path_buf)
        .or_else(|| body.model.as_ref().map(|p| base.join(p)));
    let window = body.window.unwrap_or(coupled::DEFAULT_WINDOW);
    let (report_data, lines) = compare(&reference, model.as_deref(), window)?;
    let mut out = OutDir::create(&opts.out)?;
    let mut text = lines.join("\n");
    text.push('\n');
    out.write_bytes("compare.txt", text.as_bytes())?;
    out.write_json("compare.json", &report_data)?;
    let report = Report {
        lines,
        files: Vec::new(),
    };
    Ok(report.finish(&out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_significant_digits() {
        assert_eq!(sig3(0.9384), "0.938");
        assert_eq!(sig3(1.597), "1.60");
        assert_eq!(sig3(1.59), "1.59");
        assert_eq!(sig3(1.986), "1.99");
        assert_eq!(sig3(12.34), "12.3");
        assert_eq!(sig3(-0.0462), "-0.0462");
    }
}
