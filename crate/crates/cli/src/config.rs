//! JSON run configuration. One document per run, with a top-level
//! `experiment` field naming the command it is meant for.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pairsim::coupled::CycleDuration;
use pairsim::degradation::DegradationParams;
use pairsim::simulator::{CellPair, Phase, Protocol};
use pairsim::{AffineOcv, BundledCurve, CellParams, OcvCurve, TabulatedOcv};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Analytic,
    Simulate,
    Sweep,
    Bounds,
    Degrade,
    Compare,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Analytic => "analytic",
            Experiment::Simulate => "simulate",
            Experiment::Sweep => "sweep",
            Experiment::Bounds => "bounds",
            Experiment::Degrade => "degrade",
            Experiment::Compare => "compare",
        }
    }
}

/// A config file as loaded, with the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub body: T,
    pub base_dir: PathBuf,
    /// Seed given in the document, if any.
    pub seed: Option<u64>,
    /// The whole document, for sections parsed on demand.
    pub raw: serde_json::Value,
}

#[derive(Deserialize)]
struct Header {
    experiment: Experiment,
    #[serde(default)]
    seed: Option<u64>,
}

/// Reads `path`, checks that it targets `expected` and parses the body.
pub fn load<T: for<'de> Deserialize<'de>>(path: &Path, expected: Experiment) -> Result<Loaded<T>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let header: Header =
        serde_json::from_str(&text).with_context(|| format!("{}: missing or unknown `experiment`", path.display()))?;
    if header.experiment != expected {
        return Err(CliError::config(format!(
            "{} is a `{}` config, not `{}`",
            path.display(),
            header.experiment.name(),
            expected.name()
        ))
        .into());
    }
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let body: T = serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded {
        body,
        base_dir,
        seed: header.seed,
        raw,
    })
}

fn missing(field: &str) -> anyhow::Error {
    CliError::config(format!("missing field `{field}`")).into()
}

/// A cell given by capacity (`q_ah` or `q_as`) and resistance (`r_mohm` or `r_ohm`).
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub q_ah: Option<f64>,
    pub q_as: Option<f64>,
    pub r_mohm: Option<f64>,
    pub r_ohm: Option<f64>,
}

impl CellSpec {
    pub fn params(&self) -> Result<CellParams> {
        let q = match (self.q_ah, self.q_as) {
            (Some(ah), None) => pairsim::cell::ah_to_as(ah),
            (None, Some(s)) => s,
            (None, None) => return Err(missing("q_ah")),
            (Some(_), Some(_)) => return Err(CliError::config("give only one of `q_ah` and `q_as`").into()),
        };
        let r = match (self.r_mohm, self.r_ohm) {
            (Some(m), None) => pairsim::cell::mohm_to_ohm(m),
            (None, Some(o)) => o,
            (None, None) => return Err(missing("r_mohm")),
            (Some(_), Some(_)) => return Err(CliError::config("give only one of `r_mohm` and `r_ohm`").into()),
        };
        Ok(CellParams::new(q, r)?)
    }
}

pub fn cell_pair(cells: &[CellSpec; 2]) -> Result<[CellParams; 2]> {
    Ok([
        cells[0].params().context("cell 1")?,
        cells[1].params().context("cell 2")?,
    ])
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OcvSpec {
    Bundled { name: String },
    Affine { alpha: f64, beta: f64 },
    /// Two-column `soc,voltage_v` table, relative to the config file.
    Csv { path: PathBuf },
}

impl OcvSpec {
    pub fn curve(&self, base_dir: &Path) -> Result<OcvCurve> {
        match self {
            OcvSpec::Bundled { name } => BundledCurve::from_name(name).map(BundledCurve::curve).ok_or_else(|| {
                let names: Vec<&str> = BundledCurve::ALL.iter().map(|c| c.name()).collect();
                CliError::config(format!("unknown bundled curve `{name}`; expected one of {}", names.join(", "))).into()
            }),
            OcvSpec::Affine { alpha, beta } => Ok(AffineOcv::new(*alpha, *beta)?.into()),
            OcvSpec::Csv { path } => {
                let full = base_dir.join(path);
                let table = TabulatedOcv::load_csv(&full).with_context(|| format!("OCV table {}", full.display()))?;
                Ok(table.into())
            }
        }
    }

    /// Linear counterpart used for overlays: the paired approximation of a
    /// bundled curve, or `None` for curves without one.
    pub fn affine_counterpart(&self) -> Option<OcvCurve> {
        match self {
            OcvSpec::Bundled { name } => BundledCurve::from_name(name).map(|c| c.affine_counterpart().curve()),
            OcvSpec::Affine { .. } | OcvSpec::Csv { .. } => None,
        }
    }
}

/// Cells plus one shared curve, optionally overridden for cell 2.
#[derive(Debug, Clone, Deserialize)]
pub struct PairSpec {
    pub cells: [CellSpec; 2],
    pub ocv: OcvSpec,
    #[serde(default)]
    pub ocv_cell2: Option<OcvSpec>,
}

impl PairSpec {
    pub fn curves(&self, base_dir: &Path) -> Result<[OcvCurve; 2]> {
        let first = self.ocv.curve(base_dir)?;
        let second = match &self.ocv_cell2 {
            Some(spec) => spec.curve(base_dir)?,
            None => first.clone(),
        };
        Ok([first, second])
    }

    pub fn pair(&self, base_dir: &Path) -> Result<CellPair> {
        Ok(CellPair::new(cell_pair(&self.cells)?, self.curves(base_dir)?))
    }
}

fn default_dt() -> f64 {
    1.0
}

fn default_cycles() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
pub struct ProtocolSpec {
    pub protocol: Vec<Phase>,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
}

impl ProtocolSpec {
    pub fn protocol(&self) -> Result<Protocol> {
        if self.cycles == 0 {
            return Err(CliError::config("`cycles` must be at least 1").into());
        }
        if self.protocol.is_empty() {
            return Err(CliError::config("`protocol` needs at least one phase").into());
        }
        Ok(Protocol {
            phases: self.protocol.clone(),
            cycles: self.cycles,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnalyticConfig {
    pub cells: [CellSpec; 2],
    /// Must be linear (an affine block or a bundled affine curve).
    pub ocv: OcvSpec,
    pub initial_soc: [f64; 2],
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(flatten)]
    pub protocol: ProtocolSpec,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub pair: PairSpec,
    pub initial_soc: [f64; 2],
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(flatten)]
    pub protocol: ProtocolSpec,
    /// Run the linear counterpart too and overlay it on the first cycle.
    #[serde(default = "default_true")]
    pub overlay: bool,
    /// Curve for the overlay run; defaults to the bundled counterpart.
    #[serde(default)]
    pub overlay_ocv: Option<OcvSpec>,
    /// `[low, high]` SOC guard band, or `null` to disable it.
    #[serde(default = "default_guard")]
    pub soc_guard: Option<[f64; 2]>,
    #[serde(default)]
    pub max_phase_s: Option<f64>,
}

fn default_true() -> bool {
    true
}

fn default_guard() -> Option<[f64; 2]> {
    let (lo, hi) = pairsim::simulator::DEFAULT_SOC_GUARD;
    Some([lo, hi])
}

/// Either an explicit list or `count` evenly spaced values from `start` to `stop`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Range { start: f64, stop: f64, count: usize },
    List(Vec<f64>),
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Range { start, stop, count } => match *count {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..n).map(|k| start + (stop - start) * k as f64 / (n - 1) as f64).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SweepConfig {
    /// The reference cell; cell 1 is derived from the ratios.
    pub cell2: CellSpec,
    pub q_ratios: GridSpec,
    pub r_ratios: GridSpec,
    pub current_a: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SuiteSpec {
    pub cases: usize,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BoundsConfig {
    /// Input bound used for the check; defaults to the largest applied current.
    #[serde(default)]
    pub i_max_a: Option<f64>,
    /// Randomized suite instead of the single case described by the document.
    #[serde(default)]
    pub suite: Option<SuiteSpec>,
}

/// A single bound-check case, parsed from the same document when no suite
/// is requested.

#[derive(Debug, Clone, Deserialize)]
pub struct BoundsCase {
    #[serde(flatten)]
    pub pair: PairSpec,
    pub initial_soc: [f64; 2],
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(flatten)]
    pub protocol: ProtocolSpec,
}

/// The same degradation block for both cells, or one per cell.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DegradationSpec {
    PerCell([DegradationParams; 2]),
    Shared(DegradationParams),
}

impl DegradationSpec {
    pub fn params(&self) -> Result<[DegradationParams; 2]> {
        let both = match self {
            DegradationSpec::Shared(p) => [*p, *p],
            DegradationSpec::PerCell(p) => *p,
        };
        for (k, p) in both.iter().enumerate() {
            p.validate().with_context(|| format!("degradation block for cell {}", k + 1))?;
        }
        Ok(both)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct ScheduleSegment {
    pub cycles: usize,
    pub r: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegradeMode {
    Fast {
        alpha: f64,
        current_a: f64,
        #[serde(default)]
        cycle_duration: CycleDuration,
    },
    HighFidelity {
        ocv: OcvSpec,
        #[serde(default)]
        ocv_cell2: Option<OcvSpec>,
        protocol: Vec<Phase>,
        #[serde(default = "default_dt")]
        dt_s: f64,
        initial_soc: [f64; 2],
    },
    /// Single-cell fade under a prescribed per-cycle rate schedule.
    RateSchedule {
        p: f64,
        dt_s: f64,
        segments: Vec<ScheduleSegment>,
        #[serde(default)]
        lambda1: f64,
        #[serde(default)]
        lambda2: f64,
        #[serde(default)]
        allow_accelerating: bool,
    },
}

#[derive(Debug, Clone, Deserialize)]
pub struct DegradeConfig {
    pub mode: DegradeMode,
    #[serde(default)]
    pub cells: Option<[CellSpec; 2]>,
    #[serde(default)]
    pub degradation: Option<DegradationSpec>,
    #[serde(default)]
    pub q_min_ah: Option<f64>,
    #[serde(default)]
    pub q_min_as: Option<f64>,
    #[serde(default)]
    pub max_cycles: Option<usize>,
    /// Also run uncoupled control cells at this fixed current.
    #[serde(default)]
    pub control_current_a: Option<f64>,
    #[serde(default)]
    pub window: Option<usize>,
}

impl DegradeConfig {
    pub fn cells(&self) -> Result<[CellParams; 2]> {
        cell_pair(self.cells.as_ref().ok_or_else(|| missing("cells"))?)
    }

    pub fn degradation(&self) -> Result<[DegradationParams; 2]> {
        self.degradation.as_ref().ok_or_else(|| missing("degradation"))?.params()
    }

    pub fn q_min(&self) -> Result<f64> {
        match (self.q_min_ah, self.q_min_as) {
            (Some(ah), None) => Ok(pairsim::cell::ah_to_as(ah)),
            (None, Some(s)) => Ok(s),
            (None, None) => Ok(0.0),
            (Some(_), Some(_)) => Err(CliError::config("give only one of `q_min_ah` and `q_min_as`").into()),
        }
    }

    pub fn max_cycles(&self) -> Result<usize> {
        match self.max_cycles {
            None => Err(missing("max_cycles")),
            Some(0) => Err(CliError::config("`max_cycles` must be at least 1").into()),
            Some(n) => Ok(n),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct CompareConfig {
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub window: Option<usize>,
}
