use thiserror::Error;

use crate::simulator::PhaseKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("SOC {soc} is outside the curve domain [0, 1]")]
    OutOfDomain { soc: f64 },

    #[error("voltage {voltage} V is outside the curve range [{min}, {max}] V")]
    VoltageOutOfRange { voltage: f64, min: f64, max: f64 },

    /// `row` counts data rows from 1, `line` counts file lines from 1 (header included).
    #[error("OCV table row {row} (line {line}): {reason}")]
    Validation { row: usize, line: u64, reason: String },

    #[error("CSV parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(
        "cycle {cycle}, phase {phase} ({kind}): SOC ({z1:.6}, {z2:.6}) left the guard band at t = {t_s} s; \
         the protocol is missing a termination condition"
    )]
    SocGuard {
        cycle: usize,
        phase: usize,
        kind: PhaseKind,
        t_s: f64,
        z1: f64,
        z2: f64,
    },

    #[error("cycle {cycle}, phase {phase} ({kind}) did not reach its stop condition within {max_s} s")]
    PhaseTimeout {
        cycle: usize,
        phase: usize,
        kind: PhaseKind,
        max_s: f64,
    },

    #[error("phase orbit needs at least 2 complete cycles, the trace has {0}")]
    TooFewCycles(usize),

    #[error("reaction rate must be non-negative, got {0}")]
    NegativeRate(f64),

    #[error("minimum SOC must be non-negative, got {0}")]
    NegativeSoc(f64),

    #[error("non-finite {what} in cycle {cycle}")]
    NonFinite { cycle: usize, what: &'static str },
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line,
                reason: format!("{other:?}"),
            },
        }
    }
}
