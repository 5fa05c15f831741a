use std::io::Write;
use std::ops::Range;

use serde::Serialize;

use super::PhaseKind;
use crate::cell::CellParams;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSample {
    pub t_s: f64,
    /// 1-based cycle number.
    pub cycle: usize,
    /// 0-based index of the phase within the protocol.
    pub phase_index: usize,
    pub kind: PhaseKind,
    pub z: [f64; 2],
    /// Branch currents applied from this sample to the next.
    pub i: [f64; 2],
    pub v_t: f64,
}

impl TraceSample {
    pub fn dz(&self) -> f64 {
        self.z[1] - self.z[0]
    }

    pub fn di(&self) -> f64 {
        self.i[1] - self.i[0]
    }

    pub fn total_current(&self) -> f64 {
        self.i[0] + self.i[1]
    }
}

/// Uniformly sampled simulation output. Immutable once produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<TraceSample>,
    pub cells: [CellParams; 2],
    pub dt: f64,
}

/// Charge moved through the terminals against charge stored in the cells over
/// a sample range. `integrated + stored` vanishes for exact bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChargeBalance {
    /// `sum (i1 + i2) dt` over the range, amp-seconds.
    pub integrated: f64,
    /// `Q1 dz1 + Q2 dz2` over the range, amp-seconds.
    pub stored: f64,
    /// `sum |i1 + i2| dt`, used as the scale for the relative error.
    pub throughput: f64,
    /// Worst per-cell mismatch `|sum i_k dt + Q_k dz_k|`.
    pub per_cell_error: f64,
}

impl ChargeBalance {
    pub fn relative_error(&self) -> f64 {
        let err = (self.integrated + self.stored).abs().max(self.per_cell_error);
        if self.throughput > 0.0 {
            err / self.throughput
        } else {
            err
        }
    }
}

impl Trace {
    pub fn new(samples: Vec<TraceSample>, cells: [CellParams; 2], dt: f64) -> Self {
        Self { samples, cells, dt }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of cycles that appear in the trace.
    pub fn cycle_count(&self) -> usize {
        self.samples.last().map_or(0, |s| s.cycle)
    }

    /// Sample indices belonging to `cycle`.
    pub fn cycle_range(&self, cycle: usize) -> Range<usize> {
        let start = self.samples.partition_point(|s| s.cycle < cycle);
        let end = self.samples.partition_point(|s| s.cycle <= cycle);
        start..end
    }

    /// First contiguous run of `kind` samples within `cycle`.
    pub fn phase_span(&self, cycle: usize, kind: PhaseKind) -> Option<Range<usize>> {
        let range = self.cycle_range(cycle);
        let start = range.clone().find(|&k| self.samples[k].kind == kind)?;
        let end = (start..range.end).find(|&k| self.samples[k].kind != kind).unwrap_or(range.end);
        Some(start..end)
    }

    pub fn max_abs_dz(&self, range: Range<usize>) -> f64 {
        self.samples[range].iter().map(|s| s.dz().abs()).fold(0.0, f64::max)
    }

    /// Charge bookkeeping between samples `from` and `to` (inclusive). The
    /// currents of sample `k` act over `[t_k, t_k+1)`, so the sum runs over
    /// `from..to`.
    pub fn charge_balance(&self, from: usize, to: usize) -> ChargeBalance {
        let dt = self.dt;
        let mut cell = [0.0; 2];
        let mut throughput = 0.0;
        for s in &self.samples[from..to] {
            cell[0] += s.i[0] * dt;
            cell[1] += s.i[1] * dt;
            throughput += s.total_current().abs() * dt;
        }
        let (a, b) = (&self.samples[from], &self.samples[to]);
        let stored_cell = [
            self.cells[0].q() * (b.z[0] - a.z[0]),
            self.cells[1].q() * (b.z[1] - a.z[1]),
        ];
        ChargeBalance {
            integrated: cell[0] + cell[1],
            stored: stored_cell[0] + stored_cell[1],
            throughput,
            per_cell_error: (cell[0] + stored_cell[0]).abs().max((cell[1] + stored_cell[1]).abs()),
        }
    }

    pub const CSV_HEADER: [&'static str; 8] = ["t_s", "cycle", "phase", "z1", "z2", "i1_a", "i2_a", "v_t_v"];

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for s in &self.samples {
            w.write_record([
                s.t_s.to_string(),
                s.cycle.to_string(),
                s.kind.label().to_string(),
                s.z[0].to_string(),
                s.z[1].to_string(),
                s.i[0].to_string(),
                s.i[1].to_string(),
                s.v_t.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
