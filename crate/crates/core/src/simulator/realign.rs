use std::io::Write;

use serde::Serialize;

use super::{PhaseKind, Trace};
use crate::error::{Error, Result};

/// One reference sample with the comparison trace's imbalances mapped onto
/// the reference time axis (first cycle only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlayRow {
    pub t_s: f64,
    pub cycle: usize,
    pub kind: PhaseKind,
    pub dz: f64,
    pub di: f64,
    pub dz_other: Option<f64>,
    pub di_other: Option<f64>,
}

/// Time anchors of the first cycle: its start, the CV start and end when a
/// CV phase exists, and its end.
fn anchors(trace: &Trace) -> Vec<f64> {
    let range = trace.cycle_range(1);
    let t_at = |k: usize| trace.samples[k.min(trace.len() - 1)].t_s;
    let mut out = vec![t_at(range.start)];
    if let Some(cv) = trace.phase_span(1, PhaseKind::Cv) {
        out.push(t_at(cv.start));
        out.push(t_at(cv.end));
    }
    out.push(t_at(range.end));
    out.dedup();
    out
}

fn piecewise(from: &[f64], to: &[f64], t: f64) -> f64 {
    let k = from.partition_point(|&a| a <= t).clamp(1, from.len() - 1);
    let (a0, a1, b0, b1) = (from[k - 1], from[k], to[k - 1], to[k]);
    b0 + (t - a0) / (a1 - a0) * (b1 - b0)
}

fn sample_at(trace: &Trace, t: f64) -> (f64, f64) {
    let last = trace.len() - 1;
    let x = (t / trace.dt).clamp(0.0, last as f64);
    let k = (x.floor() as usize).min(last);
    let (a, b) = (&trace.samples[k], &trace.samples[(k + 1).min(last)]);
    let f = x - k as f64;
    (a.dz() + f * (b.dz() - a.dz()), a.di() + f * (b.di() - a.di()))
}

/// Overlays `other` onto `reference` by mapping the first-cycle anchors of the
/// reference onto those of `other` piecewise linearly. This absorbs the
/// different CC durations of the two runs.
pub fn realign(reference: &Trace, other: &Trace) -> Result<Vec<OverlayRow>> {
    if reference.is_empty() || other.is_empty() {
        return Err(Error::InvalidParameter("cannot realign an empty trace".into()));
    }
    let mut a_ref = anchors(reference);
    let mut a_other = anchors(other);
    if a_ref.len() != a_other.len() {
        // one trace lacks a CV phase; fall back to start/end only
        a_ref = vec![a_ref[0], *a_ref.last().unwrap()];
        a_other = vec![a_other[0], *a_other.last().unwrap()];
    }
    let usable = a_ref.len() >= 2 && a_ref.windows(2).all(|w| w[1] > w[0]) && a_other.windows(2).all(|w| w[1] > w[0]);
    let window = (a_ref[0], *a_ref.last().unwrap());
    Ok(reference
        .samples
        .iter()
        .map(|s| {
            let mapped = (usable && s.cycle == 1 && s.t_s >= window.0 && s.t_s <= window.1)
                .then(|| sample_at(other, piecewise(&a_ref, &a_other, s.t_s)));
            OverlayRow {
                t_s: s.t_s,
                cycle: s.cycle,
                kind: s.kind,
                dz: s.dz(),
                di: s.di(),
                dz_other: mapped.map(|m| m.0),
                di_other: mapped.map(|m| m.1),
            }
        })
        .collect())
}

pub fn write_overlay_csv<W: Write>(rows: &[OverlayRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t_s", "cycle", "phase", "dz", "di", "dz_affine", "di_affine"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.t_s.to_string(),
            r.cycle.to_string(),
            r.kind.label().to_string(),
            r.dz.to_string(),
            r.di.to_string(),
            opt(r.dz_other),
            opt(r.di_other),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_maps_anchors() {
        let from = [0.0, 10.0, 20.0, 40.0];
        let to = [0.0, 12.0, 18.0, 50.0];
        for k in 0..4 {
            assert_eq!(piecewise(&from, &to, from[k]), to[k]);
        }
        assert_eq!(piecewise(&from, &to, 5.0), 6.0);
        assert_eq!(piecewise(&from, &to, 30.0), 34.0);
    }
}
