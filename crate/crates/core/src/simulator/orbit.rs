use serde::Serialize;

use super::Trace;
use crate::error::{Error, Result};

/// Per-cycle `(z1, z2)` loops and the distances between consecutive loops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseOrbit {
    pub loops: Vec<Vec<[f64; 2]>>,
    /// `closure[k]` is the symmetric Hausdorff distance between loop `k` and
    /// loop `k + 1` (0-based), treating each loop as a polyline.
    pub closure: Vec<f64>,
}

pub fn phase_orbit(trace: &Trace) -> Result<PhaseOrbit> {
    let cycles = trace.cycle_count();
    if cycles < 2 {
        return Err(Error::TooFewCycles(cycles));
    }
    let loops: Vec<Vec<[f64; 2]>> = (1..=cycles)
        .map(|c| trace.samples[trace.cycle_range(c)].iter().map(|s| s.z).collect())
        .collect();
    let closure = loops.windows(2).map(|w| hausdorff(&w[0], &w[1])).collect();
    Ok(PhaseOrbit { loops, closure })
}

pub(crate) fn hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    directed(a, &SegmentGrid::new(b)).max(directed(b, &SegmentGrid::new(a)))
}

fn directed(points: &[[f64; 2]], grid: &SegmentGrid) -> f64 {
    points.iter().map(|&p| grid.nearest(p)).fold(0.0, f64::max)
}

fn point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    q[0].hypot(q[1])
}

/// Uniform bucket grid over polyline segments for nearest-distance queries.
struct SegmentGrid<'a> {
    pts: &'a [[f64; 2]],
    origin: [f64; 2],
    cell: f64,
    n: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> SegmentGrid<'a> {
    fn new(pts: &'a [[f64; 2]]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let n = 128;
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let cell = span / n as f64;
        let mut grid = Self {
            pts,
            origin: lo,
            cell,
            n,
            buckets: vec![Vec::new(); n * n],
        };
        let segs = pts.len().saturating_sub(1).max(usize::from(pts.len() == 1));
        for s in 0..segs {
            let a = pts[s];
            let b = pts[(s + 1).min(pts.len() - 1)];
            let (x0, y0) = grid.index([a[0].min(b[0]), a[1].min(b[1])]);
            let (x1, y1) = grid.index([a[0].max(b[0]), a[1].max(b[1])]);
            for x in x0..=x1 {
                for y in y0..=y1 {
                    grid.buckets[x * n + y].push(s as u32);
                }
            }
        }
        grid
    }

    fn index(&self, p: [f64; 2]) -> (usize, usize) {
        let f = |v: f64, o: f64| (((v - o) / self.cell).floor().max(0.0) as usize).min(self.n - 1);
        (f(p[0], self.origin[0]), f(p[1], self.origin[1]))
    }

    fn segment(&self, s: usize) -> ([f64; 2], [f64; 2]) {
        (self.pts[s], self.pts[(s + 1).min(self.pts.len() - 1)])
    }

    fn nearest(&self, p: [f64; 2]) -> f64 {
        if self.pts.is_empty() {
            return f64::INFINITY;
        }
        let (cx, cy) = self.index(p);
        // distance from p to the grid's bounding square
        let outside = {
            let hi = [self.origin[0] + self.cell * self.n as f64, self.origin[1] + self.cell * self.n as f64];
            let dx = (self.origin[0] - p[0]).max(p[0] - hi[0]).max(0.0);
            let dy = (self.origin[1] - p[1]).max(p[1] - hi[1]).max(0.0);
            dx.hypot(dy)
        };
        let mut best = f64::INFINITY;
        for ring in 0..self.n {
            let (x0, x1) = (cx.saturating_sub(ring), (cx + ring).min(self.n - 1));
            let (y0, y1) = (cy.saturating_sub(ring), (cy + ring).min(self.n - 1));
            for x in x0..=x1 {
                for y in y0..=y1 {
                    let on_ring = x == x0 || x == x1 || y == y0 || y == y1;
                    if !on_ring {
                        continue;
                    }
                    for &s in &self.buckets[x * self.n + y] {
                        let (a, b) = self.segment(s as usize);
                        best = best.min(point_segment(p, a, b));
                    }
                }
            }
            // every unvisited segment lies at least `ring` cells away
            if best <= outside.max(ring as f64 * self.cell) {
                break;
            }
        }
        best
    }
}
