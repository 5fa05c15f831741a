//! Open-circuit-voltage curves.
//!
//! Two representations are supported: an affine curve `U(z) = alpha * z + beta`
//! that extrapolates linearly, and a tabulated curve interpolated with a
//! shape-preserving monotone cubic (Steffen's method) on the SOC domain `[0, 1]`.
//! Both are strictly increasing with a strictly positive derivative.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineOcv {
    alpha: f64,
    beta: f64,
}

impl AffineOcv {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "affine OCV slope alpha must be positive, got {alpha}"
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "affine OCV offset beta must be positive, got {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// Characteristic slope in volts per unit SOC.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Voltage at zero SOC.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.alpha * z + self.beta
    }
}

/// Interpolation scheme identifier for tabulated curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Steffen monotone cubic Hermite interpolation.
    MonotoneCubic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedOcv {
    soc: Vec<f64>,
    voltage: Vec<f64>,
    /// Hermite derivative at each knot.
    knot_slope: Vec<f64>,
    interpolation: Interpolation,
    bounds: (f64, f64),
}

impl TabulatedOcv {
    /// Builds a curve from `(soc, voltage)` knots.
    ///
    /// Knots must cover exactly `[0, 1]` with strictly increasing soc and voltage.
    pub fn new(knots: &[(f64, f64)]) -> Result<Self> {
        let rows: Vec<(f64, f64, u64)> = knots
            .iter()
            .enumerate()
            .map(|(i, &(z, v))| (z, v, i as u64 + 1))
            .collect();
        Self::from_rows(&rows)
    }

    fn from_rows(rows: &[(f64, f64, u64)]) -> Result<Self> {
        let invalid = |row: usize, line: u64, reason: String| Error::Validation { row, line, reason };

        if rows.len() < 2 {
            return Err(invalid(
                rows.len(),
                rows.last().map_or(0, |r| r.2),
                format!("at least 2 knots are required, got {}", rows.len()),
            ));
        }
        for (i, &(z, v, line)) in rows.iter().enumerate() {
            if !z.is_finite() || !v.is_finite() {
                return Err(invalid(i + 1, line, "non-finite value".into()));
            }
            if !(0.0..=1.0).contains(&z) {
                return Err(invalid(i + 1, line, format!("soc {z} outside [0, 1]")));
            }
            if v <= 0.0 {
                return Err(invalid(i + 1, line, format!("voltage {v} must be positive")));
            }
            if i > 0 {
                let (zp, vp, _) = rows[i - 1];
                if z <= zp {
                    return Err(invalid(
                        i + 1,
                        line,
                        format!("soc {z} does not increase strictly (previous {zp})"),
                    ));
                }
                if v <= vp {
                    return Err(invalid(
                        i + 1,
                        line,
                        format!("voltage {v} does not increase strictly (previous {vp})"),
                    ));
                }
            }
        }
        let (first, last) = (rows[0], rows[rows.len() - 1]);
        if first.0 != 0.0 {
            return Err(invalid(1, first.2, format!("first knot must be at soc 0, got {}", first.0)));
        }
        if last.0 != 1.0 {
            return Err(invalid(
                rows.len(),
                last.2,
                format!("last knot must be at soc 1, got {}", last.0),
            ));
        }

        let soc: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let voltage: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let knot_slope = steffen_slopes(&soc, &voltage);
        let mut curve = Self {
            soc,
            voltage,
            knot_slope,
            interpolation: Interpolation::MonotoneCubic,
            bounds: (0.0, 0.0),
        };
        curve.bounds = curve.exact_slope_bounds();
        if curve.bounds.0 <= 0.0 {
            return Err(invalid(
                1,
                first.2,
                "interpolant derivative is not strictly positive".into(),
            ));
        }
        Ok(curve)
    }

    /// Reads a two-column CSV with header `soc,voltage_v`.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["soc", "voltage_v"];
        if headers.len() != 2 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected header `soc,voltage_v`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != 2 {
                return Err(Error::Parse {
                    line,
                    reason: format!("expected 2 columns, got {}", record.len()),
                });
            }
            let field = |i: usize| -> Result<f64> {
                record[i].parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    reason: format!("column `{}`: {e} (`{}`)", expected[i], &record[i]),
                })
            };
            rows.push((field(0)?, field(1)?, line));
        }
        Self::from_rows(&rows)
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.soc.iter().copied().zip(self.voltage.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.soc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.soc.is_empty()
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    /// Segment containing `z`, using the left-limit convention at interior knots.
    fn segment(&self, z: f64) -> usize {
        let k = self.soc.partition_point(|&x| x < z);
        k.clamp(1, self.soc.len() - 1) - 1
    }

    fn hermite(&self, seg: usize, z: f64) -> (f64, f64) {
        let (x0, x1) = (self.soc[seg], self.soc[seg + 1]);
        let (y0, y1) = (self.voltage[seg], self.voltage[seg + 1]);
        let (d0, d1) = (self.knot_slope[seg], self.knot_slope[seg + 1]);
        let h = x1 - x0;
        let s = (z - x0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let value = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * h * d1;
        let slope = ((6.0 * s2 - 6.0 * s) * (y0 - y1)) / h
            + (3.0 * s2 - 4.0 * s + 1.0) * d0
            + (3.0 * s2 - 2.0 * s) * d1;
        (value, slope)
    }

    fn check_domain(z: f64) -> Result<()> {
        if (0.0..=1.0).contains(&z) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { soc: z })
        }
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        Self::check_domain(z)?;
        Ok(self.hermite(self.segment(z), z).0)
    }

    pub fn slope(&self, z: f64) -> Result<f64> {
        Self::check_domain(z)?;
        Ok(self.hermite(self.segment(z), z).1)
    }

    /// Evaluation with linear continuation beyond `[0, 1]` using the end slopes.
    pub fn eval_extended(&self, z: f64) -> f64 {
        let n = self.soc.len() - 1;
        if z < 0.0 {
            self.voltage[0] + self.knot_slope[0] * z
        } else if z > 1.0 {
            self.voltage[n] + self.knot_slope[n] * (z - 1.0)
        } else {
            self.hermite(self.segment(z), z).0
        }
    }

    pub fn slope_extended(&self, z: f64) -> f64 {
        let n = self.soc.len() - 1;
        if z < 0.0 {
            self.knot_slope[0]
        } else if z > 1.0 {
            self.knot_slope[n]
        } else {
            self.hermite(self.segment(z), z).1
        }
    }

    pub fn slope_bounds(&self) -> (f64, f64) {
        self.bounds
    }

    /// Min and max of the interpolant derivative, from the per-segment quadratic.
    fn exact_slope_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for seg in 0..self.soc.len() - 1 {
            let h = self.soc[seg + 1] - self.soc[seg];
            let delta = (self.voltage[seg + 1] - self.voltage[seg]) / h;
            let (d0, d1) = (self.knot_slope[seg], self.knot_slope[seg + 1]);
            // p'(s) = a s^2 + b s + d0 on s in [0, 1]
            let a = 3.0 * d0 + 3.0 * d1 - 6.0 * delta;
            let b = -4.0 * d0 - 2.0 * d1 + 6.0 * delta;
            let mut candidates = vec![d0, d1];
            if a.abs() > 0.0 {
                let s = -b / (2.0 * a);
                if s > 0.0 && s < 1.0 {
                    candidates.push(a * s * s + b * s + d0);
                }
            }
            for c in candidates {
                lo = lo.min(c);
                hi = hi.max(c);
            }
        }
        (lo, hi)
    }

    pub fn inverse(&self, voltage: f64) -> Result<f64> {
        let (min, max) = (self.voltage[0], self.voltage[self.voltage.len() - 1]);
        if !(min..=max).contains(&voltage) {
            return Err(Error::VoltageOutOfRange { voltage, min, max });
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.hermite(self.segment(mid), mid).0 < voltage {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Steffen (1990) knot derivatives. Interior slopes never exceed twice either
/// adjacent secant, which keeps every segment strictly monotone. End slopes use
/// the one-sided parabola estimate clamped to `[delta / 2, 2 delta]`.
fn steffen_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let p = (delta[i - 1] * h[i] + delta[i] * h[i - 1]) / (h[i - 1] + h[i]);
        d[i] = p.min(2.0 * delta[i - 1]).min(2.0 * delta[i]);
    }
    let end = |d_near: f64, d_far: f64, h_near: f64, h_far: f64| {
        let p = d_near * (1.0 + h_near / (h_near + h_far)) - d_far * h_near / (h_near + h_far);
        p.clamp(0.5 * d_near, 2.0 * d_near)
    };
    d[0] = end(delta[0], delta[1], h[0], h[1]);
    d[n - 1] = end(delta[n - 2], delta[n - 3], h[n - 2], h[n - 3]);
    d
}

/// Any supported open-circuit-voltage function. Cloning is cheap.
#[derive(Debug, Clone, PartialEq)]
pub enum OcvCurve {
    Affine(AffineOcv),
    Tabulated(Arc<TabulatedOcv>),
}

impl From<AffineOcv> for OcvCurve {
    fn from(value: AffineOcv) -> Self {
        OcvCurve::Affine(value)
    }
}

impl From<TabulatedOcv> for OcvCurve {
    fn from(value: TabulatedOcv) -> Self {
        OcvCurve::Tabulated(Arc::new(value))
    }
}

impl OcvCurve {
    /// `U(z)`. Tabulated curves reject `z` outside `[0, 1]`.
    pub fn eval(&self, z: f64) -> Result<f64> {
        match self {
            OcvCurve::Affine(a) => Ok(a.eval(z)),
            OcvCurve::Tabulated(t) => t.eval(z),
        }
    }

    /// `dU/dz`, left limit at interior knots.
    pub fn slope(&self, z: f64) -> Result<f64> {
        match self {
            OcvCurve::Affine(a) => Ok(a.alpha),
            OcvCurve::Tabulated(t) => t.slope(z),
        }
    }

    /// Global `(min, max)` of `dU/dz` over the SOC domain.
    pub fn slope_bounds(&self) -> (f64, f64) {
        match self {
            OcvCurve::Affine(a) => (a.alpha, a.alpha),
            OcvCurve::Tabulated(t) => t.slope_bounds(),
        }
    }

    /// Total evaluation used by the time-stepping simulator: tabulated curves
    /// continue linearly past the ends so that SOCs inside the guard band stay
    /// well-defined.
    pub fn eval_extended(&self, z: f64) -> f64 {
        match self {
            OcvCurve::Affine(a) => a.eval(z),
            OcvCurve::Tabulated(t) => t.eval_extended(z),
        }
    }

    pub fn slope_extended(&self, z: f64) -> f64 {
        match self {
            OcvCurve::Affine(a) => a.alpha,
            OcvCurve::Tabulated(t) => t.slope_extended(z),
        }
    }

    /// `U^-1(v)`.
    pub fn inverse(&self, voltage: f64) -> Result<f64> {
        match self {
            OcvCurve::Affine(a) => Ok((voltage - a.beta) / a.alpha),
            OcvCurve::Tabulated(t) => t.inverse(voltage),
        }
    }

    /// Voltage at empty and full SOC.
    pub fn voltage_window(&self) -> (f64, f64) {
        (self.eval_extended(0.0), self.eval_extended(1.0))
    }

    pub fn as_affine(&self) -> Option<&AffineOcv> {
        match self {
            OcvCurve::Affine(a) => Some(a),
            OcvCurve::Tabulated(_) => None,
        }
    }

    pub fn bundled(kind: BundledCurve) -> Self {
        kind.curve()
    }
}

/// Curves shipped with the crate.
///
/// The tabulated ones are synthetic shapes: an NMC/graphite-like curve rising
/// smoothly from 3.3 V to 4.2 V with steeper ends, and an LFP/graphite-like
/// curve with a flat plateau near 3.3 V and steep ends. The affine entries are
/// the matching linear approximations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BundledCurve {
    NmcGrLike,
    LfpGrLike,
    NmcGrAffine,
    LfpGrAffine,
}

const NMC_GR_LIKE: &[(f64, f64)] = &[
    (0.00, 3.300),
    (0.02, 3.390),
    (0.05, 3.460),
    (0.10, 3.530),
    (0.20, 3.610),
    (0.30, 3.670),
    (0.40, 3.730),
    (0.50, 3.800),
    (0.60, 3.870),
    (0.70, 3.950),
    (0.80, 4.030),
    (0.90, 4.110),
    (0.95, 4.150),
    (1.00, 4.200),
];

const LFP_GR_LIKE: &[(f64, f64)] = &[
    (0.00, 3.000),
    (0.02, 3.120),
    (0.05, 3.200),
    (0.10, 3.250),
    (0.20, 3.280),
    (0.30, 3.295),
    (0.40, 3.305),
    (0.50, 3.315),
    (0.60, 3.325),
    (0.70, 3.335),
    (0.80, 3.345),
    (0.90, 3.370),
    (0.95, 3.420),
    (0.98, 3.500),
    (1.00, 3.600),
];

impl BundledCurve {
    pub const ALL: [BundledCurve; 4] = [
        BundledCurve::NmcGrLike,
        BundledCurve::LfpGrLike,
        BundledCurve::NmcGrAffine,
        BundledCurve::LfpGrAffine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BundledCurve::NmcGrLike => "nmc-gr-like",
            BundledCurve::LfpGrLike => "lfp-gr-like",
            BundledCurve::NmcGrAffine => "nmc-gr-affine",
            BundledCurve::LfpGrAffine => "lfp-gr-affine",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn curve(self) -> OcvCurve {
        match self {
            BundledCurve::NmcGrLike => TabulatedOcv::new(NMC_GR_LIKE).expect("bundled table").into(),
            BundledCurve::LfpGrLike => TabulatedOcv::new(LFP_GR_LIKE).expect("bundled table").into(),
            BundledCurve::NmcGrAffine => AffineOcv::new(0.89, 3.31).expect("bundled affine").into(),
            BundledCurve::LfpGrAffine => AffineOcv::new(0.6, 3.0).expect("bundled affine").into(),
        }
    }

    /// Linear approximation paired with a tabulated curve.
    pub fn affine_counterpart(self) -> BundledCurve {
        match self {
            BundledCurve::NmcGrLike | BundledCurve::NmcGrAffine => BundledCurve::NmcGrAffine,
            BundledCurve::LfpGrLike | BundledCurve::LfpGrAffine => BundledCurve::LfpGrAffine,
        }
    }
}

impl fmt::Display for BundledCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_knot() -> TabulatedOcv {
        TabulatedOcv::new(&[(0.0, 3.0), (0.5, 3.6), (1.0, 4.2)]).unwrap()
    }

    fn bent() -> TabulatedOcv {
        TabulatedOcv::new(&[(0.0, 3.0), (0.2, 3.5), (0.5, 3.6), (0.9, 3.9), (1.0, 4.2)]).unwrap()
    }

    #[test]
    fn affine_values() {
        let a = AffineOcv::new(1.2, 3.0).unwrap();
        assert_eq!(a.eval(0.0), 3.0);
        let nmc = AffineOcv::new(0.89, 3.31).unwrap();
        assert!((nmc.eval(1.0) - 4.20).abs() < 1e-12);
        let curve = OcvCurve::from(a);
        assert_eq!(curve.slope(0.37).unwrap(), 1.2);
        assert_eq!(curve.slope_bounds(), (1.2, 1.2));
        assert_eq!(OcvCurve::from(AffineOcv::new(0.6, 3.0).unwrap()).slope_bounds(), (0.6, 0.6));
        // affine curves extrapolate
        assert!((curve.eval(1.5).unwrap() - 4.8).abs() < 1e-12);
    }

    #[test]
    fn affine_rejects_nonpositive() {
        assert!(AffineOcv::new(0.0, 3.0).is_err());
        assert!(AffineOcv::new(1.0, -3.0).is_err());
    }

    #[test]
    fn three_knot_interpolation_by_hand() {
        // collinear data: Steffen slopes are all 1.2 so the cubic is the line
        let t = three_knot();
        let v = t.eval(0.25).unwrap();
        assert!(v > 3.0 && v < 3.6);
        assert!((v - 3.3).abs() < 1e-12);
        assert!((t.slope(0.25).unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn bent_curve_matches_hand_hermite() {
        // segment [0.2, 0.5]: secants 2.5 and 1/3; slopes by hand
        let t = bent();
        let d = &t.knot_slope;
        // interior knot 0.2: p = (2.5*0.3 + (1/3)*0.2) / 0.5 = 1.6333.., min(p, 5, 2/3) = 2/3
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-12);
        // interior knot 0.5: secants 1/3 and 0.75, p = (1/3*0.4 + 0.75*0.3)/0.7
        let p: f64 = (1.0 / 3.0 * 0.4 + 0.75 * 0.3) / 0.7;
        assert!((d[2] - p.min(2.0 / 3.0)).abs() < 1e-12);
        // midpoint of the segment: Hermite basis at s = 0.5
        let h = 0.3;
        let expected = 0.5 * 3.5 + 0.125 * h * d[1] + 0.5 * 3.6 - 0.125 * h * d[2];
        assert!((t.eval(0.35).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn slope_matches_finite_difference() {
        let h = 1e-6;
        for curve in [bent(), BundledCurve::NmcGrLike.curve_tab(), BundledCurve::LfpGrLike.curve_tab()] {
            for i in 1..200 {
                let z = i as f64 / 200.0 + 0.0013;
                if curve.soc.iter().any(|&k| (k - z).abs() < 1e-4) || z + h > 1.0 {
                    continue;
                }
                let fd = (curve.eval(z + h).unwrap() - curve.eval(z - h).unwrap()) / (2.0 * h);
                let s = curve.slope(z).unwrap();
                assert!(((fd - s) / s).abs() < 1e-6, "z={z} fd={fd} s={s}");
            }
        }
    }

    #[test]
    fn slope_at_knot_uses_left_segment() {
        let t = bent();
        let left = t.hermite(0, 0.2).1;
        assert_eq!(t.slope(0.2).unwrap(), left);
        assert!(left > 0.0);
        assert!(t.slope(0.0).unwrap() > 0.0 && t.slope(1.0).unwrap() > 0.0);
    }

    #[test]
    fn slope_bounds_against_fine_scan() {
        for t in [bent(), BundledCurve::NmcGrLike.curve_tab(), BundledCurve::LfpGrLike.curve_tab()] {
            let (k1, k2) = t.slope_bounds();
            let n = 200_000;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..=n {
                let s = t.slope(i as f64 / n as f64).unwrap();
                lo = lo.min(s);
                hi = hi.max(s);
            }
            assert!(k1 > 0.0 && k1 <= k2);
            assert!(k1 <= lo + 1e-12 && (lo - k1) < 1e-6 * k1.max(1.0), "{k1} vs {lo}");
            assert!(k2 >= hi - 1e-12 && (k2 - hi) < 1e-6 * k2, "{k2} vs {hi}");
        }
    }

    #[test]
    fn single_segment_table_is_linear() {
        let t = TabulatedOcv::new(&[(0.0, 3.0), (1.0, 4.0)]).unwrap();
        assert_eq!(t.slope_bounds(), (1.0, 1.0));
        assert!((t.eval(0.3).unwrap() - 3.3).abs() < 1e-12);
    }

    #[test]
    fn tabulated_rejects_outside_domain() {
        let t = three_knot();
        assert!(matches!(t.eval(-0.01), Err(Error::OutOfDomain { .. })));
        assert!(matches!(t.slope(1.01), Err(Error::OutOfDomain { .. })));
        assert!(t.eval(f64::NAN).is_err());
        // the simulator-facing total evaluation continues linearly
        assert!((t.eval_extended(1.01) - (4.2 + 0.01 * 1.2)).abs() < 1e-12);
    }

    #[test]
    fn construction_errors() {
        let e = TabulatedOcv::new(&[(0.0, 3.0), (0.5, 2.9), (1.0, 4.0)]).unwrap_err();
        assert!(matches!(e, Error::Validation { row: 2, .. }), "{e}");
        let e = TabulatedOcv::new(&[(0.0, 3.0), (0.5, 3.5), (0.5, 3.6), (1.0, 4.0)]).unwrap_err();
        assert!(matches!(e, Error::Validation { row: 3, .. }), "{e}");
        assert!(TabulatedOcv::new(&[(0.0, 3.0)]).is_err());
        assert!(TabulatedOcv::new(&[(0.1, 3.0), (1.0, 4.0)]).is_err());
    }

    #[test]
    fn csv_loading() {
        let ok = "soc,voltage_v\n0,3.0\n0.5,3.6\n1,4.2\n";
        let t = TabulatedOcv::read_csv(ok.as_bytes()).unwrap();
        assert_eq!(t.len(), 3);

        let decreasing = "soc,voltage_v\n0,3.0\n0.5,2.8\n1,4.2\n";
        match TabulatedOcv::read_csv(decreasing.as_bytes()).unwrap_err() {
            Error::Validation { row, line, .. } => assert_eq!((row, line), (2, 3)),
            e => panic!("unexpected {e}"),
        }
        let dup = "soc,voltage_v\n0,3.0\n0.5,3.5\n0.5,3.7\n1,4.2\n";
        assert!(matches!(TabulatedOcv::read_csv(dup.as_bytes()), Err(Error::Validation { row: 3, .. })));

        let malformed = "soc,voltage_v\n0,3.0\n0.5,abc\n1,4.2\n";
        match TabulatedOcv::read_csv(malformed.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let bad_header = "z,v\n0,3.0\n1,4.2\n";
        assert!(matches!(TabulatedOcv::read_csv(bad_header.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn inverse_round_trip() {
        for kind in BundledCurve::ALL {
            let c = kind.curve();
            for z in [0.0, 0.013, 0.4, 0.77, 1.0] {
                let v = c.eval(z).unwrap();
                assert!((c.inverse(v).unwrap() - z).abs() < 1e-12, "{kind} z={z}");
            }
        }
    }

    #[test]
    fn bundled_curves_shape() {
        let nmc = BundledCurve::NmcGrLike.curve();
        let lfp = BundledCurve::LfpGrLike.curve();
        assert_eq!(nmc.voltage_window(), (3.3, 4.2));
        assert_eq!(lfp.voltage_window(), (3.0, 3.6));
        // LFP plateau is much flatter than anything on the NMC curve
        assert!(lfp.slope_bounds().0 < 0.5 * nmc.slope_bounds().0);
        assert!(lfp.slope(0.5).unwrap() < 0.2);
    }

    impl BundledCurve {
        fn curve_tab(self) -> TabulatedOcv {
            match self.curve() {
                OcvCurve::Tabulated(t) => (*t).clone(),
                OcvCurve::Affine(_) => panic!("not tabulated"),
            }
        }
    }
}
