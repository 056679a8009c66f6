//! Potentials and the line integral `v = ∫₀¹ du V(x(u))` along a discretized path.
//!
//! Paths are flat slices of `(N_p + 1) * d` physical coordinates. `v` keeps the
//! sign of the potential, so attractive potentials give `v ≤ 0` and the Monte
//! Carlo weight is always `exp(-t v)`.

use std::fmt;

use crate::error::{invalid, Error, Result};

/// Segments shorter than this fall back to a pointwise evaluation.
pub const SEGMENT_EPSILON: f64 = 1e-12;

/// Default midpoint subdivisions for Yukawa smoothing.
pub const DEFAULT_N_SUB: usize = 4;

/// Approximate critical screening `μ_c ≈ 1.19 α m` above which the Yukawa
/// potential has no bound state. Used for input validation only.
pub const YUKAWA_CRITICAL_SCREENING: f64 = 1.19;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialSpec {
    Free,
    /// `m ω² x² / 2`
    Harmonic { mass: f64, omega: f64 },
    /// `-(a²/2m) ν(ν+1) / cosh²(a x)`
    PoschlTeller { a: f64, nu: u32, mass: f64 },
    /// `-g δ(x)`, one dimension only.
    DeltaWell { g: f64 },
    /// `-α / r`
    Coulomb { alpha: f64 },
    /// `-α e^{-μ r} / r`
    Yukawa { alpha: f64, mu: f64 },
}

impl PotentialSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialSpec::Free => "free",
            PotentialSpec::Harmonic { .. } => "harmonic",
            PotentialSpec::PoschlTeller { .. } => "poschl_teller",
            PotentialSpec::DeltaWell { .. } => "delta",
            PotentialSpec::Coulomb { .. } => "coulomb",
            PotentialSpec::Yukawa { .. } => "yukawa",
        }
    }

    /// Check parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{} parameter {name} must be positive, got {v}", self.name())))
            }
        };
        match *self {
            PotentialSpec::Free => Ok(()),
            PotentialSpec::Harmonic { mass, omega } => {
                pos("mass", mass)?;
                pos("omega", omega)
            }
            PotentialSpec::PoschlTeller { a, nu, mass } => {
                pos("a", a)?;
                pos("mass", mass)?;
                if nu == 0 {
                    return Err(invalid("poschl_teller nu must be a positive integer"));
                }
                Ok(())
            }
            PotentialSpec::DeltaWell { g } => pos("g", g),
            PotentialSpec::Coulomb { alpha } => pos("alpha", alpha),
            PotentialSpec::Yukawa { alpha, mu } => {
                pos("alpha", alpha)?;
                if mu >= 0.0 && mu.is_finite() {
                    Ok(())
                } else {
                    Err(invalid(format!("yukawa mu must be non-negative, got {mu}")))
                }
            }
        }
    }

    /// True when `V(-x) = V(x)` and the potential is regular enough for the
    /// parity-projected estimator.
    pub fn supports_parity_projection(&self) -> bool {
        matches!(
            self,
            PotentialSpec::Free
                | PotentialSpec::Harmonic { .. }
                | PotentialSpec::PoschlTeller { .. }
                | PotentialSpec::DeltaWell { .. }
        )
    }

    pub fn is_singular(&self) -> bool {
        matches!(
            self,
            PotentialSpec::Coulomb { .. } | PotentialSpec::Yukawa { .. } | PotentialSpec::DeltaWell { .. }
        )
    }

    /// The line-integral method used when none is requested explicitly.
    pub fn default_method(&self) -> LineIntegralMethod {
        match self {
            PotentialSpec::DeltaWell { .. } => LineIntegralMethod::CrossingCount,
            PotentialSpec::Coulomb { .. } => LineIntegralMethod::SmoothedAnalytic,
            PotentialSpec::Yukawa { .. } => LineIntegralMethod::SmoothedNumeric { n_sub: DEFAULT_N_SUB },
            _ => LineIntegralMethod::Pointwise,
        }
    }
}

impl fmt::Display for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PotentialSpec::Free => write!(f, "free"),
            PotentialSpec::Harmonic { mass, omega } => write!(f, "harmonic(m={mass}, omega={omega})"),
            PotentialSpec::PoschlTeller { a, nu, mass } => write!(f, "poschl_teller(a={a}, nu={nu}, m={mass})"),
            PotentialSpec::DeltaWell { g } => write!(f, "delta(g={g})"),
            PotentialSpec::Coulomb { alpha } => write!(f, "coulomb(alpha={alpha})"),
            PotentialSpec::Yukawa { alpha, mu } => write!(f, "yukawa(alpha={alpha}, mu={mu})"),
        }
    }
}

/// How the line integral is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineIntegralMethod {
    /// `(1/N_p) Σ_{i=1}^{N_p} V(x_i)`
    Pointwise,
    /// Exact line average of `1/r` over each segment (Coulomb).
    SmoothedAnalytic,
    /// Midpoint rule with `n_sub` nodes per segment (Yukawa, or Coulomb for cross-checks).
    SmoothedNumeric { n_sub: usize },
    /// Origin-crossing rule for the delta well in one dimension.
    CrossingCount,
}

impl LineIntegralMethod {
    pub fn name(&self) -> &'static str {
        match self {
            LineIntegralMethod::Pointwise => "pointwise",
            LineIntegralMethod::SmoothedAnalytic => "smoothed_analytic",
            LineIntegralMethod::SmoothedNumeric { .. } => "smoothed_numeric",
            LineIntegralMethod::CrossingCount => "crossing_count",
        }
    }

    /// Reject combinations that make no sense.
    pub fn check(&self, potential: &PotentialSpec, dim: usize) -> Result<()> {
        let mismatch = || Error::MethodMismatch {
            method: self.name().to_string(),
            potential: potential.name().to_string(),
        };
        match (self, potential) {
            (LineIntegralMethod::CrossingCount, PotentialSpec::DeltaWell { .. }) => {
                if dim == 1 {
                    Ok(())
                } else {
                    Err(Error::Unsupported("delta potential requires d = 1".into()))
                }
            }
            (_, PotentialSpec::DeltaWell { .. }) => Err(Error::DeltaPointwise),
            (LineIntegralMethod::CrossingCount, _) => Err(mismatch()),
            (LineIntegralMethod::Pointwise, _) => Ok(()),
            (LineIntegralMethod::SmoothedAnalytic, PotentialSpec::Coulomb { .. }) => Ok(()),
            (LineIntegralMethod::SmoothedNumeric { n_sub }, PotentialSpec::Coulomb { .. } | PotentialSpec::Yukawa { .. }) => {
                if *n_sub >= 1 {
                    Ok(())
                } else {
                    Err(invalid("n_sub must be at least 1"))
                }
            }
            _ => Err(mismatch()),
        }
    }
}

impl fmt::Display for LineIntegralMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineIntegralMethod::SmoothedNumeric { n_sub } => write!(f, "smoothed_numeric(n_sub={n_sub})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineIntegralResult {
    /// `∫₀¹ du V(x(u))` in energy units.
    pub v: f64,
    /// Segments where the degenerate-segment fallback fired.
    pub n_singular_events: u32,
}

#[inline]
fn norm_sq(p: &[f64]) -> f64 {
    p.iter().map(|c| c * c).sum()
}

/// `V(position)`.
pub fn eval(potential: &PotentialSpec, position: &[f64]) -> Result<f64> {
    match *potential {
        PotentialSpec::Free => Ok(0.0),
        PotentialSpec::Harmonic { mass, omega } => Ok(0.5 * mass * omega * omega * norm_sq(position)),
        PotentialSpec::PoschlTeller { a, nu, mass } => {
            let nu = nu as f64;
            let c = (a * position[0]).cosh();
            Ok(-(a * a) / (2.0 * mass) * nu * (nu + 1.0) / (c * c))
        }
        PotentialSpec::DeltaWell { .. } => Err(Error::DeltaPointwise),
        PotentialSpec::Coulomb { alpha } => {
            let r = norm_sq(position).sqrt();
            if r == 0.0 {
                return Err(Error::SingularPoint);
            }
            Ok(-alpha / r)
        }
        PotentialSpec::Yukawa { alpha, mu } => {
            let r = norm_sq(position).sqrt();
            if r == 0.0 {
                return Err(Error::SingularPoint);
            }
            Ok(-alpha * (-mu * r).exp() / r)
        }
    }
}

/// Result of a smoothed segment average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentAverage {
    Exact(f64),
    /// The segment was shorter than [`SEGMENT_EPSILON`]; the value is `V(x_cur)`.
    Fallback(f64),
}

impl SegmentAverage {
    pub fn value(self) -> f64 {
        match self {
            SegmentAverage::Exact(v) | SegmentAverage::Fallback(v) => v,
        }
    }

    pub fn is_fallback(self) -> bool {
        matches!(self, SegmentAverage::Fallback(_))
    }
}

/// Geometry of the straight segment `a + b l`, `l ∈ [0, 1]`.
struct Segment {
    len: f64,
    r_start: f64,
    r_end: f64,
    /// Signed coordinate of the start along the unit direction.
    s_start: f64,
}

fn segment(a: &[f64], b: &[f64]) -> Segment {
    let len = norm_sq(b).sqrt();
    let r_start = norm_sq(a).sqrt();
    let r_end = a.iter().zip(b).map(|(p, q)| (p + q) * (p + q)).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    Segment {
        len,
        r_start,
        r_end,
        s_start: dot / len,
    }
}

/// Perpendicular distance of the line through `a` with direction `b` from the
/// origin, via the Lagrange identity (no cancellation for near-collinear input).
fn perpendicular_distance(a: &[f64], b: &[f64], len: f64) -> f64 {
    let mut cross = 0.0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let c = a[i] * b[j] - a[j] * b[i];
            cross += c * c;
        }
    }
    cross.sqrt() / len
}

/// `∫₀¹ dl / |a + b l|` for a non-degenerate segment.
fn inverse_distance_average(a: &[f64], b: &[f64], seg: &Segment) -> Result<f64> {
    let l = seg.len;
    let s_end = seg.s_start + l;
    // Moving away from the foot of the perpendicular: log form, written with
    // ln_1p so that short segments keep full relative precision.
    let away = |r0: f64, r1: f64, s0: f64| {
        let growth = l * ((2.0 * s0 + l) / (r1 + r0) + 1.0) / (r0 + s0);
        growth.ln_1p() / l
    };
    if seg.s_start >= 0.0 {
        Ok(away(seg.r_start, seg.r_end, seg.s_start))
    } else if s_end <= 0.0 {
        // Reverse the segment; the average is symmetric.
        Ok(away(seg.r_end, seg.r_start, -s_end))
    } else {
        let h = perpendicular_distance(a, b, l);
        if h == 0.0 {
            return Err(Error::LogSingularity);
        }
        Ok(((s_end / h).asinh() - (seg.s_start / h).asinh()) / l)
    }
}

fn diff(x_prev: &[f64], x_cur: &[f64]) -> Vec<f64> {
    x_cur.iter().zip(x_prev).map(|(c, p)| c - p).collect()
}

/// Line average of `-α / r` over the straight segment from `x_prev` to `x_cur`.
pub fn segment_smoothed_coulomb(x_prev: &[f64], x_cur: &[f64], alpha: f64) -> Result<SegmentAverage> {
    let b = diff(x_prev, x_cur);
    coulomb_segment(x_prev, &b, alpha)
}

fn coulomb_segment(a: &[f64], b: &[f64], alpha: f64) -> Result<SegmentAverage> {
    let seg = segment(a, b);
    if seg.r_start == 0.0 || seg.r_end == 0.0 {
        return Err(Error::SingularPoint);
    }
    if seg.len < SEGMENT_EPSILON {
        return Ok(SegmentAverage::Fallback(-alpha / seg.r_end));
    }
    Ok(SegmentAverage::Exact(-alpha * inverse_distance_average(a, b, &seg)?))
}

/// Midpoint-rule line average of `-α e^{-μ r} / r` with `n_sub` nodes.
pub fn segment_smoothed_yukawa(
    x_prev: &[f64],
    x_cur: &[f64],
    alpha: f64,
    mu: f64,
    n_sub: usize,
) -> Result<SegmentAverage> {
    if n_sub < 1 {
        return Err(invalid("n_sub must be at least 1"));
    }
    let b = diff(x_prev, x_cur);
    let mut scratch = vec![0.0; x_prev.len()];
    yukawa_segment(x_prev, &b, alpha, mu, n_sub, &mut scratch)
}

fn yukawa_segment(
    a: &[f64],
    b: &[f64],
    alpha: f64,
    mu: f64,
    n_sub: usize,
    scratch: &mut [f64],
) -> Result<SegmentAverage> {
    let seg = segment(a, b);
    if seg.r_start == 0.0 || seg.r_end == 0.0 {
        return Err(Error::SingularPoint);
    }
    if seg.len < SEGMENT_EPSILON {
        return Ok(SegmentAverage::Fallback(-alpha * (-mu * seg.r_end).exp() / seg.r_end));
    }
    let s_end = seg.s_start + seg.len;
    if seg.s_start < 0.0 && s_end > 0.0 && perpendicular_distance(a, b, seg.len) == 0.0 {
        return Err(Error::LogSingularity);
    }
    let inv = 1.0 / n_sub as f64;
    let mut acc = 0.0;
    for j in 0..n_sub {
        let l = (j as f64 + 0.5) * inv;
        for (s, (p, q)) in scratch.iter_mut().zip(a.iter().zip(b)) {
            *s = p + q * l;
        }
        let r = norm_sq(scratch).sqrt();
        if r == 0.0 {
            return Err(Error::LogSingularity);
        }
        acc += (-mu * r).exp() / r;
    }
    Ok(SegmentAverage::Exact(-alpha * acc * inv))
}

/// Delta-well line integral from sign changes of a one-dimensional path.
///
/// Each crossing contributes `-g / (N_p |x_i - x_{i-1}|)`. An interior point
/// exactly at zero is itself a crossing (backward difference of the segment
/// ending there); zero endpoints are ignored.
pub fn delta_crossings(path: &[f64], g: f64) -> Result<LineIntegralResult> {
    let n = path.len().saturating_sub(1);
    if n < 2 {
        return Err(invalid("crossing count needs N_p >= 2"));
    }
    let scale = -g / n as f64;
    let mut v = 0.0;
    for i in 1..=n {
        let (prev, cur) = (path[i - 1], path[i]);
        let crossing = if cur == 0.0 {
            i < n
        } else {
            prev != 0.0 && (prev < 0.0) != (cur < 0.0)
        };
        if crossing {
            let step = (cur - prev).abs();
            if step == 0.0 {
                return Err(Error::DegenerateCrossing);
            }
            v += scale / step;
        }
    }
    Ok(LineIntegralResult {
        v,
        n_singular_events: 0,
    })
}

/// Line integral along a physical path of `N_p + 1` points in `dim` dimensions.
pub fn line_integral(
    potential: &PotentialSpec,
    path: &[f64],
    dim: usize,
    method: LineIntegralMethod,
) -> Result<LineIntegralResult> {
    if dim == 0 || !path.len().is_multiple_of(dim) || path.len() < 2 * dim {
        return Err(invalid("path must hold N_p + 1 >= 2 points"));
    }
    method.check(potential, dim)?;
    let n = path.len() / dim - 1;
    let inv_n = 1.0 / n as f64;
    let points = || path.chunks_exact(dim).skip(1);
    let pointwise = |v: LineIntegralResult| Ok(v);
    match (method, *potential) {
        (LineIntegralMethod::CrossingCount, PotentialSpec::DeltaWell { g }) => delta_crossings(path, g),
        (LineIntegralMethod::Pointwise, PotentialSpec::Free) => pointwise(LineIntegralResult {
            v: 0.0,
            n_singular_events: 0,
        }),
        (LineIntegralMethod::Pointwise, PotentialSpec::Harmonic { mass, omega }) => {
            let s: f64 = points().map(norm_sq).sum();
            pointwise(LineIntegralResult {
                v: 0.5 * mass * omega * omega * s * inv_n,
                n_singular_events: 0,
            })
        }
        (LineIntegralMethod::Pointwise, _) => {
            let mut s = 0.0;
            for p in points() {
                s += eval(potential, p)?;
            }
            pointwise(LineIntegralResult {
                v: s * inv_n,
                n_singular_events: 0,
            })
        }
        (LineIntegralMethod::SmoothedAnalytic, PotentialSpec::Coulomb { alpha }) => {
            smoothed(path, dim, |a, b, _| coulomb_segment(a, b, alpha))
        }
        (LineIntegralMethod::SmoothedNumeric { n_sub }, PotentialSpec::Coulomb { alpha }) => {
            let mut scratch = vec![0.0; dim];
            smoothed(path, dim, |a, b, _| yukawa_segment(a, b, alpha, 0.0, n_sub, &mut scratch))
        }
        (LineIntegralMethod::SmoothedNumeric { n_sub }, PotentialSpec::Yukawa { alpha, mu }) => {
            let mut scratch = vec![0.0; dim];
            smoothed(path, dim, |a, b, _| yukawa_segment(a, b, alpha, mu, n_sub, &mut scratch))
        }
        _ => unreachable!("method/potential pair accepted by check()"),
    }
}

fn smoothed<F>(path: &[f64], dim: usize, mut seg: F) -> Result<LineIntegralResult>
where
    F: FnMut(&[f64], &[f64], usize) -> Result<SegmentAverage>,
{
    let n = path.len() / dim - 1;
    let mut b = vec![0.0; dim];
    let mut s = 0.0;
    let mut events = 0;
    for i in 1..=n {
        let prev = &path[(i - 1) * dim..i * dim];
        let cur = &path[i * dim..(i + 1) * dim];
        for c in 0..dim {
            b[c] = cur[c] - prev[c];
        }
        let avg = seg(prev, &b, i)?;
        if avg.is_fallback() {
            events += 1;
        }
        s += avg.value();
    }
    Ok(LineIntegralResult {
        v: s / n as f64,
        n_singular_events: events,
    })
}
