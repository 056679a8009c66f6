//! Energies, diagnostics and goodness-of-fit from kernel scans and samples.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::analytic::ReferenceKernel;
use crate::error::{invalid, Error, Result};
use crate::estimator::{compensated_sum, Histogram, KernelEstimate, LineSamples};
use crate::loopgen::{scale_path, LoopSource};

/// One row of a kernel scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub ln_value: f64,
    pub sem_ln: f64,
    pub ln_analytic: Option<f64>,
}

/// `ln K` against `t`, strictly increasing in `t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KernelSeries {
    rows: Vec<SeriesRow>,
}

impl KernelSeries {
    pub fn new(rows: Vec<SeriesRow>) -> Result<Self> {
        for w in rows.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(invalid(format!("t must be strictly increasing ({} then {})", w[0].t, w[1].t)));
            }
        }
        if let Some(r) = rows.iter().find(|r| !(r.sem_ln >= 0.0)) {
            return Err(invalid(format!("negative or NaN sem_ln at t = {}", r.t)));
        }
        Ok(KernelSeries { rows })
    }

    /// Rows from estimates, optionally annotated with a reference kernel.
    pub fn from_estimates(estimates: &[KernelEstimate], reference: Option<&ReferenceKernel>) -> Result<Self> {
        let mut rows = Vec::with_capacity(estimates.len());
        for e in estimates {
            let ln_analytic = match reference {
                Some(r) => Some(r.ln_eval(&e.y, &e.x, e.t)?),
                None => None,
            };
            rows.push(SeriesRow {
                t: e.t,
                ln_value: e.ln_value,
                sem_ln: e.sem_ln,
                ln_analytic,
            });
        }
        Self::new(rows)
    }

    pub fn rows(&self) -> &[SeriesRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Which way the fitted line is reported; the energy is `-d ln K / dt` either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Spectrum bounded below by a positive energy: `-ln K` rises with `t`.
    BoundBelow,
    /// Negative ground-state energy: `ln K` rises with `t`.
    BoundAbove,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub residual_rms: f64,
    /// False when the fit fell back to ordinary least squares.
    pub weighted: bool,
}

/// Least squares of `ys` on `xs`, weighted by `1/sem²` when every `sem > 0`.
pub fn linear_fit(xs: &[f64], ys: &[f64], sems: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n < 3 || ys.len() != n || sems.len() != n {
        return Err(Error::DegenerateWindow(format!("need at least 3 points, got {n}")));
    }
    let weighted = sems.iter().all(|&s| s > 0.0 && s.is_finite());
    let w: Vec<f64> = if weighted {
        sems.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; n]
    };
    let sw = compensated_sum(&w);
    let xm = compensated_sum(&xs.iter().zip(&w).map(|(x, w)| x * w).collect::<Vec<_>>()) / sw;
    let ym = compensated_sum(&ys.iter().zip(&w).map(|(y, w)| y * w).collect::<Vec<_>>()) / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += w[i] * (xs[i] - xm) * (xs[i] - xm);
        sxy += w[i] * (xs[i] - xm) * (ys[i] - ym);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateWindow("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let resid: Vec<f64> = (0..n).map(|i| ys[i] - (intercept + slope * xs[i])).collect();
    let residual_rms = (resid.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
    let (slope_var, intercept_var) = if weighted {
        (1.0 / sxx, 1.0 / sw + xm * xm / sxx)
    } else {
        let s2 = resid.iter().map(|r| r * r).sum::<f64>() / (n as f64 - 2.0);
        (s2 / sxx, s2 * (1.0 / n as f64 + xm * xm / sxx))
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se: slope_var.sqrt(),
        intercept_se: intercept_var.sqrt(),
        residual_rms,
        weighted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyFit {
    pub energy: f64,
    pub uncertainty: f64,
    pub window: (f64, f64),
    /// Intercept of `ln K` at `t = 0`, an estimate of `ln ψ(x)ψ(y)`.
    pub intercept: f64,
    pub residual_rms: f64,
    pub n_points: usize,
    pub orientation: Orientation,
    pub weighted: bool,
    /// False when `ln K` is better described by a power of `t` than by a line.
    pub spectral: bool,
}

fn window_rows(series: &KernelSeries, window: (f64, f64)) -> Result<Vec<SeriesRow>> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::DegenerateWindow(format!("[{lo}, {hi}]")));
    }
    let tol = 1e-9 * (hi - lo).abs().max(1.0);
    let rows: Vec<SeriesRow> = series
        .rows()
        .iter()
        .filter(|r| r.t >= lo - tol && r.t <= hi + tol)
        .copied()
        .collect();
    if rows.len() < 3 {
        return Err(Error::DegenerateWindow(format!(
            "[{lo}, {hi}] holds {} points, need at least 3",
            rows.len()
        )));
    }
    Ok(rows)
}

/// Weighted least-squares slope of `ln K` over `window`; `E = -slope`.
pub fn fit_energy(series: &KernelSeries, window: (f64, f64), orientation: Orientation) -> Result<EnergyFit> {
    let rows = window_rows(series, window)?;
    if let Some(r) = rows.iter().find(|r| !r.ln_value.is_finite()) {
        return Err(Error::NonPositiveProjection(r.t));
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let ln: Vec<f64> = rows.iter().map(|r| r.ln_value).collect();
    let sems: Vec<f64> = rows.iter().map(|r| r.sem_ln).collect();
    let fit = linear_fit(&ts, &ln, &sems)?;
    let spectral = match ts.iter().all(|&t| t > 0.0) {
        true => {
            let lt: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
            linear_fit(&lt, &ln, &sems).map_or(true, |p| fit.residual_rms <= p.residual_rms)
        }
        false => true,
    };
    Ok(EnergyFit {
        energy: -fit.slope,
        uncertainty: fit.slope_se,
        window,
        intercept: fit.intercept,
        residual_rms: fit.residual_rms,
        n_points: rows.len(),
        orientation,
        weighted: fit.weighted,
        spectral,
    })
}

/// `E₁` from a parity-projected scan. Non-positive projections inside the
/// window (precision loss at large `t`) are reported as errors.
pub fn first_excited_energy(projected: &KernelSeries, window: (f64, f64)) -> Result<EnergyFit> {
    fit_energy(projected, window, Orientation::BoundBelow)
}

fn normalized_residual(r: f64, sem: f64, ln: f64) -> f64 {
    let scale = if sem > 0.0 { sem } else { 1e-12 * ln.abs().max(1.0) };
    r.abs() / scale
}

/// Longest contiguous run of at least `min_points` rows whose own linear fit
/// has every normalized residual `≤ threshold` and, where an analytic value
/// is present, `|ln K - ln K_analytic| ≤ 3 sem_ln`. Ties go to the earliest run.
pub fn detect_window(series: &KernelSeries, min_points: usize, threshold: f64) -> Result<(f64, f64)> {
    let rows = series.rows();
    let n = rows.len();
    let min_points = min_points.max(3);
    if n < min_points {
        return Err(Error::WindowNotFound);
    }
    let agrees: Vec<bool> = rows
        .iter()
        .map(|r| {
            r.ln_value.is_finite()
                && match r.ln_analytic {
                    Some(a) => (r.ln_value - a).abs() <= 3.0 * r.sem_ln,
                    None => true,
                }
        })
        .collect();
    for len in (min_points..=n).rev() {
        for start in 0..=n - len {
            let run = &rows[start..start + len];
            if !agrees[start..start + len].iter().all(|&a| a) {
                continue;
            }
            let ts: Vec<f64> = run.iter().map(|r| r.t).collect();
            let ln: Vec<f64> = run.iter().map(|r| r.ln_value).collect();
            let sems: Vec<f64> = run.iter().map(|r| r.sem_ln).collect();
            let Ok(fit) = linear_fit(&ts, &ln, &sems) else { continue };
            let ok = run.iter().all(|r| {
                let resid = r.ln_value - (fit.intercept + fit.slope * r.t);
                normalized_residual(resid, r.sem_ln, r.ln_value) <= threshold
            });
            if ok {
                return Ok((run[0].t, run[len - 1].t));
            }
        }
    }
    Err(Error::WindowNotFound)
}

/// Default significance, in combined standard errors, for skyscraper detection.
pub const SKYSCRAPER_SIGMA: f64 = 3.0;

/// Interior points that stand above both neighbours by more than `n_sigma`
/// combined standard errors.
///
/// With `y = x` the kernel is a positive spectral sum, so `ln K` is convex in
/// `t` and cannot have an interior local maximum; a significant one is a
/// spike from a single loop, after which the series drops and recovers.
pub fn detect_skyscrapers_with(series: &KernelSeries, n_sigma: f64) -> Vec<usize> {
    let rows = series.rows();
    let mut out = Vec::new();
    for i in 1..rows.len().saturating_sub(1) {
        let (a, b, c) = (rows[i - 1], rows[i], rows[i + 1]);
        if !(a.ln_value.is_finite() && b.ln_value.is_finite() && c.ln_value.is_finite()) {
            continue;
        }
        let above = |n: SeriesRow| {
            let s = (b.sem_ln * b.sem_ln + n.sem_ln * n.sem_ln).sqrt();
            b.ln_value - n.ln_value > n_sigma * s
        };
        if above(a) && above(c) {
            out.push(i);
        }
    }
    out
}

pub fn detect_skyscrapers(series: &KernelSeries) -> Vec<usize> {
    detect_skyscrapers_with(series, SKYSCRAPER_SIGMA)
}

/// Histogram with per-sample weights, for integrands such as `P(v) e^{-v}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub weight_sums: Vec<f64>,
    pub weight_sq_sums: Vec<f64>,
    pub n_samples: u64,
}

impl WeightedHistogram {
    /// Equal-width bins over the observed `[min, max]` of `samples`.
    pub fn from_samples(samples: &[f64], weights: &[f64], n_bins: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if weights.len() != samples.len() {
            return Err(invalid("one weight per sample required"));
        }
        if n_bins < 2 {
            return Err(invalid("n_bins must be at least 2"));
        }
        let (mut lo, mut hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / n_bins as f64;
        let edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0u64; n_bins];
        let mut weight_sums = vec![0.0; n_bins];
        let mut weight_sq_sums = vec![0.0; n_bins];
        for (&s, &w) in samples.iter().zip(weights) {
            if let Some(b) = crate::estimator::bin_index(s, lo, hi, n_bins) {
                counts[b] += 1;
                weight_sums[b] += w;
                weight_sq_sums[b] += w * w;
            }
        }
        Ok(WeightedHistogram {
            edges,
            counts,
            weight_sums,
            weight_sq_sums,
            n_samples: samples.len() as u64,
        })
    }

    /// Weights given as logarithms, rescaled so the largest is 1.
    pub fn from_log_weights(samples: &[f64], ln_weights: &[f64], n_bins: usize) -> Result<Self> {
        let top = ln_weights.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let w: Vec<f64> = ln_weights.iter().map(|l| (l - top).exp()).collect();
        Self::from_samples(samples, &w, n_bins)
    }

    /// Kish effective sample size `(Σw)² / Σw²`.
    pub fn effective_count(&self) -> f64 {
        let s: f64 = self.weight_sums.iter().sum();
        let s2: f64 = self.weight_sq_sums.iter().sum();
        if s2 > 0.0 {
            s * s / s2
        } else {
            0.0
        }
    }

    /// `Σw / (Σ_all w · width)` per bin.
    pub fn density(&self) -> Vec<f64> {
        let total: f64 = self.weight_sums.iter().sum();
        (0..self.counts.len())
            .map(|b| self.weight_sums[b] / (total * (self.edges[b + 1] - self.edges[b])))
            .collect()
    }
}

/// Pearson test result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GofResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Bins left after merging to at least [`MIN_EXPECTED`] expected counts.
    pub n_bins: usize,
}

/// Minimum expected count per bin for the Pearson statistic.
pub const MIN_EXPECTED: f64 = 5.0;

/// Probability mass of `density` on `[a, b]`.
fn bin_mass(density: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    quadrature::integrate(density, a, b, 1e-13).integral.max(0.0)
}

/// Expected probability per histogram bin, with the outer bins extended to
/// the ends of `support`.
fn expected_probs(edges: &[f64], density: &impl Fn(f64) -> f64, support: (f64, f64)) -> Vec<f64> {
    let n = edges.len() - 1;
    (0..n)
        .map(|b| {
            let a = if b == 0 { support.0.min(edges[0]) } else { edges[b] };
            let c = if b == n - 1 { support.1.max(edges[n]) } else { edges[b + 1] };
            bin_mass(density, a, c)
        })
        .collect()
}

/// Merge adjacent bins left to right until each holds `≥ min` expected
/// counts; a short remainder joins the last merged bin.
fn merge_bins(observed: &[f64], expected: &[f64], min: f64) -> (Vec<f64>, Vec<f64>) {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&ob, &ex) in observed.iter().zip(expected) {
        o += ob;
        e += ex;
        if e >= min {
            obs.push(o);
            exp.push(e);
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
            *lo += o;
            *le += e;
        } else {
            obs.push(o);
            exp.push(e);
        }
    }
    (obs, exp)
}

fn pearson(obs: &[f64], exp: &[f64]) -> Result<GofResult> {
    if obs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: obs.len(),
        });
    }
    let statistic: f64 = obs.iter().zip(exp).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = obs.len() - 1;
    let chi = ChiSquared::new(dof as f64).map_err(|e| invalid(e.to_string()))?;
    Ok(GofResult {
        statistic,
        dof,
        p_value: chi.sf(statistic),
        n_bins: obs.len(),
    })
}

/// Pearson χ² of a histogram against a normalized density on `support`.
pub fn chi_square_gof(hist: &Histogram, density: impl Fn(f64) -> f64, support: (f64, f64)) -> Result<GofResult> {
    let n = hist.n_samples as f64;
    if n < 2.0 * MIN_EXPECTED {
        return Err(Error::TooFewSamples {
            needed: (2.0 * MIN_EXPECTED) as usize,
            got: hist.n_samples as usize,
        });
    }
    let probs = expected_probs(&hist.edges, &density, support);
    let expected: Vec<f64> = probs.iter().map(|p| p * n).collect();
    let observed: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let (obs, exp) = merge_bins(&observed, &expected, MIN_EXPECTED);
    pearson(&obs, &exp)
}

/// Minimum number of events per merged bin in the weighted test.
pub const MIN_EVENTS: u64 = 100;

/// χ² of a weighted histogram against the bin probabilities of `density`
/// (normalized here on `support`), with the total weight unknown:
///
/// `X² = Σ W_i²/W2_i - (Σ W_i p_i/W2_i)² / Σ p_i²/W2_i`, `k - 1` degrees of freedom,
///
/// where `W_i`, `W2_i` are the sums of weights and squared weights in bin `i`
/// (Gagunashvili's weighted-histogram test). Bins are merged left to right
/// until each holds at least [`MIN_EVENTS`] events of positive weight.
pub fn chi_square_gof_weighted(
    hist: &WeightedHistogram,
    density: impl Fn(f64) -> f64,
    support: (f64, f64),
) -> Result<GofResult> {
    let z = bin_mass(&density, support.0, support.1);
    if !(z > 0.0) {
        return Err(invalid("density has no mass on its support"));
    }
    let probs = expected_probs(&hist.edges, &density, support);
    let mut merged: Vec<(f64, f64, f64)> = Vec::new();
    let (mut w, mut w2, mut p, mut n) = (0.0, 0.0, 0.0, 0u64);
    for b in 0..hist.counts.len() {
        w += hist.weight_sums[b];
        w2 += hist.weight_sq_sums[b];
        p += probs[b] / z;
        if hist.weight_sq_sums[b] > 0.0 {
            n += hist.counts[b];
        }
        if n >= MIN_EVENTS && w2 > 0.0 {
            merged.push((w, w2, p));
            (w, w2, p, n) = (0.0, 0.0, 0.0, 0);
        }
    }
    match merged.last_mut() {
        Some(last) => {
            last.0 += w;
            last.1 += w2;
            last.2 += p;
        }
        None => {
            return Err(Error::TooFewSamples {
                needed: 2 * MIN_EVENTS as usize,
                got: hist.n_samples as usize,
            })
        }
    }
    if merged.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2 * MIN_EVENTS as usize,
            got: hist.n_samples as usize,
        });
    }
    let a: f64 = merged.iter().map(|(w, w2, _)| w * w / w2).sum();
    let b: f64 = merged.iter().map(|(w, w2, p)| w * p / w2).sum();
    let c: f64 = merged.iter().map(|(_, w2, p)| p * p / w2).sum();
    let statistic = (a - b * b / c).max(0.0);
    let dof = merged.len() - 1;
    let chi = ChiSquared::new(dof as f64).map_err(|e| invalid(e.to_string()))?;
    Ok(GofResult {
        statistic,
        dof,
        p_value: chi.sf(statistic),
        n_bins: merged.len(),
    })
}

/// Pearson χ² of the normalized weighted histogram against the normalized
/// `density`, with the histogram's event count as the sample size. This is the
/// shape comparison of an integrand histogram such as `P(v) e^{-v}`; unlike
/// [`chi_square_gof_weighted`] it ignores the extra variance the weights carry.
pub fn chi_square_gof_shape(
    hist: &WeightedHistogram,
    density: impl Fn(f64) -> f64,
    support: (f64, f64),
) -> Result<GofResult> {
    let n = hist.n_samples as f64;
    if n < 2.0 * MIN_EXPECTED {
        return Err(Error::TooFewSamples {
            needed: (2.0 * MIN_EXPECTED) as usize,
            got: hist.n_samples as usize,
        });
    }
    let z = bin_mass(&density, support.0, support.1);
    let total: f64 = hist.weight_sums.iter().sum();
    if !(z > 0.0 && total > 0.0) {
        return Err(invalid("no mass to compare"));
    }
    let probs = expected_probs(&hist.edges, &density, support);
    let observed: Vec<f64> = hist.weight_sums.iter().map(|w| w / total * n).collect();
    let expected: Vec<f64> = probs.iter().map(|p| p / z * n).collect();
    let (obs, exp) = merge_bins(&observed, &expected, MIN_EXPECTED);
    pearson(&obs, &exp)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok((d, kolmogorov_q(lambda)))
}

/// `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `(λ, μ) = (m² t, (m/t)(x - y)²)`.
pub fn classical_params(m: f64, t: f64, y: f64, x: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(invalid(format!("t must be positive, got {t}")));
    }
    Ok((m * m * t, m / t * (x - y) * (x - y)))
}

/// Euclidean classical path of the oscillator from `y` at `τ = 0` to `x` at `τ = t`.
pub fn classical_solution_ho(omega: f64, t: f64, y: f64, x: f64, tau: f64) -> Result<f64> {
    if !(omega > 0.0 && t > 0.0) {
        return Err(invalid("omega and t must be positive"));
    }
    if !(0.0..=t).contains(&tau) {
        return Err(invalid(format!("tau = {tau} outside [0, {t}]")));
    }
    let s = (omega * t).sinh();
    Ok((y * (omega * (t - tau)).sinh() + x * (omega * tau).sinh()) / s)
}

/// A dominant loop, or the weighted average of several.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    /// Physical times `τ_i = t i / N_p`.
    pub tau: Vec<f64>,
    /// Flat positions, `dim` per time.
    pub positions: Vec<f64>,
    pub dim: usize,
    /// Per-coordinate standard errors (averages only).
    pub std_err: Option<Vec<f64>>,
    /// `W_max / ΣW` (for averages, the mean over inputs).
    pub weight_share: f64,
    /// `ln W` of the dominant loop (for averages, of the largest input).
    pub ln_weight: f64,
    pub lambda: f64,
    pub mu: f64,
    pub loop_index: Option<usize>,
}

/// The loop with the largest weight and its share of the total.
pub fn dominant_trajectory<S: LoopSource + ?Sized>(
    src: &S,
    samples: &LineSamples,
    y: &[f64],
    x: &[f64],
    m: f64,
) -> Result<TrajectoryReport> {
    if samples.v.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if samples.v.len() != src.n_loops() {
        return Err(invalid("samples do not match the ensemble"));
    }
    let exps = samples.exponents();
    let (k, &a_max) = exps
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| if *cur.1 > *best.1 { cur } else { best });
    let total = compensated_sum(&exps.iter().map(|a| (a - a_max).exp()).collect::<Vec<_>>());
    let (n_points, dim) = (src.n_points(), src.dim());
    let mut unit = vec![0.0; (n_points + 1) * dim];
    src.fill_loop(k, &mut unit);
    let mut positions = vec![0.0; unit.len()];
    let t = samples.t;
    scale_path(&unit, n_points, dim, y, x, t, m, &mut positions);
    let dist2: f64 = y.iter().zip(x).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(TrajectoryReport {
        tau: (0..=n_points).map(|i| t * i as f64 / n_points as f64).collect(),
        positions,
        dim,
        std_err: None,
        weight_share: 1.0 / total,
        ln_weight: a_max,
        lambda: m * m * t,
        mu: m / t * dist2,
        loop_index: Some(k),
    })
}

/// Average of dominant trajectories from independent simulations, each
/// weighted by its normalized `W`, with per-point standard errors.
pub fn weighted_average_trajectory(reports: &[TrajectoryReport]) -> Result<TrajectoryReport> {
    let n = reports.len();
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let first = &reports[0];
    if reports
        .iter()
        .any(|r| r.positions.len() != first.positions.len() || r.dim != first.dim)
    {
        return Err(invalid("trajectories differ in shape"));
    }
    let a_max = reports.iter().fold(f64::NEG_INFINITY, |a, r| a.max(r.ln_weight));
    let raw: Vec<f64> = reports.iter().map(|r| (r.ln_weight - a_max).exp()).collect();
    let sw = compensated_sum(&raw);
    let w: Vec<f64> = raw.iter().map(|r| r / sw).collect();
    let len = first.positions.len();
    let mut mean = vec![0.0; len];
    let mut se = vec![0.0; len];
    let corr = n as f64 / (n as f64 - 1.0);
    for i in 0..len {
        let m: f64 = reports.iter().zip(&w).map(|(r, w)| w * r.positions[i]).sum();
        let v: f64 = reports
            .iter()
            .zip(&w)
            .map(|(r, w)| w * w * (r.positions[i] - m) * (r.positions[i] - m))
            .sum();
        mean[i] = m;
        se[i] = (corr * v).sqrt();
    }
    Ok(TrajectoryReport {
        tau: first.tau.clone(),
        positions: mean,
        dim: first.dim,
        std_err: Some(se),
        weight_share: reports.iter().map(|r| r.weight_share).sum::<f64>() / n as f64,
        ln_weight: a_max,
        lambda: first.lambda,
        mu: first.mu,
        loop_index: None,
    })
}

/// Fraction of interior times where `report` lies within `n_se` standard
/// errors of `reference(τ)` (one-dimensional trajectories).
pub fn band_coverage(report: &TrajectoryReport, reference: impl Fn(f64) -> f64, n_se: f64) -> Result<f64> {
    let se = report.std_err.as_ref().ok_or_else(|| invalid("report has no standard errors"))?;
    if report.dim != 1 {
        return Err(Error::Unsupported("band coverage for d > 1".into()));
    }
    let n = report.tau.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let inside = (1..n - 1)
        .filter(|&i| (report.positions[i] - reference(report.tau[i])).abs() <= n_se * se[i])
        .count();
    Ok(inside as f64 / (n - 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::sample_line_integrals;
    use crate::loopgen::{Algorithm, EnsembleSpec};
    use crate::potentials::{LineIntegralMethod, PotentialSpec};
    use rand::Rng;

    fn series(points: &[(f64, f64, f64)]) -> KernelSeries {
        KernelSeries::new(
            points
                .iter()
                .map(|&(t, ln_value, sem_ln)| SeriesRow {
                    t,
                    ln_value,
                    sem_ln,
                    ln_analytic: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn series_validation() {
        let row = |t| SeriesRow {
            t,
            ln_value: 0.0,
            sem_ln: 0.1,
            ln_analytic: None,
        };
        assert!(KernelSeries::new(vec![row(1.0), row(1.0)]).is_err());
        let mut bad = row(2.0);
        bad.sem_ln = -1.0;
        assert!(KernelSeries::new(vec![row(1.0), bad]).is_err());
    }

    #[test]
    fn exact_line() {
        let pts: Vec<(f64, f64, f64)> = (1..=20).map(|t| (t as f64, -0.5 * t as f64 + 1.25, 0.0)).collect();
        let fit = fit_energy(&series(&pts), (1.0, 20.0), Orientation::BoundBelow).unwrap();
        assert!((fit.energy - 0.5).abs() < 1e-13);
        assert!(fit.residual_rms < 1e-12);
        assert!((fit.intercept - 1.25).abs() < 1e-12);
        assert!(!fit.weighted);
        assert!(fit.spectral);
        assert_eq!(fit.n_points, 20);
    }

    #[test]
    fn weighted_fit_matches_closed_form() {
        // two-parameter WLS solved independently by normal equations
        let pts: [(f64, f64, f64); 4] = [(1.0, 0.2, 0.1), (2.0, -0.1, 0.2), (3.0, -0.9, 0.1), (4.0, -1.2, 0.4)];
        let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for &(x, y, e) in &pts {
            let w = 1.0 / (e * e);
            s += w;
            sx += w * x;
            sy += w * y;
            sxx += w * x * x;
            sxy += w * x * y;
        }
        let det = s * sxx - sx * sx;
        let slope = (s * sxy - sx * sy) / det;
        let slope_se = (s / det).sqrt();
        let fit = fit_energy(&series(&pts), (1.0, 4.0), Orientation::BoundAbove).unwrap();
        assert!((fit.energy + slope).abs() < 1e-12);
        assert!((fit.uncertainty - slope_se).abs() < 1e-12);
        assert!(fit.weighted);
    }

    #[test]
    fn degenerate_windows() {
        let pts: Vec<(f64, f64, f64)> = (1..=5).map(|t| (t as f64, 0.0, 0.1)).collect();
        let s = series(&pts);
        assert!(matches!(fit_energy(&s, (3.0, 3.0), Orientation::BoundBelow), Err(Error::DegenerateWindow(_))));
        assert!(matches!(fit_energy(&s, (1.0, 2.0), Orientation::BoundBelow), Err(Error::DegenerateWindow(_))));
        assert!(fit_energy(&s, (1.0, 3.0), Orientation::BoundBelow).is_ok());
    }

    #[test]
    fn two_level_first_excited() {
        // odd projection of a two-level spectrum: only E1 and E3 survive
        let (e1, e3) = (1.5, 3.5);
        let pts: Vec<(f64, f64, f64)> = (0..40)
            .map(|i| {
                let t = 2.0 + 0.25 * i as f64;
                (t, (0.3 * (-e1 * t).exp() + 1e-30 * (-e3 * t).exp()).ln(), 0.0)
            })
            .collect();
        let fit = first_excited_energy(&series(&pts), (2.0, 11.75)).unwrap();
        assert!((fit.energy - e1).abs() < 1e-12);
        let mut with_nan = pts.clone();
        with_nan[5].1 = f64::NAN;
        assert!(matches!(
            first_excited_energy(&series(&with_nan), (2.0, 11.75)),
            Err(Error::NonPositiveProjection(_))
        ));
    }

    #[test]
    fn free_projection_is_not_spectral() {
        use crate::analytic::kernel_free;
        let pts: Vec<(f64, f64, f64)> = (0..40)
            .map(|i| {
                let t = 2.0 + 0.5 * i as f64;
                let k = 0.5 * (kernel_free(&[1.0], &[2.0], t, 1.0).unwrap() - kernel_free(&[-1.0], &[2.0], t, 1.0).unwrap());
                (t, k.ln(), 0.0)
            })
            .collect();
        let fit = first_excited_energy(&series(&pts), (2.0, 21.5)).unwrap();
        assert!(!fit.spectral);
    }

    #[test]
    fn window_detection() {
        let line: Vec<(f64, f64, f64)> = (1..=40).map(|t| (t as f64, -0.5 * t as f64, 0.01)).collect();
        assert_eq!(detect_window(&series(&line), 5, 3.0).unwrap(), (1.0, 40.0));

        let bent: Vec<(f64, f64, f64)> = (1..=40)
            .map(|t| {
                let t = t as f64;
                let bend = if t > 30.0 { -0.2 * (t - 30.0).powi(2) } else { 0.0 };
                (t, -0.5 * t + bend, 0.01)
            })
            .collect();
        let (lo, hi) = detect_window(&series(&bent), 5, 3.0).unwrap();
        assert_eq!(lo, 1.0);
        assert!(hi <= 30.0, "{hi}");

        let noisy: Vec<(f64, f64, f64)> = (1..=10).map(|t| (t as f64, if t % 2 == 0 { 1.0 } else { -1.0 }, 0.01)).collect();
        assert_eq!(detect_window(&series(&noisy), 5, 3.0), Err(Error::WindowNotFound));

        // analytic disagreement splits the run
        let mut rows: Vec<SeriesRow> = (1..=20)
            .map(|t| SeriesRow {
                t: t as f64,
                ln_value: -0.5 * t as f64,
                sem_ln: 0.01,
                ln_analytic: Some(-0.5 * t as f64),
            })
            .collect();
        rows[14].ln_analytic = Some(rows[14].ln_value + 1.0);
        assert_eq!(detect_window(&KernelSeries::new(rows).unwrap(), 3, 3.0).unwrap(), (1.0, 14.0));
    }

    #[test]
    fn skyscrapers() {
        let mono: Vec<(f64, f64, f64)> = (1..=30).map(|t| (t as f64, 0.5 * t as f64, 0.01)).collect();
        assert!(detect_skyscrapers(&series(&mono)).is_empty());
        let mut spiky = mono.clone();
        spiky[12].1 += 40.0;
        spiky[12].2 = 1.0;
        assert_eq!(detect_skyscrapers(&series(&spiky)), vec![12]);
        // convex dip followed by a rise is not a spike
        let convex: Vec<(f64, f64, f64)> = (1..=30).map(|t| {
            let t = t as f64;
            (t, -1.5 * t.ln() + 0.5 * t, 0.01)
        }).collect();
        assert!(detect_skyscrapers(&series(&convex)).is_empty());
    }

    #[test]
    fn chi_square_null_distribution() {
        // exponential samples by inversion; the median p-value over repeats is ~0.5
        let mut ps = Vec::new();
        for rep in 0..100 {
            let mut rng = crate::rng::loop_stream(123, rep);
            let xs: Vec<f64> = (0..100_000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let h = Histogram::from_samples(&xs, 60).unwrap();
            ps.push(chi_square_gof(&h, |x: f64| (-x).exp(), (0.0, 60.0)).unwrap().p_value);
        }
        ps.sort_by(f64::total_cmp);
        let median = 0.5 * (ps[49] + ps[50]);
        assert!((0.3..=0.7).contains(&median), "median {median}");
    }

    #[test]
    fn chi_square_detects_wrong_density() {
        let mut rng = crate::rng::loop_stream(5, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let h = Histogram::from_samples(&xs, 40).unwrap();
        let r = chi_square_gof(&h, |x: f64| 1.2 * (-1.2 * x).exp(), (0.0, 60.0)).unwrap();
        assert!(r.p_value < 1e-6);
        let small = Histogram::from_samples(&xs[..5], 4).unwrap();
        assert!(chi_square_gof(&small, |x: f64| (-x).exp(), (0.0, 60.0)).is_err());
    }

    #[test]
    fn shape_chi_square_with_unit_weights_matches_plain() {
        let mut rng = crate::rng::loop_stream(8, 1);
        let xs: Vec<f64> = (0..5_000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let h = Histogram::from_samples(&xs, 30).unwrap();
        let hw = WeightedHistogram::from_samples(&xs, &vec![2.5; xs.len()], 30).unwrap();
        let f = |x: f64| (-x).exp();
        let a = chi_square_gof(&h, f, (0.0, 60.0)).unwrap();
        let b = chi_square_gof_shape(&hw, |x| 3.0 * f(x), (0.0, 60.0)).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-9 * a.statistic);
        assert_eq!(a.dof, b.dof);
    }

    #[test]
    fn weighted_chi_square_unit_weights() {
        // unit weights: the statistic is Neyman's χ² minimized over the total
        let mut rng = crate::rng::loop_stream(8, 0);
        let xs: Vec<f64> = (0..5_000).map(|_| rng.random::<f64>()).collect();
        let hw = WeightedHistogram::from_samples(&xs, &vec![1.0; xs.len()], 10).unwrap();
        let r = chi_square_gof_weighted(&hw, |_| 1.0, (0.0, 1.0)).unwrap();
        let (lo_edge, hi_edge) = (hw.edges[0], hw.edges[10]);
        let probs: Vec<f64> = (0..10)
            .map(|b| {
                let a = if b == 0 { 0.0f64.min(lo_edge) } else { hw.edges[b] };
                let c = if b == 9 { 1.0f64.max(hi_edge) } else { hw.edges[b + 1] };
                c - a
            })
            .collect();
        let neyman = |n_hat: f64| -> f64 {
            (0..10)
                .map(|b| {
                    let n = hw.counts[b] as f64;
                    (n - n_hat * probs[b]).powi(2) / n
                })
                .sum()
        };
        let (mut a, mut b) = (4000.0f64, 6000.0f64);
        for _ in 0..200 {
            let (m1, m2) = (a + (b - a) / 3.0, b - (b - a) / 3.0);
            if neyman(m1) < neyman(m2) {
                b = m2;
            } else {
                a = m1;
            }
        }
        assert!((r.statistic - neyman(0.5 * (a + b))).abs() < 1e-8 * r.statistic.max(1.0));
        assert_eq!(r.dof, 9);
    }

    #[test]
    fn weighted_chi_square_null_and_mismatch() {
        // Exp(1) samples weighted by e^{-x} represent the density 2 e^{-2x}
        let mut ps = Vec::new();
        let mut wrong = Vec::new();
        for rep in 0..60 {
            let mut rng = crate::rng::loop_stream(77, rep);
            let xs: Vec<f64> = (0..20_000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let lw: Vec<f64> = xs.iter().map(|x| -x).collect();
            let hw = WeightedHistogram::from_log_weights(&xs, &lw, 40).unwrap();
            ps.push(chi_square_gof_weighted(&hw, |x: f64| (-2.0 * x).exp(), (0.0, 60.0)).unwrap().p_value);
            wrong.push(chi_square_gof_weighted(&hw, |x: f64| (-x).exp(), (0.0, 60.0)).unwrap().p_value);
        }
        ps.sort_by(f64::total_cmp);
        let median = 0.5 * (ps[29] + ps[30]);
        assert!((0.25..=0.75).contains(&median), "median {median}");
        assert!(wrong.iter().all(|&p| p < 1e-6));
        let hw = WeightedHistogram::from_samples(&[1.0, 2.0, 3.0], &[1.0; 3], 2).unwrap();
        assert!(chi_square_gof_weighted(&hw, |_| 1.0, (0.0, 4.0)).is_err());
    }

    #[test]
    fn merging_keeps_totals() {
        let (o, e) = merge_bins(&[1.0, 2.0, 3.0, 10.0, 0.0, 1.0], &[1.0, 2.0, 3.0, 10.0, 0.5, 0.5], 5.0);
        assert_eq!(o.iter().sum::<f64>(), 17.0);
        assert_eq!(e.iter().sum::<f64>(), 17.0);
        assert!(e.iter().all(|&x| x >= 5.0));
    }

    #[test]
    fn ks_test() {
        let mut rng = crate::rng::loop_stream(9, 0);
        let a: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let c: Vec<f64> = (0..5000).map(|_| rng.random::<f64>() * 1.1).collect();
        assert!(ks_two_sample(&a, &b).unwrap().1 > 0.01);
        assert!(ks_two_sample(&a, &c).unwrap().1 < 1e-6);
        let (d, p) = ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((d, p), (0.0, 1.0));
    }

    #[test]
    fn classical_parameters() {
        let (_, mu) = classical_params(30.0, 10.0, 1.0, -1.0).unwrap();
        assert!((mu - 12.0).abs() < 1e-12);
        assert_eq!(classical_params(10.0, 90.0, 0.0, 0.0).unwrap().0, 9000.0);
        assert_eq!(classical_params(3.0, 2.0, 0.4, 0.4).unwrap().1, 0.0);
        assert!(classical_params(1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn classical_solution() {
        let (w, t) = (1.0f64, 10.0f64);
        assert!((classical_solution_ho(w, t, 1.0, -1.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((classical_solution_ho(w, t, 1.0, -1.0, t).unwrap() + 1.0).abs() < 1e-15);
        for tau in [0.5, 3.0, 5.0, 8.7] {
            let closed_form = (w * tau).cosh() - (1.0 + (w * t).cosh()) / (w * t).sinh() * (w * tau).sinh();
            assert!((classical_solution_ho(w, t, 1.0, -1.0, tau).unwrap() - closed_form).abs() < 1e-12);
            // Euler-Lagrange residual by central differences
            let h = 1e-3;
            let f = |s: f64| classical_solution_ho(w, t, 1.0, -1.0, s).unwrap();
            let acc = (f(tau + h) - 2.0 * f(tau) + f(tau - h)) / (h * h);
            assert!((acc - w * w * f(tau)).abs() < 1e-6);
        }
        let line = classical_solution_ho(1e-5, 10.0, 1.0, -1.0, 2.5).unwrap();
        assert!((line - 0.5).abs() < 1e-6);
        assert!(classical_solution_ho(1.0, 1.0, 0.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn dominant_share() {
        let spec = EnsembleSpec::new(Algorithm::Vloop, 200, 50, 1, 4).unwrap();
        let free = sample_line_integrals(&PotentialSpec::Free, &[1.0], &[-1.0], 2.0, 3.0, &spec, LineIntegralMethod::Pointwise).unwrap();
        let r = dominant_trajectory(&spec, &free, &[1.0], &[-1.0], 3.0).unwrap();
        assert!((r.weight_share - 1.0 / 200.0).abs() < 1e-15);
        assert_eq!(r.positions[0], 1.0);
        assert_eq!(*r.positions.last().unwrap(), -1.0);
        let ho = PotentialSpec::Harmonic { mass: 3.0, omega: 1.0 };
        let s = sample_line_integrals(&ho, &[1.0], &[-1.0], 2.0, 3.0, &spec, LineIntegralMethod::Pointwise).unwrap();
        let r = dominant_trajectory(&spec, &s, &[1.0], &[-1.0], 3.0).unwrap();
        assert!(r.weight_share > 1.0 / 200.0 && r.weight_share <= 1.0);
        let k = r.loop_index.unwrap();
        assert!(s.v.iter().all(|&v| v >= s.v[k]));
    }

    #[test]
    fn weighted_average() {
        let mk = |pos: Vec<f64>, lw: f64| TrajectoryReport {
            tau: vec![0.0, 0.5, 1.0],
            positions: pos,
            dim: 1,
            std_err: None,
            weight_share: 0.5,
            ln_weight: lw,
            lambda: 1.0,
            mu: 1.0,
            loop_index: Some(0),
        };
        let avg = weighted_average_trajectory(&[mk(vec![1.0, 0.0, -1.0], 0.0), mk(vec![1.0, 1.0, -1.0], 2f64.ln())]).unwrap();
        assert!((avg.positions[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(avg.std_err.as_ref().unwrap()[0], 0.0);
        assert!(weighted_average_trajectory(&[]).is_err());
        assert!(band_coverage(&avg, |_| 2.0 / 3.0, 1.0).unwrap() == 1.0);
    }
}
