//! Monte Carlo kernel estimates from loop ensembles.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analytic::ln_kernel_free;
use crate::error::{invalid, Error, Result};
use crate::loopgen::{
    check_endpoints, map_loops_with, scale_path, Algorithm, EnsembleSpec, LoopSource, Provenance, UnitLoop,
};
use crate::potentials::{line_integral, LineIntegralMethod, PotentialSpec};
use crate::rng::derive_seed;

/// Exponents beyond this magnitude switch the weight mean to log-sum-exp form.
/// Low enough that sums of squared weights over very large ensembles stay finite.
pub const EXP_LIMIT: f64 = 300.0;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum in slice order.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut s = CompensatedSum::new();
    for &x in xs {
        s.add(x);
    }
    s.value()
}

/// Compensated mean in slice order.
pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(compensated_sum(xs) / xs.len() as f64)
}

/// Standard error of the mean, `sqrt(Σ(x - x̄)² / (N(N-1)))`.
pub fn sem(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let m = mean(samples)?;
    let mut ss = CompensatedSum::new();
    for &x in samples {
        ss.add((x - m) * (x - m));
    }
    let n = samples.len() as f64;
    Ok((ss.value() / (n * (n - 1.0))).sqrt())
}

/// Mean and SEM of `exp(a_k)` for exponents `a_k`, in log form when needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    pub mean: f64,
    pub ln_mean: f64,
    pub sem: f64,
    /// `sem / mean`, the standard error of `ln mean`.
    pub sem_ln: f64,
}

pub fn weight_stats(exponents: &[f64]) -> Result<WeightStats> {
    if exponents.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let (lo, hi) = exponents
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    let shift = if hi > EXP_LIMIT || lo < -EXP_LIMIT { hi } else { 0.0 };
    let w: Vec<f64> = exponents.iter().map(|a| (a - shift).exp()).collect();
    let m = mean(&w)?;
    let s = if w.len() >= 2 { sem(&w)? } else { 0.0 };
    let ln_mean = m.ln() + shift;
    let scale = shift.exp();
    Ok(WeightStats {
        mean: m * scale,
        ln_mean,
        sem: s * scale,
        sem_ln: s / m,
    })
}

/// A Monte Carlo estimate of `K(x, y; t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub value: f64,
    pub ln_value: f64,
    pub sem: f64,
    /// Standard error of `ln value`.
    pub sem_ln: f64,
    pub mean_w: f64,
    pub ln_mean_w: f64,
    pub t: f64,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub n_ensembles: usize,
    pub n_singular_events: u64,
    pub provenance: Provenance,
}

/// Per-loop line integrals `v_k` (not multiplied by `t`).
#[derive(Debug, Clone, PartialEq)]
pub struct LineSamples {
    pub t: f64,
    pub v: Vec<f64>,
    pub n_singular_events: u64,
}

impl LineSamples {
    /// `-t v_k`, the exponents of the weights.
    pub fn exponents(&self) -> Vec<f64> {
        self.v.iter().map(|v| -self.t * v).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.v.iter().map(|v| (-self.t * v).exp()).collect()
    }
}

fn check_inputs(potential: &PotentialSpec, dim: usize, y: &[f64], x: &[f64], t: f64, m: f64, method: LineIntegralMethod) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("t must be positive, got {t}")));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid(format!("m must be positive, got {m}")));
    }
    potential.validate()?;
    check_endpoints(dim, y, x)?;
    method.check(potential, dim)
}

/// `W = exp(-t v)` for a single loop.
pub fn weight(
    potential: &PotentialSpec,
    unit: &UnitLoop,
    y: &[f64],
    x: &[f64],
    t: f64,
    m: f64,
    method: LineIntegralMethod,
) -> Result<f64> {
    check_inputs(potential, unit.dim(), y, x, t, m, method)?;
    let mut path = vec![0.0; unit.coords().len()];
    scale_path(unit.coords(), unit.n_points(), unit.dim(), y, x, t, m, &mut path);
    let li = line_integral(potential, &path, unit.dim(), method)?;
    Ok((-t * li.v).exp())
}

fn collect_samples(results: Vec<Result<(f64, u32)>>, t: f64) -> Result<LineSamples> {
    let mut v = Vec::with_capacity(results.len());
    let mut events = 0u64;
    for r in results {
        let (vk, ek) = r?;
        v.push(vk);
        events += ek as u64;
    }
    Ok(LineSamples {
        t,
        v,
        n_singular_events: events,
    })
}

/// Line integrals of every loop in `src` scaled to the endpoints.
pub fn sample_line_integrals<S: LoopSource + ?Sized>(
    potential: &PotentialSpec,
    y: &[f64],
    x: &[f64],
    t: f64,
    m: f64,
    src: &S,
    method: LineIntegralMethod,
) -> Result<LineSamples> {
    let (n_points, dim) = (src.n_points(), src.dim());
    check_inputs(potential, dim, y, x, t, m, method)?;
    if src.n_loops() == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let len = (n_points + 1) * dim;
    let results = map_loops_with(
        src,
        || vec![0.0; len],
        |path, _, unit| {
            scale_path(unit, n_points, dim, y, x, t, m, path);
            line_integral(potential, path, dim, method).map(|r| (r.v, r.n_singular_events))
        },
    );
    collect_samples(results, t)
}

/// Kernel estimate from already computed line integrals.
pub fn estimate_from_samples(
    samples: &LineSamples,
    y: &[f64],
    x: &[f64],
    m: f64,
    provenance: Provenance,
) -> Result<KernelEstimate> {
    let stats = weight_stats(&samples.exponents())?;
    let ln_k0 = ln_kernel_free(y, x, samples.t, m)?;
    let ln_value = ln_k0 + stats.ln_mean;
    Ok(KernelEstimate {
        value: ln_value.exp(),
        ln_value,
        sem: stats.sem * ln_k0.exp(),
        sem_ln: stats.sem_ln,
        mean_w: stats.mean,
        ln_mean_w: stats.ln_mean,
        t: samples.t,
        y: y.to_vec(),
        x: x.to_vec(),
        n_ensembles: 1,
        n_singular_events: samples.n_singular_events,
        provenance,
    })
}

/// `K ≈ (m/2πt)^{d/2} e^{-m(x-y)²/2t} ⟨e^{-t v}⟩` over one ensemble.
pub fn estimate_kernel<S: LoopSource + ?Sized>(
    potential: &PotentialSpec,
    y: &[f64],
    x: &[f64],
    t: f64,
    m: f64,
    src: &S,
    method: LineIntegralMethod,
) -> Result<KernelEstimate> {
    let samples = sample_line_integrals(potential, y, x, t, m, src, method)?;
    estimate_from_samples(&samples, y, x, m, src.provenance())
}

/// Shape of the ensembles generated by [`estimate_kernel_multi`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleConfig {
    pub algorithm: Algorithm,
    pub n_loops: usize,
    pub n_points: usize,
    pub dim: usize,
}

impl EnsembleConfig {
    pub fn spec(&self, seed: u64) -> Result<EnsembleSpec> {
        EnsembleSpec::new(self.algorithm, self.n_loops, self.n_points, self.dim, seed)
    }
}

/// Grand mean over `n_ensembles` independent ensembles seeded from
/// `(base_seed, index)`; the error is the spread of the ensemble means.
#[allow(clippy::too_many_arguments)]
pub fn estimate_kernel_multi(
    potential: &PotentialSpec,
    y: &[f64],
    x: &[f64],
    t: f64,
    m: f64,
    config: &EnsembleConfig,
    n_ensembles: usize,
    base_seed: u64,
    method: LineIntegralMethod,
) -> Result<KernelEstimate> {
    if n_ensembles < 2 {
        return Err(invalid("n_ensembles must be at least 2"));
    }
    let mut ln_means = Vec::with_capacity(n_ensembles);
    let mut events = 0;
    for e in 0..n_ensembles {
        let spec = config.spec(derive_seed(base_seed, e as u64))?;
        let samples = sample_line_integrals(potential, y, x, t, m, &spec, method)?;
        events += samples.n_singular_events;
        ln_means.push(weight_stats(&samples.exponents())?.ln_mean);
    }
    let stats = weight_stats(&ln_means)?;
    let ln_k0 = ln_kernel_free(y, x, t, m)?;
    let ln_value = ln_k0 + stats.ln_mean;
    Ok(KernelEstimate {
        value: ln_value.exp(),
        ln_value,
        sem: stats.sem * ln_k0.exp(),
        sem_ln: stats.sem_ln,
        mean_w: stats.mean,
        ln_mean_w: stats.ln_mean,
        t,
        y: y.to_vec(),
        x: x.to_vec(),
        n_ensembles,
        n_singular_events: events,
        provenance: Provenance {
            algorithm: config.algorithm,
            seed: base_seed,
            n_loops: config.n_loops,
            n_points: config.n_points,
            dim: config.dim,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Jackknife,
    Bootstrap { n_boot: usize, seed: u64 },
}

/// Resampled standard error of the mean.
pub fn resample_error(samples: &[f64], method: ResampleMethod) -> Result<f64> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::TooFewSamples { needed: 10, got: n });
    }
    let total = compensated_sum(samples);
    let nf = n as f64;
    match method {
        ResampleMethod::Jackknife => {
            let loo: Vec<f64> = samples.iter().map(|s| (total - s) / (nf - 1.0)).collect();
            let m = mean(&loo)?;
            let ss = compensated_sum(&loo.iter().map(|l| (l - m) * (l - m)).collect::<Vec<_>>());
            Ok(((nf - 1.0) / nf * ss).sqrt())
        }
        ResampleMethod::Bootstrap { n_boot, seed } => {
            if n_boot < 100 {
                return Err(invalid("bootstrap needs n_boot >= 100"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let means: Vec<f64> = (0..n_boot)
                .map(|_| {
                    let mut s = CompensatedSum::new();
                    for _ in 0..n {
                        s.add(samples[rng.random_range(0..n)]);
                    }
                    s.value() / nf
                })
                .collect();
            let m = mean(&means)?;
            let ss = compensated_sum(&means.iter().map(|b| (b - m) * (b - m)).collect::<Vec<_>>());
            Ok((ss / (n_boot as f64 - 1.0)).sqrt())
        }
    }
}

/// `½[K(x, y; t) - K(x, -y; t)]`, evaluating each loop on the paths to `y`
/// and to `-y`.
///
/// By parity the second path is the mirror image of the path from `y` to
/// `-x` carrying fluctuation `-q`, so at `y = 0` the two weights coincide
/// loop by loop.
///
/// The returned `value` may be zero (e.g. `y = 0`) or, from noise, negative;
/// `ln_value` is then `-inf` or NaN.
pub fn estimate_parity_projected<S: LoopSource + ?Sized>(
    potential: &PotentialSpec,
    y: &[f64],
    x: &[f64],
    t: f64,
    m: f64,
    src: &S,
    method: LineIntegralMethod,
) -> Result<KernelEstimate> {
    if !potential.supports_parity_projection() {
        return Err(Error::Unsupported(format!(
            "parity projection needs a regular parity-even potential, got {}",
            potential.name()
        )));
    }
    let y_ref: Vec<f64> = y.iter().map(|c| -c).collect();
    let plus = sample_line_integrals(potential, y, x, t, m, src, method)?;
    let minus = sample_line_integrals(potential, &y_ref, x, t, m, src, method)?;
    let ln_a = ln_kernel_free(y, x, t, m)?;
    let ln_b = ln_kernel_free(&y_ref, x, t, m)?;
    let ea: Vec<f64> = plus.exponents().iter().map(|e| e + ln_a).collect();
    let eb: Vec<f64> = minus.exponents().iter().map(|e| e + ln_b).collect();
    let hi = ea.iter().chain(&eb).fold(f64::NEG_INFINITY, |h, &e| h.max(e));
    let shift = if hi.abs() > EXP_LIMIT { hi } else { 0.0 };
    let h: Vec<f64> = ea
        .iter()
        .zip(&eb)
        .map(|(a, b)| 0.5 * ((a - shift).exp() - (b - shift).exp()))
        .collect();
    let mh = mean(&h)?;
    let sh = if h.len() >= 2 { sem(&h)? } else { 0.0 };
    let scale = shift.exp();
    let value = mh * scale;
    let ln_value = if mh > 0.0 {
        mh.ln() + shift
    } else if mh == 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::NAN
    };
    let ln_k0 = ln_a;
    Ok(KernelEstimate {
        value,
        ln_value,
        sem: sh * scale,
        sem_ln: if mh != 0.0 { sh / mh.abs() } else { 0.0 },
        mean_w: value / ln_k0.exp(),
        ln_mean_w: ln_value - ln_k0,
        t,
        y: y.to_vec(),
        x: x.to_vec(),
        n_ensembles: 1,
        n_singular_events: plus.n_singular_events + minus.n_singular_events,
        provenance: src.provenance(),
    })
}

/// Equal-width histogram over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_samples: u64,
    /// Compensated mean of the histogrammed samples.
    pub sample_mean: f64,
}

impl Histogram {
    /// Bins span the observed `[min, max]`; a degenerate range gets unit width
    /// centred on the single value.
    pub fn from_samples(samples: &[f64], n_bins: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if lo == hi {
            Self::with_range(samples, lo - 0.5, hi + 0.5, n_bins)
        } else {
            Self::with_range(samples, lo, hi, n_bins)
        }
    }

    /// Samples outside `[lo, hi]` are dropped but still counted in `n_samples`.
    pub fn with_range(samples: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(invalid("n_bins must be at least 2"));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("bad histogram range [{lo}, {hi}]")));
        }
        let width = (hi - lo) / n_bins as f64;
        let edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0u64; n_bins];
        for &s in samples {
            if let Some(b) = bin_index(s, lo, hi, n_bins) {
                counts[b] += 1;
            }
        }
        Ok(Histogram {
            edges,
            counts,
            n_samples: samples.len() as u64,
            sample_mean: mean(samples)?,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self, b: usize) -> f64 {
        self.edges[b + 1] - self.edges[b]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// `count / (N · width)`.
    pub fn density(&self) -> Vec<f64> {
        let n = self.n_samples as f64;
        (0..self.n_bins()).map(|b| self.counts[b] as f64 / (n * self.width(b))).collect()
    }
}

/// Bin of `s` in `n_bins` equal bins over `[lo, hi]`, `hi` inclusive.
pub fn bin_index(s: f64, lo: f64, hi: f64, n_bins: usize) -> Option<usize> {
    if !(s >= lo && s <= hi) {
        return None;
    }
    let b = ((s - lo) / (hi - lo) * n_bins as f64).floor() as usize;
    Some(b.min(n_bins - 1))
}

/// Histogram of the exponent `t v` over the ensemble.
#[allow(clippy::too_many_arguments)]
pub fn v_histogram<S: LoopSource + ?Sized>(
    potential: &PotentialSpec,
    y: &[f64],
    x: &[f64],
    t: f64,
    m: f64,
    src: &S,
    method: LineIntegralMethod,
    n_bins: usize,
) -> Result<Histogram> {
    let s = sample_line_integrals(potential, y, x, t, m, src, method)?;
    let tv: Vec<f64> = s.v.iter().map(|v| t * v).collect();
    Histogram::from_samples(&tv, n_bins)
}

/// Histogram of `W = e^{-t v}` over the ensemble.
#[allow(clippy::too_many_arguments)]
pub fn w_histogram<S: LoopSource + ?Sized>(
    potential: &PotentialSpec,
    y: &[f64],
    x: &[f64],
    t: f64,
    m: f64,
    src: &S,
    method: LineIntegralMethod,
    n_bins: usize,
) -> Result<Histogram> {
    let s = sample_line_integrals(potential, y, x, t, m, src, method)?;
    Histogram::from_samples(&s.weights(), n_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{kernel_free, kernel_ho};
    use crate::loopgen::EnsembleSpec;

    const HO: PotentialSpec = PotentialSpec::Harmonic { mass: 1.0, omega: 1.0 };
    const PW: LineIntegralMethod = LineIntegralMethod::Pointwise;

    #[test]
    fn sem_examples() {
        assert_eq!(sem(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(sem(&[0.0, 2.0]).unwrap(), 1.0);
        let xs = [0.3, 1.7, -2.2, 0.9];
        let scaled: Vec<f64> = xs.iter().map(|x| -3.0 * x).collect();
        assert!((sem(&scaled).unwrap() - 3.0 * sem(&xs).unwrap()).abs() < 1e-14);
        assert!(matches!(sem(&[1.0]), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut xs = vec![1.0];
        xs.extend(std::iter::repeat_n(1e-16, 10_000));
        xs.push(-1.0);
        assert!((compensated_sum(&xs) - 1e-12).abs() < 1e-24);
    }

    #[test]
    fn weight_stats_log_form_matches_direct() {
        let a = [-1.0, -2.0, -0.5, -3.0];
        let direct = weight_stats(&a).unwrap();
        let shifted: Vec<f64> = a.iter().map(|x| x + 800.0).collect();
        let big = weight_stats(&shifted).unwrap();
        assert!((big.ln_mean - 800.0 - direct.ln_mean).abs() < 1e-12);
        assert!((big.sem_ln - direct.sem_ln).abs() < 1e-12);
        let near = weight_stats(&[699.0, 699.5, 650.0]).unwrap();
        assert!(near.sem_ln.is_finite() && near.sem_ln > 0.0);
        assert!((near.ln_mean - (699.0f64.exp() + 699.5f64.exp() + 650.0f64.exp()).ln() + 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn free_is_exact_with_zero_variance() {
        let spec = EnsembleSpec::new(Algorithm::Vloop, 50, 32, 1, 3).unwrap();
        let est = estimate_kernel(&PotentialSpec::Free, &[0.0], &[0.0], 1.0, 1.0, &spec, PW).unwrap();
        assert!((est.value - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(est.sem, 0.0);
        assert_eq!(est.mean_w, 1.0);
        let spec3 = EnsembleSpec::new(Algorithm::Yloop, 20, 16, 3, 4).unwrap();
        let (y, x) = ([0.1, -0.2, 0.3], [1.0, 0.5, -0.7]);
        let est3 = estimate_kernel(&PotentialSpec::Free, &y, &x, 2.5, 1.7, &spec3, PW).unwrap();
        let k0 = kernel_free(&y, &x, 2.5, 1.7).unwrap();
        assert!((est3.value - k0).abs() < 1e-14 * k0);
    }

    #[test]
    fn weight_examples() {
        let pinned = UnitLoop::from_coords(4, 1, vec![0.0; 5]).unwrap();
        assert_eq!(weight(&HO, &pinned, &[0.0], &[0.0], 3.0, 1.0, PW).unwrap(), 1.0);
        let mut rng = crate::rng::loop_stream(1, 0);
        let lp = crate::loopgen::generate_vloop(64, 1, &mut rng).unwrap();
        assert_eq!(weight(&PotentialSpec::Free, &lp, &[0.2], &[0.9], 3.0, 1.0, PW).unwrap(), 1.0);
        assert!(weight(&HO, &lp, &[0.0], &[0.0], 1e-9, 1.0, PW).unwrap() > 1.0 - 1e-8);
        assert!(weight(&HO, &lp, &[0.0], &[0.0], -1.0, 1.0, PW).is_err());
        assert!(matches!(
            weight(&HO, &lp, &[0.0, 0.0], &[0.0], 1.0, 1.0, PW),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ho_t8_within_three_sem() {
        let spec = EnsembleSpec::new(Algorithm::Vloop, 4000, 400, 1, 11).unwrap();
        let est = estimate_kernel(&HO, &[0.0], &[0.0], 8.0, 1.0, &spec, PW).unwrap();
        let exact = kernel_ho(&[0.0], &[0.0], 8.0, 1.0, 1.0).unwrap();
        assert!((-exact.ln() - 4.5722).abs() < 5e-4);
        assert!((est.ln_value - exact.ln()).abs() < 3.0 * est.sem_ln, "{est:?}");
    }

    #[test]
    fn bit_identical_across_thread_counts() {
        let spec = EnsembleSpec::new(Algorithm::Lsol, 300, 64, 2, 99).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_kernel(&HO, &[0.1, 0.0], &[0.3, -0.2], 4.0, 1.0, &spec, PW).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.sem.to_bits(), b.sem.to_bits());
    }

    #[test]
    fn multi_ensemble() {
        let cfg = EnsembleConfig {
            algorithm: Algorithm::Vloop,
            n_loops: 10,
            n_points: 16,
            dim: 1,
        };
        let est = estimate_kernel_multi(&PotentialSpec::Free, &[0.0], &[0.5], 1.0, 1.0, &cfg, 3, 5, PW).unwrap();
        assert_eq!(est.sem, 0.0);
        assert_eq!(est.n_ensembles, 3);
        assert!((est.value - kernel_free(&[0.0], &[0.5], 1.0, 1.0).unwrap()).abs() < 1e-15);
        assert!(estimate_kernel_multi(&HO, &[0.0], &[0.0], 1.0, 1.0, &cfg, 1, 5, PW).is_err());
    }

    #[test]
    fn multi_ensemble_spread_matches_single_sem() {
        let cfg = EnsembleConfig {
            algorithm: Algorithm::Yloop,
            n_loops: 200,
            n_points: 64,
            dim: 1,
        };
        let multi = estimate_kernel_multi(&HO, &[0.0], &[0.0], 3.0, 1.0, &cfg, 100, 17, PW).unwrap();
        let mut single = Vec::new();
        for e in 0..10 {
            let spec = cfg.spec(1000 + e).unwrap();
            single.push(estimate_kernel(&HO, &[0.0], &[0.0], 3.0, 1.0, &spec, PW).unwrap().sem / 10.0);
        }
        let expected = mean(&single).unwrap();
        assert!((multi.sem / expected - 1.0).abs() < 0.2, "{} vs {}", multi.sem, expected);
    }

    #[test]
    fn resampling() {
        assert_eq!(resample_error(&[2.0; 20], ResampleMethod::Jackknife).unwrap(), 0.0);
        let boot = ResampleMethod::Bootstrap { n_boot: 200, seed: 1 };
        assert_eq!(resample_error(&[2.0; 20], boot).unwrap(), 0.0);
        assert!(resample_error(&[1.0; 5], ResampleMethod::Jackknife).is_err());
        assert!(resample_error(&[1.0; 20], ResampleMethod::Bootstrap { n_boot: 10, seed: 1 }).is_err());

        let mut rng = crate::rng::loop_stream(7, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| crate::rng::half_normal_variance(&mut rng)).collect();
        let s = sem(&xs).unwrap();
        let jk = resample_error(&xs, ResampleMethod::Jackknife).unwrap();
        let bs = resample_error(&xs, boot).unwrap();
        assert!((jk / s - 1.0).abs() < 0.1);
        assert!((bs / s - 1.0).abs() < 0.15);
    }

    #[test]
    fn parity_projection() {
        let spec = EnsembleSpec::new(Algorithm::Vloop, 100, 32, 1, 2).unwrap();
        let zero = estimate_parity_projected(&HO, &[0.0], &[1.0], 2.0, 1.0, &spec, PW).unwrap();
        assert_eq!(zero.value, 0.0);
        let free = estimate_parity_projected(&PotentialSpec::Free, &[1.0], &[2.0], 1.5, 1.0, &spec, PW).unwrap();
        let expected = 0.5 * (kernel_free(&[1.0], &[2.0], 1.5, 1.0).unwrap() - kernel_free(&[-1.0], &[2.0], 1.5, 1.0).unwrap());
        assert!((free.value - expected).abs() < 1e-15);
        let co = PotentialSpec::Coulomb { alpha: 1.0 };
        assert!(estimate_parity_projected(&co, &[1.0], &[2.0], 1.0, 1.0, &spec, PW).is_err());
    }

    #[test]
    fn histograms() {
        let spec = EnsembleSpec::new(Algorithm::Vloop, 40, 16, 1, 2).unwrap();
        let h = v_histogram(&PotentialSpec::Free, &[0.0], &[0.0], 1.0, 1.0, &spec, PW, 10).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let occupied = h.counts.iter().position(|&c| c > 0).unwrap();
        assert!(h.edges[occupied] <= 0.0 && 0.0 <= h.edges[occupied + 1]);

        let hw = w_histogram(&HO, &[0.0], &[0.0], 2.0, 1.0, &spec, PW, 7).unwrap();
        let est = estimate_kernel(&HO, &[0.0], &[0.0], 2.0, 1.0, &spec, PW).unwrap();
        assert_eq!(hw.sample_mean, est.mean_w);
        assert_eq!(hw.counts.iter().sum::<u64>(), 40);
        let integral: f64 = hw.density().iter().enumerate().map(|(b, d)| d * hw.width(b)).sum();
        assert!((integral - 1.0).abs() < 1e-12);
        assert!(Histogram::from_samples(&[1.0], 1).is_err());
    }
}
