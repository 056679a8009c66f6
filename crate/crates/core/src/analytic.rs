//! Closed-form and semi-analytic reference solutions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::factorial::ln_factorial;

use crate::error::{invalid, Error, Result};
use crate::loopgen::check_endpoints;
use crate::potentials::PotentialSpec;

/// Terms of the path-averaged-potential series kept by default.
pub const DEFAULT_N_MAX: u32 = 50;

/// Series values below this fraction of `Σ|term|` are cancellation noise.
pub const SERIES_NOISE: f64 = 64.0 * f64::EPSILON;

/// Relative tolerance of the delta-well continuum integral.
pub const DELTA_QUAD_RTOL: f64 = 1e-8;

fn check_tm(t: f64, m: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("t must be positive, got {t}")));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid(format!("m must be positive, got {m}")));
    }
    Ok(())
}

fn dist_sq(y: &[f64], x: &[f64]) -> f64 {
    y.iter().zip(x).map(|(a, b)| (b - a) * (b - a)).sum()
}

/// `ln sinh(z)` for `z > 0` without overflow.
fn ln_sinh(z: f64) -> f64 {
    z + (-(-2.0 * z).exp_m1()).ln() - std::f64::consts::LN_2
}

/// `ln K₀`, `K₀ = (m/2πt)^{d/2} e^{-m(x-y)²/2t}` with `d = y.len()`.
pub fn ln_kernel_free(y: &[f64], x: &[f64], t: f64, m: f64) -> Result<f64> {
    check_tm(t, m)?;
    check_endpoints(y.len(), y, x)?;
    let d = y.len() as f64;
    Ok(0.5 * d * (m / (2.0 * PI * t)).ln() - m * dist_sq(y, x) / (2.0 * t))
}

pub fn kernel_free(y: &[f64], x: &[f64], t: f64, m: f64) -> Result<f64> {
    ln_kernel_free(y, x, t, m).map(f64::exp)
}

/// `ln` of the harmonic-oscillator kernel, stable for large `ωt`.
pub fn ln_kernel_ho(y: &[f64], x: &[f64], t: f64, m: f64, omega: f64) -> Result<f64> {
    check_tm(t, m)?;
    check_endpoints(y.len(), y, x)?;
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(invalid(format!("omega must be positive, got {omega}")));
    }
    let d = y.len() as f64;
    let z = omega * t;
    let ln_sh = ln_sinh(z);
    let coth = 1.0 / z.tanh();
    let csch = (-ln_sh).exp();
    let yy: f64 = y.iter().map(|c| c * c).sum();
    let xx: f64 = x.iter().map(|c| c * c).sum();
    let yx: f64 = y.iter().zip(x).map(|(a, b)| a * b).sum();
    let expo = -0.5 * m * omega * ((yy + xx) * coth - 2.0 * yx * csch);
    Ok(0.5 * d * ((m * omega / (2.0 * PI)).ln() - ln_sh) + expo)
}

pub fn kernel_ho(y: &[f64], x: &[f64], t: f64, m: f64, omega: f64) -> Result<f64> {
    ln_kernel_ho(y, x, t, m, omega).map(f64::exp)
}

/// `(n + d/2) ω`
pub fn energy_ho(n: u32, d: usize, omega: f64) -> f64 {
    (n as f64 + 0.5 * d as f64) * omega
}

/// `-(a²/2m)(ν - n)²`, `n < ν`.
pub fn energy_pt(n: u32, nu: u32, a: f64, m: f64) -> Result<f64> {
    if n >= nu {
        return Err(Error::LevelOutOfRange(n));
    }
    let k = (nu - n) as f64;
    Ok(-(a * a) / (2.0 * m) * k * k)
}

/// `-m g² / 2`, the single bound state of the attractive delta well.
pub fn energy_delta(m: f64, g: f64) -> f64 {
    -0.5 * m * g * g
}

/// `-m α² / 2n²`, `n ≥ 1`.
pub fn energy_coulomb(n: u32, m: f64, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::LevelOutOfRange(n));
    }
    Ok(-m * alpha * alpha / (2.0 * (n as f64).powi(2)))
}

/// `P_ν^{-μ}(z)` for `1 ≤ μ ≤ ν ≤ 2`.
pub fn assoc_legendre_neg(nu: u32, mu: u32, z: f64) -> Result<f64> {
    let s = (1.0 - z * z).max(0.0);
    match (nu, mu) {
        (1, 1) => Ok(0.5 * s.sqrt()),
        (2, 1) => Ok(0.5 * z * s.sqrt()),
        (2, 2) => Ok(s / 8.0),
        _ => Err(Error::Unsupported(format!("associated Legendre P_{nu}^-{mu}"))),
    }
}

/// Normalized bound state `ψ_n` of the Pöschl-Teller well, `ν ≤ 2`.
pub fn pt_bound_state(n: u32, nu: u32, a: f64, x: f64) -> Result<f64> {
    if !(1..=2).contains(&nu) {
        return Err(Error::Unsupported(format!("poschl_teller nu = {nu}")));
    }
    if n >= nu {
        return Err(Error::LevelOutOfRange(n));
    }
    let mu = nu - n;
    let norm = a * mu as f64 * (ln_factorial((2 * nu - n) as u64) - ln_factorial(n as u64)).exp();
    Ok(norm.sqrt() * assoc_legendre_neg(nu, mu, (a * x).tanh())?)
}

/// Large-`t` Pöschl-Teller kernel: bound-state sum plus the free kernel.
pub fn kernel_pt_asymptotic(y: f64, x: f64, t: f64, m: f64, a: f64, nu: u32) -> Result<f64> {
    check_tm(t, m)?;
    if !(1..=2).contains(&nu) {
        return Err(Error::Unsupported(format!("poschl_teller nu = {nu}")));
    }
    let mut k = kernel_free(&[y], &[x], t, m)?;
    for n in 0..nu {
        let e = energy_pt(n, nu, a, m)?;
        k += (-e * t).exp() * pt_bound_state(n, nu, a, y)? * pt_bound_state(n, nu, a, x)?;
    }
    Ok(k)
}

/// Attractive delta-well kernel: exact bound-state term plus the continuum
/// integral over `k ∈ [0, ∞)` by double-exponential quadrature.
pub fn kernel_delta(y: f64, x: f64, t: f64, m: f64, g: f64) -> Result<f64> {
    check_tm(t, m)?;
    if !(g >= 0.0 && g.is_finite()) {
        return Err(invalid(format!("g must be non-negative, got {g}")));
    }
    let s = x.abs() + y.abs();
    let bound = m * g * (0.5 * m * g * g * t - m * g * s).exp();
    let a = t / (2.0 * m);
    // e^{-a k²} < 1e-19 beyond this
    let k_max = (44.0 / a).sqrt();
    let dx = x - y;
    let integrand = |k: f64| {
        let km = k / m;
        let refl = if g > 0.0 {
            (g * g * (k * s).cos() + g * km * (k * s).sin()) / (g * g + km * km)
        } else {
            0.0
        };
        (-a * k * k).exp() * ((k * dx).cos() - refl)
    };
    let scale = bound + (m / (2.0 * PI * t)).sqrt();
    let target = DELTA_QUAD_RTOL * scale * PI;
    let out = quadrature::integrate(integrand, 0.0, k_max, 0.1 * target);
    if !(out.error_estimate <= target) || !out.integral.is_finite() {
        return Err(Error::QuadratureNonConvergence(out.error_estimate / (PI * scale)));
    }
    Ok(bound + out.integral / PI)
}

/// `K_ν(x)` for real `ν ≥ 0`, `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    puruspe::Inu_Knu(nu, x).1
}

/// Truncated series for the density of `v = ∫₀ᵗ V dt'` over harmonic
/// bridge paths from the origin back to the origin.
pub fn pv_ho_series(v: f64, t: f64, omega: f64, n_max: u32) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let wt = omega * t;
    let ln_pref = 64f64.ln() + 0.5 * (wt / (2.0 * PI * PI)).ln();
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    for n in (0..=n_max).step_by(2) {
        let h = n as f64 + 0.5;
        let vn = (h * wt).powi(2) / (8.0 * v);
        if vn > 690.0 {
            break;
        }
        let ln_coef = ln_pref + ln_factorial(n as u64)
            - h * std::f64::consts::LN_2
            - 2.0 * ln_factorial(n as u64 / 2)
            - 2.5 * (h * wt).ln();
        // Re K_ν at negative argument: cos(πν) K_ν(|x|)
        let re = FRAC_1_SQRT_2 * ((vn - 0.75) * bessel_k(0.25, vn) + vn * bessel_k(1.25, vn));
        let term = (ln_coef + 1.5 * vn.ln() - vn).exp() * re;
        sum += term;
        abs_sum += term.abs();
    }
    // Far beyond the bulk the terms cancel to rounding level.
    if sum.abs() <= SERIES_NOISE * abs_sum {
        0.0
    } else {
        sum
    }
}

/// The series density at fixed `(ω, t, n_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvDensity {
    pub omega: f64,
    pub t: f64,
    pub n_max: u32,
}

impl PvDensity {
    pub fn new(omega: f64, t: f64) -> Self {
        PvDensity {
            omega,
            t,
            n_max: DEFAULT_N_MAX,
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        pv_ho_series(v, self.t, self.omega, self.n_max)
    }

    /// Probability mass in `[lo, hi]`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        quadrature::integrate(|v| self.eval(v), lo.max(0.0), hi.max(0.0), 1e-12).integral
    }
}

/// `P(v; t) = t⁻² P(v/t²; 1)`.
pub fn pv_scale(v: f64, t: f64, density_at_t1: impl Fn(f64) -> f64) -> f64 {
    density_at_t1(v / (t * t)) / (t * t)
}

/// Prefactor `A` of the small-`v` form `A v⁻² e^{-ω²t²/16v}`.
fn tail_prefactor(t: f64, omega: f64) -> f64 {
    let wt = omega * t;
    wt * wt / (4.0 * (2.0 * PI).sqrt())
}

/// Small-`v` asymptotic form `((ωt)² / 4√(2π)) v⁻² e^{-ω²t²/16v}`, the
/// leading saddle-point behaviour of the inverse Laplace transform of
/// `sqrt(ωt√s / sinh(ωt√s))`.
pub fn pv_tail_ho(v: f64, t: f64, omega: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let wt = omega * t;
    tail_prefactor(t, omega) / (v * v) * (-wt * wt / (16.0 * v)).exp()
}

/// `-ln P + ln A - 2 ln v`, equal to `ω²t²/16v` in the asymptotic regime.
pub fn tail_diagnostic(v: f64, density: f64, t: f64, omega: f64) -> f64 {
    -density.ln() + tail_prefactor(t, omega).ln() - 2.0 * v.ln()
}

/// `P_W(W) = P_v(-ln W) / W`.
pub fn w_density_from_v(density_v: impl Fn(f64) -> f64, w: f64) -> Result<f64> {
    if !(w > 0.0) {
        return Err(invalid(format!("W must be positive, got {w}")));
    }
    Ok(density_v(-w.ln()) / w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Exact,
    /// Bound states plus the free kernel; accurate once excited continuum
    /// contributions have decayed.
    LargeT,
}

/// A reference kernel for comparison with Monte Carlo estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKernel {
    Free { mass: f64, dim: usize },
    Harmonic { mass: f64, omega: f64, dim: usize },
    PoschlTeller { mass: f64, a: f64, nu: u32 },
    Delta { mass: f64, g: f64 },
}

impl ReferenceKernel {
    /// The reference for a particle of mass `mass` in `potential`, if one exists.
    ///
    /// A harmonic potential written with a different mass is absorbed into an
    /// effective frequency. The Pöschl-Teller reference needs matching masses.
    pub fn for_potential(potential: &PotentialSpec, mass: f64, dim: usize) -> Option<Self> {
        match *potential {
            PotentialSpec::Free => Some(ReferenceKernel::Free { mass, dim }),
            PotentialSpec::Harmonic { mass: mv, omega } => Some(ReferenceKernel::Harmonic {
                mass,
                omega: omega * (mv / mass).sqrt(),
                dim,
            }),
            PotentialSpec::PoschlTeller { a, nu, mass: mv } if dim == 1 && mv == mass && nu <= 2 => {
                Some(ReferenceKernel::PoschlTeller { mass, a, nu })
            }
            PotentialSpec::DeltaWell { g } if dim == 1 => Some(ReferenceKernel::Delta { mass, g }),
            _ => None,
        }
    }

    pub fn validity(&self) -> Validity {
        match self {
            ReferenceKernel::PoschlTeller { .. } => Validity::LargeT,
            _ => Validity::Exact,
        }
    }

    pub fn ln_eval(&self, y: &[f64], x: &[f64], t: f64) -> Result<f64> {
        match *self {
            ReferenceKernel::Free { mass, dim } => {
                check_endpoints(dim, y, x)?;
                ln_kernel_free(y, x, t, mass)
            }
            ReferenceKernel::Harmonic { mass, omega, dim } => {
                check_endpoints(dim, y, x)?;
                ln_kernel_ho(y, x, t, mass, omega)
            }
            ReferenceKernel::PoschlTeller { mass, a, nu } => {
                check_endpoints(1, y, x)?;
                Ok(kernel_pt_asymptotic(y[0], x[0], t, mass, a, nu)?.ln())
            }
            ReferenceKernel::Delta { mass, g } => {
                check_endpoints(1, y, x)?;
                Ok(kernel_delta(y[0], x[0], t, mass, g)?.ln())
            }
        }
    }

    pub fn eval(&self, y: &[f64], x: &[f64], t: f64) -> Result<f64> {
        self.ln_eval(y, x, t).map(f64::exp)
    }

    /// The ground-state energy the large-`t` slope of `-ln K` should approach.
    pub fn ground_energy(&self) -> f64 {
        match *self {
            ReferenceKernel::Free { .. } => 0.0,
            ReferenceKernel::Harmonic { omega, dim, .. } => energy_ho(0, dim, omega),
            ReferenceKernel::PoschlTeller { mass, a, nu } => -(a * a) / (2.0 * mass) * (nu as f64).powi(2),
            ReferenceKernel::Delta { mass, g } => energy_delta(mass, g),
        }
    }
}
