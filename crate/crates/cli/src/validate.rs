//! Fast invariant checks for `worldline validate`.

use anyhow::{ensure, Result};
use worldline_core::analysis::ks_two_sample;
use worldline_core::analytic::{kernel_free, kernel_ho};
use worldline_core::loopgen::{scale_path, LoopSource};
use worldline_core::potentials::line_integral;
use worldline_core::{estimate_kernel, Algorithm, EnsembleSpec, LineIntegralMethod, PotentialSpec};

pub struct Check {
    pub name: &'static str,
    pub outcome: Result<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn line(&self) -> String {
        match &self.outcome {
            Ok(detail) => format!("PASS {}: {detail}", self.name),
            Err(e) => format!("FAIL {}: {e:#}", self.name),
        }
    }
}

const SEED: u64 = 20_240_611;

/// Per-point variance against `u(1 - u)` and the `(N/4, 3N/4)` covariance.
fn loop_covariance() -> Result<String> {
    let (n_loops, n_points) = (20_000, 32);
    let mut worst = 0.0f64;
    for alg in Algorithm::ALL {
        let spec = EnsembleSpec::new(alg, n_loops, n_points, 1, SEED)?;
        let mut buf = vec![0.0; n_points + 1];
        let mut sq = vec![0.0; n_points + 1];
        let mut q4 = vec![0.0; n_points + 1];
        let mut cross = 0.0;
        let (a, b) = (n_points / 4, 3 * n_points / 4);
        for k in 0..n_loops {
            spec.fill_loop(k, &mut buf);
            for i in 0..=n_points {
                let s = buf[i] * buf[i];
                sq[i] += s;
                q4[i] += s * s;
            }
            cross += buf[a] * buf[b];
        }
        let n = n_loops as f64;
        for i in [a, n_points / 2, b] {
            let u = i as f64 / n_points as f64;
            let var = sq[i] / n;
            let se = ((q4[i] / n - var * var) / n).sqrt();
            let z = (var - u * (1.0 - u)).abs() / se;
            worst = worst.max(z);
            ensure!(z < 5.0, "{alg}: Var(q_{i}) = {var:.5}, expected {:.5}", u * (1.0 - u));
        }
        let (ua, ub) = (a as f64 / n_points as f64, b as f64 / n_points as f64);
        let cov = cross / n;
        let expect = ua * (1.0 - ub);
        ensure!((cov - expect).abs() < 0.01, "{alg}: Cov = {cov:.5}, expected {expect:.5}");
        ensure!(buf[0] == 0.0 && buf[n_points] == 0.0, "{alg}: endpoints not pinned");
    }
    Ok(format!("largest variance deviation {worst:.2} standard errors"))
}

/// Midpoint marginals of the three algorithms agree.
fn algorithm_equivalence() -> Result<String> {
    let (n_loops, n_points) = (5_000, 16);
    let mid = |alg| -> Result<Vec<f64>> {
        let spec = EnsembleSpec::new(alg, n_loops, n_points, 1, SEED + 1)?;
        let mut buf = vec![0.0; n_points + 1];
        Ok((0..n_loops)
            .map(|k| {
                spec.fill_loop(k, &mut buf);
                buf[n_points / 2]
            })
            .collect())
    };
    let v = mid(Algorithm::Vloop)?;
    let y = mid(Algorithm::Yloop)?;
    let l = mid(Algorithm::Lsol)?;
    let mut worst = 1.0f64;
    for (a, b, name) in [(&v, &y, "vloop/yloop"), (&v, &l, "vloop/lsol"), (&y, &l, "yloop/lsol")] {
        let (_, p) = ks_two_sample(a, b)?;
        worst = worst.min(p);
        ensure!(p > 1e-3, "{name}: KS p = {p:.2e}");
    }
    Ok(format!("smallest KS p-value {worst:.3}"))
}

fn free_kernel_exact() -> Result<String> {
    let spec = EnsembleSpec::new(Algorithm::Yloop, 200, 64, 2, SEED)?;
    let (y, x) = ([0.3, -0.1], [1.1, 0.4]);
    let est = estimate_kernel(&PotentialSpec::Free, &y, &x, 2.5, 1.3, &spec, LineIntegralMethod::Pointwise)?;
    let exact = kernel_free(&y, &x, 2.5, 1.3)?;
    ensure!(est.sem == 0.0, "free sem {}", est.sem);
    ensure!((est.value - exact).abs() <= 1e-14 * exact, "free K {} vs {exact}", est.value);
    Ok("zero variance, exact value".into())
}

fn harmonic_kernel() -> Result<String> {
    let spec = EnsembleSpec::new(Algorithm::Vloop, 4_000, 256, 1, SEED)?;
    let ho = PotentialSpec::Harmonic { mass: 1.0, omega: 1.0 };
    let est = estimate_kernel(&ho, &[0.0], &[0.0], 2.0, 1.0, &spec, LineIntegralMethod::Pointwise)?;
    let exact = kernel_ho(&[0.0], &[0.0], 2.0, 1.0, 1.0)?;
    let z = (est.value - exact).abs() / est.sem;
    ensure!(z < 4.0, "K = {} vs {exact} ({z:.1} sem)", est.value);
    Ok(format!("{z:.2} sem from exact"))
}

/// Exact segment averages match fine midpoint quadrature away from the singularity,
/// and attractive Coulomb averages are negative on every loop.
fn smoothing_consistency() -> Result<String> {
    let (n_loops, n_points, dim) = (200, 100, 3);
    let spec = EnsembleSpec::new(Algorithm::Lsol, n_loops, n_points, dim, SEED)?;
    let coulomb = PotentialSpec::Coulomb { alpha: 1.0 };
    let mut unit = vec![0.0; (n_points + 1) * dim];
    let mut path = vec![0.0; unit.len()];
    let mut worst = 0.0f64;
    for k in 0..n_loops {
        spec.fill_loop(k, &mut unit);
        scale_path(&unit, n_points, dim, &[3.0, 0.0, 0.0], &[2.5, 1.0, 0.0], 1.0, 1.0, &mut path);
        let a = line_integral(&coulomb, &path, dim, LineIntegralMethod::SmoothedAnalytic)?.v;
        let b = line_integral(&coulomb, &path, dim, LineIntegralMethod::SmoothedNumeric { n_sub: 64 })?.v;
        worst = worst.max(((a - b) / a).abs());
        scale_path(&unit, n_points, dim, &[0.01, 0.0, 0.0], &[0.01, 0.0, 0.0], 5.0, 1.0, &mut path);
        let near = line_integral(&coulomb, &path, dim, LineIntegralMethod::SmoothedAnalytic)?.v;
        ensure!(near < 0.0, "loop {k}: attractive average {near} is not negative");
    }
    ensure!(worst < 1e-7, "analytic vs numeric relative difference {worst:.2e}");
    Ok(format!("analytic vs numeric {worst:.1e}"))
}

pub fn run_all() -> Vec<Check> {
    vec![
        Check {
            name: "loop covariance",
            outcome: loop_covariance(),
        },
        Check {
            name: "algorithm equivalence",
            outcome: algorithm_equivalence(),
        },
        Check {
            name: "free kernel exactness",
            outcome: free_kernel_exact(),
        },
        Check {
            name: "harmonic kernel",
            outcome: harmonic_kernel(),
        },
        Check {
            name: "smoothing consistency",
            outcome: smoothing_consistency(),
        },
    ]
}
