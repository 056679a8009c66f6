//! The subcommands, each producing a [`CsvDoc`] and filling a [`RunManifest`].

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use worldline_core::analysis::{
    band_coverage, chi_square_gof, chi_square_gof_shape, chi_square_gof_weighted, classical_params, classical_solution_ho, detect_skyscrapers,
    detect_window, dominant_trajectory, fit_energy, first_excited_energy, weighted_average_trajectory, GofResult,
    WeightedHistogram,
};
use worldline_core::analytic::{
    energy_coulomb, energy_ho, energy_pt, ln_kernel_free, ln_kernel_ho, tail_diagnostic, PvDensity, ReferenceKernel,
};
use worldline_core::estimator::{
    estimate_kernel_multi, estimate_parity_projected, sample_line_integrals, LineSamples,
};
use worldline_core::loopgen::LoopSource;
use worldline_core::rng::derive_seed;
use worldline_core::{
    EnergyFit, Histogram, KernelEstimate, KernelSeries, LineIntegralMethod, Orientation, PotentialSpec, SeriesRow,
    TrajectoryReport,
};

use crate::config::Resolved;
use crate::output::{opt_real, real, reals, CsvDoc, RunManifest};

pub const TOOL: &str = "worldline";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn base_doc(r: &Resolved, command: &str, header: &[&str]) -> CsvDoc {
    let mut doc = CsvDoc::new(header);
    doc.meta("tool", format!("{TOOL} {VERSION}"));
    doc.meta("command", command);
    doc.meta("config_sha256", &r.hash);
    doc.meta("seed", r.seed);
    doc.meta("potential", r.potential);
    doc.meta("mass", real(r.mass));
    doc.meta("method", r.method);
    doc.meta("algorithm", r.ensemble.algorithm);
    doc.meta("n_loops", r.ensemble.n_loops);
    doc.meta("n_points", r.ensemble.n_points);
    doc.meta("dim", r.ensemble.dim);
    doc.meta("y", reals(&r.y));
    doc.meta("x", reals(&r.x));
    doc
}

fn reference(r: &Resolved) -> Option<ReferenceKernel> {
    ReferenceKernel::for_potential(&r.potential, r.mass, r.ensemble.dim)
}

/// A kernel scan over the configured `t` grid.
#[derive(Debug, Clone)]
pub struct Scan {
    pub estimates: Vec<KernelEstimate>,
    pub ln_analytic: Vec<Option<f64>>,
    pub series: KernelSeries,
    pub skyscrapers: Vec<usize>,
}

/// `½[K(x, y) - K(x, -y)]` from the reference, when positive.
fn ln_projected_reference(reference: &ReferenceKernel, y: &[f64], x: &[f64], t: f64) -> Result<Option<f64>> {
    let neg: Vec<f64> = y.iter().map(|c| -c).collect();
    let a = reference.ln_eval(y, x, t)?;
    let b = reference.ln_eval(&neg, x, t)?;
    if b >= a {
        return Ok(None);
    }
    Ok(Some(a + (-(b - a).exp()).ln_1p() - std::f64::consts::LN_2))
}

pub fn run_scan(r: &Resolved, manifest: &mut RunManifest) -> Result<Scan> {
    let grid = r.config.t_grid()?;
    let parity = r.config.scan.parity;
    ensure!(!(parity && r.n_ensembles > 1), "parity projection takes a single ensemble per t");
    let reference = reference(r);
    let mut estimates = Vec::with_capacity(grid.len());
    let mut ln_analytic = Vec::with_capacity(grid.len());
    for (i, &t) in grid.iter().enumerate() {
        let seed = derive_seed(r.seed, if r.config.scan.shared_ensemble { 0 } else { i as u64 });
        manifest.seed(format!("t={t}"), seed);
        let est = manifest.time(format!("t={t}"), || -> Result<KernelEstimate> {
            if r.n_ensembles > 1 {
                return Ok(estimate_kernel_multi(
                    &r.potential,
                    &r.y,
                    &r.x,
                    t,
                    r.mass,
                    &r.ensemble,
                    r.n_ensembles,
                    seed,
                    r.method,
                )?);
            }
            let spec = r.ensemble.spec(seed)?;
            Ok(if parity {
                estimate_parity_projected(&r.potential, &r.y, &r.x, t, r.mass, &spec, r.method)?
            } else {
                worldline_core::estimate_kernel(&r.potential, &r.y, &r.x, t, r.mass, &spec, r.method)?
            })
        })?;
        if est.n_singular_events > 0 {
            manifest.warn(format!("t={t}: {} degenerate segments", est.n_singular_events));
        }
        let analytic = match &reference {
            Some(k) if parity => ln_projected_reference(k, &r.y, &r.x, t)?,
            Some(k) => Some(k.ln_eval(&r.y, &r.x, t)?),
            None => None,
        };
        estimates.push(est);
        ln_analytic.push(analytic);
    }
    let rows = estimates
        .iter()
        .zip(&ln_analytic)
        .map(|(e, a)| SeriesRow {
            t: e.t,
            ln_value: e.ln_value,
            sem_ln: e.sem_ln,
            ln_analytic: *a,
        })
        .collect();
    let series = KernelSeries::new(rows)?;
    let skyscrapers = detect_skyscrapers(&series);
    for &i in &skyscrapers {
        manifest.warn(format!("skyscraper at t={}", series.rows()[i].t));
    }
    Ok(Scan {
        estimates,
        ln_analytic,
        series,
        skyscrapers,
    })
}

pub const SCAN_HEADER: [&str; 6] = ["t", "ln_K_mc", "sem_ln", "mean_W", "ln_K_analytic", "n_singular_events"];

pub fn scan_doc(r: &Resolved, scan: &Scan) -> CsvDoc {
    let mut doc = base_doc(r, "kernel-scan", &SCAN_HEADER);
    doc.meta("n_ensembles", r.n_ensembles);
    doc.meta("parity", r.config.scan.parity);
    let sky: Vec<String> = scan.skyscrapers.iter().map(|&i| real(scan.series.rows()[i].t)).collect();
    doc.meta("skyscrapers", sky.join(" "));
    for (e, a) in scan.estimates.iter().zip(&scan.ln_analytic) {
        doc.row(vec![
            real(e.t),
            real(e.ln_value),
            real(e.sem_ln),
            real(e.mean_w),
            opt_real(*a),
            e.n_singular_events.to_string(),
        ]);
    }
    doc
}

pub fn kernel_scan(r: &Resolved, manifest: &mut RunManifest) -> Result<CsvDoc> {
    let scan = run_scan(r, manifest)?;
    Ok(scan_doc(r, &scan))
}

/// Read the `t, ln_K_mc, sem_ln[, ln_K_analytic]` columns of a scan CSV.
pub fn read_scan(path: &Path) -> Result<KernelSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ct), Some(cl), Some(cs)) = (col("t"), col("ln_K_mc"), col("sem_ln")) else {
        bail!("{} lacks t, ln_K_mc or sem_ln columns", path.display());
    };
    let ca = col("ln_K_analytic");
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> { rec[c].trim().parse::<f64>().with_context(|| format!("bad number '{}'", &rec[c])) };
        let ln_analytic = match ca {
            Some(c) if !rec[c].trim().is_empty() => Some(num(c)?),
            _ => None,
        };
        rows.push(SeriesRow {
            t: num(ct)?,
            ln_value: num(cl)?,
            sem_ln: num(cs)?,
            ln_analytic,
        });
    }
    Ok(KernelSeries::new(rows)?)
}

/// The exact ground (or, with parity, first excited) energy when known.
pub fn exact_energy(r: &Resolved) -> Option<f64> {
    let dim = r.ensemble.dim;
    let reference = reference(r);
    if r.config.scan.parity {
        return match reference {
            Some(ReferenceKernel::Harmonic { omega, dim, .. }) => Some(energy_ho(1, dim, omega)),
            _ => None,
        };
    }
    match r.potential {
        PotentialSpec::PoschlTeller { a, nu, mass } if mass == r.mass => energy_pt(0, nu, a, mass).ok(),
        PotentialSpec::Coulomb { alpha } if dim == 3 => energy_coulomb(1, r.mass, alpha).ok(),
        _ => reference.map(|k| k.ground_energy()),
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub fit: EnergyFit,
    pub auto_window: bool,
    pub exact: Option<f64>,
}

pub fn run_fit(r: &Resolved, series: &KernelSeries) -> Result<FitReport> {
    let (window, auto_window) = match r.config.fit.window {
        Some([lo, hi]) => ((lo, hi), false),
        None => (detect_window(series, r.config.fit.min_points, r.config.fit.threshold)?, true),
    };
    let exact = exact_energy(r);
    let fit = if r.config.scan.parity {
        first_excited_energy(series, window)?
    } else {
        let orientation = match exact {
            Some(e) if e < 0.0 => Orientation::BoundAbove,
            Some(_) => Orientation::BoundBelow,
            None => {
                let probe = fit_energy(series, window, Orientation::BoundBelow)?;
                if probe.energy < 0.0 {
                    Orientation::BoundAbove
                } else {
                    Orientation::BoundBelow
                }
            }
        };
        fit_energy(series, window, orientation)?
    };
    Ok(FitReport {
        fit,
        auto_window,
        exact,
    })
}

pub const FIT_HEADER: [&str; 12] = [
    "window_lo",
    "window_hi",
    "window_source",
    "energy",
    "uncertainty",
    "intercept",
    "residual_rms",
    "n_points",
    "weighted",
    "spectral",
    "exact_energy",
    "deviation",
];

pub fn energy_fit(r: &Resolved, manifest: &mut RunManifest) -> Result<CsvDoc> {
    let series = match &r.config.fit.scan {
        Some(path) => read_scan(path)?,
        None => run_scan(r, manifest)?.series,
    };
    let rep = run_fit(r, &series)?;
    let f = &rep.fit;
    let mut doc = base_doc(r, "energy-fit", &FIT_HEADER);
    doc.meta("parity", r.config.scan.parity);
    doc.meta(
        "orientation",
        match f.orientation {
            Orientation::BoundBelow => "bound_below",
            Orientation::BoundAbove => "bound_above",
        },
    );
    if !f.spectral {
        manifest.warn("ln K is closer to a power law in t than to a line; the fit is not spectral");
    }
    doc.row(vec![
        real(f.window.0),
        real(f.window.1),
        if rep.auto_window { "auto" } else { "explicit" }.to_string(),
        real(f.energy),
        real(f.uncertainty),
        real(f.intercept),
        real(f.residual_rms),
        f.n_points.to_string(),
        f.weighted.to_string(),
        f.spectral.to_string(),
        opt_real(rep.exact),
        opt_real(rep.exact.map(|e| f.energy - e)),
    ]);
    Ok(doc)
}

/// Histogram data for one `t`.
#[derive(Debug, Clone)]
pub struct PvHist {
    pub t: f64,
    pub samples: LineSamples,
    /// `None` when every sample coincides.
    pub hist: Option<Histogram>,
    pub gof: Option<GofResult>,
    pub integrand: Option<WeightedHistogram>,
    pub integrand_gof: Option<GofResult>,
    pub integrand_weighted_gof: Option<GofResult>,
}

fn pv_t(r: &Resolved) -> Result<f64> {
    match (r.config.histogram.t, r.config.t_grid()) {
        (Some(t), _) => Ok(t),
        (None, Ok(g)) if g.len() == 1 => Ok(g[0]),
        _ => bail!("pv-hist needs [histogram] t or a single-valued t grid"),
    }
}

/// The series density for `v = ∫ V dt'` when it applies: harmonic, `d = 1`, `y = x = 0`.
fn pv_reference(r: &Resolved, t: f64) -> Option<(PvDensity, f64)> {
    match reference(r) {
        Some(ReferenceKernel::Harmonic { omega, dim: 1, .. }) if r.y == [0.0] && r.x == [0.0] => {
            Some((PvDensity::new(omega, t), omega))
        }
        _ => None,
    }
}

pub fn run_pv(r: &Resolved, manifest: &mut RunManifest) -> Result<PvHist> {
    let t = pv_t(r)?;
    ensure!(t > 0.0, "t must be positive");
    let seed = derive_seed(r.seed, 0);
    manifest.seed(format!("t={t}"), seed);
    let spec = r.ensemble.spec(seed)?;
    let samples = manifest.time("samples", || sample_line_integrals(&r.potential, &r.y, &r.x, t, r.mass, &spec, r.method))?;
    let tv: Vec<f64> = samples.v.iter().map(|v| t * v).collect();
    let distinct = tv.iter().any(|&v| v != tv[0]);
    if !distinct {
        return Ok(PvHist {
            t,
            samples,
            hist: None,
            gof: None,
            integrand: None,
            integrand_gof: None,
            integrand_weighted_gof: None,
        });
    }
    let n_bins = r.config.histogram.n_bins;
    let hist = Histogram::from_samples(&tv, n_bins)?;
    let ln_w: Vec<f64> = tv.iter().map(|v| -v).collect();
    let integrand = WeightedHistogram::from_log_weights(&tv, &ln_w, n_bins)?;
    let (mut gof, mut integrand_gof, mut integrand_weighted_gof) = (None, None, None);
    if let Some((pv, omega)) = pv_reference(r, t) {
        let upper = (8.0 * (omega * t).powi(2)).max(*hist.edges.last().unwrap());
        gof = Some(chi_square_gof(&hist, |v| pv.eval(v), (0.0, upper))?);
        let integrand_density = |v: f64| pv.eval(v) * (-v).exp();
        integrand_gof = Some(chi_square_gof_shape(&integrand, integrand_density, (0.0, upper))?);
        integrand_weighted_gof = match chi_square_gof_weighted(&integrand, integrand_density, (0.0, upper)) {
            Ok(g) => Some(g),
            Err(e) => {
                manifest.warn(format!("weighted integrand chi-square unavailable: {e}"));
                None
            }
        };
    }
    Ok(PvHist {
        t,
        samples,
        hist: Some(hist),
        gof,
        integrand: Some(integrand),
        integrand_gof,
        integrand_weighted_gof,
    })
}

pub fn pv_hist(r: &Resolved, manifest: &mut RunManifest) -> Result<CsvDoc> {
    let pv = run_pv(r, manifest)?;
    let t = pv.t;
    let reference = pv_reference(r, t);
    let paired = r.potential.is_singular() && r.method != LineIntegralMethod::Pointwise && r.method.check(&r.potential, r.ensemble.dim).is_ok()
        && LineIntegralMethod::Pointwise.check(&r.potential, r.ensemble.dim).is_ok();
    let tail = r.config.histogram.tail && reference.is_some();
    let mut header = vec!["v_center", "density_mc", "density_analytic", "integrand_mc", "integrand_analytic"];
    if paired {
        header.push("density_pointwise");
    }
    if tail {
        header.push("tail_diagnostic");
    }
    let mut doc = base_doc(r, "pv-hist", &header);
    doc.meta("t", real(t));
    doc.meta("n_bins", r.config.histogram.n_bins);
    let Some(hist) = &pv.hist else {
        // a single point mass: one unit-width bin
        doc.meta("chi2_p_value", "");
        let mut row = vec![real(t * pv.samples.v[0]), real(1.0), String::new(), real(1.0), String::new()];
        if paired {
            row.push(String::new());
        }
        if tail {
            row.push(String::new());
        }
        doc.row(row);
        return Ok(doc);
    };
    let gof_meta = |doc: &mut CsvDoc, prefix: &str, g: Option<GofResult>| {
        doc.meta(&format!("{prefix}chi2_p_value"), opt_real(g.map(|g| g.p_value)));
        doc.meta(&format!("{prefix}chi2_statistic"), opt_real(g.map(|g| g.statistic)));
        doc.meta(&format!("{prefix}chi2_dof"), g.map(|g| g.dof.to_string()).unwrap_or_default());
    };
    gof_meta(&mut doc, "", pv.gof);
    gof_meta(&mut doc, "integrand_", pv.integrand_gof);
    gof_meta(&mut doc, "integrand_weighted_", pv.integrand_weighted_gof);
    let integrand = pv.integrand.as_ref().expect("integrand accompanies the histogram");
    doc.meta("integrand_n_eff", real(integrand.effective_count()));
    let centers = hist.centers();
    let density = hist.density();
    let integrand_density = integrand.density();
    let z = match &reference {
        Some((_, omega)) => {
            let ln_k = ln_kernel_ho(&[0.0], &[0.0], t, r.mass, *omega)?;
            Some((ln_k - ln_kernel_free(&[0.0], &[0.0], t, r.mass)?).exp())
        }
        None => None,
    };
    let pointwise = if paired {
        let spec = r.ensemble.spec(derive_seed(r.seed, 0))?;
        let s = sample_line_integrals(&r.potential, &r.y, &r.x, t, r.mass, &spec, LineIntegralMethod::Pointwise)?;
        let tv: Vec<f64> = s.v.iter().map(|v| t * v).collect();
        let h = Histogram::with_range(&tv, hist.edges[0], *hist.edges.last().unwrap(), hist.n_bins())?;
        let outside = h.n_samples - h.counts.iter().sum::<u64>();
        doc.meta("pointwise_outside_range", outside);
        Some(h.density())
    } else {
        None
    };
    for b in 0..hist.n_bins() {
        let v = centers[b];
        let analytic = reference.as_ref().map(|(pv, _)| pv.eval(v));
        let mut row = vec![
            real(v),
            real(density[b]),
            opt_real(analytic),
            real(integrand_density[b]),
            opt_real(analytic.zip(z).map(|(p, z)| p * (-v).exp() / z)),
        ];
        if let Some(d) = &pointwise {
            row.push(real(d[b]));
        }
        if tail {
            let (_, omega) = reference.as_ref().expect("tail needs the reference");
            row.push(real(tail_diagnostic(v, density[b], t, *omega)));
        }
        doc.row(row);
    }
    Ok(doc)
}

#[derive(Debug, Clone)]
pub struct ClassicalRun {
    pub t: f64,
    pub reports: Vec<TrajectoryReport>,
    pub average: TrajectoryReport,
    /// The input with the largest weight.
    pub dominant: usize,
    pub classical: Vec<f64>,
    pub coverage: f64,
}

pub fn run_classical(r: &Resolved, manifest: &mut RunManifest) -> Result<ClassicalRun> {
    let PotentialSpec::Harmonic { .. } = r.potential else {
        bail!(worldline_core::Error::Unsupported(format!(
            "classical trajectories need a harmonic potential, got {}",
            r.potential.name()
        )));
    };
    ensure!(r.ensemble.dim == 1, "classical trajectories need d = 1");
    let Some(ReferenceKernel::Harmonic { omega, .. }) = reference(r) else {
        bail!("no harmonic reference");
    };
    let t = match (r.config.classical.t, r.config.t_grid()) {
        (Some(t), _) => t,
        (None, Ok(g)) if g.len() == 1 => g[0],
        _ => bail!("classical needs [classical] t or a single-valued t grid"),
    };
    let n_sim = r.config.classical.n_simulations;
    let mut reports = Vec::with_capacity(n_sim);
    for s in 0..n_sim {
        let seed = derive_seed(r.seed, s as u64);
        manifest.seed(format!("simulation={s}"), seed);
        let spec = r.ensemble.spec(seed)?;
        let rep = manifest.time(format!("simulation={s}"), || -> Result<TrajectoryReport> {
            let samples = sample_line_integrals(&r.potential, &r.y, &r.x, t, r.mass, &spec, r.method)?;
            Ok(dominant_trajectory(&spec, &samples, &r.y, &r.x, r.mass)?)
        })?;
        reports.push(rep);
    }
    let average = weighted_average_trajectory(&reports)?;
    let dominant = (0..n_sim).fold(0, |b, i| if reports[i].ln_weight > reports[b].ln_weight { i } else { b });
    let (y, x) = (r.y[0], r.x[0]);
    let classical = average
        .tau
        .iter()
        .map(|&tau| classical_solution_ho(omega, t, y, x, tau.min(t)))
        .collect::<worldline_core::Result<Vec<f64>>>()?;
    let coverage = band_coverage(&average, |tau| classical_solution_ho(omega, t, y, x, tau.min(t)).unwrap_or(f64::NAN), 3.0)?;
    Ok(ClassicalRun {
        t,
        reports,
        average,
        dominant,
        classical,
        coverage,
    })
}

pub fn classical(r: &Resolved, manifest: &mut RunManifest) -> Result<CsvDoc> {
    let run = run_classical(r, manifest)?;
    let (lambda, mu) = classical_params(r.mass, run.t, r.y[0], r.x[0])?;
    let mut doc = base_doc(
        r,
        "classical",
        &["tau", "dominant", "weighted_average", "std_err", "classical"],
    );
    doc.meta("t", real(run.t));
    doc.meta("n_simulations", run.reports.len());
    doc.meta("lambda", real(lambda));
    doc.meta("mu", real(mu));
    let dom = &run.reports[run.dominant];
    doc.meta("dominant_simulation", run.dominant);
    doc.meta("dominant_weight_share", real(dom.weight_share));
    doc.meta("mean_weight_share", real(run.average.weight_share));
    doc.meta("coverage_3se", real(run.coverage));
    let se = run.average.std_err.as_ref().expect("averages carry errors");
    for i in 0..run.average.tau.len() {
        doc.row(vec![
            real(run.average.tau[i]),
            real(dom.positions[i]),
            real(run.average.positions[i]),
            real(se[i]),
            real(run.classical[i]),
        ]);
    }
    Ok(doc)
}

pub fn generate_loops(r: &Resolved, manifest: &mut RunManifest) -> Result<CsvDoc> {
    let (n_points, dim) = (r.ensemble.n_points, r.ensemble.dim);
    let mut header = vec!["loop".to_string(), "i".to_string(), "u".to_string()];
    header.extend((0..dim).map(|c| format!("q{c}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut doc = base_doc(r, "generate-loops", &header_refs);
    manifest.seed("ensemble", r.seed);
    let spec = r.ensemble.spec(r.seed)?;
    let mut buf = vec![0.0; (n_points + 1) * dim];
    for k in 0..spec.n_loops() {
        spec.fill_loop(k, &mut buf);
        for i in 0..=n_points {
            let mut row = vec![k.to_string(), i.to_string(), real(i as f64 / n_points as f64)];
            row.extend(buf[i * dim..(i + 1) * dim].iter().map(|&q| real(q)));
            doc.row(row);
        }
    }
    Ok(doc)
}
