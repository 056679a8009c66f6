//! Unit loops: discretized Brownian bridges with Dirichlet endpoints.
//!
//! All three generators sample the density
//! `exp(-(N_p/2) Σ (q_i - q_{i-1})^2)` with `q_0 = q_{N_p} = 0`, so the
//! per-dimension covariance is `min(u_i,u_j)(1 - max(u_i,u_j))`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::{half_normal_variance, loop_stream};

/// Loop construction algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Velocity-space diagonalization.
    Vloop,
    /// Position-space diagonalization.
    Yloop,
    /// Linearly shifted open walk.
    Lsol,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Vloop, Algorithm::Yloop, Algorithm::Lsol];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vloop => "vloop",
            Algorithm::Yloop => "yloop",
            Algorithm::Lsol => "lsol",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vloop" => Ok(Algorithm::Vloop),
            "yloop" => Ok(Algorithm::Yloop),
            "lsol" => Ok(Algorithm::Lsol),
            other => Err(invalid(format!("unknown loop algorithm '{other}'"))),
        }
    }
}

/// A closed unit loop stored as `(N_p + 1) * d` contiguous coordinates.
/// Point `i` occupies `coords[i*d .. (i+1)*d]`; points 0 and `N_p` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitLoop {
    n_points: usize,
    dim: usize,
    coords: Vec<f64>,
}

impl UnitLoop {
    /// Wrap raw coordinates, checking the Dirichlet endpoints.
    pub fn from_coords(n_points: usize, dim: usize, coords: Vec<f64>) -> Result<Self> {
        check_shape(n_points, dim)?;
        if coords.len() != (n_points + 1) * dim {
            return Err(invalid(format!(
                "expected {} coordinates, got {}",
                (n_points + 1) * dim,
                coords.len()
            )));
        }
        let ends = coords[..dim].iter().chain(&coords[n_points * dim..]);
        if ends.into_iter().any(|&c| c != 0.0) {
            return Err(invalid("loop endpoints must be exactly zero"));
        }
        Ok(Self { n_points, dim, coords })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// The physical point at index `i` for a path from `y` to `x` in time `t`.
    pub fn path_point(&self, i: usize, y: &[f64], x: &[f64], t: f64, m: f64) -> Result<PathPoint> {
        let position = scale_point(self, i, y, x, t, m)?;
        Ok(PathPoint {
            index: i,
            u: i as f64 / self.n_points as f64,
            position,
        })
    }
}

/// A point of a rescaled physical trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub index: usize,
    pub u: f64,
    pub position: Vec<f64>,
}

fn check_shape(n_points: usize, dim: usize) -> Result<()> {
    if n_points < 1 {
        return Err(invalid("N_p must be at least 1"));
    }
    if dim < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    Ok(())
}

/// Precomputed coefficients for one `(algorithm, N_p)` pair.
#[derive(Debug, Clone)]
pub struct LoopGenerator {
    algorithm: Algorithm,
    n_points: usize,
    dim: usize,
    // Per-index scale of the normal draw and (for vloop/yloop) recursion factor.
    scale: Vec<f64>,
    recur: Vec<f64>,
}

impl LoopGenerator {
    pub fn new(algorithm: Algorithm, n_points: usize, dim: usize) -> Result<Self> {
        check_shape(n_points, dim)?;
        let n = n_points as f64;
        let mut scale = vec![0.0; n_points + 1];
        let mut recur = vec![0.0; n_points + 1];
        match algorithm {
            Algorithm::Vloop => {
                if n_points >= 2 {
                    scale[1] = 1.0 / n.sqrt();
                }
                for i in 2..n_points {
                    let fi = i as f64;
                    scale[i] = (2.0 / n).sqrt() * ((n + 1.0 - fi) / (n + 2.0 - fi)).sqrt();
                    recur[i] = 1.0 / (n + 2.0 - fi);
                }
            }
            Algorithm::Yloop => {
                for i in 1..n_points {
                    let fi = i as f64;
                    let r = (n - fi) / (n + 1.0 - fi);
                    scale[i] = (2.0 / n).sqrt() * r.sqrt();
                    recur[i] = r;
                }
            }
            Algorithm::Lsol => {
                let s = (2.0 / n).sqrt();
                for v in scale.iter_mut().skip(1) {
                    *v = s;
                }
            }
        }
        Ok(Self {
            algorithm,
            n_points,
            dim,
            scale,
            recur,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of ω draws consumed per dimension.
    pub fn draws_per_component(&self) -> usize {
        match self.algorithm {
            Algorithm::Vloop | Algorithm::Yloop => self.n_points - 1,
            Algorithm::Lsol => self.n_points,
        }
    }

    /// Fill `out` (length `(N_p+1)*d`) with a loop drawn from `rng`.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for c in 0..self.dim {
            self.build_component(out, c, &mut || half_normal_variance(rng));
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitLoop {
        let mut coords = vec![0.0; (self.n_points + 1) * self.dim];
        self.fill(rng, &mut coords);
        UnitLoop {
            n_points: self.n_points,
            dim: self.dim,
            coords,
        }
    }

    /// Build component `c` of a loop from a supplied sequence of ω values.
    pub fn build_component<F: FnMut() -> f64>(&self, out: &mut [f64], c: usize, omega: &mut F) {
        let d = self.dim;
        let n = self.n_points;
        debug_assert_eq!(out.len(), (n + 1) * d);
        out[c] = 0.0;
        out[n * d + c] = 0.0;
        if n == 1 {
            return;
        }
        match self.algorithm {
            Algorithm::Vloop => {
                let vbar1 = self.scale[1] * omega();
                // v_i stored in slot i; `sum` is v_{i-1,1} = v_2 + ... + v_{i-1}
                let mut sum = 0.0;
                for i in 2..n {
                    let v = self.scale[i] * omega() - self.recur[i] * sum;
                    out[i * d + c] = v;
                    sum += v;
                }
                let mut q = vbar1 - 0.5 * sum;
                out[d + c] = q;
                for i in 2..n {
                    q += out[i * d + c];
                    out[i * d + c] = q;
                }
            }
            Algorithm::Yloop => {
                let mut q = 0.0;
                for i in 1..n {
                    q = self.scale[i] * omega() + self.recur[i] * q;
                    out[i * d + c] = q;
                }
            }
            Algorithm::Lsol => {
                let mut q = 0.0;
                for i in 1..=n {
                    q += self.scale[i] * omega();
                    out[i * d + c] = q;
                }
                let end = q;
                let inv_n = 1.0 / n as f64;
                for i in 1..n {
                    out[i * d + c] -= i as f64 * inv_n * end;
                }
                out[n * d + c] = 0.0;
            }
        }
    }
}

pub fn generate_vloop<R: Rng + ?Sized>(n_points: usize, dim: usize, rng: &mut R) -> Result<UnitLoop> {
    Ok(LoopGenerator::new(Algorithm::Vloop, n_points, dim)?.generate(rng))
}

pub fn generate_yloop<R: Rng + ?Sized>(n_points: usize, dim: usize, rng: &mut R) -> Result<UnitLoop> {
    Ok(LoopGenerator::new(Algorithm::Yloop, n_points, dim)?.generate(rng))
}

pub fn generate_lsol<R: Rng + ?Sized>(n_points: usize, dim: usize, rng: &mut R) -> Result<UnitLoop> {
    Ok(LoopGenerator::new(Algorithm::Lsol, n_points, dim)?.generate(rng))
}

/// Where an estimate's loops came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub n_loops: usize,
    pub n_points: usize,
    pub dim: usize,
}

/// Anything that can hand out loop `k` of a fixed ensemble.
pub trait LoopSource: Sync {
    fn provenance(&self) -> Provenance;

    /// Write loop `k` into `buf` (length `(N_p+1)*d`).
    fn fill_loop(&self, k: usize, buf: &mut [f64]);

    fn n_loops(&self) -> usize {
        self.provenance().n_loops
    }

    fn n_points(&self) -> usize {
        self.provenance().n_points
    }

    fn dim(&self) -> usize {
        self.provenance().dim
    }
}

/// Map `f(k, loop_k)` over every loop, in parallel, returning results in loop order.
pub fn map_loops<S, T, F>(src: &S, f: F) -> Vec<T>
where
    S: LoopSource + ?Sized,
    T: Send,
    F: Fn(usize, &[f64]) -> T + Sync,
{
    map_loops_with(src, || (), |_, k, unit| f(k, unit))
}

/// Like [`map_loops`], with per-worker scratch state created by `init`.
pub fn map_loops_with<S, T, I, G, F>(src: &S, init: G, f: F) -> Vec<T>
where
    S: LoopSource + ?Sized,
    T: Send,
    G: Fn() -> I + Sync,
    F: Fn(&mut I, usize, &[f64]) -> T + Sync,
{
    let len = (src.n_points() + 1) * src.dim();
    (0..src.n_loops())
        .into_par_iter()
        .map_init(
            || (vec![0.0; len], init()),
            |(buf, state), k| {
                src.fill_loop(k, buf);
                f(state, k, buf)
            },
        )
        .collect()
}

/// A lazily generated ensemble: loop `k` is regenerated on demand from
/// `(seed, k)`, so ensembles far larger than memory can be streamed.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    generator: LoopGenerator,
    n_loops: usize,
    seed: u64,
}

impl EnsembleSpec {
    pub fn new(algorithm: Algorithm, n_loops: usize, n_points: usize, dim: usize, seed: u64) -> Result<Self> {
        if n_loops < 1 {
            return Err(invalid("N_l must be at least 1"));
        }
        Ok(Self {
            generator: LoopGenerator::new(algorithm, n_points, dim)?,
            n_loops,
            seed,
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> Algorithm {
        self.generator.algorithm
    }

    pub fn loop_at(&self, k: usize) -> UnitLoop {
        let mut rng = loop_stream(self.seed, k as u64);
        self.generator.generate(&mut rng)
    }

    /// Generate every loop and keep them in memory.
    pub fn materialize(&self) -> Result<LoopEnsemble> {
        let per_loop = (self.generator.n_points + 1) * self.generator.dim;
        let bytes = self.n_loops.saturating_mul(per_loop).saturating_mul(8);
        let mut probe: Vec<f64> = Vec::new();
        probe
            .try_reserve_exact(self.n_loops.saturating_mul(per_loop))
            .map_err(|_| Error::Allocation(bytes))?;
        drop(probe);
        let loops = (0..self.n_loops).into_par_iter().map(|k| self.loop_at(k)).collect();
        Ok(LoopEnsemble {
            provenance: self.provenance(),
            loops,
        })
    }
}

impl LoopSource for EnsembleSpec {
    fn provenance(&self) -> Provenance {
        Provenance {
            algorithm: self.generator.algorithm,
            seed: self.seed,
            n_loops: self.n_loops,
            n_points: self.generator.n_points,
            dim: self.generator.dim,
        }
    }

    fn fill_loop(&self, k: usize, buf: &mut [f64]) {
        let mut rng = loop_stream(self.seed, k as u64);
        self.generator.fill(&mut rng, buf);
    }
}

/// A fully materialized ensemble of unit loops.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopEnsemble {
    provenance: Provenance,
    loops: Vec<UnitLoop>,
}

impl LoopEnsemble {
    pub fn loops(&self) -> &[UnitLoop] {
        &self.loops
    }

    pub fn algorithm(&self) -> Algorithm {
        self.provenance.algorithm
    }

    pub fn seed(&self) -> u64 {
        self.provenance.seed
    }

    /// Build an ensemble from explicit loops (for hand-constructed cases).
    pub fn from_loops(algorithm: Algorithm, seed: u64, loops: Vec<UnitLoop>) -> Result<Self> {
        let first = loops.first().ok_or(Error::EmptyEnsemble)?;
        let (n_points, dim) = (first.n_points, first.dim);
        if loops.iter().any(|l| l.n_points != n_points || l.dim != dim) {
            return Err(invalid("all loops must share N_p and d"));
        }
        Ok(Self {
            provenance: Provenance {
                algorithm,
                seed,
                n_loops: loops.len(),
                n_points,
                dim,
            },
            loops,
        })
    }
}

impl LoopSource for LoopEnsemble {
    fn provenance(&self) -> Provenance {
        self.provenance
    }

    fn fill_loop(&self, k: usize, buf: &mut [f64]) {
        buf.copy_from_slice(&self.loops[k].coords);
    }
}

/// Generate and materialize `N_l` loops. Loop `k` uses its own stream keyed on `(seed, k)`.
pub fn generate_ensemble(
    algorithm: Algorithm,
    n_loops: usize,
    n_points: usize,
    dim: usize,
    seed: u64,
) -> Result<LoopEnsemble> {
    EnsembleSpec::new(algorithm, n_loops, n_points, dim, seed)?.materialize()
}

fn check_scaling(t: f64, m: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!("time must be positive, got {t}")));
    }
    if !(m > 0.0) || !m.is_finite() {
        return Err(invalid(format!("mass must be positive, got {m}")));
    }
    Ok(())
}

/// `y + (x - y) i/N_p + sqrt(t/m) q_i`.
pub fn scale_point(unit: &UnitLoop, i: usize, y: &[f64], x: &[f64], t: f64, m: f64) -> Result<Vec<f64>> {
    check_scaling(t, m)?;
    if i > unit.n_points {
        return Err(invalid(format!("index {i} beyond N_p = {}", unit.n_points)));
    }
    check_endpoints(unit.dim, y, x)?;
    let u = i as f64 / unit.n_points as f64;
    let s = (t / m).sqrt();
    let pos = (0..unit.dim)
        .map(|c| {
            if i == 0 {
                y[c]
            } else if i == unit.n_points {
                x[c]
            } else {
                y[c] + (x[c] - y[c]) * u + s * unit.coords[i * unit.dim + c]
            }
        })
        .collect();
    Ok(pos)
}

pub(crate) fn check_endpoints(dim: usize, y: &[f64], x: &[f64]) -> Result<()> {
    for e in [y, x] {
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.len(),
            });
        }
    }
    Ok(())
}

/// Rescale a whole unit loop (flat coordinates) into `out`. The endpoints are
/// written as `y` and `x` exactly.
#[allow(clippy::too_many_arguments)]
pub fn scale_path(
    unit: &[f64],
    n_points: usize,
    dim: usize,
    y: &[f64],
    x: &[f64],
    t: f64,
    m: f64,
    out: &mut [f64],
) {
    let s = (t / m).sqrt();
    let inv_n = 1.0 / n_points as f64;
    out[..dim].copy_from_slice(y);
    for i in 1..n_points {
        let u = i as f64 * inv_n;
        let row = i * dim;
        for c in 0..dim {
            out[row + c] = y[c] + (x[c] - y[c]) * u + s * unit[row + c];
        }
    }
    out[n_points * dim..(n_points + 1) * dim].copy_from_slice(x);
}
