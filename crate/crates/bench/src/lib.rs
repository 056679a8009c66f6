//! Benchmark fixtures shared by the criterion targets.

use worldline_core::{Algorithm, EnsembleSpec, LoopSource};

/// A unit-loop buffer of `n_points` segments in `dim` dimensions, filled from loop 0.
pub fn sample_loop(algorithm: Algorithm, n_points: usize, dim: usize) -> Vec<f64> {
    let spec = EnsembleSpec::new(algorithm, 1, n_points, dim, 1).expect("valid ensemble");
    let mut buf = vec![0.0; (n_points + 1) * dim];
    spec.fill_loop(0, &mut buf);
    buf
}

/// Straight path from `y` to `x` plus `scale` times the unit loop, as a flat array.
pub fn path(unit: &[f64], y: &[f64], x: &[f64], scale: f64) -> Vec<f64> {
    let dim = y.len();
    let n = unit.len() / dim - 1;
    unit.chunks(dim)
        .enumerate()
        .flat_map(|(i, q)| {
            let u = i as f64 / n as f64;
            (0..dim).map(move |j| y[j] + u * (x[j] - y[j]) + scale * q[j])
        })
        .collect()
}
