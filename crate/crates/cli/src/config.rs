//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [potential]
//! kind = "harmonic"
//! omega = 1.0
//!
//! [ensemble]
//! algorithm = "vloop"
//! n_loops = 20000
//! n_points = 2000
//! seed = 1
//!
//! [scan]
//! t_min = 5.0
//! t_max = 19.0
//! t_step = 1.0
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use worldline_core::potentials::DEFAULT_N_SUB;
use worldline_core::{Algorithm, EnsembleConfig, LineIntegralMethod, PotentialSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: PotentialConfig,
    #[serde(default)]
    pub particle: ParticleConfig,
    #[serde(default)]
    pub endpoints: EndpointsConfig,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub classical: ClassicalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Potential parameters; a missing potential `mass` means the particle mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Free,
    Harmonic {
        omega: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mass: Option<f64>,
    },
    PoschlTeller {
        a: f64,
        nu: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mass: Option<f64>,
    },
    Delta {
        g: f64,
    },
    Coulomb {
        alpha: f64,
    },
    Yukawa {
        alpha: f64,
        mu: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleConfig {
    pub mass: f64,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        ParticleConfig { mass: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub algorithm: String,
    pub n_loops: usize,
    pub n_points: usize,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub n_ensembles: usize,
}

/// The `t` grid: either `t_values`, or `t_min..=t_max` in steps of `t_step`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_values: Option<Vec<f64>>,
    /// Estimate the odd-parity projection instead of `K`.
    #[serde(default)]
    pub parity: bool,
    /// Reuse one loop ensemble for every t instead of a fresh one per t.
    #[serde(default)]
    pub shared_ensemble: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    /// `pointwise`, `smoothed_analytic`, `smoothed_numeric` or `crossing_count`;
    /// the potential's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub n_sub: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            method: None,
            n_sub: DEFAULT_N_SUB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramConfig {
    pub n_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Add the tail-diagnostic column (harmonic, `d = 1`).
    #[serde(default)]
    pub tail: bool,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig {
            n_bins: 400,
            t: None,
            tail: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Explicit `[t_lo, t_hi]`; detected automatically when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Fit an existing kernel-scan CSV instead of running the scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<PathBuf>,
    pub min_points: usize,
    pub threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            window: None,
            scan: None,
            min_points: 5,
            threshold: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub n_simulations: usize,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        ClassicalConfig {
            t: None,
            n_simulations: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

/// A validated configuration with everything the commands need resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub potential: PotentialSpec,
    pub mass: f64,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub ensemble: EnsembleConfig,
    pub seed: u64,
    pub n_ensembles: usize,
    pub method: LineIntegralMethod,
    /// Hex SHA-256 of the canonical TOML form, after overrides.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("cannot serialize configuration")
    }

    pub fn potential_spec(&self) -> PotentialSpec {
        let m = self.particle.mass;
        match self.potential {
            PotentialConfig::Free => PotentialSpec::Free,
            PotentialConfig::Harmonic { omega, mass } => PotentialSpec::Harmonic {
                mass: mass.unwrap_or(m),
                omega,
            },
            PotentialConfig::PoschlTeller { a, nu, mass } => PotentialSpec::PoschlTeller {
                a,
                nu,
                mass: mass.unwrap_or(m),
            },
            PotentialConfig::Delta { g } => PotentialSpec::DeltaWell { g },
            PotentialConfig::Coulomb { alpha } => PotentialSpec::Coulomb { alpha },
            PotentialConfig::Yukawa { alpha, mu } => PotentialSpec::Yukawa { alpha, mu },
        }
    }

    /// The `t` grid exactly as configured.
    pub fn t_grid(&self) -> Result<Vec<f64>> {
        let s = &self.scan;
        let grid = match (&s.t_values, s.t_min, s.t_max, s.t_step) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(lo), Some(hi), Some(step)) => {
                ensure!(step > 0.0 && hi >= lo, "need t_step > 0 and t_max >= t_min");
                let n = ((hi - lo) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| lo + step * i as f64).collect()
            }
            (None, None, None, None) => bail!("[scan] needs t_values or t_min/t_max/t_step"),
            _ => bail!("[scan] takes either t_values or all of t_min/t_max/t_step"),
        };
        ensure!(!grid.is_empty(), "empty t grid");
        ensure!(grid.iter().all(|&t| t > 0.0 && t.is_finite()), "every t must be positive");
        ensure!(grid.windows(2).all(|w| w[1] > w[0]), "t grid must be strictly increasing");
        Ok(grid)
    }

    /// Check the schema-level invariants and resolve defaults.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<Resolved> {
        if let Some(seed) = seed_override {
            // TOML integers are signed 64-bit; the canonical config must round-trip.
            ensure!(seed <= i64::MAX as u64, "seed must be at most {}", i64::MAX);
            self.ensemble.seed = seed;
        }
        let mass = self.particle.mass;
        ensure!(mass > 0.0 && mass.is_finite(), "particle mass must be positive");
        let potential = self.potential_spec();
        potential.validate()?;
        let e = &self.ensemble;
        let algorithm: Algorithm = e.algorithm.parse()?;
        ensure!(e.n_loops >= 1 && e.n_points >= 1 && e.dim >= 1, "n_loops, n_points and dim must be positive");
        ensure!(e.n_ensembles >= 1, "n_ensembles must be at least 1");
        let dim = e.dim;
        let default_point = |first: f64| {
            let mut p = vec![0.0; dim];
            p[0] = first;
            p
        };
        let offset = if matches!(potential, PotentialSpec::Coulomb { .. } | PotentialSpec::Yukawa { .. }) {
            0.01
        } else {
            0.0
        };
        let y = self.endpoints.y.clone().unwrap_or_else(|| default_point(offset));
        let x = self.endpoints.x.clone().unwrap_or_else(|| default_point(offset));
        ensure!(y.len() == dim && x.len() == dim, "endpoints must have {dim} coordinates");
        let method = match self.smoothing.method.as_deref() {
            None => match potential.default_method() {
                LineIntegralMethod::SmoothedNumeric { .. } => LineIntegralMethod::SmoothedNumeric {
                    n_sub: self.smoothing.n_sub,
                },
                m => m,
            },
            Some("pointwise") => LineIntegralMethod::Pointwise,
            Some("smoothed_analytic") => LineIntegralMethod::SmoothedAnalytic,
            Some("smoothed_numeric") => LineIntegralMethod::SmoothedNumeric {
                n_sub: self.smoothing.n_sub,
            },
            Some("crossing_count") => LineIntegralMethod::CrossingCount,
            Some(other) => bail!("unknown smoothing method '{other}'"),
        };
        method.check(&potential, dim)?;
        ensure!(self.histogram.n_bins >= 2, "histogram n_bins must be at least 2");
        if let Some([lo, hi]) = self.fit.window {
            ensure!(lo < hi, "fit window must have t_lo < t_hi");
        }
        ensure!(self.fit.min_points >= 3, "fit min_points must be at least 3");
        ensure!(self.classical.n_simulations >= 2, "classical n_simulations must be at least 2");
        if let Some(0) = self.output.threads {
            bail!("threads must be at least 1");
        }
        let hash = sha256_hex(self.to_toml()?.as_bytes());
        Ok(Resolved {
            ensemble: EnsembleConfig {
                algorithm,
                n_loops: e.n_loops,
                n_points: e.n_points,
                dim,
            },
            seed: e.seed,
            n_ensembles: e.n_ensembles,
            potential,
            mass,
            y,
            x,
            method,
            hash,
            config: self,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HO: &str = r#"
[potential]
kind = "harmonic"
omega = 1.0

[ensemble]
algorithm = "vloop"
n_loops = 100
n_points = 50

[scan]
t_min = 5.0
t_max = 7.0
t_step = 0.5
"#;

    #[test]
    fn parses_and_resolves() {
        let r = ExperimentConfig::from_toml(HO).unwrap().resolve(Some(9)).unwrap();
        assert_eq!(r.seed, 9);
        assert_eq!(r.potential, PotentialSpec::Harmonic { mass: 1.0, omega: 1.0 });
        assert_eq!(r.y, vec![0.0]);
        assert_eq!(r.method, LineIntegralMethod::Pointwise);
        assert_eq!(r.config.t_grid().unwrap(), vec![5.0, 5.5, 6.0, 6.5, 7.0]);
        assert_eq!(r.hash.len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml(&HO.replace("omega = 1.0", "omega = 1.0\nfoo = 2")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{HO}\n[bogus]\na = 1\n")).is_err());
        assert!(ExperimentConfig::from_toml(&HO.replace("n_points = 50", "n_points = 50\nnpoints = 3")).is_err());
    }

    #[test]
    fn singular_defaults() {
        let text = HO
            .replace("kind = \"harmonic\"\nomega = 1.0", "kind = \"yukawa\"\nalpha = 1.0\nmu = 0.2")
            .replace("n_points = 50", "n_points = 50\ndim = 3");
        let r = ExperimentConfig::from_toml(&text).unwrap().resolve(None).unwrap();
        assert_eq!(r.y, vec![0.01, 0.0, 0.0]);
        assert_eq!(r.method, LineIntegralMethod::SmoothedNumeric { n_sub: 4 });
    }

    #[test]
    fn invalid_combinations() {
        let delta = HO.replace("kind = \"harmonic\"\nomega = 1.0", "kind = \"delta\"\ng = 1.5");
        let pw = format!("{delta}\n[smoothing]\nmethod = \"pointwise\"\nn_sub = 4\n");
        assert!(ExperimentConfig::from_toml(&pw).unwrap().resolve(None).is_err());
        let both = HO.replace("t_step = 0.5", "t_step = 0.5\nt_values = [1.0]");
        assert!(ExperimentConfig::from_toml(&both).unwrap().t_grid().is_err());
    }

    #[test]
    fn hash_tracks_seed_override() {
        let c = ExperimentConfig::from_toml(HO).unwrap();
        let a = c.clone().resolve(Some(1)).unwrap().hash;
        let b = c.clone().resolve(Some(2)).unwrap().hash;
        assert_ne!(a, b);
        assert_eq!(a, c.resolve(Some(1)).unwrap().hash);
    }
}
