//! CSV documents, run manifests and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Reals with 17 significant digits; non-finite values as `NaN`, `inf`, `-inf`.
pub fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

pub fn reals(xs: &[f64]) -> String {
    xs.iter().map(|&x| real(x)).collect::<Vec<_>>().join(" ")
}

/// A table with one leading block of `# key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvDoc {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvDoc {
    pub fn new(header: &[&str]) -> Self {
        CsvDoc {
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k} = {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().context("csv buffer")
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).with_context(|| format!("cannot create a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Everything needed to reproduce a run, plus its timings and warnings.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub config: String,
    pub seeds: Vec<SeedEntry>,
    pub timings: Vec<Timing>,
    pub warnings: Vec<String>,
}

/// Derived seeds use all 64 bits, beyond TOML's integer range, so they are
/// written as decimal strings.
#[derive(Debug, Clone, Serialize)]
pub struct SeedEntry {
    pub label: String,
    #[serde(serialize_with = "as_decimal")]
    pub seed: u64,
}

fn as_decimal<S: serde::Serializer>(x: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

impl RunManifest {
    pub fn seed(&mut self, label: impl ToString, seed: u64) {
        self.seeds.push(SeedEntry {
            label: label.to_string(),
            seed,
        });
    }

    pub fn time<T>(&mut self, label: impl ToString, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            label: label.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn warn(&mut self, msg: impl ToString) {
        self.warnings.push(msg.to_string());
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("cannot serialize manifest")
    }
}

/// `out.csv` → `out.csv.manifest.toml`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_format() {
        assert_eq!(real(0.1), "1.0000000000000001e-1");
        assert_eq!(real(-2.5), "-2.5000000000000000e0");
        assert_eq!(real(f64::NAN), "NaN");
        assert_eq!(real(f64::NEG_INFINITY), "-inf");
        for x in [std::f64::consts::PI, 1e-300, -7.123456789012345e200] {
            assert_eq!(real(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn render_and_atomic_write() {
        let mut doc = CsvDoc::new(&["t", "v"]);
        doc.meta("seed", 3);
        doc.row(vec![real(1.0), real(2.0)]);
        let bytes = doc.render().unwrap();
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            "# seed = 3\nt,v\n1.0000000000000000e0,2.0000000000000000e0\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, &bytes).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/a.csv"), &bytes).is_err());
    }
}
