//! CSV and manifest emission.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cost_unroll::experiments::TrainingLog;
use cost_unroll::RegularizerKind;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;

/// Bumped whenever a CSV header or the manifest layout changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const SUMMARY_HEADER: &str = "regularizer,seed,final_error,final_grad_norm,steps_to_tv_error";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn run_file_name(kind: RegularizerKind, seed: u64) -> String {
    format!("run_{kind}_seed{seed}.csv")
}

pub fn prediction_file_name(kind: RegularizerKind, seed: u64) -> String {
    format!("prediction_{kind}_seed{seed}.csv")
}

pub fn samples_file_name(seed: u64) -> String {
    format!("samples_seed{seed}.csv")
}

pub fn run_csv(log: &TrainingLog) -> String {
    let mut out = String::from("step,loss,val_error,grad_norm");
    for x in &log.probe_x {
        let _ = write!(out, ",probe_{x}");
    }
    out.push('\n');
    for r in &log.records {
        let _ = write!(out, "{},{},{},{}", r.step, num(r.loss), num(r.val_error), num(r.grad_norm));
        for p in &r.probes {
            out.push(',');
            out.push_str(&num(*p));
        }
        out.push('\n');
    }
    out
}

/// Final prediction against the ground truth on the dense grid.
pub fn prediction_csv(log: &TrainingLog) -> String {
    let mut out = String::from("x,target,prediction\n");
    for ((x, t), p) in log.dense_x.iter().zip(&log.target).zip(&log.prediction) {
        let _ = writeln!(out, "{},{},{}", num(*x), num(*t), num(*p));
    }
    out
}

pub fn samples_csv(log: &TrainingLog) -> String {
    let mut out = String::from("x,y\n");
    for (x, y) in log.sample_x.iter().zip(&log.sample_y) {
        let _ = writeln!(out, "{},{}", num(*x), num(*y));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub regularizer: RegularizerKind,
    /// `None` for the per-regularizer median row.
    pub seed: Option<u64>,
    pub final_error: f64,
    pub final_grad_norm: f64,
    pub steps_to_tv_error: Option<f64>,
}

/// One row per run, then one median row per regularizer. `steps_to_tv_error`
/// counts steps until the run first reaches the TV run's final error on the
/// same seed.
pub fn summarize(logs: &[TrainingLog], regularizers: &[RegularizerKind]) -> Vec<SummaryRow> {
    let tv_error = |seed: u64| {
        logs.iter()
            .find(|l| l.seed == seed && l.regularizer == RegularizerKind::Tv)
            .map(TrainingLog::final_error)
    };
    let mut rows: Vec<SummaryRow> = logs
        .iter()
        .map(|l| SummaryRow {
            regularizer: l.regularizer,
            seed: Some(l.seed),
            final_error: l.final_error(),
            final_grad_norm: l.final_grad_norm(),
            steps_to_tv_error: tv_error(l.seed).and_then(|e| l.steps_to_error(e)).map(|s| s as f64),
        })
        .collect();
    for &kind in regularizers {
        let mine: Vec<&SummaryRow> = rows.iter().filter(|r| r.regularizer == kind).collect();
        if mine.is_empty() {
            continue;
        }
        let steps: Vec<f64> = mine.iter().filter_map(|r| r.steps_to_tv_error).collect();
        let row = SummaryRow {
            regularizer: kind,
            seed: None,
            final_error: median(mine.iter().map(|r| r.final_error).collect()),
            final_grad_norm: median(mine.iter().map(|r| r.final_grad_norm).collect()),
            // only meaningful when every seed reached the TV error
            steps_to_tv_error: (steps.len() == mine.len()).then(|| median(steps)),
        };
        rows.push(row);
    }
    rows
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let seed = r.seed.map_or_else(|| "median".to_string(), |s| s.to_string());
        let steps = r.steps_to_tv_error.map(num).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.regularizer,
            seed,
            num(r.final_error),
            num(r.final_grad_norm),
            steps
        );
    }
    out
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub version: &'static str,
    pub config: Config,
    pub seeds: Vec<u64>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub status: &'static str,
    pub diverged: Vec<String>,
    pub files: Vec<FileDigest>,
}

/// Writes files into one directory and remembers their digests.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        fs::write(self.root.join(name), contents)?;
        self.written.push(FileDigest {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        });
        Ok(())
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> io::Result<PathBuf> {
        self.written.sort_by(|a, b| a.file.cmp(&b.file));
        manifest.files = std::mem::take(&mut self.written);
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 123456.789, 0.0, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x, "{}", num(x));
        }
        assert_eq!(num(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
