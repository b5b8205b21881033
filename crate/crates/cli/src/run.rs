//! The `run` and `demo2d` commands.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use cost_unroll::experiments::{
    edge_aligned_synthetic, masked_2d_demo, train_pc, Demo2dConfig, EdgeStats, TrainError, TrainingLog,
};
use cost_unroll::RegularizerKind;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::output::{self, OutputDir, RunManifest, SummaryRow};
use crate::plot::{Chart, Series};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Setup(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Vec<SummaryRow>,
    /// `regularizer/seed: reason` for every run that diverged.
    pub diverged: Vec<String>,
    pub demo2d: Option<Demo2dSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Demo2dSummary {
    pub masked: EdgeStats,
    pub unmasked: EdgeStats,
}

pub fn demo2d(cfg: &Demo2dConfig) -> Result<Demo2dSummary, RunError> {
    let setup = |e: cost_unroll::Error| RunError::Setup(e.to_string());
    let (image, _clean, noisy) = edge_aligned_synthetic(cfg).map_err(setup)?;
    let report = masked_2d_demo(&image, &noisy, cfg).map_err(setup)?;
    Ok(Demo2dSummary {
        masked: report.masked,
        unmasked: report.unmasked,
    })
}

/// Trains every regularizer × seed pair on a pool of `jobs` workers and writes
/// all artifacts into `out`. Files are written from the calling thread in
/// (seed, regularizer) order once every run has finished.
pub fn run(cfg: &Config, out: &Path, jobs: usize) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let tasks: Vec<(u64, RegularizerKind)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.regularizers.iter().map(move |&k| (s, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunError::Setup(e.to_string()))?;
    let results: Vec<Result<TrainingLog, TrainError>> =
        pool.install(|| tasks.par_iter().map(|&(seed, kind)| train_pc(&cfg.experiment(kind, seed))).collect());

    let mut logs = Vec::with_capacity(results.len());
    let mut diverged = Vec::new();
    for ((seed, kind), result) in tasks.iter().zip(results) {
        match result {
            Ok(log) => logs.push(log),
            Err(TrainError::Diverged { step, reason, log }) => {
                diverged.push(format!("{kind}/{seed}: diverged at step {step} ({reason})"));
                logs.push(*log);
            }
            Err(TrainError::Config(e)) => return Err(RunError::Setup(e.to_string())),
        }
    }

    let mut dir = OutputDir::create(out)?;
    for log in &logs {
        dir.write(&output::run_file_name(log.regularizer, log.seed), &output::run_csv(log))?;
        dir.write(&output::prediction_file_name(log.regularizer, log.seed), &output::prediction_csv(log))?;
    }
    for &seed in &cfg.seeds {
        let of_seed: Vec<&TrainingLog> = logs.iter().filter(|l| l.seed == seed).collect();
        if let Some(first) = of_seed.first() {
            dir.write(&output::samples_file_name(seed), &output::samples_csv(first))?;
        }
        for (name, chart) in seed_charts(seed, &of_seed) {
            dir.write(&name, &chart.render())?;
        }
    }
    let summary = output::summarize(&logs, &cfg.regularizers);
    dir.write("summary.csv", &output::summary_csv(&summary))?;

    let demo = match &cfg.demo2d {
        Some(d) => {
            let s = demo2d(d)?;
            let text = serde_json::to_string_pretty(&s).map_err(std::io::Error::other)?;
            dir.write("demo2d.json", &(text + "\n"))?;
            Some(s)
        }
        None => None,
    };

    dir.finish(RunManifest {
        schema_version: output::SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        seeds: cfg.seeds.clone(),
        started_unix_seconds: started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        status: if diverged.is_empty() { "ok" } else { "diverged" },
        diverged: diverged.clone(),
        files: Vec::new(),
    })?;
    Ok(RunOutcome {
        summary,
        diverged,
        demo2d: demo,
    })
}

fn trace(log: &TrainingLog, f: impl Fn(&cost_unroll::experiments::StepRecord) -> f64) -> Vec<(f64, f64)> {
    log.records.iter().map(|r| (r.step as f64, f(r))).collect()
}

fn seed_charts(seed: u64, logs: &[&TrainingLog]) -> Vec<(String, Chart)> {
    let mut charts = Vec::new();
    charts.push((
        format!("error_seed{seed}.svg"),
        Chart {
            title: format!("Validation error, seed {seed}"),
            x_label: "step".into(),
            y_label: "mean |f - target|".into(),
            log_y: true,
            series: logs
                .iter()
                .map(|l| Series::line(l.regularizer.name(), trace(l, |r| r.val_error)))
                .collect(),
        },
    ));
    charts.push((
        format!("grad_norm_seed{seed}.svg"),
        Chart {
            title: format!("Parameter gradient norm, seed {seed}"),
            x_label: "step".into(),
            y_label: "|grad|".into(),
            log_y: true,
            series: logs
                .iter()
                .map(|l| Series::line(l.regularizer.name(), trace(l, |r| r.grad_norm)))
                .collect(),
        },
    ));
    let mut probes = Vec::new();
    for l in logs {
        for (i, x) in l.probe_x.iter().enumerate() {
            probes.push(Series::line(format!("{} x={x}", l.regularizer), trace(l, |r| r.probes[i])));
        }
    }
    charts.push((
        format!("probes_seed{seed}.svg"),
        Chart {
            title: format!("Loss gradient w.r.t. f at probe points, seed {seed}"),
            x_label: "step".into(),
            y_label: "dloss/df".into(),
            log_y: false,
            series: probes,
        },
    ));
    if let Some(first) = logs.first() {
        let mut series = vec![Series::line("target", first.dense_x.iter().copied().zip(first.target.iter().copied()).collect())];
        series.extend(
            logs.iter()
                .map(|l| Series::line(l.regularizer.name(), l.dense_x.iter().copied().zip(l.prediction.iter().copied()).collect())),
        );
        series.push(Series::markers(
            "samples",
            first.sample_x.iter().copied().zip(first.sample_y.iter().copied()).collect(),
        ));
        charts.push((
            format!("signal_seed{seed}.svg"),
            Chart {
                title: format!("Final predictions, seed {seed}"),
                x_label: "x".into(),
                y_label: "f(x)".into(),
                log_y: false,
                series,
            },
        ));
    }
    charts
}
