use std::path::Path;

use serde::Serialize;

use linescope_core::archive::write_file;

use super::{cmd_analyze, cmd_batchsize, cmd_scan, cmd_strategies, cmd_train, Artifact, RUN_CONF};
use super::{AnalysisSummary, BatchsizeSummary, StrategiesSummary};
use crate::config::ConfigMap;
use crate::error::CliResult;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub config_hash: String,
    /// Every emitted CSV and SVG, relative to the report directory.
    pub files: Vec<Artifact>,
    #[serde(skip)]
    pub analysis: AnalysisSummary,
    #[serde(skip)]
    pub strategies: StrategiesSummary,
    #[serde(skip)]
    pub batchsize: Option<BatchsizeSummary>,
}

fn prefixed<'a>(dir: &str, artifacts: &'a [Artifact]) -> impl Iterator<Item = Artifact> + 'a {
    let dir = dir.to_string();
    artifacts
        .iter()
        .filter(|a| a.kind == "csv" || a.kind == "svg")
        .map(move |a| Artifact {
            path: format!("{dir}/{}", a.path),
            ..a.clone()
        })
}

/// Train, scan, analyze, score strategies and (when per-sample losses were
/// kept) run the batch-size study, all under `out`.
pub fn cmd_report(conf: &ConfigMap, out: &Path) -> CliResult<Report> {
    conf.check_train_keys()?;
    let trajectory = out.join("trajectory");
    let scans = out.join("scans");
    let trained = cmd_train(conf, &trajectory)?;
    let scanned = cmd_scan(conf, &trajectory, &scans)?;
    let analysis = cmd_analyze(conf, std::slice::from_ref(&scans), &out.join("analysis"))?;
    let strategies = cmd_strategies(conf, &scans, &out.join("strategies"))?;
    let batchsize = if scanned.per_sample > 0 {
        Some(cmd_batchsize(conf, &scans, &out.join("batchsize"))?)
    } else {
        None
    };

    let mut files: Vec<Artifact> = prefixed("analysis", &analysis.artifacts)
        .chain(prefixed("strategies", &strategies.artifacts))
        .collect();
    if let Some(b) = &batchsize {
        files.extend(prefixed("batchsize", &b.artifacts));
    }
    let report = Report {
        config_hash: trained.config_hash,
        files,
        analysis,
        strategies,
        batchsize,
    };

    #[derive(Serialize)]
    struct Golden<'a> {
        config_hash: &'a str,
        files: &'a [Artifact],
        analysis: serde_json::Value,
        strategies: &'a StrategiesSummary,
        batchsize: &'a Option<BatchsizeSummary>,
    }
    let analysis = serde_json::json!({
        "lines": report.analysis.lines,
        "window": report.analysis.window,
        "invalid_lines": report.analysis.invalid_lines,
        "early_block_mean": report.analysis.early_block_mean,
        "late_block_mean": report.analysis.late_block_mean,
        "block_size": report.analysis.block_size,
        "nesting_fraction": report.analysis.nesting_fraction,
        "proportionality": report.analysis.proportionality,
    });
    let mut text = serde_json::to_string_pretty(&Golden {
        config_hash: &report.config_hash,
        files: &report.files,
        analysis,
        strategies: &report.strategies,
        batchsize: &report.batchsize,
    })
    .expect("report serializes");
    text.push('\n');
    write_file(&out.join("report.json"), text.as_bytes())?;
    write_file(&out.join(RUN_CONF), conf.resolved_text().as_bytes())?;
    Ok(report)
}
