//! Subcommand implementations.
//!
//! Each command reads its inputs, computes everything in memory and only
//! then writes, so a failing command leaves no partial outputs (scan
//! archives are the exception: they are written line by line after all
//! inputs have been validated).

mod analyze;
mod batchsize;
mod report;
mod scan;
mod strategies;

use std::path::Path;

use serde::Serialize;

use linescope_core::archive::write_file;
use linescope_core::linescan::ExactLine;
use linescope_core::data::Dataset;
use linescope_core::nncore::ParamVector;
use linescope_core::archive::ScanArchive;
use linescope_core::trainer::{replay_lines, DirectionKind};
use linescope_core::Error;

use crate::config::ConfigMap;
use crate::error::{CliError, CliResult};

pub use analyze::{cmd_analyze, AnalysisSummary, FitRow, ProportionalityReport};
pub use batchsize::{cmd_batchsize, BatchsizeSummary};
pub use report::{cmd_report, Report};
pub use scan::{cmd_fan, cmd_scan, cmd_train, dry_run, ScanSummary, TrainSummary};
pub use strategies::{cmd_strategies, StrategiesSummary};

/// Name of the resolved configuration stored next to every output.
pub const RUN_CONF: &str = "run.conf";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Artifact {
    /// Path relative to the command's output directory.
    pub path: String,
    /// `csv`, `svg` or `json`.
    pub kind: String,
    /// The plot or table family the file belongs to.
    pub figure: String,
}

/// Files collected in memory and written in one go.
#[derive(Default)]
pub(crate) struct Staged {
    files: Vec<(String, Vec<u8>, &'static str)>,
}

impl Staged {
    pub fn add(&mut self, path: impl Into<String>, body: impl Into<Vec<u8>>, figure: &'static str) {
        self.files.push((path.into(), body.into(), figure));
    }

    pub fn json<T: Serialize>(&mut self, path: &str, value: &T, figure: &'static str) {
        let mut text = serde_json::to_string_pretty(value).expect("summaries serialize");
        text.push('\n');
        self.add(path, text, figure);
    }

    pub fn commit(self, root: &Path) -> CliResult<Vec<Artifact>> {
        let mut out = Vec::with_capacity(self.files.len());
        for (rel, body, figure) in self.files {
            write_file(&root.join(&rel), &body)?;
            let kind = rel.rsplit('.').next().unwrap_or("").to_string();
            out.push(Artifact {
                path: rel,
                kind,
                figure: figure.to_string(),
            });
        }
        Ok(out)
    }
}

pub(crate) fn fmt_f(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

/// Stored `run.conf` of `dir` (if any) overlaid with `overrides`.
pub(crate) fn effective_config(dir: &Path, overrides: &ConfigMap) -> CliResult<ConfigMap> {
    let path = dir.join(RUN_CONF);
    let mut conf = if path.exists() { ConfigMap::load(&path)? } else { ConfigMap::default() };
    conf.merge(overrides);
    Ok(conf)
}

/// Origins and directions of an archive's lines, replayed from the run.
pub(crate) struct Replayed {
    pub dataset: Dataset,
    pub lines: Vec<(ParamVector, ParamVector)>,
}

impl Replayed {
    pub fn of(archive: &ScanArchive) -> CliResult<Self> {
        if archive.scans.iter().any(|s| s.meta.kind == DirectionKind::Noisy) {
            return Err(CliError::Core(Error::Capability(
                "fan archives cannot be replayed; use interpolation".into(),
            )));
        }
        let dataset = archive.run.dataset(&archive.root.join("run.json"))?;
        let steps: Vec<usize> = archive.scans.iter().map(|s| s.meta.step).collect();
        let replayed = replay_lines(&archive.run.train, &dataset, &steps)?;
        let mut lines = Vec::with_capacity(replayed.len());
        for ((origin, record), scan) in replayed.into_iter().zip(&archive.scans) {
            if record.dderiv.to_bits() != scan.meta.dderiv.to_bits() || record.batch != scan.meta.batch {
                return Err(CliError::Core(Error::Integrity {
                    path: linescope_core::archive::step_dir(&archive.root, scan.meta.step),
                    message: "replayed step does not match the scanned line".into(),
                }));
            }
            lines.push((origin, record.direction.expect("replay keeps directions")));
        }
        Ok(Replayed { dataset, lines })
    }

    pub fn exact<'a>(&'a self, archive: &'a ScanArchive) -> Vec<ExactLine<'a>> {
        self.lines
            .iter()
            .map(|(o, d)| ExactLine::new(&archive.run.train.model, o, d, &self.dataset))
            .collect()
    }
}
