use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use linescope_core::analysis::LineLoss;
use linescope_core::archive::read_scan_archive;
use linescope_core::linescan::LineScan;
use linescope_core::strategies::{evaluate_strategies, join_flags, LineInput, StrategySpec, StrategySummary};

use super::analyze::{proportionality_of, ProportionalityReport};
use super::{effective_config, fmt_f, fmt_opt, Artifact, Replayed, Staged};
use crate::config::ConfigMap;
use crate::error::CliResult;
use crate::svg::{LinePlot, Series};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategiesSummary {
    #[serde(skip)]
    pub out: PathBuf,
    pub lines: usize,
    pub kernel: usize,
    pub interpolated: bool,
    pub strategies: Vec<StrategySummary>,
    /// SGD label with the smallest mean |s_opt - s_upd|.
    pub closest_sgd: Option<String>,
    pub proportionality: ProportionalityReport,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
}

pub fn cmd_strategies(overrides: &ConfigMap, archive: &Path, out: &Path) -> CliResult<StrategiesSummary> {
    let archive = read_scan_archive(archive)?;
    let conf = effective_config(&archive.root, overrides)?;
    let lrs: Vec<f64> = conf.list("strategies.lrs")?;
    let mu: f64 = conf.require("strategies.mu")?;
    let kernel: usize = conf.require("strategies.kernel")?;
    let interpolate: bool = conf.require("strategies.interpolate")?;
    let specs = StrategySpec::standard_set(&lrs, mu)?;

    let replayed = if interpolate { None } else { Some(Replayed::of(&archive)?) };
    let exact = replayed.as_ref().map(|r| r.exact(&archive));
    let inputs: Vec<LineInput<'_>> = match &exact {
        Some(ex) => archive
            .scans
            .iter()
            .zip(ex)
            .map(|(s, e)| LineInput::with_exact(s, e as &(dyn LineLoss + Sync)))
            .collect(),
        None => archive.scans.iter().map(LineInput::new).collect(),
    };
    let table = evaluate_strategies(&inputs, &specs, kernel)?;
    let scans: Vec<&LineScan> = archive.scans.iter().collect();
    let (prop, prop_csv) = proportionality_of(&scans)?;

    let mut staged = Staged::default();
    let mut csv = String::from("step,label,s_upd,s_opt,distance,improvement,flags\n");
    for rows in &table.outcomes {
        for o in rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                o.step,
                o.label,
                fmt_f(o.s_upd),
                fmt_f(o.s_opt),
                fmt_f(o.distance),
                fmt_opt(o.improvement),
                join_flags(&o.flags)
            );
        }
    }
    staged.add("strategies.csv", csv, "strategy_metrics");

    let mut csv = String::from("step,label,kernel,smoothed_distance,smoothed_improvement,cumulative_improvement\n");
    let mut series = Vec::with_capacity(specs.len());
    for i in 0..specs.len() {
        let s = table.series(i)?;
        for (j, step) in table.steps.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{step},{},{kernel},{},{},{}",
                s.label,
                fmt_f(s.smoothed_distance[j]),
                fmt_f(s.smoothed_improvement[j]),
                fmt_f(s.cumulative_improvement[j])
            );
        }
        series.push(s);
    }
    staged.add("strategies_smoothed.csv", csv, "strategy_metrics");

    let summaries: Vec<StrategySummary> = (0..specs.len()).map(|i| table.summary(i)).collect();
    let mut csv = String::from("label,mean_abs_distance,mean_overshoot,mean_improvement,total_improvement,flagged_lines\n");
    for s in &summaries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            s.label,
            fmt_f(s.mean_abs_distance),
            fmt_f(s.mean_overshoot),
            fmt_f(s.mean_improvement),
            fmt_f(s.total_improvement),
            s.flagged_lines
        );
    }
    staged.add("strategies_summary.csv", csv, "strategy_metrics");

    let steps: Vec<f64> = table.steps.iter().map(|&k| k as f64).collect();
    let plot = |title: &str, y: &str, pick: &dyn Fn(&linescope_core::strategies::StrategySeries) -> &Vec<f64>| {
        let mut p = LinePlot::new(title, "step", y);
        for s in &series {
            p.push(Series::line(s.label.clone(), steps.iter().copied().zip(pick(s).iter().copied()).collect()));
        }
        p.render()
    };
    staged.add(
        "strategies_distance.svg",
        plot(&format!("s_opt - s_upd (moving average, k = {kernel})"), "distance", &|s| &s.smoothed_distance),
        "strategy_metrics",
    );
    staged.add(
        "strategies_improvement.svg",
        plot(&format!("loss improvement (moving average, k = {kernel})"), "improvement", &|s| &s.smoothed_improvement),
        "strategy_metrics",
    );
    staged.add(
        "strategies_cumulative.svg",
        plot("cumulative loss improvement", "improvement", &|s| &s.cumulative_improvement),
        "strategy_metrics",
    );
    staged.add("proportionality.csv", prop_csv, "proportionality");

    let closest_sgd = summaries
        .iter()
        .zip(&specs)
        .filter(|(_, sp)| matches!(sp.kind, linescope_core::strategies::StrategyKind::Sgd { .. }))
        .min_by(|a, b| a.0.mean_abs_distance.total_cmp(&b.0.mean_abs_distance))
        .map(|(s, _)| s.label.clone());
    let mut summary = StrategiesSummary {
        out: out.to_path_buf(),
        lines: table.steps.len(),
        kernel,
        interpolated: interpolate,
        strategies: summaries,
        closest_sgd,
        proportionality: prop,
        artifacts: Vec::new(),
    };
    staged.json("summary.json", &summary, "summary");
    staged.add(super::RUN_CONF, conf.resolved_text(), "config");
    summary.artifacts = staged.commit(out)?;
    Ok(summary)
}
