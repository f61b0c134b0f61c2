use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use linescope_core::analysis::LineLoss;
use linescope_core::archive::read_scan_archive;
use linescope_core::batchsim::{per_sample_dderiv, ratio_study, scaled_size, strategy_vs_batchsize, ShrinkRule, StudyLine};
use linescope_core::strategies::{join_flags, LineInput, StrategyKind, StrategySpec};
use linescope_core::Error;

use super::{effective_config, fmt_f, fmt_opt, Artifact, Replayed, Staged};
use crate::config::ConfigMap;
use crate::error::{CliError, CliResult};
use crate::svg::{LinePlot, Series};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FactorRatio {
    pub factor: f64,
    pub expected: f64,
    pub mean_ratio: Option<f64>,
    /// Less sensitive to lines whose scaled slope is close to zero.
    pub median_ratio: Option<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelTrend {
    pub label: String,
    /// Lines whose improvement does not decrease with batch size.
    pub monotone_fraction: Option<f64>,
    /// Mean improvement per batch size, in `sizes` order.
    pub mean_improvement: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchsizeSummary {
    #[serde(skip)]
    pub out: PathBuf,
    pub lines: Vec<usize>,
    pub shrink_rule: ShrinkRule,
    pub seed: u64,
    pub ratios: Vec<FactorRatio>,
    pub sizes: Vec<usize>,
    pub trends: Vec<LabelTrend>,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
}

pub fn cmd_batchsize(overrides: &ConfigMap, archive: &Path, out: &Path) -> CliResult<BatchsizeSummary> {
    let mut archive = read_scan_archive(archive)?;
    let conf = effective_config(&archive.root, overrides)?;
    let factors: Vec<f64> = conf.list("batch.factors")?;
    let seed = conf.batch_seed()?;
    let rule = conf.shrink_rule()?;
    let mu: f64 = conf.require("strategies.mu")?;
    let interpolate: bool = conf.require("strategies.interpolate")?;
    let lr = archive.run.train.learning_rate;

    archive.scans.retain(|s| s.per_sample.is_some());
    if archive.scans.is_empty() {
        return Err(CliError::Core(Error::Capability(
            "batch-size study needs scans with per-sample losses (scan.per_sample)".into(),
        )));
    }
    let replayed = Replayed::of(&archive)?;
    let model = &archive.run.train.model;
    let slopes: Vec<Vec<f64>> = replayed
        .lines
        .iter()
        .map(|(o, d)| per_sample_dderiv(model, o, d, &replayed.dataset))
        .collect::<Result<_, _>>()?;

    let ratio_input: Vec<(usize, &[usize], &[f64])> = archive
        .scans
        .iter()
        .zip(&slopes)
        .map(|(s, sl)| (s.meta.step, s.meta.batch.as_slice(), sl.as_slice()))
        .collect();
    let ratios = ratio_study(&ratio_input, &factors, seed, rule)?;

    let n = archive.run.dataset_len;
    let base = archive.run.train.batch.batch_size;
    let mut sizes = vec![base, n];
    for &f in &factors {
        let s = scaled_size(base, f)?;
        if s <= n {
            sizes.push(s);
        }
    }
    sizes.sort_unstable();
    sizes.dedup();
    let specs = vec![
        StrategySpec::new(StrategyKind::Sgd { lr })?,
        StrategySpec::new(StrategyKind::Pal { mu })?,
        StrategySpec::new(StrategyKind::Fbpal { mu })?,
    ];
    let exact = (!interpolate).then(|| replayed.exact(&archive));
    let lines: Vec<StudyLine<'_>> = archive
        .scans
        .iter()
        .enumerate()
        .map(|(i, s)| StudyLine {
            input: match &exact {
                Some(ex) => LineInput::with_exact(s, &ex[i] as &(dyn LineLoss + Sync)),
                None => LineInput::new(s),
            },
            slopes: &slopes[i],
        })
        .collect();
    let table = strategy_vs_batchsize(&lines, &sizes, &specs, seed, rule)?;

    let mut staged = Staged::default();
    let mut csv = String::from("step,factor,size,base_dderiv,scaled_dderiv,ratio,expected,flag\n");
    for e in &ratios.entries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            e.step,
            fmt_f(e.factor),
            e.size,
            fmt_f(e.base_dderiv),
            fmt_f(e.scaled_dderiv),
            fmt_opt(e.ratio),
            fmt_f(e.expected),
            e.flag.as_deref().unwrap_or("")
        );
    }
    staged.add("ratio.csv", csv, "ratio");

    let mut csv = String::from("step,size,label,s_upd,improvement,flags\n");
    for r in &table.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.step,
            r.size,
            r.label,
            fmt_f(r.s_upd),
            fmt_opt(r.improvement),
            join_flags(&r.flags)
        );
    }
    staged.add("batchsize_improvements.csv", csv, "batch_size");

    let mut plot = LinePlot::new("directional derivative ratio vs batch-size factor", "step", "ratio");
    for &f in &factors {
        let pts: Vec<(f64, f64)> = ratios
            .entries
            .iter()
            .filter(|e| e.factor == f)
            .map(|e| (e.step as f64, e.ratio.unwrap_or(f64::NAN)))
            .collect();
        let steps: Vec<f64> = pts.iter().map(|p| p.0).collect();
        plot.push(Series::line(format!("f = {f}"), pts));
        let lo = steps.first().copied().unwrap_or(0.0);
        let hi = steps.last().copied().unwrap_or(0.0);
        plot.push(Series::line(format!("e.r. = {f}"), vec![(lo, f), (hi, f)]).dashed());
    }
    staged.add("ratio.svg", plot.render(), "ratio");

    let trends: Vec<LabelTrend> = table
        .labels
        .iter()
        .map(|l| LabelTrend {
            label: l.clone(),
            monotone_fraction: table.monotone_fraction(l),
            mean_improvement: sizes
                .iter()
                .map(|&s| {
                    let v = table.improvements(l, s);
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect(),
        })
        .collect();
    let mut plot = LinePlot::new("mean loss improvement vs batch size", "batch size", "improvement");
    for t in &trends {
        plot.push(Series::line(
            t.label.clone(),
            sizes.iter().map(|&s| s as f64).zip(t.mean_improvement.iter().copied()).collect(),
        ));
    }
    staged.add("batchsize.svg", plot.render(), "batch_size");

    let mut summary = BatchsizeSummary {
        out: out.to_path_buf(),
        lines: archive.scans.iter().map(|s| s.meta.step).collect(),
        shrink_rule: rule,
        seed,
        ratios: factors
            .iter()
            .map(|&f| FactorRatio {
                factor: f,
                expected: f,
                mean_ratio: ratios.mean_ratio(f),
                median_ratio: median(
                    ratios
                        .entries
                        .iter()
                        .filter(|e| e.factor == f)
                        .filter_map(|e| e.ratio)
                        .collect(),
                ),
            })
            .collect(),
        sizes,
        trends,
        artifacts: Vec::new(),
    };
    staged.json("summary.json", &summary, "summary");
    staged.add(super::RUN_CONF, conf.resolved_text(), "config");
    summary.artifacts = staged.commit(out)?;
    Ok(summary)
}
