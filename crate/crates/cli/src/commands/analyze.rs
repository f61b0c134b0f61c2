use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use linescope_core::analysis::{argmin_refined, distance_matrix, polyfit, proportionality, Correlation, Curve, Window};
use linescope_core::archive::{read_scan_archive, ScanArchive};
use linescope_core::linescan::LineScan;
use linescope_core::Error;

use super::{effective_config, fmt_f, fmt_opt, Artifact, Staged};
use crate::config::ConfigMap;
use crate::error::{CliError, CliResult};
use crate::svg::{heatmap, LinePlot, Series};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitRow {
    pub step: usize,
    /// Degree-2 coefficients `a s^2 + b s + c`.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub slope1: f64,
    pub mae1: f64,
    pub mae2: f64,
    pub rmse1: f64,
    pub rmse2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ProportionalityReport {
    Fitted {
        c: f64,
        correlation: Correlation,
        valid_pairs: usize,
    },
    Undefined {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub out: PathBuf,
    pub lines: usize,
    pub window: Window,
    pub invalid_lines: Vec<String>,
    /// Mean off-diagonal distance among the first and the last quarter of
    /// lines.
    pub early_block_mean: Option<f64>,
    pub late_block_mean: Option<f64>,
    pub block_size: usize,
    /// Lines where the quadratic fit is at least as good as the linear one.
    pub nesting_fraction: f64,
    pub fits: Vec<FitRow>,
    pub proportionality: ProportionalityReport,
    pub artifacts: Vec<Artifact>,
}

/// `s_opt` vs gradient norm over `scans`, and its CSV table.
pub(crate) fn proportionality_of(scans: &[&LineScan]) -> CliResult<(ProportionalityReport, String)> {
    let mut s_opt = Vec::with_capacity(scans.len());
    let mut boundary = Vec::with_capacity(scans.len());
    for s in scans {
        let a = argmin_refined(&s.full_curve())?;
        s_opt.push(a.s);
        boundary.push(a.boundary);
    }
    let norms: Vec<f64> = scans.iter().map(|s| s.meta.grad_norm).collect();
    let mut csv = String::from("step,s_opt,boundary,grad_norm,ratio\n");
    let report = match proportionality(&s_opt, &boundary, &norms) {
        Ok(p) => {
            for (i, s) in scans.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    s.meta.step,
                    fmt_f(s_opt[i]),
                    boundary[i] as u8,
                    fmt_f(norms[i]),
                    fmt_opt(p.ratio[i])
                );
            }
            ProportionalityReport::Fitted {
                c: p.c,
                correlation: p.correlation,
                valid_pairs: p.valid_pairs,
            }
        }
        Err(Error::Spec(reason)) => {
            for (i, s) in scans.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{},{},", s.meta.step, fmt_f(s_opt[i]), boundary[i] as u8, fmt_f(norms[i]));
            }
            ProportionalityReport::Undefined { reason }
        }
        Err(e) => return Err(e.into()),
    };
    Ok((report, csv))
}

pub(crate) fn proportionality_svg(csv_rows: &[(f64, f64)], c: Option<f64>) -> String {
    let mut plot = LinePlot::new("optimal step vs gradient norm", "gradient norm", "s_opt");
    plot.push(Series::line("lines", csv_rows.to_vec()).scatter());
    if let Some(c) = c {
        let hi = csv_rows.iter().map(|p| p.0).fold(0.0, f64::max);
        plot.push(Series::line(format!("s = {c:.4} |g|"), vec![(0.0, 0.0), (hi, c * hi)]).dashed());
    }
    plot.render()
}

fn line_svg(scan: &LineScan, label: &str) -> String {
    let s = scan.grid.points();
    let full: Vec<(f64, f64)> = s
        .iter()
        .zip(&scan.full)
        .zip(&scan.masked)
        .map(|((&x, &y), &m)| (x, if m { f64::NAN } else { y }))
        .collect();
    let defining: Vec<(f64, f64)> = s.iter().copied().zip(scan.defining.iter().copied()).collect();
    let mut plot = LinePlot::new(format!("losses along line {label}"), "step size s", "loss");
    plot.push(Series::line("full batch", full));
    plot.push(Series::line("defining batch", defining).dashed());
    plot.render()
}

fn load_archives(paths: &[PathBuf]) -> CliResult<Vec<ScanArchive>> {
    if paths.is_empty() {
        return Err(CliError::Core(Error::Spec("no scan archives given".into())));
    }
    let archives: Vec<ScanArchive> = paths.iter().map(|p| read_scan_archive(p)).collect::<Result<_, _>>()?;
    let grid = &archives[0].scans[0].grid;
    for a in &archives {
        if let Some(s) = a.scans.iter().find(|s| &s.grid != grid) {
            return Err(CliError::Core(Error::Spec(format!(
                "archive {} step {} uses a different grid",
                a.root.display(),
                s.meta.step
            ))));
        }
    }
    Ok(archives)
}

pub fn cmd_analyze(overrides: &ConfigMap, archives: &[PathBuf], out: &Path) -> CliResult<AnalysisSummary> {
    let archives = load_archives(archives)?;
    let conf = effective_config(&archives[0].root, overrides)?;
    let window = conf.window(archives[0].run.train.momentum)?;
    let multi = archives.len() > 1;
    let mut scans: Vec<&LineScan> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (i, a) in archives.iter().enumerate() {
        for s in &a.scans {
            scans.push(s);
            labels.push(if multi { format!("{i}:{}", s.meta.step) } else { s.meta.step.to_string() });
        }
    }
    let curves: Vec<Curve> = scans.iter().map(|s| s.full_curve()).collect();
    let dm = distance_matrix(&curves, window)?;

    let mut fits = Vec::with_capacity(scans.len());
    for (s, c) in scans.iter().zip(&curves) {
        let f1 = polyfit(c, 1, window)?;
        let f2 = polyfit(c, 2, window)?;
        fits.push(FitRow {
            step: s.meta.step,
            a: f2.a.unwrap_or(0.0),
            b: f2.b,
            c: f2.c,
            slope1: f1.b,
            mae1: f1.mae,
            mae2: f2.mae,
            rmse1: f1.rmse,
            rmse2: f2.rmse,
        });
    }
    let (prop, prop_csv) = proportionality_of(&scans)?;

    let n = scans.len();
    let q = n / 4;
    let (early, late) = if q >= 2 {
        (dm.block_mean(0..q), dm.block_mean(n - q..n))
    } else {
        (None, None)
    };
    let nested = fits.iter().filter(|f| f.rmse2 <= f.rmse1 + 1e-12).count();

    let mut staged = Staged::default();
    let mut csv = String::from("line");
    for l in &labels {
        csv.push(',');
        csv.push_str(l);
    }
    csv.push('\n');
    for i in 0..n {
        csv.push_str(&labels[i]);
        for j in 0..n {
            csv.push(',');
            csv.push_str(&fmt_f(dm.get(i, j)));
        }
        csv.push('\n');
    }
    staged.add("distance_matrix.csv", csv, "distance_matrix");
    staged.add("distance_matrix.svg", heatmap("shape distance between lines", &labels, &dm.values), "distance_matrix");

    let mut csv = String::from("line_a,line_b,mae\n");
    for (i, d) in dm.consecutive.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{}", labels[i], labels[i + 1], fmt_f(*d));
    }
    staged.add("consecutive_mae.csv", csv, "distance_matrix");
    let mut plot = LinePlot::new("shape distance of consecutive lines", "line index", "MAE");
    plot.push(Series::line(
        "consecutive",
        dm.consecutive.iter().enumerate().map(|(i, &d)| (i as f64, d)).collect(),
    ));
    staged.add("consecutive_mae.svg", plot.render(), "distance_matrix");

    let mut csv = String::from("line,step,a,b,c,curvature,slope1,mae1,mae2,rmse1,rmse2\n");
    for (l, f) in labels.iter().zip(&fits) {
        let _ = writeln!(
            csv,
            "{l},{},{},{},{},{},{},{},{},{},{}",
            f.step,
            fmt_f(f.a),
            fmt_f(f.b),
            fmt_f(f.c),
            fmt_f(2.0 * f.a),
            fmt_f(f.slope1),
            fmt_f(f.mae1),
            fmt_f(f.mae2),
            fmt_f(f.rmse1),
            fmt_f(f.rmse2)
        );
    }
    staged.add("fits.csv", csv, "fit_coefficients");
    let xs = |g: &dyn Fn(&FitRow) -> f64| fits.iter().enumerate().map(|(i, f)| (i as f64, g(f))).collect::<Vec<_>>();
    let mut plot = LinePlot::new("quadratic fit along training", "line index", "coefficient");
    plot.push(Series::line("curvature 2a", xs(&|f| 2.0 * f.a)));
    plot.push(Series::line("slope b", xs(&|f| f.b)));
    staged.add("fits.svg", plot.render(), "fit_coefficients");
    let mut plot = LinePlot::new("polynomial fit error", "line index", "MAE");
    plot.push(Series::line("degree 1", xs(&|f| f.mae1)));
    plot.push(Series::line("degree 2", xs(&|f| f.mae2)));
    staged.add("fit_error.svg", plot.render(), "fit_coefficients");

    let pts: Vec<(f64, f64)> = scans
        .iter()
        .map(|s| Ok((s.meta.grad_norm, argmin_refined(&s.full_curve())?.s)))
        .collect::<Result<_, Error>>()?;
    let c = match &prop {
        ProportionalityReport::Fitted { c, .. } => Some(*c),
        ProportionalityReport::Undefined { .. } => None,
    };
    staged.add("proportionality.csv", prop_csv, "proportionality");
    staged.add("proportionality.svg", proportionality_svg(&pts, c), "proportionality");

    for (s, l) in scans.iter().zip(&labels) {
        staged.add(format!("lines/line_{}.svg", l.replace(':', "_")), line_svg(s, l), "lines");
    }

    let mut summary = AnalysisSummary {
        out: out.to_path_buf(),
        lines: n,
        window,
        invalid_lines: scans
            .iter()
            .zip(&labels)
            .filter(|(s, _)| !s.is_valid())
            .map(|(_, l)| l.clone())
            .collect(),
        early_block_mean: early,
        late_block_mean: late,
        block_size: q,
        nesting_fraction: nested as f64 / n as f64,
        fits,
        proportionality: prop,
        artifacts: Vec::new(),
    };
    #[derive(Serialize)]
    struct Brief<'a> {
        lines: usize,
        window: Window,
        invalid_lines: &'a [String],
        early_block_mean: Option<f64>,
        late_block_mean: Option<f64>,
        block_size: usize,
        nesting_fraction: f64,
        proportionality: &'a ProportionalityReport,
    }
    staged.json(
        "summary.json",
        &Brief {
            lines: summary.lines,
            window,
            invalid_lines: &summary.invalid_lines,
            early_block_mean: early,
            late_block_mean: late,
            block_size: q,
            nesting_fraction: summary.nesting_fraction,
            proportionality: &summary.proportionality,
        },
        "summary",
    );
    staged.add(super::RUN_CONF, conf.resolved_text(), "config");
    summary.artifacts = staged.commit(out)?;
    Ok(summary)
}
