//! Update step-size rules scored on the lines visited by a recorded run.
//!
//! Every strategy proposes `s_upd` on a scanned line; it is compared with the
//! full-batch optimum `s_opt` and credited with `l(0) - l(s_upd)`. The next
//! line never depends on a strategy's choice.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{argmin_refined, improvement, moving_average, Argmin, Curve, Interpolated, LineLoss};
use crate::linescan::LineScan;
use crate::nncore::mean_in_order;
use crate::trainer::ZERO_DIRECTION_NORM;
use crate::{Error, Result};

pub const DEFAULT_MU: f64 = 0.1;
pub const DEFAULT_KERNEL: usize = 25;
const DEGENERATE_DENOMINATOR: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    Sgd { lr: f64 },
    Pal { mu: f64 },
    Fbpal { mu: f64 },
    ExactMinibatch,
    ExactFullbatch,
    /// Fixed step regardless of the line; `step = 0` is the null strategy.
    Constant { step: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub label: String,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Result<Self> {
        let label = match kind {
            StrategyKind::Sgd { lr } => {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(Error::spec(format!("sgd learning rate must be positive, got {lr}")));
                }
                format!("sgd_{lr}")
            }
            StrategyKind::Pal { mu } | StrategyKind::Fbpal { mu } => {
                if !(mu > 0.0 && mu.is_finite()) {
                    return Err(Error::spec(format!("mu must be positive, got {mu}")));
                }
                let name = if matches!(kind, StrategyKind::Pal { .. }) { "pal" } else { "fbpal" };
                format!("{name}_{mu}")
            }
            StrategyKind::ExactMinibatch => "exact_minibatch".into(),
            StrategyKind::ExactFullbatch => "exact_fullbatch".into(),
            StrategyKind::Constant { step } => {
                if !step.is_finite() {
                    return Err(Error::spec("constant step must be finite"));
                }
                format!("constant_{step}")
            }
        };
        Ok(StrategySpec { kind, label })
    }

    /// SGD at every rate, PAL and FBPAL at `mu`, and both exact searches.
    pub fn standard_set(lrs: &[f64], mu: f64) -> Result<Vec<StrategySpec>> {
        let mut specs: Vec<StrategySpec> = lrs
            .iter()
            .map(|&lr| StrategySpec::new(StrategyKind::Sgd { lr }))
            .collect::<Result<_>>()?;
        specs.push(StrategySpec::new(StrategyKind::Pal { mu })?);
        specs.push(StrategySpec::new(StrategyKind::Fbpal { mu })?);
        specs.push(StrategySpec::new(StrategyKind::ExactMinibatch)?);
        specs.push(StrategySpec::new(StrategyKind::ExactFullbatch)?);
        Ok(specs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Parabola with non-positive curvature; fallback step `mu * |l'(0)|`.
    NonConvex,
    /// Parabola denominator vanished; fallback step used.
    Degenerate,
    /// The point at `mu` was masked; the nearest unmasked point was used.
    MaskedMu,
    /// Arg-min on the edge of the scanned interval.
    Boundary,
    /// Improvement read by linear interpolation instead of re-evaluation.
    Interpolated,
    /// `s_upd` outside the scanned interval and no exact evaluator.
    OutOfRange,
    ZeroDirection,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::NonConvex => "nonconvex",
            Flag::Degenerate => "degenerate",
            Flag::MaskedMu => "masked_mu",
            Flag::Boundary => "boundary",
            Flag::Interpolated => "interpolated",
            Flag::OutOfRange => "out_of_range",
            Flag::ZeroDirection => "zero_direction",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `|`-joined flag list, empty when there are none.
pub fn join_flags(flags: &[Flag]) -> String {
    flags.iter().map(|f| f.as_str()).collect::<Vec<_>>().join("|")
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepChoice {
    pub s: f64,
    pub flags: Vec<Flag>,
}

/// `lr * |g|`: the Newton step along `-g/|g|` with curvature `1/lr`.
pub fn step_sgd(lr: f64, grad_norm: f64) -> f64 {
    lr * grad_norm
}

/// Vertex of the parabola through `l(0) = l0`, `l'(0) = dderiv` and
/// `l(mu) = l_mu`.
///
/// Non-positive curvature or a vanishing denominator returns the bounded
/// fallback `mu * |dderiv|`, flagged.
pub fn step_pal(l0: f64, dderiv: f64, l_mu: f64, mu: f64) -> Result<StepChoice> {
    if !(mu > 0.0) {
        return Err(Error::spec(format!("mu must be positive, got {mu}")));
    }
    if !(l0.is_finite() && dderiv.is_finite() && l_mu.is_finite() && mu.is_finite()) {
        return Err(Error::spec("parabolic step needs finite inputs"));
    }
    let den = l_mu - l0 - dderiv * mu;
    let fallback = mu * dderiv.abs();
    if den.abs() < DEGENERATE_DENOMINATOR {
        return Ok(StepChoice {
            s: fallback,
            flags: vec![Flag::Degenerate],
        });
    }
    if den < 0.0 {
        return Ok(StepChoice {
            s: fallback,
            flags: vec![Flag::NonConvex],
        });
    }
    Ok(StepChoice {
        s: -dderiv * mu * mu / (2.0 * den),
        flags: Vec::new(),
    })
}

fn zero_index(curve: &Curve) -> Result<usize> {
    curve
        .s
        .iter()
        .position(|&s| s == 0.0)
        .ok_or_else(|| Error::spec("curve has no point at s = 0"))
}

/// Grid index used for the second parabola sample: the positive point
/// nearest to `mu`, moving to the nearest unmasked one if needed.
fn mu_index(curve: &Curve, mu: f64) -> Result<(usize, Vec<Flag>)> {
    let z = zero_index(curve)?;
    if z + 1 >= curve.len() {
        return Err(Error::spec("curve has no positive step sizes"));
    }
    let mut best = z + 1;
    for i in z + 1..curve.len() {
        if (curve.s[i] - mu).abs() < (curve.s[best] - mu).abs() {
            best = i;
        }
    }
    if !curve.mask[best] {
        return Ok((best, Vec::new()));
    }
    let mut candidates: Vec<usize> = (z + 1..curve.len()).filter(|&i| !curve.mask[i]).collect();
    candidates.sort_by(|&a, &b| {
        (curve.s[a] - curve.s[best])
            .abs()
            .total_cmp(&(curve.s[b] - curve.s[best]).abs())
            .then(a.cmp(&b))
    });
    candidates
        .first()
        .map(|&i| (i, vec![Flag::MaskedMu]))
        .ok_or_else(|| Error::Numeric("every positive grid point is masked".into()))
}

/// Parabolic step on a curve with the slope at the origin supplied.
pub fn step_pal_on_curve(curve: &Curve, dderiv: f64, mu: f64) -> Result<StepChoice> {
    let z = zero_index(curve)?;
    if curve.mask[z] {
        return Err(Error::Numeric("loss at s = 0 is masked".into()));
    }
    let (m, mut flags) = mu_index(curve, mu)?;
    let mut choice = step_pal(curve.loss[z], dderiv, curve.loss[m], curve.s[m])?;
    flags.append(&mut choice.flags);
    choice.flags = flags;
    Ok(choice)
}

/// Centered finite difference at the origin with the grid spacing.
pub fn slope_at_origin(curve: &Curve) -> Result<f64> {
    let z = zero_index(curve)?;
    if z == 0 || z + 1 >= curve.len() {
        return Err(Error::spec("origin slope needs points on both sides of s = 0"));
    }
    if curve.mask[z - 1] || curve.mask[z + 1] {
        return Err(Error::Numeric("origin neighbours are masked".into()));
    }
    Ok((curve.loss[z + 1] - curve.loss[z - 1]) / (curve.s[z + 1] - curve.s[z - 1]))
}

/// Parabolic step on the full-batch curve. `exact_dderiv` replaces the
/// finite-difference slope when the defining batch is the whole dataset.
pub fn step_fbpal(full: &Curve, mu: f64, exact_dderiv: Option<f64>) -> Result<StepChoice> {
    let dderiv = match exact_dderiv {
        Some(d) => d,
        None => slope_at_origin(full)?,
    };
    step_pal_on_curve(full, dderiv, mu)
}

/// Refined arg-min of `curve`.
pub fn step_exact(curve: &Curve) -> Result<StepChoice> {
    let a = argmin_refined(curve)?;
    Ok(StepChoice {
        s: a.s,
        flags: if a.boundary { vec![Flag::Boundary] } else { Vec::new() },
    })
}

/// One scanned line with an optional exact full-batch evaluator.
#[derive(Clone, Copy)]
pub struct LineInput<'a> {
    pub scan: &'a LineScan,
    pub exact: Option<&'a (dyn LineLoss + Sync)>,
}

impl<'a> LineInput<'a> {
    pub fn new(scan: &'a LineScan) -> Self {
        LineInput { scan, exact: None }
    }

    pub fn with_exact(scan: &'a LineScan, exact: &'a (dyn LineLoss + Sync)) -> Self {
        LineInput {
            scan,
            exact: Some(exact),
        }
    }
}

/// `l(0) - l(s)` on the line, exact when possible.
pub(crate) fn score(line: &LineInput<'_>, full: &Curve, s: f64, flags: &mut Vec<Flag>) -> Result<Option<f64>> {
    let l0 = line.scan.origin_loss();
    match line.exact {
        Some(exact) => Ok(Some(improvement(l0, exact, s)?)),
        None => {
            if s != 0.0 && !flags.contains(&Flag::Interpolated) {
                flags.push(Flag::Interpolated);
            }
            match improvement(l0, &Interpolated(full), s) {
                Ok(v) => Ok(Some(v)),
                Err(Error::Spec(_)) | Err(Error::Numeric(_)) => {
                    flags.push(Flag::OutOfRange);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyOutcome {
    pub step: usize,
    pub label: String,
    pub s_upd: f64,
    pub s_opt: f64,
    /// `s_opt - s_upd`.
    pub distance: f64,
    /// `None` when the loss at `s_upd` could not be determined.
    pub improvement: Option<f64>,
    pub flags: Vec<Flag>,
}

/// Proposed step of `spec` on `line`, before scoring.
pub fn propose(spec: &StrategySpec, line: &LineInput<'_>, full: &Curve) -> Result<StepChoice> {
    let meta = &line.scan.meta;
    let mut choice = match spec.kind {
        StrategyKind::Sgd { lr } => StepChoice {
            s: step_sgd(lr, meta.step_norm()),
            flags: Vec::new(),
        },
        StrategyKind::Pal { mu } => step_pal_on_curve(&line.scan.defining_curve(), meta.dderiv, mu)?,
        StrategyKind::Fbpal { mu } => {
            let exact = line.scan.full_is_defining().then_some(meta.dderiv);
            step_fbpal(full, mu, exact)?
        }
        StrategyKind::ExactMinibatch => step_exact(&line.scan.defining_curve())?,
        StrategyKind::ExactFullbatch => step_exact(full)?,
        StrategyKind::Constant { step } => StepChoice {
            s: step,
            flags: Vec::new(),
        },
    };
    if meta.grad_norm < ZERO_DIRECTION_NORM {
        choice.flags.push(Flag::ZeroDirection);
    }
    Ok(choice)
}

fn outcome(spec: &StrategySpec, line: &LineInput<'_>, full: &Curve, opt: &Argmin) -> Result<StrategyOutcome> {
    let mut choice = propose(spec, line, full)?;
    let improvement = score(line, full, choice.s, &mut choice.flags)?;
    if opt.boundary && !choice.flags.contains(&Flag::Boundary) {
        choice.flags.push(Flag::Boundary);
    }
    choice.flags.sort();
    choice.flags.dedup();
    Ok(StrategyOutcome {
        step: line.scan.meta.step,
        label: spec.label.clone(),
        s_upd: choice.s,
        s_opt: opt.s,
        distance: opt.s - choice.s,
        improvement,
        flags: choice.flags,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategySeries {
    pub label: String,
    pub distance: Vec<f64>,
    /// Undetermined improvements count as 0 here.
    pub improvement: Vec<f64>,
    pub smoothed_distance: Vec<f64>,
    pub smoothed_improvement: Vec<f64>,
    pub cumulative_improvement: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub label: String,
    pub mean_abs_distance: f64,
    /// Mean of `s_upd - s_opt`; positive means overshooting.
    pub mean_overshoot: f64,
    pub mean_improvement: f64,
    pub total_improvement: f64,
    pub flagged_lines: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyTable {
    pub specs: Vec<StrategySpec>,
    pub steps: Vec<usize>,
    pub s_opt: Vec<Argmin>,
    /// `outcomes[spec][line]`.
    pub outcomes: Vec<Vec<StrategyOutcome>>,
    pub kernel: usize,
}

impl StrategyTable {
    pub fn series(&self, spec: usize) -> Result<StrategySeries> {
        let rows = &self.outcomes[spec];
        let distance: Vec<f64> = rows.iter().map(|o| o.distance).collect();
        let improvement: Vec<f64> = rows.iter().map(|o| o.improvement.unwrap_or(0.0)).collect();
        let mut acc = 0.0;
        let cumulative_improvement = improvement
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        Ok(StrategySeries {
            label: self.specs[spec].label.clone(),
            smoothed_distance: moving_average(&distance, self.kernel)?,
            smoothed_improvement: moving_average(&improvement, self.kernel)?,
            distance,
            improvement,
            cumulative_improvement,
        })
    }

    pub fn summary(&self, spec: usize) -> StrategySummary {
        let rows = &self.outcomes[spec];
        let abs: Vec<f64> = rows.iter().map(|o| o.distance.abs()).collect();
        let over: Vec<f64> = rows.iter().map(|o| -o.distance).collect();
        let imp: Vec<f64> = rows.iter().map(|o| o.improvement.unwrap_or(0.0)).collect();
        StrategySummary {
            label: self.specs[spec].label.clone(),
            mean_abs_distance: mean_in_order(&abs),
            mean_overshoot: mean_in_order(&over),
            mean_improvement: mean_in_order(&imp),
            total_improvement: imp.iter().sum(),
            flagged_lines: rows.iter().filter(|o| !o.flags.is_empty()).count(),
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.label == label)
    }
}

/// Scores every strategy on every line. Per-line problems become flags;
/// only malformed input aborts.
pub fn evaluate_strategies(lines: &[LineInput<'_>], specs: &[StrategySpec], kernel: usize) -> Result<StrategyTable> {
    if lines.is_empty() {
        return Err(Error::spec("no lines to evaluate"));
    }
    if specs.is_empty() {
        return Err(Error::spec("no strategies to evaluate"));
    }
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::spec(format!("kernel size must be odd and positive, got {kernel}")));
    }
    let per_line: Vec<(Argmin, Vec<StrategyOutcome>)> = lines
        .par_iter()
        .map(|line| {
            let full = line.scan.full_curve();
            let opt = argmin_refined(&full)?;
            let row = specs
                .iter()
                .map(|spec| outcome(spec, line, &full, &opt))
                .collect::<Result<Vec<_>>>()?;
            Ok((opt, row))
        })
        .collect::<Result<_>>()?;
    let mut outcomes: Vec<Vec<StrategyOutcome>> = vec![Vec::with_capacity(lines.len()); specs.len()];
    let mut s_opt = Vec::with_capacity(lines.len());
    for (opt, row) in per_line {
        s_opt.push(opt);
        for (k, o) in row.into_iter().enumerate() {
            outcomes[k].push(o);
        }
    }
    Ok(StrategyTable {
        specs: specs.to_vec(),
        steps: lines.iter().map(|l| l.scan.meta.step).collect(),
        s_opt,
        outcomes,
        kernel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sgd_arithmetic() {
        assert!((step_sgd(0.1, 3.0) - 0.3).abs() < 1e-15);
        assert_eq!(step_sgd(0.1, 0.0), 0.0);
        let (lr, g) = (0.1, 3.0);
        let k = 1.0 / lr;
        assert_eq!(step_sgd(lr, g), lr * g);
        assert!((step_sgd(lr, g) - (-(-g) / k)).abs() < 1e-15);
    }

    #[test]
    fn pal_vertex_of_exact_parabola() {
        let c = step_pal(1.0, -4.0, -0.5, 0.5).unwrap();
        assert!((c.s - 1.0).abs() < 1e-15);
        assert!(c.flags.is_empty());
    }

    #[test]
    fn pal_linear_is_degenerate() {
        let mu = 0.3;
        let c = step_pal(0.0, -1.0, -mu, mu).unwrap();
        assert_eq!(c.flags, vec![Flag::Degenerate]);
        assert_eq!(c.s, mu);
    }

    #[test]
    fn pal_concave_falls_back() {
        let c = step_pal(0.0, -1.0, -1.0, 0.5).unwrap();
        assert_eq!(c.flags, vec![Flag::NonConvex]);
        assert_eq!(c.s, 0.5);
        assert!(step_pal(0.0, -1.0, 1.0, 0.0).is_err());
        assert!(step_pal(f64::NAN, -1.0, 1.0, 0.1).is_err());
    }

    fn sample(f: impl Fn(f64) -> f64) -> Curve {
        let s: Vec<f64> = (-50..=50).map(|i| i as f64 * 0.01).collect();
        let l = s.iter().map(|&x| f(x)).collect();
        Curve::new(s, l)
    }

    #[test]
    fn fbpal_matches_vertex_on_parabola() {
        let c = sample(|x| 3.0 * x * x - 0.6 * x + 2.0);
        let step = step_fbpal(&c, 0.1, None).unwrap();
        assert!((step.s - 0.1).abs() < 1e-9, "{}", step.s);
    }

    #[test]
    fn fbpal_masked_mu_moves_to_neighbour() {
        let mut c = sample(|x| 3.0 * x * x - 0.6 * x + 2.0);
        let i = c.s.iter().position(|&s| (s - 0.1).abs() < 1e-12).unwrap();
        c.loss[i] = f64::INFINITY;
        c.mask[i] = true;
        let step = step_fbpal(&c, 0.1, None).unwrap();
        assert_eq!(step.flags, vec![Flag::MaskedMu]);
        assert!((step.s - 0.1).abs() < 1e-9);
    }

    #[test]
    fn exact_step_cases() {
        let c = Curve::new(vec![-0.1, 0.0, 0.1], vec![1.0, 0.0, 1.0]);
        assert_eq!(step_exact(&c).unwrap().s, 0.0);
        let dec = sample(|x| -x);
        assert_eq!(step_exact(&dec).unwrap().flags, vec![Flag::Boundary]);
    }

    #[test]
    fn labels_and_validation() {
        assert_eq!(StrategySpec::new(StrategyKind::Sgd { lr: 0.05 }).unwrap().label, "sgd_0.05");
        assert_eq!(StrategySpec::new(StrategyKind::Pal { mu: 0.1 }).unwrap().label, "pal_0.1");
        assert!(StrategySpec::new(StrategyKind::Sgd { lr: 0.0 }).is_err());
        assert!(StrategySpec::new(StrategyKind::Fbpal { mu: -1.0 }).is_err());
        assert_eq!(StrategySpec::standard_set(&[0.1, 0.05], 0.1).unwrap().len(), 6);
    }

    proptest! {
        #[test]
        fn pal_recovers_vertex(a in 0.1f64..10.0, b in 0.1f64..5.0, neg in any::<bool>(), c in -5.0f64..5.0,
                               mu in prop::sample::select(vec![0.01, 0.1, 1.0])) {
            let b = if neg { -b } else { b };
            let l = |s: f64| a * s * s + b * s + c;
            let got = step_pal(l(0.0), b, l(mu), mu).unwrap();
            let vertex = -b / (2.0 * a);
            prop_assert!(got.flags.is_empty());
            prop_assert!(((got.s - vertex) / vertex).abs() < 1e-9);
        }

        #[test]
        fn sgd_is_linear(lr in 0.001f64..1.0, g in 0.0f64..10.0, e in 0i32..6) {
            let k = 2f64.powi(e);
            prop_assert_eq!(step_sgd(lr * k, g), k * step_sgd(lr, g));
            prop_assert_eq!(step_sgd(lr, g * k), k * step_sgd(lr, g));
        }
    }
}
