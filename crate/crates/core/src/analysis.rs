//! Curve statistics: min-shift normalization, MAE shape distances,
//! polynomial fits, refined minima, improvements, smoothing and the
//! step-size / gradient-norm proportionality summary.
//!
//! Masked entries are ignored by every statistic.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nncore::mean_in_order;
use crate::{Error, Result};

const WINDOW_EPS: f64 = 1e-9;

/// A loss curve over ascending step sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub s: Vec<f64>,
    pub loss: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Curve {
    /// Non-finite losses are masked.
    pub fn new(s: Vec<f64>, loss: Vec<f64>) -> Self {
        let mask = loss.iter().map(|v| !v.is_finite()).collect();
        Curve { s, loss, mask }
    }

    /// Explicit mask; non-finite losses are masked in addition.
    pub fn with_mask(s: Vec<f64>, loss: Vec<f64>, mask: Vec<bool>) -> Self {
        assert_eq!(s.len(), loss.len());
        assert_eq!(s.len(), mask.len());
        let mask = mask.iter().zip(&loss).map(|(&m, v)| m || !v.is_finite()).collect();
        Curve { s, loss, mask }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn unmasked(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.len()).filter(|&i| !self.mask[i]).map(|i| (i, self.s[i], self.loss[i]))
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Points with `lo <= s <= hi` (up to a tiny tolerance).
    pub fn window(&self, window: Window) -> Curve {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.s[i] >= window.lo - WINDOW_EPS && self.s[i] <= window.hi + WINDOW_EPS)
            .collect();
        Curve {
            s: keep.iter().map(|&i| self.s[i]).collect(),
            loss: keep.iter().map(|&i| self.loss[i]).collect(),
            mask: keep.iter().map(|&i| self.mask[i]).collect(),
        }
    }

    pub fn shifted(&self, offset: f64) -> Curve {
        Curve {
            s: self.s.clone(),
            loss: self.loss.iter().map(|v| v + offset).collect(),
            mask: self.mask.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::spec(format!("empty window [{lo}, {hi}]")));
        }
        Ok(Window { lo, hi })
    }

    /// Default shape-comparison window: narrower for plain SGD.
    pub fn default_for(momentum: f64) -> Self {
        if momentum > 0.0 {
            Window { lo: -0.5, hi: 0.5 }
        } else {
            Window { lo: -0.2, hi: 0.2 }
        }
    }
}

/// Restricts to `window` and subtracts the window minimum.
pub fn shift_to_zero(curve: &Curve, window: Window) -> Result<Curve> {
    let w = curve.window(window);
    if w.unmasked_count() < 3 {
        return Err(Error::spec(format!(
            "window [{}, {}] holds {} unmasked points, need at least 3",
            window.lo,
            window.hi,
            w.unmasked_count()
        )));
    }
    let min = w.unmasked().map(|(_, _, v)| v).fold(f64::INFINITY, f64::min);
    Ok(w.shifted(-min))
}

fn same_grid(a: &Curve, b: &Curve) -> Result<()> {
    if a.s.len() != b.s.len() || a.s.iter().zip(&b.s).any(|(x, y)| x.to_bits() != y.to_bits()) {
        return Err(Error::spec("curves are not sampled on the same grid"));
    }
    Ok(())
}

/// Mean absolute difference of the two min-shifted curves over jointly
/// unmasked window points.
pub fn mae_distance(a: &Curve, b: &Curve, window: Window) -> Result<f64> {
    same_grid(a, b)?;
    let sa = shift_to_zero(a, window)?;
    let sb = shift_to_zero(b, window)?;
    let diffs: Vec<f64> = (0..sa.len())
        .filter(|&i| !sa.mask[i] && !sb.mask[i])
        .map(|i| (sa.loss[i] - sb.loss[i]).abs())
        .collect();
    if diffs.is_empty() {
        return Err(Error::spec("curves share no unmasked window points"));
    }
    Ok(mean_in_order(&diffs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub n: usize,
    /// Row-major `n x n`.
    pub values: Vec<f64>,
    /// Distances between consecutive curves `(i, i + 1)`.
    pub consecutive: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Mean of off-diagonal entries among rows/columns in `range`.
    pub fn block_mean(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let mut vals = Vec::new();
        for i in range.clone() {
            for j in range.clone() {
                if i != j {
                    vals.push(self.get(i, j));
                }
            }
        }
        (!vals.is_empty()).then(|| mean_in_order(&vals))
    }
}

/// Pairwise [`mae_distance`] matrix; symmetric with a zero diagonal.
pub fn distance_matrix(curves: &[Curve], window: Window) -> Result<DistanceMatrix> {
    let n = curves.len();
    if n == 0 {
        return Err(Error::spec("distance matrix needs at least one curve"));
    }
    for c in &curves[1..] {
        same_grid(&curves[0], c)?;
    }
    let shifted: Vec<Curve> = curves.iter().map(|c| shift_to_zero(c, window)).collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| shifted_mae(&shifted[i], &shifted[j]))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), &d) in pairs.iter().zip(&dists) {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    let consecutive = (0..n.saturating_sub(1)).map(|i| values[i * n + i + 1]).collect();
    Ok(DistanceMatrix { n, values, consecutive })
}

fn shifted_mae(a: &Curve, b: &Curve) -> Result<f64> {
    let diffs: Vec<f64> = (0..a.len())
        .filter(|&i| !a.mask[i] && !b.mask[i])
        .map(|i| (a.loss[i] - b.loss[i]).abs())
        .collect();
    if diffs.is_empty() {
        return Err(Error::spec("curves share no unmasked window points"));
    }
    Ok(mean_in_order(&diffs))
}

/// Least-squares polynomial `c + b s (+ a s^2)` over a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub degree: usize,
    pub c: f64,
    pub b: f64,
    /// Quadratic coefficient; `None` for degree 1.
    pub a: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub window: Window,
}

impl PolyFit {
    pub fn eval(&self, s: f64) -> f64 {
        self.c + self.b * s + self.a.unwrap_or(0.0) * s * s
    }

    /// Second directional derivative of the fit (`2a`).
    pub fn curvature(&self) -> f64 {
        2.0 * self.a.unwrap_or(0.0)
    }

    /// Position of the parabola's extremum, when there is one.
    pub fn vertex(&self) -> Option<f64> {
        self.a.filter(|a| *a != 0.0).map(|a| -self.b / (2.0 * a))
    }
}

pub fn polyfit(curve: &Curve, degree: usize, window: Window) -> Result<PolyFit> {
    if !(1..=2).contains(&degree) {
        return Err(Error::spec(format!("polynomial degree must be 1 or 2, got {degree}")));
    }
    let w = curve.window(window);
    let pts: Vec<(f64, f64)> = w.unmasked().map(|(_, s, v)| (s, v)).collect();
    if pts.len() < degree + 1 {
        return Err(Error::spec(format!(
            "degree {degree} fit needs {} unmasked points, window has {}",
            degree + 1,
            pts.len()
        )));
    }
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return Err(Error::Numeric(format!("rank-deficient degree {degree} fit: too few distinct step sizes")));
    }
    let m = pts.len();
    let design = DMatrix::from_fn(m, degree + 1, |r, c| pts[r].0.powi(c as i32));
    let rhs = DVector::from_iterator(m, pts.iter().map(|p| p.1));
    let coef = design
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numeric(format!("least-squares solve failed: {e}")))?;
    let fit = PolyFit {
        degree,
        c: coef[0],
        b: coef[1],
        a: (degree == 2).then(|| coef[2]),
        mae: 0.0,
        rmse: 0.0,
        window,
    };
    let resid: Vec<f64> = pts.iter().map(|&(s, v)| v - fit.eval(s)).collect();
    let abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
    let sq: Vec<f64> = resid.iter().map(|r| r * r).collect();
    Ok(PolyFit {
        mae: mean_in_order(&abs),
        rmse: mean_in_order(&sq).sqrt(),
        ..fit
    })
}

/// Minimum location of a sampled curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Argmin {
    pub s: f64,
    /// Grid index of the sampled minimum.
    pub index: usize,
    /// The sampled minimum sits on the first or last unmasked point.
    pub boundary: bool,
    /// A three-point parabolic vertex refined the sampled minimum.
    pub refined: bool,
}

/// Sampled arg-min (ties to the smallest `s`), refined by the vertex of the
/// parabola through the minimum and its two neighbours when those are
/// unmasked and locally convex. The result never leaves the bracketing cell.
pub fn argmin_refined(curve: &Curve) -> Result<Argmin> {
    let idx: Vec<usize> = curve.unmasked().map(|(i, _, _)| i).collect();
    if idx.len() < 3 {
        return Err(Error::spec(format!("arg-min needs 3 unmasked points, curve has {}", idx.len())));
    }
    let mut best = idx[0];
    for &i in &idx[1..] {
        if curve.loss[i] < curve.loss[best] {
            best = i;
        }
    }
    let at = |i: usize, boundary: bool, refined: bool, s: f64| Argmin {
        s,
        index: i,
        boundary,
        refined,
    };
    if best == idx[0] || best == *idx.last().unwrap() {
        return Ok(at(best, true, false, curve.s[best]));
    }
    let (l, r) = (best - 1, best + 1);
    if curve.mask[l] || curve.mask[r] {
        return Ok(at(best, false, false, curve.s[best]));
    }
    let (xa, xb, xc) = (curve.s[l], curve.s[best], curve.s[r]);
    let (fa, fb, fc) = (curve.loss[l], curve.loss[best], curve.loss[r]);
    let num = (xb - xa).powi(2) * (fb - fc) - (xb - xc).powi(2) * (fb - fa);
    let den = (xb - xa) * (fb - fc) - (xb - xc) * (fb - fa);
    // den < 0 means the three points are strictly convex around xb.
    if !(den < 0.0) || !num.is_finite() {
        return Ok(at(best, false, false, xb));
    }
    let v = (xb - 0.5 * num / den).clamp(xa, xc);
    Ok(at(best, false, true, v))
}

/// Loss along a line at arbitrary step sizes.
pub trait LineLoss {
    fn loss_at(&self, s: f64) -> Result<f64>;

    /// Whether values are exact re-evaluations rather than interpolations.
    fn is_exact(&self) -> bool {
        false
    }
}

/// Linear interpolation between adjacent grid points of a curve.
pub struct Interpolated<'a>(pub &'a Curve);

impl LineLoss for Interpolated<'_> {
    fn loss_at(&self, s: f64) -> Result<f64> {
        let c = self.0;
        let (first, last) = (c.s[0], c.s[c.len() - 1]);
        if !(s >= first - WINDOW_EPS && s <= last + WINDOW_EPS) {
            return Err(Error::spec(format!("step {s} outside the scanned interval [{first}, {last}]")));
        }
        let s = s.clamp(first, last);
        let j = c.s.partition_point(|&x| x <= s).clamp(1, c.len() - 1);
        let i = j - 1;
        if c.mask[i] || c.mask[j] {
            return Err(Error::Numeric(format!("interpolation at {s} touches a masked point")));
        }
        let t = (s - c.s[i]) / (c.s[j] - c.s[i]);
        if t == 0.0 {
            return Ok(c.loss[i]);
        }
        if t == 1.0 {
            return Ok(c.loss[j]);
        }
        Ok(c.loss[i] + t * (c.loss[j] - c.loss[i]))
    }
}

/// `l(0) - l(s_upd)`.
pub fn improvement(origin_loss: f64, line: &dyn LineLoss, s_upd: f64) -> Result<f64> {
    if s_upd == 0.0 {
        return Ok(0.0);
    }
    Ok(origin_loss - line.loss_at(s_upd)?)
}

/// Centered moving average with the window truncated at the edges.
pub fn moving_average(series: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::spec(format!("kernel size must be odd and positive, got {k}")));
    }
    let half = k / 2;
    Ok((0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(series.len());
            mean_in_order(&series[lo..hi])
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Correlation {
    Value { r: f64 },
    Undefined { reason: String },
}

impl Correlation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Correlation::Value { r } => Some(*r),
            Correlation::Undefined { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProportionalitySeries {
    pub s_opt: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// `s_opt / |g|`, `None` where excluded (boundary minimum or `|g| ~ 0`).
    pub ratio: Vec<Option<f64>>,
    /// Least-squares constant of `s_opt ~ c |g|` through the origin.
    pub c: f64,
    pub correlation: Correlation,
    pub valid_pairs: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let mx = mean_in_order(x);
    let my = mean_in_order(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        let which = if sxx == 0.0 { "s_opt" } else { "gradient norm" };
        return Correlation::Undefined {
            reason: format!("{which} series has zero variance"),
        };
    }
    Correlation::Value {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
    }
}

/// Relates each line's optimal step to its direction's gradient norm.
pub fn proportionality(s_opt: &[f64], boundary: &[bool], grad_norm: &[f64]) -> Result<ProportionalitySeries> {
    if s_opt.len() != grad_norm.len() || s_opt.len() != boundary.len() {
        return Err(Error::spec("proportionality series lengths differ"));
    }
    let ratio: Vec<Option<f64>> = (0..s_opt.len())
        .map(|i| {
            (!boundary[i] && grad_norm[i] > 1e-15 && s_opt[i].is_finite()).then(|| s_opt[i] / grad_norm[i])
        })
        .collect();
    let valid: Vec<usize> = (0..ratio.len()).filter(|&i| ratio[i].is_some()).collect();
    if valid.len() < 3 {
        return Err(Error::spec(format!("proportionality needs 3 valid pairs, found {}", valid.len())));
    }
    let xs: Vec<f64> = valid.iter().map(|&i| grad_norm[i]).collect();
    let ys: Vec<f64> = valid.iter().map(|&i| s_opt[i]).collect();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += x * y;
        sxx += x * x;
    }
    Ok(ProportionalitySeries {
        s_opt: s_opt.to_vec(),
        grad_norm: grad_norm.to_vec(),
        ratio,
        c: sxy / sxx,
        correlation: pearson(&ys, &xs),
        valid_pairs: valid.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn curve_of(s: &[f64], f: impl Fn(f64) -> f64) -> Curve {
        Curve::new(s.to_vec(), s.iter().map(|&x| f(x)).collect())
    }

    const W: Window = Window { lo: -1.0, hi: 1.0 };

    #[test]
    fn shift_constant_and_parabola() {
        let s = grid(-1.0, 1.0, 11);
        let c = shift_to_zero(&curve_of(&s, |_| 5.0), W).unwrap();
        assert!(c.loss.iter().all(|&v| v == 0.0));
        let p = curve_of(&s, |x| x * x);
        assert_eq!(shift_to_zero(&p, W).unwrap().loss, p.loss);
    }

    #[test]
    fn shift_needs_points() {
        let s = grid(-1.0, 1.0, 11);
        let c = curve_of(&s, |x| x);
        assert!(shift_to_zero(&c, Window { lo: 0.95, hi: 2.0 }).is_err());
        assert!(Window::new(0.1, 0.1).is_err());
    }

    #[test]
    fn mae_hand_enumeration() {
        let s = vec![-1.0, 0.0, 1.0];
        let a = curve_of(&s, |x| x * x);
        let b = curve_of(&s, |x| 2.0 * x * x);
        let d = mae_distance(&a, &b, W).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(d, mae_distance(&b, &a, W).unwrap());
        assert_eq!(mae_distance(&a, &a, W).unwrap(), 0.0);
    }

    #[test]
    fn mae_rejects_grid_mismatch() {
        let a = curve_of(&[-1.0, 0.0, 1.0], |x| x);
        let b = curve_of(&[-1.0, 0.0, 0.5], |x| x);
        assert!(matches!(mae_distance(&a, &b, W), Err(Error::Spec(_))));
    }

    #[test]
    fn distance_matrix_axioms() {
        let s = grid(-1.0, 1.0, 21);
        let curves: Vec<Curve> = (1..4).map(|k| curve_of(&s, |x| k as f64 * x * x + 0.1 * x)).collect();
        let m = distance_matrix(&curves, W).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert!(m.get(i, j) >= 0.0);
            }
        }
        assert_eq!(m.consecutive, vec![m.get(0, 1), m.get(1, 2)]);
        let same = distance_matrix(&vec![curves[0].clone(); 3], W).unwrap();
        assert!(same.values.iter().all(|&v| v == 0.0));
        let one = distance_matrix(&curves[..1], W).unwrap();
        assert_eq!(one.values, vec![0.0]);
    }

    #[test]
    fn polyfit_exact_parabola_and_line() {
        let s = grid(-0.5, 0.5, 7);
        let f = polyfit(&curve_of(&s, |x| 2.0 * x * x - 4.0 * x + 1.0), 2, W).unwrap();
        assert!((f.a.unwrap() - 2.0).abs() < 1e-10);
        assert!((f.b + 4.0).abs() < 1e-10);
        assert!((f.c - 1.0).abs() < 1e-10);
        assert!(f.mae < 1e-10 && f.rmse < 1e-10);
        let l = polyfit(&curve_of(&s, |x| 3.0 * x + 1.0), 1, W).unwrap();
        assert!((l.b - 3.0).abs() < 1e-12 && (l.c - 1.0).abs() < 1e-12 && l.rmse < 1e-12);
        assert_eq!(l.a, None);
    }

    #[test]
    fn polyfit_errors() {
        let c = curve_of(&[0.0, 0.0, 0.0], |_| 1.0);
        assert!(matches!(polyfit(&c, 2, W), Err(Error::Numeric(_))));
        let c = curve_of(&[0.0, 0.5], |x| x);
        assert!(matches!(polyfit(&c, 2, W), Err(Error::Spec(_))));
        assert!(polyfit(&c, 3, W).is_err());
    }

    #[test]
    fn argmin_cases() {
        let r = 0.006;
        let a = argmin_refined(&Curve::new(vec![-r, 0.0, r], vec![1.0, 0.0, 1.0])).unwrap();
        assert_eq!(a.s, 0.0);
        assert!(!a.boundary);

        let s: Vec<f64> = (-80..=80).map(|i| i as f64 * r).collect();
        let p = curve_of(&s, |x| 3.0 * (x - 0.1234).powi(2) + 0.7);
        let a = argmin_refined(&p).unwrap();
        assert!((a.s - 0.1234).abs() < 1e-9, "{}", a.s);
        assert!(a.refined);

        let dec = curve_of(&s, |x| -x);
        let a = argmin_refined(&dec).unwrap();
        assert!(a.boundary);
        assert_eq!(a.s, *s.last().unwrap());
    }

    #[test]
    fn argmin_ties_pick_smallest_s() {
        let c = Curve::new(vec![-2.0, -1.0, 0.0, 1.0, 2.0], vec![3.0, 1.0, 2.0, 1.0, 3.0]);
        let a = argmin_refined(&c).unwrap();
        assert_eq!(a.index, 1);
    }

    #[test]
    fn argmin_skips_masked() {
        let mut c = Curve::new(vec![-2.0, -1.0, 0.0, 1.0, 2.0], vec![3.0, 1.0, 0.5, 1.0, 3.0]);
        c.loss[2] = f64::NAN;
        c.mask[2] = true;
        let a = argmin_refined(&c).unwrap();
        assert!(a.index == 1 && !a.refined);
    }

    #[test]
    fn improvement_basics() {
        let c = Curve::new(vec![-1.0, 0.0, 1.0], vec![2.0, 1.0, 0.4]);
        assert_eq!(improvement(1.0, &Interpolated(&c), 0.0).unwrap(), 0.0);
        assert!((improvement(1.0, &Interpolated(&c), 1.0).unwrap() - 0.6).abs() < 1e-15);
        assert!((improvement(1.0, &Interpolated(&c), 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(improvement(1.0, &Interpolated(&c), 1.5), Err(Error::Spec(_))));
    }

    #[test]
    fn moving_average_cases() {
        assert_eq!(moving_average(&[2.0; 6], 5).unwrap(), vec![2.0; 6]);
        assert_eq!(moving_average(&[0.0, 3.0, 6.0], 3).unwrap()[1], 3.0);
        let x = [1.0, -4.0, 9.5];
        assert_eq!(moving_average(&x, 1).unwrap(), x.to_vec());
        assert!(moving_average(&x, 4).is_err());
        assert!(moving_average(&x, 0).is_err());
    }

    #[test]
    fn proportionality_exact() {
        let g = [1.0, 2.0, 3.5, 0.5];
        let s: Vec<f64> = g.iter().map(|x| 0.05 * x).collect();
        let p = proportionality(&s, &[false; 4], &g).unwrap();
        assert!((p.c - 0.05).abs() < 1e-15);
        assert!((p.correlation.value().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proportionality_degenerate() {
        let p = proportionality(&[0.1, 0.2, 0.3], &[false; 3], &[2.0; 3]).unwrap();
        assert!(matches!(p.correlation, Correlation::Undefined { .. }));
        assert!(proportionality(&[0.1, 0.2, 0.3], &[false, true, false], &[1.0, 2.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn nested_least_squares(ys in prop::collection::vec(-3.0f64..3.0, 9)) {
            let s = grid(-0.2, 0.2, 9);
            let c = Curve::new(s, ys);
            let w = Window { lo: -0.2, hi: 0.2 };
            let f1 = polyfit(&c, 1, w).unwrap();
            let f2 = polyfit(&c, 2, w).unwrap();
            prop_assert!(f2.rmse <= f1.rmse + 1e-12);
        }

        #[test]
        fn argmin_stays_in_cell(ys in prop::collection::vec(0.0f64..5.0, 12)) {
            let s = grid(-1.0, 1.0, 12);
            let c = Curve::new(s.clone(), ys);
            let a = argmin_refined(&c).unwrap();
            let lo = s[a.index.saturating_sub(1)];
            let hi = s[(a.index + 1).min(s.len() - 1)];
            prop_assert!(a.s >= lo && a.s <= hi);
        }

        #[test]
        fn moving_average_mean_bound(xs in prop::collection::vec(-10.0f64..10.0, 5..60), half in 0usize..6) {
            let k = 2 * half + 1;
            let sm = moving_average(&xs, k).unwrap();
            prop_assert_eq!(sm.len(), xs.len());
            let m0 = xs.iter().sum::<f64>() / xs.len() as f64;
            let m1 = sm.iter().sum::<f64>() / sm.len() as f64;
            let maxabs = xs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            prop_assert!((m0 - m1).abs() <= (k - 1) as f64 * maxabs / xs.len() as f64 + 1e-12);
        }
    }
}
