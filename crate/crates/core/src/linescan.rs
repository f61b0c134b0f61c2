//! Loss measurements along a line `theta0 + s * d`.
//!
//! Every grid point is an independent work item evaluated in parallel; the
//! per-point reduction over samples always runs in ascending sample order,
//! so curves are bit-identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{Curve, LineLoss};
use crate::data::{BatchPlan, BatchStream, Dataset};
use crate::nncore::tape::Matrix;
use crate::nncore::{axpy_point, batch_loss_and_grad, mean_in_order, per_sample_losses, ModelSpec, ParamVector, SampleBatch};
use crate::trainer::{DirectionKind, StepRecord, ZERO_DIRECTION_NORM};
use crate::{Error, Result};

/// Scans with more than this fraction of masked grid points are invalid.
pub const MAX_MASKED_FRACTION: f64 = 0.10;

const SNAP_EPS: f64 = 1e-9;

/// Uniform step-size grid that always contains `s = 0`.
///
/// The lower end is snapped toward zero to the nearest multiple of the
/// resolution, so points are exact integer multiples of the resolution and
/// index [`Grid::zero_index`] holds exactly `0.0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo_requested: f64,
    pub hi_requested: f64,
    pub resolution: f64,
    /// Integer multiple of the resolution at the first point (`<= 0`).
    pub first_multiple: i64,
    pub count: usize,
}

fn snap(x: f64) -> Option<f64> {
    let r = x.round();
    ((x - r).abs() < SNAP_EPS).then_some(r)
}

pub fn make_grid(lo: f64, hi: f64, resolution: f64) -> Result<Grid> {
    if !(lo.is_finite() && hi.is_finite() && resolution.is_finite()) {
        return Err(Error::spec("grid bounds and resolution must be finite"));
    }
    if !(lo < 0.0 && 0.0 < hi) {
        return Err(Error::spec(format!("grid needs lo < 0 < hi, got [{lo}, {hi}]")));
    }
    if !(resolution > 0.0) {
        return Err(Error::spec(format!("resolution must be positive, got {resolution}")));
    }
    let x = lo / resolution;
    let first = snap(x).unwrap_or_else(|| x.ceil()) as i64;
    let span = (hi - first as f64 * resolution) / resolution;
    let steps = snap(span).unwrap_or_else(|| span.floor()) as usize;
    Ok(Grid {
        lo_requested: lo,
        hi_requested: hi,
        resolution,
        first_multiple: first,
        count: steps + 1,
    })
}

impl Grid {
    pub fn point(&self, i: usize) -> f64 {
        (self.first_multiple + i as i64) as f64 * self.resolution
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.point(i)).collect()
    }

    pub fn lo(&self) -> f64 {
        self.point(0)
    }

    pub fn hi(&self) -> f64 {
        self.point(self.count - 1)
    }

    pub fn zero_index(&self) -> usize {
        (-self.first_multiple) as usize
    }

    /// Index of the grid point nearest to `s`, if `s` lies in the grid range.
    pub fn nearest_index(&self, s: f64) -> Option<usize> {
        let m = (s / self.resolution).round() as i64 - self.first_multiple;
        (0..self.count as i64).contains(&m).then_some(m as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Full-batch and defining-batch curves only.
    Full,
    /// Also curves for a supplied list of other batches.
    PerBatch,
    /// Also the `n_samples x n_grid` loss matrix.
    PerSample,
}

/// What defined the line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionMeta {
    pub step: usize,
    pub kind: DirectionKind,
    pub batch: Vec<usize>,
    pub grad_norm: f64,
    pub dderiv: f64,
    pub momentum_norm: f64,
    pub batch_loss: f64,
}

impl DirectionMeta {
    pub fn from_record(r: &StepRecord) -> Self {
        DirectionMeta {
            step: r.step,
            kind: r.kind,
            batch: r.batch.clone(),
            grad_norm: r.grad_norm,
            dderiv: r.dderiv,
            momentum_norm: r.momentum_norm,
            batch_loss: r.batch_loss,
        }
    }

    /// Norm whose product with the learning rate is the SGD step along `d`.
    pub fn step_norm(&self) -> f64 {
        match self.kind {
            DirectionKind::Momentum => self.momentum_norm,
            _ => self.grad_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineScan {
    pub meta: DirectionMeta,
    pub grid: Grid,
    pub granularity: Granularity,
    /// Number of samples behind the full-batch curve.
    pub dataset_len: usize,
    pub full: Vec<f64>,
    pub masked: Vec<bool>,
    /// Mean loss of the direction-defining batch.
    pub defining: Vec<f64>,
    /// Other batch curves (`PerBatch` and finer), labelled `b<i>`.
    pub batches: Vec<(String, Vec<f64>)>,
    /// Row-major `n_samples x n_grid` losses (`PerSample` only).
    pub per_sample: Option<Matrix>,
}

impl LineScan {
    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn is_valid(&self) -> bool {
        self.masked_count() as f64 <= MAX_MASKED_FRACTION * self.grid.count as f64
    }

    pub fn full_curve(&self) -> Curve {
        Curve::with_mask(self.grid.points(), self.full.clone(), self.masked.clone())
    }

    pub fn defining_curve(&self) -> Curve {
        Curve::new(self.grid.points(), self.defining.clone())
    }

    pub fn origin_loss(&self) -> f64 {
        self.full[self.grid.zero_index()]
    }

    pub fn n_samples(&self) -> Option<usize> {
        self.per_sample.as_ref().map(|m| m.rows)
    }

    /// The defining batch is the whole dataset.
    pub fn full_is_defining(&self) -> bool {
        self.meta.batch.len() == self.dataset_len
    }
}

/// Mean over `rows` of each column, reduced in the given row order.
fn column_means(columns: &[Vec<f64>], rows: &[usize]) -> Vec<f64> {
    let mut buf = Vec::with_capacity(rows.len());
    columns
        .iter()
        .map(|col| {
            buf.clear();
            buf.extend(rows.iter().map(|&r| col[r]));
            mean_in_order(&buf)
        })
        .collect()
}

fn sorted_unique(indices: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut v = indices.to_vec();
    v.sort_unstable();
    if v.is_empty() {
        return Err(Error::spec("empty index set"));
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::spec("duplicate index in index set"));
    }
    if *v.last().unwrap() >= n {
        return Err(Error::spec(format!("index {} out of range for {n} samples", v.last().unwrap())));
    }
    Ok(v)
}

pub struct ScanRequest<'a> {
    pub model: &'a ModelSpec,
    pub origin: &'a ParamVector,
    pub direction: &'a ParamVector,
    pub meta: DirectionMeta,
    pub granularity: Granularity,
    /// Extra batches for `PerBatch`/`PerSample` granularity.
    pub other_batches: &'a [Vec<usize>],
}

/// Evaluates losses along the line on every grid point.
///
/// Non-finite full-batch values are masked rather than treated as errors.
pub fn scan_line(req: &ScanRequest<'_>, grid: &Grid, dataset: &Dataset) -> Result<LineScan> {
    let dnorm = req.direction.norm();
    if dnorm != 0.0 && (dnorm - 1.0).abs() > 1e-9 {
        return Err(Error::spec(format!("scan direction must be unit (or zero), norm is {dnorm}")));
    }
    if req.origin.len() != req.model.param_count() {
        return Err(Error::spec("origin does not match the model"));
    }
    let full_batch = dataset.full_batch();
    scan_with_batch(req, grid, &full_batch)
}

fn scan_with_batch(req: &ScanRequest<'_>, grid: &Grid, full_batch: &SampleBatch) -> Result<LineScan> {
    let n = full_batch.len();
    let defining = sorted_unique(&req.meta.batch, n)?;
    let others: Vec<Vec<usize>> = match req.granularity {
        Granularity::Full => Vec::new(),
        _ => req
            .other_batches
            .iter()
            .map(|b| sorted_unique(b, n))
            .collect::<Result<_>>()?,
    };

    let points = grid.points();
    let columns: Vec<Vec<f64>> = points
        .par_iter()
        .map(|&s| {
            let p = axpy_point(req.origin, s, req.direction)?;
            per_sample_losses(req.model, &p, full_batch)
        })
        .collect::<Result<_>>()?;

    let all: Vec<usize> = (0..n).collect();
    let full = column_means(&columns, &all);
    let masked = full.iter().map(|v| !v.is_finite()).collect();
    let defining_curve = column_means(&columns, &defining);
    let batches = others
        .iter()
        .enumerate()
        .map(|(i, b)| (format!("b{i}"), column_means(&columns, b)))
        .collect();
    let per_sample = (req.granularity == Granularity::PerSample).then(|| {
        let mut m = Matrix::zeros(n, columns.len());
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m.data[i * columns.len() + j] = *v;
            }
        }
        m
    });
    Ok(LineScan {
        meta: DirectionMeta {
            batch: defining,
            ..req.meta.clone()
        },
        grid: grid.clone(),
        granularity: req.granularity,
        dataset_len: n,
        full,
        masked,
        defining: defining_curve,
        batches,
        per_sample,
    })
}

/// Column-wise mean of the per-sample matrix over `indices`.
pub fn aggregate(scan: &LineScan, indices: &[usize]) -> Result<Vec<f64>> {
    let m = scan
        .per_sample
        .as_ref()
        .ok_or_else(|| Error::Capability(format!("scan of step {} has no per-sample matrix", scan.meta.step)))?;
    let rows = sorted_unique(indices, m.rows)?;
    let mut buf = Vec::with_capacity(rows.len());
    Ok((0..m.cols)
        .map(|j| {
            buf.clear();
            buf.extend(rows.iter().map(|&r| m.data[r * m.cols + j]));
            mean_in_order(&buf)
        })
        .collect())
}

/// Scans along the negative unit gradient of each given batch, all from
/// the same origin.
pub fn fan_scan_batches(
    model: &ModelSpec,
    origin: &ParamVector,
    batches: &[Vec<usize>],
    dataset: &Dataset,
    grid: &Grid,
    granularity: Granularity,
) -> Result<Vec<LineScan>> {
    if batches.len() < 2 {
        return Err(Error::spec("a fan needs at least two directions"));
    }
    let full_batch = dataset.full_batch();
    batches
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let batch = dataset.batch(b)?;
            let (loss, grad) = batch_loss_and_grad(model, origin, &batch)?;
            let norm = grad.norm();
            let direction = if norm < ZERO_DIRECTION_NORM {
                ParamVector::zeros(grad.len())
            } else {
                grad.scaled(-1.0 / norm)
            };
            let meta = DirectionMeta {
                step: i,
                kind: DirectionKind::Noisy,
                batch: batch.indices().to_vec(),
                grad_norm: norm,
                dderiv: grad.dot(&direction)?,
                momentum_norm: norm,
                batch_loss: loss,
            };
            let req = ScanRequest {
                model,
                origin,
                direction: &direction,
                meta,
                granularity,
                other_batches: &[],
            };
            scan_with_batch(&req, grid, &full_batch)
        })
        .collect()
}

/// `k` lines through `origin` along the gradients of the first `k` batches
/// drawn by `plan`.
pub fn fan_scan(
    model: &ModelSpec,
    origin: &ParamVector,
    k: usize,
    dataset: &Dataset,
    plan: &BatchPlan,
    grid: &Grid,
) -> Result<Vec<LineScan>> {
    if k < 2 {
        return Err(Error::spec("a fan needs at least two directions"));
    }
    let batches: Vec<Vec<usize>> = BatchStream::new(dataset.len(), *plan)?.take(k).map(|(_, b)| b).collect();
    fan_scan_batches(model, origin, &batches, dataset, grid, Granularity::Full)
}

/// Exact full-batch loss along a line, re-evaluated at arbitrary `s`.
pub struct ExactLine<'a> {
    model: &'a ModelSpec,
    origin: &'a ParamVector,
    direction: &'a ParamVector,
    full_batch: SampleBatch,
}

impl<'a> ExactLine<'a> {
    pub fn new(model: &'a ModelSpec, origin: &'a ParamVector, direction: &'a ParamVector, dataset: &Dataset) -> Self {
        ExactLine {
            model,
            origin,
            direction,
            full_batch: dataset.full_batch(),
        }
    }
}

impl LineLoss for ExactLine<'_> {
    fn loss_at(&self, s: f64) -> Result<f64> {
        let p = axpy_point(self.origin, s, self.direction)?;
        Ok(mean_in_order(&per_sample_losses(self.model, &p, &self.full_batch)?))
    }

    fn is_exact(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_167_points() {
        let g = make_grid(-0.5, 0.5, 0.006).unwrap();
        assert_eq!(g.count, 167);
        assert_eq!(g.point(g.zero_index()), 0.0);
        assert!(g.hi() <= 0.5 && g.lo() >= -0.5);
    }

    #[test]
    fn unit_grid() {
        assert_eq!(make_grid(-1.0, 1.0, 1.0).unwrap().points(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn narrow_window_grid() {
        let g = make_grid(-0.2, 0.2, 0.006).unwrap();
        assert_eq!(g.count, 67);
        assert_eq!(g.point(g.zero_index()), 0.0);
    }

    #[test]
    fn grid_rejects_degenerate() {
        assert!(make_grid(0.0, 1.0, 0.1).is_err());
        assert!(make_grid(-1.0, 0.0, 0.1).is_err());
        assert!(make_grid(-1.0, 1.0, 0.0).is_err());
        assert!(make_grid(-1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn grid_points_strictly_ascending() {
        let g = make_grid(-0.37, 0.81, 0.013).unwrap();
        let p = g.points();
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.nearest_index(0.0), Some(g.zero_index()));
        assert_eq!(g.nearest_index(5.0), None);
    }
}
