//! Batch-size study on a fixed trajectory.
//!
//! Virtual batches are grown by seeded draws from the samples outside the
//! defining batch, or shrunk by dropping the least steep members. Their
//! curves come from the per-sample loss matrix of a scan; their slopes from
//! exact per-sample directional derivatives.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::Curve;
use crate::data::Dataset;
use crate::linescan::aggregate;
use crate::nncore::{batch_loss_and_grad, mean_in_order, ModelSpec, ParamVector};
use crate::strategies::{score, step_fbpal, step_pal_on_curve, step_sgd, Flag, LineInput, StrategyKind, StrategySpec};
use crate::{Error, Result};

/// Slope of every sample's loss along unit `direction` at `params`, one
/// backward pass per sample.
pub fn per_sample_dderiv(
    model: &ModelSpec,
    params: &ParamVector,
    direction: &ParamVector,
    dataset: &Dataset,
) -> Result<Vec<f64>> {
    let norm = direction.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::spec(format!("direction must have unit norm, got {norm}")));
    }
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let batch = dataset.batch(&[i])?;
            let (_, g) = batch_loss_and_grad(model, params, &batch)?;
            g.dot(direction)
        })
        .collect()
}

/// Mean of `values` over `indices`, summed in ascending index order.
pub fn mean_over(values: &[f64], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::spec("empty index set"));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let picked: Vec<f64> = sorted
        .iter()
        .map(|&i| {
            values
                .get(i)
                .copied()
                .ok_or_else(|| Error::spec(format!("index {i} out of range for {} values", values.len())))
        })
        .collect::<Result<_>>()?;
    Ok(mean_in_order(&picked))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Grow,
    Shrink,
}

/// Which members "have the highest directional derivative" when shrinking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkRule {
    /// Drop the largest signed slopes, keeping the steepest descent.
    #[default]
    Signed,
    /// Drop the largest slope magnitudes.
    Magnitude,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualBatch {
    pub base_step: usize,
    pub target: usize,
    pub mode: Mode,
    /// Ascending.
    pub members: Vec<usize>,
    pub seed: u64,
    pub rule: ShrinkRule,
}

fn sorted_set(indices: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut v = indices.to_vec();
    v.sort_unstable();
    if v.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::spec("duplicate index in defining batch"));
    }
    if v.last().is_some_and(|&i| i >= n) {
        return Err(Error::spec(format!("defining batch index out of range for {n} samples")));
    }
    Ok(v)
}

/// Builds a batch of `target` samples around `defining`.
///
/// `slopes` holds one directional derivative per dataset sample.
pub fn virtual_batch(
    base_step: usize,
    defining: &[usize],
    target: usize,
    mode: Mode,
    slopes: &[f64],
    seed: u64,
    rule: ShrinkRule,
) -> Result<VirtualBatch> {
    let n = slopes.len();
    let base = sorted_set(defining, n)?;
    let members = match mode {
        Mode::Grow => {
            if target < base.len() || target > n {
                return Err(Error::spec(format!(
                    "grow target {target} must lie in {}..={n}",
                    base.len()
                )));
            }
            let outside: Vec<usize> = (0..n).filter(|i| base.binary_search(i).is_err()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut members = base.clone();
            members.extend(
                rand::seq::index::sample(&mut rng, outside.len(), target - base.len())
                    .into_iter()
                    .map(|j| outside[j]),
            );
            members.sort_unstable();
            members
        }
        Mode::Shrink => {
            if target == 0 || target > base.len() {
                return Err(Error::spec(format!(
                    "shrink target {target} must lie in 1..={}",
                    base.len()
                )));
            }
            let key = |i: usize| match rule {
                ShrinkRule::Signed => slopes[i],
                ShrinkRule::Magnitude => slopes[i].abs(),
            };
            let mut order = base.clone();
            order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
            order.truncate(target);
            order.sort_unstable();
            order
        }
    };
    Ok(VirtualBatch {
        base_step,
        target,
        mode,
        members,
        seed,
        rule,
    })
}

/// Target size for scaling `base` by `factor`.
pub fn scaled_size(base: usize, factor: f64) -> Result<usize> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::spec(format!("batch factor must be positive, got {factor}")));
    }
    let t = (base as f64 * factor).round();
    if t < 1.0 {
        return Err(Error::spec(format!("factor {factor} shrinks a batch of {base} to nothing")));
    }
    Ok(t as usize)
}

fn batch_of_size(
    step: usize,
    defining: &[usize],
    size: usize,
    slopes: &[f64],
    seed: u64,
    rule: ShrinkRule,
) -> Result<VirtualBatch> {
    let mode = if size >= defining.len() { Mode::Grow } else { Mode::Shrink };
    virtual_batch(step, defining, size, mode, slopes, seed ^ step as u64, rule)
}

/// A line with the per-sample slopes of its origin and direction.
#[derive(Clone, Copy)]
pub struct StudyLine<'a> {
    pub input: LineInput<'a>,
    pub slopes: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub step: usize,
    pub factor: f64,
    pub size: usize,
    pub base_dderiv: f64,
    pub scaled_dderiv: f64,
    /// `|base| / |scaled|`; `None` when masked.
    pub ratio: Option<f64>,
    pub expected: f64,
    pub flag: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioTable {
    pub entries: Vec<RatioEntry>,
}

impl RatioTable {
    /// Mean observed ratio per factor over unmasked entries.
    pub fn mean_ratio(&self, factor: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.factor == factor)
            .filter_map(|e| e.ratio)
            .collect();
        (!v.is_empty()).then(|| mean_in_order(&v))
    }
}

/// Slope ratio between each defining batch and its `factor`-scaled virtual
/// batch; the duality predicts the ratio `factor`.
pub fn ratio_study(
    lines: &[(usize, &[usize], &[f64])],
    factors: &[f64],
    seed: u64,
    rule: ShrinkRule,
) -> Result<RatioTable> {
    if factors.is_empty() {
        return Err(Error::spec("ratio study needs at least one factor"));
    }
    let rows: Vec<Vec<RatioEntry>> = lines
        .par_iter()
        .map(|&(step, defining, slopes)| {
            let base = mean_over(slopes, defining)?;
            factors
                .iter()
                .map(|&factor| {
                    let size = scaled_size(defining.len(), factor)?;
                    let mut entry = RatioEntry {
                        step,
                        factor,
                        size,
                        base_dderiv: base,
                        scaled_dderiv: f64::NAN,
                        ratio: None,
                        expected: factor,
                        flag: None,
                    };
                    if size > slopes.len() {
                        entry.flag = Some("exceeds_dataset".into());
                        return Ok(entry);
                    }
                    let vb = batch_of_size(step, defining, size, slopes, seed, rule)?;
                    let scaled = mean_over(slopes, &vb.members)?;
                    entry.scaled_dderiv = scaled;
                    if scaled == 0.0 {
                        entry.flag = Some("zero_scaled_dderiv".into());
                    } else {
                        entry.ratio = Some(base.abs() / scaled.abs());
                    }
                    Ok(entry)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(RatioTable {
        entries: rows.into_iter().flatten().collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchsizeRow {
    pub step: usize,
    pub size: usize,
    pub label: String,
    pub s_upd: f64,
    pub improvement: Option<f64>,
    pub flags: Vec<Flag>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchsizeTable {
    pub sizes: Vec<usize>,
    pub labels: Vec<String>,
    pub rows: Vec<BatchsizeRow>,
}

impl BatchsizeTable {
    /// Improvements of `label` at `size`, in step order.
    pub fn improvements(&self, label: &str, size: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.label == label && r.size == size)
            .map(|r| r.improvement.unwrap_or(0.0))
            .collect()
    }

    /// Fraction of steps where the cumulative improvement of `label` does
    /// not decrease from one size to the next larger one.
    pub fn monotone_fraction(&self, label: &str) -> Option<f64> {
        let mut sizes = self.sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        let series: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&s| {
                let mut acc = 0.0;
                self.improvements(label, s)
                    .into_iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect();
        let steps = series.first()?.len();
        if steps == 0 || sizes.len() < 2 {
            return None;
        }
        let ok = (0..steps)
            .filter(|&t| series.windows(2).all(|w| w[1][t] >= w[0][t]))
            .count();
        Some(ok as f64 / steps as f64)
    }
}

/// Reruns SGD, PAL and FBPAL on virtual defining batches of each size.
///
/// At the recorded batch size the recorded slope and norm are used, so the
/// rows coincide with the plain strategy evaluation. A virtual batch that
/// covers the whole dataset turns PAL into FBPAL.
pub fn strategy_vs_batchsize(
    lines: &[StudyLine<'_>],
    sizes: &[usize],
    specs: &[StrategySpec],
    seed: u64,
    rule: ShrinkRule,
) -> Result<BatchsizeTable> {
    if sizes.is_empty() || specs.is_empty() || lines.is_empty() {
        return Err(Error::spec("batch-size study needs lines, sizes and strategies"));
    }
    for spec in specs {
        if matches!(spec.kind, StrategyKind::ExactMinibatch | StrategyKind::ExactFullbatch | StrategyKind::Constant { .. }) {
            return Err(Error::spec(format!("strategy {} is not part of the batch-size study", spec.label)));
        }
    }
    let rows: Vec<Vec<BatchsizeRow>> = lines
        .par_iter()
        .map(|line| {
            let scan = line.input.scan;
            let meta = &scan.meta;
            let full = scan.full_curve();
            let mut out = Vec::new();
            for &size in sizes {
                if size == 0 || size > scan.dataset_len {
                    return Err(Error::spec(format!("batch size {size} outside 1..={}", scan.dataset_len)));
                }
                let recorded = size == meta.batch.len();
                let (curve, dderiv, norm) = if recorded {
                    (scan.defining_curve(), meta.dderiv, meta.step_norm())
                } else {
                    let vb = batch_of_size(meta.step, &meta.batch, size, line.slopes, seed, rule)?;
                    let values = aggregate(scan, &vb.members)?;
                    let d = mean_over(line.slopes, &vb.members)?;
                    (Curve::new(scan.grid.points(), values), d, -d)
                };
                let whole = size == scan.dataset_len;
                for spec in specs {
                    let mut choice = match spec.kind {
                        StrategyKind::Sgd { lr } => crate::strategies::StepChoice {
                            s: step_sgd(lr, norm),
                            flags: Vec::new(),
                        },
                        StrategyKind::Pal { mu } if whole => step_fbpal(&full, mu, None)?,
                        StrategyKind::Pal { mu } => step_pal_on_curve(&curve, dderiv, mu)?,
                        StrategyKind::Fbpal { mu } => step_fbpal(&full, mu, scan.full_is_defining().then_some(meta.dderiv))?,
                        _ => unreachable!("rejected above"),
                    };
                    let improvement = score(&line.input, &full, choice.s, &mut choice.flags)?;
                    choice.flags.sort();
                    choice.flags.dedup();
                    out.push(BatchsizeRow {
                        step: meta.step,
                        size,
                        label: spec.label.clone(),
                        s_upd: choice.s,
                        improvement,
                        flags: choice.flags,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(BatchsizeTable {
        sizes: sizes.to_vec(),
        labels: specs.iter().map(|s| s.label.clone()).collect(),
        rows: rows.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_ratio() {
        let slopes = [-2.0, -1.0, 0.0, 1.0];
        let full = mean_over(&slopes, &[0, 1, 2, 3]).unwrap();
        let sub = mean_over(&slopes, &[0, 1]).unwrap();
        assert_eq!(full, -0.5);
        assert_eq!(sub, -1.5);
        assert_eq!(sub / full, 3.0);
    }

    #[test]
    fn identity_targets() {
        let slopes = [0.3, -0.1, 0.5, -0.7, 0.2];
        for mode in [Mode::Grow, Mode::Shrink] {
            let vb = virtual_batch(0, &[3, 1], 2, mode, &slopes, 7, ShrinkRule::Signed).unwrap();
            assert_eq!(vb.members, vec![1, 3]);
        }
    }

    #[test]
    fn shrink_keeps_steepest() {
        let slopes = [-3.0, -2.0, -1.0, 0.0];
        let vb = virtual_batch(0, &[0, 1, 2, 3], 2, Mode::Shrink, &slopes, 0, ShrinkRule::Signed).unwrap();
        assert_eq!(vb.members, vec![0, 1]);
        let slopes = [-3.0, 2.5, -1.0, 0.0];
        let vb = virtual_batch(0, &[0, 1, 2, 3], 2, Mode::Shrink, &slopes, 0, ShrinkRule::Magnitude).unwrap();
        assert_eq!(vb.members, vec![2, 3]);
    }

    #[test]
    fn shrink_ties_keep_lower_index() {
        let slopes = [-1.0, -1.0, -1.0];
        let vb = virtual_batch(0, &[0, 1, 2], 2, Mode::Shrink, &slopes, 0, ShrinkRule::Signed).unwrap();
        assert_eq!(vb.members, vec![0, 1]);
    }

    #[test]
    fn grow_deterministic_superset() {
        let slopes = vec![0.0; 50];
        let a = virtual_batch(3, &[4, 9], 20, Mode::Grow, &slopes, 11, ShrinkRule::Signed).unwrap();
        let b = virtual_batch(3, &[4, 9], 20, Mode::Grow, &slopes, 11, ShrinkRule::Signed).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.members.len(), 20);
        assert!(a.members.contains(&4) && a.members.contains(&9));
        assert!(a.members.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn target_out_of_range() {
        let slopes = vec![0.0; 5];
        assert!(matches!(
            virtual_batch(0, &[0, 1], 6, Mode::Grow, &slopes, 0, ShrinkRule::Signed),
            Err(Error::Spec(_))
        ));
        assert!(virtual_batch(0, &[0, 1], 3, Mode::Shrink, &slopes, 0, ShrinkRule::Signed).is_err());
        assert!(virtual_batch(0, &[0, 1], 0, Mode::Shrink, &slopes, 0, ShrinkRule::Signed).is_err());
    }

    #[test]
    fn dilution_ratio_is_exact() {
        let mut slopes = vec![0.0; 1024];
        let defining: Vec<usize> = (0..128).map(|i| i * 3).collect();
        for &i in &defining {
            slopes[i] = -0.75;
        }
        let table = ratio_study(&[(0, &defining, &slopes)], &[1.0, 2.0, 4.0, 8.0], 5, ShrinkRule::Signed).unwrap();
        for e in &table.entries {
            assert_eq!(e.ratio, Some(e.factor), "{e:?}");
        }
    }

    #[test]
    fn ratio_masks_oversized_and_zero() {
        let slopes = vec![0.0, -1.0, 0.0, 0.0];
        let t = ratio_study(&[(0, &[1, 2], &slopes)], &[4.0], 0, ShrinkRule::Signed).unwrap();
        assert_eq!(t.entries[0].flag.as_deref(), Some("exceeds_dataset"));
        let slopes = vec![0.0, 1.0, -1.0, 0.0];
        let t = ratio_study(&[(0, &[1, 2], &slopes)], &[1.0], 0, ShrinkRule::Signed).unwrap();
        assert_eq!(t.entries[0].flag.as_deref(), Some("zero_scaled_dderiv"));
    }

    proptest! {
        #[test]
        fn dyadic_partition_sums_compose_exactly(
            raw in prop::collection::vec(-4096i64..4096, 2..200),
            split in prop::collection::vec(any::<bool>(), 200),
        ) {
            // Dyadic values keep every partial sum exact.
            let slopes: Vec<f64> = raw.iter().map(|&v| v as f64 / 1024.0).collect();
            let (a, b): (Vec<usize>, Vec<usize>) = (0..slopes.len()).partition(|&i| split[i]);
            prop_assume!(!a.is_empty() && !b.is_empty());
            let all: Vec<usize> = (0..slopes.len()).collect();
            let na = a.len() as f64;
            let nb = b.len() as f64;
            let sum_a: f64 = a.iter().map(|&i| slopes[i]).sum();
            let sum_b: f64 = b.iter().map(|&i| slopes[i]).sum();
            prop_assert_eq!(mean_over(&slopes, &all).unwrap(), (sum_a + sum_b) / (na + nb));
        }

        #[test]
        fn weighted_mean_composes(
            slopes in prop::collection::vec(-5.0f64..5.0, 2..200),
            split in prop::collection::vec(any::<bool>(), 200),
        ) {
            let (a, b): (Vec<usize>, Vec<usize>) = (0..slopes.len()).partition(|&i| split[i]);
            prop_assume!(!a.is_empty() && !b.is_empty());
            let all: Vec<usize> = (0..slopes.len()).collect();
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let composed = (na * mean_over(&slopes, &a).unwrap() + nb * mean_over(&slopes, &b).unwrap()) / (na + nb);
            prop_assert!((mean_over(&slopes, &all).unwrap() - composed).abs() < 1e-13);
        }
    }
}
