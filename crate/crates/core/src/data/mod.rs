//! Datasets, loaders, deterministic subsetting and seeded mini-batching.

mod batching;
mod formats;
mod source;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::nncore::tape::Matrix;
use crate::nncore::SampleBatch;
use crate::{Error, Result};

pub use batching::{epoch_batches, BatchPlan, BatchStream};
pub use formats::{load_cifar10, load_csv, load_dataset, load_idx, DataFormat};
pub use source::{DataRecipe, DataSource, SubsetSpec};

/// Labeled samples with stable integer indices `0..n`.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    classes: usize,
    fingerprint: u64,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::spec("a dataset needs at least one sample"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::spec(format!(
                "feature array of length {} does not match {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(Error::spec("class count must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::spec(format!("label {bad} out of range for {classes} classes")));
        }
        let fingerprint = fingerprint(&features, dim, &labels, classes);
        Ok(Dataset {
            features,
            dim,
            labels,
            classes,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// 64-bit content hash over shape, features and labels.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        format!("{:016x}", self.fingerprint)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Batch over `indices` (any order, no duplicates).
    pub fn batch(&self, indices: &[usize]) -> Result<SampleBatch> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        if sorted.is_empty() {
            return Err(Error::spec("a batch needs at least one sample"));
        }
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::spec("duplicate sample index in batch"));
        }
        if let Some(&bad) = sorted.last().filter(|&&i| i >= self.len()) {
            return Err(Error::spec(format!("sample index {bad} out of range for {} samples", self.len())));
        }
        let mut data = Vec::with_capacity(sorted.len() * self.dim);
        let mut labels = Vec::with_capacity(sorted.len());
        for &i in &sorted {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        let features = Matrix::from_vec(sorted.len(), self.dim, data);
        Ok(SampleBatch::from_sorted(sorted, features, labels))
    }

    pub fn full_batch(&self) -> SampleBatch {
        SampleBatch::from_sorted(
            (0..self.len()).collect(),
            Matrix::from_vec(self.len(), self.dim, self.features.clone()),
            self.labels.clone(),
        )
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::spec(format!("sample index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, self.dim, labels, self.classes)
    }

    /// Per-feature standardization with this dataset's own mean and
    /// (population) standard deviation. Constant features are only centered.
    pub fn standardized(&self) -> Dataset {
        let n = self.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; self.dim];
        for i in 0..self.len() {
            for ((s, v), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let mut features = self.features.clone();
        for row in features.chunks_exact_mut(self.dim) {
            for ((v, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
        Dataset::new(features, self.dim, self.labels.clone(), self.classes)
            .expect("standardization keeps shape and labels")
    }
}

fn fingerprint(features: &[f64], dim: usize, labels: &[usize], classes: usize) -> u64 {
    let mut h = Sha256::new();
    h.update((labels.len() as u64).to_le_bytes());
    h.update((dim as u64).to_le_bytes());
    h.update((classes as u64).to_le_bytes());
    for v in features {
        h.update(v.to_bits().to_le_bytes());
    }
    for &l in labels {
        h.update((l as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Class-conditioned Gaussian blobs.
///
/// Class centers are standard normal vectors; sample `i` has label
/// `i % classes` and features `center + spread * N(0, I)`.
pub fn synth_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || dim == 0 {
        return Err(Error::spec("classes and dim must be positive"));
    }
    if n < classes {
        return Err(Error::spec(format!("need at least one sample per class ({n} < {classes})")));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::spec(format!("spread must be positive, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<f64> = (0..classes * dim).map(|_| normal.sample(&mut rng)).collect();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            features.push(centers[c * dim + j] + spread * normal.sample(&mut rng));
        }
        labels.push(c);
    }
    Dataset::new(features, dim, labels, classes)
}

/// Stratified, seed-deterministic subset of `round(fraction * n)` samples.
///
/// Per-class quotas use largest-remainder allocation, so every class gets
/// its proportional share within one sample. Selected samples keep their
/// original relative order, which makes `fraction = 1` the identity.
pub fn subset(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::spec(format!("subset fraction must be in (0, 1], got {fraction}")));
    }
    let n = dataset.len();
    let target = (fraction * n as f64).round() as usize;
    if target < dataset.classes() {
        return Err(Error::spec(format!(
            "subset of {target} samples cannot cover {} classes",
            dataset.classes()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let exact: Vec<f64> = by_class.iter().map(|m| m.len() as f64 * target as f64 / n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = target - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(target);
    for (members, &q) in by_class.iter().zip(&quota) {
        let mut m = members.clone();
        batching::fisher_yates(&mut m, &mut rng);
        chosen.extend_from_slice(&m[..q]);
    }
    chosen.sort_unstable();
    Ok((dataset.select(&chosen)?, chosen))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced() {
        let d = synth_blobs(100, 4, 3, 0.5, 1).unwrap();
        assert_eq!(d.class_counts(), vec![25, 25, 25, 25]);
        let d = synth_blobs(10, 4, 3, 0.5, 1).unwrap();
        assert_eq!(d.class_counts(), vec![3, 3, 2, 2]);
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = synth_blobs(50, 3, 2, 1.0, 9).unwrap();
        let b = synth_blobs(50, 3, 2, 1.0, 9).unwrap();
        let c = synth_blobs(50, 3, 2, 1.0, 10).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn blobs_reject_bad_arguments() {
        assert!(synth_blobs(3, 4, 2, 1.0, 0).is_err());
        assert!(synth_blobs(8, 4, 2, 0.0, 0).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Dataset::new(vec![0.0, 1.0], 1, vec![0, 1], 2).unwrap();
        let b = Dataset::new(vec![0.0, 1.0], 1, vec![1, 0], 2).unwrap();
        let c = Dataset::new(vec![0.0, 1.0], 1, vec![0, 1], 2).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn subset_identity_and_size() {
        let d = synth_blobs(200, 4, 2, 1.0, 3).unwrap();
        let (same, _) = subset(&d, 1.0, 5).unwrap();
        assert_eq!(same.fingerprint(), d.fingerprint());

        let big = synth_blobs(50_000, 10, 1, 1.0, 3).unwrap();
        let (s, idx) = subset(&big, 0.08, 11).unwrap();
        assert_eq!(s.len(), 4000);
        assert_eq!(s.class_counts(), vec![400; 10]);
        let (_, again) = subset(&big, 0.08, 11).unwrap();
        assert_eq!(idx, again);
    }

    #[test]
    fn subset_rejects_bad_fraction() {
        let d = synth_blobs(20, 2, 1, 1.0, 0).unwrap();
        assert!(subset(&d, 0.0, 0).is_err());
        assert!(subset(&d, 1.5, 0).is_err());
        assert!(subset(&d, 0.05, 0).is_err());
    }

    #[test]
    fn standardized_has_zero_mean_unit_variance() {
        let d = synth_blobs(64, 2, 3, 2.0, 4).unwrap().standardized();
        for j in 0..3 {
            let col: Vec<f64> = (0..d.len()).map(|i| d.row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_sorts_and_validates() {
        let d = synth_blobs(10, 2, 2, 1.0, 0).unwrap();
        let b = d.batch(&[7, 2, 5]).unwrap();
        assert_eq!(b.indices(), &[2, 5, 7]);
        assert_eq!(b.features().row(0), d.row(2));
        assert!(d.batch(&[1, 1]).is_err());
        assert!(d.batch(&[10]).is_err());
    }
}
