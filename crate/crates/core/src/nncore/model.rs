use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use super::tape::{Matrix, NodeId, Tape};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::spec(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Fully connected classifier with a softmax cross-entropy head.
    Mlp {
        layers: Vec<usize>,
        activation: Activation,
    },
    /// Test model whose per-sample loss is `||theta - x||^2`, with `x` the
    /// sample's features when `centered`, else zero (loss `sum theta_i^2`).
    QuadraticHead { dim: usize, centered: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub seed: u64,
}

impl ModelSpec {
    pub fn mlp(layers: Vec<usize>, activation: Activation, seed: u64) -> Self {
        ModelSpec {
            architecture: Architecture::Mlp { layers, activation },
            seed,
        }
    }

    pub fn quadratic(dim: usize, centered: bool, seed: u64) -> Self {
        ModelSpec {
            architecture: Architecture::QuadraticHead { dim, centered },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.architecture {
            Architecture::Mlp { layers, .. } => {
                if layers.len() < 2 {
                    return Err(Error::spec("an MLP needs at least input and output layer sizes"));
                }
                if layers.iter().any(|&l| l == 0) {
                    return Err(Error::spec(format!("layer sizes must be positive: {layers:?}")));
                }
                if *layers.last().unwrap() < 2 {
                    return Err(Error::spec("the output layer needs at least 2 classes"));
                }
            }
            Architecture::QuadraticHead { dim, .. } => {
                if *dim == 0 {
                    return Err(Error::spec("quadratic head dimension must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match &self.architecture {
            Architecture::Mlp { layers, .. } => {
                layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
            }
            Architecture::QuadraticHead { dim, .. } => *dim,
        }
    }

    /// Checks that samples with `feature_dim` features and labels below
    /// `classes` can be fed to this model.
    pub fn check_data(&self, feature_dim: usize, classes: usize) -> Result<()> {
        match &self.architecture {
            Architecture::Mlp { layers, .. } => {
                if layers[0] != feature_dim {
                    return Err(Error::spec(format!(
                        "input layer size {} does not match feature dimension {feature_dim}",
                        layers[0]
                    )));
                }
                if *layers.last().unwrap() != classes {
                    return Err(Error::spec(format!(
                        "output layer size {} does not match class count {classes}",
                        layers.last().unwrap()
                    )));
                }
            }
            Architecture::QuadraticHead { dim, centered } => {
                if *centered && *dim != feature_dim {
                    return Err(Error::spec(format!(
                        "centered quadratic head of dim {dim} needs {dim} features, got {feature_dim}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether predictions (and so accuracy) are meaningful for this model.
    pub fn is_classifier(&self) -> bool {
        matches!(self.architecture, Architecture::Mlp { .. })
    }
}

/// A batch of samples ready for evaluation.
///
/// Indices are kept in ascending order, which fixes the reduction order of
/// every mean taken over the batch.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    indices: Vec<usize>,
    features: Matrix,
    labels: Vec<usize>,
}

impl SampleBatch {
    /// `rows` are `(index, features, label)` triples in any order.
    pub fn new(mut rows: Vec<(usize, Vec<f64>, usize)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::spec("a batch needs at least one sample"));
        }
        rows.sort_by_key(|r| r.0);
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::spec("duplicate sample index in batch"));
        }
        let dim = rows[0].1.len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut indices = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (idx, f, l) in rows {
            if f.len() != dim {
                return Err(Error::spec("ragged feature rows in batch"));
            }
            indices.push(idx);
            data.extend(f);
            labels.push(l);
        }
        Ok(SampleBatch {
            features: Matrix::from_vec(indices.len(), dim, data),
            indices,
            labels,
        })
    }

    /// Builds a batch from already sorted, unique indices and row-major features.
    pub(crate) fn from_sorted(indices: Vec<usize>, features: Matrix, labels: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(features.rows, indices.len());
        SampleBatch {
            indices,
            features,
            labels,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The single-sample batch at `position` within this batch.
    pub fn single(&self, position: usize) -> SampleBatch {
        SampleBatch {
            indices: vec![self.indices[position]],
            features: Matrix::from_vec(1, self.features.cols, self.features.row(position).to_vec()),
            labels: vec![self.labels[position]],
        }
    }
}

/// Deterministic initial parameters for `spec`.
///
/// MLP weights are uniform in `+-sqrt(6 / (fan_in + fan_out))` per matrix,
/// biases zero. The quadratic head draws uniformly in `+-0.5 / sqrt(dim)`.
pub fn init_model(spec: &ModelSpec) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(spec.param_count());
    match &spec.architecture {
        Architecture::Mlp { layers, .. } => {
            for w in layers.windows(2) {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = init_bound(fan_in, fan_out);
                for _ in 0..fan_in * fan_out {
                    values.push(rng.random_range(-bound..=bound));
                }
                values.extend(std::iter::repeat_n(0.0, fan_out));
            }
        }
        Architecture::QuadraticHead { dim, .. } => {
            let bound = 0.5 / (*dim as f64).sqrt();
            for _ in 0..*dim {
                values.push(rng.random_range(-bound..=bound));
            }
        }
    }
    Ok(ParamVector::new(values))
}

/// Glorot-uniform bound for a `fan_in x fan_out` weight matrix.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

struct Forward {
    tape: Tape,
    params: Vec<NodeId>,
    losses: NodeId,
    logits: Option<NodeId>,
}

fn check_params(spec: &ModelSpec, params: &ParamVector, batch: &SampleBatch) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::spec(format!(
            "parameter vector has length {}, model expects {}",
            params.len(),
            spec.param_count()
        )));
    }
    match &spec.architecture {
        Architecture::Mlp { layers, .. } => {
            if batch.features.cols != layers[0] {
                return Err(Error::spec(format!(
                    "batch has {} features, model expects {}",
                    batch.features.cols, layers[0]
                )));
            }
            let classes = *layers.last().unwrap();
            if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
                return Err(Error::spec(format!("label {bad} out of range for {classes} classes")));
            }
        }
        Architecture::QuadraticHead { dim, centered } => {
            if *centered && batch.features.cols != *dim {
                return Err(Error::spec(format!(
                    "batch has {} features, centered quadratic head expects {dim}",
                    batch.features.cols
                )));
            }
        }
    }
    Ok(())
}

/// Runs the forward pass. With `check_finite`, the first layer producing a
/// non-finite value aborts with its (1-based) index.
fn forward(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &SampleBatch,
    check_finite: bool,
) -> Result<Forward> {
    check_params(spec, params, batch)?;
    let mut tape = Tape::new();
    let mut param_nodes = Vec::new();
    let p = params.as_slice();
    match &spec.architecture {
        Architecture::Mlp { layers, activation } => {
            let mut h = tape.constant(batch.features.clone());
            let mut offset = 0;
            let n_layers = layers.len() - 1;
            for (li, w) in layers.windows(2).enumerate() {
                let (fan_in, fan_out) = (w[0], w[1]);
                let wm = Matrix::from_vec(fan_in, fan_out, p[offset..offset + fan_in * fan_out].to_vec());
                offset += fan_in * fan_out;
                let bm = Matrix::from_vec(1, fan_out, p[offset..offset + fan_out].to_vec());
                offset += fan_out;
                let wn = tape.param(wm);
                let bn = tape.param(bm);
                param_nodes.push(wn);
                param_nodes.push(bn);
                let z = tape.matmul(h, wn);
                let z = tape.add_row(z, bn);
                h = if li + 1 < n_layers {
                    match activation {
                        Activation::Relu => tape.relu(z),
                        Activation::Tanh => tape.tanh(z),
                    }
                } else {
                    z
                };
                if check_finite && !tape.value(h).all_finite() {
                    return Err(Error::NonFinite { layer: li + 1 });
                }
            }
            let losses = tape.softmax_xent(h, &batch.labels);
            if check_finite && !tape.value(losses).all_finite() {
                return Err(Error::NonFinite { layer: n_layers + 1 });
            }
            Ok(Forward {
                tape,
                params: param_nodes,
                losses,
                logits: Some(h),
            })
        }
        Architecture::QuadraticHead { dim, centered } => {
            let mut neg_centers = Matrix::zeros(batch.len(), *dim);
            if *centered {
                for (o, v) in neg_centers.data.iter_mut().zip(&batch.features.data) {
                    *o = -v;
                }
            }
            let c = tape.constant(neg_centers);
            let theta = tape.param(Matrix::from_vec(1, *dim, p.to_vec()));
            param_nodes.push(theta);
            let diff = tape.add_row(c, theta);
            let losses = tape.row_sum_squares(diff);
            if check_finite && !tape.value(losses).all_finite() {
                return Err(Error::NonFinite { layer: 1 });
            }
            Ok(Forward {
                tape,
                params: param_nodes,
                losses,
                logits: None,
            })
        }
    }
}

/// One loss per sample of `batch`, in the batch's (ascending index) order.
///
/// Non-finite losses are returned as-is; callers decide how to treat them.
pub fn per_sample_losses(spec: &ModelSpec, params: &ParamVector, batch: &SampleBatch) -> Result<Vec<f64>> {
    let fwd = forward(spec, params, batch, false)?;
    Ok(fwd.tape.value(fwd.losses).data.clone())
}

/// Mean sample loss over `batch` and its gradient.
pub fn batch_loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &SampleBatch,
) -> Result<(f64, ParamVector)> {
    let mut fwd = forward(spec, params, batch, true)?;
    let root = fwd.tape.mean(fwd.losses);
    let loss = fwd.tape.value(root).data[0];
    let grads = fwd.tape.backward(root);
    let mut flat = Vec::with_capacity(params.len());
    for id in &fwd.params {
        match grads[id.index()].as_ref() {
            Some(g) => flat.extend_from_slice(&g.data),
            None => flat.extend(std::iter::repeat_n(0.0, fwd.tape.value(*id).data.len())),
        }
    }
    let grad = ParamVector::new(flat);
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((loss, grad))
}

/// Slope of the batch loss along unit `direction` at `params`.
pub fn directional_derivative(
    spec: &ModelSpec,
    params: &ParamVector,
    direction: &ParamVector,
    batch: &SampleBatch,
) -> Result<f64> {
    let norm = direction.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::spec(format!("direction must have unit norm, got {norm}")));
    }
    let (_, grad) = batch_loss_and_grad(spec, params, batch)?;
    grad.dot(direction)
}

/// Fraction of samples whose arg-max logit equals the label, or `None` for
/// models without a classification head.
pub fn accuracy(spec: &ModelSpec, params: &ParamVector, batch: &SampleBatch) -> Result<Option<f64>> {
    let fwd = forward(spec, params, batch, false)?;
    let Some(logits) = fwd.logits else {
        return Ok(None);
    };
    let lv = fwd.tape.value(logits);
    let mut correct = 0usize;
    for (r, &label) in batch.labels.iter().enumerate() {
        let row = lv.row(r);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / batch.len() as f64))
}
