//! SGD with classical momentum, per-step recording and deterministic replay.
//!
//! The update is `m' = beta * m + g`, `theta' = theta - lr * m'` (no
//! dampening, no Nesterov). Each step records the unit direction the update
//! moves along: `-g/|g|` without momentum, `-m'/|m'|` with it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{BatchPlan, BatchStream, Dataset};
use crate::nncore::{accuracy, batch_loss_and_grad, init_model, per_sample_losses, mean_in_order, ModelSpec, ParamVector};
use crate::{Error, Result};

/// Gradients (or momentum buffers) with a norm below this have no usable
/// unit direction.
pub const ZERO_DIRECTION_NORM: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch: BatchPlan,
    pub model: ModelSpec,
    pub master_seed: u64,
    /// Parameter snapshots are kept every this many steps.
    pub snapshot_stride: usize,
    /// Full-dataset loss and accuracy are evaluated every this many steps.
    pub eval_stride: usize,
    /// Unit directions are retained in memory every this many steps.
    pub direction_stride: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::spec(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::spec(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.steps == 0 {
            return Err(Error::spec("steps must be positive"));
        }
        if self.snapshot_stride == 0 || self.eval_stride == 0 || self.direction_stride == 0 {
            return Err(Error::spec("strides must be positive"));
        }
        self.model.validate()
    }

    /// Short content hash of the configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn uses_momentum(&self) -> bool {
        self.momentum > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    /// Negative unit mini-batch gradient.
    Gradient,
    /// Negative unit momentum buffer.
    Momentum,
    /// Negative unit gradient of an extra batch drawn at a fixed position.
    Noisy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: u64,
    /// Direction-defining batch, ascending.
    pub batch: Vec<usize>,
    pub kind: DirectionKind,
    /// Unit direction, retained only on `direction_stride` steps. All zero
    /// when `zero_direction` is set.
    pub direction: Option<ParamVector>,
    pub zero_direction: bool,
    pub grad_norm: f64,
    /// `g . d` for the defining batch gradient `g`.
    pub dderiv: f64,
    pub batch_loss: f64,
    /// Norm of the updated momentum buffer `m'` (equals `|g|` without momentum).
    pub momentum_norm: f64,
}

impl StepRecord {
    /// Length of the actual SGD step along `d`, divided by the learning rate.
    pub fn step_norm(&self) -> f64 {
        match self.kind {
            DirectionKind::Momentum => self.momentum_norm,
            _ => self.grad_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub config: TrainConfig,
    pub records: Vec<StepRecord>,
    /// State before step `k` (so key 0 is the initialization).
    pub snapshots: BTreeMap<usize, ParamVector>,
    pub evals: Vec<EvalPoint>,
    pub final_params: ParamVector,
}

/// `(params', buffer')` after one heavy-ball step.
pub fn sgd_update(
    params: &ParamVector,
    buffer: &ParamVector,
    grad: &ParamVector,
    lr: f64,
    momentum: f64,
) -> Result<(ParamVector, ParamVector)> {
    if params.len() != grad.len() || buffer.len() != grad.len() {
        return Err(Error::spec("parameter, buffer and gradient lengths differ"));
    }
    let new_buffer: Vec<f64> = buffer
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(m, g)| momentum * m + g)
        .collect();
    let new_params: Vec<f64> = params
        .as_slice()
        .iter()
        .zip(&new_buffer)
        .map(|(p, m)| p - lr * m)
        .collect();
    let (p, m) = (ParamVector::new(new_params), ParamVector::new(new_buffer));
    if !p.is_finite() || !m.is_finite() {
        return Err(Error::Numeric("non-finite parameter update".into()));
    }
    Ok((p, m))
}

fn unit_direction(v: &ParamVector) -> Option<ParamVector> {
    let norm = v.norm();
    if norm < ZERO_DIRECTION_NORM {
        return None;
    }
    Some(ParamVector::new(v.as_slice().iter().map(|x| -x / norm).collect()))
}

/// Step-by-step SGD driver shared by training and replay.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    dataset: &'a Dataset,
    params: ParamVector,
    buffer: ParamVector,
    stream: BatchStream,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        config.model.check_data(dataset.dim(), dataset.classes())?;
        let params = init_model(&config.model)?;
        let buffer = ParamVector::zeros(params.len());
        Ok(Trainer {
            config,
            dataset,
            params,
            buffer,
            stream: BatchStream::new(dataset.len(), config.batch)?,
            step: 0,
        })
    }

    /// Index of the next step to run.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn buffer(&self) -> &ParamVector {
        &self.buffer
    }

    /// Runs one step and returns its record with the direction attached.
    pub fn step(&mut self) -> Result<StepRecord> {
        let k = self.step;
        let diverged = || Error::Diverged {
            step: k,
            last_valid: k.checked_sub(1),
        };
        let (epoch, mut indices) = self.stream.next().expect("batch stream is endless");
        indices.sort_unstable();
        let batch = self.dataset.batch(&indices)?;
        let (loss, grad) = batch_loss_and_grad(&self.config.model, &self.params, &batch).map_err(|e| match e {
            Error::NonFinite { .. } | Error::Numeric(_) => diverged(),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(diverged());
        }
        let (params, buffer) =
            sgd_update(&self.params, &self.buffer, &grad, self.config.learning_rate, self.config.momentum)
                .map_err(|_| diverged())?;

        let kind = if self.config.uses_momentum() {
            DirectionKind::Momentum
        } else {
            DirectionKind::Gradient
        };
        let source = match kind {
            DirectionKind::Momentum => &buffer,
            _ => &grad,
        };
        let (direction, zero_direction, dderiv) = match unit_direction(source) {
            Some(d) => {
                let dd = grad.dot(&d)?;
                (d, false, dd)
            }
            None => (ParamVector::zeros(grad.len()), true, 0.0),
        };
        let record = StepRecord {
            step: k,
            epoch,
            batch: indices,
            kind,
            direction: Some(direction),
            zero_direction,
            grad_norm: grad.norm(),
            dderiv,
            batch_loss: loss,
            momentum_norm: buffer.norm(),
        };
        self.params = params;
        self.buffer = buffer;
        self.step += 1;
        Ok(record)
    }
}

/// Full-dataset mean loss and accuracy at `params`.
pub fn evaluate(model: &ModelSpec, params: &ParamVector, dataset: &Dataset) -> Result<(f64, Option<f64>)> {
    let full = dataset.full_batch();
    let losses = per_sample_losses(model, params, &full)?;
    let acc = accuracy(model, params, &full)?;
    Ok((mean_in_order(&losses), acc))
}

/// Trains for `config.steps` steps, recording every step.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<Trajectory> {
    let mut trainer = Trainer::new(config, dataset)?;
    let mut records = Vec::with_capacity(config.steps);
    let mut snapshots = BTreeMap::new();
    let mut evals = Vec::new();
    for k in 0..config.steps {
        if k % config.snapshot_stride == 0 {
            snapshots.insert(k, trainer.params().clone());
        }
        if k % config.eval_stride == 0 {
            let (loss, acc) = evaluate(&config.model, trainer.params(), dataset)?;
            evals.push(EvalPoint { step: k, loss, accuracy: acc });
        }
        let mut record = trainer.step()?;
        if k % config.direction_stride != 0 {
            record.direction = None;
        }
        records.push(record);
    }
    if config.steps % config.snapshot_stride == 0 {
        snapshots.insert(config.steps, trainer.params().clone());
    }
    let (loss, acc) = evaluate(&config.model, trainer.params(), dataset)?;
    evals.push(EvalPoint {
        step: config.steps,
        loss,
        accuracy: acc,
    });
    Ok(Trajectory {
        config: config.clone(),
        records,
        snapshots,
        evals,
        final_params: trainer.params().clone(),
    })
}

/// Parameters and momentum buffer as they were right before step `k`.
pub fn replay_to_step(config: &TrainConfig, dataset: &Dataset, k: usize) -> Result<(ParamVector, ParamVector)> {
    if k > config.steps {
        return Err(Error::spec(format!("step {k} beyond the {} configured steps", config.steps)));
    }
    let mut trainer = Trainer::new(config, dataset)?;
    while trainer.step_index() < k {
        trainer.step()?;
    }
    Ok((trainer.params().clone(), trainer.buffer().clone()))
}

/// Origin and full step record (with direction) for each requested step,
/// produced by one sequential replay. `steps` must be ascending.
pub fn replay_lines(
    config: &TrainConfig,
    dataset: &Dataset,
    steps: &[usize],
) -> Result<Vec<(ParamVector, StepRecord)>> {
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::spec("replay steps must be strictly ascending"));
    }
    if let Some(&last) = steps.last() {
        if last >= config.steps {
            return Err(Error::spec(format!("step {last} beyond the {} configured steps", config.steps)));
        }
    }
    let mut trainer = Trainer::new(config, dataset)?;
    let mut out = Vec::with_capacity(steps.len());
    for &k in steps {
        while trainer.step_index() < k {
            trainer.step()?;
        }
        let origin = trainer.params().clone();
        let record = trainer.step()?;
        out.push((origin, record));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nncore::Activation;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    #[test]
    fn sgd_without_momentum() {
        let (p, m) = sgd_update(&pv(&[1.0, 2.0]), &pv(&[5.0, 5.0]), &pv(&[0.5, -1.0]), 0.1, 0.0).unwrap();
        assert_eq!(p.as_slice(), &[1.0 - 0.1 * 0.5, 2.0 + 0.1]);
        assert_eq!(m.as_slice(), &[0.5, -1.0]);
    }

    #[test]
    fn sgd_with_momentum_arithmetic() {
        let (p, m) = sgd_update(&pv(&[0.0, 0.0]), &pv(&[10.0, 0.0]), &pv(&[1.0, -1.0]), 0.1, 0.9).unwrap();
        assert_eq!(m.as_slice(), &[10.0, -1.0]);
        assert!((p.as_slice()[0] + 1.0).abs() < 1e-15);
        assert!((p.as_slice()[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sgd_fixed_point() {
        let (p, m) = sgd_update(&pv(&[3.0, -4.0]), &pv(&[0.0, 0.0]), &pv(&[0.0, 0.0]), 0.5, 0.9).unwrap();
        assert_eq!(p.as_slice(), &[3.0, -4.0]);
        assert_eq!(m.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn sgd_non_finite_is_error() {
        let r = sgd_update(&pv(&[0.0]), &pv(&[0.0]), &pv(&[f64::INFINITY]), 0.1, 0.0);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    fn small_config(momentum: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            momentum,
            steps: 25,
            batch: BatchPlan { batch_size: 16, shuffle_seed: 3 },
            model: ModelSpec::mlp(vec![4, 8, 3], Activation::Relu, 5),
            master_seed: 1,
            snapshot_stride: 10,
            eval_stride: 5,
            direction_stride: 1,
        }
    }

    #[test]
    fn replay_matches_snapshots() {
        let data = synth_blobs(60, 3, 4, 1.0, 2).unwrap();
        for beta in [0.0, 0.9] {
            let cfg = small_config(beta);
            let traj = train(&cfg, &data).unwrap();
            assert_eq!(traj.snapshots.keys().copied().collect::<Vec<_>>(), vec![0, 10, 20]);
            for (&k, snap) in &traj.snapshots {
                assert_eq!(&replay_to_step(&cfg, &data, k).unwrap().0, snap);
            }
            assert_eq!(replay_to_step(&cfg, &data, 0).unwrap().0, init_model(&cfg.model).unwrap());
            assert!(replay_to_step(&cfg, &data, 26).is_err());
        }
    }

    #[test]
    fn momentum_first_step_matches_plain_sgd() {
        let data = synth_blobs(60, 3, 4, 1.0, 2).unwrap();
        let a = train(&small_config(0.0), &data).unwrap();
        let b = train(&small_config(0.9), &data).unwrap();
        assert_eq!(a.records[0].direction, b.records[0].direction);
        assert_eq!(b.records[0].kind, DirectionKind::Momentum);
    }

    #[test]
    fn update_length_matches_buffer_norm() {
        let data = synth_blobs(60, 3, 4, 1.0, 2).unwrap();
        let cfg = small_config(0.9);
        let mut trainer = Trainer::new(&cfg, &data).unwrap();
        for _ in 0..10 {
            let before = trainer.params().clone();
            trainer.step().unwrap();
            let moved = trainer.params().sub(&before).unwrap().norm();
            let expected = cfg.learning_rate * trainer.buffer().norm();
            assert!((moved - expected).abs() <= 1e-12 * expected);
        }
    }

    #[test]
    fn replay_lines_agree_with_records() {
        let data = synth_blobs(60, 3, 4, 1.0, 2).unwrap();
        let cfg = small_config(0.0);
        let traj = train(&cfg, &data).unwrap();
        let lines = replay_lines(&cfg, &data, &[0, 7, 24]).unwrap();
        for (origin, rec) in &lines {
            assert_eq!(rec, &traj.records[rec.step]);
            assert_eq!(origin, &replay_to_step(&cfg, &data, rec.step).unwrap().0);
        }
        assert!(replay_lines(&cfg, &data, &[3, 2]).is_err());
    }
}
