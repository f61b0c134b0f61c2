mod common;

use linescope_core::data::Dataset;
use linescope_core::nncore::{
    axpy_point, batch_loss_and_grad, directional_derivative, init_bound, init_model, mean_in_order, per_sample_losses,
    Activation, ModelSpec, ParamVector, SampleBatch,
};
use linescope_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch_loss(spec: &ModelSpec, p: &ParamVector, batch: &SampleBatch) -> f64 {
    mean_in_order(&per_sample_losses(spec, p, batch).unwrap())
}

/// Max componentwise error relative to the larger gradient's max entry.
fn fd_relative_error(spec: &ModelSpec, p: &ParamVector, batch: &SampleBatch, eps: f64) -> f64 {
    let (_, grad) = batch_loss_and_grad(spec, p, batch).unwrap();
    let mut fd = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let mut plus = p.clone();
        plus.as_mut_slice()[i] += eps;
        let mut minus = p.clone();
        minus.as_mut_slice()[i] -= eps;
        fd.push((batch_loss(spec, &plus, batch) - batch_loss(spec, &minus, batch)) / (2.0 * eps));
    }
    let scale = grad
        .as_slice()
        .iter()
        .chain(&fd)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    grad.as_slice()
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / scale)
        .fold(0.0, f64::max)
}

fn random_case(rng: &mut ChaCha8Rng) -> (ModelSpec, ParamVector, SampleBatch) {
    let dim = rng.random_range(1..6);
    let classes = rng.random_range(2..5);
    let hidden = rng.random_range(1..3);
    let mut layers = vec![dim];
    for _ in 0..hidden {
        layers.push(rng.random_range(2..7));
    }
    layers.push(classes);
    let activation = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
    let spec = ModelSpec::mlp(layers, activation, rng.random());
    // Random biases keep ReLU pre-activations off the kink at exactly 0,
    // which zero-initialized biases hit whenever a whole layer is inactive.
    let params = ParamVector::new((0..spec.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect());
    let n = rng.random_range(1..9);
    let rows = (0..n)
        .map(|i| {
            let x = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            (i, x, rng.random_range(0..classes))
        })
        .collect();
    (spec, params, SampleBatch::new(rows).unwrap())
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (spec, p, batch) = random_case(&mut rng);
        worst = worst.max(fd_relative_error(&spec, &p, &batch, 1e-5));
    }
    assert!(worst < 1e-6, "max relative error {worst}");
}

#[test]
fn quadratic_head_gradient_is_two_theta() {
    let spec = ModelSpec::quadratic(4, false, 0);
    let p = ParamVector::new(vec![0.5, -1.0, 2.0, 0.0]);
    let batch = SampleBatch::new(vec![(0, vec![9.0], 0), (1, vec![-3.0], 0)]).unwrap();
    let (loss, g) = batch_loss_and_grad(&spec, &p, &batch).unwrap();
    assert_eq!(loss, 0.25 + 1.0 + 4.0);
    assert_eq!(g.as_slice(), &[1.0, -2.0, 4.0, 0.0]);
}

#[test]
fn init_is_deterministic_and_bounded() {
    let spec = ModelSpec::mlp(vec![2, 3, 2], Activation::Relu, 7);
    let a = init_model(&spec).unwrap();
    assert_eq!(a, init_model(&spec).unwrap());
    assert_eq!(a.len(), 17);

    let spec = ModelSpec::mlp(vec![4, 8, 8, 3], Activation::Tanh, 1);
    let p = init_model(&spec).unwrap();
    let mut offset = 0;
    for w in [(4, 8), (8, 8), (8, 3)] {
        let bound = init_bound(w.0, w.1);
        let weights = &p.as_slice()[offset..offset + w.0 * w.1];
        assert!(weights.iter().all(|v| v.abs() <= bound));
        offset += w.0 * w.1;
        assert!(p.as_slice()[offset..offset + w.1].iter().all(|&b| b == 0.0));
        offset += w.1;
    }
    assert!(ModelSpec::mlp(vec![3, 0, 2], Activation::Relu, 0).validate().is_err());
}

#[test]
fn zero_output_layer_gives_log_c() {
    let spec = ModelSpec::mlp(vec![3, 4, 5], Activation::Relu, 2);
    let mut p = init_model(&spec).unwrap();
    let hidden_params = 3 * 4 + 4;
    for v in &mut p.as_mut_slice()[hidden_params..] {
        *v = 0.0;
    }
    let ds = common::blobs(20, 5, 3, 1);
    for l in per_sample_losses(&spec, &p, &ds.full_batch()).unwrap() {
        assert!((l - 5f64.ln()).abs() < 1e-15);
    }
}

#[test]
fn hand_softmax_single_layer() {
    // logits = x W + b with W 2x3 row-major.
    let w = [1.0, -0.5, 0.25, 0.0, 2.0, -1.0];
    let b = [0.1, 0.0, -0.2];
    let spec = ModelSpec::mlp(vec![2, 3], Activation::Relu, 0);
    let mut params = w.to_vec();
    params.extend(b);
    let p = ParamVector::new(params);
    let samples = [([1.0, 2.0], 0usize), ([-1.0, 0.5], 2), ([3.0, -2.0], 1)];
    let rows = samples.iter().enumerate().map(|(i, (x, y))| (i, x.to_vec(), *y)).collect();
    let got = per_sample_losses(&spec, &p, &SampleBatch::new(rows).unwrap()).unwrap();
    for (k, (x, y)) in samples.iter().enumerate() {
        let logits: Vec<f64> = (0..3).map(|c| x[0] * w[c] + x[1] * w[3 + c] + b[c]).collect();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let expected = -(logits[*y].exp() / z).ln();
        assert!((got[k] - expected).abs() < 1e-14, "{} vs {expected}", got[k]);
    }
}

#[test]
fn batch_loss_is_mean_of_sample_losses() {
    let ds = common::blobs(40, 3, 4, 5);
    let spec = ModelSpec::mlp(vec![4, 6, 3], Activation::Tanh, 3);
    let p = init_model(&spec).unwrap();
    let batch = ds.batch(&[31, 2, 17, 8, 9]).unwrap();
    let (loss, _) = batch_loss_and_grad(&spec, &p, &batch).unwrap();
    assert_eq!(loss, batch_loss(&spec, &p, &batch));
}

#[test]
fn single_sample_batch_gradient() {
    let ds = common::blobs(10, 2, 3, 8);
    let spec = ModelSpec::mlp(vec![3, 4, 2], Activation::Relu, 4);
    let p = init_model(&spec).unwrap();
    let full = ds.batch(&[6]).unwrap();
    let (_, g1) = batch_loss_and_grad(&spec, &p, &full).unwrap();
    let (_, g2) = batch_loss_and_grad(&spec, &p, &full.single(0)).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn directional_derivative_identities() {
    let ds = common::blobs(64, 4, 5, 11);
    let spec = ModelSpec::mlp(vec![5, 8, 4], Activation::Tanh, 6);
    let p = init_model(&spec).unwrap();
    let batch = ds.batch(&(0..16).collect::<Vec<_>>()).unwrap();
    let (_, g) = batch_loss_and_grad(&spec, &p, &batch).unwrap();
    let norm = g.norm();
    let d = g.scaled(-1.0 / norm);
    let dd = directional_derivative(&spec, &p, &d, &batch).unwrap();
    assert!(((dd + norm) / norm).abs() < 1e-10);

    // Finite-difference slope along the line.
    let eps = 1e-4;
    let fd = (batch_loss(&spec, &axpy_point(&p, eps, &d).unwrap(), &batch)
        - batch_loss(&spec, &axpy_point(&p, -eps, &d).unwrap(), &batch))
        / (2.0 * eps);
    assert!((fd - dd).abs() < 1e-5);

    // A direction orthogonal to g.
    let mut e = vec![0.0; g.len()];
    e[0] = 1.0;
    let e = ParamVector::new(e);
    let along = g.dot(&e).unwrap() / (norm * norm);
    let ortho = e.sub(&g.scaled(along)).unwrap();
    let ortho = ortho.scaled(1.0 / ortho.norm());
    assert!(directional_derivative(&spec, &p, &ortho, &batch).unwrap().abs() < 1e-9);

    assert!(matches!(
        directional_derivative(&spec, &p, &g, &batch),
        Err(Error::Spec(_))
    ));
}

#[test]
fn evaluation_is_bit_deterministic() {
    let ds = common::blobs(50, 3, 4, 2);
    let spec = ModelSpec::mlp(vec![4, 7, 3], Activation::Relu, 12);
    let p = init_model(&spec).unwrap();
    let batch = ds.full_batch();
    let a = batch_loss_and_grad(&spec, &p, &batch).unwrap();
    let b = batch_loss_and_grad(&spec, &p, &batch).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1.to_le_bytes(), b.1.to_le_bytes());
}

#[test]
fn overflow_reports_layer() {
    let ds = Dataset::new(vec![1e300, 1e300], 2, vec![0], 2).unwrap();
    let spec = ModelSpec::mlp(vec![2, 2, 2], Activation::Relu, 0);
    let p = ParamVector::new(vec![1e300; spec.param_count()]);
    let err = batch_loss_and_grad(&spec, &p, &ds.full_batch()).unwrap_err();
    assert!(matches!(err, Error::NonFinite { layer: 1 }), "{err}");
}

#[test]
fn mismatched_params_are_rejected() {
    let ds = common::blobs(10, 2, 3, 0);
    let spec = ModelSpec::mlp(vec![3, 4, 2], Activation::Relu, 0);
    let p = ParamVector::zeros(5);
    assert!(matches!(per_sample_losses(&spec, &p, &ds.full_batch()), Err(Error::Spec(_))));
    let spec = ModelSpec::mlp(vec![4, 4, 2], Activation::Relu, 0);
    let p = init_model(&spec).unwrap();
    assert!(matches!(per_sample_losses(&spec, &p, &ds.full_batch()), Err(Error::Spec(_))));
}
