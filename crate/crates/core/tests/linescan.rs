mod common;

use linescope_core::analysis::{distance_matrix, Window};
use linescope_core::data::BatchPlan;
use linescope_core::linescan::{aggregate, fan_scan, fan_scan_batches, make_grid, scan_line, DirectionMeta, Granularity, ScanRequest};
use linescope_core::nncore::{init_model, mean_in_order, per_sample_losses, ModelSpec, ParamVector};
use linescope_core::trainer::{replay_lines, train, DirectionKind};
use linescope_core::Error;

fn meta(batch: Vec<usize>) -> DirectionMeta {
    DirectionMeta {
        step: 0,
        kind: DirectionKind::Gradient,
        batch,
        grad_norm: 1.0,
        dderiv: -1.0,
        momentum_norm: 1.0,
        batch_loss: 0.0,
    }
}

#[test]
fn quadratic_head_closed_form() {
    let ds = common::blobs(30, 3, 6, 4);
    let spec = ModelSpec::quadratic(6, false, 1);
    let theta = init_model(&spec).unwrap();
    let d = theta.scaled(-1.0 / theta.norm());
    let grid = make_grid(-0.5, 0.5, 0.006).unwrap();
    let req = ScanRequest {
        model: &spec,
        origin: &theta,
        direction: &d,
        meta: meta(vec![0, 1]),
        granularity: Granularity::Full,
        other_batches: &[],
    };
    let scan = scan_line(&req, &grid, &ds).unwrap();
    for (i, s) in grid.points().into_iter().enumerate() {
        let exact: f64 = theta.as_slice().iter().zip(d.as_slice()).map(|(t, di)| (t + s * di).powi(2)).sum();
        assert!((scan.full[i] - exact).abs() < 1e-12);
    }
    let direct = mean_in_order(&per_sample_losses(&spec, &theta, &ds.full_batch()).unwrap());
    assert_eq!(scan.origin_loss(), direct);
}

#[test]
fn per_sample_aggregation_matches_curves() {
    let ds = common::blobs(40, 3, 4, 7);
    let cfg = common::mlp_config(4, 3, 3, 0.1, 0.0);
    let traj = train(&cfg, &ds).unwrap();
    let lines = replay_lines(&cfg, &ds, &[2]).unwrap();
    let (origin, record) = &lines[0];
    assert_eq!(traj.records[2].batch, record.batch);
    let grid = make_grid(-0.2, 0.2, 0.02).unwrap();
    let other = vec![vec![0, 5, 9]];
    let mut req = ScanRequest {
        model: &cfg.model,
        origin,
        direction: record.direction.as_ref().unwrap(),
        meta: DirectionMeta::from_record(record),
        granularity: Granularity::PerSample,
        other_batches: &other,
    };
    let fine = scan_line(&req, &grid, &ds).unwrap();
    req.granularity = Granularity::Full;
    let coarse = scan_line(&req, &grid, &ds).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    assert_eq!(aggregate(&fine, &all).unwrap(), coarse.full);
    assert_eq!(aggregate(&fine, &record.batch).unwrap(), coarse.defining);
    assert_eq!(aggregate(&fine, &other[0]).unwrap(), fine.batches[0].1);
    let m = fine.per_sample.as_ref().unwrap();
    let row: Vec<f64> = m.row(7).to_vec();
    assert_eq!(aggregate(&fine, &[7]).unwrap(), row);
    assert!(matches!(aggregate(&coarse, &all), Err(Error::Capability(_))));

    // The defining curve's slope at 0 matches the recorded derivative.
    let z = grid.zero_index();
    let fd = (fine.defining[z + 1] - fine.defining[z - 1]) / (2.0 * grid.resolution);
    assert!((fd - record.dderiv).abs() < 1e-3 * record.dderiv.abs().max(1.0));
}

#[test]
fn zero_direction_is_constant() {
    let ds = common::blobs(20, 2, 3, 1);
    let spec = ModelSpec::mlp(vec![3, 4, 2], linescope_core::nncore::Activation::Relu, 0);
    let p = init_model(&spec).unwrap();
    let zero = ParamVector::zeros(p.len());
    let grid = make_grid(-0.5, 0.5, 0.05).unwrap();
    let req = ScanRequest {
        model: &spec,
        origin: &p,
        direction: &zero,
        meta: meta(vec![0]),
        granularity: Granularity::Full,
        other_batches: &[],
    };
    let scan = scan_line(&req, &grid, &ds).unwrap();
    assert!(scan.full.iter().all(|&v| v == scan.origin_loss()));
    let bad = p.clone();
    let req = ScanRequest { direction: &bad, ..req };
    assert!(matches!(scan_line(&req, &grid, &ds), Err(Error::Spec(_))));
}

#[test]
fn extreme_points_are_masked() {
    let ds = common::blobs(10, 2, 2, 2);
    let spec = ModelSpec::quadratic(2, false, 0);
    let p = ParamVector::new(vec![0.0, 0.0]);
    let d = ParamVector::new(vec![1.0, 0.0]);
    let grid = make_grid(-1e200, 1e200, 1e199).unwrap();
    let req = ScanRequest {
        model: &spec,
        origin: &p,
        direction: &d,
        meta: meta(vec![0]),
        granularity: Granularity::Full,
        other_batches: &[],
    };
    let scan = scan_line(&req, &grid, &ds).unwrap();
    assert!(scan.masked_count() > 0);
    assert!(!scan.is_valid());
    assert!(!scan.masked[grid.zero_index()]);
}

#[test]
fn thread_count_does_not_change_curves() {
    let ds = common::blobs(60, 3, 4, 3);
    let cfg = common::mlp_config(4, 3, 2, 0.1, 0.9);
    let (origin, record) = replay_lines(&cfg, &ds, &[1]).unwrap().remove(0);
    let grid = make_grid(-0.5, 0.5, 0.006).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let req = ScanRequest {
                model: &cfg.model,
                origin: &origin,
                direction: record.direction.as_ref().unwrap(),
                meta: DirectionMeta::from_record(&record),
                granularity: Granularity::PerSample,
                other_batches: &[],
            };
            scan_line(&req, &grid, &ds).unwrap()
        })
    };
    let a = run(1);
    let b = run(8);
    assert_eq!(a, b);
}

#[test]
fn fan_shares_origin() {
    let ds = common::blobs(80, 4, 5, 9);
    let spec = ModelSpec::mlp(vec![5, 8, 4], linescope_core::nncore::Activation::Tanh, 2);
    let p = init_model(&spec).unwrap();
    let grid = make_grid(-0.2, 0.2, 0.01).unwrap();
    let plan = BatchPlan {
        batch_size: 8,
        shuffle_seed: 4,
    };
    let scans = fan_scan(&spec, &p, 10, &ds, &plan, &grid).unwrap();
    assert_eq!(scans.len(), 10);
    let l0 = scans[0].origin_loss();
    assert!(scans.iter().all(|s| s.origin_loss() == l0));
    let curves: Vec<_> = scans.iter().map(|s| s.full_curve()).collect();
    let m = distance_matrix(&curves, Window { lo: -0.2, hi: 0.2 }).unwrap();
    assert!(m.values.iter().all(|v| v.is_finite()));
    for i in 0..10 {
        for j in 0..10 {
            assert_eq!(m.get(i, j), m.get(j, i));
        }
    }

    let same = vec![vec![1, 2, 3], vec![1, 2, 3]];
    let twins = fan_scan_batches(&spec, &p, &same, &ds, &grid, Granularity::Full).unwrap();
    assert_eq!(twins[0].full, twins[1].full);
    assert!(fan_scan(&spec, &p, 1, &ds, &plan, &grid).is_err());
}
