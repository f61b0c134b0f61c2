use std::path::{Path, PathBuf};

use serde::Serialize;

use linescope_core::archive::{
    read_trajectory, write_file, write_scan, write_scan_root, write_trajectory, RunManifest, StoredTrajectory,
};
use linescope_core::data::BatchPlan;
use linescope_core::linescan::{fan_scan, make_grid, scan_line, DirectionMeta, Granularity, ScanRequest};
use linescope_core::nncore::ParamVector;
use linescope_core::trainer::{replay_lines, replay_to_step, train, StepRecord, TrainConfig};
use linescope_core::Error;

use super::{effective_config, RUN_CONF};
use crate::config::ConfigMap;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub steps: usize,
    pub config_hash: String,
    pub final_loss: f64,
}

/// Resolved configuration text plus derived identifiers; writes nothing.
pub fn dry_run(conf: &ConfigMap) -> CliResult<String> {
    conf.check_train_keys()?;
    let recipe = conf.data_recipe()?;
    let ds = recipe.build()?;
    let cfg = conf.train_config(ds.dim())?;
    let mut text = conf.resolved_text();
    text.push_str(&format!("# config_hash = {}\n", cfg.config_hash()));
    text.push_str(&format!("# dataset = {} samples, {} features, {} classes\n", ds.len(), ds.dim(), ds.classes()));
    text.push_str(&format!("# model parameters = {}\n", cfg.model.param_count()));
    Ok(text)
}

pub fn cmd_train(conf: &ConfigMap, out: &Path) -> CliResult<TrainSummary> {
    conf.check_train_keys()?;
    let recipe = conf.data_recipe()?;
    let ds = recipe.build()?;
    let cfg = conf.train_config(ds.dim())?;
    let traj = train(&cfg, &ds)?;
    let run = RunManifest::new(&cfg, &recipe, &ds);
    write_trajectory(out, &traj, &run)?;
    write_file(&out.join(RUN_CONF), conf.resolved_text().as_bytes())?;
    Ok(TrainSummary {
        out: out.to_path_buf(),
        steps: cfg.steps,
        config_hash: run.config_hash,
        final_loss: traj.evals.last().map(|e| e.loss).unwrap_or(f64::NAN),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanSummary {
    pub out: PathBuf,
    pub steps: Vec<usize>,
    pub per_sample: usize,
    pub invalid: Vec<usize>,
    pub grid_count: usize,
}

fn mismatch(path: &Path, what: &str, k: usize) -> CliError {
    CliError::Core(Error::Integrity {
        path: path.to_path_buf(),
        message: format!("{what} of step {k} does not match the replayed run"),
    })
}

/// Checks a replayed step against everything the trajectory stored for it.
fn cross_check(stored: &StoredTrajectory, origin: &ParamVector, rec: &StepRecord) -> CliResult<()> {
    let k = rec.step;
    let steps_csv = stored.dir.join("steps.csv");
    let s = stored
        .records
        .get(k)
        .ok_or_else(|| CliError::Core(Error::Integrity {
            path: steps_csv.clone(),
            message: format!("no record for step {k}"),
        }))?;
    let same = s.step == k
        && s.batch == rec.batch
        && s.kind == rec.kind
        && s.zero_direction == rec.zero_direction
        && s.grad_norm.to_bits() == rec.grad_norm.to_bits()
        && s.dderiv.to_bits() == rec.dderiv.to_bits()
        && s.batch_loss.to_bits() == rec.batch_loss.to_bits()
        && s.momentum_norm.to_bits() == rec.momentum_norm.to_bits();
    if !same {
        return Err(mismatch(&steps_csv, "record", k));
    }
    if let Some(path) = stored.snapshots.get(&k) {
        if stored.snapshot(k)?.to_le_bytes() != origin.to_le_bytes() {
            return Err(mismatch(path, "snapshot", k));
        }
    }
    if let (Some(path), Some(d)) = (stored.directions.get(&k), &rec.direction) {
        if stored.direction(k)?.to_le_bytes() != d.to_le_bytes() {
            return Err(mismatch(path, "direction", k));
        }
    }
    Ok(())
}

fn open_trajectory(dir: &Path) -> CliResult<StoredTrajectory> {
    let stored = read_trajectory(dir)?;
    if stored.records.len() != stored.run.train.steps {
        return Err(CliError::Core(Error::Integrity {
            path: dir.join("steps.csv"),
            message: format!("{} records for {} configured steps", stored.records.len(), stored.run.train.steps),
        }));
    }
    Ok(stored)
}

pub fn cmd_scan(overrides: &ConfigMap, trajectory: &Path, out: &Path) -> CliResult<ScanSummary> {
    let conf = effective_config(trajectory, overrides)?;
    let stored = open_trajectory(trajectory)?;
    let cfg: &TrainConfig = &stored.run.train;
    let stride: usize = conf.require("scan.stride")?;
    if stride == 0 {
        return Err(CliError::Config("config key `scan.stride` must be positive".into()));
    }
    let (lo, hi, res) = conf.grid_args()?;
    let grid = make_grid(lo, hi, res)?;
    let per_sample = conf.per_sample()?;
    let steps: Vec<usize> = (0..cfg.steps).step_by(stride).collect();
    if let crate::config::PerSample::List(list) = &per_sample {
        if let Some(k) = list.iter().find(|k| !steps.contains(k)) {
            return Err(CliError::Config(format!("per-sample step {k} is not a scanned step")));
        }
    }
    let ds = stored.run.dataset(&trajectory.join("config.json"))?;

    let lines = replay_lines(cfg, &ds, &steps)?;
    for (origin, rec) in &lines {
        cross_check(&stored, origin, rec)?;
    }

    write_scan_root(out, &stored.run)?;
    let mut summary = ScanSummary {
        out: out.to_path_buf(),
        steps: steps.clone(),
        per_sample: 0,
        invalid: Vec::new(),
        grid_count: grid.count,
    };
    for (origin, rec) in &lines {
        let keep = per_sample.includes(rec.step);
        let req = ScanRequest {
            model: &cfg.model,
            origin,
            direction: rec.direction.as_ref().expect("replay keeps directions"),
            meta: DirectionMeta::from_record(rec),
            granularity: if keep { Granularity::PerSample } else { Granularity::Full },
            other_batches: &[],
        };
        let scan = scan_line(&req, &grid, &ds)?;
        if !scan.is_valid() {
            summary.invalid.push(rec.step);
        }
        summary.per_sample += keep as usize;
        write_scan(out, &scan, &stored.run)?;
    }
    write_file(&out.join(RUN_CONF), conf.resolved_text().as_bytes())?;
    Ok(summary)
}

/// Lines through one trajectory point along several mini-batch gradients.
pub fn cmd_fan(overrides: &ConfigMap, trajectory: &Path, out: &Path) -> CliResult<ScanSummary> {
    let conf = effective_config(trajectory, overrides)?;
    let stored = open_trajectory(trajectory)?;
    let cfg = &stored.run.train;
    let k: usize = conf.require("fan.k")?;
    let at: usize = conf.require("fan.step")?;
    let (lo, hi, res) = conf.grid_args()?;
    let grid = make_grid(lo, hi, res)?;
    let ds = stored.run.dataset(&trajectory.join("config.json"))?;
    let origin = if stored.snapshots.contains_key(&at) {
        stored.snapshot(at)?
    } else {
        replay_to_step(cfg, &ds, at)?.0
    };
    let plan = BatchPlan {
        batch_size: cfg.batch.batch_size,
        shuffle_seed: conf.fan_seed()?,
    };
    let scans = fan_scan(&cfg.model, &origin, k, &ds, &plan, &grid)?;
    write_scan_root(out, &stored.run)?;
    for s in &scans {
        write_scan(out, s, &stored.run)?;
    }
    write_file(&out.join(RUN_CONF), conf.resolved_text().as_bytes())?;
    Ok(ScanSummary {
        out: out.to_path_buf(),
        steps: (0..k).collect(),
        per_sample: 0,
        invalid: scans.iter().filter(|s| !s.is_valid()).map(|s| s.meta.step).collect(),
        grid_count: grid.count,
    })
}
