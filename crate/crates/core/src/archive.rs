//! On-disk layouts for trajectories and scan archives.
//!
//! Trajectory directory:
//!
//! ```text
//! config.json                 RunManifest
//! steps.csv                   one row per step record
//! evals.csv                   full-dataset loss/accuracy
//! snapshots/step_<k>.f64le    parameters before step k
//! directions/step_<k>.f64le   unit direction of step k
//! ```
//!
//! Scan archive:
//!
//! ```text
//! run.json                    RunManifest of the source trajectory
//! step_<k>/manifest.json      ScanManifest
//! step_<k>/full.csv           s,loss,masked
//! step_<k>/batches.csv        s,defining[,b0,...]
//! step_<k>/per_sample.f64le   optional n_samples x n_grid matrix
//! ```
//!
//! Floats are written in shortest round-trip form, so reading and writing
//! again reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataRecipe, Dataset};
use crate::linescan::{DirectionMeta, Granularity, Grid, LineScan};
use crate::nncore::tape::Matrix;
use crate::nncore::ParamVector;
use crate::trainer::{DirectionKind, EvalPoint, StepRecord, TrainConfig, Trajectory};
use crate::{Error, Result};

/// How a grid's lower end is placed; stored with every scan.
pub const GRID_RULE: &str = "lo snapped toward zero to a multiple of the resolution";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub train: TrainConfig,
    pub data: DataRecipe,
    pub dataset_fingerprint: String,
    pub dataset_len: usize,
    pub config_hash: String,
}

impl RunManifest {
    pub fn new(train: &TrainConfig, data: &DataRecipe, dataset: &Dataset) -> Self {
        RunManifest {
            train: train.clone(),
            data: data.clone(),
            dataset_fingerprint: dataset.fingerprint_hex(),
            dataset_len: dataset.len(),
            config_hash: train.config_hash(),
        }
    }

    /// Rebuilds the dataset and checks it against the recorded fingerprint.
    pub fn dataset(&self, path: &Path) -> Result<Dataset> {
        let d = self.data.build()?;
        if d.fingerprint_hex() != self.dataset_fingerprint {
            return Err(Error::integrity(
                path,
                format!(
                    "dataset fingerprint {} does not match recorded {}",
                    d.fingerprint_hex(),
                    self.dataset_fingerprint
                ),
            ));
        }
        Ok(d)
    }

    fn check(&self, path: &Path) -> Result<()> {
        if self.train.config_hash() != self.config_hash {
            return Err(Error::integrity(path, "config hash does not match the stored configuration"));
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|_| Error::integrity(path, "file is not valid UTF-8"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::integrity(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::integrity(path, e.to_string()))
}

fn read_params(path: &Path) -> Result<ParamVector> {
    ParamVector::from_le_bytes(&read_bytes(path)?).map_err(|e| Error::integrity(path, e.to_string()))
}

fn step_file(dir: &Path, sub: &str, k: usize) -> PathBuf {
    dir.join(sub).join(format!("step_{k}.f64le"))
}

/// Parses `step_<k>` names.
fn step_of(name: &str, suffix: &str) -> Option<usize> {
    name.strip_prefix("step_")?.strip_suffix(suffix)?.parse().ok()
}

fn numbered_entries(dir: &Path, suffix: &str) -> Result<BTreeMap<usize, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(k) = entry.file_name().to_str().and_then(|n| step_of(n, suffix)) {
            out.insert(k, entry.path());
        }
    }
    Ok(out)
}

fn kind_str(kind: DirectionKind) -> &'static str {
    match kind {
        DirectionKind::Gradient => "gradient",
        DirectionKind::Momentum => "momentum",
        DirectionKind::Noisy => "noisy",
    }
}

fn parse_kind(s: &str) -> Option<DirectionKind> {
    match s {
        "gradient" => Some(DirectionKind::Gradient),
        "momentum" => Some(DirectionKind::Momentum),
        "noisy" => Some(DirectionKind::Noisy),
        _ => None,
    }
}

const STEPS_HEADER: &str = "step,epoch,kind,grad_norm,dderiv,batch_loss,momentum_norm,zero_direction,batch";

pub fn steps_csv(records: &[StepRecord]) -> String {
    let mut out = String::from(STEPS_HEADER);
    out.push('\n');
    for r in records {
        let batch: Vec<String> = r.batch.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            kind_str(r.kind),
            r.grad_norm,
            r.dderiv,
            r.batch_loss,
            r.momentum_norm,
            r.zero_direction,
            batch.join(" ")
        );
    }
    out
}

fn parse_steps_csv(path: &Path, text: &str) -> Result<Vec<StepRecord>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::integrity(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != STEPS_HEADER {
        return Err(Error::integrity(path, "unexpected steps.csv header"));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::integrity(path, e.to_string()))?;
        let bad = |what: &str| Error::integrity(path, format!("row {}: invalid {what}", row + 1));
        let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        let batch = rec[8]
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().map_err(|_| bad("batch")))
            .collect::<Result<Vec<_>>>()?;
        out.push(StepRecord {
            step: rec[0].parse().map_err(|_| bad("step"))?,
            epoch: rec[1].parse().map_err(|_| bad("epoch"))?,
            kind: parse_kind(&rec[2]).ok_or_else(|| bad("kind"))?,
            grad_norm: num(3, "grad_norm")?,
            dderiv: num(4, "dderiv")?,
            batch_loss: num(5, "batch_loss")?,
            momentum_norm: num(6, "momentum_norm")?,
            zero_direction: rec[7].parse().map_err(|_| bad("zero_direction"))?,
            batch,
            direction: None,
        });
    }
    Ok(out)
}

fn evals_csv(evals: &[EvalPoint]) -> String {
    let mut out = String::from("step,loss,accuracy\n");
    for e in evals {
        let acc = e.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", e.step, e.loss, acc);
    }
    out
}

/// A trajectory as read back from disk. Records carry no directions; those
/// live in `directions`.
#[derive(Clone, Debug)]
pub struct StoredTrajectory {
    pub dir: PathBuf,
    pub run: RunManifest,
    pub records: Vec<StepRecord>,
    pub snapshots: BTreeMap<usize, PathBuf>,
    pub directions: BTreeMap<usize, PathBuf>,
}

impl StoredTrajectory {
    pub fn snapshot(&self, k: usize) -> Result<ParamVector> {
        let path = self
            .snapshots
            .get(&k)
            .ok_or_else(|| Error::Capability(format!("no snapshot for step {k}")))?;
        read_params(path)
    }

    pub fn direction(&self, k: usize) -> Result<ParamVector> {
        let path = self
            .directions
            .get(&k)
            .ok_or_else(|| Error::Capability(format!("no direction stored for step {k}")))?;
        read_params(path)
    }
}

pub fn write_trajectory(dir: &Path, traj: &Trajectory, run: &RunManifest) -> Result<()> {
    write_json(&dir.join("config.json"), run)?;
    write_file(&dir.join("steps.csv"), steps_csv(&traj.records).as_bytes())?;
    write_file(&dir.join("evals.csv"), evals_csv(&traj.evals).as_bytes())?;
    for (k, p) in &traj.snapshots {
        write_file(&step_file(dir, "snapshots", *k), &p.to_le_bytes())?;
    }
    fs::create_dir_all(dir.join("directions")).map_err(|e| Error::io(dir.join("directions"), e))?;
    for r in &traj.records {
        if let Some(d) = &r.direction {
            write_file(&step_file(dir, "directions", r.step), &d.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_trajectory(dir: &Path) -> Result<StoredTrajectory> {
    if !dir.is_dir() {
        return Err(Error::integrity(dir, "trajectory directory does not exist"));
    }
    let config_path = dir.join("config.json");
    let run: RunManifest = read_json(&config_path)?;
    run.check(&config_path)?;
    let steps_path = dir.join("steps.csv");
    let records = parse_steps_csv(&steps_path, &read_text(&steps_path)?)?;
    if records.len() != run.train.steps || records.iter().enumerate().any(|(i, r)| r.step != i) {
        return Err(Error::integrity(
            &steps_path,
            format!("expected {} consecutive step rows, found {}", run.train.steps, records.len()),
        ));
    }
    Ok(StoredTrajectory {
        dir: dir.to_path_buf(),
        records,
        snapshots: numbered_entries(&dir.join("snapshots"), ".f64le")?,
        directions: numbered_entries(&dir.join("directions"), ".f64le")?,
        run,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanManifest {
    pub step: usize,
    pub kind: DirectionKind,
    pub batch: Vec<usize>,
    pub grad_norm: f64,
    pub dderiv: f64,
    pub momentum_norm: f64,
    pub batch_loss: f64,
    pub grid: Grid,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_rule: String,
    pub granularity: Granularity,
    pub dataset_len: usize,
    pub dataset_fingerprint: String,
    pub config_hash: String,
    pub masked_count: usize,
    pub valid: bool,
    pub batch_labels: Vec<String>,
    pub per_sample: bool,
}

impl ScanManifest {
    pub fn of(scan: &LineScan, run: &RunManifest) -> Self {
        let m = &scan.meta;
        ScanManifest {
            step: m.step,
            kind: m.kind,
            batch: m.batch.clone(),
            grad_norm: m.grad_norm,
            dderiv: m.dderiv,
            momentum_norm: m.momentum_norm,
            batch_loss: m.batch_loss,
            grid: scan.grid.clone(),
            grid_lo: scan.grid.lo(),
            grid_hi: scan.grid.hi(),
            grid_rule: GRID_RULE.into(),
            granularity: scan.granularity,
            dataset_len: scan.dataset_len,
            dataset_fingerprint: run.dataset_fingerprint.clone(),
            config_hash: run.config_hash.clone(),
            masked_count: scan.masked_count(),
            valid: scan.is_valid(),
            batch_labels: scan.batches.iter().map(|(l, _)| l.clone()).collect(),
            per_sample: scan.per_sample.is_some(),
        }
    }
}

pub fn full_csv(scan: &LineScan) -> String {
    let mut out = String::from("s,loss,masked\n");
    for (i, s) in scan.grid.points().iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", s, scan.full[i], u8::from(scan.masked[i]));
    }
    out
}

pub fn batches_csv(scan: &LineScan) -> String {
    let mut out = String::from("s,defining");
    for (label, _) in &scan.batches {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (i, s) in scan.grid.points().iter().enumerate() {
        let _ = write!(out, "{},{}", s, scan.defining[i]);
        for (_, curve) in &scan.batches {
            let _ = write!(out, ",{}", curve[i]);
        }
        out.push('\n');
    }
    out
}

pub fn step_dir(root: &Path, step: usize) -> PathBuf {
    root.join(format!("step_{step}"))
}

pub fn write_scan_root(root: &Path, run: &RunManifest) -> Result<()> {
    write_json(&root.join("run.json"), run)
}

/// Writes one scan under `root/step_<k>/` and returns that directory.
pub fn write_scan(root: &Path, scan: &LineScan, run: &RunManifest) -> Result<PathBuf> {
    let dir = step_dir(root, scan.meta.step);
    write_json(&dir.join("manifest.json"), &ScanManifest::of(scan, run))?;
    write_file(&dir.join("full.csv"), full_csv(scan).as_bytes())?;
    write_file(&dir.join("batches.csv"), batches_csv(scan).as_bytes())?;
    let ps = dir.join("per_sample.f64le");
    match &scan.per_sample {
        Some(m) => {
            let bytes: Vec<u8> = m.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            write_file(&ps, &bytes)?;
        }
        None if ps.exists() => fs::remove_file(&ps).map_err(|e| Error::io(&ps, e))?,
        None => {}
    }
    Ok(dir)
}

fn parse_columns(path: &Path, text: &str, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| Error::integrity(path, e.to_string()))?;
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::integrity(path, format!("expected header `{}`", header.join(","))));
    }
    let mut cols = vec![Vec::new(); header.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::integrity(path, e.to_string()))?;
        for (c, field) in rec.iter().enumerate() {
            let v = field
                .parse::<f64>()
                .map_err(|_| Error::integrity(path, format!("row {}: invalid number `{field}`", row + 1)))?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

fn check_s(path: &Path, s: &[f64], grid: &Grid) -> Result<()> {
    let pts = grid.points();
    if s.len() != pts.len() || s.iter().zip(&pts).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(Error::integrity(path, "step sizes do not match the manifest grid"));
    }
    Ok(())
}

pub fn read_scan(dir: &Path) -> Result<LineScan> {
    let mpath = dir.join("manifest.json");
    let m: ScanManifest = read_json(&mpath)?;
    let fpath = dir.join("full.csv");
    let full = parse_columns(&fpath, &read_text(&fpath)?, &["s", "loss", "masked"])?;
    check_s(&fpath, &full[0], &m.grid)?;
    let masked: Vec<bool> = full[2].iter().map(|&v| v != 0.0).collect();
    if masked.iter().filter(|&&b| b).count() != m.masked_count {
        return Err(Error::integrity(&fpath, "masked count disagrees with the manifest"));
    }

    let bpath = dir.join("batches.csv");
    let mut header = vec!["s", "defining"];
    header.extend(m.batch_labels.iter().map(|s| s.as_str()));
    let mut bcols = parse_columns(&bpath, &read_text(&bpath)?, &header)?;
    check_s(&bpath, &bcols[0], &m.grid)?;
    let batches: Vec<(String, Vec<f64>)> = m.batch_labels.iter().cloned().zip(bcols.drain(2..)).collect();
    let defining = bcols.pop().expect("defining column");

    let per_sample = if m.per_sample {
        let ppath = dir.join("per_sample.f64le");
        let bytes = read_bytes(&ppath)?;
        if bytes.len() != m.dataset_len * m.grid.count * 8 {
            return Err(Error::integrity(
                &ppath,
                format!(
                    "expected {} x {} values, file has {} bytes",
                    m.dataset_len,
                    m.grid.count,
                    bytes.len()
                ),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Some(Matrix::from_vec(m.dataset_len, m.grid.count, data))
    } else {
        None
    };

    Ok(LineScan {
        meta: DirectionMeta {
            step: m.step,
            kind: m.kind,
            batch: m.batch,
            grad_norm: m.grad_norm,
            dderiv: m.dderiv,
            momentum_norm: m.momentum_norm,
            batch_loss: m.batch_loss,
        },
        grid: m.grid,
        granularity: m.granularity,
        dataset_len: m.dataset_len,
        full: full[1].clone(),
        masked,
        defining,
        batches,
        per_sample,
    })
}

/// A scan archive: its run manifest and every scan, in step order.
#[derive(Clone, Debug)]
pub struct ScanArchive {
    pub root: PathBuf,
    pub run: RunManifest,
    pub scans: Vec<LineScan>,
}

pub fn read_scan_archive(root: &Path) -> Result<ScanArchive> {
    let rpath = root.join("run.json");
    if !rpath.exists() {
        return Err(Error::integrity(root, "not a scan archive (run.json missing)"));
    }
    let run: RunManifest = read_json(&rpath)?;
    run.check(&rpath)?;
    let mut scans = Vec::new();
    for (k, dir) in numbered_entries(root, "")? {
        let scan = read_scan(&dir)?;
        if scan.meta.step != k {
            return Err(Error::integrity(&dir, format!("manifest step {} in directory of step {k}", scan.meta.step)));
        }
        if scan.dataset_len != run.dataset_len {
            return Err(Error::integrity(&dir, "dataset size differs from run.json"));
        }
        scans.push(scan);
    }
    if scans.is_empty() {
        return Err(Error::spec(format!("scan archive {} holds no scans", root.display())));
    }
    Ok(ScanArchive {
        root: root.to_path_buf(),
        run,
        scans,
    })
}

/// Writes a whole archive.
pub fn write_scan_archive(root: &Path, run: &RunManifest, scans: &[LineScan]) -> Result<()> {
    write_scan_root(root, run)?;
    for s in scans {
        write_scan(root, s, run)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataSource;
    use crate::linescan::make_grid;
    use crate::nncore::{Activation, ModelSpec};
    use crate::data::BatchPlan;

    fn run() -> RunManifest {
        let train = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            steps: 3,
            batch: BatchPlan {
                batch_size: 2,
                shuffle_seed: 1,
            },
            model: ModelSpec::mlp(vec![2, 3, 2], Activation::Relu, 0),
            master_seed: 0,
            snapshot_stride: 1,
            eval_stride: 1,
            direction_stride: 1,
        };
        RunManifest {
            config_hash: train.config_hash(),
            train,
            data: DataRecipe {
                source: DataSource::Synthetic {
                    n: 4,
                    classes: 2,
                    dim: 2,
                    spread: 1.0,
                    seed: 0,
                },
                subset: None,
                standardize: false,
            },
            dataset_fingerprint: "00".into(),
            dataset_len: 4,
        }
    }

    fn scan(per_sample: bool) -> LineScan {
        let grid = make_grid(-0.2, 0.2, 0.1).unwrap();
        let g = grid.count;
        LineScan {
            meta: DirectionMeta {
                step: 2,
                kind: DirectionKind::Gradient,
                batch: vec![0, 3],
                grad_norm: 1.25,
                dderiv: -1.25,
                momentum_norm: 1.25,
                batch_loss: 0.1 + 0.2,
            },
            granularity: if per_sample { Granularity::PerSample } else { Granularity::PerBatch },
            dataset_len: 4,
            full: vec![0.7, 0.1 / 3.0, f64::INFINITY, 2.0f64.sqrt(), 1e-300],
            masked: vec![false, false, true, false, false],
            defining: (0..g).map(|i| (i as f64).exp()).collect(),
            batches: vec![("b0".into(), vec![1.0 / 7.0; g])],
            per_sample: per_sample.then(|| Matrix::from_vec(4, g, (0..4 * g).map(|i| (i as f64).ln_1p()).collect())),
            grid,
        }
    }

    #[test]
    fn scan_round_trip_bytes() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        let s = scan(true);
        write_scan_archive(&a, &run(), &[s.clone()]).unwrap();
        let back = read_scan_archive(&a).unwrap();
        assert_eq!(back.scans[0], s);
        write_scan_archive(&b, &back.run, &back.scans).unwrap();
        for f in ["run.json", "step_2/manifest.json", "step_2/full.csv", "step_2/batches.csv", "step_2/per_sample.f64le"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn corrupt_full_csv_is_integrity_error() {
        let tmp = tempfile::tempdir().unwrap();
        write_scan_archive(tmp.path(), &run(), &[scan(false)]).unwrap();
        let f = tmp.path().join("step_2/full.csv");
        let text = fs::read_to_string(&f).unwrap().replace("0.7", "abc");
        fs::write(&f, text).unwrap();
        let err = read_scan_archive(tmp.path()).unwrap_err();
        assert!(matches!(&err, Error::Integrity { path, .. } if path.ends_with("full.csv")), "{err}");
    }

    #[test]
    fn truncated_matrix_is_integrity_error() {
        let tmp = tempfile::tempdir().unwrap();
        write_scan_archive(tmp.path(), &run(), &[scan(true)]).unwrap();
        let f = tmp.path().join("step_2/per_sample.f64le");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_scan_archive(tmp.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn tampered_config_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut r = run();
        write_scan_archive(tmp.path(), &r, &[scan(false)]).unwrap();
        r.train.learning_rate = 0.2;
        write_json(&tmp.path().join("run.json"), &r).unwrap();
        assert!(matches!(read_scan_archive(tmp.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn empty_archive_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write_scan_root(tmp.path(), &run()).unwrap();
        assert!(matches!(read_scan_archive(tmp.path()), Err(Error::Spec(_))));
    }

    #[test]
    fn steps_csv_round_trip() {
        let r = StepRecord {
            step: 0,
            epoch: 0,
            batch: vec![1, 5],
            kind: DirectionKind::Momentum,
            direction: None,
            zero_direction: false,
            grad_norm: 0.1 + 0.2,
            dderiv: -0.3,
            batch_loss: 1.0 / 3.0,
            momentum_norm: 2.5,
        };
        let text = steps_csv(std::slice::from_ref(&r));
        let back = parse_steps_csv(Path::new("steps.csv"), &text).unwrap();
        assert_eq!(back, vec![r]);
        assert_eq!(steps_csv(&back), text);
    }
}
