//! Flat `key = value` run configuration.
//!
//! Every key is documented in [`KEYS`]. Later sources win: a stored
//! `run.conf`, then `--config`, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use linescope_core::batchsim::ShrinkRule;
use linescope_core::data::{BatchPlan, DataRecipe, DataSource, SubsetSpec};
use linescope_core::nncore::{Activation, ModelSpec};
use linescope_core::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

pub struct Key {
    pub name: &'static str,
    /// `None`: required (possibly only in some modes); `Some("")`: optional.
    pub default: Option<&'static str>,
    pub doc: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, doc: &'static str) -> Key {
    Key { name, default, doc }
}

pub const KEYS: &[Key] = &[
    key("seed", Some("0"), "master seed; unset per-component seeds derive from it"),
    key("threads", Some(""), "worker threads (default: LINESCOPE_THREADS, else all cores)"),
    key("data.source", None, "synthetic | idx | cifar10 | csv"),
    key("data.n", Some("2000"), "synthetic sample count"),
    key("data.classes", Some("4"), "synthetic class count"),
    key("data.dim", Some("16"), "synthetic feature dimension"),
    key("data.spread", Some("1.0"), "synthetic blob standard deviation"),
    key("data.seed", Some(""), "synthetic generator seed"),
    key("data.images", Some(""), "IDX image file"),
    key("data.labels", Some(""), "IDX label file"),
    key("data.path", Some(""), "CIFAR-10 binary batch or CSV file"),
    key("data.subset", Some("1"), "stratified subset fraction in (0, 1]"),
    key("data.subset_seed", Some(""), "subset selection seed"),
    key("data.standardize", Some("false"), "standardize features to zero mean, unit variance"),
    key("model.kind", Some("mlp"), "mlp | quadratic"),
    key("model.layers", None, "MLP layer sizes, input first, e.g. 16,32,32,4"),
    key("model.activation", Some("relu"), "relu | tanh"),
    key("model.dim", Some(""), "quadratic head dimension (default: feature dimension)"),
    key("model.centered", Some("true"), "quadratic head loss |theta - x|^2 instead of |theta|^2"),
    key("model.seed", Some(""), "initialization seed"),
    key("train.lr", None, "learning rate"),
    key("train.momentum", Some("0"), "heavy-ball momentum in [0, 1)"),
    key("train.steps", None, "number of SGD steps"),
    key("train.batch_size", None, "mini-batch size"),
    key("train.shuffle_seed", Some(""), "batch shuffling seed"),
    key("train.snapshot_stride", Some("100"), "parameter snapshot every this many steps"),
    key("train.eval_stride", Some("100"), "full-dataset evaluation every this many steps"),
    key("scan.stride", Some("1"), "scan every this many steps; directions are stored on the same steps"),
    key("scan.grid_lo", Some("-0.5"), "lowest step size"),
    key("scan.grid_hi", Some("0.5"), "highest step size"),
    key("scan.grid_res", Some("0.006"), "grid resolution"),
    key("scan.per_sample", Some(""), "steps keeping the per-sample loss matrix: comma list, `every:N` or `all`"),
    key("analysis.window", Some(""), "lo,hi shape window (default -0.2,0.2 without momentum, -0.5,0.5 with)"),
    key("strategies.lrs", Some("1,0.1,0.05,0.01"), "SGD learning rates to score"),
    key("strategies.mu", Some("0.1"), "PAL / FBPAL second sample position"),
    key("strategies.kernel", Some("25"), "moving-average kernel (odd)"),
    key("strategies.interpolate", Some("false"), "score improvements by grid interpolation instead of re-evaluation"),
    key("batch.factors", Some("0.25,0.5,2,4"), "batch-size factors for the ratio study"),
    key("batch.seed", Some(""), "virtual batch growth seed"),
    key("batch.shrink_rule", Some("signed"), "signed | magnitude"),
    key("fan.k", Some("10"), "number of directions in a fan"),
    key("fan.step", Some("0"), "trajectory step the fan starts from"),
    key("fan.seed", Some(""), "batch drawing seed for the fan"),
];

fn known(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Deterministic per-component seed from the master seed.
pub fn derive_seed(master: u64, component: &str) -> u64 {
    // splitmix64 over the master seed mixed with an FNV-1a hash of the name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let mut map = ConfigMap::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", no + 1)))?;
            map.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", no + 1)))?;
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if known(key).is_none() {
            return Err(CliError::Config(format!("unknown config key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Parses `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> CliResult<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn merge(&mut self, other: &ConfigMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self
            .entries
            .get(key)
            .map(|s| s.as_str())
            .or_else(|| known(key).and_then(|k| k.default))?;
        (!v.is_empty()).then_some(v)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        debug_assert!(known(key).is_some(), "undocumented key {key}");
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("invalid value `{v}` for config key `{key}`"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> CliResult<T> {
        self.get(key)?
            .ok_or_else(|| CliError::Config(format!("missing config key `{key}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| CliError::Config(format!("invalid list entry `{p}` for config key `{key}`")))
                })
                .collect(),
        }
    }

    fn seed_or_derived(&self, key: &str) -> CliResult<u64> {
        match self.get(key)? {
            Some(s) => Ok(s),
            None => Ok(derive_seed(self.require("seed")?, key)),
        }
    }

    /// Every documented key with its effective value, one per line.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let v = self.entries.get(k.name).map(|s| s.as_str()).or(k.default).unwrap_or("");
            let _ = writeln!(out, "{} = {}", k.name, v);
        }
        out
    }

    pub fn data_recipe(&self) -> CliResult<DataRecipe> {
        let source: String = self.require("data.source")?;
        let path = |key: &str| -> CliResult<PathBuf> { self.require::<String>(key).map(PathBuf::from) };
        let source = match source.as_str() {
            "synthetic" => DataSource::Synthetic {
                n: self.require("data.n")?,
                classes: self.require("data.classes")?,
                dim: self.require("data.dim")?,
                spread: self.require("data.spread")?,
                seed: self.seed_or_derived("data.seed")?,
            },
            "idx" => DataSource::Idx {
                images: path("data.images")?,
                labels: path("data.labels")?,
            },
            "cifar10" => DataSource::Cifar10 { path: path("data.path")? },
            "csv" => DataSource::Csv { path: path("data.path")? },
            other => return Err(CliError::Config(format!("invalid value `{other}` for config key `data.source`"))),
        };
        let fraction: f64 = self.require("data.subset")?;
        let subset = (fraction != 1.0).then(|| -> CliResult<SubsetSpec> {
            Ok(SubsetSpec {
                fraction,
                seed: self.seed_or_derived("data.subset_seed")?,
            })
        });
        Ok(DataRecipe {
            source,
            subset: subset.transpose()?,
            standardize: self.require("data.standardize")?,
        })
    }

    /// Model spec; `feature_dim` fills in an unset quadratic dimension.
    pub fn model(&self, feature_dim: usize) -> CliResult<ModelSpec> {
        let seed = self.seed_or_derived("model.seed")?;
        let kind: String = self.require("model.kind")?;
        match kind.as_str() {
            "mlp" => {
                let layers: Vec<usize> = self.list("model.layers")?;
                if layers.is_empty() {
                    return Err(CliError::Config("missing config key `model.layers`".into()));
                }
                let act: String = self.require("model.activation")?;
                let activation = Activation::from_str(&act)
                    .map_err(|_| CliError::Config(format!("invalid value `{act}` for config key `model.activation`")))?;
                Ok(ModelSpec::mlp(layers, activation, seed))
            }
            "quadratic" => Ok(ModelSpec::quadratic(
                self.get("model.dim")?.unwrap_or(feature_dim),
                self.require("model.centered")?,
                seed,
            )),
            other => Err(CliError::Config(format!("invalid value `{other}` for config key `model.kind`"))),
        }
    }

    pub fn train_config(&self, feature_dim: usize) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.require("train.lr")?,
            momentum: self.require("train.momentum")?,
            steps: self.require("train.steps")?,
            batch: BatchPlan {
                batch_size: self.require("train.batch_size")?,
                shuffle_seed: self.seed_or_derived("train.shuffle_seed")?,
            },
            model: self.model(feature_dim)?,
            master_seed: self.require("seed")?,
            snapshot_stride: self.require("train.snapshot_stride")?,
            eval_stride: self.require("train.eval_stride")?,
            direction_stride: self.require("scan.stride")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every training key without touching the data.
    pub fn check_train_keys(&self) -> CliResult<()> {
        self.data_recipe()?;
        for k in ["train.lr", "train.steps", "train.batch_size"] {
            self.require::<String>(k)?;
        }
        if self.require::<String>("model.kind")? == "mlp" {
            self.require::<String>("model.layers")?;
        }
        Ok(())
    }

    pub fn grid_args(&self) -> CliResult<(f64, f64, f64)> {
        Ok((
            self.require("scan.grid_lo")?,
            self.require("scan.grid_hi")?,
            self.require("scan.grid_res")?,
        ))
    }

    pub fn window(&self, momentum: f64) -> CliResult<linescope_core::analysis::Window> {
        let v: Vec<f64> = self.list("analysis.window")?;
        match v.as_slice() {
            [] => Ok(linescope_core::analysis::Window::default_for(momentum)),
            [lo, hi] => Ok(linescope_core::analysis::Window::new(*lo, *hi)?),
            _ => Err(CliError::Config("config key `analysis.window` needs `lo,hi`".into())),
        }
    }

    pub fn per_sample(&self) -> CliResult<PerSample> {
        match self.raw("scan.per_sample") {
            None => Ok(PerSample::List(Vec::new())),
            Some("all") => Ok(PerSample::All),
            Some(v) if v.starts_with("every:") => match v["every:".len()..].trim().parse() {
                Ok(n) if n > 0 => Ok(PerSample::Every(n)),
                _ => Err(CliError::Config(format!("invalid value `{v}` for config key `scan.per_sample`"))),
            },
            Some(_) => self.list("scan.per_sample").map(PerSample::List),
        }
    }

    pub fn shrink_rule(&self) -> CliResult<ShrinkRule> {
        match self.require::<String>("batch.shrink_rule")?.as_str() {
            "signed" => Ok(ShrinkRule::Signed),
            "magnitude" => Ok(ShrinkRule::Magnitude),
            other => Err(CliError::Config(format!("invalid value `{other}` for config key `batch.shrink_rule`"))),
        }
    }

    pub fn batch_seed(&self) -> CliResult<u64> {
        self.seed_or_derived("batch.seed")
    }

    pub fn fan_seed(&self) -> CliResult<u64> {
        self.seed_or_derived("fan.seed")
    }
}

/// Which scanned steps keep their per-sample loss matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum PerSample {
    All,
    Every(usize),
    List(Vec<usize>),
}

impl PerSample {
    pub fn includes(&self, step: usize) -> bool {
        match self {
            PerSample::All => true,
            PerSample::Every(n) => step % n == 0,
            PerSample::List(v) => v.contains(&step),
        }
    }
}
