use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{formats, subset, synth_blobs, Dataset};
use crate::Result;

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        n: usize,
        classes: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Cifar10 {
        path: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub fraction: f64,
    pub seed: u64,
}

/// Everything needed to rebuild a training set: source, optional stratified
/// subset, then optional per-feature standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRecipe {
    pub source: DataSource,
    pub subset: Option<SubsetSpec>,
    pub standardize: bool,
}

impl DataRecipe {
    pub fn build(&self) -> Result<Dataset> {
        let raw = match &self.source {
            DataSource::Synthetic {
                n,
                classes,
                dim,
                spread,
                seed,
            } => synth_blobs(*n, *classes, *dim, *spread, *seed)?,
            DataSource::Idx { images, labels } => formats::load_idx(images, labels)?,
            DataSource::Cifar10 { path } => formats::load_cifar10(path)?,
            DataSource::Csv { path } => formats::load_csv(path)?,
        };
        let picked = match &self.subset {
            Some(s) => subset(&raw, s.fraction, s.seed)?.0,
            None => raw,
        };
        Ok(if self.standardize {
            picked.standardized()
        } else {
            picked
        })
    }
}
