//! Binary and text dataset loaders.
//!
//! IDX (big-endian, unsigned byte payload) and CIFAR-10 binary batches are
//! scaled to `[0, 1]` by dividing pixel bytes by 255. CSV features are taken
//! verbatim.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR10_RECORD: usize = 3073;
const IMAGE_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Idx,
    Cifar10Bin,
    Csv,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(bytes.len(), format!("truncated header, expected 4 bytes at {offset}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(format_err(
            0,
            format!("bad magic number: expected 0x{expected:08x}, found 0x{found:08x}"),
        ));
    }
    Ok(())
}

/// Parses an IDX image file (`n x rows x cols`) and its label file.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    check_magic(images, IDX_IMAGES_MAGIC)?;
    let n = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let dim = rows * cols;
    let expected = 16 + n * dim;
    if images.len() < expected {
        return Err(format_err(
            images.len(),
            format!("truncated image data: expected {expected} bytes, file has {}", images.len()),
        ));
    }

    check_magic(labels, IDX_LABELS_MAGIC).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("label file: {message}"),
        },
        other => other,
    })?;
    let n_labels = be_u32(labels, 4)? as usize;
    if n_labels != n {
        return Err(format_err(4, format!("label count {n_labels} does not match image count {n}")));
    }
    if labels.len() < 8 + n {
        return Err(format_err(
            labels.len(),
            format!("truncated label data: expected {} bytes, file has {}", 8 + n, labels.len()),
        ));
    }
    let mut label_vec = Vec::with_capacity(n);
    for i in 0..n {
        let l = labels[8 + i] as usize;
        if l >= IMAGE_CLASSES {
            return Err(format_err(8 + i, format!("label {l} out of range")));
        }
        label_vec.push(l);
    }
    if n == 0 {
        return Err(format_err(4, "IDX file contains no samples"));
    }
    let features = images[16..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(features, dim, label_vec, IMAGE_CLASSES)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    parse_idx(&read(images)?, &read(labels)?)
}

/// Parses concatenated CIFAR-10 binary records (1 label byte + 3072 pixels).
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(format_err(0, "empty CIFAR-10 file"));
    }
    if bytes.len() % CIFAR10_RECORD != 0 {
        let whole = bytes.len() / CIFAR10_RECORD * CIFAR10_RECORD;
        return Err(format_err(
            whole,
            format!(
                "truncated record: {} trailing bytes, records are {CIFAR10_RECORD} bytes",
                bytes.len() - whole
            ),
        ));
    }
    let n = bytes.len() / CIFAR10_RECORD;
    let mut features = Vec::with_capacity(n * (CIFAR10_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        let l = rec[0] as usize;
        if l >= IMAGE_CLASSES {
            return Err(format_err(r * CIFAR10_RECORD, format!("label {l} out of range")));
        }
        labels.push(l);
        features.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset::new(features, CIFAR10_RECORD - 1, labels, IMAGE_CLASSES)
}

pub fn load_cifar10(path: &Path) -> Result<Dataset> {
    parse_cifar10(&read(path)?)
}

/// CSV with header `label,f0,f1,...`; class count is `max label + 1`.
pub fn parse_csv(text: &[u8]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text);
    let header = reader
        .headers()
        .map_err(|e| format_err(0, format!("unreadable header: {e}")))?
        .clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(format_err(0, "header must start with `label` followed by feature columns"));
    }
    let dim = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte() as usize);
            format_err(offset, e.to_string())
        })?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        if record.len() != header.len() {
            return Err(format_err(offset, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| format_err(offset, format!("invalid label `{}`", &record[0])))?;
        labels.push(label);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format_err(offset, format!("invalid feature `{field}`")))?;
            features.push(v);
        }
    }
    let classes = labels.iter().max().map(|m| m + 1).ok_or_else(|| format_err(text.len(), "CSV has no records"))?;
    Dataset::new(features, dim, labels, classes.max(2))
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    parse_csv(&read(path)?)
}

/// Loads `path` in `format`. IDX expects the label file alongside, named by
/// replacing `images` with `labels` in the file name.
pub fn load_dataset(format: DataFormat, path: &Path) -> Result<Dataset> {
    match format {
        DataFormat::Idx => {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::spec(format!("invalid IDX path {}", path.display())))?;
            if !name.contains("images") {
                return Err(Error::spec(format!(
                    "cannot derive the label file from `{name}`; use load_idx with both paths"
                )));
            }
            let labels = path.with_file_name(name.replacen("images", "labels", 1).replacen("idx3", "idx1", 1));
            load_idx(path, &labels)
        }
        DataFormat::Cifar10Bin => load_cifar10(path),
        DataFormat::Csv => load_csv(path),
    }
}
