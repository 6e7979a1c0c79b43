//! CIFAR-10 binary batches on disk.

use std::fs;
use std::path::{Path, PathBuf};

use edgelab_core::datasets::{balanced_subset, concat, decode_cifar, stratified_split, LabeledImageSet, Split};

use crate::error::{IoContext, LabError, Result};

/// Directory used when no path is given on the command line.
pub const DATA_ENV: &str = "CIFAR10_DIR";
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone)]
pub struct CifarSplits {
    pub train: LabeledImageSet,
    pub val: LabeledImageSet,
    pub test: LabeledImageSet,
}

/// The explicit directory, else `$CIFAR10_DIR`.
pub fn resolve_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    let dir = match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(DATA_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| LabError::data(format!("dataset not found; pass --data or set {DATA_ENV}")))?,
    };
    if !dir.join(TEST_FILE).is_file() {
        return Err(LabError::data(format!(
            "dataset not found in {}; expected the CIFAR-10 binary batches (set {DATA_ENV})",
            dir.display()
        )));
    }
    Ok(dir)
}

pub fn read_batch(path: &Path, split: Split) -> Result<LabeledImageSet> {
    let bytes = fs::read(path).at(path)?;
    decode_cifar(&bytes, split).map_err(|e| LabError::data(format!("{}: {e}", path.display())))
}

/// All 50,000 training records.
pub fn read_train(dir: &Path) -> Result<LabeledImageSet> {
    let parts = TRAIN_FILES
        .iter()
        .map(|f| read_batch(&dir.join(f), Split::Train))
        .collect::<Result<Vec<_>>>()?;
    Ok(concat(&parts, Split::Train)?)
}

/// Class-balanced `subset` of the training pool, split into train and a
/// stratified `val_fraction`, plus the full test batch.
pub fn load_cifar10(dir: &Path, subset: f64, val_fraction: f64, seed: u64) -> Result<CifarSplits> {
    let pool = balanced_subset(&read_train(dir)?, subset, seed)?;
    let (train, val) = stratified_split(&pool, val_fraction, seed)?;
    let test = read_batch(&dir.join(TEST_FILE), Split::Test)?;
    Ok(CifarSplits { train, val, test })
}
