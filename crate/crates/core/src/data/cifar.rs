//! CIFAR-10 binary batches: 10000 records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes, each plane row-major.

use std::path::{Path, PathBuf};

use super::{stratified_split, Dataset, SplitSpec};
use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_BATCH_RECORDS: usize = 10_000;

const CLASS_NAMES: [&str; CIFAR_CLASSES] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone)]
pub struct CifarData {
    pub train: Dataset,
    pub test: Dataset,
}

fn class_names() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

fn decode_records(
    bytes: &[u8],
    path: &Path,
    labels: &mut Vec<usize>,
    pixels: &mut Vec<f32>,
) -> Result<()> {
    let expected = CIFAR_BATCH_RECORDS * CIFAR_RECORD_BYTES;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes ({CIFAR_BATCH_RECORDS} records of {CIFAR_RECORD_BYTES}), found {}",
                bytes.len()
            ),
        ));
    }
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::format(
                path,
                format!("record {i} has label byte {label}, expected 0-9"),
            ));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(())
}

fn read_into(path: &Path, labels: &mut Vec<usize>, pixels: &mut Vec<f32>) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes, path, labels, pixels)
}

fn assemble(labels: Vec<usize>, pixels: Vec<f32>) -> Dataset {
    Dataset::new(3, CIFAR_SIDE, CIFAR_SIDE, class_names(), labels, pixels)
        .expect("decoded records are consistent")
}

/// Reads one batch file of exactly 10000 records.
pub fn load_cifar_batch(path: impl AsRef<Path>) -> Result<Dataset> {
    let (mut labels, mut pixels) = (Vec::new(), Vec::new());
    read_into(path.as_ref(), &mut labels, &mut pixels)?;
    Ok(assemble(labels, pixels))
}

/// Loads the five training batches and the test batch from `dir` (or from
/// its `cifar-10-batches-bin` subdirectory, as unpacked from the archive).
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<CifarData> {
    let mut dir: PathBuf = dir.as_ref().to_path_buf();
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(TEST_FILE).exists() && nested.is_dir() {
        dir = nested;
    }
    let (mut labels, mut pixels) = (Vec::new(), Vec::new());
    for f in TRAIN_FILES {
        read_into(&dir.join(f), &mut labels, &mut pixels)?;
    }
    let train = assemble(labels, pixels);
    let test = load_cifar_batch(dir.join(TEST_FILE))?;
    Ok(CifarData { train, test })
}

/// Encodes a 3×32×32 dataset in the batch record layout, rounding each value
/// to the nearest of the 256 byte levels.
pub fn encode_cifar_batch(data: &Dataset) -> Result<Vec<u8>> {
    if (data.channels, data.height, data.width) != (3, CIFAR_SIDE, CIFAR_SIDE) {
        return Err(Error::Shape(format!(
            "CIFAR records hold 3×32×32 images, dataset has {}×{}×{}",
            data.channels, data.height, data.width
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD_BYTES);
    for i in 0..data.len() {
        out.push(data.labels[i] as u8);
        out.extend(
            data.image(i)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

pub fn write_cifar_batch(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_cifar_batch(data)?).map_err(|e| Error::io(path, e))
}

/// Training/validation split of the 50000 training images: 1000 random
/// images per class for validation, the remaining 40000 for training.
pub fn split_cifar10(train_set: &Dataset, seed: u64) -> Result<SplitSpec> {
    let counts = train_set.class_counts(&(0..train_set.len()).collect::<Vec<_>>());
    if train_set.num_classes != CIFAR_CLASSES || counts.iter().any(|&c| c != 5000) {
        return Err(Error::Validation(format!(
            "CIFAR-10 training set must have 5000 images per class, found {counts:?}"
        )));
    }
    let all: Vec<usize> = (0..train_set.len()).collect();
    stratified_split(train_set, &all, 1000, 0, seed)
}
