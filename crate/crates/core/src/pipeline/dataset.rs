use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imagecore::{extract_patches, load_image, ImageTensor};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Ordered image listing of one directory plus a train/val split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// File names relative to `root`, lexicographically sorted.
    pub files: Vec<String>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// SHA-256 over every file's name and bytes, hex encoded.
    pub hash: String,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Lists and decodes every image in `root` (not recursive). Every file that
/// fails to decode is reported in a single `DecodeFailure`.
pub fn ingest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut files: Vec<String> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDirectory(root.to_path_buf()));
    }

    let mut hasher = Sha256::new();
    let mut failures = Vec::new();
    for name in &files {
        let path = root.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        if let Err(e) = load_image(&path) {
            failures.push((path, e.to_string()));
        }
    }
    if !failures.is_empty() {
        return Err(Error::DecodeFailure(failures));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        train: (0..files.len()).collect(),
        val: Vec::new(),
        files,
        hash: hex::encode(hasher.finalize()),
    })
}

/// Number of validation images for `n` images: `ceil(n * f)`, capped at `n - 1`.
pub fn val_count(n: usize, val_fraction: f64) -> usize {
    let raw = (n as f64 * val_fraction - 1e-9).ceil().max(0.0) as usize;
    raw.min(n.saturating_sub(1))
}

/// Seeded shuffle, then the first `val_count` indices become validation.
/// Both index lists are returned sorted.
pub fn split(manifest: &DatasetManifest, val_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    let (train, val) = split_indices(manifest.files.len(), val_fraction, seed)?;
    Ok(DatasetManifest { train, val, ..manifest.clone() })
}

pub(crate) fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::ConfigInvalid(format!("val_fraction {val_fraction} must lie in (0,1)")));
    }
    let n_val = val_count(n, val_fraction);
    if n_val == 0 || n_val >= n {
        return Err(Error::TooFewImages(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

impl DatasetManifest {
    pub fn path(&self, index: usize) -> PathBuf {
        self.root.join(&self.files[index])
    }

    /// Loads the images at `indices` as `(stem, image)`, converted to `channels`.
    pub fn load(&self, indices: &[usize], channels: usize) -> Result<Vec<(String, ImageTensor)>> {
        indices
            .iter()
            .map(|&i| Ok((image_stem(&self.files[i]), load_image(self.path(i))?.to_channels(channels)?)))
            .collect()
    }
}

pub(crate) fn image_stem(name: &str) -> String {
    Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name).to_string()
}

/// All `size`-square patches on a `stride` grid from every image, shuffled
/// together by `seed`, optionally truncated to `max`.
pub fn training_patches(
    images: &[ImageTensor],
    size: usize,
    stride: usize,
    max: Option<usize>,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    let mut patches = Vec::new();
    for (i, img) in images.iter().enumerate() {
        patches.extend(extract_patches(img, size, stride, seed.wrapping_add(i as u64))?);
    }
    patches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if let Some(m) = max {
        patches.truncate(m);
    }
    if patches.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(patches)
}

/// SHA-256 over names, shapes and pixel values of in-memory images.
pub fn hash_images(images: &[(String, ImageTensor)]) -> String {
    let mut hasher = Sha256::new();
    for (name, img) in images {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        let (c, h, w) = img.shape();
        for d in [c, h, w] {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in img.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}
