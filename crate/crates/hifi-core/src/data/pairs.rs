//! Paired-dataset loading: degraded and ground-truth directories matched by
//! filename stem.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{image_io, ImagePair};
use crate::error::{Error, Result};

/// Result of a directory-pair load: matched pairs (sorted by stem) plus
/// warnings for unmatched files and errors for undecodable ones.
#[derive(Debug, Default)]
pub struct LoadedPairs {
    pub pairs: Vec<ImagePair>,
    pub warnings: Vec<String>,
    pub errors: Vec<(String, String)>,
}

/// Image files (png/ppm) of a directory, sorted by file name.
pub fn list_image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if matches!(ext.as_str(), "png" | "ppm") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem_map(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for path in list_image_files(dir)? {
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            map.insert(stem.to_string(), path);
        }
    }
    Ok(map)
}

/// Pairs same-stem files from the two directories. Unmatched files produce
/// warnings, undecodable or mismatched pairs produce recorded errors, zero
/// stem matches is a usage error.
pub fn load_pairs(dir_degraded: &Path, dir_gt: &Path) -> Result<LoadedPairs> {
    let degraded = stem_map(dir_degraded)?;
    let gt = stem_map(dir_gt)?;

    let mut out = LoadedPairs::default();
    for (stem, path) in &degraded {
        if !gt.contains_key(stem) {
            out.warnings.push(format!("no ground-truth match for {}", path.display()));
        }
    }
    for (stem, path) in &gt {
        if !degraded.contains_key(stem) {
            out.warnings.push(format!("no degraded match for {}", path.display()));
        }
    }

    let mut matched = 0usize;
    for (stem, deg_path) in &degraded {
        let Some(gt_path) = gt.get(stem) else { continue };
        matched += 1;
        let load = || -> Result<ImagePair> {
            let degraded = image_io::load_image(deg_path)?;
            let ground_truth = image_io::load_image(gt_path)?;
            if degraded.shape() != ground_truth.shape() {
                return Err(Error::Shape(format!(
                    "pair '{stem}' has mismatched shapes: {} vs {}",
                    degraded.shape(),
                    ground_truth.shape()
                )));
            }
            Ok(ImagePair { id: stem.clone(), degraded, ground_truth })
        };
        match load() {
            Ok(pair) => out.pairs.push(pair),
            Err(e) => out.errors.push((stem.clone(), e.to_string())),
        }
    }

    if matched == 0 {
        return Err(Error::Usage(format!(
            "no filename stems match between {} and {}",
            dir_degraded.display(),
            dir_gt.display()
        )));
    }
    Ok(out)
}
