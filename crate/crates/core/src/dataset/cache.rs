use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::ManifestEntry;
use crate::error::{Error, Result};
use crate::imaging::{clahe, load_image, save_png, ClaheConfig};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CacheReport {
    pub written: usize,
    pub skipped: usize,
    /// `(relative_path, message)` for every file that failed.
    pub failed: Vec<(String, String)>,
}

/// Relative path of the cached PNG for a source entry (extension -> `.png`).
pub fn cached_relative_path(rel: &str) -> String {
    match rel.rfind('.') {
        Some(dot) if !rel[dot..].contains('/') => format!("{}.png", &rel[..dot]),
        _ => format!("{rel}.png"),
    }
}

fn is_fresh(src: &Path, dst: &Path) -> bool {
    let modified = |p: &Path| std::fs::metadata(p).and_then(|m| m.modified()).ok();
    match (modified(src), modified(dst)) {
        (Some(s), Some(d)) => d >= s,
        _ => false,
    }
}

enum Outcome {
    Written,
    Skipped,
}

fn cache_one(entry: &ManifestEntry, src_root: &Path, cache_root: &Path, cfg: &ClaheConfig) -> Result<Outcome> {
    let src = src_root.join(&entry.path);
    let dst: PathBuf = cache_root.join(cached_relative_path(&entry.path));
    if is_fresh(&src, &dst) {
        return Ok(Outcome::Skipped);
    }
    let img = load_image(&src)?;
    save_png(&clahe(&img, cfg)?, &dst)?;
    Ok(Outcome::Written)
}

/// Writes CLAHE-processed PNGs mirroring the source tree.
///
/// Outputs that already exist and are at least as new as their source are
/// left alone. Failures are collected per file; other files still run.
pub fn cache_clahe(
    entries: &[ManifestEntry],
    src_root: impl AsRef<Path>,
    cache_root: impl AsRef<Path>,
    cfg: &ClaheConfig,
) -> Result<CacheReport> {
    cfg.validate()?;
    let (src_root, cache_root) = (src_root.as_ref(), cache_root.as_ref());
    std::fs::create_dir_all(cache_root).map_err(|e| Error::io(cache_root, e))?;
    let outcomes: Vec<Result<Outcome>> = entries
        .par_iter()
        .map(|e| cache_one(e, src_root, cache_root, cfg))
        .collect();
    let mut report = CacheReport::default();
    for (entry, outcome) in entries.iter().zip(outcomes) {
        match outcome {
            Ok(Outcome::Written) => report.written += 1,
            Ok(Outcome::Skipped) => report.skipped += 1,
            Err(e) => report.failed.push((entry.path.clone(), e.to_string())),
        }
    }
    Ok(report)
}
