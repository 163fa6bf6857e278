//! Labeled file inventories, stratified splits, the CLAHE cache and
//! batch assembly.

mod batch;
mod cache;
mod split;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use batch::{epoch_order, image_to_chw, load_split, make_batches, one_hot, Batch, LabeledImage};
pub use cache::{cache_clahe, cached_relative_path, CacheReport};
pub use split::{read_split_csv, stratified_split, write_split_csv, Split, SplitAssignment, SplitEntry, SplitRatios};

pub const NUM_CLASSES: usize = 4;

/// Tumor classes in their fixed (alphabetical) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Glioma = 0,
    Healthy = 1,
    Meningioma = 2,
    Pituitary = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Glioma,
        ClassLabel::Healthy,
        ClassLabel::Meningioma,
        ClassLabel::Pituitary,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::LabelRange {
            label: i,
            classes: NUM_CLASSES,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Glioma => "glioma",
            ClassLabel::Healthy => "healthy",
            ClassLabel::Meningioma => "meningioma",
            ClassLabel::Pituitary => "pituitary",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown class label {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Forward-slash path relative to the data root.
    pub path: String,
    pub label: ClassLabel,
}

/// Labeled inventory, sorted by relative path.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        if let Some(w) = entries.windows(2).find(|w| w[0].path == w[1].path) {
            return Err(Error::Manifest(format!("duplicate path {}", w[0].path)));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for e in &self.entries {
            counts[e.label.index()] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug)]
pub struct ScanOutcome {
    pub manifest: Manifest,
    /// Files that were skipped, with the reason.
    pub warnings: Vec<String>,
}

fn is_image_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".png") || lower.ends_with(".jpg") || lower.ends_with(".jpeg")
}

/// Builds the manifest for a `root/<class>/<file>` tree.
///
/// Every class directory must exist and contain at least one image; any
/// other directory directly under `root` is an error. Non-image or
/// unreadable files are skipped and reported in `warnings`.
pub fn scan_directory(root: impl AsRef<Path>) -> Result<ScanOutcome> {
    let root = root.as_ref();
    let listing = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut warnings = Vec::new();
    for item in listing {
        let item = item.map_err(|e| Error::io(root, e))?;
        let name = item.file_name().to_string_lossy().into_owned();
        if item.path().is_dir() {
            if name.parse::<ClassLabel>().is_err() {
                return Err(Error::Layout(format!(
                    "unexpected directory {name:?} under {}; expected only {}",
                    root.display(),
                    ClassLabel::ALL.map(ClassLabel::name).join(", ")
                )));
            }
        } else {
            warnings.push(format!("{name}: not inside a class directory, skipped"));
        }
    }

    let mut entries = Vec::new();
    for label in ClassLabel::ALL {
        let dir = root.join(label.name());
        if !dir.is_dir() {
            return Err(Error::Layout(format!(
                "missing class directory {:?} under {}",
                label.name(),
                root.display()
            )));
        }
        let before = entries.len();
        for item in walkdir::WalkDir::new(&dir).sort_by_file_name() {
            let item = match item {
                Ok(item) => item,
                Err(e) => {
                    warnings.push(format!("{}: {e}", dir.display()));
                    continue;
                }
            };
            if !item.file_type().is_file() {
                continue;
            }
            let rel = item
                .path()
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            if !is_image_name(&rel) {
                warnings.push(format!("{rel}: not a PNG/JPEG file, skipped"));
                continue;
            }
            if let Err(e) = std::fs::File::open(item.path()) {
                warnings.push(format!("{rel}: unreadable ({e}), skipped"));
                continue;
            }
            entries.push(ManifestEntry { path: rel, label });
        }
        if entries.len() == before {
            return Err(Error::Layout(format!("class directory {:?} has no images", label.name())));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ScanOutcome {
        manifest: Manifest::new(entries)?,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(root: &Path, rel: &str) {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, b"x").unwrap();
    }

    #[test]
    fn label_order_and_names() {
        assert_eq!(ClassLabel::ALL.map(ClassLabel::index), [0, 1, 2, 3]);
        assert_eq!("meningioma".parse::<ClassLabel>().unwrap(), ClassLabel::Meningioma);
        assert!("tumor".parse::<ClassLabel>().is_err());
        assert!(ClassLabel::from_index(4).is_err());
    }

    #[test]
    fn one_file_per_class() {
        let dir = tempfile::tempdir().unwrap();
        for c in ["pituitary", "glioma", "meningioma", "healthy"] {
            touch(dir.path(), &format!("{c}/a.png"));
        }
        let out = scan_directory(dir.path()).unwrap();
        let paths: Vec<_> = out.manifest.entries().iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["glioma/a.png", "healthy/a.png", "meningioma/a.png", "pituitary/a.png"]);
    }

    #[test]
    fn extra_directory_is_named() {
        let dir = tempfile::tempdir().unwrap();
        for c in ClassLabel::ALL {
            touch(dir.path(), &format!("{c}/a.png"));
        }
        touch(dir.path(), "notes/readme.png");
        let err = scan_directory(dir.path()).unwrap_err().to_string();
        assert!(err.contains("notes"), "{err}");
    }

    #[test]
    fn missing_and_empty_classes() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "glioma/a.png");
        let err = scan_directory(dir.path()).unwrap_err().to_string();
        assert!(err.contains("healthy"), "{err}");
        for c in ["healthy", "meningioma"] {
            touch(dir.path(), &format!("{c}/a.png"));
        }
        std::fs::create_dir_all(dir.path().join("pituitary")).unwrap();
        let err = scan_directory(dir.path()).unwrap_err().to_string();
        assert!(err.contains("pituitary") && err.contains("no images"), "{err}");
    }

    #[test]
    fn ten_file_fixture_matches_hand_listing() {
        let dir = tempfile::tempdir().unwrap();
        let files = [
            "glioma/g2.png",
            "glioma/g1.jpg",
            "glioma/G0.JPEG",
            "healthy/h1.png",
            "healthy/h0.png",
            "meningioma/sub/m1.png",
            "meningioma/m0.png",
            "pituitary/p0.png",
            "pituitary/p2.png",
            "pituitary/p1.png",
        ];
        for f in files {
            touch(dir.path(), f);
        }
        touch(dir.path(), "glioma/notes.txt");
        let out = scan_directory(dir.path()).unwrap();
        let got: Vec<(String, ClassLabel)> = out
            .manifest
            .entries()
            .iter()
            .map(|e| (e.path.clone(), e.label))
            .collect();
        use ClassLabel::*;
        let want = vec![
            ("glioma/G0.JPEG".to_string(), Glioma),
            ("glioma/g1.jpg".to_string(), Glioma),
            ("glioma/g2.png".to_string(), Glioma),
            ("healthy/h0.png".to_string(), Healthy),
            ("healthy/h1.png".to_string(), Healthy),
            ("meningioma/m0.png".to_string(), Meningioma),
            ("meningioma/sub/m1.png".to_string(), Meningioma),
            ("pituitary/p0.png".to_string(), Pituitary),
            ("pituitary/p1.png".to_string(), Pituitary),
            ("pituitary/p2.png".to_string(), Pituitary),
        ];
        assert_eq!(got, want);
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("notes.txt"));
    }

    #[test]
    fn duplicate_paths_rejected() {
        let e = ManifestEntry {
            path: "glioma/a.png".into(),
            label: ClassLabel::Glioma,
        };
        assert!(Manifest::new(vec![e.clone(), e]).is_err());
    }
}
