use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use super::{ClassLabel, Manifest, ManifestEntry, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitEntry {
    pub path: String,
    pub label: ClassLabel,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub seed: u64,
    /// In manifest order.
    pub entries: Vec<SplitEntry>,
}

impl SplitAssignment {
    pub fn entries_in(&self, split: Split) -> Vec<SplitEntry> {
        self.entries.iter().filter(|e| e.split == split).cloned().collect()
    }

    /// `counts[class][split]` with splits ordered train, val, test.
    pub fn counts(&self) -> [[usize; 3]; NUM_CLASSES] {
        let mut counts = [[0; 3]; NUM_CLASSES];
        for e in &self.entries {
            counts[e.label.index()][e.split as usize] += 1;
        }
        counts
    }

    pub fn totals(&self) -> [usize; 3] {
        let mut t = [0; 3];
        for row in self.counts() {
            for (a, b) in t.iter_mut().zip(row) {
                *a += b;
            }
        }
        t
    }

    /// Per-class table: class, train, val, test, total.
    pub fn summary_table(&self) -> String {
        let mut out = format!("{:<12}{:>8}{:>8}{:>8}{:>8}\n", "class", "train", "val", "test", "total");
        for (label, row) in ClassLabel::ALL.iter().zip(self.counts()) {
            out += &format!(
                "{:<12}{:>8}{:>8}{:>8}{:>8}\n",
                label.name(),
                row[0],
                row[1],
                row[2],
                row.iter().sum::<usize>()
            );
        }
        let t = self.totals();
        out += &format!("{:<12}{:>8}{:>8}{:>8}{:>8}\n", "total", t[0], t[1], t[2], t.iter().sum::<usize>());
        out
    }
}

/// `round(ratio * n)` with halves rounded up; the tiny offset absorbs
/// binary representation error in products such as `0.1 * 1645`.
fn split_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 0.5 + 1e-9).floor() as usize
}

/// Per-class stratified partition.
///
/// Each class's entries (in manifest order) are shuffled with the stream
/// `(seed, "split", class_index)`; the first `round_half_up(test * n)` go to
/// test, the next `round_half_up(val * n)` to val and the rest to train.
pub fn stratified_split(manifest: &Manifest, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let parts = [ratios.train, ratios.val, ratios.test];
    if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "ratios ({}, {}, {}) must be in [0, 1] and sum to 1",
            ratios.train, ratios.val, ratios.test
        )));
    }
    let mut assigned: Vec<Option<Split>> = vec![None; manifest.len()];
    for label in ClassLabel::ALL {
        let mut members: Vec<usize> = manifest
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect();
        let n = members.len();
        let n_test = split_count(ratios.test, n);
        let n_val = split_count(ratios.val, n);
        let too_small = n < 3
            || n_test + n_val >= n
            || (ratios.test > 0.0 && n_test == 0)
            || (ratios.val > 0.0 && n_val == 0);
        if too_small {
            return Err(Error::Split(format!(
                "class {label} has {n} images, too few to populate train/val/test"
            )));
        }
        rng::shuffle(&mut members, &mut rng::stream(seed, "split", label.index() as u64));
        for (pos, &i) in members.iter().enumerate() {
            assigned[i] = Some(if pos < n_test {
                Split::Test
            } else if pos < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            });
        }
    }
    let entries = manifest
        .entries()
        .iter()
        .zip(assigned)
        .map(|(e, s)| SplitEntry {
            path: e.path.clone(),
            label: e.label,
            split: s.expect("every class was assigned"),
        })
        .collect();
    Ok(SplitAssignment { seed, entries })
}

/// CSV with header `relative_path,label,split`.
pub fn write_split_csv<W: Write>(split: &SplitAssignment, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: std::result::Result<(), csv::Error> = (|| {
        w.write_record(["relative_path", "label", "split"])?;
        for e in &split.entries {
            w.write_record([e.path.as_str(), e.label.name(), e.split.name()])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::Manifest(e.to_string()))
}

/// Reads a split CSV. The seed is not stored in the file and is set to 0.
pub fn read_split_csv<R: Read>(input: R) -> Result<SplitAssignment> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| Error::Manifest(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["relative_path", "label", "split"] {
        return Err(Error::Manifest(format!(
            "expected header relative_path,label,split, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Manifest(e.to_string()))?;
        if rec.len() != 3 {
            return Err(Error::Manifest(format!("row {} has {} fields", line + 2, rec.len())));
        }
        entries.push(SplitEntry {
            path: rec[0].to_string(),
            label: rec[1].parse()?,
            split: rec[2].parse()?,
        });
    }
    // reuse the manifest uniqueness check
    Manifest::new(
        entries
            .iter()
            .map(|e| ManifestEntry {
                path: e.path.clone(),
                label: e.label,
            })
            .collect(),
    )?;
    Ok(SplitAssignment { seed: 0, entries })
}
