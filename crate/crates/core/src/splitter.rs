//! Seeded, stratified train/validation/test partitions.
//!
//! Each class is allocated by floor plus largest remainder, so every
//! per-class split count is within one sample of its exact proportion.
//! Membership inside a class comes from a shuffle of the lexicographically
//! sorted image ids, keyed by `(seed, class_id)`, which makes the result
//! independent of manifest row order.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassDistribution, DatasetManifest, NUM_CLASSES};
use crate::error::{io_at, Error, Result};
use crate::seeding::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Val, SplitKind::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            SplitKind::Train => "train.txt",
            SplitKind::Val => "val.txt",
            SplitKind::Test => "test.txt",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec { train, val, test, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// 70/10/20.
    pub fn standard(seed: u64) -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed,
        }
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        for (kind, f) in SplitKind::ALL.iter().zip(self.fractions()) {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidSpec(format!("{kind} fraction {f} not in (0, 1)")));
            }
        }
        let sum: f64 = self.fractions().iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::standard(42)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitWarning {
    /// A registry class has no records at all.
    EmptyClass(usize),
    /// A class present in the manifest received no samples in this split.
    EmptyClassSplit { class: usize, split: SplitKind },
}

impl fmt::Display for SplitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitWarning::EmptyClass(c) => write!(f, "class {c} has no records"),
            SplitWarning::EmptyClassSplit { class, split } => {
                write!(f, "class {class} has no samples in the {split} split")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SplitOptions {
    /// Promote [`SplitWarning::EmptyClass`] to [`Error::EmptyClass`].
    pub empty_class_is_error: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub spec: SplitSpec,
    pub warnings: Vec<SplitWarning>,
}

impl SplitAssignment {
    pub fn get(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// Splits `n` seats among `fractions` by floor plus largest remainder.
/// Remainder ties go to the earlier entry.
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor().max(0.0) as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut left = n.saturating_sub(assigned);

    // Remainders are compared after snapping to 1e-9 so that products such
    // as 0.7 * 5 and 0.1 * 5 tie as intended.
    let key = |i: usize| ((quotas[i] - quotas[i].floor()) * 1e9).round() as i64;
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| key(b).cmp(&key(a)).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        seats[i] += 1;
        left -= 1;
    }
    seats
}

pub fn stratified_split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<SplitAssignment> {
    stratified_split_with(manifest, spec, SplitOptions::default())
}

pub fn stratified_split_with(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
    opts: SplitOptions,
) -> Result<SplitAssignment> {
    spec.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, r) in manifest.records().iter().enumerate() {
        by_class[r.label].push(i);
    }

    let mut warnings = Vec::new();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            if opts.empty_class_is_error {
                return Err(Error::EmptyClass(class));
            }
            log::warn!("class {class} has no records");
            warnings.push(SplitWarning::EmptyClass(class));
            continue;
        }
        members.sort_by(|&a, &b| manifest.records()[a].image_id.cmp(&manifest.records()[b].image_id));
        let mut rng = rng_for(spec.seed, "split", &(class as u64).to_le_bytes());
        members.shuffle(&mut rng);

        let sizes = largest_remainder(members.len(), &spec.fractions());
        let (a, rest) = members.split_at(sizes[0]);
        let (b, c) = rest.split_at(sizes[1]);
        for (kind, part, sink) in [
            (SplitKind::Train, a, &mut train),
            (SplitKind::Val, b, &mut val),
            (SplitKind::Test, c, &mut test),
        ] {
            if part.is_empty() {
                log::warn!("class {class} has no samples in the {kind} split");
                warnings.push(SplitWarning::EmptyClassSplit { class, split: kind });
            }
            sink.extend_from_slice(part);
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment {
        train,
        val,
        test,
        spec: *spec,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub train: ClassDistribution,
    pub val: ClassDistribution,
    pub test: ClassDistribution,
    /// `(class, split)` pairs where a class present in the manifest has no samples.
    pub empty: Vec<(usize, SplitKind)>,
}

impl SplitReport {
    pub fn get(&self, kind: SplitKind) -> &ClassDistribution {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    pub fn render(&self, codes: &[&str]) -> String {
        let mut s = format!("{:<8}", "split");
        for c in codes {
            s.push_str(&format!(" {:>14}", c));
        }
        s.push_str(&format!(" {:>8}\n", "total"));
        for kind in SplitKind::ALL {
            let d = self.get(kind);
            s.push_str(&format!("{:<8}", kind.name()));
            for (n, f) in d.counts.iter().zip(&d.fractions) {
                s.push_str(&format!(" {:>6} ({:.3})", n, f));
            }
            s.push_str(&format!(" {:>8}\n", d.total()));
        }
        for (class, kind) in &self.empty {
            s.push_str(&format!("warning: {} has no samples in {kind}\n", codes.get(*class).unwrap_or(&"?")));
        }
        s
    }
}

pub fn split_report(assignment: &SplitAssignment, manifest: &DatasetManifest) -> Result<SplitReport> {
    let mut present = [false; NUM_CLASSES];
    for r in manifest.records() {
        present[r.label] = true;
    }
    let mut dists = Vec::with_capacity(3);
    let mut empty = Vec::new();
    for kind in SplitKind::ALL {
        let mut counts = vec![0usize; NUM_CLASSES];
        for &i in assignment.get(kind) {
            let r = manifest.records().get(i).ok_or(Error::IndexOutOfRange(i))?;
            counts[r.label] += 1;
        }
        for class in 0..NUM_CLASSES {
            if present[class] && counts[class] == 0 {
                empty.push((class, kind));
            }
        }
        dists.push(ClassDistribution::from_counts(counts));
    }
    let test = dists.pop().expect("three splits");
    let val = dists.pop().expect("three splits");
    let train = dists.pop().expect("three splits");
    Ok(SplitReport { train, val, test, empty })
}

#[derive(Debug, Serialize, Deserialize)]
struct Provenance {
    train: f64,
    val: f64,
    test: f64,
    seed: u64,
    sizes: [usize; 3],
}

pub const PROVENANCE_FILE: &str = "split.json";

/// Writes `train.txt`, `val.txt`, `test.txt` (one image id per line, in
/// manifest order) and a provenance file with the fractions and seed.
pub fn write_split_files(dir: &Path, assignment: &SplitAssignment, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    for kind in SplitKind::ALL {
        let mut body = String::new();
        for &i in assignment.get(kind) {
            let r = manifest.records().get(i).ok_or(Error::IndexOutOfRange(i))?;
            body.push_str(&r.image_id);
            body.push('\n');
        }
        let path = dir.join(kind.file_name());
        fs::write(&path, body).map_err(|e| io_at(&path, e))?;
    }
    let spec = assignment.spec;
    let prov = Provenance {
        train: spec.train,
        val: spec.val,
        test: spec.test,
        seed: spec.seed,
        sizes: assignment.sizes(),
    };
    let path = dir.join(PROVENANCE_FILE);
    let json = serde_json::to_string_pretty(&prov).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| io_at(&path, e))?;
    Ok(())
}

/// Reads split files written by [`write_split_files`] back into indices of
/// `manifest`.
pub fn read_split_files(dir: &Path, manifest: &DatasetManifest) -> Result<SplitAssignment> {
    let index: std::collections::HashMap<&str, usize> = manifest
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.image_id.as_str(), i))
        .collect();
    let prov_path = dir.join(PROVENANCE_FILE);
    let prov: Provenance = serde_json::from_slice(&fs::read(&prov_path).map_err(|e| io_at(&prov_path, e))?)
        .map_err(|e| Error::Parse(format!("{}: {e}", prov_path.display())))?;
    let mut parts = Vec::with_capacity(3);
    for kind in SplitKind::ALL {
        let path = dir.join(kind.file_name());
        let text = fs::read_to_string(&path).map_err(|e| io_at(&path, e))?;
        let mut idx = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let i = *index
                .get(line)
                .ok_or_else(|| Error::Parse(format!("{}: unknown image id {line:?}", path.display())))?;
            idx.push(i);
        }
        idx.sort_unstable();
        parts.push(idx);
    }
    let test = parts.pop().expect("three splits");
    let val = parts.pop().expect("three splits");
    let train = parts.pop().expect("three splits");
    Ok(SplitAssignment {
        train,
        val,
        test,
        spec: SplitSpec {
            train: prov.train,
            val: prov.val,
            test: prov.test,
            seed: prov.seed,
        },
        warnings: Vec::new(),
    })
}
