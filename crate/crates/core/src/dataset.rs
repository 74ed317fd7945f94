//! Labeled image manifests, the class registry and class-distribution
//! statistics.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_at, Error, Result};

pub const NUM_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: usize,
    pub code: String,
    pub long_name: String,
}

/// The five leaf classes, ordered by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassEntry>", into = "Vec<ClassEntry>")]
pub struct ClassRegistry {
    entries: Vec<ClassEntry>,
}

const CASSAVA_CODES: [(&str, &str); NUM_CLASSES] = [
    ("CBB", "Cassava Bacterial Blight"),
    ("CBSD", "Cassava Brown Streak Disease"),
    ("CGM", "Cassava Green Mottle"),
    ("CMD", "Cassava Mosaic Disease"),
    ("HEALTHY", "Healthy"),
];

impl ClassRegistry {
    pub fn new(mut entries: Vec<ClassEntry>) -> Result<Self> {
        if entries.len() != NUM_CLASSES {
            return Err(Error::InvalidRegistry(format!(
                "expected {NUM_CLASSES} classes, got {}",
                entries.len()
            )));
        }
        entries.sort_by_key(|e| e.id);
        let mut codes = HashSet::new();
        for (expected, e) in entries.iter().enumerate() {
            if e.id != expected {
                return Err(Error::InvalidRegistry(format!(
                    "class ids must be 0..{NUM_CLASSES} without gaps or repeats"
                )));
            }
            if !codes.insert(e.code.as_str()) {
                return Err(Error::InvalidRegistry(format!("duplicate code {}", e.code)));
            }
        }
        let known: HashSet<&str> = CASSAVA_CODES.iter().map(|(c, _)| *c).collect();
        if codes != known {
            return Err(Error::InvalidRegistry(
                "codes must be exactly CBB, CBSD, CGM, CMD, HEALTHY".into(),
            ));
        }
        Ok(ClassRegistry { entries })
    }

    /// The competition convention: CBB=0, CBSD=1, CGM=2, CMD=3, HEALTHY=4.
    pub fn cassava() -> Self {
        let entries = CASSAVA_CODES
            .iter()
            .enumerate()
            .map(|(id, (code, name))| ClassEntry {
                id,
                code: code.to_string(),
                long_name: name.to_string(),
            })
            .collect();
        ClassRegistry { entries }
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn code(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(|e| e.code.as_str())
    }

    pub fn id_of(&self, code: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.code == code).map(|e| e.id)
    }

    pub fn contains(&self, id: usize) -> bool {
        id < self.entries.len()
    }
}

impl Default for ClassRegistry {
    fn default() -> Self {
        Self::cassava()
    }
}

impl TryFrom<Vec<ClassEntry>> for ClassRegistry {
    type Error = Error;

    fn try_from(entries: Vec<ClassEntry>) -> Result<Self> {
        ClassRegistry::new(entries)
    }
}

impl From<ClassRegistry> for Vec<ClassEntry> {
    fn from(r: ClassRegistry) -> Self {
        r.entries
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub image_id: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<Record>,
    root: PathBuf,
}

impl DatasetManifest {
    /// Validates records in memory: non-empty, unique ids, labels in range.
    pub fn new(records: Vec<Record>, root: impl Into<PathBuf>, registry: &ClassRegistry) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !registry.contains(r.label) {
                return Err(Error::BadLabel {
                    line: i + 2,
                    label: r.label.to_string(),
                });
            }
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateId(r.image_id.clone()));
            }
        }
        Ok(DatasetManifest {
            records,
            root: root.into(),
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn image_path(&self, idx: usize) -> PathBuf {
        self.root.join(&self.records[idx].image_id)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Writes `image_id,label` rows with the mandatory header.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(16 * (self.records.len() + 1));
        out.push_str("image_id,label\n");
        for r in &self.records {
            out.push_str(&r.image_id);
            out.push(',');
            out.push_str(&r.label.to_string());
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| io_at(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| io_at(path, e))?;
        Ok(())
    }
}

/// Reads a comma-delimited manifest with header `image_id,label`. Images are
/// resolved relative to the manifest's directory unless a root is set later
/// with [`DatasetManifest::with_root`].
pub fn load_manifest(path: &Path, registry: &ClassRegistry) -> Result<DatasetManifest> {
    let bytes = fs::read(path).map_err(|e| io_at(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&bytes, root, registry)
}

pub fn parse_manifest(bytes: &[u8], root: PathBuf, registry: &ClassRegistry) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedManifest(e.to_string()))?
        .clone();
    let header: Vec<&str> = headers.iter().collect();
    if header.len() < 2 || header[0].trim_start_matches('\u{feff}') != "image_id" || header[1] != "label" {
        return Err(Error::MalformedManifest(format!(
            "header must be `image_id,label`, found `{}`",
            header.join(",")
        )));
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::MalformedManifest(format!("line {line}: {e}")))?;
        let (Some(id), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(Error::MalformedManifest(format!("line {line}: expected two fields")));
        };
        if id.is_empty() {
            return Err(Error::MalformedManifest(format!("line {line}: empty image_id")));
        }
        let label = match label.parse::<usize>() {
            Ok(l) if registry.contains(l) => l,
            _ => {
                return Err(Error::BadLabel {
                    line,
                    label: label.to_string(),
                })
            }
        };
        records.push(Record {
            image_id: id.to_string(),
            label,
        });
    }
    DatasetManifest::new(records, root, registry)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
}

impl ClassDistribution {
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let total: usize = counts.iter().sum();
        let fractions = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        ClassDistribution { counts, fractions }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn class_distribution(manifest: &DatasetManifest) -> ClassDistribution {
    let mut counts = vec![0usize; NUM_CLASSES];
    for r in manifest.records() {
        counts[r.label] += 1;
    }
    ClassDistribution::from_counts(counts)
}

/// Returns the ids, sorted, whose image file is absent or fails to decode.
pub fn verify_images(manifest: &DatasetManifest) -> Result<Vec<String>> {
    let root = manifest.root();
    if !root.is_dir() || fs::read_dir(root).is_err() {
        return Err(Error::RootUnavailable(root.to_path_buf()));
    }
    let mut bad: Vec<String> = manifest
        .records()
        .iter()
        .filter(|r| !image_decodes(&root.join(&r.image_id)))
        .map(|r| r.image_id.clone())
        .collect();
    bad.sort();
    Ok(bad)
}

fn image_decodes(path: &Path) -> bool {
    image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|_| ())
        .and_then(|r| r.decode().map_err(|_| ()))
        .is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> ClassRegistry {
        ClassRegistry::cassava()
    }

    #[test]
    fn header_only_is_empty() {
        let err = parse_manifest(b"image_id,label\n", PathBuf::new(), &reg()).unwrap_err();
        assert!(matches!(err, Error::EmptyManifest));
    }

    #[test]
    fn three_row_fixture() {
        let m = parse_manifest(b"image_id,label\na,3\nb,0\nc,4\n", PathBuf::new(), &reg()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.labels(), vec![3, 0, 4]);
        assert_eq!(m.records()[1].image_id, "b");
    }

    #[test]
    fn label_out_of_range_is_error() {
        let err = parse_manifest(b"image_id,label\na,3\nb,5\n", PathBuf::new(), &reg()).unwrap_err();
        assert!(matches!(err, Error::BadLabel { line: 3, .. }));
        let err = parse_manifest(b"image_id,label\na,x\n", PathBuf::new(), &reg()).unwrap_err();
        assert!(matches!(err, Error::BadLabel { .. }));
        let err = parse_manifest(b"image_id,label\na,-1\n", PathBuf::new(), &reg()).unwrap_err();
        assert!(matches!(err, Error::BadLabel { .. }));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse_manifest(b"image_id,label\na,1\na,2\n", PathBuf::new(), &reg()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn header_is_mandatory() {
        let err = parse_manifest(b"a,1\nb,2\n", PathBuf::new(), &reg()).unwrap_err();
        assert!(matches!(err, Error::MalformedManifest(_)));
    }

    #[test]
    fn missing_file() {
        let err = load_manifest(Path::new("/definitely/not/here.csv"), &reg()).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn single_class_distribution() {
        let recs = (0..7)
            .map(|i| Record {
                image_id: format!("{i}.png"),
                label: 2,
            })
            .collect();
        let m = DatasetManifest::new(recs, "", &reg()).unwrap();
        let d = class_distribution(&m);
        assert_eq!(d.counts, vec![0, 0, 7, 0, 0]);
        assert_eq!(d.fractions, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn fixture_fractions() {
        let counts = [1usize, 2, 3, 4, 10];
        let mut recs = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                recs.push(Record {
                    image_id: format!("{c}_{i}"),
                    label: c,
                });
            }
        }
        let d = class_distribution(&DatasetManifest::new(recs, "", &reg()).unwrap());
        let expected = [0.05, 0.10, 0.15, 0.20, 0.50];
        for (f, e) in d.fractions.iter().zip(expected) {
            assert!((f - e).abs() < 1e-12);
        }
    }

    #[test]
    fn registry_validation() {
        let mut entries: Vec<ClassEntry> = reg().into();
        entries[4].code = "CBB".into();
        assert!(ClassRegistry::new(entries).is_err());
        let mut entries: Vec<ClassEntry> = reg().into();
        entries.pop();
        assert!(ClassRegistry::new(entries).is_err());
        let mut entries: Vec<ClassEntry> = reg().into();
        entries[0].code = "RUST".into();
        assert!(ClassRegistry::new(entries).is_err());
        assert_eq!(reg().id_of("CMD"), Some(3));
        assert_eq!(reg().code(0), Some("CBB"));
    }

    #[test]
    fn verify_reports_missing_and_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([10, 200, 30]));
        for id in ["a.png", "b.png", "c.png"] {
            img.save(dir.path().join(id)).unwrap();
        }
        fs::write(dir.path().join("d.png"), b"not a png").unwrap();
        let recs = ["c.png", "a.png", "b.png", "d.png"]
            .iter()
            .map(|id| Record {
                image_id: id.to_string(),
                label: 0,
            })
            .collect();
        let m = DatasetManifest::new(recs, dir.path(), &reg()).unwrap();
        assert_eq!(verify_images(&m).unwrap(), vec!["d.png".to_string()]);
        fs::remove_file(dir.path().join("b.png")).unwrap();
        assert_eq!(verify_images(&m).unwrap(), vec!["b.png".to_string(), "d.png".to_string()]);

        let gone = m.clone().with_root(dir.path().join("nope"));
        assert!(matches!(verify_images(&gone), Err(Error::RootUnavailable(_))));
    }
}
