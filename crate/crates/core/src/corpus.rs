//! Corpus data model: cloud taxonomy, records, and manifest I/O.
//!
//! A manifest is a UTF-8 line-oriented file: the first line is a header
//! object `{"schema_version": 1}` and every following non-empty line is one
//! record object with keys drawn from `{"id", "image_path", "source",
//! "artist", "year", "label10", "label5", "split", "annotator"}`. Absent
//! optional fields are omitted entirely. Relative `image_path` values are
//! resolved against the manifest's directory.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error on record '{record_id}' (field {field}): {msg}")]
    Validation {
        record_id: String,
        field: String,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The ten cloud genera, in the canonical order used for class indices and
/// posterior columns everywhere in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudLabel {
    Cirrus,
    Cirrostratus,
    Cirrocumulus,
    Altocumulus,
    Altostratus,
    Cumulus,
    Cumulonimbus,
    Nimbostratus,
    Stratocumulus,
    Stratus,
}

impl CloudLabel {
    pub const ALL: [CloudLabel; 10] = [
        CloudLabel::Cirrus,
        CloudLabel::Cirrostratus,
        CloudLabel::Cirrocumulus,
        CloudLabel::Altocumulus,
        CloudLabel::Altostratus,
        CloudLabel::Cumulus,
        CloudLabel::Cumulonimbus,
        CloudLabel::Nimbostratus,
        CloudLabel::Stratocumulus,
        CloudLabel::Stratus,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<CloudLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CloudLabel::Cirrus => "cirrus",
            CloudLabel::Cirrostratus => "cirrostratus",
            CloudLabel::Cirrocumulus => "cirrocumulus",
            CloudLabel::Altocumulus => "altocumulus",
            CloudLabel::Altostratus => "altostratus",
            CloudLabel::Cumulus => "cumulus",
            CloudLabel::Cumulonimbus => "cumulonimbus",
            CloudLabel::Nimbostratus => "nimbostratus",
            CloudLabel::Stratocumulus => "stratocumulus",
            CloudLabel::Stratus => "stratus",
        }
    }
}

impl fmt::Display for CloudLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CloudLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .find(|l| l.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown cloud genus '{s}'"))
    }
}

/// The five coarse cloud forms used when evaluating small, unbalanced
/// painting sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudForm {
    Cumuliform,
    Cumulonimbiform,
    Cirriform,
    Stratiform,
    Stratocumuliform,
}

impl CloudForm {
    pub const ALL: [CloudForm; 5] = [
        CloudForm::Cumuliform,
        CloudForm::Cumulonimbiform,
        CloudForm::Cirriform,
        CloudForm::Stratiform,
        CloudForm::Stratocumuliform,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            CloudForm::Cumuliform => "cumuliform",
            CloudForm::Cumulonimbiform => "cumulonimbiform",
            CloudForm::Cirriform => "cirriform",
            CloudForm::Stratiform => "stratiform",
            CloudForm::Stratocumuliform => "stratocumuliform",
        }
    }
}

impl fmt::Display for CloudForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CloudForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .find(|f| f.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown cloud form '{s}'"))
    }
}

/// Canonical 10-genus to 5-form grouping. Total on the enumeration.
pub fn map_to_form(label: CloudLabel) -> CloudForm {
    match label {
        CloudLabel::Cumulus => CloudForm::Cumuliform,
        CloudLabel::Cumulonimbus => CloudForm::Cumulonimbiform,
        CloudLabel::Cirrus => CloudForm::Cirriform,
        CloudLabel::Stratus
        | CloudLabel::Cirrostratus
        | CloudLabel::Altostratus
        | CloudLabel::Nimbostratus => CloudForm::Stratiform,
        CloudLabel::Cirrocumulus | CloudLabel::Altocumulus | CloudLabel::Stratocumulus => {
            CloudForm::Stratocumuliform
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageSource {
    Painting,
    Photo,
}

impl fmt::Display for ImageSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageSource::Painting => "painting",
            ImageSource::Photo => "photo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unlabeled,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        })
    }
}

/// One image with provenance, annotations, split, and artist identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub source: ImageSource,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub artist: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label10: Option<CloudLabel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label5: Option<CloudForm>,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub annotator: Option<String>,
}

impl CorpusRecord {
    /// The 5-form label, taken from `label5` or derived from `label10`.
    pub fn form(&self) -> Option<CloudForm> {
        self.label5.or(self.label10.map(map_to_form))
    }

    /// `image_path` resolved against the manifest directory when relative.
    pub fn resolved_image_path(&self, base_dir: &Path) -> PathBuf {
        if self.image_path.is_absolute() {
            self.image_path.clone()
        } else {
            base_dir.join(&self.image_path)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestHeader {
    schema_version: u32,
}

/// An ordered, validated collection of corpus records.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub schema_version: u32,
    pub records: Vec<CorpusRecord>,
    /// Directory image paths resolve against (the manifest's directory).
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, id: &str) -> Option<&CorpusRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn image_path(&self, record: &CorpusRecord) -> PathBuf {
        record.resolved_image_path(&self.base_dir)
    }

    /// Distinct artist names among painting records, in first-seen order.
    pub fn artists(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if let Some(a) = &r.artist {
                if r.source == ImageSource::Painting && seen.insert(a.clone()) {
                    out.push(a.clone());
                }
            }
        }
        out
    }
}

/// Loads and fully validates a manifest, including that every referenced
/// image decodes as an 8-bit 3-channel raster.
pub fn load_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let manifest = parse_manifest(path)?;
    validate_manifest(&manifest, true)?;
    Ok(manifest)
}

/// Parses a manifest without validation. Used internally and by tooling that
/// needs to inspect malformed inputs.
pub fn parse_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header: ManifestHeader = loop {
        match lines.next() {
            Some((n, line)) => {
                let line = line.map_err(|e| io_err(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                    line: n + 1,
                    msg: format!("bad header: {e}"),
                })?;
            }
            None => {
                return Err(CorpusError::Parse {
                    line: 1,
                    msg: "empty manifest (missing header line)".into(),
                })
            }
        }
    };
    if header.schema_version != SCHEMA_VERSION {
        return Err(CorpusError::Parse {
            line: 1,
            msg: format!(
                "unsupported schema_version {} (expected {})",
                header.schema_version, SCHEMA_VERSION
            ),
        });
    }

    let mut records = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: n + 1,
                msg: e.to_string(),
            })?;
        records.push(record);
    }

    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Manifest {
        schema_version: header.schema_version,
        records,
        base_dir,
    })
}

/// Checks every record invariant. With `check_images` set, also opens each
/// image and requires an 8-bit 3-channel raster.
pub fn validate_manifest(manifest: &Manifest, check_images: bool) -> Result<(), CorpusError> {
    let mut seen_ids = HashSet::new();
    for r in &manifest.records {
        let fail = |field: &str, msg: String| CorpusError::Validation {
            record_id: r.id.clone(),
            field: field.into(),
            msg,
        };
        if r.id.is_empty() {
            return Err(fail("id", "empty id".into()));
        }
        if !seen_ids.insert(r.id.clone()) {
            return Err(fail("id", "duplicate id".into()));
        }
        if r.source == ImageSource::Painting && r.artist.is_none() {
            return Err(fail("artist", "artist required for paintings".into()));
        }
        let labeled = r.label10.is_some() || r.label5.is_some();
        match r.split {
            Split::Unlabeled if labeled => {
                return Err(fail(
                    "split",
                    "split=unlabeled requires label10 and label5 to be absent".into(),
                ));
            }
            Split::Train | Split::Test if !labeled => {
                return Err(fail(
                    "split",
                    format!("split={} requires a label", r.split),
                ));
            }
            _ => {}
        }
        if let (Some(l10), Some(l5)) = (r.label10, r.label5) {
            let canonical = map_to_form(l10);
            if l5 != canonical {
                return Err(fail(
                    "label5",
                    format!("label5={l5} does not match canonical mapping {canonical} of label10={l10}"),
                ));
            }
        }
        if check_images {
            let img_path = r.resolved_image_path(&manifest.base_dir);
            crate::imgio::load_image(&img_path)
                .map_err(|e| fail("image_path", e.to_string()))?;
        }
    }
    Ok(())
}

/// Writes a manifest in the line-oriented format. `load_manifest` of the
/// written file reproduces the record sequence exactly.
pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<(), CorpusError> {
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let header = serde_json::to_string(&ManifestHeader {
        schema_version: manifest.schema_version,
    })
    .expect("header serializes");
    writeln!(file, "{header}").map_err(|e| io_err(path, e))?;
    for r in &manifest.records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(file, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Exact record counts per (source, split) pair. Pairs with no records are
/// absent from the map.
pub fn split_counts(manifest: &Manifest) -> BTreeMap<(ImageSource, Split), usize> {
    let mut counts = BTreeMap::new();
    for r in &manifest.records {
        *counts.entry((r.source, r.split)).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::collections::BTreeSet;

    fn record(id: &str, split: Split, label10: Option<CloudLabel>) -> CorpusRecord {
        CorpusRecord {
            id: id.into(),
            image_path: PathBuf::from(format!("{id}.png")),
            source: ImageSource::Photo,
            artist: None,
            year: None,
            label10,
            label5: label10.map(map_to_form),
            split,
            annotator: None,
        }
    }

    fn write_with_images(dir: &Path, records: Vec<CorpusRecord>) -> PathBuf {
        for r in &records {
            fixtures::write_test_png(&dir.join(&r.image_path), 4, 4, 7);
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            records,
            base_dir: dir.to_path_buf(),
        };
        let path = dir.join("manifest.jsonl");
        save_manifest(&path, &manifest).unwrap();
        path
    }

    #[test]
    fn mapping_matches_grouping() {
        assert_eq!(map_to_form(CloudLabel::Cumulus), CloudForm::Cumuliform);
        assert_eq!(
            map_to_form(CloudLabel::Cumulonimbus),
            CloudForm::Cumulonimbiform
        );
        assert_eq!(map_to_form(CloudLabel::Cirrus), CloudForm::Cirriform);
        assert_eq!(map_to_form(CloudLabel::Nimbostratus), CloudForm::Stratiform);
        assert_eq!(
            map_to_form(CloudLabel::Altocumulus),
            CloudForm::Stratocumuliform
        );
    }

    #[test]
    fn mapping_is_total_with_expected_preimage_sizes() {
        let mut sizes: BTreeMap<CloudForm, usize> = BTreeMap::new();
        for label in CloudLabel::ALL {
            *sizes.entry(map_to_form(label)).or_insert(0) += 1;
        }
        assert_eq!(sizes[&CloudForm::Cumuliform], 1);
        assert_eq!(sizes[&CloudForm::Cumulonimbiform], 1);
        assert_eq!(sizes[&CloudForm::Cirriform], 1);
        assert_eq!(sizes[&CloudForm::Stratiform], 4);
        assert_eq!(sizes[&CloudForm::Stratocumuliform], 3);
        assert_eq!(sizes.values().sum::<usize>(), 10);
    }

    #[test]
    fn unknown_genus_rejected_at_parse_time() {
        assert!("contrail".parse::<CloudLabel>().is_err());
        assert!(serde_json::from_str::<CloudLabel>("\"contrail\"").is_err());
    }

    #[test]
    fn two_valid_records_round_trip_with_stable_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_with_images(
            dir.path(),
            vec![
                record("b", Split::Train, Some(CloudLabel::Cumulus)),
                record("a", Split::Test, Some(CloudLabel::Stratus)),
            ],
        );
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.len(), 2);
        assert_eq!(manifest.records[0].id, "b");
        assert_eq!(manifest.records[1].id, "a");

        let path2 = dir.path().join("copy.jsonl");
        save_manifest(&path2, &manifest).unwrap();
        let again = load_manifest(&path2).unwrap();
        assert_eq!(again.records, manifest.records);
        // Byte-stable: saving what we loaded reproduces the file.
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn unlabeled_with_label_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = record("bad-one", Split::Unlabeled, None);
        bad.label10 = Some(CloudLabel::Cumulus);
        let path = write_with_images(dir.path(), vec![bad]);
        match load_manifest(&path) {
            Err(CorpusError::Validation { record_id, .. }) => assert_eq!(record_id, "bad-one"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn mapping_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = record("mismatch", Split::Train, Some(CloudLabel::Nimbostratus));
        bad.label5 = Some(CloudForm::Cirriform);
        let path = write_with_images(dir.path(), vec![bad]);
        match load_manifest(&path) {
            Err(CorpusError::Validation {
                record_id, field, ..
            }) => {
                assert_eq!(record_id, "mismatch");
                assert_eq!(field, "label5");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            "{\"schema_version\":1}\n{\"id\":\"x\",\"image_path\":\"x.png\",\"source\":\"photo\",\"split\":\"unlabeled\",\"extra\":1}\n",
        )
        .unwrap();
        assert!(matches!(parse_manifest(&path), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn split_counts_partition_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        for i in 0..8 {
            records.push(record(&format!("tr{i}"), Split::Train, Some(CloudLabel::Cumulus)));
        }
        for i in 0..2 {
            records.push(record(&format!("te{i}"), Split::Test, Some(CloudLabel::Stratus)));
        }
        let path = write_with_images(dir.path(), records);
        let manifest = load_manifest(&path).unwrap();
        let counts = split_counts(&manifest);
        assert_eq!(counts[&(ImageSource::Photo, Split::Train)], 8);
        assert_eq!(counts[&(ImageSource::Photo, Split::Test)], 2);
        assert_eq!(counts.values().sum::<usize>(), manifest.len());
    }

    #[test]
    fn split_counts_empty_manifest() {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            records: vec![],
            base_dir: PathBuf::from("."),
        };
        assert!(split_counts(&manifest).is_empty());
    }

    #[test]
    fn split_counts_mixed_sources() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        for i in 0..5 {
            let mut r = record(&format!("p{i}"), Split::Test, Some(CloudLabel::Cumulus));
            r.source = ImageSource::Painting;
            r.artist = Some("A".into());
            records.push(r);
        }
        for i in 0..5 {
            records.push(record(&format!("u{i}"), Split::Unlabeled, None));
        }
        let path = write_with_images(dir.path(), records);
        let manifest = load_manifest(&path).unwrap();
        let counts = split_counts(&manifest);
        assert_eq!(counts[&(ImageSource::Painting, Split::Test)], 5);
        assert_eq!(counts[&(ImageSource::Photo, Split::Unlabeled)], 5);
        assert_eq!(counts.values().sum::<usize>(), 10);
    }

    #[test]
    fn painting_without_artist_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = record("orphan", Split::Train, Some(CloudLabel::Cumulus));
        bad.source = ImageSource::Painting;
        let path = write_with_images(dir.path(), vec![bad]);
        assert!(matches!(
            load_manifest(&path),
            Err(CorpusError::Validation { .. })
        ));
    }

    #[test]
    fn genus_order_is_stable_and_complete() {
        let names: BTreeSet<&str> = CloudLabel::ALL.iter().map(|l| l.name()).collect();
        assert_eq!(names.len(), 10);
        for (i, label) in CloudLabel::ALL.iter().enumerate() {
            assert_eq!(label.index(), i);
            assert_eq!(CloudLabel::from_index(i), Some(*label));
        }
    }
}
