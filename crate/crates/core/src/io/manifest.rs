//! Label manifests: one CSV row per utterance.
//!
//! Fixed header: `utterance_id,speaker_id,gender,split,transcript`. The
//! transcript may be empty.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::ContainerReader;
use crate::corpus::Split;
use crate::eraser::LabelEncoding;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["utterance_id", "speaker_id", "gender", "split", "transcript"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utterance_id: String,
    pub speaker_id: String,
    pub gender: String,
    pub split: Split,
    #[serde(default)]
    pub transcript: String,
}

impl ManifestRow {
    pub fn words(&self) -> Vec<String> {
        self.transcript.split_whitespace().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelManifest {
    rows: Vec<ManifestRow>,
    classes: LabelEncoding,
    index: HashMap<String, usize>,
}

impl LabelManifest {
    /// Class order defaults to the sorted distinct `gender` values.
    pub fn new(rows: Vec<ManifestRow>, classes: Option<LabelEncoding>) -> Result<Self> {
        let classes = match classes {
            Some(c) => c,
            None => {
                let distinct: BTreeSet<&str> = rows.iter().map(|r| r.gender.as_str()).collect();
                LabelEncoding::new(distinct)?
            }
        };
        let mut index = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if classes.index_of(&row.gender).is_none() {
                return Err(Error::LabelMisalignment(format!(
                    "utterance {} has undeclared class {:?}",
                    row.utterance_id, row.gender
                )));
            }
            if index.insert(row.utterance_id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate utterance id {:?} in manifest", row.utterance_id)));
            }
        }
        Ok(Self { rows, classes, index })
    }

    pub fn read(path: &Path, classes: Option<LabelEncoding>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != MANIFEST_HEADER {
            return Err(Error::Config(format!(
                "manifest {} has header {:?}, expected {:?}",
                path.display(),
                header,
                MANIFEST_HEADER
            )));
        }
        let rows = reader.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        Self::new(rows, classes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn classes(&self) -> &LabelEncoding {
        &self.classes
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestRow> {
        self.index.get(utterance_id).map(|&i| &self.rows[i])
    }

    pub fn label_of(&self, row: &ManifestRow) -> usize {
        self.classes.index_of(&row.gender).expect("validated on construction")
    }

    /// Speakers that appear in both splits, sorted.
    pub fn leaked_speakers(&self) -> Vec<String> {
        let mut train = HashSet::new();
        let mut test = HashSet::new();
        for r in &self.rows {
            match r.split {
                Split::Train => train.insert(r.speaker_id.as_str()),
                Split::Test => test.insert(r.speaker_id.as_str()),
            };
        }
        let mut leaked: Vec<String> = train.intersection(&test).map(|s| s.to_string()).collect();
        leaked.sort();
        leaked
    }
}

/// Per-split counts for one class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub utterances: usize,
    pub speakers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestReport {
    pub n_train: usize,
    pub n_test: usize,
    /// `split -> class -> counts`
    pub balance: BTreeMap<String, BTreeMap<String, ClassBalance>>,
    pub leaked_speakers: Vec<String>,
    /// In the container but not the manifest.
    pub missing_from_manifest: Vec<String>,
    /// In the manifest but not the container.
    pub missing_from_container: Vec<String>,
}

impl ManifestReport {
    pub fn ok(&self) -> bool {
        self.leaked_speakers.is_empty() && self.missing_from_manifest.is_empty() && self.missing_from_container.is_empty()
    }

    /// Balance summary and violations as plain text.
    pub fn summary(&self) -> String {
        let mut s = format!("utterances: {} train / {} test\n", self.n_train, self.n_test);
        for (split, classes) in &self.balance {
            let parts: Vec<String> = classes
                .iter()
                .map(|(c, b)| format!("{c} {} utt / {} spk", b.utterances, b.speakers))
                .collect();
            s.push_str(&format!("{split}: {}\n", parts.join(", ")));
        }
        let mut list = |name: &str, items: &[String]| {
            if !items.is_empty() {
                let shown: Vec<&str> = items.iter().take(20).map(String::as_str).collect();
                let more = if items.len() > 20 { format!(" (+{} more)", items.len() - 20) } else { String::new() };
                s.push_str(&format!("{name} ({}): {}{more}\n", items.len(), shown.join(", ")));
            }
        };
        list("speakers in both splits", &self.leaked_speakers);
        list("container ids missing from manifest", &self.missing_from_manifest);
        list("manifest ids missing from container", &self.missing_from_container);
        s
    }
}

/// Coverage, leakage and balance report; `container_ids` are the distinct
/// utterance ids found in the container.
pub fn manifest_report<'a>(manifest: &LabelManifest, container_ids: impl IntoIterator<Item = &'a str>) -> ManifestReport {
    let mut balance: BTreeMap<String, BTreeMap<String, ClassBalance>> = BTreeMap::new();
    let mut speakers: BTreeMap<(String, String), BTreeSet<&str>> = BTreeMap::new();
    for r in manifest.rows() {
        let entry = balance
            .entry(r.split.to_string())
            .or_default()
            .entry(r.gender.clone())
            .or_default();
        entry.utterances += 1;
        speakers
            .entry((r.split.to_string(), r.gender.clone()))
            .or_default()
            .insert(&r.speaker_id);
    }
    for ((split, class), set) in speakers {
        balance.get_mut(&split).and_then(|m| m.get_mut(&class)).expect("same keys").speakers = set.len();
    }

    let mut seen = HashSet::new();
    let mut missing_from_manifest = Vec::new();
    for id in container_ids {
        if seen.insert(id.to_string()) && manifest.get(id).is_none() {
            missing_from_manifest.push(id.to_string());
        }
    }
    let missing_from_container = manifest
        .rows()
        .iter()
        .filter(|r| !seen.contains(&r.utterance_id))
        .map(|r| r.utterance_id.clone())
        .collect();
    ManifestReport {
        n_train: manifest.rows().iter().filter(|r| r.split == Split::Train).count(),
        n_test: manifest.rows().iter().filter(|r| r.split == Split::Test).count(),
        balance,
        leaked_speakers: manifest.leaked_speakers(),
        missing_from_manifest,
        missing_from_container,
    }
}

/// Streams the container's ids and builds the report.
pub fn validate_manifest(manifest: &LabelManifest, container: &Path) -> Result<ManifestReport> {
    let mut ids = Vec::new();
    let mut last: Option<String> = None;
    for record in ContainerReader::open(container)? {
        let record = record?;
        if last.as_deref() != Some(record.utterance_id.as_str()) {
            ids.push(record.utterance_id.clone());
            last = Some(record.utterance_id);
        }
    }
    Ok(manifest_report(manifest, ids.iter().map(String::as_str)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, speaker: &str, gender: &str, split: Split) -> ManifestRow {
        ManifestRow {
            utterance_id: id.into(),
            speaker_id: speaker.into(),
            gender: gender.into(),
            split,
            transcript: String::new(),
        }
    }

    #[test]
    fn detects_leak_and_coverage() {
        let m = LabelManifest::new(
            vec![
                row("u1", "s1", "F", Split::Train),
                row("u2", "s2", "M", Split::Train),
                row("u3", "s1", "F", Split::Test),
            ],
            None,
        )
        .unwrap();
        let report = manifest_report(&m, ["u1", "u2", "u9"]);
        assert_eq!(report.leaked_speakers, vec!["s1"]);
        assert_eq!(report.missing_from_manifest, vec!["u9"]);
        assert_eq!(report.missing_from_container, vec!["u3"]);
        assert!(!report.ok());
        assert_eq!(report.balance["train"]["F"], ClassBalance { utterances: 1, speakers: 1 });
    }

    #[test]
    fn rejects_duplicates_and_unknown_classes() {
        let dup = vec![row("u1", "s1", "F", Split::Train), row("u1", "s2", "M", Split::Train)];
        assert!(LabelManifest::new(dup, None).is_err());
        let enc = LabelEncoding::new(["F", "M"]).unwrap();
        assert!(LabelManifest::new(vec![row("u1", "s1", "X", Split::Train)], Some(enc)).is_err());
    }

    #[test]
    fn csv_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut rows = vec![row("u1", "s1", "F", Split::Train), row("u2", "s2", "M", Split::Test)];
        rows[1].transcript = "HELLO WORLD".into();
        let m = LabelManifest::new(rows, None).unwrap();
        m.write(&path).unwrap();
        let back = LabelManifest::read(&path, None).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("u2").unwrap().words(), vec!["HELLO", "WORLD"]);

        std::fs::write(&path, "id,speaker,gender,split,transcript\nu1,s1,F,train,\n").unwrap();
        assert!(LabelManifest::read(&path, None).is_err());
    }
}
