use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use super::volume::io_err;
use super::{read_volume, ClassLabel, DataError, Dataset, Modality, Result, Subject, Volume};

const HEADER: [&str; 4] = ["subject_id", "label", "modality", "path"];

/// One line of a dataset manifest. `path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub subject_id: String,
    pub label: ClassLabel,
    pub modality: Modality,
    pub path: PathBuf,
}

fn manifest_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_rows(manifest_path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(manifest_path)
        .map_err(|e| manifest_err(manifest_path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| manifest_err(manifest_path, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(manifest_err(
            manifest_path,
            format!("header must be `{}`", HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| manifest_err(manifest_path, e.to_string()))?;
        if record.len() != 4 {
            return Err(manifest_err(
                manifest_path,
                format!("row {} has {} fields", line + 2, record.len()),
            ));
        }
        rows.push(ManifestRow {
            subject_id: record[0].to_string(),
            label: record[1].parse()?,
            modality: record[2].parse()?,
            path: PathBuf::from(&record[3]),
        });
    }
    Ok(rows)
}

/// Loads every volume named by a manifest CSV into a [`Dataset`] sorted by subject id.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let rows = read_rows(manifest_path)?;

    let mut seen = HashSet::new();
    let mut grouped: BTreeMap<String, (ClassLabel, BTreeMap<Modality, Volume>)> = BTreeMap::new();
    for row in rows {
        if !seen.insert((row.subject_id.clone(), row.modality)) {
            return Err(DataError::DuplicateRow {
                subject_id: row.subject_id,
                modality: row.modality,
            });
        }
        let volume = read_volume(base.join(&row.path))?;
        let entry = grouped
            .entry(row.subject_id.clone())
            .or_insert_with(|| (row.label, BTreeMap::new()));
        if entry.0 != row.label {
            return Err(DataError::ConflictingLabel {
                subject_id: row.subject_id,
                first: entry.0,
                second: row.label,
            });
        }
        entry.1.insert(row.modality, volume);
    }

    let subjects = grouped
        .into_iter()
        .map(|(id, (label, volumes))| Subject::new(id, label, volumes))
        .collect::<Result<Vec<_>>>()?;
    let provenance = format!("manifest:{}", manifest_path.display());
    Dataset::new(subjects, provenance)
}

/// Writes a manifest CSV with the canonical header.
pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| manifest_err(path, e.to_string()))?;
    let to_err = |e: csv::Error| manifest_err(path, e.to_string());
    writer.write_record(HEADER).map_err(to_err)?;
    for row in rows {
        writer
            .write_record([
                row.subject_id.as_str(),
                row.label.as_str(),
                row.modality.as_str(),
                &row.path.to_string_lossy(),
            ])
            .map_err(to_err)?;
    }
    writer.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::write_volume;
    use std::fs;

    fn write_set(dir: &Path, ids: &[(&str, &str)], modalities: &[&str]) -> PathBuf {
        let mut text = String::from("subject_id,label,modality,path\n");
        for (id, label) in ids {
            for m in modalities {
                let name = format!("{id}_{m}.vol");
                let v = Volume::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
                write_volume(dir.join(&name), &v).unwrap();
                text.push_str(&format!("{id},{label},{m},{name}\n"));
            }
        }
        let p = dir.join("manifest.csv");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_three_subjects_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_set(
            dir.path(),
            &[("s3", "PD"), ("s1", "HC"), ("s2", "SWEDD")],
            &["GM", "WM", "FA", "MD"],
        );
        let ds = load_dataset(&p).unwrap();
        assert_eq!(ds.ids(), vec!["s1", "s2", "s3"]);
        assert!(ds.subjects().iter().all(|s| s.volumes().len() == 4));
        assert_eq!(
            ds.labels(),
            vec![ClassLabel::Hc, ClassLabel::Swedd, ClassLabel::Pd]
        );
    }

    #[test]
    fn unknown_modality_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_set(dir.path(), &[("s1", "HC")], &["T2"]);
        assert!(matches!(
            load_dataset(&p),
            Err(DataError::UnknownModality(m)) if m == "T2"
        ));
    }

    #[test]
    fn duplicate_rows_and_bad_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_set(dir.path(), &[("s1", "HC")], &["GM", "GM"]);
        assert!(matches!(
            load_dataset(&p),
            Err(DataError::DuplicateRow { .. })
        ));
        let p = write_set(dir.path(), &[("s1", "ET")], &["GM"]);
        assert!(matches!(load_dataset(&p), Err(DataError::UnknownLabel(_))));
    }

    #[test]
    fn mismatched_dimensions_within_subject() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_set(dir.path(), &[("s1", "HC")], &["GM"]);
        write_volume(dir.path().join("odd.vol"), &Volume::zeros(2, 1, 1).unwrap()).unwrap();
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("s1,HC,WM,odd.vol\n");
        fs::write(&p, text).unwrap();
        assert!(matches!(
            load_dataset(&p),
            Err(DataError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        write_volume(dir.path().join("a.vol"), &Volume::zeros(1, 2, 2).unwrap()).unwrap();
        let rows = vec![ManifestRow {
            subject_id: "a".into(),
            label: ClassLabel::Pd,
            modality: Modality::Fa,
            path: "a.vol".into(),
        }];
        let p = dir.path().join("m.csv");
        write_manifest(&p, &rows).unwrap();
        let ds = load_dataset(&p).unwrap();
        assert_eq!(ds.subjects()[0].volume(Modality::Fa).unwrap().dims(), (1, 2, 2));
    }
}
