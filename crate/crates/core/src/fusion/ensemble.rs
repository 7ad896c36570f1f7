use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{fuse_class, FusionError, FusionWeights, Result};
use crate::datamodel::{ClassLabel, Modality, ProbVector};

/// Per-subject probability outputs of several models over the same subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutputs {
    models: Vec<String>,
    subjects: Vec<String>,
    /// `probs[subject][model]`
    probs: Vec<Vec<ProbVector>>,
}

impl EnsembleOutputs {
    pub fn new(models: Vec<String>, subjects: Vec<String>, probs: Vec<Vec<ProbVector>>) -> Result<Self> {
        if models.is_empty() {
            return Err(FusionError::NoModels);
        }
        if probs.len() != subjects.len() {
            return Err(FusionError::Ensemble(format!(
                "{} probability rows for {} subjects",
                probs.len(),
                subjects.len()
            )));
        }
        if let Some((j, row)) = probs.iter().enumerate().find(|(_, r)| r.len() != models.len()) {
            return Err(FusionError::Ensemble(format!(
                "subject {:?} has {} model outputs, expected {}",
                subjects[j],
                row.len(),
                models.len()
            )));
        }
        if models.iter().collect::<BTreeSet<_>>().len() != models.len() {
            return Err(FusionError::Ensemble(format!("duplicate model names in {models:?}")));
        }
        if subjects.iter().collect::<BTreeSet<_>>().len() != subjects.len() {
            return Err(FusionError::Ensemble("duplicate subject ids".into()));
        }
        Ok(Self {
            models,
            subjects,
            probs,
        })
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// All model outputs for subject `j`, in model order.
    pub fn subject(&self, j: usize) -> &[ProbVector] {
        &self.probs[j]
    }

    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.models.iter().position(|m| m == name)
    }

    /// Ensemble restricted to the given model indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.models.len()) {
            return Err(FusionError::Ensemble(format!("model index {bad} out of range")));
        }
        Self::new(
            indices.iter().map(|&i| self.models[i].clone()).collect(),
            self.subjects.clone(),
            self.probs
                .iter()
                .map(|row| indices.iter().map(|&i| row[i]).collect())
                .collect(),
        )
    }

    /// Argmax predictions of one model.
    pub fn model_predictions(&self, i: usize) -> Vec<ClassLabel> {
        self.probs.iter().map(|row| row[i].argmax()).collect()
    }

    /// Accuracy of each model on its own.
    pub fn accuracies(&self, labels: &[ClassLabel]) -> Result<Vec<f64>> {
        self.check_labels(labels)?;
        Ok((0..self.models.len())
            .map(|i| {
                let hits = self.model_predictions(i).iter().zip(labels).filter(|(p, t)| p == t).count();
                hits as f64 / labels.len() as f64
            })
            .collect())
    }

    pub fn fused_predictions(&self, weights: &FusionWeights) -> Result<Vec<ClassLabel>> {
        self.probs.iter().map(|row| fuse_class(weights, row)).collect()
    }

    pub(crate) fn check_labels(&self, labels: &[ClassLabel]) -> Result<()> {
        if labels.len() != self.len() {
            return Err(FusionError::Ensemble(format!(
                "{} labels for {} subjects",
                labels.len(),
                self.len()
            )));
        }
        if labels.is_empty() {
            return Err(FusionError::EmptyValidation);
        }
        Ok(())
    }
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> FusionError {
    FusionError::Ensemble(format!("{}: {e}", path.display()))
}

/// Modality names sort in GM, WM, FA, MD order; anything else sorts by name after them.
fn model_key(name: &str) -> (usize, String) {
    match name.parse::<Modality>() {
        Ok(m) => (Modality::ALL.iter().position(|&x| x == m).unwrap(), String::new()),
        Err(_) => (Modality::ALL.len(), name.to_string()),
    }
}

/// Reads `subject_id,model,p_hc,p_pd,p_swedd`. Subjects come back sorted by id.
pub fn read_ensemble(path: impl AsRef<Path>) -> Result<EnsembleOutputs> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().collect::<Vec<_>>() != ["subject_id", "model", "p_hc", "p_pd", "p_swedd"] {
        return Err(csv_err(path, "expected header subject_id,model,p_hc,p_pd,p_swedd"));
    }
    let mut table: BTreeMap<String, BTreeMap<(usize, String), ProbVector>> = BTreeMap::new();
    let mut names: BTreeMap<(usize, String), String> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let at = |msg: String| csv_err(path, format!("row {}: {msg}", line + 2));
        let subject = record[0].to_string();
        let model = record[1].to_string();
        if subject.is_empty() || model.is_empty() {
            return Err(at("empty subject id or model".into()));
        }
        let mut p = [0.0; 3];
        for (k, v) in p.iter_mut().enumerate() {
            *v = record[2 + k].trim().parse().map_err(|e| at(format!("{e}")))?;
        }
        let p = ProbVector::new(p).map_err(|e| at(e.to_string()))?;
        let key = model_key(&model);
        names.insert(key.clone(), model.clone());
        if table.entry(subject.clone()).or_default().insert(key, p).is_some() {
            return Err(at(format!("duplicate row for subject {subject:?}, model {model}")));
        }
    }
    let keys: Vec<_> = names.keys().cloned().collect();
    let mut subjects = Vec::new();
    let mut probs = Vec::new();
    for (subject, row) in table {
        if row.len() != keys.len() {
            return Err(csv_err(path, format!("subject {subject:?} is missing model outputs")));
        }
        probs.push(row.into_values().collect());
        subjects.push(subject);
    }
    EnsembleOutputs::new(names.into_values().collect(), subjects, probs)
}

pub fn write_ensemble(path: impl AsRef<Path>, ensemble: &EnsembleOutputs) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["subject_id", "model", "p_hc", "p_pd", "p_swedd"])
        .map_err(|e| csv_err(path, e))?;
    for (subject, row) in ensemble.subjects.iter().zip(&ensemble.probs) {
        for (model, p) in ensemble.models.iter().zip(row) {
            let v = p.values();
            w.write_record([
                subject.clone(),
                model.clone(),
                format!("{:.6}", v[0]),
                format!("{:.6}", v[1]),
                format!("{:.6}", v[2]),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| csv_err(path, e))
}

/// Reads `subject_id,label` into a map.
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, ClassLabel>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().collect::<Vec<_>>() != ["subject_id", "label"] {
        return Err(csv_err(path, "expected header subject_id,label"));
    }
    let mut labels = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let label: ClassLabel = record[1].parse().map_err(|e| csv_err(path, e))?;
        if labels.insert(record[0].to_string(), label).is_some() {
            return Err(csv_err(path, format!("duplicate subject {:?}", &record[0])));
        }
    }
    Ok(labels)
}

pub fn write_labels<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a str, ClassLabel)>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["subject_id", "label"]).map_err(|e| csv_err(path, e))?;
    for (id, label) in rows {
        w.write_record([id, label.as_str()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(a: f64, b: f64, c: f64) -> ProbVector {
        ProbVector::new([a, b, c]).unwrap()
    }

    fn sample() -> EnsembleOutputs {
        EnsembleOutputs::new(
            vec!["GM".into(), "WM".into()],
            vec!["a".into(), "b".into()],
            vec![
                vec![pv(0.5, 0.25, 0.25), pv(0.125, 0.75, 0.125)],
                vec![pv(0.0, 0.0, 1.0), pv(0.25, 0.5, 0.25)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.csv");
        let e = sample();
        write_ensemble(&path, &e).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("subject_id,model,p_hc,p_pd,p_swedd\na,GM,0.500000,0.250000,0.250000\n"));
        assert_eq!(read_ensemble(&path).unwrap(), e);

        let lp = dir.path().join("labels.csv");
        write_labels(&lp, [("a", ClassLabel::Pd), ("b", ClassLabel::Swedd)]).unwrap();
        let labels = read_labels(&lp).unwrap();
        assert_eq!(labels["b"], ClassLabel::Swedd);
    }

    #[test]
    fn modality_models_are_ordered_canonically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.csv");
        std::fs::write(
            &path,
            "subject_id,model,p_hc,p_pd,p_swedd\ns1,MD,1,0,0\ns1,GM,0,1,0\ns0,MD,0,0,1\ns0,GM,0.5,0.5,0\n",
        )
        .unwrap();
        let e = read_ensemble(&path).unwrap();
        assert_eq!(e.models(), ["GM", "MD"]);
        assert_eq!(e.subjects(), ["s0", "s1"]);
        assert_eq!(e.subject(1)[0].argmax(), ClassLabel::Pd);
    }

    #[test]
    fn malformed_ensembles_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.csv");
        let cases = [
            "subject,model,p_hc,p_pd,p_swedd\n",
            "subject_id,model,p_hc,p_pd,p_swedd\ns0,GM,1,0,0\ns0,GM,1,0,0\n",
            "subject_id,model,p_hc,p_pd,p_swedd\ns0,GM,1,0,0\ns0,WM,1,0,0\ns1,GM,1,0,0\n",
            "subject_id,model,p_hc,p_pd,p_swedd\ns0,GM,-1,0,0\n",
            "subject_id,model,p_hc,p_pd,p_swedd\ns0,GM,x,0,0\n",
        ];
        for text in cases {
            std::fs::write(&path, text).unwrap();
            assert!(read_ensemble(&path).is_err(), "{text}");
        }
    }

    #[test]
    fn accuracies_and_selection() {
        let e = sample();
        let acc = e.accuracies(&[ClassLabel::Hc, ClassLabel::Pd]).unwrap();
        assert_eq!(acc, vec![0.5, 0.5]);
        let wm = e.select(&[1]).unwrap();
        assert_eq!(wm.models(), ["WM"]);
        assert_eq!(wm.model_predictions(0), e.model_predictions(1));
        assert!(e.select(&[2]).is_err());
        assert!(e.accuracies(&[ClassLabel::Hc]).is_err());
    }
}
