use std::fmt;
use std::path::{Path, PathBuf};

use crate::adasyn::{balance_multiclass, FeatureMatrix};
use crate::cnn::{predict_subject, train, write_checkpoint, EpochStats, LabeledImages, NetworkSpec, Parameters};
use crate::datamodel::{load_dataset, split_train_test, ClassLabel, Dataset, Modality, SplitSpec, Volume};
use crate::eval::config::{DataSource, ExperimentConfig, NetworkChoice};
use crate::eval::report::{render_csv, render_text, write_weights};
use crate::eval::{evaluate, synth_generate, MetricsReport};
use crate::fusion::{
    fusion_report, write_ensemble, EnsembleOutputs, FusionError, FusionPlan, FusionWeights, GridSearchConfig, Strategy,
    StrategyResult,
};

/// Pipeline stage named in failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Split,
    Network,
    Adasyn,
    Train,
    Predict,
    Fusion,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Data => "data",
            Stage::Split => "split",
            Stage::Network => "network",
            Stage::Adasyn => "adasyn",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Fusion => "fusion",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage {stage} failed: {message}")]
pub struct ExperimentError {
    pub stage: Stage,
    pub message: String,
}

fn fail(stage: Stage) -> impl Fn(&dyn fmt::Display) -> ExperimentError {
    move |e| ExperimentError {
        stage,
        message: e.to_string(),
    }
}

/// What one modality's model produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityRun {
    pub modality: Modality,
    pub original_rows: usize,
    pub synthetic_rows: usize,
    pub history: Vec<EpochStats>,
    pub checkpoint: PathBuf,
}

/// One row of the modality table.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetRow {
    pub name: String,
    pub modalities: Vec<Modality>,
    pub weights: FusionWeights,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub spec: NetworkSpec,
    /// Subjects per class in the fit, validation and test splits.
    pub counts: [[usize; 3]; 3],
    pub runs: Vec<ModalityRun>,
    pub plan: FusionPlan,
    pub modality_rows: Vec<SubsetRow>,
    pub strategy_rows: Vec<StrategyResult>,
    pub validation: EnsembleOutputs,
    pub test: EnsembleOutputs,
    pub test_labels: Vec<ClassLabel>,
}

/// Fixed seed offset for carving the validation split out of the training split.
pub const VALIDATION_SEED_SALT: u64 = 0x005e_ed0f_7a11;

fn modality_name(m: Modality) -> String {
    m.as_str().to_string()
}

/// Rows, in modality-table order: four single modalities, two pairs, all four.
pub fn table_subsets() -> Vec<(String, Vec<Modality>)> {
    use Modality::*;
    vec![
        ("WM".into(), vec![Wm]),
        ("GM".into(), vec![Gm]),
        ("MD".into(), vec![Md]),
        ("FA".into(), vec![Fa]),
        ("WM+GM".into(), vec![Gm, Wm]),
        ("FA+MD".into(), vec![Fa, Md]),
        ("All four (OWAF)".into(), Modality::ALL.to_vec()),
    ]
}

/// MRA weights and OWAF search restricted to `subset`, tuned on validation and scored on test.
pub fn modality_subset_fusion(
    validation: &EnsembleOutputs,
    validation_labels: &[ClassLabel],
    test: &EnsembleOutputs,
    test_labels: &[ClassLabel],
    subset: &[Modality],
    grid: &GridSearchConfig,
) -> Result<(FusionWeights, MetricsReport), FusionError> {
    if subset.is_empty() {
        return Err(FusionError::NoModels);
    }
    let indices = |e: &EnsembleOutputs| {
        subset
            .iter()
            .map(|m| {
                e.model_index(m.as_str())
                    .ok_or_else(|| FusionError::Ensemble(format!("no {m} model in ensemble")))
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let val = validation.select(&indices(validation)?)?;
    let tst = test.select(&indices(test)?)?;
    let plan = FusionPlan::tune(&val, validation_labels, grid)?;
    let predictions = tst.fused_predictions(&plan.owaf)?;
    let metrics = evaluate(test_labels, &predictions)?;
    Ok((plan.owaf, metrics))
}

fn resolve_spec(cfg: &ExperimentConfig, dims: (usize, usize, usize)) -> Result<NetworkSpec, ExperimentError> {
    let spec = match &cfg.network {
        NetworkChoice::Desk => NetworkSpec::desk(dims.1, dims.2),
        NetworkChoice::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| fail(Stage::Network)(&format!("{}: {e}", path.display())))?;
            NetworkSpec::from_text(&text).map_err(|e| fail(Stage::Network)(&e))?
        }
    };
    if spec.input() != (1, dims.1, dims.2) {
        return Err(fail(Stage::Network)(&format!(
            "network input {:?} does not match {}x{} slices",
            spec.input(),
            dims.1,
            dims.2
        )));
    }
    Ok(spec)
}

fn train_modality(
    m: Modality,
    fit: &Dataset,
    spec: &NetworkSpec,
    cfg: &ExperimentConfig,
    checkpoint: PathBuf,
) -> Result<(ModalityRun, Parameters), ExperimentError> {
    let dims = fit.subjects()[0].volume(m).map(Volume::dims).unwrap_or((0, 0, 0));
    let rows: Vec<Vec<f32>> = fit
        .subjects()
        .iter()
        .map(|s| {
            s.volume(m)
                .map(|v| v.voxels().to_vec())
                .ok_or_else(|| fail(Stage::Data)(&format!("subject {} has no {m} volume", s.id())))
        })
        .collect::<Result<_, _>>()?;
    let x = FeatureMatrix::from_rows(rows, fit.labels()).map_err(|e| fail(Stage::Adasyn)(&e))?;
    let balanced = balance_multiclass(&x, &cfg.adasyn).map_err(|e| fail(Stage::Adasyn)(&e))?;

    let mut images = LabeledImages::new(spec.input_len());
    for i in 0..balanced.matrix.rows() {
        let v = Volume::new(dims.0, dims.1, dims.2, balanced.matrix.row(i).to_vec())
            .map_err(|e| fail(Stage::Adasyn)(&e))?;
        images.push_volume(&v, balanced.matrix.labels()[i]);
    }
    log::info!("training {m} on {} slices", images.len());
    let outcome = train(spec, &images, &cfg.train).map_err(|e| fail(Stage::Train)(&format!("{m}: {e}")))?;
    write_checkpoint(&checkpoint, spec, &outcome.params).map_err(|e| fail(Stage::Train)(&e))?;
    Ok((
        ModalityRun {
            modality: m,
            original_rows: balanced.original_rows,
            synthetic_rows: balanced.synthetic_rows(),
            history: outcome.history,
            checkpoint,
        },
        outcome.params,
    ))
}

fn ensemble(
    ds: &Dataset,
    spec: &NetworkSpec,
    models: &[(Modality, Parameters)],
) -> Result<EnsembleOutputs, ExperimentError> {
    let probs = ds
        .subjects()
        .iter()
        .map(|s| {
            models
                .iter()
                .map(|(m, p)| {
                    let v = s
                        .volume(*m)
                        .ok_or_else(|| fail(Stage::Predict)(&format!("subject {} has no {m} volume", s.id())))?;
                    predict_subject(spec, p, v).map_err(|e| fail(Stage::Predict)(&e))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    EnsembleOutputs::new(
        models.iter().map(|(m, _)| modality_name(*m)).collect(),
        ds.ids().iter().map(|s| s.to_string()).collect(),
        probs,
    )
    .map_err(|e| fail(Stage::Predict)(&e))
}

fn run_pipeline(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let out = &cfg.out_dir;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| fail(Stage::Report)(&format!("{}: {e}", ckpt_dir.display())))?;

    let dataset = match &cfg.source {
        DataSource::Synthetic(s) => synth_generate(s).map_err(|e| fail(Stage::Data)(&e))?,
        DataSource::Manifest(p) => load_dataset(p).map_err(|e| fail(Stage::Data)(&e))?,
    };
    if dataset.is_empty() {
        return Err(fail(Stage::Data)(&"dataset is empty"));
    }
    for m in Modality::ALL {
        if let Some(s) = dataset.subjects().iter().find(|s| s.volume(m).is_none()) {
            return Err(fail(Stage::Data)(&format!("subject {} has no {m} volume", s.id())));
        }
    }
    let dims = dataset.subjects()[0].volume(Modality::Gm).unwrap().dims();
    if let Some(s) = dataset.subjects().iter().find(|s| s.volume(Modality::Gm).unwrap().dims() != dims) {
        return Err(fail(Stage::Data)(&format!("subject {} has different volume dimensions", s.id())));
    }
    let spec = resolve_spec(cfg, dims)?;

    let (train_set, test_set) = split_train_test(&dataset, &cfg.split).map_err(|e| fail(Stage::Split)(&e))?;
    let val_spec = SplitSpec::new(1.0 - cfg.validation_fraction, cfg.split.seed() ^ VALIDATION_SEED_SALT)
        .map_err(|e| fail(Stage::Split)(&e))?;
    let (fit, val_set) = split_train_test(&train_set, &val_spec).map_err(|e| fail(Stage::Split)(&e))?;

    // models train independently; results are gathered in fixed modality order
    let trained: Vec<Result<_, ExperimentError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = Modality::ALL
            .iter()
            .map(|&m| {
                let (fit, spec, ckpt) = (&fit, &spec, ckpt_dir.join(format!("{}.cnn1", m.as_str().to_ascii_lowercase())));
                scope.spawn(move || train_modality(m, fit, spec, cfg, ckpt))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(fail(Stage::Train)(&"training thread panicked"))))
            .collect()
    });
    let mut runs = Vec::new();
    let mut models = Vec::new();
    for r in trained {
        let (run, params) = r?;
        models.push((run.modality, params));
        runs.push(run);
    }

    let validation = ensemble(&val_set, &spec, &models)?;
    let test = ensemble(&test_set, &spec, &models)?;
    let (val_labels, test_labels) = (val_set.labels(), test_set.labels());

    let fusion = fail(Stage::Fusion);
    log::info!("tuning fusion weights on {} validation subjects", validation.len());
    let plan = FusionPlan::tune(&validation, &val_labels, &cfg.grid).map_err(|e| fusion(&e))?;
    let strategy_rows = fusion_report(&test, &test_labels, &plan, &Strategy::ALL).map_err(|e| fusion(&e))?;
    let mut modality_rows = Vec::new();
    for (name, subset) in table_subsets() {
        let (weights, metrics) =
            modality_subset_fusion(&validation, &val_labels, &test, &test_labels, &subset, &cfg.grid)
                .map_err(|e| fusion(&e))?;
        modality_rows.push(SubsetRow {
            name,
            modalities: subset,
            weights,
            metrics,
        });
    }

    Ok(ExperimentReport {
        config: cfg.clone(),
        spec,
        counts: [fit.class_counts(), val_set.class_counts(), test_set.class_counts()],
        runs,
        plan,
        modality_rows,
        strategy_rows,
        validation,
        test,
        test_labels,
    })
}

fn write(path: &Path, text: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, text).map_err(|e| fail(Stage::Report)(&format!("{}: {e}", path.display())))
}

/// Runs the whole pipeline and writes `report.txt`, `report.csv`, ensemble and
/// weight CSVs and checkpoints into the output directory. A failing stage is
/// recorded in `report.txt` before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let out = &cfg.out_dir;
    match run_pipeline(cfg) {
        Ok(report) => {
            write(&out.join("report.txt"), &render_text(&report))?;
            write(&out.join("report.csv"), &render_csv(&report))?;
            let csv = |e: FusionError| fail(Stage::Report)(&e);
            write_ensemble(out.join("validation_ensemble.csv"), &report.validation).map_err(csv)?;
            write_ensemble(out.join("test_ensemble.csv"), &report.test).map_err(csv)?;
            let names = report.test.models();
            write_weights(&out.join("weights_mra.csv"), names, report.plan.mra.values())?;
            write_weights(&out.join("weights_owaf.csv"), names, report.plan.owaf.values())?;
            Ok(report)
        }
        Err(err) => {
            let _ = std::fs::create_dir_all(out);
            let _ = std::fs::write(out.join("report.txt"), crate::eval::report::render_failure(cfg, &err));
            Err(err)
        }
    }
}
