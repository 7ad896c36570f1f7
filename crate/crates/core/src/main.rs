use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pdfusion::adasyn::{balance_multiclass, AdasynConfig, FeatureMatrix};
use pdfusion::cnn::{predict_subject, read_checkpoint, train, write_checkpoint, LabeledImages, NetworkSpec, TrainConfig};
use pdfusion::datamodel::{
    load_dataset, read_volume, write_manifest, write_volume, ClassLabel, Dataset, ManifestRow, Modality, Volume,
};
use pdfusion::dti::{compute_scalar_maps, read_tensor_volume};
use pdfusion::eval::{run_experiment, synth_generate, write_dataset, ExperimentConfig, SynthConfig};
use pdfusion::fusion::{
    fusion_report, read_ensemble, read_labels, FusionPlan, GridSearchConfig, Strategy, StrategyResult,
};

#[derive(Parser)]
#[command(name = "pdfusion", version, about = "Three-class HC/PD/SWEDD classification with decision-level fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: VOL1 files plus manifest.csv.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        per_class: usize,
        #[arg(long, default_value = "16,32,32", value_parser = parse_dims)]
        dims: (usize, usize, usize),
        #[arg(long, default_value_t = 1337)]
        seed: u64,
    },
    /// Balance one modality with ADASYN and write an augmented manifest.
    Adasyn {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        modality: Modality,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1337)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one modality's network and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        modality: Modality,
        /// Spec file, or `desk` for the default network sized to the volumes.
        #[arg(long, default_value = "desk")]
        spec: String,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 1337)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a volume's class probabilities (HC PD SWEDD).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
    },
    /// Fuse an ensemble CSV and write predictions.csv (and weights.csv for mra/owaf).
    Fuse {
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long, default_value_t = 0.05)]
        radius: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Accepted for interface stability; the search is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compute MD and FA maps from a TEN1 tensor volume.
    Dti {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline from a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(String),
    Stage(String),
}

fn config<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn stage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Stage(e.to_string())
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [d, h, w] => Ok((d, h, w)),
        _ => Err("expected D,H,W".into()),
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| stage(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| stage(format!("{}: {e}", path.display())))
}

fn modality_rows(ds: &Dataset, m: Modality) -> Result<(Vec<&Volume>, Vec<ClassLabel>), Failure> {
    let mut volumes = Vec::new();
    let mut labels = Vec::new();
    for s in ds.subjects() {
        if let Some(v) = s.volume(m) {
            volumes.push(v);
            labels.push(s.label());
        }
    }
    if volumes.is_empty() {
        return Err(stage(format!("manifest has no {m} volumes")));
    }
    Ok((volumes, labels))
}

fn cmd_synth(out: &Path, per_class: usize, dims: (usize, usize, usize), seed: u64) -> Result<(), Failure> {
    let cfg = SynthConfig {
        per_class: [per_class; 3],
        dims,
        seed,
        ..SynthConfig::default()
    };
    cfg.validate().map_err(config)?;
    let ds = synth_generate(&cfg).map_err(stage)?;
    let manifest = write_dataset(&ds, out).map_err(stage)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_adasyn(manifest: &Path, m: Modality, cfg: &AdasynConfig, out: &Path) -> Result<(), Failure> {
    let ds = load_dataset(manifest).map_err(stage)?;
    let (volumes, labels) = modality_rows(&ds, m)?;
    let dims = volumes[0].dims();
    if let Some(v) = volumes.iter().find(|v| v.dims() != dims) {
        return Err(stage(format!("{m} volumes differ in size: {:?} and {:?}", dims, v.dims())));
    }
    let x = FeatureMatrix::from_rows(volumes.iter().map(|v| v.voxels().to_vec()).collect(), labels)
        .map_err(stage)?;
    let balanced = balance_multiclass(&x, cfg).map_err(stage)?;
    create_dir(out)?;

    let mut ids: Vec<String> = ds
        .subjects()
        .iter()
        .filter(|s| s.volume(m).is_some())
        .map(|s| s.id().to_string())
        .collect();
    let mut per_class = [0usize; 3];
    for &label in &balanced.matrix.labels()[balanced.original_rows..] {
        let n = &mut per_class[label.code()];
        ids.push(format!("syn-{}-{:03}", label.as_str().to_lowercase(), *n));
        *n += 1;
    }
    let mut rows = Vec::with_capacity(ids.len());
    for (i, id) in ids.into_iter().enumerate() {
        let file = format!("{id}_{}.vol", m.as_str().to_ascii_lowercase());
        let volume = Volume::new(dims.0, dims.1, dims.2, balanced.matrix.row(i).to_vec()).map_err(stage)?;
        write_volume(out.join(&file), &volume).map_err(stage)?;
        rows.push(ManifestRow {
            subject_id: id,
            label: balanced.matrix.labels()[i],
            modality: m,
            path: PathBuf::from(file),
        });
    }
    write_manifest(out.join("manifest.csv"), &rows).map_err(stage)?;
    let counts = balanced.matrix.class_counts();
    println!(
        "{} original + {} synthetic rows; HC {} PD {} SWEDD {}",
        balanced.original_rows,
        balanced.synthetic_rows(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(())
}

fn load_spec(spec: &str, dims: (usize, usize, usize)) -> Result<NetworkSpec, Failure> {
    let spec = if spec == "desk" {
        NetworkSpec::desk(dims.1, dims.2)
    } else {
        let text = std::fs::read_to_string(spec).map_err(|e| config(format!("{spec}: {e}")))?;
        NetworkSpec::from_text(&text).map_err(config)?
    };
    let (c, h, w) = spec.input();
    if (c, h, w) != (1, dims.1, dims.2) {
        return Err(config(format!(
            "network input {c}x{h}x{w} does not match {}x{} slices",
            dims.1, dims.2
        )));
    }
    Ok(spec)
}

fn cmd_train(manifest: &Path, m: Modality, spec: &str, cfg: &TrainConfig, out: &Path) -> Result<(), Failure> {
    cfg.validate().map_err(config)?;
    let ds = load_dataset(manifest).map_err(stage)?;
    let (volumes, labels) = modality_rows(&ds, m)?;
    let spec = load_spec(spec, volumes[0].dims())?;
    let mut images = LabeledImages::new(spec.input_len());
    for (v, &label) in volumes.iter().zip(&labels) {
        if v.dims().1 != volumes[0].dims().1 || v.dims().2 != volumes[0].dims().2 {
            return Err(stage(format!("{m} volumes differ in slice size")));
        }
        images.push_volume(v, label);
    }
    let outcome = train(&spec, &images, cfg).map_err(stage)?;
    write_checkpoint(out, &spec, &outcome.params).map_err(stage)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "{} epochs, final loss {:.6}, train accuracy {:.4}",
            outcome.history.len(),
            last.loss,
            last.accuracy
        );
    }
    Ok(())
}

fn cmd_predict(checkpoint: &Path, volume: &Path) -> Result<(), Failure> {
    let (spec, params) = read_checkpoint(checkpoint).map_err(stage)?;
    let volume = read_volume(volume).map_err(stage)?;
    let p = predict_subject(&spec, &params, &volume).map_err(stage)?;
    let v = p.values();
    println!("{:.6} {:.6} {:.6}", v[0], v[1], v[2]);
    Ok(())
}

fn predictions_csv(subjects: &[String], result: &StrategyResult) -> String {
    let mut s = String::from("subject_id,predicted,p_hc,p_pd,p_swedd\n");
    for ((id, label), score) in subjects.iter().zip(&result.predictions).zip(&result.scores) {
        let v = score.values();
        let _ = writeln!(s, "{id},{label},{:.6},{:.6},{:.6}", v[0], v[1], v[2]);
    }
    s
}

fn cmd_fuse(
    ensemble: &Path,
    labels: &Path,
    strategy: Strategy,
    grid: &GridSearchConfig,
    out: &Path,
) -> Result<(), Failure> {
    let ens = read_ensemble(ensemble).map_err(stage)?;
    let by_id = read_labels(labels).map_err(stage)?;
    let truth = ens
        .subjects()
        .iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| stage(format!("no label for subject {id:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let plan = FusionPlan::tune(&ens, &truth, grid).map_err(stage)?;
    let result = fusion_report(&ens, &truth, &plan, &[strategy])
        .map_err(stage)?
        .remove(0);
    create_dir(out)?;
    write_text(&out.join("predictions.csv"), &predictions_csv(ens.subjects(), &result))?;
    if matches!(strategy, Strategy::Mra | Strategy::Owaf) {
        if let Some(w) = &result.weights {
            let mut s = String::from("model,weight\n");
            for (m, v) in ens.models().iter().zip(w.values()) {
                let _ = writeln!(s, "{m},{v:.6}");
            }
            write_text(&out.join("weights.csv"), &s)?;
        }
    }
    println!("{} accuracy {:.6}", strategy.title(), result.metrics.accuracy);
    Ok(())
}

fn cmd_dti(tensor: &Path, out: &Path) -> Result<(), Failure> {
    let tv = read_tensor_volume(tensor).map_err(stage)?;
    let maps = compute_scalar_maps(&tv).map_err(stage)?;
    create_dir(out)?;
    write_volume(out.join("md.vol"), &maps.md).map_err(stage)?;
    write_volume(out.join("fa.vol"), &maps.fa).map_err(stage)?;
    if maps.clamped_voxels > 0 {
        println!("clamped FA in {} voxels", maps.clamped_voxels);
    }
    Ok(())
}

fn cmd_experiment(path: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(path).map_err(config)?;
    let report = run_experiment(&cfg).map_err(stage)?;
    for row in &report.strategy_rows {
        println!("{:<24}{:.4}", row.strategy.title(), row.metrics.accuracy);
    }
    println!("report: {}", cfg.out_dir.join("report.txt").display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth {
            out,
            per_class,
            dims,
            seed,
        } => cmd_synth(&out, per_class, dims, seed),
        Command::Adasyn {
            manifest,
            modality,
            beta,
            k,
            seed,
            out,
        } => {
            let cfg = AdasynConfig::new(k, beta, seed).map_err(config)?;
            cmd_adasyn(&manifest, modality, &cfg, &out)
        }
        Command::Train {
            manifest,
            modality,
            spec,
            epochs,
            batch,
            lr,
            seed,
            out,
        } => {
            let cfg = TrainConfig {
                epochs,
                batch_size: batch,
                learning_rate: lr,
                seed,
                ..TrainConfig::default()
            };
            cmd_train(&manifest, modality, &spec, &cfg, &out)
        }
        Command::Predict { checkpoint, volume } => cmd_predict(&checkpoint, &volume),
        Command::Fuse {
            ensemble,
            labels,
            strategy,
            radius,
            step,
            seed: _,
            out,
        } => {
            let grid = GridSearchConfig::new(radius, step).map_err(config)?;
            cmd_fuse(&ensemble, &labels, strategy, &grid, &out)
        }
        Command::Dti { tensor, out } => cmd_dti(&tensor, &out),
        Command::Experiment { config } => cmd_experiment(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
