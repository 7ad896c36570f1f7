use std::fmt::Write;
use std::path::Path;

use crate::datamodel::Modality;
use crate::eval::config::{DataSource, ExperimentConfig, NetworkChoice};
use crate::eval::experiment::{ExperimentError, ExperimentReport, Stage};
use crate::eval::MetricsReport;

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn header(cfg: &ExperimentConfig) -> String {
    let mut s = String::from("pdfusion experiment report\n\n");
    match &cfg.source {
        DataSource::Synthetic(sc) => {
            let (d, h, w) = sc.dims;
            let pairs: Vec<String> = Modality::ALL
                .iter()
                .zip(&sc.ambiguous)
                .map(|(m, (a, b))| format!("{m}:{a}/{b}"))
                .collect();
            let _ = writeln!(
                s,
                "data: synthetic per_class={},{},{} dims={d}x{h}x{w} noise_scale={} subject_sigma={} voxel_sigma={} pair_gap={} ambiguous={} seed={}",
                sc.per_class[0],
                sc.per_class[1],
                sc.per_class[2],
                sc.noise_scale,
                sc.subject_sigma,
                sc.voxel_sigma,
                sc.pair_gap,
                pairs.join(","),
                sc.seed
            );
        }
        DataSource::Manifest(p) => {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let _ = writeln!(s, "data: manifest {name}");
        }
    }
    let _ = writeln!(
        s,
        "split: train_fraction={} validation_fraction={} seed={}",
        cfg.split.train_fraction(),
        cfg.validation_fraction,
        cfg.split.seed()
    );
    let _ = writeln!(
        s,
        "adasyn: k={} beta={} seed={}",
        cfg.adasyn.k(),
        cfg.adasyn.beta(),
        cfg.adasyn.seed()
    );
    let network = match &cfg.network {
        NetworkChoice::Desk => "desk".to_string(),
        NetworkChoice::File(p) => p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let _ = writeln!(s, "network: {network}");
    let t = &cfg.train;
    let _ = writeln!(
        s,
        "train: epochs={} batch_size={} learning_rate={} beta1={} beta2={} epsilon={} seed={}",
        t.epochs, t.batch_size, t.learning_rate, t.beta1, t.beta2, t.epsilon, t.seed
    );
    let _ = writeln!(s, "fusion: radius={} step={}", cfg.grid.radius, cfg.grid.step);
    s
}

fn metrics_line(name: &str, m: &MetricsReport) -> String {
    format!(
        "{name:<24}{:>10}{:>11}{:>9}{:>9}\n",
        pct(m.accuracy),
        pct(m.precision),
        pct(m.recall),
        pct(m.f1)
    )
}

fn table_head(title: &str, first: &str) -> String {
    format!(
        "{title}\n{first:<24}{:>10}{:>11}{:>9}{:>9}\n",
        "accuracy", "precision", "recall", "f1"
    )
}

fn weights(values: &[f64]) -> String {
    values.iter().map(|w| format!("{w:.6}")).collect::<Vec<_>>().join(" ")
}

/// Plain-text report. Contains no timestamps or absolute paths.
pub fn render_text(r: &ExperimentReport) -> String {
    let mut s = header(&r.config);
    let _ = writeln!(s, "network spec: {}", r.spec.to_text().trim_end().replace('\n', "; "));
    let class_list = |c: &[usize; 3]| format!("{}/{}/{}", c[0], c[1], c[2]);
    let _ = writeln!(
        s,
        "subjects (HC/PD/SWEDD): fit {} validation {} test {}",
        class_list(&r.counts[0]),
        class_list(&r.counts[1]),
        class_list(&r.counts[2])
    );
    s.push('\n');
    for run in &r.runs {
        let last = run.history.last();
        let _ = writeln!(
            s,
            "{}: {} volumes + {} synthetic, final epoch loss {:.6} train accuracy {}",
            run.modality,
            run.original_rows,
            run.synthetic_rows,
            last.map_or(f64::NAN, |e| e.loss),
            pct(last.map_or(f64::NAN, |e| e.accuracy))
        );
    }
    let models = r.validation.models().join(" ");
    let _ = writeln!(s, "\nmodels: {models}");
    let _ = writeln!(s, "validation accuracy: {}", weights(&r.plan.accuracies));
    let _ = writeln!(s, "mra weights: {}", weights(r.plan.mra.values()));
    let _ = writeln!(s, "owaf weights: {}", weights(r.plan.owaf.values()));
    if let Some(search) = &r.plan.search {
        let offsets: Vec<String> = search.offsets.iter().map(|o| format!("{o:+}")).collect();
        let _ = writeln!(
            s,
            "owaf search: {} candidates, offsets (steps) {}, validation accuracy {} -> {}",
            search.candidates,
            offsets.join(" "),
            pct(search.initial_accuracy),
            pct(search.accuracy)
        );
    }

    s.push('\n');
    s.push_str(&table_head("Modalities (test, %)", "modality"));
    for row in &r.modality_rows {
        s.push_str(&metrics_line(&row.name, &row.metrics));
    }
    s.push('\n');
    s.push_str(&table_head("Fusion strategies (test, %)", "strategy"));
    for row in &r.strategy_rows {
        s.push_str(&metrics_line(row.strategy.title(), &row.metrics));
    }

    s.push_str("\ntest predictions (subject truth vote avg mra owaf)\n");
    for (j, id) in r.test.subjects().iter().enumerate() {
        let preds: Vec<&str> = r.strategy_rows.iter().map(|row| row.predictions[j].as_str()).collect();
        let _ = writeln!(s, "{id} {} {}", r.test_labels[j], preds.join(" "));
    }
    s
}

/// Machine-readable twin of the two tables.
pub fn render_csv(r: &ExperimentReport) -> String {
    let mut s = String::from("table,row,accuracy,precision,recall,f1\n");
    let line = |table: &str, name: &str, m: &MetricsReport| {
        format!(
            "{table},{name},{:.6},{:.6},{:.6},{:.6}\n",
            m.accuracy, m.precision, m.recall, m.f1
        )
    };
    for row in &r.modality_rows {
        s.push_str(&line("modalities", &row.name, &row.metrics));
    }
    for row in &r.strategy_rows {
        s.push_str(&line("strategies", row.strategy.title(), &row.metrics));
    }
    s
}

pub fn render_failure(cfg: &ExperimentConfig, err: &ExperimentError) -> String {
    format!("{}\nFAILED at stage {}: {}\n", header(cfg), err.stage, err.message)
}

/// `model,weight` CSV.
pub fn write_weights(path: &Path, models: &[String], values: &[f64]) -> Result<(), ExperimentError> {
    let mut s = String::from("model,weight\n");
    for (m, w) in models.iter().zip(values) {
        let _ = writeln!(s, "{m},{w:.6}");
    }
    std::fs::write(path, s).map_err(|e| ExperimentError {
        stage: Stage::Report,
        message: format!("{}: {e}", path.display()),
    })
}

/// Parses a `report.csv` back into `(table, row, accuracy)` triples.
pub fn parse_report_csv(text: &str) -> Vec<(String, String, f64)> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some((f.first()?.to_string(), f.get(1)?.to_string(), f.get(2)?.parse().ok()?))
        })
        .collect()
}
