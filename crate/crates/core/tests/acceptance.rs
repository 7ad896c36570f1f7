//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `PDFUSION_BLESS=1` to rewrite the golden files under `tests/golden`
//! from the end-to-end run instead of comparing against them.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdfusion::adasyn::{adasyn_plan, balance_multiclass, AdasynConfig, FeatureMatrix};
use pdfusion::cnn::{gradient_check, he_uniform_init, GradCheckOptions, LayerSpec, NetworkSpec};
use pdfusion::datamodel::{ClassLabel, ProbVector};
use pdfusion::dti::{eigenvalues_sym3, fractional_anisotropy, mean_diffusivity, EigenTriple, Sym3Tensor};
use pdfusion::eval::{metrics, run_experiment, ConfusionMatrix, DataSource, ExperimentConfig, SynthConfig};
use pdfusion::fusion::{fuse_class, mra_weights, owaf_search, EnsembleOutputs, FusionWeights, GridSearchConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn images(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let spec = NetworkSpec::desk_default();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for seed in 0..5u64 {
        let params = he_uniform_init(&spec, &mut ChaCha8Rng::seed_from_u64(100 + seed));
        let labels = [ClassLabel::ALL[seed as usize % 3], ClassLabel::ALL[(seed as usize + 1) % 3]];
        let opts = GradCheckOptions {
            per_tensor: Some(32),
            seed,
            ..Default::default()
        };
        let r = gradient_check(&spec, &params, &images(2 * spec.input_len(), seed), &labels, &opts)
            .map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        skipped += r.skipped;
    }
    check(worst < 1e-4, || format!("desk max relative error {worst:e}"))?;

    let dense = NetworkSpec::new(
        (1, 4, 4),
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 12 },
            LayerSpec::Dense { out_features: 3 },
            LayerSpec::Softmax,
        ],
        3,
    )
    .map_err(|e| e.to_string())?;
    let mut dense_worst = 0.0f64;
    for seed in 0..5u64 {
        let params = he_uniform_init(&dense, &mut ChaCha8Rng::seed_from_u64(seed));
        let labels = [ClassLabel::Hc, ClassLabel::Pd, ClassLabel::Swedd];
        let r = gradient_check(&dense, &params, &images(48, 50 + seed), &labels, &GradCheckOptions::default())
            .map_err(|e| e.to_string())?;
        dense_worst = dense_worst.max(r.max_rel_error);
    }
    check(dense_worst < 1e-6, || format!("dense max relative error {dense_worst:e}"))?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "desk {worst:.2e} over 5 seeds ({checked} entries, {skipped} skipped at kinks), dense {dense_worst:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn fa(a: f64, b: f64, c: f64) -> f64 {
    fractional_anisotropy(&EigenTriple::new(a, b, c))
}

fn dti() -> Outcome {
    check(fa(1.0, 1.0, 1.0) == 0.0, || format!("FA(1,1,1) = {}", fa(1.0, 1.0, 1.0)))?;
    check(fa(1.0, 0.0, 0.0) == 1.0, || format!("FA(1,0,0) = {}", fa(1.0, 0.0, 0.0)))?;
    let f = fa(2.0, 1.0, 1.0);
    check((f - (1.0f64 / 6.0).sqrt()).abs() <= 1e-9, || format!("FA(2,1,1) = {f}"))?;
    let md = mean_diffusivity(&Sym3Tensor::diagonal(1.0, 2.0, 3.0));
    check(md == 2.0, || format!("MD(diag(1,2,3)) = {md}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = Sym3Tensor::from_array(std::array::from_fn(|_| rng.gen_range(-5.0..5.0)));
        let e = eigenvalues_sym3(&t);
        let scale = 1.0 + t.frobenius_norm();
        for l in [e.l1, e.l2, e.l3] {
            worst = worst.max(t.characteristic(l).abs() / scale);
        }
        let trace_gap = (e.sum() - t.trace()).abs() / scale;
        check(trace_gap < 1e-12, || format!("eigenvalue sum off the trace by {trace_gap:e}"))?;
    }
    check(worst < 1e-7, || format!("|det(D - λI)| = {worst:e} x (1+|D|)"))?;
    Ok(format!("FA/MD identities exact, worst |det(D - λI)| {worst:.1e}·(1+‖D‖) over 1000 tensors"))
}

fn imbalanced(rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let cols = rng.gen_range(1..6);
    let majority = rng.gen_range(4..30);
    let mut counts = [0usize; 3];
    counts[rng.gen_range(0..3)] = majority;
    for c in counts.iter_mut() {
        if *c == 0 {
            *c = rng.gen_range(1..=majority);
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (code, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            rows.push((0..cols).map(|_| rng.gen_range(-3.0f32..3.0) + code as f32).collect());
            labels.push(ClassLabel::ALL[code]);
        }
    }
    FeatureMatrix::from_rows(rows, labels).unwrap()
}

fn adasyn() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut synthetic = 0;
    for case in 0..100u64 {
        let x = imbalanced(&mut rng);
        let cfg = AdasynConfig::new(rng.gen_range(1..8), 1.0, case).map_err(|e| e.to_string())?;
        let counts = x.class_counts();
        let majority = *counts.iter().max().unwrap();
        for label in ClassLabel::ALL {
            if counts[label.code()] < majority {
                let plan = adasyn_plan(&x, label, majority, &cfg).map_err(|e| e.to_string())?;
                let sum: usize = plan.counts.iter().sum();
                check(sum == plan.total, || format!("case {case}: ΣG_i = {sum}, G = {}", plan.total))?;
            }
        }
        let b = balance_multiclass(&x, &cfg).map_err(|e| e.to_string())?;
        check(b.matrix.class_counts() == [majority; 3], || {
            format!("case {case}: counts {:?}, majority {majority}", b.matrix.class_counts())
        })?;
        for (s, &(i, z)) in b.parents.iter().enumerate() {
            let row = b.original_rows + s;
            let label = b.matrix.labels()[row];
            check(x.labels()[i] == label && x.labels()[z] == label, || {
                format!("case {case}: row {row} parents ({i},{z}) not in class {label}")
            })?;
            for ((&v, &a), &c) in b.matrix.row(row).iter().zip(x.row(i)).zip(x.row(z)) {
                check(v >= a.min(c) && v <= a.max(c), || {
                    format!("case {case}: row {row} value {v} outside [{a}, {c}]")
                })?;
            }
        }
        synthetic += b.synthetic_rows();
    }
    Ok(format!("100 instances balanced exactly, {synthetic} synthetic rows on parent segments"))
}

fn mra() -> Outcome {
    let w = mra_weights(&[0.886, 0.842, 0.882, 0.8094]).map_err(|e| e.to_string())?;
    let expected = [0.39696, 0.20245, 0.29812, 0.10247];
    for (a, b) in w.values().iter().zip(expected) {
        check((a - b).abs() <= 1e-4, || format!("weights {:?}", w.values()))?;
    }
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 10_000,
            failure_persistence: None,
            ..PropConfig::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = proptest::collection::vec(0.0f64..=1.0, 2..8).prop_filter("positive sum", |a| a.iter().sum::<f64>() > 0.0);
    runner
        .run(&strategy, |acc| {
            let w = mra_weights(&acc).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let sum: f64 = w.values().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
            for i in 0..acc.len() {
                for j in 0..acc.len() {
                    if acc[i] > acc[j] {
                        prop_assert!(w.values()[i] >= w.values()[j], "{acc:?} -> {:?}", w.values());
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("reference accuracies -> {:.5?}; 10000 random vectors sum to 1 and keep order", w.values()))
}

fn random_ensemble(rng: &mut ChaCha8Rng, models: usize, subjects: usize) -> (EnsembleOutputs, Vec<ClassLabel>) {
    let labels: Vec<ClassLabel> = (0..subjects).map(|_| ClassLabel::ALL[rng.gen_range(0..3)]).collect();
    let probs = labels
        .iter()
        .map(|&l| {
            (0..models)
                .map(|_| {
                    let mut raw: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.01..1.0));
                    raw[l.code()] += rng.gen_range(0.0..0.8);
                    let s: f64 = raw.iter().sum();
                    ProbVector::new(raw.map(|v| v / s)).unwrap()
                })
                .collect()
        })
        .collect();
    let ens = EnsembleOutputs::new(
        (0..models).map(|i| format!("m{i}")).collect(),
        (0..subjects).map(|j| format!("s{j:03}")).collect(),
        probs,
    )
    .unwrap();
    (ens, labels)
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> FusionWeights {
    FusionWeights::new((0..n).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap()
}

/// Independent two-model enumeration: all offset pairs in lexicographic
/// order, best by (correct desc, clamped distance asc, earliest pair).
fn brute_force_pair(
    initial: &[f64; 2],
    ens: &EnsembleOutputs,
    labels: &[ClassLabel],
    radius: f64,
    step: f64,
) -> (i64, i64, Vec<f64>, usize) {
    let n = (radius / step + 1e-9).floor() as i64;
    let mut best: Option<(usize, f64, i64, i64, Vec<f64>)> = None;
    for a in -n..=n {
        for b in -n..=n {
            let raw = [
                (initial[0] + a as f64 * step).max(0.0),
                (initial[1] + b as f64 * step).max(0.0),
            ];
            let total = raw[0] + raw[1];
            if total <= 0.0 {
                continue;
            }
            let w = vec![raw[0] / total, raw[1] / total];
            let fw = FusionWeights::new(w.clone()).unwrap();
            let correct = (0..ens.len())
                .filter(|&j| fuse_class(&fw, ens.subject(j)).unwrap() == labels[j])
                .count();
            let dist = ((raw[0] - initial[0]).powi(2) + (raw[1] - initial[1]).powi(2)).sqrt();
            let better = match &best {
                None => true,
                Some((c, d, ..)) => correct > *c || (correct == *c && dist < *d),
            };
            if better {
                best = Some((correct, dist, a, b, w));
            }
        }
    }
    let (correct, _, a, b, w) = best.unwrap();
    (a, b, w, correct)
}

fn owaf() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let default_grid = GridSearchConfig::new(0.05, 0.01).map_err(|e| e.to_string())?;
    for run in 0..1000 {
        let models = rng.gen_range(2..4);
        let subjects = rng.gen_range(3..25);
        let (ens, labels) = random_ensemble(&mut rng, models, subjects);
        let initial = random_weights(&mut rng, models);
        let grid = if models == 2 { default_grid } else { GridSearchConfig::new(0.03, 0.01).unwrap() };
        let r = owaf_search(&initial, &ens, &labels, &grid).map_err(|e| e.to_string())?;
        check(r.accuracy >= r.initial_accuracy, || {
            format!("run {run}: accuracy {} below initial {}", r.accuracy, r.initial_accuracy)
        })?;
    }

    let pair_grid = GridSearchConfig::new(0.02, 0.01).map_err(|e| e.to_string())?;
    for run in 0..300 {
        let subjects = rng.gen_range(2..15);
        let (ens, labels) = random_ensemble(&mut rng, 2, subjects);
        let initial = random_weights(&mut rng, 2);
        let iv = [initial.values()[0], initial.values()[1]];
        let r = owaf_search(&initial, &ens, &labels, &pair_grid).map_err(|e| e.to_string())?;
        let (a, b, w, correct) = brute_force_pair(&iv, &ens, &labels, 0.02, 0.01);
        check(r.offsets == vec![a, b] && r.correct == correct, || {
            format!("run {run}: search {:?}/{} vs oracle [{a}, {b}]/{correct}", r.offsets, r.correct)
        })?;
        check(r.weights.values() == w.as_slice(), || {
            format!("run {run}: weights {:?} vs oracle {w:?}", r.weights.values())
        })?;
    }

    let (ens, labels) = random_ensemble(&mut rng, 4, 100);
    let initial = random_weights(&mut rng, 4);
    let start = Instant::now();
    let r = owaf_search(&initial, &ens, &labels, &default_grid).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(r.candidates == 14_641, || format!("{} candidates", r.candidates))?;
    check(elapsed < Duration::from_secs(10), || format!("11^4 grid took {elapsed:?}"))?;
    Ok(format!(
        "1000 searches never lose accuracy, 300 pair searches match the oracle, 11^4 x 100 subjects in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

const GOLDEN_FILES: [&str; 4] = ["report.csv", "weights_mra.csv", "weights_owaf.csv", "test_ensemble.csv"];

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig {
        out_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.source = DataSource::Synthetic(SynthConfig {
        per_class: [30; 3],
        dims: (16, 32, 32),
        seed: 1337,
        ..SynthConfig::default()
    });
    cfg.train.epochs = 50;
    let start = Instant::now();
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30 * 60), || format!("took {elapsed:?}"))?;

    let single = report.modality_rows.iter().filter(|r| r.modalities.len() == 1);
    let best_single = single.map(|r| r.metrics.accuracy).fold(0.0, f64::max);
    let strategy_acc = |i: usize| report.strategy_rows[i].metrics.accuracy;
    let (mra_acc, owaf_acc) = (strategy_acc(2), strategy_acc(3));
    let uniform = FusionWeights::uniform(report.test.models().len()).map_err(|e| e.to_string())?;
    let hits = (0..report.test.len())
        .filter(|&j| fuse_class(&uniform, report.test.subject(j)).unwrap() == report.test_labels[j])
        .count();
    let unweighted = hits as f64 / report.test.len() as f64;
    check(owaf_acc >= best_single, || format!("OWAF {owaf_acc} < best single modality {best_single}"))?;
    check(owaf_acc >= mra_acc && mra_acc >= unweighted, || {
        format!("OWAF {owaf_acc}, MRA {mra_acc}, unweighted {unweighted} out of order")
    })?;

    let golden = golden_dir();
    if std::env::var_os("PDFUSION_BLESS").is_some() {
        std::fs::create_dir_all(&golden).map_err(|e| e.to_string())?;
        for f in GOLDEN_FILES {
            std::fs::copy(dir.path().join(f), golden.join(f)).map_err(|e| format!("{f}: {e}"))?;
        }
    }
    for f in GOLDEN_FILES {
        let got = std::fs::read(dir.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let want = std::fs::read(golden.join(f)).map_err(|e| format!("golden {f}: {e}"))?;
        check(got == want, || format!("{f} differs from the golden file"))?;
    }
    Ok(format!(
        "{:.0}s; OWAF {owaf_acc:.4} >= best single {best_single:.4}; OWAF >= MRA {mra_acc:.4} >= unweighted {unweighted:.4}; golden files match",
        elapsed.as_secs_f64()
    ))
}

fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.source = DataSource::Synthetic(SynthConfig {
        per_class: [12, 10, 8],
        dims: (4, 16, 16),
        seed: 99,
        ..SynthConfig::default()
    });
    cfg.train.epochs = 4;
    cfg.train.learning_rate = 1e-3;
    cfg
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    run_experiment(&small_config(a.path())).map_err(|e| e.to_string())?;
    run_experiment(&small_config(b.path())).map_err(|e| e.to_string())?;
    let mut files = vec![
        "report.txt".to_string(),
        "report.csv".to_string(),
        "validation_ensemble.csv".to_string(),
        "test_ensemble.csv".to_string(),
        "weights_mra.csv".to_string(),
        "weights_owaf.csv".to_string(),
    ];
    for m in ["gm", "wm", "fa", "md"] {
        files.push(format!("checkpoints/{m}.cnn1"));
        files.push(format!("checkpoints/{m}.cnn1.spec"));
    }
    for f in &files {
        let x = std::fs::read(a.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(x == y, || format!("{f} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical across two runs", files.len()))
}

fn metrics_oracle() -> Outcome {
    let m = metrics(&ConfusionMatrix::from_counts([[8, 2, 0], [1, 9, 0], [0, 0, 10]]));
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    check(close(m.accuracy, 0.9), || format!("accuracy {}", m.accuracy))?;
    let precision = [8.0 / 9.0, 9.0 / 11.0, 1.0];
    let recall = [0.8, 0.9, 1.0];
    for k in 0..3 {
        let c = m.per_class[k];
        check(close(c.precision, precision[k]) && close(c.recall, recall[k]), || {
            format!("class {k}: precision {} recall {}", c.precision, c.recall)
        })?;
        let f1 = 2.0 * precision[k] * recall[k] / (precision[k] + recall[k]);
        check(close(c.f1, f1), || format!("class {k}: f1 {}", c.f1))?;
    }
    check(close(m.precision, precision.iter().sum::<f64>() / 3.0), || format!("macro precision {}", m.precision))?;
    check(close(m.recall, 0.9), || format!("macro recall {}", m.recall))?;

    let d = metrics(&ConfusionMatrix::from_counts([[3, 0, 0], [0, 5, 0], [0, 0, 7]]));
    let all = [d.accuracy, d.precision, d.recall, d.f1];
    check(all.iter().all(|&v| v == 1.0) && d.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0), || {
        format!("diagonal matrix gave {all:?}")
    })?;
    Ok("hand-computed example matches to 1e-12; diagonal matrix gives all ones".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 gradient check", gradients),
        ("2 FA/MD suite", dti),
        ("3 ADASYN", adasyn),
        ("4 MRA", mra),
        ("5 OWAF", owaf),
        ("6 end-to-end benchmark", end_to_end),
        ("7 determinism", determinism),
        ("8 metrics oracle", metrics_oracle),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS [{name}] {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{name}] {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
