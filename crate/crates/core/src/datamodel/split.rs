use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassLabel, DataError, Dataset, Result, Subject, NUM_CLASSES};

/// Fractional comparisons closer than this count as ties.
const FRACTION_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    train_fraction: f64,
    seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DataError::InvalidFraction(train_fraction));
        }
        Ok(Self {
            train_fraction,
            seed,
        })
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Per-class training counts: floors of `n_c·f`, then the shortfall to
/// `round(f·total)` handed out by largest fractional part (ties: larger class,
/// then lower label code).
pub fn stratified_train_counts(counts: &[usize; NUM_CLASSES], fraction: f64) -> [usize; NUM_CLASSES] {
    let total: usize = counts.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let quotas = counts.map(|n| n as f64 * fraction);
    let mut train = quotas.map(|q| (q + FRACTION_TIE_EPS).floor() as usize);
    let key: [i64; NUM_CLASSES] =
        std::array::from_fn(|c| ((quotas[c] - train[c] as f64) / FRACTION_TIE_EPS).round() as i64);

    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| {
        key[b]
            .cmp(&key[a])
            .then(counts[b].cmp(&counts[a]))
            .then(a.cmp(&b))
    });
    let assigned: usize = train.iter().sum();
    for &c in order.iter().cycle().take(target.saturating_sub(assigned)) {
        train[c] += 1;
    }
    train
}

/// Seeded stratified split. Input order does not matter: subjects are already
/// in canonical order and each class is shuffled from that order.
pub fn split_train_test(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let counts = dataset.class_counts();
    for label in ClassLabel::ALL {
        if counts[label.code()] < 2 {
            return Err(DataError::ClassTooSmall {
                label,
                count: counts[label.code()],
            });
        }
    }
    let train_counts = stratified_train_counts(&counts, spec.train_fraction);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train: Vec<Subject> = Vec::new();
    let mut test: Vec<Subject> = Vec::new();
    for label in ClassLabel::ALL {
        let mut members: Vec<&Subject> = dataset
            .subjects()
            .iter()
            .filter(|s| s.label() == label)
            .collect();
        members.shuffle(&mut rng);
        let (tr, te) = members.split_at(train_counts[label.code()]);
        train.extend(tr.iter().map(|s| (*s).clone()));
        test.extend(te.iter().map(|s| (*s).clone()));
    }
    let prov = dataset.provenance();
    Ok((
        Dataset::new(train, format!("{prov}/train"))?,
        Dataset::new(test, format!("{prov}/test"))?,
    ))
}
