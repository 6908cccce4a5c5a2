//! Seeded undersampling and train/validation splitting.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HouseholdRecord, PreprocessError};

/// Anything carrying a binary label.
pub trait Labeled {
    fn label(&self) -> Option<u8>;
}

impl Labeled for HouseholdRecord {
    fn label(&self) -> Option<u8> {
        self.poverty_label
    }
}

impl<T: Labeled> Labeled for &T {
    fn label(&self) -> Option<u8> {
        (**self).label()
    }
}

/// Keeps every minority-class item plus an equal-sized seeded random subset
/// of the majority class. Input order is preserved.
pub fn balance_classes<T: Labeled + Clone>(records: &[T], seed: u64) -> Result<Vec<T>, PreprocessError> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        match r.label() {
            Some(l @ (0 | 1)) => by_class[l as usize].push(i),
            other => return Err(PreprocessError::Unlabeled { index: i, label: other }),
        }
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(PreprocessError::EmptyClass {
            negatives: by_class[0].len(),
            positives: by_class[1].len(),
        });
    }
    let (minority, majority) = if by_class[1].len() <= by_class[0].len() {
        (&by_class[1], &by_class[0])
    } else {
        (&by_class[0], &by_class[1])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; records.len()];
    for &i in minority {
        keep[i] = true;
    }
    for j in index::sample(&mut rng, majority.len(), minority.len()) {
        keep[majority[j]] = true;
    }
    Ok(records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyField {
    PovertyLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratify_on: Option<StratifyField>,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train_fraction: 0.8,
            seed,
            stratify_on: None,
        }
    }

    pub fn stratified(seed: u64) -> Self {
        Self {
            stratify_on: Some(StratifyField::PovertyLabel),
            ..Self::new(seed)
        }
    }

    /// `floor((1 - train_fraction) * n)`.
    pub fn validation_size(&self, n: usize) -> usize {
        // The epsilon absorbs representation error, e.g. (1 - 0.8) * 450.
        ((1.0 - self.train_fraction) * n as f64 + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitAssignment {
    Train,
    Valid,
}

/// Seeded assignment of each of `n` items to train or validation.
pub fn split_assignments<T: Labeled>(records: &[T], spec: &SplitSpec) -> Result<Vec<SplitAssignment>, PreprocessError> {
    let n = records.len();
    if n < 2 {
        return Err(PreprocessError::TooFew(n));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(PreprocessError::Split(format!(
            "train_fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let n_valid = spec.validation_size(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = vec![SplitAssignment::Train; n];
    match spec.stratify_on {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for &i in &order[..n_valid] {
                out[i] = SplitAssignment::Valid;
            }
        }
        Some(StratifyField::PovertyLabel) => {
            let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (i, r) in records.iter().enumerate() {
                match r.label() {
                    Some(l @ (0 | 1)) => groups[l as usize].push(i),
                    other => return Err(PreprocessError::Unlabeled { index: i, label: other }),
                }
            }
            // Largest-remainder allocation keeps the total at n_valid.
            let exact: Vec<f64> = groups
                .iter()
                .map(|g| g.len() as f64 * n_valid as f64 / n as f64)
                .collect();
            let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
            let mut rest = n_valid - quota.iter().sum::<usize>();
            let mut by_remainder = [0usize, 1];
            by_remainder.sort_by(|&a, &b| (exact[b] - quota[b] as f64).total_cmp(&(exact[a] - quota[a] as f64)));
            for g in by_remainder {
                if rest > 0 && quota[g] < groups[g].len() {
                    quota[g] += 1;
                    rest -= 1;
                }
            }
            for (g, members) in groups.iter_mut().enumerate() {
                members.shuffle(&mut rng);
                for &i in &members[..quota[g]] {
                    out[i] = SplitAssignment::Valid;
                }
            }
        }
    }
    Ok(out)
}

/// Splits `records` into (train, valid), preserving input order within each.
pub fn split_dataset<T: Labeled + Clone>(records: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>), PreprocessError> {
    let assignment = split_assignments(records, spec)?;
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (r, a) in records.iter().zip(assignment) {
        match a {
            SplitAssignment::Train => train.push(r.clone()),
            SplitAssignment::Valid => valid.push(r.clone()),
        }
    }
    Ok((train, valid))
}
