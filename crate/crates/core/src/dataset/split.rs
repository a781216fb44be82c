use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// Indices into the labelled collection, each list in shuffled order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split by class id. Each class is shuffled and cut into
/// `round(train * n)`, `round(val * n)` and the remainder.
pub fn stratified_split(
    labels: &[u32],
    n_classes: usize,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || [ratios.train, ratios.val, ratios.test].iter().any(|r| *r < 0.0) {
        return Err(DatasetError::Invalid(format!("split ratios {ratios:?}")));
    }
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        let slot = by_class
            .get_mut(l as usize)
            .ok_or_else(|| DatasetError::Invalid(format!("label {l} >= {n_classes} classes")))?;
        slot.push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitAssignment {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            return Err(DatasetError::EmptyClass(class as u32));
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((ratios.train * n as f64).round() as usize).min(n);
        let n_val = ((ratios.val * n as f64).round() as usize).min(n - n_train);
        out.train.extend_from_slice(&members[..n_train]);
        out.val.extend_from_slice(&members[n_train..n_train + n_val]);
        out.test.extend_from_slice(&members[n_train + n_val..]);
    }
    out.train.shuffle(&mut rng);
    out.val.shuffle(&mut rng);
    out.test.shuffle(&mut rng);
    Ok(out)
}

/// Consecutive batches of `batch_size`; the last one may be shorter.
pub fn into_batches<T: Clone>(items: &[T], batch_size: usize) -> Vec<Vec<T>> {
    assert!(batch_size > 0, "batch size must be positive");
    items.chunks(batch_size).map(<[T]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitBatches {
    pub train: Vec<Vec<usize>>,
    pub val: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

/// Stratified split followed by batching of each part.
///
/// Callers that balance classes do so on the train indices between
/// [`stratified_split`] and [`into_batches`]; this helper does not resample.
pub fn split_and_batch(
    labels: &[u32],
    n_classes: usize,
    ratios: &SplitRatios,
    batch_size: usize,
    seed: u64,
) -> Result<SplitBatches, DatasetError> {
    let split = stratified_split(labels, n_classes, ratios, seed)?;
    Ok(SplitBatches {
        train: into_batches(&split.train, batch_size),
        val: into_batches(&split.val, batch_size),
        test: into_batches(&split.test, batch_size),
    })
}
