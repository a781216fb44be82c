//! Synthetic minority over-sampling in feature space.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteSpec {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteSpec {
    fn default() -> Self {
        SmoteSpec {
            k_neighbors: 5,
            seed: 0,
        }
    }
}

/// Where a resampled point came from. Indices refer to the input slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "lowercase")]
pub enum Provenance {
    Original { index: usize },
    Smote { base: usize, neighbor: usize, u: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutput {
    /// Originals in input order, then synthetic points.
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub provenance: Vec<Provenance>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k` nearest same-class neighbours of each member (ties by index).
fn neighbours(samples: &[Vec<f64>], members: &[usize], k: usize) -> Vec<Vec<usize>> {
    members
        .iter()
        .map(|&i| {
            let mut d: Vec<(f64, usize)> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (sq_dist(&samples[i], &samples[j]), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Over-samples every class up to the majority count. Each synthetic point is
/// `x_base + u * (x_neighbor - x_base)` with `u ~ U[0, 1)` and the neighbour
/// one of the base's `k` nearest same-class points. Bases cycle through the
/// class members in input order.
pub fn smote_resample(samples: &[Vec<f64>], labels: &[u32], spec: &SmoteSpec) -> Result<SmoteOutput, DatasetError> {
    if samples.len() != labels.len() {
        return Err(DatasetError::Invalid(format!(
            "{} samples for {} labels",
            samples.len(),
            labels.len()
        )));
    }
    if spec.k_neighbors < 1 {
        return Err(DatasetError::Invalid("k_neighbors must be >= 1".into()));
    }
    let mut classes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    let target = classes.values().map(Vec::len).max().unwrap_or(0);

    let mut out = SmoteOutput {
        samples: samples.to_vec(),
        labels: labels.to_vec(),
        provenance: (0..samples.len()).map(|index| Provenance::Original { index }).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for (&class, members) in &classes {
        let needed = target - members.len();
        if needed == 0 {
            continue;
        }
        if members.len() <= spec.k_neighbors {
            return Err(DatasetError::ClassTooSmall {
                class,
                count: members.len(),
                k: spec.k_neighbors,
            });
        }
        let nn = neighbours(samples, members, spec.k_neighbors);
        for s in 0..needed {
            let slot = s % members.len();
            let base = members[slot];
            let neighbor = nn[slot][rng.random_range(0..nn[slot].len())];
            let u: f64 = rng.random();
            let (xb, xn) = (&samples[base], &samples[neighbor]);
            out.samples
                .push(xb.iter().zip(xn).map(|(b, n)| b + u * (n - b)).collect());
            out.labels.push(class);
            out.provenance.push(Provenance::Smote { base, neighbor, u });
        }
    }
    Ok(out)
}
