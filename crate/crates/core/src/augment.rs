//! Trial-level Gaussian augmentation: per object and context, each feature
//! bin is resampled from a normal distribution fitted to the real trials.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Provenance, SensorimotorContext, TrialRecord};
use crate::error::{Error, Result};

/// Default number of augmented trials per object.
pub const DEFAULT_AUGMENT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub mean: Vec<f64>,
    /// Population standard deviation (divides by n).
    pub std: Vec<f64>,
    pub object: String,
    pub context: SensorimotorContext,
    pub source_trials: usize,
    /// One past the largest trial index seen; augmented trials start here.
    pub next_trial: usize,
}

pub fn fit_bin_stats(trials: &[&TrialRecord]) -> Result<BinStats> {
    let first = trials.first().ok_or(Error::EmptyInput("no trials to fit bin statistics"))?;
    for t in trials {
        if t.object != first.object || t.context != first.context {
            return Err(Error::MixedContext(format!(
                "{} in {} vs {} in {}",
                first.object, first.context, t.object, t.context
            )));
        }
        if t.provenance != Provenance::Real {
            return Err(Error::MixedContext(format!(
                "trial {} of {} is already augmented",
                t.trial, t.object
            )));
        }
    }
    let dim = first.feature.len();
    let n = trials.len() as f64;
    let mut mean = vec![0.0; dim];
    for t in trials {
        for (m, v) in mean.iter_mut().zip(&t.feature) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for t in trials {
        for ((s, v), m) in var.iter_mut().zip(&t.feature).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(BinStats {
        mean,
        std,
        object: first.object.clone(),
        context: first.context.clone(),
        source_trials: trials.len(),
        next_trial: trials.iter().map(|t| t.trial + 1).max().unwrap_or(0),
    })
}

/// Draws `k` augmented trials, each bin independently from
/// `Normal(mean_j, std_j)`. Deterministic in `seed`.
pub fn sample_augmented(stats: &BinStats, k: usize, seed: u64) -> Vec<TrialRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists: Vec<Normal<f64>> = stats
        .mean
        .iter()
        .zip(&stats.std)
        .map(|(&m, &s)| Normal::new(m, s).expect("std is finite and non-negative"))
        .collect();
    (0..k)
        .map(|i| TrialRecord {
            object: stats.object.clone(),
            context: stats.context.clone(),
            trial: stats.next_trial + i,
            feature: dists.iter().map(|d| d.sample(&mut rng)).collect(),
            provenance: Provenance::Augmented,
        })
        .collect()
}

/// Mixes an object id and context into a base seed so that objects can be
/// augmented independently and in any order.
pub fn object_seed(seed: u64, object: &str, context: &SensorimotorContext) -> u64 {
    // FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let key = format!("{object}\u{1f}{context}");
    for b in seed.to_le_bytes().iter().chain(key.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Groups real trials by (object, context) and returns the real trials
/// followed by `k` augmented trials per group.
pub fn augment_trials(trials: &[&TrialRecord], k: usize, seed: u64) -> Result<Vec<TrialRecord>> {
    let mut groups: std::collections::BTreeMap<(&str, &SensorimotorContext), Vec<&TrialRecord>> =
        std::collections::BTreeMap::new();
    for t in trials.iter().filter(|t| t.provenance == Provenance::Real) {
        groups.entry((t.object.as_str(), &t.context)).or_default().push(t);
    }
    let mut out: Vec<TrialRecord> = trials
        .iter()
        .filter(|t| t.provenance == Provenance::Real)
        .map(|t| (*t).clone())
        .collect();
    for ((object, context), group) in groups {
        let stats = fit_bin_stats(&group)?;
        out.extend(sample_augmented(&stats, k, object_seed(seed, object, context)));
    }
    Ok(out)
}
