use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlameError, Result};

use super::record::Record;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// train : val : test.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            ratios: [8.0, 1.0, 1.0],
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Record>,
    pub val: Vec<Record>,
    pub test: Vec<Record>,
}

/// Subject-disjoint split. Subjects are shuffled by the seed, then the two
/// cut points are placed where the cumulative record count comes closest to
/// the target fractions; no subject is ever divided.
pub fn split_cross_subject(records: &[Record], spec: &SplitSpec) -> Result<Split> {
    if records.is_empty() {
        return Err(FlameError::Config("cannot split an empty dataset".into()));
    }
    if spec.ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0))
        || spec.ratios.iter().sum::<f64>() <= 0.0
    {
        return Err(FlameError::Config(format!(
            "invalid split ratios {:?}",
            spec.ratios
        )));
    }
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_subject.entry(r.subject_id.as_str()).or_default().push(i);
    }
    let mut subjects: Vec<&str> = by_subject.keys().copied().collect();
    if subjects.len() < 10 {
        log::warn!(
            "only {} subjects; cross-subject split will be coarse",
            subjects.len()
        );
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let s = subjects.len();
    let mut cum = vec![0usize];
    for sub in &subjects {
        cum.push(cum.last().unwrap() + by_subject[sub].len());
    }
    let total = records.len() as f64;
    let rs: f64 = spec.ratios.iter().sum();
    let t1 = total * spec.ratios[0] / rs;
    let t2 = total * (spec.ratios[0] + spec.ratios[1]) / rs;
    // Keep at least one subject per non-empty share when there are enough.
    let lo1 = usize::from(spec.ratios[0] > 0.0 && s >= 1);
    let hi1 = s
        .saturating_sub(usize::from(spec.ratios[1] > 0.0) + usize::from(spec.ratios[2] > 0.0))
        .max(lo1);
    let closest = |lo: usize, hi: usize, target: f64| {
        (lo..=hi)
            .min_by(|&a, &b| {
                let da = (cum[a] as f64 - target).abs();
                let db = (cum[b] as f64 - target).abs();
                da.partial_cmp(&db).expect("finite")
            })
            .unwrap_or(lo)
    };
    let k1 = closest(lo1.min(s), hi1.min(s), t1);
    let lo2 = (k1 + usize::from(spec.ratios[1] > 0.0)).min(s);
    let hi2 = s.saturating_sub(usize::from(spec.ratios[2] > 0.0)).max(lo2);
    let k2 = closest(lo2, hi2.min(s), t2);
    let gather = |range: std::ops::Range<usize>| {
        let mut idx: Vec<usize> = subjects[range]
            .iter()
            .flat_map(|s| by_subject[s].iter().copied())
            .collect();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| records[i].clone())
            .collect::<Vec<_>>()
    };
    Ok(Split {
        train: gather(0..k1),
        val: gather(k1..k2),
        test: gather(k2..s),
    })
}
