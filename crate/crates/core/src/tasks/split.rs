use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::UnitSequence;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub speaker: String,
    pub id: String,
    pub units: UnitSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.9,
            valid: 0.05,
            test: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<UtteranceRecord>,
    pub valid: Vec<UtteranceRecord>,
    pub test: Vec<UtteranceRecord>,
}

impl CorpusSplit {
    pub fn parts(&self) -> [&[UtteranceRecord]; 3] {
        [&self.train, &self.valid, &self.test]
    }
}

/// Assigns whole speakers to train/valid/test. Speakers are shuffled; the two
/// splits with the smallest ratios are seeded with the two smallest speakers
/// (so neither is empty), then every remaining speaker, in shuffled order, goes
/// to the split furthest below its target utterance count.
pub fn split_speaker_disjoint<R: Rng + ?Sized>(
    records: &[UtteranceRecord],
    rng: &mut R,
    ratios: SplitRatios,
) -> Result<CorpusSplit> {
    let r = [ratios.train, ratios.valid, ratios.test];
    if r.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Split(format!("ratios must be positive and finite, got {r:?}")));
    }
    let mut by_speaker: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for rec in records {
        by_speaker.entry(&rec.speaker).or_default().push(rec);
    }
    if by_speaker.len() < 3 {
        return Err(Error::Split(format!(
            "need at least 3 distinct speakers, found {}",
            by_speaker.len()
        )));
    }
    let mut speakers: Vec<Vec<&UtteranceRecord>> = by_speaker.into_values().collect();
    speakers.shuffle(rng);

    // Splits by ascending ratio; ties keep train/valid/test order reversed so
    // train is never seeded on equal ratios.
    let mut by_ratio = [0usize, 1, 2];
    by_ratio.sort_by(|&a, &b| r[a].total_cmp(&r[b]).then(b.cmp(&a)));
    // Shuffled positions of the two smallest speakers (ties broken by shuffle).
    let mut order: Vec<usize> = (0..speakers.len()).collect();
    order.sort_by_key(|&i| speakers[i].len());
    let seeds = [(order[0], by_ratio[0]), (order[1], by_ratio[1])];

    let total_ratio: f64 = r.iter().sum();
    let total = records.len() as f64;
    let targets: Vec<f64> = r.iter().map(|x| x / total_ratio * total).collect();
    let mut counts = [0usize; 3];
    let mut splits: [Vec<UtteranceRecord>; 3] = Default::default();

    for &(i, dest) in &seeds {
        counts[dest] += speakers[i].len();
    }
    for (i, group) in speakers.into_iter().enumerate() {
        let dest = match seeds.iter().find(|&&(s, _)| s == i) {
            Some(&(_, dest)) => dest,
            None => {
                let dest = (0..3)
                    .max_by(|&a, &b| {
                        let da = targets[a] - counts[a] as f64;
                        let db = targets[b] - counts[b] as f64;
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                counts[dest] += group.len();
                dest
            }
        };
        splits[dest].extend(group.into_iter().cloned());
    }
    let [train, valid, test] = splits;
    Ok(CorpusSplit { train, valid, test })
}
