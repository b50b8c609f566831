use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::split::UtteranceRecord;
use crate::error::{Error, Result};
use crate::units::{dedup, Unit, UnitSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Length range after condensing repeated units.
    pub min_len: usize,
    pub max_len: usize,
    /// Likely successors per unit in the transition table.
    pub branching: usize,
    /// Probability mass spread uniformly over all other units.
    pub smoothing: f64,
    /// Upper bound on frames per unit before condensing.
    pub max_duration: usize,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utterances_per_speaker: 50,
            min_len: 10,
            max_len: 24,
            branching: 4,
            smoothing: 0.1,
            max_duration: 4,
        }
    }
}

/// First-order Markov source of frame-level units standing in for quantized
/// speech features. Each unit lasts a few frames; condensing repeated frames
/// yields the utterance.
#[derive(Debug, Clone)]
pub struct UtteranceSource {
    cfg: SourceConfig,
    content_size: usize,
    /// Per unit: cumulative distribution over successors (never itself).
    successors: Vec<Vec<(Unit, f64)>>,
}

impl UtteranceSource {
    pub fn new<R: Rng + ?Sized>(content_size: usize, cfg: SourceConfig, rng: &mut R) -> Result<Self> {
        if content_size < 2 {
            return Err(Error::Config("source needs at least two content units".into()));
        }
        if cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.max_duration == 0 {
            return Err(Error::Config(format!(
                "source length range [{}, {}] / max_duration {} is invalid",
                cfg.min_len, cfg.max_len, cfg.max_duration
            )));
        }
        if !(0.0..=1.0).contains(&cfg.smoothing) {
            return Err(Error::Config("source.smoothing must lie in [0, 1]".into()));
        }
        let branching = cfg.branching.clamp(1, content_size - 1);
        let successors = (0..content_size)
            .map(|u| {
                let mut weights = vec![cfg.smoothing / (content_size - 1) as f64; content_size];
                weights[u] = 0.0;
                let picks = sample(rng, content_size - 1, branching);
                let raw: Vec<f64> = (0..branching).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = raw.iter().sum();
                for (p, w) in picks.iter().zip(&raw) {
                    let v = if p >= u { p + 1 } else { p };
                    weights[v] += (1.0 - cfg.smoothing) * w / total;
                }
                let mut acc = 0.0;
                weights
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(v, &w)| {
                        acc += w;
                        (v as Unit, acc)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            cfg,
            content_size,
            successors,
        })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.cfg
    }

    fn next_unit<R: Rng + ?Sized>(&self, prev: Option<Unit>, rng: &mut R) -> Unit {
        match prev {
            None => rng.random_range(0..self.content_size as Unit),
            Some(p) => {
                let table = &self.successors[p as usize];
                let total = table.last().map_or(1.0, |&(_, c)| c);
                let x = rng.random_range(0.0..total);
                table
                    .iter()
                    .find(|&&(_, c)| x < c)
                    .map_or(table.last().unwrap().0, |&(v, _)| v)
            }
        }
    }

    /// Frame-level units: every unit repeated for `1..=max_duration` frames.
    pub fn frames<R: Rng + ?Sized>(&self, speaker: usize, rng: &mut R) -> UnitSequence {
        let len = rng.random_range(self.cfg.min_len..=self.cfg.max_len);
        let max_dur = 1 + speaker % self.cfg.max_duration;
        let mut frames = Vec::new();
        let mut prev = None;
        for _ in 0..len {
            let u = self.next_unit(prev, rng);
            let dur = rng.random_range(1..=max_dur);
            frames.extend(std::iter::repeat_n(u, dur));
            prev = Some(u);
        }
        UnitSequence::new(frames)
    }

    pub fn utterance<R: Rng + ?Sized>(&self, speaker: usize, rng: &mut R) -> UnitSequence {
        dedup(&self.frames(speaker, rng))
    }

    /// `n_speakers × utterances_per_speaker` condensed utterances.
    pub fn records<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<UtteranceRecord> {
        let mut out = Vec::with_capacity(self.cfg.n_speakers * self.cfg.utterances_per_speaker);
        for s in 0..self.cfg.n_speakers {
            for i in 0..self.cfg.utterances_per_speaker {
                out.push(UtteranceRecord {
                    speaker: format!("spk{s:03}"),
                    id: format!("spk{s:03}_{i:05}"),
                    units: self.utterance(s, rng),
                });
            }
        }
        out
    }
}
