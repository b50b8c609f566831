//! Seedable generators for translation, inpainting and continuation samples,
//! plus speaker-disjoint splitting and on-disk corpus building.

mod corpus;
mod source;
mod split;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{Unit, UnitSequence, Vocabulary};

pub use corpus::{build_corpus, generate_corpus, CorpusConfig, CorpusSizes, CorpusSummary, TaskKind, SPLITS};
pub use source::{SourceConfig, UtteranceSource};
pub use split::{split_speaker_disjoint, CorpusSplit, SplitRatios, UtteranceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskMeta {
    Translation,
    Inpainting { span_start: usize, span_len: usize },
    Continuation { ratio: f64, seed_len: usize },
    /// Clean utterance, `src == tgt`.
    Utterance,
    Denoise { span_start: usize, span_len: usize },
    /// A pair read back from a manifest, without task-specific fields.
    Pair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub id: String,
    pub src: UnitSequence,
    pub tgt: UnitSequence,
    pub meta: TaskMeta,
}

/// Fixed bijection over content units, optionally followed by swapping each
/// adjacent pair of positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cipher {
    mapping: Vec<Unit>,
    pub swap_pairs: bool,
    pub min_len: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CipherSpec {
    /// Seed of the random permutation; `None` means the identity mapping.
    pub permutation_seed: Option<u64>,
    pub swap_pairs: bool,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for CipherSpec {
    fn default() -> Self {
        Self {
            permutation_seed: Some(0),
            swap_pairs: false,
            min_len: 6,
            max_len: 12,
        }
    }
}

impl Cipher {
    pub fn new(mapping: Vec<Unit>, swap_pairs: bool, min_len: usize, max_len: usize) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m as usize >= n || std::mem::replace(&mut seen[m as usize], true) {
                return Err(Error::Config("cipher mapping must be a permutation".into()));
            }
        }
        if n < 2 {
            return Err(Error::Config("cipher needs at least two content units".into()));
        }
        if min_len == 0 || min_len > max_len {
            return Err(Error::Config(format!(
                "cipher length range [{min_len}, {max_len}] is empty or starts at zero"
            )));
        }
        Ok(Self {
            mapping,
            swap_pairs,
            min_len,
            max_len,
        })
    }

    pub fn from_spec(spec: &CipherSpec, vocab: &Vocabulary) -> Result<Self> {
        let n = vocab.content_size();
        let mut mapping: Vec<Unit> = (0..n).collect();
        if let Some(seed) = spec.permutation_seed {
            mapping.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Self::new(mapping, spec.swap_pairs, spec.min_len, spec.max_len)
    }

    pub fn content_size(&self) -> usize {
        self.mapping.len()
    }

    pub fn map_unit(&self, u: Unit) -> Unit {
        self.mapping[u as usize]
    }

    pub fn apply(&self, src: &[Unit]) -> UnitSequence {
        let mut out: Vec<Unit> = src.iter().map(|&u| self.map_unit(u)).collect();
        if self.swap_pairs {
            for pair in out.chunks_exact_mut(2) {
                pair.swap(0, 1);
            }
        }
        UnitSequence::new(out)
    }
}

/// Random content sequence with no equal adjacent units, paired with its cipher image.
pub fn gen_translation_pair<R: Rng + ?Sized>(rng: &mut R, cipher: &Cipher, id: String) -> TaskSample {
    let len = rng.random_range(cipher.min_len..=cipher.max_len);
    let k = cipher.content_size() as Unit;
    let mut src: Vec<Unit> = Vec::with_capacity(len);
    while src.len() < len {
        let u = rng.random_range(0..k);
        if src.last() != Some(&u) {
            src.push(u);
        }
    }
    let tgt = cipher.apply(&src);
    TaskSample {
        id,
        src: UnitSequence::new(src),
        tgt,
        meta: TaskMeta::Translation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionStyle {
    /// Each masked position becomes the MASK unit.
    Mask,
    /// Masked positions are removed from the source.
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintConfig {
    pub span_min_frac: f64,
    pub span_max_frac: f64,
    pub min_len: usize,
    pub style: CorruptionStyle,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            span_min_frac: 0.8 / 2.5,
            span_max_frac: 1.2 / 2.5,
            min_len: 10,
            style: CorruptionStyle::Mask,
        }
    }
}

impl InpaintConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.span_min_frac > 0.0
            && self.span_min_frac <= self.span_max_frac
            && self.span_max_frac < 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "inpainting span fractions [{}, {}] must satisfy 0 < min <= max < 1",
                self.span_min_frac, self.span_max_frac
            )));
        }
        Ok(())
    }

    /// Integer span lengths whose fraction of `n` lies in the configured range.
    pub fn span_bounds(&self, n: usize) -> Option<(usize, usize)> {
        let frac = |k: usize| k as f64 / n as f64;
        let mut lo = (self.span_min_frac * n as f64).floor() as usize;
        while frac(lo) < self.span_min_frac {
            lo += 1;
        }
        let mut hi = (self.span_max_frac * n as f64).ceil() as usize;
        while hi > 0 && frac(hi) > self.span_max_frac {
            hi -= 1;
        }
        (lo.max(1) <= hi && hi < n).then_some((lo.max(1), hi))
    }
}

/// Masks one contiguous span of `clean`. Returns `None` (skip) when the
/// utterance is shorter than `cfg.min_len` or too short to hold a span of the
/// configured relative size.
pub fn gen_inpainting_sample<R: Rng + ?Sized>(
    clean: &UnitSequence,
    rng: &mut R,
    cfg: &InpaintConfig,
    vocab: &Vocabulary,
    id: String,
) -> Option<TaskSample> {
    let n = clean.len();
    if n < cfg.min_len || n == 0 {
        return None;
    }
    let (lo, hi) = cfg.span_bounds(n)?;
    let span_len = rng.random_range(lo..=hi);
    let span_start = rng.random_range(0..=n - span_len);
    let src: UnitSequence = match cfg.style {
        CorruptionStyle::Mask => clean
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                if (span_start..span_start + span_len).contains(&i) {
                    vocab.mask()
                } else {
                    u
                }
            })
            .collect(),
        CorruptionStyle::Delete => clean[..span_start]
            .iter()
            .chain(&clean[span_start + span_len..])
            .copied()
            .collect(),
    };
    Some(TaskSample {
        id,
        src,
        tgt: clean.clone(),
        meta: TaskMeta::Inpainting {
            span_start,
            span_len,
        },
    })
}

/// Length of the seed segment: `round_half_up(r · T)` clamped to `[1, T − 1]`.
pub fn seed_length(ratio: f64, total: usize) -> usize {
    let raw = (ratio * total as f64 + 0.5).floor() as usize;
    raw.clamp(1, total - 1)
}

/// Splits an utterance into its seed segment and the continuation target.
/// Returns `Ok(None)` (skip) for utterances shorter than two units.
pub fn gen_continuation_sample(utterance: &UnitSequence, ratio: f64, id: String) -> Result<Option<TaskSample>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "conditional ratio {ratio} must lie strictly between 0 and 1"
        )));
    }
    let total = utterance.len();
    if total < 2 {
        return Ok(None);
    }
    let seed_len = seed_length(ratio, total);
    Ok(Some(TaskSample {
        id,
        src: UnitSequence::from(&utterance[..seed_len]),
        tgt: UnitSequence::from(&utterance[seed_len..]),
        meta: TaskMeta::Continuation { ratio, seed_len },
    }))
}
