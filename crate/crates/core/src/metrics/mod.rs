//! BLEU, auto-BLEU, edit-distance error rates and n-gram perplexity.

mod bleu;
mod edit;
mod lm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{format_units_line, PairRecord, UnitSequence, Vocabulary};

pub use bleu::{auto_bleu, bleu, corpus_bleu, ngram_counts, BleuStats};
pub use edit::{edit_distance, error_rate, EditOps};
pub use lm::NgramLM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Order of the reference n-gram model used for perplexity.
    pub lm_order: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { lm_order: 2 }
    }
}

/// Corpus-level scores for one generation run. Scores that are undefined for
/// the run (no sentence long enough, no non-empty hypothesis) are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub auto_bleu_1: Option<f64>,
    pub auto_bleu_2: Option<f64>,
    pub auto_bleu_3: Option<f64>,
    pub wer: f64,
    pub cer: f64,
    pub ppx: Option<f64>,
    pub n_samples: usize,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores `hypotheses` against the target side of `manifest`, row by row.
///
/// WER pools unit edit distances over the corpus; CER does the same over the
/// characters of the space-separated unit rendering. Perplexity is the mean
/// over non-empty hypotheses under an n-gram model trained on `lm_corpus`
/// over the full vocabulary.
pub fn evaluate_run(
    manifest: &[PairRecord],
    hypotheses: &[UnitSequence],
    lm_corpus: &[UnitSequence],
    vocab: &Vocabulary,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if manifest.len() != hypotheses.len() || manifest.is_empty() {
        return Err(Error::Alignment {
            hypotheses: hypotheses.len(),
            references: manifest.len(),
        });
    }
    for h in hypotheses {
        vocab.validate(h)?;
    }
    let pairs: Vec<(&[u32], &[u32])> = hypotheses
        .iter()
        .zip(manifest)
        .map(|(h, r)| (h.as_slice(), r.tgt.as_slice()))
        .collect();
    let b = corpus_bleu(&pairs, 4);

    let (mut unit_err, mut unit_len, mut char_err, mut char_len) = (0, 0, 0, 0);
    for (h, r) in &pairs {
        unit_err += edit_distance(r, h).distance;
        unit_len += r.len();
        let rc: Vec<char> = format_units_line(&UnitSequence::from(*r)).chars().collect();
        let hc: Vec<char> = format_units_line(&UnitSequence::from(*h)).chars().collect();
        char_err += edit_distance(&rc, &hc).distance;
        char_len += rc.len();
    }

    let auto = |n| mean(hypotheses.iter().filter_map(|h| auto_bleu(h, n)));
    let lm = NgramLM::train(cfg.lm_order, vocab.size() as usize, lm_corpus)?;
    let mut ppx = Vec::new();
    for h in hypotheses.iter().filter(|h| !h.is_empty()) {
        ppx.push(lm.perplexity(h)?);
    }
    Ok(MetricReport {
        bleu_1: b[0],
        bleu_2: b[1],
        bleu_3: b[2],
        bleu_4: b[3],
        auto_bleu_1: auto(1),
        auto_bleu_2: auto(2),
        auto_bleu_3: auto(3),
        wer: unit_err as f64 / unit_len.max(1) as f64,
        cer: char_err as f64 / char_len.max(1) as f64,
        ppx: mean(ppx.into_iter()),
        n_samples: hypotheses.len(),
    })
}
