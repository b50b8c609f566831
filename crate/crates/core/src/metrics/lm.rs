use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::units::Unit;

/// History padding symbol; lies outside every vocabulary.
const BOS: Unit = Unit::MAX;

/// Add-one smoothed n-gram model over the closed vocabulary `0..vocab_size`.
/// Histories at the start of a sequence are padded with a begin marker; no
/// end marker is predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLM {
    order: usize,
    vocab_size: usize,
    /// `history ++ [next]` → count.
    ngrams: HashMap<Vec<Unit>, usize>,
    /// `history` → number of predictions made from it.
    histories: HashMap<Vec<Unit>, usize>,
    tokens: usize,
}

impl NgramLM {
    pub fn train<S: AsRef<[Unit]>>(order: usize, vocab_size: usize, corpus: &[S]) -> Result<Self> {
        if order == 0 || vocab_size == 0 {
            return Err(Error::Config(format!(
                "n-gram order ({order}) and vocabulary size ({vocab_size}) must be positive"
            )));
        }
        let mut lm = Self {
            order,
            vocab_size,
            ngrams: HashMap::new(),
            histories: HashMap::new(),
            tokens: 0,
        };
        for seq in corpus {
            let seq = seq.as_ref();
            lm.check(seq)?;
            for t in 0..seq.len() {
                let mut gram = lm.history(seq, t);
                *lm.histories.entry(gram.clone()).or_insert(0) += 1;
                gram.push(seq[t]);
                *lm.ngrams.entry(gram).or_insert(0) += 1;
                lm.tokens += 1;
            }
        }
        Ok(lm)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of training tokens.
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    fn check(&self, seq: &[Unit]) -> Result<()> {
        match seq.iter().find(|&&u| u as usize >= self.vocab_size) {
            Some(&unit) => Err(Error::Vocabulary {
                unit,
                vocab_size: self.vocab_size as u32,
            }),
            None => Ok(()),
        }
    }

    /// The `order − 1` units before position `t`, padded on the left.
    fn history(&self, seq: &[Unit], t: usize) -> Vec<Unit> {
        let n = self.order - 1;
        (0..n)
            .map(|k| {
                let back = n - k;
                if t >= back {
                    seq[t - back]
                } else {
                    BOS
                }
            })
            .collect()
    }

    /// `P(next | history)` where `history` has exactly `order − 1` entries.
    pub fn prob(&self, history: &[Unit], next: Unit) -> f64 {
        let mut gram = history.to_vec();
        let h = self.histories.get(history).copied().unwrap_or(0);
        gram.push(next);
        let c = self.ngrams.get(&gram).copied().unwrap_or(0);
        (c + 1) as f64 / (h + self.vocab_size) as f64
    }

    /// Conditional probability of `seq[t]` given its padded history.
    pub fn prob_at(&self, seq: &[Unit], t: usize) -> f64 {
        self.prob(&self.history(seq, t), seq[t])
    }

    /// Sum of natural-log probabilities of every position of `seq`.
    pub fn log_prob(&self, seq: &[Unit]) -> Result<f64> {
        self.check(seq)?;
        Ok((0..seq.len()).map(|t| self.prob_at(seq, t).ln()).sum())
    }

    /// `exp(−mean log P)` over the units of `seq`.
    pub fn perplexity(&self, seq: &[Unit]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::Contract("perplexity of an empty sequence is undefined".into()));
        }
        Ok((-self.log_prob(seq)? / seq.len() as f64).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unigram_with_no_data_is_uniform() {
        let lm = NgramLM::train::<Vec<Unit>>(1, 7, &[]).unwrap();
        assert!((lm.perplexity(&[0, 3, 6, 6]).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_symbol_gives_low_perplexity() {
        let corpus = vec![vec![2; 1000]];
        let lm = NgramLM::train(1, 3, &corpus).unwrap();
        let ppx = lm.perplexity(&[2, 2, 2]).unwrap();
        assert!(ppx < 1.01 && ppx >= 1.0, "{ppx}");
    }

    #[test]
    fn bigram_hand_computed() {
        // Corpus [0 1 2], [0 1]: histories BOS×2, 0×2, 1×1.
        let lm = NgramLM::train(2, 3, &[vec![0, 1, 2], vec![0, 1]]).unwrap();
        // P(0|BOS) = (2+1)/(2+3), P(1|0) = (2+1)/(2+3), P(0|1) = (0+1)/(1+3).
        let expected = (3.0f64 / 5.0) * (3.0 / 5.0) * (1.0 / 4.0);
        assert!((lm.log_prob(&[0, 1, 0]).unwrap() - expected.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_vocabulary() {
        assert!(NgramLM::train(2, 3, &[vec![3]]).is_err());
        let lm = NgramLM::train(2, 3, &[vec![1]]).unwrap();
        assert!(lm.perplexity(&[5]).is_err());
        assert!(lm.perplexity(&[]).is_err());
    }

    proptest! {
        #[test]
        fn conditionals_sum_to_one(
            corpus in prop::collection::vec(prop::collection::vec(0u32..4, 0..10), 0..6),
            order in 1usize..4,
            history in prop::collection::vec(0u32..4, 3),
        ) {
            let lm = NgramLM::train(order, 4, &corpus).unwrap();
            let h = &history[..order - 1];
            let total: f64 = (0..4).map(|u| lm.prob(h, u)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn perplexity_is_bounded(
            corpus in prop::collection::vec(prop::collection::vec(0u32..5, 1..10), 1..6),
            seq in prop::collection::vec(0u32..5, 1..10),
            order in 1usize..4,
        ) {
            let lm = NgramLM::train(order, 5, &corpus).unwrap();
            let ppx = lm.perplexity(&seq).unwrap();
            prop_assert!(ppx.is_finite() && ppx >= 1.0);
            prop_assert!(ppx <= (lm.tokens() + lm.vocab_size()) as f64 * (1.0 + 1e-12));
        }
    }
}
