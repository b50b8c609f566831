use std::collections::HashMap;
use std::hash::Hash;

/// Multiset of the `n`-grams of `seq`.
pub fn ngram_counts<T: Eq + Hash + Clone>(seq: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if n > 0 && seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram totals per order, plus the
/// lengths needed for the brevity penalty. Summing stats over sentences gives
/// corpus-level BLEU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            cand_len: 0,
            ref_len: 0,
        }
    }

    pub fn from_pair<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T], max_n: usize) -> Self {
        let mut s = Self::new(max_n);
        for n in 1..=max_n {
            let refs = ngram_counts(reference, n);
            let cand = ngram_counts(candidate, n);
            s.matches[n - 1] = cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
            s.totals[n - 1] = candidate.len().saturating_sub(n - 1);
        }
        s.cand_len = candidate.len();
        s.ref_len = reference.len();
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            0.0
        } else if self.cand_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        } else {
            1.0
        }
    }

    /// BLEU-1 … BLEU-max_n on a 0–100 scale; any zero precision gives 0.
    pub fn scores(&self) -> Vec<f64> {
        let bp = self.brevity_penalty();
        let mut log_sum = 0.0;
        let mut dead = self.cand_len == 0;
        (0..self.matches.len())
            .map(|i| {
                if self.matches[i] == 0 || self.totals[i] == 0 {
                    dead = true;
                }
                if dead {
                    return 0.0;
                }
                log_sum += (self.matches[i] as f64 / self.totals[i] as f64).ln();
                100.0 * bp * (log_sum / (i + 1) as f64).exp()
            })
            .collect()
    }
}

/// Sentence BLEU-1 … BLEU-max_n, without smoothing.
pub fn bleu<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T], max_n: usize) -> Vec<f64> {
    BleuStats::from_pair(candidate, reference, max_n).scores()
}

/// Corpus BLEU: clip counts are pooled over all pairs before the geometric mean.
pub fn corpus_bleu<T: Eq + Hash + Clone>(pairs: &[(&[T], &[T])], max_n: usize) -> Vec<f64> {
    let mut total = BleuStats::new(max_n);
    for (c, r) in pairs {
        total.add(&BleuStats::from_pair(c, r, max_n));
    }
    total.scores()
}

/// Fraction of n-gram occurrences whose n-gram occurs at least once more
/// elsewhere in the same sentence. `None` when the sentence is shorter than `n`.
pub fn auto_bleu<T: Eq + Hash + Clone>(sentence: &[T], n: usize) -> Option<f64> {
    if n == 0 || sentence.len() < n {
        return None;
    }
    let counts = ngram_counts(sentence, n);
    let occurrences = sentence.len() - n + 1;
    let repeated = sentence.windows(n).filter(|w| counts[*w] > 1).count();
    Some(repeated as f64 / occurrences as f64)
}
