/// Levenshtein distance with its operation breakdown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditOps {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost edit distance turning `reference` into `hypothesis`. The
/// backtrace prefers matches, then substitutions, deletions, insertions.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditOps {
    let (m, n) = (reference.len(), hypothesis.len());
    let w = n + 1;
    let mut d = vec![0usize; (m + 1) * w];
    for i in 0..=m {
        d[i * w] = i;
    }
    for j in 0..=n {
        d[j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut ops = EditOps {
        distance: d[m * w + n],
        ..EditOps::default()
    };
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                ops.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

/// `distance / max(|reference|, 1)`.
pub fn error_rate<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> f64 {
    edit_distance(reference, hypothesis).distance as f64 / reference.len().max(1) as f64
}
