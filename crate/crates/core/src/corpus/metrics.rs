use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit counts of a minimum-cost alignment plus the error rate
/// `(S + I + D) / N` over `N` reference tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditDistanceResult {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_len: usize,
    pub rate: f64,
}

impl EditDistanceResult {
    pub fn edits(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Op {
    Match,
    Sub,
    Del,
    Ins,
}

/// Unit-cost Levenshtein alignment. Among minimum-edit alignments the one
/// with the most substitutions wins (so swapping reference and hypothesis
/// swaps I and D exactly); remaining ties backtrace preferring
/// substitution, then deletion, then insertion.
/// `rate` is 0 for an empty reference and hypothesis, `inf` for an empty
/// reference with a non-empty hypothesis.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditDistanceResult {
    let (n, m) = (reference.len(), hypothesis.len());
    // (edits, -substitutions), compared lexicographically
    let mut cost = vec![vec![(0usize, 0isize); m + 1]; n + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        row[0] = (i, 0);
    }
    for j in 0..=m {
        cost[0][j] = (j, 0);
    }
    let step = |c: (usize, isize), edit: usize, sub: isize| (c.0 + edit, c.1 - sub);
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = if same {
                cost[i - 1][j - 1]
            } else {
                step(cost[i - 1][j - 1], 1, 1)
            };
            cost[i][j] = diag
                .min(step(cost[i - 1][j], 1, 0))
                .min(step(cost[i][j - 1], 1, 0));
        }
    }

    let (mut i, mut j) = (n, m);
    let (mut s, mut d, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = cost[i][j];
        let op = if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if same && here == cost[i - 1][j - 1] {
                Op::Match
            } else if !same && here == step(cost[i - 1][j - 1], 1, 1) {
                Op::Sub
            } else if here == step(cost[i - 1][j], 1, 0) {
                Op::Del
            } else {
                Op::Ins
            }
        } else if i > 0 {
            Op::Del
        } else {
            Op::Ins
        };
        match op {
            Op::Match => {
                i -= 1;
                j -= 1;
            }
            Op::Sub => {
                s += 1;
                i -= 1;
                j -= 1;
            }
            Op::Del => {
                d += 1;
                i -= 1;
            }
            Op::Ins => {
                ins += 1;
                j -= 1;
            }
        }
    }
    let edits = s + d + ins;
    let rate = if n > 0 {
        edits as f64 / n as f64
    } else if edits == 0 {
        0.0
    } else {
        f64::INFINITY
    };
    EditDistanceResult {
        substitutions: s,
        insertions: ins,
        deletions: d,
        reference_len: n,
        rate,
    }
}

/// Word error rate over whitespace tokens (or any pre-split tokens).
pub fn word_error_rate<T: AsRef<str>>(reference: &[T], hypothesis: &[T]) -> Result<EditDistanceResult> {
    if reference.is_empty() {
        return Err(Error::invalid("reference transcript is empty"));
    }
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    Ok(edit_distance(&r, &h))
}

/// Corpus-level totals; `rate` is total edits over total reference tokens.
pub fn aggregate(results: &[EditDistanceResult]) -> EditDistanceResult {
    let mut out = EditDistanceResult {
        substitutions: 0,
        insertions: 0,
        deletions: 0,
        reference_len: 0,
        rate: 0.0,
    };
    for r in results {
        out.substitutions += r.substitutions;
        out.insertions += r.insertions;
        out.deletions += r.deletions;
        out.reference_len += r.reference_len;
    }
    out.rate = if out.reference_len > 0 {
        out.edits() as f64 / out.reference_len as f64
    } else {
        0.0
    };
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wer(r: &str, h: &str) -> EditDistanceResult {
        let r: Vec<&str> = r.split_whitespace().collect();
        let h: Vec<&str> = h.split_whitespace().collect();
        word_error_rate(&r, &h).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        assert_eq!(wer("a b c", "a b c").rate, 0.0);
    }

    #[test]
    fn single_deletion() {
        let r = wer("the cat sat", "the cat");
        assert_eq!((r.substitutions, r.deletions, r.insertions), (0, 1, 0));
        assert!((r.rate - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn substitution_and_deletion() {
        let r = wer("a b c d", "a x c");
        assert_eq!((r.substitutions, r.deletions, r.insertions), (1, 1, 0));
        assert_eq!(r.rate, 0.5);
    }

    #[test]
    fn empty_reference_rejected() {
        let empty: [&str; 0] = [];
        assert!(word_error_rate(&empty, &["a"]).is_err());
    }

    #[test]
    fn hypothesis_can_exceed_reference() {
        let r = wer("a", "b c d");
        assert_eq!(r.edits(), 3);
        assert_eq!(r.rate, 3.0);
    }
}
