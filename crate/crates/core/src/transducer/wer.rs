use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimum-cost alignment of `hyp` against `reference`; among equal-cost
/// alignments, substitutions are preferred over insertion/deletion pairs.
pub fn edit_counts<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut dp = vec![vec![(0usize, EditCounts::default()); m + 1]; n + 1];
    for i in 1..=n {
        dp[i][0] = (i, EditCounts { deletions: i, ..Default::default() });
    }
    for j in 1..=m {
        dp[0][j] = (j, EditCounts { insertions: j, ..Default::default() });
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1] == hyp[j - 1];
            let (dc, mut diag) = dp[i - 1][j - 1];
            let diag_cost = dc + usize::from(!same);
            if !same {
                diag.substitutions += 1;
            }
            let (uc, mut up) = dp[i - 1][j];
            up.deletions += 1;
            let (lc, mut left) = dp[i][j - 1];
            left.insertions += 1;
            dp[i][j] = if diag_cost <= uc + 1 && diag_cost <= lc + 1 {
                (diag_cost, diag)
            } else if uc <= lc {
                (uc + 1, up)
            } else {
                (lc + 1, left)
            };
        }
    }
    dp[n][m].1
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    edit_counts(a, b).total()
}

/// Word error rate: `(S + I + D) / |reference|`.
pub fn wer<T: PartialEq>(reference: &[T], hyp: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(edit_distance(reference, hyp) as f64 / reference.len() as f64)
}
