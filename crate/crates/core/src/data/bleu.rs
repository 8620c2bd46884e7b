//! Corpus-level BLEU-4 with clipped n-gram counts and brevity penalty,
//! unsmoothed.

use std::collections::HashMap;

use crate::error::{MatError, Result};

const MAX_ORDER: usize = 4;

fn ngram_counts<W: Eq + std::hash::Hash + Clone>(seq: &[W], n: usize) -> HashMap<&[W], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for g in seq.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Sufficient statistics of a corpus. Shards can be merged by summing before
/// calling [`BleuStats::score`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub clipped: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
    pub ref_total: [usize; MAX_ORDER],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add<W: Eq + std::hash::Hash + Clone>(&mut self, candidate: &[W], reference: &[W]) {
        self.cand_len += candidate.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let cand = ngram_counts(candidate, n);
            let refs = ngram_counts(reference, n);
            self.clipped[n - 1] += cand
                .iter()
                .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            self.total[n - 1] += candidate.len().saturating_sub(n - 1);
            self.ref_total[n - 1] += reference.len().saturating_sub(n - 1);
        }
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.clipped[n] += other.clipped[n];
            self.total[n] += other.total[n];
            self.ref_total[n] += other.ref_total[n];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    /// Geometric mean of the four modified precisions times the brevity
    /// penalty. An order with no n-grams on either side (every sentence
    /// shorter than `n`) is vacuously matched.
    pub fn score(&self) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            if self.total[n] == 0 && self.ref_total[n] == 0 {
                continue;
            }
            if self.clipped[n] == 0 {
                return 0.0;
            }
            log_sum += (self.clipped[n] as f64 / self.total[n] as f64).ln();
        }
        let bp = if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

fn corpus_stats<W: Eq + std::hash::Hash + Clone>(candidates: &[Vec<W>], references: &[Vec<W>]) -> Result<BleuStats> {
    if candidates.is_empty() {
        return Err(MatError::contract("bleu4 needs at least one candidate"));
    }
    if candidates.len() != references.len() {
        return Err(MatError::Shape {
            op: "bleu4",
            lhs: vec![candidates.len()],
            rhs: vec![references.len()],
        });
    }
    let mut stats = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        stats.add(c, r);
    }
    Ok(stats)
}

/// Corpus BLEU-4 in `[0, 1]`.
pub fn bleu4<W: Eq + std::hash::Hash + Clone>(candidates: &[Vec<W>], references: &[Vec<W>]) -> Result<f64> {
    Ok(corpus_stats(candidates, references)?.score())
}

/// Corpus-level `(clipped matches, candidate n-grams)` for order `n` (1-4).
pub fn modified_precision<W: Eq + std::hash::Hash + Clone>(
    candidates: &[Vec<W>],
    references: &[Vec<W>],
    n: usize,
) -> Result<(usize, usize)> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(MatError::contract(format!("n-gram order {n} outside 1..=4")));
    }
    let s = corpus_stats(candidates, references)?;
    Ok((s.clipped[n - 1], s.total[n - 1]))
}
