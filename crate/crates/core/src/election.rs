//! Attention as an election: output positions vote over input positions.
//!
//! Each row of an attention matrix becomes a ballot ranking the input
//! positions by weight. k-Borda elects the `k` candidates with the most Borda
//! points, and the satisfaction score measures how much of each voter's
//! attention mass falls inside a `±k` positional window around its own index.

use serde::{Deserialize, Serialize};

use crate::seq2seq::AttentionMatrix;
use crate::{Error, Result};

/// `ballots[v]` ranks every candidate, most preferred first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Election {
    candidates: usize,
    ballots: Vec<Vec<usize>>,
}

impl Election {
    /// Checks that every ballot is a permutation of `0..candidates`.
    pub fn new(candidates: usize, ballots: Vec<Vec<usize>>) -> Result<Self> {
        for (v, ballot) in ballots.iter().enumerate() {
            let mut seen = vec![false; candidates];
            if ballot.len() != candidates {
                return Err(Error::Domain(format!("ballot {v} is not a full ranking")));
            }
            for &c in ballot {
                if c >= candidates || std::mem::replace(&mut seen[c], true) {
                    return Err(Error::Domain(format!("ballot {v} is not a permutation")));
                }
            }
        }
        Ok(Self { candidates, ballots })
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn voters(&self) -> usize {
        self.ballots.len()
    }

    pub fn ballots(&self) -> &[Vec<usize>] {
        &self.ballots
    }
}

/// Ranks a weight row by descending weight, ties by ascending position.
pub fn rank_row(row: impl IntoIterator<Item = f64>) -> Vec<usize> {
    let row: Vec<f64> = row.into_iter().collect();
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

pub fn ballots_from_attention(matrix: &AttentionMatrix) -> Election {
    let ballots = matrix
        .weights
        .rows()
        .into_iter()
        .map(|row| rank_row(row.iter().copied()))
        .collect();
    Election {
        candidates: matrix.weights.ncols(),
        ballots,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BordaTally {
    pub scores: Vec<u64>,
}

impl BordaTally {
    pub fn total(&self) -> u64 {
        self.scores.iter().sum()
    }
}

/// A voter awards `m - 1` points to its first choice, down to 0 for its last.
pub fn borda_tally(election: &Election) -> BordaTally {
    let m = election.candidates;
    let mut scores = vec![0u64; m];
    for ballot in &election.ballots {
        for (rank, &c) in ballot.iter().enumerate() {
            scores[c] += (m - 1 - rank) as u64;
        }
    }
    BordaTally { scores }
}

/// The `k` candidates with the highest Borda score, best first; equal scores
/// go to the lower position.
pub fn k_borda_winners(election: &Election, k: usize) -> Result<Vec<usize>> {
    let m = election.candidates;
    if k == 0 || k > m {
        return Err(Error::Domain(format!("k = {k} outside 1..={m}")));
    }
    let tally = borda_tally(election);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| tally.scores[b].cmp(&tally.scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// `⌊log_s(p)⌋`, computed as the largest `k` with `s^k ≤ p`.
pub fn window_radius(p: usize, s: u32) -> usize {
    assert!(p >= 1 && s >= 2, "window_radius needs p >= 1 and s >= 2");
    let (p, s) = (p as u128, u128::from(s));
    let mut k = 0;
    let mut power = s;
    while power <= p {
        k += 1;
        power *= s;
    }
    k
}

/// How the window radius depends on sentence length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KRule {
    /// `⌊log_s(p)⌋`
    Log(u32),
    /// `⌊p/2⌋`
    HalfLength,
}

impl KRule {
    /// The rules compared in the satisfaction table, narrowest first.
    pub const TABLE: [KRule; 4] = [KRule::Log(4), KRule::Log(3), KRule::Log(2), KRule::HalfLength];

    pub fn radius(self, p: usize) -> usize {
        match self {
            KRule::Log(s) => window_radius(p, s),
            KRule::HalfLength => p / 2,
        }
    }

    pub fn label(self) -> String {
        match self {
            KRule::Log(s) => format!("floor(log{s}(p))"),
            KRule::HalfLength => "floor(p/2)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionRow {
    pub k_rule: String,
    /// Radius used for each matrix, in input order.
    pub k_values: Vec<usize>,
    /// Mean over all output words, in percent.
    pub average_satisfaction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionReport {
    pub rows: Vec<SatisfactionRow>,
}

impl SatisfactionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k_rule,average_satisfaction\n");
        for row in &self.rows {
            out.push_str(&format!("{},{:.4}\n", row.k_rule, row.average_satisfaction));
        }
        out
    }
}

/// Percentage of row `n`'s attention mass inside positions `n-k ..= n+k`.
pub fn word_satisfaction(row: &[f64], n: usize, k: usize) -> f64 {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let lo = n.saturating_sub(k);
    let hi = (n + k).min(row.len() - 1);
    let inside: f64 = row[lo..=hi].iter().sum();
    (100.0 * inside / total).clamp(0.0, 100.0)
}

/// Windowed satisfaction averaged over every output word of every matrix.
pub fn satisfaction(matrices: &[AttentionMatrix], rule: KRule) -> Result<SatisfactionRow> {
    if matrices.is_empty() {
        return Err(Error::Domain("satisfaction over zero matrices".into()));
    }
    let mut sum = 0.0;
    let mut words = 0usize;
    let mut k_values = Vec::with_capacity(matrices.len());
    for matrix in matrices {
        let p = matrix.weights.ncols();
        let k = rule.radius(p.max(1));
        k_values.push(k);
        for (n, row) in matrix.weights.rows().into_iter().enumerate() {
            let row: Vec<f64> = row.to_vec();
            sum += word_satisfaction(&row, n, k);
            words += 1;
        }
    }
    Ok(SatisfactionRow {
        k_rule: rule.label(),
        k_values,
        average_satisfaction: if words == 0 { 0.0 } else { sum / words as f64 },
    })
}

pub fn satisfaction_report(matrices: &[AttentionMatrix], rules: &[KRule]) -> Result<SatisfactionReport> {
    let rows = rules
        .iter()
        .map(|&rule| satisfaction(matrices, rule))
        .collect::<Result<_>>()?;
    Ok(SatisfactionReport { rows })
}
