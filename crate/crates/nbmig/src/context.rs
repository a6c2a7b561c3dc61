//! Context detection: mine cell-order sequences from the interaction
//! history, score them, and predict the block of cells the user is about to
//! execute.
//!
//! The history is the chronological list of executed cell orders. It is cut
//! into maximal nondecreasing runs; a run breaks exactly when the next order
//! is strictly smaller than the current one (an upward skip such as 1→4
//! continues the run). Each unique run is scored by how often it occurs,
//! plus once per occurrence of any longer run that contains it as a
//! contiguous subsequence, and scores are normalized to percentages.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// A nondecreasing, nonempty run of cell orders executed consecutively.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct CellSequence(Vec<u32>);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("cell sequence must be nonempty and nondecreasing")]
    InvalidSequence,
}

impl CellSequence {
    pub fn new(orders: Vec<u32>) -> Result<Self, ContextError> {
        if orders.is_empty() || orders.windows(2).any(|w| w[1] < w[0]) {
            return Err(ContextError::InvalidSequence);
        }
        Ok(CellSequence(orders))
    }

    pub fn orders(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false: the constructor rejects empty sequences.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, order: u32) -> bool {
        self.0.contains(&order)
    }

    pub fn starts_with_order(&self, order: u32) -> bool {
        self.0[0] == order
    }

    /// True when `self` occurs as a run of consecutive elements of `other`.
    pub fn is_contiguous_subsequence_of(&self, other: &CellSequence) -> bool {
        if self.len() > other.len() {
            return false;
        }
        other.0.windows(self.len()).any(|w| w == self.0.as_slice())
    }
}

impl fmt::Display for CellSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|o| o.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Scored unique sequences. Scores from [`score_sequences`] sum to 100;
/// filtered views keep the global percentages and may sum to less.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceStats {
    entries: BTreeMap<CellSequence, f64>,
}

impl SequenceStats {
    pub fn from_entries(entries: impl IntoIterator<Item = (CellSequence, f64)>) -> Self {
        SequenceStats {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellSequence, f64)> {
        self.entries.iter().map(|(s, v)| (s, *v))
    }

    pub fn get(&self, seq: &CellSequence) -> Option<f64> {
        self.entries.get(seq).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Entries sorted by descending score, the display order used by the CLI.
    /// Ties follow the prediction order: longer first, then lexicographic.
    pub fn ranked(&self) -> Vec<(&CellSequence, f64)> {
        let mut rows: Vec<(&CellSequence, f64)> = self.iter().collect();
        rows.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| b.0.len().cmp(&a.0.len()))
                .then_with(|| a.0.cmp(b.0))
        });
        rows
    }
}

/// A predicted group of cells about to be executed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockPrediction {
    pub block: CellSequence,
    pub score: f64,
    /// The currently executing cell the prediction was made for.
    pub anchor: u32,
}

/// Cut the history into maximal nondecreasing runs.
///
/// A new sequence starts exactly when the next order is strictly smaller
/// than the current one, so concatenating the result reproduces the input.
pub fn get_sequences(history: &[u32]) -> Vec<CellSequence> {
    let mut sequences = Vec::new();
    let mut current: Vec<u32> = Vec::new();
    for &order in history {
        if let Some(&last) = current.last() {
            if order < last {
                sequences.push(CellSequence(std::mem::take(&mut current)));
            }
        }
        current.push(order);
    }
    if !current.is_empty() {
        sequences.push(CellSequence(current));
    }
    sequences
}

/// Score unique sequences and normalize to percentages.
///
/// subtotal(S) = occurrences of S, plus one per occurrence of each other
/// unique sequence that contains S as a contiguous subsequence. Scores are
/// subtotal/total × 100 and sum to 100 on nonempty input.
pub fn score_sequences(sequences: &[CellSequence]) -> SequenceStats {
    if sequences.is_empty() {
        return SequenceStats::default();
    }
    let mut occurrences: BTreeMap<&CellSequence, u64> = BTreeMap::new();
    for seq in sequences {
        *occurrences.entry(seq).or_insert(0) += 1;
    }
    // Shortest first, so each sequence only needs to look at the strictly
    // longer ones for containment.
    let mut by_length: Vec<(&CellSequence, u64)> =
        occurrences.iter().map(|(s, n)| (*s, *n)).collect();
    by_length.sort_by_key(|(s, _)| s.len());

    let mut subtotals: Vec<(&CellSequence, u64)> = Vec::with_capacity(by_length.len());
    for (i, &(seq, occ)) in by_length.iter().enumerate() {
        let mut subtotal = occ;
        for &(longer, longer_occ) in &by_length[i + 1..] {
            if seq.len() < longer.len() && seq.is_contiguous_subsequence_of(longer) {
                subtotal += longer_occ;
            }
        }
        subtotals.push((seq, subtotal));
    }

    let total: u64 = subtotals.iter().map(|(_, n)| n).sum();
    SequenceStats {
        entries: subtotals
            .into_iter()
            .map(|(seq, n)| (seq.clone(), n as f64 / total as f64 * 100.0))
            .collect(),
    }
}

/// Keep only entries whose sequence contains `active`.
///
/// Scores are not renormalized; they stay the global percentages.
pub fn filter_active(stats: &SequenceStats, active: u32) -> SequenceStats {
    SequenceStats {
        entries: stats
            .entries
            .iter()
            .filter(|(seq, _)| seq.contains(active))
            .map(|(seq, score)| (seq.clone(), *score))
            .collect(),
    }
}

fn best_entry<'a>(
    candidates: impl Iterator<Item = (&'a CellSequence, f64)>,
    min_score: f64,
) -> Option<(&'a CellSequence, f64)> {
    candidates
        .filter(|(_, score)| *score >= min_score)
        .min_by(|a, b| {
            // Highest score, then longest, then lexicographically smallest.
            b.1.total_cmp(&a.1)
                .then_with(|| b.0.len().cmp(&a.0.len()))
                .then_with(|| a.0.cmp(b.0))
        })
}

/// Pick the block prediction for the active cell.
///
/// Among entries containing `active` with score ≥ `min_score`, returns the
/// highest-scored; ties go to the longer sequence, then the
/// lexicographically smallest. Deterministic regardless of entry order.
pub fn predict_block(stats: &SequenceStats, active: u32, min_score: f64) -> Option<BlockPrediction> {
    best_entry(
        stats.iter().filter(|(seq, _)| seq.contains(active)),
        min_score,
    )
    .map(|(seq, score)| BlockPrediction {
        block: seq.clone(),
        score,
        anchor: active,
    })
}

/// Like [`predict_block`] but anchored: only sequences whose first cell is
/// `active` qualify. The block policy migrates only at block starts, so
/// mid-sequence matches are not useful to it.
pub fn predict_block_at_start(
    stats: &SequenceStats,
    active: u32,
    min_score: f64,
) -> Option<BlockPrediction> {
    best_entry(
        stats.iter().filter(|(seq, _)| seq.starts_with_order(active)),
        min_score,
    )
    .map(|(seq, score)| BlockPrediction {
        block: seq.clone(),
        score,
        anchor: active,
    })
}

/// Full pipeline: history → sequences → normalized scores.
pub fn stats_from_history(history: &[u32]) -> SequenceStats {
    score_sequences(&get_sequences(history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(orders: &[u32]) -> CellSequence {
        CellSequence::new(orders.to_vec()).unwrap()
    }

    /// Independent splitter: walk the history and compare adjacent pairs.
    fn oracle_split(history: &[u32]) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = Vec::new();
        for (i, &order) in history.iter().enumerate() {
            if i == 0 || order < history[i - 1] {
                out.push(Vec::new());
            }
            out.last_mut().unwrap().push(order);
        }
        out
    }

    /// Independent scorer: subtotal(S) counts every occurrence (including
    /// S's own) that contains S contiguously. Same math as the shipped
    /// counting rule, different formulation.
    fn oracle_score(seqs: &[Vec<u32>]) -> Vec<(Vec<u32>, f64)> {
        let contains = |hay: &[u32], needle: &[u32]| {
            needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
        };
        let mut unique: Vec<Vec<u32>> = Vec::new();
        for s in seqs {
            if !unique.contains(s) {
                unique.push(s.clone());
            }
        }
        unique.sort();
        let subtotals: Vec<u64> = unique
            .iter()
            .map(|s| seqs.iter().filter(|o| contains(o, s)).count() as u64)
            .collect();
        let total: u64 = subtotals.iter().sum();
        unique
            .into_iter()
            .zip(subtotals)
            .map(|(s, n)| (s, n as f64 / total as f64 * 100.0))
            .collect()
    }

    #[test]
    fn splits_on_strict_decrease() {
        let got = get_sequences(&[1, 2, 3, 2, 3]);
        assert_eq!(got, vec![seq(&[1, 2, 3]), seq(&[2, 3])]);
    }

    #[test]
    fn empty_history_yields_no_sequences() {
        assert!(get_sequences(&[]).is_empty());
        assert!(score_sequences(&[]).is_empty());
    }

    #[test]
    fn repeats_and_skips_continue_a_sequence() {
        let got = get_sequences(&[5, 5, 7, 1, 1, 2]);
        assert_eq!(got, vec![seq(&[5, 5, 7]), seq(&[1, 1, 2])]);
        // An upward skip does not break the run.
        assert_eq!(get_sequences(&[1, 4, 9]), vec![seq(&[1, 4, 9])]);
    }

    #[test]
    fn scores_worked_example() {
        let stats = stats_from_history(&[1, 2, 3, 2, 3]);
        assert_eq!(stats.len(), 2);
        let short = stats.get(&seq(&[2, 3])).unwrap();
        let long = stats.get(&seq(&[1, 2, 3])).unwrap();
        assert!((short - 200.0 / 3.0).abs() < 1e-9, "got {short}");
        assert!((long - 100.0 / 3.0).abs() < 1e-9, "got {long}");
    }

    #[test]
    fn single_sequence_takes_full_mass() {
        let stats = score_sequences(&[seq(&[4])]);
        assert_eq!(stats.get(&seq(&[4])), Some(100.0));
    }

    #[test]
    fn filter_keeps_membership_without_renormalizing() {
        let stats = stats_from_history(&[1, 2, 3, 2, 3]);
        let only_one = filter_active(&stats, 1);
        assert_eq!(only_one.len(), 1);
        assert!((only_one.get(&seq(&[1, 2, 3])).unwrap() - 100.0 / 3.0).abs() < 1e-9);
        // Active in both sequences keeps both.
        assert_eq!(filter_active(&stats, 3).len(), 2);
        // Active in none empties the stats.
        assert!(filter_active(&stats, 9).is_empty());
    }

    #[test]
    fn predicts_highest_scored_containing_sequence() {
        let stats = stats_from_history(&[1, 2, 3, 2, 3]);
        let p = predict_block(&stats, 3, 50.0).unwrap();
        assert_eq!(p.block, seq(&[2, 3]));
        assert!((p.score - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(p.anchor, 3);
        // min_score above every score → no prediction.
        assert!(predict_block(&stats, 3, 90.0).is_none());
        assert!(predict_block(&SequenceStats::default(), 3, 0.0).is_none());
    }

    #[test]
    fn equal_scores_break_to_longer_sequence() {
        let stats = SequenceStats::from_entries([(seq(&[2, 3]), 50.0), (seq(&[2, 3, 4]), 50.0)]);
        let p = predict_block(&stats, 2, 0.0).unwrap();
        assert_eq!(p.block, seq(&[2, 3, 4]));
        // Equal score and length fall back to lexicographic order.
        let stats = SequenceStats::from_entries([(seq(&[2, 5]), 50.0), (seq(&[2, 3]), 50.0)]);
        assert_eq!(predict_block(&stats, 2, 0.0).unwrap().block, seq(&[2, 3]));
    }

    #[test]
    fn anchored_prediction_requires_block_start() {
        let stats = stats_from_history(&[1, 2, 3, 2, 3]);
        // 3 is contained in both sequences but starts neither.
        assert!(predict_block_at_start(&stats, 3, 0.0).is_none());
        let p = predict_block_at_start(&stats, 2, 0.0).unwrap();
        assert_eq!(p.block, seq(&[2, 3]));
    }

    #[test]
    fn sequence_validation_rejects_bad_inputs() {
        assert_eq!(
            CellSequence::new(vec![]),
            Err(ContextError::InvalidSequence)
        );
        assert_eq!(
            CellSequence::new(vec![3, 1]),
            Err(ContextError::InvalidSequence)
        );
        assert!(CellSequence::new(vec![1, 1, 4]).is_ok());
    }

    fn arb_history() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(0u32..8, 0..40)
    }

    proptest! {
        #[test]
        fn concatenation_reproduces_history(history in arb_history()) {
            let joined: Vec<u32> = get_sequences(&history)
                .iter()
                .flat_map(|s| s.orders().iter().copied())
                .collect();
            prop_assert_eq!(joined, history);
        }

        #[test]
        fn sequences_are_maximal_nondecreasing(history in arb_history()) {
            let seqs = get_sequences(&history);
            for s in &seqs {
                prop_assert!(s.orders().windows(2).all(|w| w[0] <= w[1]));
            }
            // Maximality: the element after each break is strictly smaller
            // than the element before it.
            for pair in seqs.windows(2) {
                let last = *pair[0].orders().last().unwrap();
                let first = pair[1].orders()[0];
                prop_assert!(first < last);
            }
            prop_assert_eq!(get_sequences(&history), oracle_split(&history)
                .into_iter()
                .map(|v| CellSequence::new(v).unwrap())
                .collect::<Vec<_>>());
        }

        #[test]
        fn scores_sum_to_100(history in arb_history()) {
            let stats = stats_from_history(&history);
            if !stats.is_empty() {
                prop_assert!((stats.total() - 100.0).abs() < 1e-9);
            }
        }

        #[test]
        fn scores_match_brute_force_oracle(history in arb_history()) {
            let stats = stats_from_history(&history);
            let expected = oracle_score(
                &get_sequences(&history)
                    .iter()
                    .map(|s| s.orders().to_vec())
                    .collect::<Vec<_>>(),
            );
            prop_assert_eq!(stats.len(), expected.len());
            for (orders, score) in expected {
                let got = stats.get(&CellSequence::new(orders).unwrap()).unwrap();
                // Same subtotal and total must divide to the same float.
                prop_assert_eq!(got, score);
            }
        }

        // Selection is a pure function of the entry set, not its order:
        // compare against an explicit sort-then-take-first selector.
        #[test]
        fn prediction_matches_sorted_selection(history in arb_history(), active in 0u32..8) {
            let stats = stats_from_history(&history);
            let got = predict_block(&stats, active, 0.0);
            let mut candidates: Vec<(&CellSequence, f64)> =
                stats.iter().filter(|(s, _)| s.contains(active)).collect();
            candidates.sort_by(|a, b| {
                b.1.total_cmp(&a.1)
                    .then_with(|| b.0.len().cmp(&a.0.len()))
                    .then_with(|| a.0.cmp(b.0))
            });
            match (got, candidates.first()) {
                (None, None) => {}
                (Some(p), Some((s, v))) => {
                    prop_assert_eq!(&p.block, *s);
                    prop_assert_eq!(p.score, *v);
                }
                (a, b) => prop_assert!(false, "mismatch: {:?} vs {:?}", a, b),
            }
        }
    }
}
