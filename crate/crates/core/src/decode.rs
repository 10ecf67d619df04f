//! Exact chain decoding: forward-backward max tables, Viterbi, and the serial
//! list Viterbi algorithm (SLVA) with sequence predicates and Hamming loss
//! augmentation.
//!
//! Positions are 0-based in code. Position 0 is always the query start.
//! Ties are broken deterministically: Viterbi prefers the lowest POI id at
//! every step, and heap entries with equal scores pop in lexicographic
//! order of their sequences. Together these make the SLVA output a prefix
//! of the score-sorted list with lexicographic tie order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::domain::{add_scores, is_neg_inf, ChainScores, PoiId, Trajectory, Variant, NEG_INF};
use crate::error::{Error, Result};

/// Default cap on heap pops for a single list Viterbi call.
pub const DEFAULT_MAX_EXPANSIONS: usize = 1_000_000;

/// Max-product tables over a chain.
#[derive(Debug, Clone)]
pub struct DecodeTables {
    m: usize,
    length: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    f_merge: Vec<f64>,
}

impl DecodeTables {
    /// Best score of a prefix ending at `poi` in position `t`.
    pub fn alpha(&self, t: usize, poi: PoiId) -> f64 {
        self.alpha[t * self.m + poi]
    }

    /// Best score of a suffix after `poi` in position `t`.
    pub fn beta(&self, t: usize, poi: PoiId) -> f64 {
        self.beta[t * self.m + poi]
    }

    /// Best score of a full sequence using the transition `from -> to`
    /// between positions `t` and `t + 1`.
    pub fn merge(&self, t: usize, from: PoiId, to: PoiId) -> f64 {
        self.f_merge[(t * self.m + from) * self.m + to]
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// Maximum chain score over all sequences.
    pub fn best_score(&self) -> f64 {
        let t = self.length - 1;
        (0..self.m).map(|p| self.alpha(t, p)).fold(NEG_INF, f64::max)
    }

    /// Lowest-id maximiser of `merge(t, from, .)` outside `exclude`.
    fn best_successor(&self, t: usize, from: PoiId, exclude: impl Fn(PoiId) -> bool) -> Option<PoiId> {
        let mut best: Option<(PoiId, f64)> = None;
        for p in 0..self.m {
            if exclude(p) {
                continue;
            }
            let v = self.merge(t, from, p);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((p, v));
            }
        }
        best.filter(|(_, v)| !is_neg_inf(*v)).map(|(p, _)| p)
    }
}

/// Forward (alpha) and backward (beta) max recurrences plus the merged
/// transition table `alpha_t(i) + pairwise(i, j) + unary_{t+1}(j) + beta_{t+1}(j)`.
pub fn forward_backward(scores: &ChainScores) -> DecodeTables {
    let m = scores.n_pois();
    let l = scores.length();
    let mut alpha = vec![NEG_INF; l * m];
    let mut beta = vec![0.0; l * m];
    alpha[..m].copy_from_slice(scores.unary_row(0));
    for t in 1..l {
        for j in 0..m {
            let mut best = NEG_INF;
            for i in 0..m {
                best = best.max(add_scores(alpha[(t - 1) * m + i], scores.pairwise(i, j)));
            }
            alpha[t * m + j] = add_scores(best, scores.unary(t, j));
        }
    }
    for t in (0..l.saturating_sub(1)).rev() {
        for i in 0..m {
            let mut best = NEG_INF;
            for j in 0..m {
                let v = add_scores(add_scores(scores.pairwise(i, j), scores.unary(t + 1, j)), beta[(t + 1) * m + j]);
                best = best.max(v);
            }
            beta[t * m + i] = best;
        }
    }
    let mut f_merge = vec![NEG_INF; l.saturating_sub(1) * m * m];
    for t in 0..l.saturating_sub(1) {
        for i in 0..m {
            for j in 0..m {
                let v = add_scores(alpha[t * m + i], scores.pairwise(i, j));
                let v = add_scores(v, scores.unary(t + 1, j));
                f_merge[(t * m + i) * m + j] = add_scores(v, beta[(t + 1) * m + j]);
            }
        }
    }
    DecodeTables {
        m,
        length: l,
        alpha,
        beta,
        f_merge,
    }
}

/// Completes `prefix` (non-empty) greedily to full length along best successors.
fn complete(tables: &DecodeTables, prefix: &mut Vec<PoiId>) {
    while prefix.len() < tables.length {
        let t = prefix.len() - 1;
        let next = tables
            .best_successor(t, prefix[t], |_| false)
            .unwrap_or(0);
        prefix.push(next);
    }
}

fn viterbi_from(tables: &DecodeTables, scores: &ChainScores) -> (Trajectory, f64) {
    let mut seq = vec![scores.start()];
    complete(tables, &mut seq);
    let score = scores.score(&seq);
    (Trajectory::new(seq), score)
}

/// Highest-scoring sequence of the query's length starting at its start POI.
/// Repeats are allowed.
pub fn viterbi(scores: &ChainScores) -> (Trajectory, f64) {
    let tables = forward_backward(scores);
    viterbi_from(&tables, scores)
}

/// Acceptance test applied to sequences popped from the list Viterbi heap.
#[derive(Debug, Clone, Copy)]
pub enum SequencePredicate<'a> {
    Any,
    /// No repeated POI.
    Path,
    NotIn(&'a [Trajectory]),
    PathAndNotIn(&'a [Trajectory]),
}

impl SequencePredicate<'_> {
    pub fn accepts(&self, seq: &[PoiId]) -> bool {
        let is_path = || {
            let mut seen = vec![false; seq.iter().max().map_or(0, |&p| p + 1)];
            seq.iter().all(|&p| !std::mem::replace(&mut seen[p], true))
        };
        let outside = |set: &[Trajectory]| set.iter().all(|t| t.pois() != seq);
        match self {
            SequencePredicate::Any => true,
            SequencePredicate::Path => is_path(),
            SequencePredicate::NotIn(set) => outside(set),
            SequencePredicate::PathAndNotIn(set) => is_path() && outside(set),
        }
    }

    /// Loop guard: sequences that can fail the predicate plus `k`.
    /// For `Path` this is `m^(l-1) - prod_{t=2..l}(m - t + 1) + k`.
    pub fn pop_bound(&self, m: usize, length: usize, k: usize) -> usize {
        let free = length.saturating_sub(1) as i32;
        let all = (m as f64).powi(free);
        let paths: f64 = (2..=length).map(|t| (m as f64 - t as f64 + 1.0).max(0.0)).product();
        let failing = match self {
            SequencePredicate::Any => 0.0,
            SequencePredicate::Path => all - paths,
            SequencePredicate::NotIn(set) => set.len() as f64,
            SequencePredicate::PathAndNotIn(set) => all - paths + set.len() as f64,
        };
        let bound = failing + k as f64;
        if bound >= usize::MAX as f64 {
            usize::MAX
        } else {
            bound as usize
        }
    }
}

/// A candidate sequence on the SLVA heap.
#[derive(Debug, Clone)]
pub struct HeapEntry {
    pub score: f64,
    pub sequence: Vec<PoiId>,
    /// First position this entry may deviate at; `None` for the Viterbi seed.
    pub partition_index: Option<usize>,
    /// POIs barred at `partition_index`.
    pub exclude_set: Vec<PoiId>,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Result of a list Viterbi run.
#[derive(Debug, Clone, PartialEq)]
pub struct ListOutcome {
    /// Accepted sequences in non-increasing score order.
    pub items: Vec<(Trajectory, f64)>,
    /// Set when fewer than `k` sequences were found: the heap emptied or a
    /// pop limit was reached.
    pub exhausted: bool,
    /// Number of heap pops performed.
    pub expansions: usize,
}

/// Serial list Viterbi: pops candidates in score order and returns the
/// first `k` that satisfy `predicate`.
pub fn list_viterbi(scores: &ChainScores, k: usize, predicate: SequencePredicate<'_>, max_expansions: usize) -> ListOutcome {
    let tables = forward_backward(scores);
    list_viterbi_with(&tables, scores, k, predicate, max_expansions)
}

fn list_viterbi_with(
    tables: &DecodeTables,
    scores: &ChainScores,
    k: usize,
    predicate: SequencePredicate<'_>,
    max_expansions: usize,
) -> ListOutcome {
    let l = scores.length();
    let mut items = Vec::new();
    if k == 0 {
        return ListOutcome { items, exhausted: false, expansions: 0 };
    }
    let bound = predicate.pop_bound(scores.n_pois(), l, k).min(max_expansions);
    let (best, best_score) = viterbi_from(tables, scores);
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry {
        score: best_score,
        sequence: best.0,
        partition_index: None,
        exclude_set: Vec::new(),
    });

    let mut expansions = 0;
    while expansions < bound {
        let Some(entry) = heap.pop() else { break };
        expansions += 1;
        if predicate.accepts(&entry.sequence) {
            items.push((Trajectory::new(entry.sequence.clone()), entry.score));
            if items.len() == k {
                return ListOutcome { items, exhausted: false, expansions };
            }
        }
        let first = entry.partition_index.unwrap_or(1);
        for t in first..l {
            let mut exclude = if t == first { entry.exclude_set.clone() } else { Vec::new() };
            exclude.push(entry.sequence[t]);
            let prev = entry.sequence[t - 1];
            let Some(choice) = tables.best_successor(t - 1, prev, |p| exclude.contains(&p)) else {
                continue;
            };
            let mut seq = Vec::with_capacity(l);
            seq.extend_from_slice(&entry.sequence[..t]);
            seq.push(choice);
            complete(tables, &mut seq);
            heap.push(HeapEntry {
                score: scores.score(&seq),
                sequence: seq,
                partition_index: Some(t),
                exclude_set: exclude,
            });
        }
    }
    ListOutcome {
        items,
        exhausted: true,
        expansions,
    }
}

/// Adds Hamming loss against `truth`: every POI other than `truth[t]` gains 1
/// at position `t`. Position 0 is left clamped, contributing 0.
pub fn loss_augment(scores: &ChainScores, truth: &Trajectory) -> Result<ChainScores> {
    let q = scores.query();
    if !truth.conforms_to(&q) || truth.pois().iter().any(|&p| p >= scores.n_pois()) {
        return Err(Error::NonConforming(q));
    }
    let mut out = scores.clone();
    for (t, &y) in truth.pois().iter().enumerate().skip(1) {
        for p in 0..scores.n_pois() {
            if p != y {
                let u = out.unary_mut(t, p);
                *u = add_scores(*u, 1.0);
            }
        }
    }
    Ok(out)
}

/// Loss-augmented inference for one ground truth under a model variant:
/// SP searches all sequences, SR skips the query's ground truths, the path
/// variants additionally skip sequences with repeats.
pub fn most_violating(
    scores: &ChainScores,
    truths: &[Trajectory],
    variant: Variant,
    truth: &Trajectory,
    max_expansions: usize,
) -> Result<(Trajectory, f64)> {
    let augmented = loss_augment(scores, truth)?;
    let predicate = match (variant.excludes_truths(), variant.paths_only()) {
        (false, false) => SequencePredicate::Any,
        (true, false) => SequencePredicate::NotIn(truths),
        (false, true) => SequencePredicate::Path,
        (true, true) => SequencePredicate::PathAndNotIn(truths),
    };
    let outcome = list_viterbi(&augmented, 1, predicate, max_expansions);
    outcome.items.into_iter().next().ok_or(Error::SearchExhausted {
        query: scores.query(),
        expansions: outcome.expansions,
    })
}
