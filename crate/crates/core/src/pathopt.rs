//! Loop-free path decoding.
//!
//! The exact engine is a subset dynamic program: the value of a partial path
//! depends only on the set of visited POIs and the last POI, so a backward
//! table over `(visited set, last POI)` gives the best completion of any
//! prefix. Top-k paths are enumerated by partitioning the remaining search
//! space around each popped path, the same bookkeeping the list Viterbi
//! decoder uses, with the subset table in place of the backward chain table.
//!
//! For instances beyond the engine's memory budget, [`IlpModel`] writes the
//! Miller–Tucker–Zemlin integer program in CPLEX LP format for an external
//! solver.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::{list_viterbi, SequencePredicate};
use crate::domain::{add_scores, is_neg_inf, ChainScores, PoiId, Query, Trajectory};
use crate::error::{Error, Result};

/// Largest POI universe the subset DP accepts.
pub const MAX_EXACT_POIS: usize = 24;

/// Largest number of `(visited set, last POI)` states the subset DP will
/// allocate.
pub const MAX_EXACT_STATES: usize = 1 << 25;

/// Query length from which prediction switches to the exact path engine.
pub const DEFAULT_ILP_THRESHOLD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    /// Serial list Viterbi with the path predicate.
    Slva,
    /// Subset dynamic program (or an exported integer program).
    ExactPath,
}

/// Picks the exact engine for queries of length at least `threshold`.
pub fn select_engine(query: &Query, threshold: usize) -> Engine {
    if query.length >= threshold {
        Engine::ExactPath
    } else {
        Engine::Slva
    }
}

/// A previously returned path that later solves must avoid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCut {
    pub forbidden: Trajectory,
}

/// Ordered paths plus whether the request was fully served.
#[derive(Debug, Clone, PartialEq)]
pub struct PathList {
    pub items: Vec<(Trajectory, f64)>,
    /// False when fewer paths exist than were requested.
    pub complete: bool,
}

fn binomials(n: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0usize; n + 2]; n + 2];
    for i in 0..=n + 1 {
        c[i][0] = 1;
        for j in 1..=i {
            c[i][j] = c[i - 1][j - 1].saturating_add(if j < i { c[i - 1][j] } else { 0 });
        }
    }
    c
}

/// Backward values `V(visited, last)` over subsets of the non-start POIs.
struct SubsetTable<'a> {
    scores: &'a ChainScores,
    /// POI id of each bit.
    bit_poi: Vec<PoiId>,
    /// Bit of each POI id; `None` for the start.
    poi_bit: Vec<Option<usize>>,
    binom: Vec<Vec<usize>>,
    /// `layers[t]` holds states with `t` visited non-start POIs.
    layers: Vec<Vec<f64>>,
}

impl<'a> SubsetTable<'a> {
    fn build(scores: &'a ChainScores) -> Result<Self> {
        let m = scores.n_pois();
        let l = scores.length();
        if l > m {
            return Err(Error::Infeasible { length: l, n_pois: m });
        }
        if m > MAX_EXACT_POIS {
            return Err(Error::TooLarge { n_pois: m, max: MAX_EXACT_POIS });
        }
        let n = m - 1;
        let binom = binomials(n);
        let states: usize = (1..l).map(|t| binom[n][t].saturating_mul(t)).fold(0, usize::saturating_add);
        if states > MAX_EXACT_STATES {
            return Err(Error::TooLarge { n_pois: m, max: MAX_EXACT_POIS });
        }
        let s = scores.start();
        let bit_poi: Vec<PoiId> = (0..m).filter(|&p| p != s).collect();
        let mut poi_bit = vec![None; m];
        for (b, &p) in bit_poi.iter().enumerate() {
            poi_bit[p] = Some(b);
        }
        let mut table = SubsetTable {
            scores,
            bit_poi,
            poi_bit,
            binom,
            layers: (0..l).map(|t| vec![0.0; if t == 0 { 1 } else { 0 }]).collect(),
        };
        for t in 1..l {
            table.layers[t] = vec![0.0; table.binom[n][t] * t];
        }
        // layer l-1 is terminal (all zeros); fill the rest backwards
        for t in (0..l.saturating_sub(1)).rev() {
            let mut layer = std::mem::take(&mut table.layers[t]);
            if t == 0 {
                layer[0] = table.extend_value(0, s, 0);
            } else {
                for mask in subsets(n, t) {
                    let base = table.rank(mask) * t;
                    for (i, bit) in bits(mask).enumerate() {
                        layer[base + i] = table.extend_value(mask, table.bit_poi[bit], t);
                    }
                }
            }
            table.layers[t] = layer;
        }
        Ok(table)
    }

    fn rank(&self, mask: u32) -> usize {
        bits(mask).enumerate().map(|(i, b)| self.binom[b][i + 1]).sum()
    }

    /// `V(mask, last)` for a state whose last POI sits at position `popcount(mask)`.
    fn value(&self, mask: u32, last: PoiId) -> f64 {
        let t = mask.count_ones() as usize;
        if t == 0 {
            return self.layers[0][0];
        }
        let bit = self.poi_bit[last].expect("start cannot be the last POI of a longer prefix");
        let within = (mask & ((1u32 << bit) - 1)).count_ones() as usize;
        self.layers[t][self.rank(mask) * t + within]
    }

    /// Best extension value from `last` at position `t` given visited `mask`.
    fn extend_value(&self, mask: u32, last: PoiId, t: usize) -> f64 {
        let mut best = crate::domain::NEG_INF;
        for (b, &q) in self.bit_poi.iter().enumerate() {
            if mask & (1 << b) != 0 {
                continue;
            }
            best = best.max(self.step(mask | (1 << b), last, q, t + 1));
        }
        best
    }

    /// Score of appending `q` at position `t` after `last`, plus the best completion.
    fn step(&self, next_mask: u32, last: PoiId, q: PoiId, t: usize) -> f64 {
        let v = add_scores(self.scores.pairwise(last, q), self.scores.unary(t, q));
        if t + 1 == self.scores.length() {
            v
        } else {
            add_scores(v, self.value(next_mask, q))
        }
    }

    fn mask_of(&self, prefix: &[PoiId]) -> u32 {
        prefix[1..]
            .iter()
            .map(|&p| 1u32 << self.poi_bit[p].expect("path prefix revisits the start"))
            .fold(0, |a, b| a | b)
    }

    /// Lowest-id best next POI outside the prefix and `exclude`.
    fn best_next(&self, prefix: &[PoiId], exclude: &[PoiId]) -> Option<PoiId> {
        let t = prefix.len();
        let mask = self.mask_of(prefix);
        let last = prefix[t - 1];
        let mut best: Option<(PoiId, f64)> = None;
        for q in 0..self.scores.n_pois() {
            let Some(b) = self.poi_bit[q] else { continue };
            if mask & (1 << b) != 0 || exclude.contains(&q) {
                continue;
            }
            let v = self.step(mask | (1 << b), last, q, t);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((q, v));
            }
        }
        best.filter(|(_, v)| !is_neg_inf(*v)).map(|(q, _)| q)
    }

    fn complete(&self, prefix: &mut Vec<PoiId>) -> bool {
        while prefix.len() < self.scores.length() {
            match self.best_next(prefix, &[]) {
                Some(q) => prefix.push(q),
                None => return false,
            }
        }
        true
    }
}

/// Masks with `k` of the low `n` bits set, in increasing order.
fn subsets(n: usize, k: usize) -> impl Iterator<Item = u32> {
    let limit = 1u64 << n;
    let mut cur: u64 = if k == 0 { 0 } else { (1u64 << k) - 1 };
    let mut done = k > n;
    std::iter::from_fn(move || {
        if done || cur >= limit {
            return None;
        }
        let out = cur as u32;
        if cur == 0 {
            done = true;
        } else {
            // Gosper's hack
            let c = cur & cur.wrapping_neg();
            let r = cur + c;
            cur = (((r ^ cur) >> 2) / c) | r;
        }
        Some(out)
    })
}

fn bits(mask: u32) -> impl Iterator<Item = usize> {
    let mut m = mask;
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let b = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(b)
        }
    })
}

struct Candidate {
    score: f64,
    sequence: Vec<PoiId>,
    partition_index: Option<usize>,
    exclude_set: Vec<PoiId>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Highest-scoring path (no repeated POI) of the query's length. Ties go to
/// the lexicographically smallest path.
pub fn best_path_exact(scores: &ChainScores) -> Result<(Trajectory, f64)> {
    let table = SubsetTable::build(scores)?;
    let mut seq = vec![scores.start()];
    if !table.complete(&mut seq) {
        return Err(Error::Infeasible { length: scores.length(), n_pois: scores.n_pois() });
    }
    let score = scores.score(&seq);
    Ok((Trajectory::new(seq), score))
}

/// The `k` best paths that are not cut, in non-increasing score order.
pub fn top_k_paths_exact(scores: &ChainScores, k: usize, cuts: &[PathCut]) -> Result<PathList> {
    let l = scores.length();
    for cut in cuts {
        let y = &cut.forbidden;
        if y.len() != l || !y.is_path() || y.pois().iter().any(|&p| p >= scores.n_pois()) {
            return Err(Error::InvalidInput(format!("cut {:?} is not a path of length {l}", y.pois())));
        }
    }
    let table = SubsetTable::build(scores)?;
    let mut items = Vec::new();
    if k == 0 {
        return Ok(PathList { items, complete: true });
    }
    let mut seed = vec![scores.start()];
    if !table.complete(&mut seed) {
        return Ok(PathList { items, complete: false });
    }
    let mut heap = BinaryHeap::new();
    heap.push(Candidate {
        score: scores.score(&seed),
        sequence: seed,
        partition_index: None,
        exclude_set: Vec::new(),
    });
    while let Some(entry) = heap.pop() {
        if !cuts.iter().any(|c| c.forbidden.pois() == entry.sequence.as_slice()) {
            items.push((Trajectory::new(entry.sequence.clone()), entry.score));
            if items.len() == k {
                return Ok(PathList { items, complete: true });
            }
        }
        let first = entry.partition_index.unwrap_or(1);
        for t in first..l {
            let mut exclude = if t == first { entry.exclude_set.clone() } else { Vec::new() };
            exclude.push(entry.sequence[t]);
            let prefix = &entry.sequence[..t];
            let Some(choice) = table.best_next(prefix, &exclude) else { continue };
            let mut seq = Vec::with_capacity(l);
            seq.extend_from_slice(prefix);
            seq.push(choice);
            if !table.complete(&mut seq) {
                continue;
            }
            heap.push(Candidate {
                score: scores.score(&seq),
                sequence: seq,
                partition_index: Some(t),
                exclude_set: exclude,
            });
        }
    }
    Ok(PathList { items, complete: false })
}

/// Top-k paths routed by [`select_engine`]. Oversized exact instances fall
/// back to list Viterbi, and an exhausted list Viterbi search falls back to
/// the exact engine.
pub fn top_k_paths(scores: &ChainScores, k: usize, ilp_threshold: usize, max_expansions: usize) -> Result<PathList> {
    if scores.length() > scores.n_pois() {
        return Err(Error::Infeasible { length: scores.length(), n_pois: scores.n_pois() });
    }
    if select_engine(&scores.query(), ilp_threshold) == Engine::ExactPath {
        match top_k_paths_exact(scores, k, &[]) {
            Err(Error::TooLarge { .. }) => {}
            other => return other,
        }
    }
    let outcome = list_viterbi(scores, k, SequencePredicate::Path, max_expansions);
    if outcome.exhausted && outcome.expansions >= max_expansions {
        match top_k_paths_exact(scores, k, &[]) {
            Err(Error::TooLarge { .. }) => {}
            other => return other,
        }
    }
    Ok(PathList { complete: !outcome.exhausted, items: outcome.items })
}

/// Number of distinct paths of length `l` from a fixed start over `m` POIs:
/// `(m-1)! / (m-l)!`.
pub fn path_count(m: usize, l: usize) -> u128 {
    if l == 0 || l > m {
        return 0;
    }
    (0..l - 1).map(|i| (m - 1 - i) as u128).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    /// Transition `j -> k` is used.
    U(PoiId, PoiId),
    /// Path terminates at `j`.
    Z(PoiId),
    /// MTZ order variable of `j`.
    V(PoiId),
}

impl Var {
    pub fn name(&self) -> String {
        match self {
            Var::U(j, k) => format!("u_{j}_{k}"),
            Var::Z(j) => format!("z_{j}"),
            Var::V(j) => format!("v_{j}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(Var, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    fn new(name: String, terms: impl IntoIterator<Item = (Var, f64)>, sense: Sense, rhs: f64) -> Self {
        // merge duplicates, drop cancelled terms, keep a stable order
        let mut merged: BTreeMap<Var, f64> = BTreeMap::new();
        for (v, c) in terms {
            *merged.entry(v).or_insert(0.0) += c;
        }
        let terms = merged.into_iter().filter(|(_, c)| *c != 0.0).collect();
        Constraint { name, terms, sense, rhs }
    }

    pub fn is_satisfied(&self, value: impl Fn(Var) -> f64) -> bool {
        let lhs: f64 = self.terms.iter().map(|(v, c)| c * value(*v)).sum();
        match self.sense {
            Sense::Le => lhs <= self.rhs + 1e-9,
            Sense::Eq => (lhs - self.rhs).abs() <= 1e-9,
        }
    }
}

/// The path-decoding integer program over transition variables `u`,
/// terminal indicators `z` and MTZ order variables `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpModel {
    pub n_pois: usize,
    pub start: PoiId,
    pub length: usize,
    /// Objective coefficient of `u_j_k`, row-major.
    pub objective: Vec<f64>,
    /// Constant dropped from the objective (the order-insensitive loss offset).
    pub objective_constant: f64,
    pub constraints: Vec<Constraint>,
}

impl IlpModel {
    /// Builds the program for `scores`. The unary score of the first free
    /// position serves every position, matching position-tied weights; the
    /// start's own unary term is a constant and is dropped.
    ///
    /// With `loss_against`, the objective also carries the order-insensitive
    /// loss `sum_{j>=2} (1 - sum_k u_{k, y_j})`, which is linear in `u`.
    pub fn build(scores: &ChainScores, cuts: &[PathCut], loss_against: Option<&Trajectory>) -> Result<Self> {
        let m = scores.n_pois();
        let l = scores.length();
        let s = scores.start();
        let mut objective = vec![0.0; m * m];
        for j in 0..m {
            for k in 0..m {
                let unary = if l > 1 { scores.unary(1, k) } else { 0.0 };
                objective[j * m + k] = unary + scores.pairwise(j, k);
            }
        }
        let mut objective_constant = 0.0;
        if let Some(y) = loss_against {
            if !y.conforms_to(&scores.query()) || y.pois().iter().any(|&p| p >= m) {
                return Err(Error::NonConforming(scores.query()));
            }
            for &yj in &y.pois()[1..] {
                objective_constant += 1.0;
                for k in 0..m {
                    objective[k * m + yj] -= 1.0;
                }
            }
        }

        let others: Vec<PoiId> = (0..m).filter(|&p| p != s).collect();
        let mut cons = vec![
            Constraint::new("start_out".into(), others.iter().map(|&k| (Var::U(s, k), 1.0)), Sense::Eq, 1.0),
            Constraint::new("start_in".into(), others.iter().map(|&j| (Var::U(j, s), 1.0)), Sense::Eq, 0.0),
            Constraint::new("start_term".into(), [(Var::Z(s), 1.0)], Sense::Eq, 0.0),
            Constraint::new(
                "transitions".into(),
                (0..m).flat_map(|j| (0..m).map(move |k| (Var::U(j, k), 1.0))),
                Sense::Eq,
                (l - 1) as f64,
            ),
            Constraint::new("no_self".into(), (0..m).map(|j| (Var::U(j, j), 1.0)), Sense::Eq, 0.0),
        ];
        if l == 1 {
            // a lone start has no outgoing transition
            cons[0] = Constraint::new("start_out".into(), others.iter().map(|&k| (Var::U(s, k), 1.0)), Sense::Eq, 0.0);
        }
        for &i in &others {
            cons.push(Constraint::new(
                format!("indeg_{i}"),
                (0..m).map(|j| (Var::U(j, i), 1.0)),
                Sense::Le,
                1.0,
            ));
            let inflow = (0..m).map(|j| (Var::U(j, i), 1.0));
            let outflow = others.iter().map(|&k| (Var::U(i, k), -1.0));
            cons.push(Constraint::new(
                format!("flow_{i}"),
                inflow.chain(outflow).chain([(Var::Z(i), -1.0)]),
                Sense::Eq,
                0.0,
            ));
        }
        for &j in &others {
            for &k in &others {
                if j != k {
                    cons.push(Constraint::new(
                        format!("mtz_{j}_{k}"),
                        [(Var::V(j), 1.0), (Var::V(k), -1.0), (Var::U(j, k), (m - 1) as f64)],
                        Sense::Le,
                        m as f64 - 2.0,
                    ));
                }
            }
        }
        for (c, cut) in cuts.iter().enumerate() {
            let y = cut.forbidden.pois();
            if y.len() != l || y.iter().any(|&p| p >= m) {
                return Err(Error::InvalidInput(format!("cut {y:?} is not a sequence of length {l}")));
            }
            cons.push(Constraint::new(
                format!("cut_{}", c + 1),
                y.windows(2).map(|w| (Var::U(w[0], w[1]), 1.0)),
                Sense::Le,
                l as f64 - 2.0,
            ));
        }
        Ok(IlpModel {
            n_pois: m,
            start: s,
            length: l,
            objective,
            objective_constant,
            constraints: cons,
        })
    }

    /// Variable assignment encoding `path`.
    pub fn assignment(&self, path: &Trajectory) -> impl Fn(Var) -> f64 + '_ {
        let seq = path.pois().to_vec();
        move |v| match v {
            Var::U(j, k) => seq.windows(2).any(|w| w[0] == j && w[1] == k) as u8 as f64,
            Var::Z(j) => (seq.len() > 1 && seq.last() == Some(&j)) as u8 as f64,
            Var::V(j) => seq.iter().position(|&p| p == j).unwrap_or(0) as f64,
        }
    }

    /// Objective value of `path`, constant excluded.
    pub fn objective_value(&self, path: &Trajectory) -> f64 {
        path.pois()
            .windows(2)
            .map(|w| self.objective[w[0] * self.n_pois + w[1]])
            .sum()
    }

    pub fn is_feasible(&self, path: &Trajectory) -> bool {
        let value = self.assignment(path);
        self.constraints.iter().all(|c| c.is_satisfied(&value))
    }

    /// CPLEX LP text. Variables appear row-major `u`, then `z`, then `v`.
    pub fn to_lp(&self) -> String {
        let m = self.n_pois;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "\\ path model: pois={m} start={} length={} cuts={}",
            self.start,
            self.length,
            self.constraints.iter().filter(|c| c.name.starts_with("cut_")).count()
        );
        if self.objective_constant != 0.0 {
            let _ = writeln!(out, "\\ objective constant: {}", self.objective_constant);
        }
        out.push_str("Maximize\n obj:");
        let obj_terms: Vec<(Var, f64)> = (0..m)
            .flat_map(|j| (0..m).map(move |k| (j, k)))
            .map(|(j, k)| (Var::U(j, k), self.objective[j * m + k]))
            .collect();
        write_terms(&mut out, &obj_terms, true);
        out.push('\n');
        out.push_str("Subject To\n");
        for c in &self.constraints {
            let _ = write!(out, " {}:", c.name);
            write_terms(&mut out, &c.terms, true);
            let sense = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {sense} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..m {
            let _ = writeln!(out, " 0 <= v_{j} <= {}", m - 1);
        }
        out.push_str("Binaries\n");
        let binaries: Vec<String> = (0..m)
            .flat_map(|j| (0..m).map(move |k| Var::U(j, k).name()))
            .chain((0..m).map(|j| Var::Z(j).name()))
            .collect();
        write_names(&mut out, &binaries);
        out.push_str("Generals\n");
        let generals: Vec<String> = (0..m).map(|j| Var::V(j).name()).collect();
        write_names(&mut out, &generals);
        out.push_str("End\n");
        out
    }

    pub fn write_lp(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_lp())?;
        Ok(())
    }
}

const TERMS_PER_LINE: usize = 8;

fn write_terms(out: &mut String, terms: &[(Var, f64)], keep_zero: bool) {
    let mut written = 0;
    for (v, c) in terms {
        if *c == 0.0 && !keep_zero {
            continue;
        }
        if written > 0 && written % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if c.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", c.abs(), v.name());
        written += 1;
    }
    if written == 0 {
        out.push_str(" 0 u_0_0");
    }
}

fn write_names(out: &mut String, names: &[String]) {
    for chunk in names.chunks(TERMS_PER_LINE * 2) {
        let _ = writeln!(out, " {}", chunk.join(" "));
    }
}

/// Writes the program for `scores` with one cut per entry of `cuts`.
pub fn export_ilp(scores: &ChainScores, cuts: &[PathCut], out: &Path) -> Result<IlpModel> {
    let model = IlpModel::build(scores, cuts, None)?;
    model.write_lp(out)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{viterbi, DEFAULT_MAX_EXPANSIONS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// All paths sorted by score descending, then lexicographically.
    fn enumerate_paths(scores: &ChainScores) -> Vec<(Vec<PoiId>, f64)> {
        fn rec(scores: &ChainScores, seq: &mut Vec<PoiId>, out: &mut Vec<(Vec<PoiId>, f64)>) {
            if seq.len() == scores.length() {
                out.push((seq.clone(), scores.score(seq)));
                return;
            }
            for p in 0..scores.n_pois() {
                if !seq.contains(&p) {
                    seq.push(p);
                    rec(scores, seq, out);
                    seq.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(scores, &mut vec![scores.start()], &mut out);
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    fn random_scores(rng: &mut ChaCha8Rng, m: usize, l: usize) -> ChainScores {
        let start = rng.gen_range(0..m);
        let unary: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pair: Vec<f64> = (0..m * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ChainScores::from_tied(Query::new(start, l), &unary, pair)
    }

    #[test]
    fn gosper_enumerates_all_subsets() {
        let binom = binomials(6);
        for (k, &count) in binom[6].iter().enumerate().take(7) {
            let v: Vec<u32> = subsets(6, k).collect();
            assert_eq!(v.len(), count);
            assert!(v.iter().all(|m| m.count_ones() as usize == k));
            assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn colex_rank_is_dense() {
        let scores = ChainScores::from_tied(Query::new(0, 3), &[0.0; 7], vec![0.0; 49]);
        let table = SubsetTable::build(&scores).unwrap();
        for k in 1..=4 {
            let mut ranks: Vec<usize> = subsets(6, k).map(|m| table.rank(m)).collect();
            ranks.sort();
            assert_eq!(ranks, (0..table.binom[6][k]).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_transition_is_argmax_over_others() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cs = random_scores(&mut rng, 6, 2);
        let s = cs.start();
        let best = (0..6)
            .filter(|&p| p != s)
            .max_by(|&a, &b| (cs.pairwise(s, a) + cs.unary(1, a)).total_cmp(&(cs.pairwise(s, b) + cs.unary(1, b))))
            .unwrap();
        assert_eq!(best_path_exact(&cs).unwrap().0, Trajectory::new(vec![s, best]));
    }

    #[test]
    fn matches_slva_and_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let m = rng.gen_range(2..=8);
            let l = rng.gen_range(1..=m.min(6));
            let cs = random_scores(&mut rng, m, l);
            let all = enumerate_paths(&cs);
            let (exact, score) = best_path_exact(&cs).unwrap();
            let slva = list_viterbi(&cs, 1, SequencePredicate::Path, DEFAULT_MAX_EXPANSIONS);
            assert_eq!(exact.0, all[0].0);
            assert_eq!(slva.items[0].0, exact);
            assert!((score - all[0].1).abs() < 1e-12);
        }
    }

    #[test]
    fn loops_in_viterbi_are_removed() {
        let mut pair = vec![0.0; 16];
        pair[1] = 3.0; // 0 -> 1
        pair[5] = 3.0; // 1 -> 1
        let cs = ChainScores::from_tied(Query::new(0, 3), &[0.0, 1.0, 0.0, 0.5], pair);
        assert!(!viterbi(&cs).0.is_path());
        let (best, _) = best_path_exact(&cs).unwrap();
        assert!(best.is_path());
        assert_eq!(best.0, enumerate_paths(&cs)[0].0);
    }

    #[test]
    fn enumerates_every_path_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cs = random_scores(&mut rng, 4, 3);
        let all = enumerate_paths(&cs);
        assert_eq!(all.len() as u128, path_count(4, 3));
        let out = top_k_paths_exact(&cs, 6, &[]).unwrap();
        assert!(out.complete);
        let got: Vec<Vec<PoiId>> = out.items.iter().map(|(t, _)| t.0.clone()).collect();
        assert_eq!(got, all.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>());
        let over = top_k_paths_exact(&cs, 50, &[]).unwrap();
        assert!(!over.complete);
        assert_eq!(over.items.len(), 6);
    }

    #[test]
    fn cut_on_best_yields_runner_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let cs = random_scores(&mut rng, 6, 4);
            let all = enumerate_paths(&cs);
            let cut = PathCut { forbidden: Trajectory::new(all[0].0.clone()) };
            let out = top_k_paths_exact(&cs, 1, &[cut]).unwrap();
            assert_eq!(out.items[0].0 .0, all[1].0);
            assert_eq!(top_k_paths_exact(&cs, 1, &[]).unwrap().items[0], best_path_exact(&cs).unwrap());
        }
    }

    #[test]
    fn zero_scores_give_lexicographic_paths() {
        let cs = ChainScores::from_tied(Query::new(2, 3), &[0.0; 4], vec![0.0; 16]);
        let out = top_k_paths_exact(&cs, 6, &[]).unwrap();
        let got: Vec<Vec<PoiId>> = out.items.iter().map(|(t, _)| t.0.clone()).collect();
        assert_eq!(got, vec![vec![2, 0, 1], vec![2, 0, 3], vec![2, 1, 0], vec![2, 1, 3], vec![2, 3, 0], vec![2, 3, 1]]);
    }

    #[test]
    fn errors_for_infeasible_and_oversized() {
        let cs = ChainScores::from_tied(Query::new(0, 4), &[0.0; 3], vec![0.0; 9]);
        assert!(matches!(best_path_exact(&cs), Err(Error::Infeasible { .. })));
        let cs = ChainScores::from_tied(Query::new(0, 3), &[0.0; 25], vec![0.0; 625]);
        assert!(matches!(best_path_exact(&cs), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn routing_agrees_across_engines() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let cs = random_scores(&mut rng, 6, 4);
            let slva = top_k_paths(&cs, 5, DEFAULT_ILP_THRESHOLD, DEFAULT_MAX_EXPANSIONS).unwrap();
            let exact = top_k_paths(&cs, 5, 2, DEFAULT_MAX_EXPANSIONS).unwrap();
            let starved = top_k_paths(&cs, 5, DEFAULT_ILP_THRESHOLD, 3).unwrap();
            assert_eq!(slva, exact);
            assert_eq!(starved, exact);
        }
        let cs = ChainScores::from_tied(Query::new(0, 5), &[0.0; 3], vec![0.0; 9]);
        assert!(matches!(top_k_paths(&cs, 1, 10, 100), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn path_count_law() {
        assert_eq!(path_count(4, 3), 6);
        assert_eq!(path_count(5, 1), 1);
        assert_eq!(path_count(3, 4), 0);
        assert_eq!(path_count(8, 6), 7 * 6 * 5 * 4 * 3);
    }

    #[test]
    fn engine_selection() {
        assert_eq!(select_engine(&Query::new(0, 3), DEFAULT_ILP_THRESHOLD), Engine::Slva);
        assert_eq!(select_engine(&Query::new(0, 10), DEFAULT_ILP_THRESHOLD), Engine::ExactPath);
        assert_eq!(select_engine(&Query::new(0, 3), 2), Engine::ExactPath);
    }

    #[test]
    fn ilp_variable_and_constraint_counts() {
        let cs = ChainScores::from_tied(Query::new(0, 2), &[0.0, 1.0, 2.0], vec![0.5; 9]);
        let model = IlpModel::build(&cs, &[], None).unwrap();
        let lp = model.to_lp();
        let binaries = lp.split("Binaries\n").nth(1).unwrap().split("Generals").next().unwrap();
        assert_eq!(binaries.split_whitespace().filter(|n| n.starts_with("u_")).count(), 9);
        assert_eq!(binaries.split_whitespace().filter(|n| n.starts_with("z_")).count(), 3);
        let generals = lp.split("Generals\n").nth(1).unwrap();
        assert_eq!(generals.split_whitespace().filter(|n| n.starts_with("v_")).count(), 3);
        let transitions = model.constraints.iter().find(|c| c.name == "transitions").unwrap();
        assert_eq!(transitions.terms.len(), 9);
        assert_eq!(transitions.rhs, 1.0);
        assert!(lp.contains(" transitions: + 1 u_0_0 + 1 u_0_1"));
    }

    #[test]
    fn cut_row_is_emitted() {
        let cs = ChainScores::from_tied(Query::new(0, 3), &[0.0; 4], vec![0.0; 16]);
        let cut = PathCut { forbidden: Trajectory::new(vec![0, 2, 1]) };
        let lp = IlpModel::build(&cs, &[cut], None).unwrap().to_lp();
        assert!(lp.contains(" cut_1: + 1 u_0_2 + 1 u_2_1 <= 1\n"), "{lp}");
    }

    #[test]
    fn ilp_feasible_set_is_the_path_set() {
        // Every path satisfies the rows and its objective equals the chain
        // score minus the start term; every looped sequence violates a row.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cs = random_scores(&mut rng, 5, 4);
        let cut_path = Trajectory::new(enumerate_paths(&cs)[0].0.clone());
        let model = IlpModel::build(&cs, &[PathCut { forbidden: cut_path.clone() }], None).unwrap();
        let s = cs.start();
        for code in 0..125usize {
            let seq = vec![s, code % 5, (code / 5) % 5, code / 25];
            let y = Trajectory::new(seq.clone());
            let feasible = y.is_path() && y != cut_path;
            assert_eq!(model.is_feasible(&y), feasible, "{seq:?}");
            if y.is_path() {
                assert!((model.objective_value(&y) - cs.score(&seq)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn order_insensitive_loss_is_linear() {
        let cs = ChainScores::from_tied(Query::new(0, 3), &[0.0; 4], vec![0.0; 16]);
        let truth = Trajectory::new(vec![0, 1, 2]);
        let model = IlpModel::build(&cs, &[], Some(&truth)).unwrap();
        for (y, misses) in [(vec![0, 1, 2], 0.0), (vec![0, 2, 1], 0.0), (vec![0, 3, 1], 1.0), (vec![0, 3, 2], 1.0)] {
            let y = Trajectory::new(y);
            assert_eq!(model.objective_value(&y) + model.objective_constant, misses);
        }
    }
}
