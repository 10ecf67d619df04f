//! Max-margin training of chain models and the ranking baselines.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{loss_augment, most_violating, DEFAULT_MAX_EXPANSIONS};
use crate::domain::{ChainScores, Dataset, Model, PoiId, PoiTable, Query, Trajectory, Variant};
use crate::error::{Error, Result};
use crate::features::{
    add_transition_counts, build_chain_scores, fit_normalizer, pairwise_score_matrix, unary_features, unary_matrix,
    unary_scores, FeatureMeta,
};
use crate::pathopt::{select_engine, top_k_paths, top_k_paths_exact, Engine, PathCut, PathList, DEFAULT_ILP_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Formulation {
    /// One hinge term per (query, ground truth) pair.
    NSlack,
    /// A single hinge on the averaged margins.
    OneSlack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub reg_c: f64,
    pub variant: Variant,
    pub max_epochs: usize,
    /// Stop once every normalised violation is at most this.
    pub tol: f64,
    pub formulation: Formulation,
    pub max_expansions: usize,
    pub ilp_threshold: usize,
}

impl TrainConfig {
    pub fn new(variant: Variant, reg_c: f64) -> Self {
        TrainConfig {
            reg_c,
            variant,
            max_epochs: 200,
            tol: 1e-2,
            formulation: Formulation::NSlack,
            max_expansions: DEFAULT_MAX_EXPANSIONS,
            ilp_threshold: DEFAULT_ILP_THRESHOLD,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Largest hinge of the epoch divided by the example's maximum Hamming loss.
    pub max_violation: f64,
    /// `0.5 |w|^2 + C/N * sum of hinges` at the epoch's weights.
    pub objective: f64,
    pub seconds: f64,
    /// Generated constraint sequences that repeat a POI.
    pub looped_constraints: usize,
    /// Generated constraint sequences that are ground truths of their query.
    pub truth_constraints: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest objective seen.
    pub model: Model,
    pub epochs: Vec<EpochStats>,
    pub converged: bool,
}

struct Prepared {
    query: Query,
    /// Standardised unary features indexed by POI.
    phi: Vec<Vec<f64>>,
    truths: Vec<Trajectory>,
}

fn joint_features(prep: &Prepared, y: &Trajectory, table: &PoiTable, meta: &FeatureMeta) -> Vec<f64> {
    let du = meta.unary_dim();
    let mut psi = vec![0.0; meta.joint_dim()];
    for &p in &y.pois()[1..] {
        for (acc, x) in psi[..du].iter_mut().zip(&prep.phi[p]) {
            *acc += x;
        }
    }
    add_transition_counts(&mut psi[du..], y, table, meta, 1.0);
    psi
}

fn constraint_cuts(truths: &[Trajectory], length: usize) -> Vec<PathCut> {
    truths
        .iter()
        .filter(|t| t.is_path() && t.len() == length)
        .map(|t| PathCut { forbidden: t.clone() })
        .collect()
}

/// Loss-augmented argmax over the variant's feasible set, or `None` when
/// that set is empty.
fn find_constraint(
    scores: &ChainScores,
    truths: &[Trajectory],
    truth: &Trajectory,
    config: &TrainConfig,
) -> Result<Option<(Trajectory, f64)>> {
    let variant = config.variant;
    let exact = || -> Result<Option<(Trajectory, f64)>> {
        let augmented = loss_augment(scores, truth)?;
        let cuts = if variant.excludes_truths() { constraint_cuts(truths, scores.length()) } else { Vec::new() };
        Ok(top_k_paths_exact(&augmented, 1, &cuts)?.items.into_iter().next())
    };
    if variant.paths_only() && select_engine(&scores.query(), config.ilp_threshold) == Engine::ExactPath {
        match exact() {
            Err(Error::TooLarge { .. }) => {}
            other => return other,
        }
    }
    match most_violating(scores, truths, variant, truth, config.max_expansions) {
        Ok(found) => Ok(Some(found)),
        Err(Error::SearchExhausted { expansions, .. }) if expansions < config.max_expansions => Ok(None),
        Err(Error::SearchExhausted { query, expansions }) if variant.paths_only() => match exact() {
            Err(Error::TooLarge { .. }) => Err(Error::SearchExhausted { query, expansions }),
            other => other,
        },
        Err(e) => Err(e),
    }
}

struct Generated {
    example: usize,
    /// `(sequence, augmented score)` of the constraint, if any exists.
    found: Option<(Trajectory, f64)>,
    truth_score: f64,
}

/// Trains a structured SVM by full-batch subgradient descent on
/// `lambda/2 |w|^2 + 1/N * sum_ij hinge_ij` with `lambda = 1/C` and step
/// `1/(lambda t)`. Every ground truth of every query contributes one term.
pub fn train_structured(train: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.reg_c.is_nan() || config.reg_c <= 0.0 || !config.reg_c.is_finite() {
        return Err(Error::NonPositiveC(config.reg_c));
    }
    if config.variant == Variant::PoiRank {
        return Err(Error::InvalidInput("PoiRank is trained with train_poirank".into()));
    }
    if train.examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(ex) = train.examples.iter().find(|e| e.query.length < 2) {
        return Err(Error::InvalidInput(format!("query {} is shorter than 2", ex.query)));
    }
    let table = &train.pois;
    let meta = fit_normalizer(train)?;
    let prepared: Vec<Prepared> = train
        .examples
        .iter()
        .map(|ex| Prepared {
            query: ex.query,
            phi: unary_matrix(&ex.query, table, &meta),
            truths: ex.trajectories.clone(),
        })
        .collect();
    let mut truth_psi = Vec::new();
    let mut pairs = Vec::new();
    for (i, prep) in prepared.iter().enumerate() {
        for (j, y) in prep.truths.iter().enumerate() {
            if !y.conforms_to(&prep.query) || y.pois().iter().any(|&p| !table.contains(p)) {
                return Err(Error::NonConforming(prep.query));
            }
            truth_psi.push(joint_features(prep, y, table, &meta));
            pairs.push((i, j));
        }
    }
    let n = pairs.len() as f64;
    let lambda = 1.0 / config.reg_c;
    let mut model = Model::zeros(meta.clone(), config.variant, config.reg_c);
    let mut w = vec![0.0; meta.joint_dim()];
    let mut best = (f64::INFINITY, w.clone());
    let mut epochs = Vec::new();
    let mut converged = false;
    let clock = Instant::now();

    for epoch in 1..=config.max_epochs {
        model.set_weight_vector(&w);
        let pairwise = pairwise_score_matrix(&model, table);
        let scores: Vec<ChainScores> = prepared
            .iter()
            .map(|p| ChainScores::from_tied(p.query, &unary_scores(&model, &p.phi), pairwise.clone()))
            .collect();
        let generated: Vec<Generated> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let prep = &prepared[i];
                let truth = &prep.truths[j];
                let found = find_constraint(&scores[i], &prep.truths, truth, config)?;
                Ok(Generated { example: i, found, truth_score: scores[i].score(truth.pois()) })
            })
            .collect::<Result<_>>()?;

        let mut grad_sum = vec![0.0; w.len()];
        let mut hinge_sum = 0.0;
        let mut margin_sum = 0.0;
        let mut normalised_sum = 0.0;
        let mut max_violation: f64 = 0.0;
        let mut looped = 0;
        let mut truthy = 0;
        for (g, psi_y) in generated.iter().zip(&truth_psi) {
            let prep = &prepared[g.example];
            let Some((ybar, aug)) = &g.found else { continue };
            looped += usize::from(!ybar.is_path());
            truthy += usize::from(prep.truths.contains(ybar));
            let margin = aug - g.truth_score;
            let scale = (prep.query.length - 1) as f64;
            max_violation = max_violation.max(margin / scale);
            margin_sum += margin;
            normalised_sum += margin / scale;
            let active = match config.formulation {
                Formulation::NSlack => margin > 0.0,
                Formulation::OneSlack => true,
            };
            if margin > 0.0 {
                hinge_sum += margin;
            }
            if active {
                let psi_bar = joint_features(prep, ybar, table, &meta);
                for ((acc, a), b) in grad_sum.iter_mut().zip(&psi_bar).zip(psi_y) {
                    *acc += a - b;
                }
            }
        }
        let norm_sq: f64 = w.iter().map(|x| x * x).sum();
        let (loss_term, violation, step_active) = match config.formulation {
            Formulation::NSlack => (hinge_sum / n, max_violation, true),
            Formulation::OneSlack => {
                let agg = margin_sum / n;
                (agg.max(0.0), (normalised_sum / n).max(0.0), agg > 0.0)
            }
        };
        let objective = config.reg_c * (0.5 * lambda * norm_sq + loss_term);
        let stats = EpochStats {
            epoch,
            max_violation: violation,
            objective,
            seconds: clock.elapsed().as_secs_f64(),
            looped_constraints: looped,
            truth_constraints: truthy,
        };
        log::debug!("epoch {epoch}: objective {objective:.6} violation {violation:.6}");
        epochs.push(stats);
        if objective < best.0 {
            best = (objective, w.clone());
        }
        if violation <= config.tol {
            converged = true;
            best = (objective, w.clone());
            break;
        }
        let eta = 1.0 / (lambda * epoch as f64);
        for (wi, gi) in w.iter_mut().zip(&grad_sum) {
            let g = lambda * *wi + if step_active { gi / n } else { 0.0 };
            *wi -= eta * g;
        }
    }
    model.set_weight_vector(&best.1);
    Ok(TrainOutcome { model, epochs, converged })
}

/// Ordered POI pairs `(p, q)` where `p` occurs in more ground truths of the
/// query than `q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankPairSet {
    pub per_query: Vec<(Query, Vec<(PoiId, PoiId)>)>,
}

impl RankPairSet {
    pub fn len(&self) -> usize {
        self.per_query.iter().map(|(_, p)| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_rank_pairs(train: &Dataset) -> RankPairSet {
    let m = train.pois.len();
    let per_query = train
        .examples
        .iter()
        .map(|ex| {
            let mut counts = vec![0usize; m];
            for y in &ex.trajectories {
                for &p in y.pois() {
                    if p < m {
                        counts[p] += 1;
                    }
                }
            }
            let mut pairs = Vec::new();
            for p in 0..m {
                for q in 0..m {
                    if counts[p] > counts[q] {
                        pairs.push((p, q));
                    }
                }
            }
            (ex.query, pairs)
        })
        .collect();
    RankPairSet { per_query }
}

const RANK_GRAD_TOL: f64 = 1e-5;
const RANK_MAX_ITERS: usize = 200;

fn rank_objective(w: &DVector<f64>, diffs: &[DVector<f64>], c: f64) -> f64 {
    0.5 * w.norm_squared() + c * diffs.iter().map(|d| (1.0 - w.dot(d)).max(0.0).powi(2)).sum::<f64>()
}

/// Unary-only ranking model minimising
/// `0.5 |w|^2 + C * sum max(0, 1 - w.(phi(p) - phi(q)))^2` over all rank
/// pairs. Uses generalised Newton steps with backtracking until the gradient
/// norm drops below `1e-5`.
pub fn train_poirank(train: &Dataset, reg_c: f64) -> Result<Model> {
    if reg_c.is_nan() || reg_c <= 0.0 || !reg_c.is_finite() {
        return Err(Error::NonPositiveC(reg_c));
    }
    let pairs = build_rank_pairs(train);
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let table = &train.pois;
    let meta = fit_normalizer(train)?;
    let dim = meta.unary_dim();
    let mut diffs = Vec::with_capacity(pairs.len());
    for (query, list) in &pairs.per_query {
        let phi: Vec<DVector<f64>> = table
            .pois
            .iter()
            .map(|p| DVector::from_vec(unary_features(p, query, table, &meta)))
            .collect();
        for &(p, q) in list {
            diffs.push(&phi[p] - &phi[q]);
        }
    }
    let mut w = DVector::zeros(dim);
    for iter in 0..RANK_MAX_ITERS {
        let mut grad = w.clone();
        let mut hess = DMatrix::identity(dim, dim);
        for d in &diffs {
            let slack = 1.0 - w.dot(d);
            if slack > 0.0 {
                grad.axpy(-2.0 * reg_c * slack, d, 1.0);
                hess.ger(2.0 * reg_c, d, d, 1.0);
            }
        }
        if grad.norm() <= RANK_GRAD_TOL {
            log::debug!("rank training converged after {iter} Newton steps");
            break;
        }
        let Some(chol) = hess.cholesky() else {
            return Err(Error::InvalidInput("singular rank Hessian".into()));
        };
        let direction = chol.solve(&grad);
        let f0 = rank_objective(&w, &diffs, reg_c);
        let decrease = grad.dot(&direction);
        let mut step = 1.0;
        loop {
            let cand = &w - step * &direction;
            if rank_objective(&cand, &diffs, reg_c) <= f0 - 1e-4 * step * decrease || step < 1e-12 {
                w = cand;
                break;
            }
            step *= 0.5;
        }
    }
    let mut model = Model::zeros(meta, Variant::PoiRank, reg_c);
    model.unary_weights = w.iter().copied().collect();
    Ok(model)
}

/// Engine settings shared by every prediction routine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub ilp_threshold: usize,
    pub max_expansions: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { ilp_threshold: DEFAULT_ILP_THRESHOLD, max_expansions: DEFAULT_MAX_EXPANSIONS }
    }
}

fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}

/// Chain scores a model assigns to `query`. Ranking models contribute
/// log-softmax unary scores and no transition scores.
pub fn model_chain_scores(model: &Model, query: &Query, table: &PoiTable) -> Result<ChainScores> {
    if model.variant != Variant::PoiRank {
        return build_chain_scores(model, query, table);
    }
    model.feature_meta.check_table(table)?;
    if !table.contains(query.start) || query.length == 0 {
        return Err(Error::InvalidInput(format!("query {query} is not valid for this POI table")));
    }
    let phi = unary_matrix(query, table, &model.feature_meta);
    let unary = log_softmax(&unary_scores(model, &phi));
    let m = table.len();
    Ok(ChainScores::from_tied(*query, &unary, vec![0.0; m * m]))
}

/// Top-k loop-free paths under `model`.
pub fn predict_topk(model: &Model, query: &Query, k: usize, table: &PoiTable, config: &PredictConfig) -> Result<PathList> {
    if query.length > table.len() {
        return Err(Error::Infeasible { length: query.length, n_pois: table.len() });
    }
    let scores = model_chain_scores(model, query, table)?;
    top_k_paths(&scores, k, config.ilp_threshold, config.max_expansions)
}

/// Number of training trajectories that visit each POI.
pub fn popularity_counts(train: &Dataset) -> Vec<f64> {
    let mut counts = vec![0.0; train.pois.len()];
    for ex in &train.examples {
        for y in &ex.trajectories {
            let mut seen: Vec<PoiId> = y.pois().to_vec();
            seen.sort_unstable();
            seen.dedup();
            for p in seen {
                if p < counts.len() {
                    counts[p] += 1.0;
                }
            }
        }
    }
    counts
}

/// Top-k paths scored by accumulated training popularity.
pub fn baseline_popularity(train: &Dataset, query: &Query, k: usize, config: &PredictConfig) -> Result<PathList> {
    let m = train.pois.len();
    if !train.pois.contains(query.start) {
        return Err(Error::InvalidInput(format!("query {query} is not valid for this POI table")));
    }
    let scores = ChainScores::from_tied(*query, &popularity_counts(train), vec![0.0; m * m]);
    top_k_paths(&scores, k, config.ilp_threshold, config.max_expansions)
}

/// `k` independent uniform loop-free continuations of the start POI.
pub fn baseline_random(query: &Query, k: usize, seed: u64, table: &PoiTable) -> Result<Vec<Trajectory>> {
    let m = table.len();
    if query.length > m {
        return Err(Error::Infeasible { length: query.length, n_pois: m });
    }
    if !table.contains(query.start) || query.length == 0 {
        return Err(Error::InvalidInput(format!("query {query} is not valid for this POI table")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let others: Vec<PoiId> = (0..m).filter(|&p| p != query.start).collect();
    Ok((0..k)
        .map(|_| {
            let mut pool = others.clone();
            let (chosen, _) = pool.partial_shuffle(&mut rng, query.length - 1);
            let mut seq = vec![query.start];
            seq.extend_from_slice(chosen);
            Trajectory::new(seq)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::test_support::{table, two_query_dataset};
    use crate::domain::GroundTruthSet;
    use crate::features::joint_feature_map;

    fn dataset(m: usize, examples: Vec<(Query, Vec<Vec<PoiId>>)>) -> Dataset {
        Dataset {
            pois: table(m),
            examples: examples
                .into_iter()
                .map(|(query, ys)| GroundTruthSet { query, trajectories: ys.into_iter().map(Trajectory::new).collect() })
                .collect(),
        }
    }

    #[test]
    fn prepared_features_match_joint_map() {
        let ds = two_query_dataset();
        let meta = fit_normalizer(&ds).unwrap();
        for ex in &ds.examples {
            let prep = Prepared { query: ex.query, phi: unary_matrix(&ex.query, &ds.pois, &meta), truths: vec![] };
            for y in &ex.trajectories {
                let a = joint_features(&prep, y, &ds.pois, &meta);
                let b = joint_feature_map(&ex.query, y, &ds.pois, &meta).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn rank_pairs_single_truth() {
        let ds = dataset(5, vec![(Query::new(0, 3), vec![vec![0, 1, 2]])]);
        let pairs = &build_rank_pairs(&ds).per_query[0].1;
        let mut expected = Vec::new();
        for p in [0, 1, 2] {
            for d in [3, 4] {
                expected.push((p, d));
            }
        }
        expected.sort();
        let mut got = pairs.clone();
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn rank_pairs_two_truths() {
        // A=0, B=1, C=2, D=3, E=4 unvisited. Counts: A2, B1, C2, D1.
        let ds = dataset(5, vec![(Query::new(0, 3), vec![vec![0, 1, 2], vec![0, 2, 3]])]);
        let mut got = build_rank_pairs(&ds).per_query[0].1.clone();
        got.sort();
        let expected = vec![(0, 1), (0, 3), (0, 4), (1, 4), (2, 1), (2, 3), (2, 4), (3, 4)];
        assert_eq!(got, expected);
    }

    #[test]
    fn rank_pairs_are_strict() {
        let ds = dataset(3, vec![(Query::new(0, 3), vec![vec![0, 1, 2]])]);
        assert!(build_rank_pairs(&ds).is_empty());
        assert!(matches!(train_poirank(&ds, 1.0), Err(Error::NoPairs)));
    }

    #[test]
    fn poirank_rejects_nonpositive_c() {
        assert!(matches!(train_poirank(&two_query_dataset(), 0.0), Err(Error::NonPositiveC(_))));
    }

    #[test]
    fn poirank_tiny_c_shrinks_weights() {
        let model = train_poirank(&two_query_dataset(), 1e-6).unwrap();
        let norm: f64 = model.unary_weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm <= 1e-3, "{norm}");
        assert!(model.pairwise_weights.iter().flatten().flatten().all(|&w| w == 0.0));
    }

    #[test]
    fn poirank_orders_visited_above_unvisited() {
        let ds = dataset(6, vec![(Query::new(0, 3), vec![vec![0, 1, 2]]), (Query::new(3, 3), vec![vec![3, 4, 5]])]);
        let model = train_poirank(&ds, 10.0).unwrap();
        let meta = &model.feature_meta;
        for ex in &ds.examples {
            let phi = unary_matrix(&ex.query, &ds.pois, meta);
            let s = unary_scores(&model, &phi);
            let visited: Vec<PoiId> = ex.trajectories[0].pois().to_vec();
            let min_v = visited.iter().map(|&p| s[p]).fold(f64::INFINITY, f64::min);
            let max_u = (0..6).filter(|p| !visited.contains(p)).map(|p| s[p]).fold(f64::NEG_INFINITY, f64::max);
            assert!(min_v > max_u);
        }
    }

    #[test]
    fn random_baseline_is_uniform_and_seeded() {
        let t = table(4);
        let q = Query::new(0, 2);
        let draws = baseline_random(&q, 10_000, 7, &t).unwrap();
        assert_eq!(draws, baseline_random(&q, 10_000, 7, &t).unwrap());
        let mut counts = [0usize; 4];
        for d in &draws {
            counts[d.pois()[1]] += 1;
        }
        assert_eq!(counts[0], 0);
        let sigma = (10_000.0_f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in &counts[1..] {
            assert!((*c as f64 - 10_000.0 / 3.0).abs() < 3.0 * sigma, "{counts:?}");
        }
        let full = baseline_random(&Query::new(2, 4), 20, 1, &t).unwrap();
        for y in full {
            let mut s = y.pois().to_vec();
            assert_eq!(s[0], 2);
            s.sort();
            assert_eq!(s, vec![0, 1, 2, 3]);
        }
        assert!(matches!(baseline_random(&Query::new(0, 5), 1, 0, &t), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn popularity_baseline_takes_most_visited() {
        // visit counts: 1 -> 3, 2 -> 2, 3 -> 1, 4 -> 0
        let ds = dataset(
            5,
            vec![
                (Query::new(0, 2), vec![vec![0, 1]]),
                (Query::new(1, 3), vec![vec![1, 2, 3]]),
                (Query::new(2, 2), vec![vec![2, 1]]),
            ],
        );
        let cfg = PredictConfig::default();
        let top = baseline_popularity(&ds, &Query::new(0, 3), 2, &cfg).unwrap();
        assert_eq!(top.items[0].0 .0, vec![0, 1, 2]);
        assert_eq!(top.items[1].0 .0, vec![0, 2, 1]);
        let next = baseline_popularity(&ds, &Query::new(0, 3), 3, &cfg).unwrap();
        assert_eq!(next.items[2].0 .0, vec![0, 1, 3]);
    }

    #[test]
    fn popularity_ties_are_lexicographic() {
        let ds = dataset(4, vec![]);
        let top = baseline_popularity(&ds, &Query::new(1, 3), 6, &PredictConfig::default()).unwrap();
        let seqs: Vec<Vec<PoiId>> = top.items.iter().map(|(t, _)| t.0.clone()).collect();
        assert_eq!(seqs, vec![vec![1, 0, 2], vec![1, 0, 3], vec![1, 2, 0], vec![1, 2, 3], vec![1, 3, 0], vec![1, 3, 2]]);
    }

    #[test]
    fn zero_model_predicts_lexicographic_paths() {
        let ds = two_query_dataset();
        let meta = fit_normalizer(&ds).unwrap();
        let model = Model::zeros(meta, Variant::Sr, 1.0);
        let out = predict_topk(&model, &Query::new(0, 3), 10, &ds.pois, &PredictConfig::default()).unwrap();
        assert!(!out.complete);
        assert_eq!(out.items.len(), 6);
        assert_eq!(out.items[0].0 .0, vec![0, 1, 2]);
        assert_eq!(out.items[5].0 .0, vec![0, 3, 2]);
        assert!(matches!(
            predict_topk(&model, &Query::new(0, 5), 1, &ds.pois, &PredictConfig::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn sr_never_generates_truths_and_paths_never_loop() {
        let ds = two_query_dataset();
        for variant in [Variant::Sr, Variant::SrPath, Variant::SpPath] {
            let mut cfg = TrainConfig::new(variant, 10.0);
            cfg.max_epochs = 30;
            let out = train_structured(&ds, &cfg).unwrap();
            for e in &out.epochs {
                if variant.excludes_truths() {
                    assert_eq!(e.truth_constraints, 0);
                }
                if variant.paths_only() {
                    assert_eq!(e.looped_constraints, 0);
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = two_query_dataset();
        let mut cfg = TrainConfig::new(Variant::SrPath, 1.0);
        cfg.max_epochs = 20;
        let a = train_structured(&ds, &cfg).unwrap().model.to_json().unwrap();
        let b = train_structured(&ds, &cfg).unwrap().model.to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weight_norm_grows_with_c() {
        let ds = two_query_dataset();
        let norms: Vec<f64> = [1e-3, 1e-2, 1e-1, 1.0]
            .iter()
            .map(|&c| {
                let mut cfg = TrainConfig::new(Variant::Sp, c);
                cfg.max_epochs = 50;
                let m = train_structured(&ds, &cfg).unwrap().model;
                m.weight_vector().iter().map(|w| w * w).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[0] <= w[1] + 1e-12), "{norms:?}");
    }

    #[test]
    fn training_rejects_bad_config() {
        let ds = two_query_dataset();
        assert!(matches!(train_structured(&ds, &TrainConfig::new(Variant::Sp, 0.0)), Err(Error::NonPositiveC(_))));
        assert!(train_structured(&ds, &TrainConfig::new(Variant::PoiRank, 1.0)).is_err());
    }

    #[test]
    fn one_slack_runs_and_records_stats() {
        let ds = two_query_dataset();
        let mut cfg = TrainConfig::new(Variant::Sr, 1.0);
        cfg.formulation = Formulation::OneSlack;
        cfg.max_epochs = 10;
        let out = train_structured(&ds, &cfg).unwrap();
        assert!(!out.epochs.is_empty());
        assert!(out.epochs.iter().all(|e| e.objective.is_finite() && e.max_violation >= 0.0));
    }
}
