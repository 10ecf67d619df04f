//! Sequence metrics and the leave-one-query-out evaluation protocol.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, PoiId, PoiTable, Query, Trajectory, Variant};
use crate::error::{Error, Result};
use crate::ingest::split_monte_carlo;
use crate::learn::{
    baseline_popularity, baseline_random, predict_topk, train_poirank, train_structured, PredictConfig, TrainConfig,
};

fn f1(hits: usize, n_truth: usize, n_pred: usize) -> f64 {
    if hits == 0 {
        return 0.0;
    }
    let precision = hits as f64 / n_pred as f64;
    let recall = hits as f64 / n_truth as f64;
    2.0 * precision * recall / (precision + recall)
}

/// F1 over the sets of distinct POIs.
pub fn f1_points(truth: &Trajectory, pred: &Trajectory) -> f64 {
    let a: BTreeSet<PoiId> = truth.pois().iter().copied().collect();
    let b: BTreeSet<PoiId> = pred.pois().iter().copied().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    f1(a.intersection(&b).count(), a.len(), b.len())
}

fn ordered_pairs(y: &Trajectory) -> BTreeSet<(PoiId, PoiId)> {
    let s = y.pois();
    (0..s.len())
        .flat_map(|i| (i + 1..s.len()).map(move |j| (s[i], s[j])))
        .collect()
}

/// F1 over the sets of ordered pairs `(y_i, y_j)` with `i < j`. Two empty
/// pair sets score 1, one empty set scores 0.
pub fn f1_pairs(truth: &Trajectory, pred: &Trajectory) -> f64 {
    let a = ordered_pairs(truth);
    let b = ordered_pairs(pred);
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => f1(a.intersection(&b).count(), a.len(), b.len()),
    }
}

/// Rank of every POI induced by `y`: position `j` (1-based) earns `m - j + 1`,
/// unvisited POIs rank 0.
pub fn sequence_ranks(y: &Trajectory, m: usize) -> Vec<f64> {
    let mut r = vec![0.0; m];
    for (j, &p) in y.pois().iter().enumerate() {
        if p < m {
            r[p] += (m - j) as f64;
        }
    }
    r
}

fn tied_pairs(n: usize) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Kendall's tau-b between the POI rankings of two sequences over a
/// universe of `m` POIs. Returns 1 when the denominator vanishes.
pub fn kendall_tau_b(truth: &Trajectory, pred: &Trajectory, m: usize) -> f64 {
    let x = sequence_ranks(truth, m);
    let y = sequence_ranks(pred, m);
    let mut concordant = 0.0;
    let mut discordant = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let s = (x[i] - x[j]) * (y[i] - y[j]);
            if s > 0.0 {
                concordant += 1.0;
            } else if s < 0.0 {
                discordant += 1.0;
            }
        }
    }
    let unvisited_x = x.iter().filter(|&&v| v == 0.0).count();
    let unvisited_y = y.iter().filter(|&&v| v == 0.0).count();
    let unvisited_both = x.iter().zip(&y).filter(|(a, b)| **a == 0.0 && **b == 0.0).count();
    let joint = tied_pairs(unvisited_both);
    let t = tied_pairs(unvisited_x) - joint;
    let u = tied_pairs(unvisited_y) - joint;
    let denom = ((concordant + discordant + t) * (concordant + discordant + u)).sqrt();
    if denom == 0.0 {
        return 1.0;
    }
    (concordant - discordant) / denom
}

/// Best-of-grid value of each metric, maximised independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub f1_points: f64,
    pub f1_pairs: f64,
    pub tau_b: f64,
}

impl MetricValues {
    pub fn as_array(&self) -> [f64; 3] {
        [self.f1_points, self.f1_pairs, self.tau_b]
    }
}

/// Per metric, the maximum over every (ground truth, prediction) pair.
pub fn best_of(truths: &[Trajectory], preds: &[Trajectory], m: usize) -> MetricValues {
    let mut best = MetricValues { f1_points: 0.0, f1_pairs: 0.0, tau_b: -1.0 };
    for y in truths {
        for p in preds {
            best.f1_points = best.f1_points.max(f1_points(y, p));
            best.f1_pairs = best.f1_pairs.max(f1_pairs(y, p));
            best.tau_b = best.tau_b.max(kendall_tau_b(y, p, m));
        }
    }
    best
}

/// A model family that can be fitted and asked for top-k paths.
pub trait Method: Sync {
    fn name(&self) -> String;

    /// Whether the regularisation constant influences the fit.
    fn uses_c(&self) -> bool;

    fn fit(&self, train: &Dataset, reg_c: f64) -> Result<Box<dyn Predictor>>;
}

pub trait Predictor: Send + Sync {
    fn predict(&self, query: &Query, k: usize, table: &PoiTable) -> Result<Vec<Trajectory>>;
}

/// Structured SVM of a given variant.
#[derive(Debug, Clone)]
pub struct StructuredMethod {
    pub config: TrainConfig,
    pub predict: PredictConfig,
}

struct ModelPredictor {
    model: crate::domain::Model,
    predict: PredictConfig,
}

impl Predictor for ModelPredictor {
    fn predict(&self, query: &Query, k: usize, table: &PoiTable) -> Result<Vec<Trajectory>> {
        let out = predict_topk(&self.model, query, k, table, &self.predict)?;
        Ok(out.items.into_iter().map(|(t, _)| t).collect())
    }
}

impl Method for StructuredMethod {
    fn name(&self) -> String {
        self.config.variant.name().to_string()
    }

    fn uses_c(&self) -> bool {
        true
    }

    fn fit(&self, train: &Dataset, reg_c: f64) -> Result<Box<dyn Predictor>> {
        let mut config = self.config.clone();
        config.reg_c = reg_c;
        let model = train_structured(train, &config)?.model;
        Ok(Box::new(ModelPredictor { model, predict: self.predict }))
    }
}

/// Ranking baseline with softmax path scoring.
#[derive(Debug, Clone, Default)]
pub struct PoiRankMethod {
    pub predict: PredictConfig,
}

impl Method for PoiRankMethod {
    fn name(&self) -> String {
        Variant::PoiRank.name().to_string()
    }

    fn uses_c(&self) -> bool {
        true
    }

    fn fit(&self, train: &Dataset, reg_c: f64) -> Result<Box<dyn Predictor>> {
        let model = train_poirank(train, reg_c)?;
        Ok(Box::new(ModelPredictor { model, predict: self.predict }))
    }
}

#[derive(Debug, Clone, Default)]
pub struct PopularityMethod {
    pub predict: PredictConfig,
}

struct PopularityPredictor {
    train: Dataset,
    predict: PredictConfig,
}

impl Predictor for PopularityPredictor {
    fn predict(&self, query: &Query, k: usize, _table: &PoiTable) -> Result<Vec<Trajectory>> {
        let out = baseline_popularity(&self.train, query, k, &self.predict)?;
        Ok(out.items.into_iter().map(|(t, _)| t).collect())
    }
}

impl Method for PopularityMethod {
    fn name(&self) -> String {
        "Popularity".into()
    }

    fn uses_c(&self) -> bool {
        false
    }

    fn fit(&self, train: &Dataset, _reg_c: f64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(PopularityPredictor { train: train.clone(), predict: self.predict }))
    }
}

/// Uniform random paths. Each query draws from its own stream derived from
/// `seed` and the query, so results do not depend on evaluation order.
#[derive(Debug, Clone)]
pub struct RandomMethod {
    pub seed: u64,
}

struct RandomPredictor {
    seed: u64,
}

fn query_stream(seed: u64, query: &Query) -> u64 {
    seed ^ (query.start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (query.length as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

impl Predictor for RandomPredictor {
    fn predict(&self, query: &Query, k: usize, table: &PoiTable) -> Result<Vec<Trajectory>> {
        baseline_random(query, k, query_stream(self.seed, query), table)
    }
}

impl Method for RandomMethod {
    fn name(&self) -> String {
        "Random".into()
    }

    fn uses_c(&self) -> bool {
        false
    }

    fn fit(&self, _train: &Dataset, _reg_c: f64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(RandomPredictor { seed: self.seed }))
    }
}

pub const DEFAULT_C_GRID: [f64; 6] = [1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];
pub const DEFAULT_K_LIST: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    pub c_grid: Vec<f64>,
    pub train_frac: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_list: DEFAULT_K_LIST.to_vec(),
            c_grid: DEFAULT_C_GRID.to_vec(),
            train_frac: 0.8,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: Query,
    /// `source_id:length` of the query.
    pub query_id: String,
    pub reg_c: f64,
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub query_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub k: usize,
    pub per_query: Vec<QueryResult>,
    pub failures: Vec<QueryFailure>,
    pub mean: MetricValues,
    /// Sample standard deviation over queries divided by the square root of
    /// the query count.
    pub stderr: MetricValues,
}

fn aggregate(per_query: &[QueryResult]) -> (MetricValues, MetricValues) {
    let n = per_query.len() as f64;
    let mut mean = [0.0; 3];
    let mut se = [0.0; 3];
    if n > 0.0 {
        for q in per_query {
            for (acc, v) in mean.iter_mut().zip(q.values.as_array()) {
                *acc += v / n;
            }
        }
    }
    if n > 1.0 {
        for (d, (s, mu)) in se.iter_mut().zip(mean).enumerate() {
            let var = per_query.iter().map(|q| (q.values.as_array()[d] - mu).powi(2)).sum::<f64>() / (n - 1.0);
            *s = var.sqrt() / n.sqrt();
        }
    }
    let wrap = |a: [f64; 3]| MetricValues { f1_points: a[0], f1_pairs: a[1], tau_b: a[2] };
    (wrap(mean), wrap(se))
}

pub fn query_id(query: &Query, table: &PoiTable) -> String {
    let source = table.get(query.start).map_or(query.start as i64, |p| p.source_id);
    format!("{source}:{}", query.length)
}

/// Regularisation constant with the best mean top-1 f1_points over Monte
/// Carlo splits of `train`. Earlier grid entries win ties.
pub fn tune_c(method: &dyn Method, train: &Dataset, config: &EvalConfig) -> Result<f64> {
    let fallback = config.c_grid.first().copied().unwrap_or(1.0);
    if !method.uses_c() || config.c_grid.len() < 2 || train.examples.len() < 2 {
        return Ok(fallback);
    }
    let splits = split_monte_carlo(train, config.train_frac, config.repeats, config.seed)?;
    let mut best = (f64::NEG_INFINITY, fallback);
    for &c in &config.c_grid {
        let mut total = 0.0;
        let mut count = 0usize;
        for (fit_part, val_part) in &splits {
            let predictor = match method.fit(fit_part, c) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("tuning fit failed for C={c}: {e}");
                    continue;
                }
            };
            for ex in &val_part.examples {
                let score = predictor
                    .predict(&ex.query, 1, &train.pois)
                    .map(|preds| best_of(&ex.trajectories, &preds, train.pois.len()).f1_points)
                    .unwrap_or(0.0);
                total += score;
                count += 1;
            }
        }
        let mean = if count > 0 { total / count as f64 } else { f64::NEG_INFINITY };
        log::debug!("{} C={c}: validation f1 {mean:.4}", method.name());
        if mean > best.0 {
            best = (mean, c);
        }
    }
    Ok(best.1)
}

/// Leave-one-query-out evaluation. Each held-out query is predicted by a
/// model fitted on every other query with a tuned C; one report is produced
/// per entry of `config.k_list`.
pub fn evaluate_loqo(dataset: &Dataset, method: &dyn Method, config: &EvalConfig) -> Result<Vec<MetricReport>> {
    let data = dataset.trainable();
    if data.examples.len() < 2 {
        return Err(Error::TooFewExamples { needed: 2, found: data.examples.len() });
    }
    let k_max = config.k_list.iter().copied().max().unwrap_or(1).max(1);
    let m = data.pois.len();
    let folds: Vec<std::result::Result<(QueryResult, Vec<Trajectory>), QueryFailure>> = (0..data.examples.len())
        .into_par_iter()
        .map(|held| {
            let ex = &data.examples[held];
            let id = query_id(&ex.query, &data.pois);
            let rest: Vec<usize> = (0..data.examples.len()).filter(|&i| i != held).collect();
            let train = data.subset(&rest);
            let run = || -> Result<(f64, Vec<Trajectory>)> {
                let c = tune_c(method, &train, config)?;
                let predictor = method.fit(&train, c)?;
                Ok((c, predictor.predict(&ex.query, k_max, &data.pois)?))
            };
            match run() {
                Ok((reg_c, preds)) => Ok((
                    QueryResult { query: ex.query, query_id: id, reg_c, values: best_of(&ex.trajectories, &preds, m) },
                    preds,
                )),
                Err(e) => {
                    log::warn!("{}: query {id} failed: {e}", method.name());
                    Err(QueryFailure { query_id: id, message: e.to_string() })
                }
            }
        })
        .collect();

    let mut reports = Vec::new();
    for &k in &config.k_list {
        let mut per_query = Vec::new();
        let mut failures = Vec::new();
        for (fold, ex) in folds.iter().zip(&data.examples) {
            match fold {
                Ok((base, preds)) => {
                    let top = &preds[..preds.len().min(k)];
                    per_query.push(QueryResult { values: best_of(&ex.trajectories, top, m), ..base.clone() });
                }
                Err(f) => failures.push(f.clone()),
            }
        }
        let (mean, stderr) = aggregate(&per_query);
        reports.push(MetricReport { method: method.name(), k, per_query, failures, mean, stderr });
    }
    Ok(reports)
}

/// Writes `query_id,method,k,f1_points,f1_pairs,tau_b` rows: one per query
/// followed by an `ALL` row holding the mean of each report.
pub fn write_report_csv<W: Write>(reports: &[MetricReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "method", "k", "f1_points", "f1_pairs", "tau_b"])
        .map_err(csv_err)?;
    for r in reports {
        let rows = r
            .per_query
            .iter()
            .map(|q| (q.query_id.as_str(), q.values))
            .chain(std::iter::once(("ALL", r.mean)));
        for (id, v) in rows {
            w.write_record([
                id.to_string(),
                r.method.clone(),
                r.k.to_string(),
                format!("{:.6}", v.f1_points),
                format!("{:.6}", v.f1_pairs),
                format!("{:.6}", v.tau_b),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub method: String,
    pub k: usize,
    pub n_queries: usize,
    pub n_failed: usize,
    pub mean: MetricValues,
    pub stderr: MetricValues,
}

pub fn summarize(reports: &[MetricReport]) -> Vec<SummaryEntry> {
    reports
        .iter()
        .map(|r| SummaryEntry {
            method: r.method.clone(),
            k: r.k,
            n_queries: r.per_query.len(),
            n_failed: r.failures.len(),
            mean: r.mean,
            stderr: r.stderr,
        })
        .collect()
}
