//! POI-query unary features, pairwise transition features, the joint feature
//! map, and the score tables consumed by the decoders.
//!
//! Unary layout, for `C` categories and `K` clusters:
//!
//! | range          | feature                                             |
//! |----------------|-----------------------------------------------------|
//! | `0..C`         | one-hot category                                    |
//! | `C..C+K`       | one-hot cluster                                     |
//! | `C+K..C+K+10`  | log-popularity, log-nVisit, log-avgDuration, trajLen, sameCatStart, sameNeighbourhoodStart, diffPopStart, diffNVisitStart, diffDurationStart, distStart |
//!
//! The ten real-valued features are z-scored with statistics fitted on
//! training queries; one-hot blocks are left as is.
//!
//! Pairwise features are the categorical attributes `category`, `cluster`,
//! `pop_bin`, `visit_bin` and `duration_bin`. Each owns a `[value][value]`
//! weight table, so a transition `p -> q` contributes
//! `sum_f W_f[value_f(p)][value_f(q)]`.

use serde::{Deserialize, Serialize};

use crate::domain::{BinEdges, ChainScores, Dataset, Model, Poi, PoiTable, Query, Trajectory};
use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Number of real-valued unary features after the one-hot blocks.
pub const N_REAL_FEATURES: usize = 10;

pub const REAL_FEATURE_NAMES: [&str; N_REAL_FEATURES] = [
    "popularity",
    "nVisit",
    "avgDuration",
    "trajLen",
    "sameCatStart",
    "sameNeighbourhoodStart",
    "diffPopStart",
    "diffNVisitStart",
    "diffDurationStart",
    "distStart",
];

pub const PAIRWISE_FEATURE_NAMES: [&str; 5] = ["category", "neighbourhood", "popularity", "nVisit", "avgDuration"];

/// Everything needed to rebuild the feature space of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub n_pois: usize,
    pub categories: Vec<String>,
    pub n_clusters: usize,
    pub n_bins: usize,
    pub centroids: Vec<[f64; 2]>,
    pub bin_edges: BinEdges,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureMeta {
    /// Metadata for `table` with an identity normaliser.
    pub fn identity(table: &PoiTable) -> Self {
        let dim = table.categories.len() + table.n_clusters + N_REAL_FEATURES;
        FeatureMeta {
            n_pois: table.len(),
            categories: table.categories.clone(),
            n_clusters: table.n_clusters,
            n_bins: table.n_bins,
            centroids: table.centroids.clone(),
            bin_edges: table.bin_edges.clone(),
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
        }
    }

    pub fn unary_dim(&self) -> usize {
        self.categories.len() + self.n_clusters + N_REAL_FEATURES
    }

    fn real_offset(&self) -> usize {
        self.categories.len() + self.n_clusters
    }

    /// Value counts of the pairwise features, in [`PAIRWISE_FEATURE_NAMES`] order.
    pub fn pairwise_cardinalities(&self) -> [usize; 5] {
        [self.categories.len(), self.n_clusters, self.n_bins, self.n_bins, self.n_bins]
    }

    /// Length of the joint feature vector.
    pub fn joint_dim(&self) -> usize {
        self.unary_dim() + self.pairwise_cardinalities().iter().map(|c| c * c).sum::<usize>()
    }

    pub fn check(&self) -> Result<()> {
        let dim = self.unary_dim();
        if self.means.len() != dim || self.stds.len() != dim {
            return Err(Error::InvalidModel(format!(
                "normaliser has {} means and {} stds for {dim} features",
                self.means.len(),
                self.stds.len()
            )));
        }
        if self.stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidModel("normaliser statistics must be finite with positive std".into()));
        }
        if self.n_clusters == 0 || self.n_bins == 0 {
            return Err(Error::InvalidModel("cluster and bin counts must be positive".into()));
        }
        // keep weight tables small enough to allocate
        if self.joint_dim() > 1 << 24 {
            return Err(Error::InvalidModel("feature space too large".into()));
        }
        Ok(())
    }

    /// Errors when `table` was not built with the same vocabulary.
    pub fn check_table(&self, table: &PoiTable) -> Result<()> {
        if self.n_pois != table.len()
            || self.categories != table.categories
            || self.n_clusters != table.n_clusters
            || self.n_bins != table.n_bins
        {
            return Err(Error::FeatureMismatch(format!(
                "model expects {} POIs / {} categories / {} clusters / {} bins, table has {} / {} / {} / {}",
                self.n_pois,
                self.categories.len(),
                self.n_clusters,
                self.n_bins,
                table.len(),
                table.categories.len(),
                table.n_clusters,
                table.n_bins
            )));
        }
        let in_range = table.pois.iter().all(|p| {
            p.category < self.categories.len()
                && p.cluster_id < self.n_clusters
                && p.pop_bin < self.n_bins
                && p.visit_bin < self.n_bins
                && p.duration_bin < self.n_bins
        });
        if !in_range {
            return Err(Error::FeatureMismatch("POI attribute outside its vocabulary".into()));
        }
        Ok(())
    }
}

/// Great-circle distance in kilometres between two `(lon, lat)` points.
pub fn haversine_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

fn sign(same: bool) -> f64 {
    if same {
        1.0
    } else {
        -1.0
    }
}

/// Unary features of `poi` for `query` before standardisation.
pub fn raw_unary_features(poi: &Poi, query: &Query, table: &PoiTable, meta: &FeatureMeta) -> Vec<f64> {
    let start = &table.pois[query.start];
    let mut v = vec![0.0; meta.unary_dim()];
    v[poi.category] = 1.0;
    v[meta.categories.len() + poi.cluster_id] = 1.0;
    let off = meta.real_offset();
    let real = [
        (poi.popularity as f64).ln_1p(),
        (poi.n_visits as f64).ln_1p(),
        poi.avg_duration.ln_1p(),
        query.length as f64,
        sign(poi.category == start.category),
        sign(poi.cluster_id == start.cluster_id),
        poi.popularity as f64 - start.popularity as f64,
        poi.n_visits as f64 - start.n_visits as f64,
        poi.avg_duration - start.avg_duration,
        haversine_km(start.lon, start.lat, poi.lon, poi.lat),
    ];
    v[off..].copy_from_slice(&real);
    v
}

/// Standardised unary features of `poi` for `query`.
pub fn unary_features(poi: &Poi, query: &Query, table: &PoiTable, meta: &FeatureMeta) -> Vec<f64> {
    let mut v = raw_unary_features(poi, query, table, meta);
    standardize(&mut v, meta);
    v
}

fn standardize(v: &mut [f64], meta: &FeatureMeta) {
    let off = meta.real_offset();
    for ((x, mean), std) in v.iter_mut().zip(&meta.means).zip(&meta.stds).skip(off) {
        *x = (*x - mean) / std;
    }
}

/// Standardised unary features of every POI for `query`, indexed by POI id.
pub fn unary_matrix(query: &Query, table: &PoiTable, meta: &FeatureMeta) -> Vec<Vec<f64>> {
    table
        .pois
        .iter()
        .map(|p| unary_features(p, query, table, meta))
        .collect()
}

/// Values of the five pairwise features of `poi`.
pub fn pairwise_values(poi: &Poi) -> [usize; 5] {
    [poi.category, poi.cluster_id, poi.pop_bin, poi.visit_bin, poi.duration_bin]
}

/// Fits the z-score normaliser on every `(POI, query)` pair of `train`.
/// Population standard deviation; constant dimensions keep std 1.
pub fn fit_normalizer(train: &Dataset) -> Result<FeatureMeta> {
    if train.examples.is_empty() || train.pois.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let table = &train.pois;
    let mut meta = FeatureMeta::identity(table);
    let off = meta.real_offset();
    let dim = meta.unary_dim();
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut rows = Vec::new();
    for ex in &train.examples {
        for p in &table.pois {
            rows.push(raw_unary_features(p, &ex.query, table, &meta));
        }
    }
    let n = rows.len() as f64;
    for r in &rows {
        for (acc, x) in sum.iter_mut().zip(r).skip(off) {
            *acc += x;
        }
    }
    for (mean, acc) in meta.means.iter_mut().zip(&sum).skip(off) {
        *mean = acc / n;
    }
    for r in &rows {
        for ((acc, x), mean) in sum_sq.iter_mut().zip(r).zip(&meta.means).skip(off) {
            *acc += (x - mean).powi(2);
        }
    }
    for (std, acc) in meta.stds.iter_mut().zip(&sum_sq).skip(off) {
        let sd = (acc / n).sqrt();
        *std = if sd > 1e-12 { sd } else { 1.0 };
    }
    Ok(meta)
}

/// Joint feature vector `[sum of unary features over positions 2..l | flattened
/// transition count tables]`. The start position is excluded because it is
/// fixed by the query.
pub fn joint_feature_map(query: &Query, y: &Trajectory, table: &PoiTable, meta: &FeatureMeta) -> Result<Vec<f64>> {
    if !y.conforms_to(query) || y.pois().iter().any(|&p| !table.contains(p)) {
        return Err(Error::NonConforming(*query));
    }
    let mut psi = vec![0.0; meta.joint_dim()];
    let du = meta.unary_dim();
    for &p in &y.pois()[1..] {
        let phi = unary_features(&table.pois[p], query, table, meta);
        for (acc, x) in psi[..du].iter_mut().zip(phi) {
            *acc += x;
        }
    }
    add_transition_counts(&mut psi[du..], y, table, meta, 1.0);
    Ok(psi)
}

/// Adds `scale` times the transition count tables of `y` into `out`.
pub(crate) fn add_transition_counts(out: &mut [f64], y: &Trajectory, table: &PoiTable, meta: &FeatureMeta, scale: f64) {
    let cards = meta.pairwise_cardinalities();
    for w in y.pois().windows(2) {
        let a = pairwise_values(&table.pois[w[0]]);
        let b = pairwise_values(&table.pois[w[1]]);
        let mut offset = 0;
        for f in 0..cards.len() {
            out[offset + a[f] * cards[f] + b[f]] += scale;
            offset += cards[f] * cards[f];
        }
    }
}

/// Transition score matrix `[m][m]` of a model, row-major.
pub fn pairwise_score_matrix(model: &Model, table: &PoiTable) -> Vec<f64> {
    let values: Vec<[usize; 5]> = table.pois.iter().map(pairwise_values).collect();
    let m = table.len();
    let mut out = vec![0.0; m * m];
    for (p, vp) in values.iter().enumerate() {
        for (q, vq) in values.iter().enumerate() {
            let mut s = 0.0;
            for (f, w) in model.pairwise_weights.iter().enumerate() {
                s += w[vp[f]][vq[f]];
            }
            out[p * m + q] = s;
        }
    }
    out
}

/// Unary scores `<w, phi(p)>` for precomputed feature rows.
pub fn unary_scores(model: &Model, phi: &[Vec<f64>]) -> Vec<f64> {
    phi.iter()
        .map(|row| row.iter().zip(&model.unary_weights).map(|(x, w)| x * w).sum())
        .collect()
}

/// Score tables of `model` for `query`. Positions after the start share one
/// unary row.
pub fn build_chain_scores(model: &Model, query: &Query, table: &PoiTable) -> Result<ChainScores> {
    model.feature_meta.check_table(table)?;
    if !table.contains(query.start) || query.length == 0 {
        return Err(Error::InvalidInput(format!("query {query} is not valid for this POI table")));
    }
    let phi = unary_matrix(query, table, &model.feature_meta);
    let unary = unary_scores(model, &phi);
    Ok(ChainScores::from_tied(*query, &unary, pairwise_score_matrix(model, table)))
}
