//! Value types shared by every stage of the pipeline.
//!
//! POI ids are dense, 0-based and assigned at ingest; every score matrix in
//! the crate is indexed by them.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMeta;

/// Dense POI index.
pub type PoiId = usize;

/// Stand-in for minus infinity in score tables. Finite so that `max` and
/// arithmetic never produce NaN.
pub const NEG_INF: f64 = f64::MIN;

/// Adds two scores, saturating at [`NEG_INF`] instead of overflowing to `-inf`.
#[inline]
pub fn add_scores(a: f64, b: f64) -> f64 {
    (a + b).max(NEG_INF)
}

/// True when `x` is a clamp value rather than a genuine score.
#[inline]
pub fn is_neg_inf(x: f64) -> bool {
    x <= NEG_INF / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: PoiId,
    /// Identifier used in the source files.
    pub source_id: i64,
    /// Index into [`PoiTable::categories`].
    pub category: usize,
    pub lon: f64,
    pub lat: f64,
    /// Number of distinct users who visited the POI.
    pub popularity: u32,
    /// Total number of visit records at the POI.
    pub n_visits: u32,
    /// Mean visit duration in seconds, 0 when the corpus has no timestamps.
    pub avg_duration: f64,
    pub cluster_id: usize,
    pub pop_bin: usize,
    pub visit_bin: usize,
    pub duration_bin: usize,
}

/// Quantile bin boundaries for the three discretised POI attributes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    pub popularity: Vec<f64>,
    pub n_visits: Vec<f64>,
    pub avg_duration: Vec<f64>,
}

/// The POI universe together with the derived statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiTable {
    pub pois: Vec<Poi>,
    pub categories: Vec<String>,
    pub n_clusters: usize,
    pub n_bins: usize,
    /// `(lon, lat)` centroid of every cluster.
    pub centroids: Vec<[f64; 2]>,
    pub bin_edges: BinEdges,
}

impl PoiTable {
    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn get(&self, id: PoiId) -> Option<&Poi> {
        self.pois.get(id)
    }

    pub fn contains(&self, id: PoiId) -> bool {
        id < self.pois.len()
    }

    /// Dense id of the POI with the given source id.
    pub fn lookup_source(&self, source_id: i64) -> Option<PoiId> {
        self.pois.iter().find(|p| p.source_id == source_id).map(|p| p.id)
    }
}

/// Trajectory query: start POI and required number of POIs (start included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query {
    pub start: PoiId,
    pub length: usize,
}

impl Query {
    pub fn new(start: PoiId, length: usize) -> Self {
        Query { start, length }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.length)
    }
}

/// An ordered sequence of POI ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory(pub Vec<PoiId>);

impl Trajectory {
    pub fn new(pois: Vec<PoiId>) -> Self {
        Trajectory(pois)
    }

    pub fn pois(&self) -> &[PoiId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<PoiId> {
        self.0.first().copied()
    }

    /// No POI occurs twice.
    pub fn is_path(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.0.len());
        self.0.iter().all(|p| seen.insert(*p))
    }

    pub fn conforms_to(&self, query: &Query) -> bool {
        self.0.len() == query.length && self.first() == Some(query.start)
    }

    pub fn hamming(&self, other: &Trajectory) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a != b)
            .count()
            + self.0.len().abs_diff(other.0.len())
    }
}

impl From<Vec<PoiId>> for Trajectory {
    fn from(v: Vec<PoiId>) -> Self {
        Trajectory(v)
    }
}

/// All observed trajectories for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub query: Query,
    pub trajectories: Vec<Trajectory>,
}

impl GroundTruthSet {
    pub fn n_truths(&self) -> usize {
        self.trajectories.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub pois: PoiTable,
    pub examples: Vec<GroundTruthSet>,
}

impl Dataset {
    /// Total number of ground-truth trajectories (N).
    pub fn n_trajectories(&self) -> usize {
        self.examples.iter().map(GroundTruthSet::n_truths).sum()
    }

    /// A dataset over the same POI table holding the selected examples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            pois: self.pois.clone(),
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Examples usable for training and evaluation (length > 1).
    pub fn trainable(&self) -> Dataset {
        Dataset {
            pois: self.pois.clone(),
            examples: self
                .examples
                .iter()
                .filter(|e| e.query.length > 1)
                .cloned()
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a dataset archive. Structural violations are reported by
    /// [`validate_dataset`], not here.
    pub fn from_json(s: &str) -> Result<Dataset> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-position unary scores plus a transition matrix, all for one query.
///
/// `unary` is row-major `[length][m]`, `pairwise` is row-major `[m][m]`.
/// Position 0 is clamped: [`NEG_INF`] everywhere except at `start`, where it
/// is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainScores {
    m: usize,
    start: PoiId,
    length: usize,
    unary: Vec<f64>,
    pairwise: Vec<f64>,
}

impl ChainScores {
    /// Builds scores from a position-invariant unary row and a transition
    /// matrix. Every position after the first gets a copy of `unary_row`.
    pub fn from_tied(query: Query, unary_row: &[f64], pairwise: Vec<f64>) -> Self {
        let m = unary_row.len();
        assert_eq!(pairwise.len(), m * m, "pairwise must be m x m");
        assert!(query.start < m, "start outside the POI universe");
        assert!(query.length >= 1, "length must be at least 1");
        let mut unary = Vec::with_capacity(query.length * m);
        unary.extend((0..m).map(|p| if p == query.start { 0.0 } else { NEG_INF }));
        for _ in 1..query.length {
            unary.extend_from_slice(unary_row);
        }
        ChainScores {
            m,
            start: query.start,
            length: query.length,
            unary,
            pairwise,
        }
    }

    /// Builds scores from explicit per-position unary rows. Row 0 is
    /// overwritten with the start clamp.
    pub fn from_rows(query: Query, unary_rows: Vec<Vec<f64>>, pairwise: Vec<Vec<f64>>) -> Self {
        let m = pairwise.len();
        assert_eq!(unary_rows.len(), query.length, "one unary row per position");
        assert!(query.start < m, "start outside the POI universe");
        let mut unary = Vec::with_capacity(query.length * m);
        for (t, row) in unary_rows.into_iter().enumerate() {
            assert_eq!(row.len(), m);
            if t == 0 {
                unary.extend((0..m).map(|p| if p == query.start { 0.0 } else { NEG_INF }));
            } else {
                unary.extend(row);
            }
        }
        let pairwise: Vec<f64> = pairwise
            .into_iter()
            .inspect(|r| assert_eq!(r.len(), m))
            .flatten()
            .collect();
        ChainScores {
            m,
            start: query.start,
            length: query.length,
            unary,
            pairwise,
        }
    }

    pub fn n_pois(&self) -> usize {
        self.m
    }

    pub fn start(&self) -> PoiId {
        self.start
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn query(&self) -> Query {
        Query::new(self.start, self.length)
    }

    /// Unary score of `poi` at 0-based position `t`.
    #[inline]
    pub fn unary(&self, t: usize, poi: PoiId) -> f64 {
        self.unary[t * self.m + poi]
    }

    #[inline]
    pub fn unary_mut(&mut self, t: usize, poi: PoiId) -> &mut f64 {
        &mut self.unary[t * self.m + poi]
    }

    #[inline]
    pub fn unary_row(&self, t: usize) -> &[f64] {
        &self.unary[t * self.m..(t + 1) * self.m]
    }

    #[inline]
    pub fn pairwise(&self, from: PoiId, to: PoiId) -> f64 {
        self.pairwise[from * self.m + to]
    }

    /// Chain score of `seq`: unary terms at every position plus the
    /// transition terms between neighbours. Summed in position order.
    pub fn score(&self, seq: &[PoiId]) -> f64 {
        let mut total = 0.0;
        for (t, &p) in seq.iter().enumerate() {
            total = add_scores(total, self.unary(t, p));
            if t > 0 {
                total = add_scores(total, self.pairwise(seq[t - 1], p));
            }
        }
        total
    }
}

/// Which constraints loss-augmented inference must honour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// One training example per ground truth.
    #[serde(rename = "SP")]
    Sp,
    /// Ground truths of the query are excluded from constraint generation.
    #[serde(rename = "SR")]
    Sr,
    #[serde(rename = "SPpath")]
    SpPath,
    #[serde(rename = "SRpath")]
    SrPath,
    /// Unary-only ranking model; decoding applies a log-softmax to the
    /// POI scores.
    #[serde(rename = "PoiRank")]
    PoiRank,
}

impl Variant {
    pub fn excludes_truths(self) -> bool {
        matches!(self, Variant::Sr | Variant::SrPath)
    }

    pub fn paths_only(self) -> bool {
        matches!(self, Variant::SpPath | Variant::SrPath)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sp => "SP",
            Variant::Sr => "SR",
            Variant::SpPath => "SPpath",
            Variant::SrPath => "SRpath",
            Variant::PoiRank => "PoiRank",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sp" => Ok(Variant::Sp),
            "sr" => Ok(Variant::Sr),
            "sppath" => Ok(Variant::SpPath),
            "srpath" => Ok(Variant::SrPath),
            "poirank" => Ok(Variant::PoiRank),
            _ => Err(Error::InvalidInput(format!("unknown variant `{s}`"))),
        }
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Trained weights. Unary weights are shared by every position; each pairwise
/// feature owns a `[value][value]` table, also shared by every transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub version: u32,
    pub variant: Variant,
    pub reg_c: f64,
    pub feature_meta: FeatureMeta,
    pub unary_weights: Vec<f64>,
    pub pairwise_weights: Vec<Vec<Vec<f64>>>,
}

impl Model {
    /// All-zero model for the given feature space.
    pub fn zeros(meta: FeatureMeta, variant: Variant, reg_c: f64) -> Self {
        let unary_weights = vec![0.0; meta.unary_dim()];
        let pairwise_weights = meta
            .pairwise_cardinalities()
            .iter()
            .map(|&c| vec![vec![0.0; c]; c])
            .collect();
        Model {
            version: MODEL_FORMAT_VERSION,
            variant,
            reg_c,
            feature_meta: meta,
            unary_weights,
            pairwise_weights,
        }
    }

    /// Checks weight dimensions against the feature metadata.
    pub fn check(&self) -> Result<()> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        if self.reg_c.is_nan() || self.reg_c <= 0.0 || !self.reg_c.is_finite() {
            return Err(Error::InvalidModel(format!("reg_c must be positive, got {}", self.reg_c)));
        }
        self.feature_meta.check()?;
        if self.unary_weights.len() != self.feature_meta.unary_dim() {
            return Err(Error::InvalidModel(format!(
                "expected {} unary weights, found {}",
                self.feature_meta.unary_dim(),
                self.unary_weights.len()
            )));
        }
        let cards = self.feature_meta.pairwise_cardinalities();
        if self.pairwise_weights.len() != cards.len() {
            return Err(Error::InvalidModel(format!(
                "expected {} pairwise tables, found {}",
                cards.len(),
                self.pairwise_weights.len()
            )));
        }
        for (table, &card) in self.pairwise_weights.iter().zip(&cards) {
            if table.len() != card || table.iter().any(|row| row.len() != card) {
                return Err(Error::InvalidModel(format!(
                    "pairwise table must be {card} x {card}"
                )));
            }
        }
        let all_finite = self.unary_weights.iter().all(|w| w.is_finite())
            && self.pairwise_weights.iter().flatten().flatten().all(|w| w.is_finite());
        if !all_finite {
            return Err(Error::InvalidModel("non-finite weight".into()));
        }
        Ok(())
    }

    /// Flattened weight vector `[unary | pairwise tables row-major]`, the
    /// layout of the joint feature map.
    pub fn weight_vector(&self) -> Vec<f64> {
        let mut w = self.unary_weights.clone();
        for table in &self.pairwise_weights {
            for row in table {
                w.extend_from_slice(row);
            }
        }
        w
    }

    /// Inverse of [`Model::weight_vector`].
    pub fn set_weight_vector(&mut self, w: &[f64]) {
        let du = self.unary_weights.len();
        self.unary_weights.copy_from_slice(&w[..du]);
        let mut offset = du;
        for table in &mut self.pairwise_weights {
            for row in table.iter_mut() {
                let n = row.len();
                row.copy_from_slice(&w[offset..offset + n]);
                offset += n;
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Model> {
        let model: Model = serde_json::from_str(s)?;
        model.check()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ViolationKind {
    DuplicatePoiId,
    BinOutOfRange,
    PopularityExceedsVisits,
    UnknownStart,
    NonPositiveLength,
    EmptyTrajectory,
    UnknownPoi,
    WrongStart,
    LengthMismatch,
    DuplicateTrajectory,
    EmptyGroundTruthSet,
    DuplicateQuery,
}

/// One broken invariant. `example` is `None` for POI-table violations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub example: Option<usize>,
    pub kind: ViolationKind,
    pub detail: String,
}

/// Lists every broken type invariant of `dataset`. Empty iff well formed.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let table = &dataset.pois;
    let mut push = |example: Option<usize>, kind, detail: String| {
        out.push(Violation { example, kind, detail })
    };

    let mut ids = HashSet::new();
    for (idx, poi) in table.pois.iter().enumerate() {
        if !ids.insert(poi.id) || poi.id != idx {
            push(None, ViolationKind::DuplicatePoiId, format!("POI at row {idx} has id {}", poi.id));
        }
        for (name, bin) in [("pop_bin", poi.pop_bin), ("visit_bin", poi.visit_bin), ("duration_bin", poi.duration_bin)] {
            if bin >= table.n_bins {
                push(
                    None,
                    ViolationKind::BinOutOfRange,
                    format!("POI {}: {name} = {bin} not below {}", poi.id, table.n_bins),
                );
            }
        }
        if poi.popularity > poi.n_visits {
            push(
                None,
                ViolationKind::PopularityExceedsVisits,
                format!("POI {}: popularity {} > visits {}", poi.id, poi.popularity, poi.n_visits),
            );
        }
    }

    let mut queries = HashSet::new();
    for (i, ex) in dataset.examples.iter().enumerate() {
        let q = ex.query;
        if !table.contains(q.start) {
            push(Some(i), ViolationKind::UnknownStart, format!("start {} not in POI table", q.start));
        }
        if q.length == 0 {
            push(Some(i), ViolationKind::NonPositiveLength, "query length is 0".into());
        }
        if !queries.insert(q) {
            push(Some(i), ViolationKind::DuplicateQuery, format!("query {q} appears more than once"));
        }
        if ex.trajectories.is_empty() {
            push(Some(i), ViolationKind::EmptyGroundTruthSet, "no ground truths".into());
        }
        let mut seen = HashSet::new();
        for (j, traj) in ex.trajectories.iter().enumerate() {
            if traj.is_empty() {
                push(Some(i), ViolationKind::EmptyTrajectory, format!("trajectory {j} is empty"));
                continue;
            }
            if let Some(bad) = traj.pois().iter().find(|&&p| !table.contains(p)) {
                push(Some(i), ViolationKind::UnknownPoi, format!("trajectory {j} visits unknown POI {bad}"));
            }
            if traj.first() != Some(q.start) {
                push(Some(i), ViolationKind::WrongStart, format!("trajectory {j} does not start at {}", q.start));
            }
            if traj.len() != q.length {
                push(
                    Some(i),
                    ViolationKind::LengthMismatch,
                    format!("trajectory {j} has length {} under query length {}", traj.len(), q.length),
                );
            }
            if !seen.insert(traj) {
                push(Some(i), ViolationKind::DuplicateTrajectory, format!("trajectory {j} repeats an earlier one"));
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn poi(id: PoiId, category: usize, lon: f64, lat: f64, pop: u32) -> Poi {
        Poi {
            id,
            source_id: id as i64 + 100,
            category,
            lon,
            lat,
            popularity: pop,
            n_visits: pop * 2,
            avg_duration: 60.0 * (id as f64 + 1.0),
            cluster_id: id % 2,
            pop_bin: id % 3,
            visit_bin: (id + 1) % 3,
            duration_bin: id % 3,
        }
    }

    pub fn table(m: usize) -> PoiTable {
        PoiTable {
            pois: (0..m).map(|i| poi(i, i % 2, 0.1 * i as f64, -0.05 * i as f64, (i as u32 + 1) * 3)).collect(),
            categories: vec!["museum".into(), "park".into()],
            n_clusters: 2,
            n_bins: 3,
            centroids: vec![[0.0, 0.0], [0.3, -0.15]],
            bin_edges: BinEdges::default(),
        }
    }

    pub fn two_query_dataset() -> Dataset {
        Dataset {
            pois: table(4),
            examples: vec![
                GroundTruthSet {
                    query: Query::new(0, 3),
                    trajectories: vec![vec![0, 1, 2].into(), vec![0, 2, 1].into()],
                },
                GroundTruthSet {
                    query: Query::new(3, 2),
                    trajectories: vec![vec![3, 1].into()],
                },
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(validate_dataset(&two_query_dataset()).is_empty());
    }

    #[test]
    fn short_trajectory_is_a_length_mismatch() {
        let mut ds = two_query_dataset();
        ds.examples[0].query.length = 4;
        ds.examples[0].trajectories.truncate(1);
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::LengthMismatch);
        assert_eq!(v[0].example, Some(0));
    }

    #[test]
    fn duplicate_trajectory_is_reported_once() {
        let mut ds = two_query_dataset();
        let dup = ds.examples[1].trajectories[0].clone();
        ds.examples[1].trajectories.push(dup);
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::DuplicateTrajectory);
    }

    #[test]
    fn validation_is_repeatable() {
        let mut ds = two_query_dataset();
        ds.examples[0].trajectories.push(vec![1, 2, 3].into());
        ds.pois.pois[2].pop_bin = 7;
        assert_eq!(validate_dataset(&ds), validate_dataset(&ds));
        assert_eq!(validate_dataset(&ds).len(), 2);
    }

    #[test]
    fn chain_score_matches_hand_sum() {
        let q = Query::new(1, 3);
        let pair = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let cs = ChainScores::from_tied(q, &[0.5, -1.0, 2.5], pair);
        // 0 + (pair[1][2] + u[2]) + (pair[2][0] + u[0])
        assert_eq!(cs.score(&[1, 2, 0]), 5.0 + 2.5 + 6.0 + 0.5);
        assert!(is_neg_inf(cs.unary(0, 0)));
        assert_eq!(cs.unary(0, 1), 0.0);
    }

    #[test]
    fn neg_inf_saturates_without_nan() {
        let x = add_scores(NEG_INF, NEG_INF);
        assert_eq!(x, NEG_INF);
        assert!(!(x - x).is_nan());
    }

    #[test]
    fn trajectory_helpers() {
        let t: Trajectory = vec![0, 1, 0].into();
        assert!(!t.is_path());
        assert!(t.conforms_to(&Query::new(0, 3)));
        assert_eq!(t.hamming(&vec![0, 2, 0].into()), 1);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::Sp, Variant::Sr, Variant::SpPath, Variant::SrPath, Variant::PoiRank] {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
    }
}
