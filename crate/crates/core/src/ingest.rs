//! Corpus loading: CSV parsing, POI statistics, clustering, quantile bins,
//! and grouping trajectories into queries.
//!
//! Trajectory file header: `user_id,traj_id,seq_index,poi_id[,arrival_ts,departure_ts]`.
//! POI file header: `poi_id,category,lon,lat`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BinEdges, Dataset, GroundTruthSet, Poi, PoiTable, Query, Trajectory};
use crate::error::{Error, Result};

const TRAJ_HEADER: [&str; 4] = ["user_id", "traj_id", "seq_index", "poi_id"];
const TS_HEADER: [&str; 2] = ["arrival_ts", "departure_ts"];
const POI_HEADER: [&str; 4] = ["poi_id", "category", "lon", "lat"];
const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawVisitRecord {
    pub user_id: String,
    pub traj_id: String,
    pub seq_index: u32,
    pub poi_id: i64,
    pub arrival_ts: Option<i64>,
    pub departure_ts: Option<i64>,
    /// 1-based line in the source file, 0 for records built in memory.
    #[serde(skip)]
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPoi {
    pub poi_id: i64,
    pub category: String,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub n_clusters: usize,
    pub n_bins: usize,
    pub rng_seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            n_clusters: 5,
            n_bins: 5,
            rng_seed: 0,
        }
    }
}

impl IngestConfig {
    fn check(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::InvalidInput("n_clusters must be at least 1".into()));
        }
        if self.n_bins < 2 {
            return Err(Error::InvalidInput("n_bins must be at least 2".into()));
        }
        Ok(())
    }
}

/// A loaded corpus plus the counts that do not survive grouping.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub dataset: Dataset,
    /// Trajectories in the source file, duplicates included.
    pub n_trajectories: usize,
    pub n_users: usize,
    /// Trajectories identical to an earlier one of the same query.
    pub duplicates_dropped: usize,
    pub warnings: Vec<String>,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(line, e.to_string())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input)
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'a str> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| parse_err(line, format!("missing column `{name}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, name: &str, line: u64) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(line, format!("column `{name}`: cannot parse `{s}`")))
}

/// Parses a trajectory CSV. An input with no header line yields no records.
pub fn parse_visits<R: Read>(input: R) -> Result<Vec<RawVisitRecord>> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h.map_err(csv_err)?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let with_ts = if names == TRAJ_HEADER {
        false
    } else if names.len() == 6 && names[..4] == TRAJ_HEADER && names[4..] == TS_HEADER {
        true
    } else {
        return Err(parse_err(1, format!("unexpected header `{}`", names.join(","))));
    };
    let width = if with_ts { 6 } else { 4 };

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} columns, found {}", rec.len())));
        }
        let user_id = field(&rec, 0, "user_id", line)?.to_string();
        let traj_id = field(&rec, 1, "traj_id", line)?.to_string();
        if traj_id.is_empty() {
            return Err(parse_err(line, "empty traj_id"));
        }
        let seq_index = parse_num(field(&rec, 2, "seq_index", line)?, "seq_index", line)?;
        let poi_id = parse_num(field(&rec, 3, "poi_id", line)?, "poi_id", line)?;
        let (arrival_ts, departure_ts) = if with_ts {
            let opt = |idx, name| -> Result<Option<i64>> {
                let s = field(&rec, idx, name, line)?;
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_num(s, name, line).map(Some)
                }
            };
            (opt(4, "arrival_ts")?, opt(5, "departure_ts")?)
        } else {
            (None, None)
        };
        if let (Some(a), Some(d)) = (arrival_ts, departure_ts) {
            if d < a {
                return Err(parse_err(line, "departure before arrival"));
            }
        }
        if !seen.insert((traj_id.clone(), seq_index)) {
            return Err(parse_err(line, format!("duplicate seq_index {seq_index} in `{traj_id}`")));
        }
        out.push(RawVisitRecord {
            user_id,
            traj_id,
            seq_index,
            poi_id,
            arrival_ts,
            departure_ts,
            line,
        });
    }
    Ok(out)
}

/// Parses a POI CSV. An input with no header line yields no POIs.
pub fn parse_pois<R: Read>(input: R) -> Result<Vec<RawPoi>> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h.map_err(csv_err)?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != POI_HEADER {
        return Err(parse_err(1, format!("unexpected header `{}`", names.join(","))));
    }
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 columns, found {}", rec.len())));
        }
        let poi_id: i64 = parse_num(field(&rec, 0, "poi_id", line)?, "poi_id", line)?;
        let category = field(&rec, 1, "category", line)?.to_string();
        let lon: f64 = parse_num(field(&rec, 2, "lon", line)?, "lon", line)?;
        let lat: f64 = parse_num(field(&rec, 3, "lat", line)?, "lat", line)?;
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(parse_err(line, format!("coordinates ({lon}, {lat}) out of range")));
        }
        if !ids.insert(poi_id) {
            return Err(parse_err(line, format!("duplicate poi_id {poi_id}")));
        }
        out.push(RawPoi {
            poi_id,
            category,
            lon,
            lat,
        });
    }
    Ok(out)
}

/// Reads both files and builds the dataset.
pub fn load_corpus(traj_file: &Path, poi_file: &Path, config: &IngestConfig) -> Result<LoadedCorpus> {
    let pois = parse_pois(File::open(poi_file)?)?;
    let visits = parse_visits(File::open(traj_file)?)?;
    build_corpus(&pois, &visits, config)
}

/// Assembles trajectories from visit records and groups them by
/// `(first POI, length)`.
pub fn build_corpus(pois: &[RawPoi], visits: &[RawVisitRecord], config: &IngestConfig) -> Result<LoadedCorpus> {
    config.check()?;
    let (table, warnings) = derive_stats(pois, visits, config)?;
    let dense: HashMap<i64, usize> = table.pois.iter().map(|p| (p.source_id, p.id)).collect();

    // traj_id -> visits, in order of first appearance
    let mut order: Vec<&str> = Vec::new();
    let mut by_traj: HashMap<&str, Vec<&RawVisitRecord>> = HashMap::new();
    for v in visits {
        by_traj
            .entry(v.traj_id.as_str())
            .or_insert_with(|| {
                order.push(v.traj_id.as_str());
                Vec::new()
            })
            .push(v);
    }

    let mut groups: BTreeMap<Query, Vec<Trajectory>> = BTreeMap::new();
    let mut duplicates_dropped = 0;
    for traj_id in &order {
        let mut rows = by_traj.remove(traj_id).unwrap_or_default();
        rows.sort_by_key(|r| r.seq_index);
        for (expected, r) in rows.iter().enumerate() {
            if r.seq_index as usize != expected {
                return Err(parse_err(
                    r.line,
                    format!("seq_index of `{traj_id}` not contiguous: expected {expected}, found {}", r.seq_index),
                ));
            }
        }
        let ids = rows
            .iter()
            .map(|r| {
                dense.get(&r.poi_id).copied().ok_or_else(|| Error::UnknownPoi {
                    traj_id: traj_id.to_string(),
                    poi_id: r.poi_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let traj = Trajectory::new(ids);
        let query = Query::new(traj.pois()[0], traj.len());
        let bucket = groups.entry(query).or_default();
        if bucket.contains(&traj) {
            duplicates_dropped += 1;
        } else {
            bucket.push(traj);
        }
    }

    let examples = groups
        .into_iter()
        .map(|(query, trajectories)| GroundTruthSet { query, trajectories })
        .collect();
    let n_users = visits.iter().map(|v| v.user_id.as_str()).collect::<HashSet<_>>().len();
    Ok(LoadedCorpus {
        dataset: Dataset { pois: table, examples },
        n_trajectories: order.len(),
        n_users,
        duplicates_dropped,
        warnings,
    })
}

/// Builds the POI table: visit statistics, k-means clusters over
/// `(lon, lat)`, and quantile bins. Returns warnings alongside the table.
pub fn derive_stats(pois: &[RawPoi], visits: &[RawVisitRecord], config: &IngestConfig) -> Result<(PoiTable, Vec<String>)> {
    config.check()?;
    let mut sorted: Vec<&RawPoi> = pois.iter().collect();
    sorted.sort_by_key(|p| p.poi_id);
    let dense: HashMap<i64, usize> = sorted.iter().enumerate().map(|(i, p)| (p.poi_id, i)).collect();
    let m = sorted.len();

    let mut users: Vec<HashSet<&str>> = vec![HashSet::new(); m];
    let mut n_visits = vec![0u32; m];
    let mut dur_sum = vec![0.0f64; m];
    let mut dur_n = vec![0u32; m];
    for v in visits {
        let &idx = dense.get(&v.poi_id).ok_or_else(|| Error::UnknownPoi {
            traj_id: v.traj_id.clone(),
            poi_id: v.poi_id,
        })?;
        users[idx].insert(v.user_id.as_str());
        n_visits[idx] += 1;
        if let (Some(a), Some(d)) = (v.arrival_ts, v.departure_ts) {
            dur_sum[idx] += (d - a) as f64;
            dur_n[idx] += 1;
        }
    }

    let mut categories: Vec<String> = sorted.iter().map(|p| p.category.clone()).collect();
    categories.sort();
    categories.dedup();

    let coords: Vec<[f64; 2]> = sorted.iter().map(|p| [p.lon, p.lat]).collect();
    let mut warnings = Vec::new();
    let (assign, centroids) = kmeans(&coords, config.n_clusters, config.rng_seed, &mut warnings);

    let popularity: Vec<f64> = users.iter().map(|u| u.len() as f64).collect();
    let visits_f: Vec<f64> = n_visits.iter().map(|&n| n as f64).collect();
    let durations: Vec<f64> = (0..m)
        .map(|i| if dur_n[i] > 0 { dur_sum[i] / dur_n[i] as f64 } else { 0.0 })
        .collect();
    let bin_edges = BinEdges {
        popularity: quantile_edges(&popularity, config.n_bins),
        n_visits: quantile_edges(&visits_f, config.n_bins),
        avg_duration: quantile_edges(&durations, config.n_bins),
    };

    let table_pois = sorted
        .iter()
        .enumerate()
        .map(|(i, raw)| Poi {
            id: i,
            source_id: raw.poi_id,
            category: categories.binary_search(&raw.category).unwrap_or(0),
            lon: raw.lon,
            lat: raw.lat,
            popularity: users[i].len() as u32,
            n_visits: n_visits[i],
            avg_duration: durations[i],
            cluster_id: assign[i],
            pop_bin: bin_of(popularity[i], &bin_edges.popularity),
            visit_bin: bin_of(visits_f[i], &bin_edges.n_visits),
            duration_bin: bin_of(durations[i], &bin_edges.avg_duration),
        })
        .collect();

    Ok((
        PoiTable {
            pois: table_pois,
            categories,
            n_clusters: centroids.len().max(1),
            n_bins: config.n_bins,
            centroids,
            bin_edges,
        },
        warnings,
    ))
}

/// Interior quantile boundaries at `i / n_bins`, `i = 1..n_bins`, with linear
/// interpolation between order statistics.
pub fn quantile_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (1..n_bins)
        .map(|i| {
            let pos = i as f64 / n_bins as f64 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            v[lo] + (v[hi] - v[lo]) * frac
        })
        .collect()
}

/// Number of boundaries strictly below `value`.
pub fn bin_of(value: f64, edges: &[f64]) -> usize {
    edges.iter().filter(|&&e| value > e).count()
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Seeded k-means with k-means++ initialisation. Labels are renumbered in
/// order of the lowest point index they contain.
fn kmeans(points: &[[f64; 2]], k: usize, seed: u64, warnings: &mut Vec<String>) -> (Vec<usize>, Vec<[f64; 2]>) {
    if points.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut distinct: Vec<[f64; 2]> = Vec::new();
    for p in points {
        if !distinct.iter().any(|d| d == p) {
            distinct.push(*p);
        }
    }
    let k = if distinct.len() < k {
        warnings.push(format!(
            "only {} distinct coordinates for {k} clusters; using {}",
            distinct.len(),
            distinct.len()
        ));
        log::warn!("{}", warnings.last().unwrap());
        distinct.len()
    } else {
        k
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![distinct[rng.gen_range(0..distinct.len())]];
    while centroids.len() < k {
        let weights: Vec<f64> = distinct
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 && target < w {
                chosen = i;
                break;
            }
            target -= w;
        }
        centroids.push(distinct[chosen]);
    }

    let nearest = |p: &[f64; 2], cs: &[[f64; 2]]| {
        let mut best = 0;
        for (j, c) in cs.iter().enumerate() {
            if sq_dist(p, c) < sq_dist(p, &cs[best]) {
                best = j;
            }
        }
        best
    };
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![[0.0, 0.0]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }

    let mut relabel: Vec<Option<usize>> = vec![None; k];
    let mut next_label = 0;
    for &a in &assign {
        if relabel[a].is_none() {
            relabel[a] = Some(next_label);
            next_label += 1;
        }
    }
    let mut ordered = vec![[0.0, 0.0]; next_label];
    for (old, new) in relabel.iter().enumerate() {
        if let Some(new) = new {
            ordered[*new] = centroids[old];
        }
    }
    let assign = assign.iter().map(|&a| relabel[a].unwrap()).collect();
    (assign, ordered)
}

/// Repeated random train/validation partitions of whole ground-truth sets.
pub fn split_monte_carlo(dataset: &Dataset, train_frac: f64, repeats: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let n = dataset.examples.len();
    if n < 2 {
        return Err(Error::TooFewExamples { needed: 2, found: n });
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidInput(format!("train_frac must be in (0, 1), got {train_frac}")));
    }
    let n_train = ((train_frac * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..repeats)
        .map(|_| {
            let mut train: Vec<usize> = sample(&mut rng, n, n_train).into_vec();
            train.sort_unstable();
            let chosen: HashSet<usize> = train.iter().copied().collect();
            let valid: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            (dataset.subset(&train), dataset.subset(&valid))
        })
        .collect())
}
