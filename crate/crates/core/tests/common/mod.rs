//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use seqrec::domain::{ChainScores, PoiId, Query};
use seqrec::ingest::{derive_stats, IngestConfig, RawPoi};
use seqrec::{PoiTable, Trajectory};

/// Every sequence of the query's length that starts at its start POI.
pub fn all_sequences(m: usize, start: PoiId, length: usize) -> Vec<Vec<PoiId>> {
    let mut out = vec![vec![start]];
    for _ in 1..length {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..m).map(move |p| {
                    let mut next = s.clone();
                    next.push(p);
                    next
                })
            })
            .collect();
    }
    out
}

pub fn is_path(seq: &[PoiId]) -> bool {
    let mut seen = seq.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len() == seq.len()
}

/// Sum of unary and transition terms, accumulated left to right.
pub fn brute_score(cs: &ChainScores, seq: &[PoiId]) -> f64 {
    let mut s = cs.unary(0, seq[0]);
    for t in 1..seq.len() {
        s += cs.pairwise(seq[t - 1], seq[t]) + cs.unary(t, seq[t]);
    }
    s
}

pub fn hamming(a: &[PoiId], b: &[PoiId]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Sorted by score descending, ties broken by the lexicographically smaller
/// sequence.
pub fn ranked(mut items: Vec<(Vec<PoiId>, f64)>) -> Vec<(Vec<PoiId>, f64)> {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items
}

pub fn ranked_sequences(cs: &ChainScores, filter: impl Fn(&[PoiId]) -> bool) -> Vec<(Vec<PoiId>, f64)> {
    let items = all_sequences(cs.n_pois(), cs.start(), cs.length())
        .into_iter()
        .filter(|s| filter(s))
        .map(|s| {
            let v = brute_score(cs, &s);
            (s, v)
        })
        .collect();
    ranked(items)
}

/// Position-specific i.i.d. uniform scores on `[-1, 1)`.
pub fn random_scores(rng: &mut ChaCha8Rng, m: usize, length: usize) -> ChainScores {
    let start = rng.gen_range(0..m);
    let unary = (0..length).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let pairwise = (0..m).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    ChainScores::from_rows(Query::new(start, length), unary, pairwise)
}

/// Kendall tau-b from sign products over all POI pairs.
pub fn tau_oracle(a: &Trajectory, b: &Trajectory, m: usize) -> f64 {
    let rank = |y: &Trajectory, p: PoiId| y.pois().iter().position(|&q| q == p).map_or(0.0, |j| (m - j) as f64);
    let sign = |x: f64| (x > 0.0) as i32 as f64 - (x < 0.0) as i32 as f64;
    let (mut num, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in i + 1..m {
            let dx = sign(rank(a, i) - rank(a, j));
            let dy = sign(rank(b, i) - rank(b, j));
            num += dx * dy;
            sx += dx * dx;
            sy += dy * dy;
        }
    }
    if sx * sy == 0.0 {
        1.0
    } else {
        num / (sx * sy).sqrt()
    }
}

/// A random path of length `l` over `m` POIs.
pub fn random_path(rng: &mut ChaCha8Rng, m: usize, l: usize) -> Vec<PoiId> {
    use rand::seq::SliceRandom;
    let mut all: Vec<PoiId> = (0..m).collect();
    all.shuffle(rng);
    all.truncate(l);
    all
}

/// `m` POIs on a wide grid so that k-means with `m` clusters isolates each.
pub fn isolated_table(m: usize) -> PoiTable {
    let pois: Vec<RawPoi> = (0..m)
        .map(|i| RawPoi {
            poi_id: 10 + i as i64,
            category: if i % 2 == 0 { "museum".into() } else { "park".into() },
            lon: -4.0 + (i % 4) as f64,
            lat: 55.0 + (i / 4) as f64,
        })
        .collect();
    let config = IngestConfig { n_clusters: m, n_bins: 3, rng_seed: 1 };
    derive_stats(&pois, &[], &config).expect("table builds").0
}
