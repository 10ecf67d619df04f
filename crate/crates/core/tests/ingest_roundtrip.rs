use std::collections::HashSet;
use std::path::PathBuf;

use proptest::prelude::*;
use seqrec::domain::validate_dataset;
use seqrec::ingest::{build_corpus, load_corpus, parse_pois, parse_visits, split_monte_carlo, IngestConfig};
use seqrec::{Dataset, Error};

fn toy(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").join(name)
}

fn toy_dataset() -> Dataset {
    load_corpus(&toy("visits.csv"), &toy("pois.csv"), &IngestConfig::default()).unwrap().dataset
}

#[test]
fn toy_corpus_is_valid_and_round_trips() {
    let corpus = load_corpus(&toy("visits.csv"), &toy("pois.csv"), &IngestConfig::default()).unwrap();
    let ds = &corpus.dataset;
    assert!(validate_dataset(ds).is_empty());
    assert_eq!(corpus.n_trajectories, 36);
    assert_eq!(ds.pois.len(), 8);
    for ex in &ds.examples {
        let unique: HashSet<_> = ex.trajectories.iter().collect();
        assert_eq!(unique.len(), ex.trajectories.len());
        assert!(ex.trajectories.iter().all(|t| t.conforms_to(&ex.query)));
    }
    let back = Dataset::from_json(&ds.to_json().unwrap()).unwrap();
    assert_eq!(&back, ds);
}

#[test]
fn ingest_is_deterministic_for_a_seed() {
    let cfg = IngestConfig { rng_seed: 11, ..IngestConfig::default() };
    let a = load_corpus(&toy("visits.csv"), &toy("pois.csv"), &cfg).unwrap();
    let b = load_corpus(&toy("visits.csv"), &toy("pois.csv"), &cfg).unwrap();
    assert_eq!(a.dataset.to_json().unwrap(), b.dataset.to_json().unwrap());
}

#[test]
fn visits_to_unknown_pois_are_rejected() {
    let pois = parse_pois(std::fs::File::open(toy("pois.csv")).unwrap()).unwrap();
    let visits = parse_visits("user_id,traj_id,seq_index,poi_id\nu,t,0,100\nu,t,1,999\n".as_bytes()).unwrap();
    assert!(matches!(build_corpus(&pois, &visits, &IngestConfig::default()), Err(Error::UnknownPoi { .. })));
}

#[test]
fn wrong_header_is_a_parse_error() {
    let err = parse_pois("id,cat,x,y\n1,a,0,0\n".as_bytes()).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn monte_carlo_splits_partition_examples(frac in 0.05f64..0.95, repeats in 1usize..5, seed in any::<u64>()) {
        let ds = toy_dataset();
        let splits = split_monte_carlo(&ds, frac, repeats, seed).unwrap();
        prop_assert_eq!(splits.len(), repeats);
        for (train, valid) in &splits {
            prop_assert!(!train.examples.is_empty() && !valid.examples.is_empty());
            prop_assert_eq!(train.examples.len() + valid.examples.len(), ds.examples.len());
            let t: HashSet<_> = train.examples.iter().map(|e| e.query).collect();
            prop_assert!(valid.examples.iter().all(|e| !t.contains(&e.query)));
        }
    }

    #[test]
    fn arbitrary_visit_text_never_panics(text in "[a-z0-9,\\n]{0,200}") {
        let _ = parse_visits(text.as_bytes());
        let _ = parse_pois(text.as_bytes());
    }
}
