mod common;

use std::path::PathBuf;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqrec::eval::{
    best_of, evaluate_loqo, f1_pairs, f1_points, kendall_tau_b, write_report_csv, EvalConfig, PopularityMethod,
    RandomMethod,
};
use seqrec::ingest::{load_corpus, IngestConfig};
use seqrec::learn::{baseline_random, predict_topk, train_poirank, train_structured, PredictConfig, TrainConfig};
use seqrec::{Dataset, Model, Trajectory, Variant};

fn toy() -> Dataset {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy");
    load_corpus(&dir.join("visits.csv"), &dir.join("pois.csv"), &IngestConfig::default()).unwrap().dataset
}

fn quick(variant: Variant) -> TrainConfig {
    let mut cfg = TrainConfig::new(variant, 1.0);
    cfg.max_epochs = 15;
    cfg
}

#[test]
fn path_variants_predict_distinct_paths() {
    let ds = toy();
    for variant in [Variant::SpPath, Variant::SrPath] {
        let model = train_structured(&ds.trainable(), &quick(variant)).unwrap().model;
        for ex in &ds.examples {
            let out = predict_topk(&model, &ex.query, 5, &ds.pois, &PredictConfig::default()).unwrap();
            assert!(!out.items.is_empty());
            for w in out.items.windows(2) {
                assert!(w[0].1 >= w[1].1 && w[0].0 != w[1].0);
            }
            assert!(out.items.iter().all(|(y, _)| y.is_path() && y.conforms_to(&ex.query)));
        }
    }
}

#[test]
fn model_json_round_trip_preserves_predictions() {
    let ds = toy();
    let model = train_structured(&ds.trainable(), &quick(Variant::Sr)).unwrap().model;
    let back = Model::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(back, model);
    let q = ds.examples[0].query;
    let cfg = PredictConfig::default();
    assert_eq!(
        predict_topk(&model, &q, 3, &ds.pois, &cfg).unwrap(),
        predict_topk(&back, &q, 3, &ds.pois, &cfg).unwrap()
    );
}

#[test]
fn poirank_recommends_paths_from_the_start() {
    let ds = toy();
    let model = train_poirank(&ds.trainable(), 10.0).unwrap();
    assert_eq!(model.variant, Variant::PoiRank);
    for ex in &ds.examples {
        let top = predict_topk(&model, &ex.query, 1, &ds.pois, &PredictConfig::default()).unwrap();
        assert!(top.items[0].0.is_path() && top.items[0].0.conforms_to(&ex.query));
    }
}

#[test]
fn non_positive_c_is_rejected() {
    let ds = toy();
    assert!(train_structured(&ds, &TrainConfig::new(Variant::Sp, 0.0)).is_err());
    assert!(train_structured(&ds, &TrainConfig::new(Variant::Sp, f64::NAN)).is_err());
}

#[test]
fn report_means_increase_with_k() {
    let ds = toy();
    let cfg = EvalConfig { k_list: vec![1, 3, 10], c_grid: vec![1.0], repeats: 1, ..EvalConfig::default() };
    for method in [&RandomMethod { seed: 5 } as &dyn seqrec::eval::Method, &PopularityMethod { predict: PredictConfig::default() }] {
        let reports = evaluate_loqo(&ds, method, &cfg).unwrap();
        assert_eq!(reports.len(), 3);
        for w in reports.windows(2) {
            for (a, b) in w[0].mean.as_array().iter().zip(w[1].mean.as_array()) {
                assert!(b >= *a - 1e-12);
            }
        }
        let mut csv = Vec::new();
        write_report_csv(&reports, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("ALL,")).count(), 3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_are_bounded_and_maximal_on_identity(seed in any::<u64>(), m in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = 1 + seed as usize % m;
        let a = Trajectory::new(random_path(&mut rng, m, l));
        let b = Trajectory::new(random_path(&mut rng, m, l));
        for v in [f1_points(&a, &b), f1_pairs(&a, &b)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let tau = kendall_tau_b(&a, &b, m);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&tau));
        prop_assert!((kendall_tau_b(&a, &b, m) - kendall_tau_b(&b, &a, m)).abs() < 1e-12);
        prop_assert_eq!(f1_points(&a, &a), 1.0);
        prop_assert_eq!(kendall_tau_b(&a, &a, m), 1.0);
    }

    #[test]
    fn best_of_is_monotone_in_the_prediction_list(seed in any::<u64>(), m in 3usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = 2 + seed as usize % (m - 1);
        let truths: Vec<Trajectory> = (0..2).map(|_| Trajectory::new(random_path(&mut rng, m, l))).collect();
        let preds: Vec<Trajectory> = (0..6).map(|_| Trajectory::new(random_path(&mut rng, m, l))).collect();
        for k in 1..preds.len() {
            let (a, b) = (best_of(&truths, &preds[..k], m), best_of(&truths, &preds[..k + 1], m));
            for (x, y) in a.as_array().iter().zip(b.as_array()) {
                prop_assert!(y >= *x);
            }
        }
    }

    #[test]
    fn random_baseline_is_seeded(seed in any::<u64>()) {
        let ds = toy();
        let q = ds.examples[seed as usize % ds.examples.len()].query;
        let a = baseline_random(&q, 4, seed, &ds.pois).unwrap();
        prop_assert_eq!(&a, &baseline_random(&q, 4, seed, &ds.pois).unwrap());
        prop_assert!(a.iter().all(|y| y.is_path() && y.conforms_to(&q)));
    }
}
