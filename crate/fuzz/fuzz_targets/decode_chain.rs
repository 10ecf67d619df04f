#![no_main]

use libfuzzer_sys::fuzz_target;
use seqrec::decode::{list_viterbi, SequencePredicate};
use seqrec::domain::{ChainScores, Query};
use seqrec::pathopt::top_k_paths_exact;
use seqrec::Error;

fuzz_target!(|data: &[u8]| {
    if data.len() < 3 {
        return;
    }
    let m = 1 + data[0] as usize % 6;
    let length = 1 + data[1] as usize % 5;
    let start = data[2] as usize % m;
    let mut bytes = data[3..].iter().cycle();
    let mut next = || bytes.next().map_or(0.0, |&b| b as f64 / 32.0 - 4.0);
    let unary = (0..length).map(|_| (0..m).map(|_| next()).collect()).collect();
    let pairwise = (0..m).map(|_| (0..m).map(|_| next()).collect()).collect();
    let scores = ChainScores::from_rows(Query::new(start, length), unary, pairwise);

    let k = 4;
    let slva = list_viterbi(&scores, k, SequencePredicate::Path, 100_000);
    let exact = match top_k_paths_exact(&scores, k, &[]) {
        Ok(list) => list,
        Err(Error::Infeasible { .. }) => {
            assert!(length > m && slva.items.is_empty());
            return;
        }
        Err(e) => panic!("{e}"),
    };
    assert_eq!(slva.items.len(), exact.items.len());
    for ((a, sa), (b, sb)) in slva.items.iter().zip(&exact.items) {
        assert!((sa - sb).abs() <= 1e-9);
        assert!((scores.score(a.pois()) - sa).abs() <= 1e-9);
        assert!((scores.score(b.pois()) - sb).abs() <= 1e-9);
    }
});
