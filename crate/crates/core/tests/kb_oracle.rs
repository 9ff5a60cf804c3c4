mod common;

use common::{compare_with_oracle, doc_json, oracle_kb, parse_doc, random_corpus};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use revcoref::kb_mining::mine_domain_kb;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mining_matches_brute_force(seed in any::<u64>(), rho in prop::sample::select(vec![0.0, 0.3, 0.7, 1.5, 3.0])) {
        let docs = random_corpus(&mut ChaCha8Rng::seed_from_u64(seed), 50);
        let kb = mine_domain_kb(&docs, rho).unwrap();
        let oracle = oracle_kb(&docs, rho);
        if let Err(msg) = compare_with_oracle(&kb, &oracle, 1e-9) {
            return Err(TestCaseError::fail(msg));
        }
    }

    #[test]
    fn higher_rho_keeps_a_subset(seed in any::<u64>(), lo in 0.0f64..2.0, gap in 0.0f64..2.0) {
        let docs = random_corpus(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        let low = mine_domain_kb(&docs, lo).unwrap();
        let high = mine_domain_kb(&docs, lo + gap).unwrap();
        for (w, entries) in &high.entries {
            let kept = &low.entries[w];
            for e in entries {
                prop_assert!(kept.iter().any(|k| k.phrase == e.phrase && k.score == e.score));
            }
        }
    }
}

#[test]
fn five_review_hand_count() {
    // "clock" meets "alarm" in two sentences of r0 and one of r1: C = 3;
    // "band" once (r2), "loud" once (r3). Max C = 3.
    let lines = [
        doc_json(
            "r0",
            "alarm",
            &[
                vec![("clock", "NOUN", "O"), ("alarm", "NOUN", "O")],
                vec![("clock", "NOUN", "O"), ("alarm", "NOUN", "O"), ("the", "DET", "O")],
            ],
        ),
        doc_json("r1", "alarm", &[vec![("alarm", "NOUN", "O"), ("clock", "NOUN", "O")]]),
        doc_json("r2", "alarm", &[vec![("clock", "NOUN", "O"), ("band", "NOUN", "O")]]),
        doc_json("r3", "alarm", &[vec![("loud", "ADJ", "O"), ("clock", "NOUN", "O")]]),
        doc_json("r4", "alarm", &[vec![("battery", "NOUN", "O")]]),
    ];
    let docs: Vec<_> = lines.iter().map(|l| parse_doc(l)).collect();
    let kb = mine_domain_kb(&docs, 0.0).unwrap();
    let clock = &kb.entries["clock"];
    let get = |p: &str| clock.iter().find(|e| e.phrase == p).unwrap();
    // df(alarm) = 2, df(band) = 1, df(loud) = 1, N = 5
    assert_eq!(get("alarm").count, 3);
    assert!((get("alarm").score - (5.0f64 / 2.0).ln()).abs() < 1e-12);
    assert!((get("band").score - (5.0f64).ln() / 3.0).abs() < 1e-12);
    assert!((get("loud").score - (5.0f64).ln() / 3.0).abs() < 1e-12);
    assert!(clock.iter().all(|e| e.phrase != "the" && e.phrase != "clock"));
    compare_with_oracle(&kb, &oracle_kb(&docs, 0.0), 1e-12).unwrap();
}

#[test]
fn phrase_in_every_review_scores_zero() {
    let doc = parse_doc(&doc_json(
        "r0",
        "alarm",
        &[vec![
            ("ring", "VERB", "O"),
            ("moonbeam", "NOUN", "O"),
            ("loudly", "ADV", "O"),
        ]],
    ));
    let kb = mine_domain_kb(std::slice::from_ref(&doc), 0.0).unwrap();
    assert_eq!(kb.entries["moonbeam"][0].score, 0.0);
    assert!(mine_domain_kb(&[doc], 0.1).unwrap().entries.is_empty());
}

#[test]
fn kb_file_is_byte_stable() {
    let docs = random_corpus(&mut ChaCha8Rng::seed_from_u64(5), 40);
    let a = mine_domain_kb(&docs, 0.5).unwrap().to_json().unwrap();
    let mut reversed = docs.clone();
    reversed.reverse();
    let b = mine_domain_kb(&reversed, 0.5).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let at = |k: &str| a.find(&format!("\n  \"{k}\"")).unwrap();
    assert!(at("corpus_size") < at("domain") && at("domain") < at("entries") && at("entries") < at("rho"));
}
