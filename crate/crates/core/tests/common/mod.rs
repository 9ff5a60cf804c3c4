//! Shared helpers for the integration tests: a brute-force tf-idf oracle and
//! random corpora to feed it.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use revcoref::corpus::{parse_document_line, ParsedDocument};
use revcoref::kb_mining::DomainKb;

/// One retained (word, phrase) pair as the oracle sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleEntry {
    pub count: u64,
    pub pos: String,
    pub score: f64,
}

fn stopword_list() -> HashSet<String> {
    include_str!("../../data/stopwords.txt")
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

fn phrase_class(pos: &str) -> Option<&'static str> {
    match pos {
        "NOUN" | "PROPN" => Some("NOUN"),
        "ADJ" => Some("ADJ"),
        "VERB" => Some("VERB"),
        _ => None,
    }
}

/// Enumerates every (word, phrase, sentence) co-occurrence and evaluates
/// tf = C / max C, idf = ln(N / df), score = tf * idf straight from the
/// definitions. Quadratic per sentence and happy to be slow.
pub fn oracle_kb(docs: &[ParsedDocument], rho: f64) -> BTreeMap<String, BTreeMap<String, OracleEntry>> {
    let stop = stopword_list();
    let letter = |s: &str| s.chars().any(char::is_alphabetic);
    // (word, phrase, doc, sentence) -> class of the phrase's first qualifying token there
    let mut hits: BTreeMap<(String, String, usize, usize), &'static str> = BTreeMap::new();
    let mut df: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (d, doc) in docs.iter().enumerate() {
        for tok in &doc.tokens {
            df.entry(tok.lemma.to_lowercase()).or_default().insert(d);
        }
        for (s, &(a, b)) in doc.sentences.iter().enumerate() {
            for i in a..b {
                let ti = &doc.tokens[i];
                let w = ti.lemma.to_lowercase();
                let nominal = matches!(ti.pos.as_str(), "NOUN" | "PROPN");
                let entity = ti.ner.as_str() != "NONE" && ti.ner.as_str() != "O";
                if !(nominal || entity) || !letter(&w) {
                    continue;
                }
                for j in a..b {
                    let tj = &doc.tokens[j];
                    let k = tj.lemma.to_lowercase();
                    let Some(class) = phrase_class(tj.pos.as_str()) else {
                        continue;
                    };
                    if k == w || !letter(&k) || stop.contains(&k) {
                        continue;
                    }
                    hits.entry((w.clone(), k, d, s)).or_insert(class);
                }
            }
        }
    }
    // (word, phrase) -> (count, votes)
    let mut pairs: BTreeMap<(String, String), (u64, BTreeMap<&'static str, u64>)> = BTreeMap::new();
    for ((w, k, _, _), class) in hits {
        let e = pairs.entry((w, k)).or_default();
        e.0 += 1;
        *e.1.entry(class).or_default() += 1;
    }
    let mut max_c: BTreeMap<String, u64> = BTreeMap::new();
    for ((w, _), (c, _)) in &pairs {
        let m = max_c.entry(w.clone()).or_default();
        *m = (*m).max(*c);
    }
    let n = docs.len() as f64;
    let mut out: BTreeMap<String, BTreeMap<String, OracleEntry>> = BTreeMap::new();
    for ((w, k), (c, votes)) in pairs {
        let tf = c as f64 / max_c[&w] as f64;
        let idf = (n / df[&k].len() as f64).ln();
        let score = tf * idf;
        if score < rho {
            continue;
        }
        // majority class; ties go NOUN, then ADJ, then VERB
        let mut pos = "NOUN";
        for cand in ["ADJ", "VERB"] {
            if votes.get(cand).copied().unwrap_or(0) > votes.get(pos).copied().unwrap_or(0) {
                pos = cand;
            }
        }
        out.entry(w).or_default().insert(
            k,
            OracleEntry {
                count: c,
                pos: pos.to_string(),
                score,
            },
        );
    }
    out
}

/// Compares a mined KB with the oracle: identical words, phrases, counts
/// and POS, scores within `tol`, and entries sorted by descending score.
pub fn compare_with_oracle(
    kb: &DomainKb,
    oracle: &BTreeMap<String, BTreeMap<String, OracleEntry>>,
    tol: f64,
) -> Result<(), String> {
    let mined: BTreeSet<&String> = kb.entries.keys().collect();
    let expected: BTreeSet<&String> = oracle.keys().collect();
    if mined != expected {
        return Err(format!("word sets differ: mined {mined:?}, oracle {expected:?}"));
    }
    for (w, entries) in &kb.entries {
        let want = &oracle[w];
        if entries.len() != want.len() {
            return Err(format!("`{w}`: {} entries, oracle {}", entries.len(), want.len()));
        }
        for e in entries {
            let Some(o) = want.get(&e.phrase) else {
                return Err(format!("`{w}`: unexpected phrase `{}`", e.phrase));
            };
            let pos = serde_json::to_value(e.pos).unwrap();
            if e.count != o.count || pos.as_str() != Some(o.pos.as_str()) || (e.score - o.score).abs() > tol {
                return Err(format!(
                    "`{w}` -> `{}`: mined {:?}/{pos}/{}, oracle {o:?}",
                    e.phrase, e.count, e.score
                ));
            }
        }
        if entries.windows(2).any(|p| p[0].score < p[1].score) {
            return Err(format!("`{w}`: entries not sorted by score"));
        }
    }
    Ok(())
}

const LEMMAS: [&str; 16] = [
    "clock", "Alarm", "moonbeam", "band", "hang", "loud", "ring", "Green", "buy", "the", "it", "battery", "snooze",
    "42", "light", "it's",
];
const POS: [&str; 9] = ["NOUN", "PROPN", "VERB", "ADJ", "DET", "ADV", "PRON", "PUNCT", "NOUN"];
const NER: [&str; 4] = ["O", "O", "O", "PRODUCT"];

/// One parsed review as a JSON line; each sentence is a star around its
/// first token.
pub fn doc_json(id: &str, domain: &str, sentences: &[Vec<(&str, &str, &str)>]) -> String {
    let sents: Vec<serde_json::Value> = sentences
        .iter()
        .map(|s| {
            serde_json::Value::Array(
                s.iter()
                    .enumerate()
                    .map(|(i, (lemma, pos, ner))| {
                        serde_json::json!({
                            "surface": lemma, "lemma": lemma, "pos": pos, "ner": ner,
                            "dep_head": if i == 0 { -1 } else { 0 },
                            "dep_label": if i == 0 { "ROOT" } else { "dep" },
                        })
                    })
                    .collect(),
            )
        })
        .collect();
    serde_json::json!({"doc_id": id, "domain": domain, "sentences": sents}).to_string()
}

pub fn parse_doc(line: &str) -> ParsedDocument {
    parse_document_line(line, "<test>", 1, "").expect("valid test document")
}

/// A random corpus with at most `max_sentences` sentences over a small
/// vocabulary that includes stopwords, digits and mixed case.
pub fn random_corpus<R: Rng>(rng: &mut R, max_sentences: usize) -> Vec<ParsedDocument> {
    let total = rng.gen_range(1..=max_sentences);
    let mut docs = Vec::new();
    let mut left = total;
    while left > 0 {
        let n = rng.gen_range(1..=left.min(6));
        left -= n;
        let sentences: Vec<Vec<(&str, &str, &str)>> = (0..n)
            .map(|_| {
                (0..rng.gen_range(1..9))
                    .map(|_| {
                        (
                            *LEMMAS.choose(rng).unwrap(),
                            *POS.choose(rng).unwrap(),
                            *NER.choose(rng).unwrap(),
                        )
                    })
                    .collect()
            })
            .collect();
        docs.push(parse_doc(&doc_json(&format!("r{}", docs.len()), "toy", &sentences)));
    }
    docs
}
