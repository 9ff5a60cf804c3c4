//! Domain knowledge mined from unlabeled reviews.
//!
//! For every mention word (a noun, proper noun or entity token), content
//! lemmas co-occurring with it in a sentence are counted and scored with
//! tf-idf: tf is the co-occurrence count normalized by the word's largest
//! count, idf is `ln(|reviews| / |reviews containing the phrase|)`.
//! Entries scoring below `rho` are dropped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParsedDocument, Pos, Span, Token};
use crate::error::{Error, Result};
use crate::knowledge::{KnowledgePhrase, KnowledgeSource};

pub const DEFAULT_RHO: f64 = 5.0;
pub const DEFAULT_LOOKUP_CAP: usize = 50;

static STOPWORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();

pub fn stopwords() -> &'static HashSet<&'static str> {
    STOPWORDS.get_or_init(|| {
        include_str!("../data/stopwords.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

/// Content POS classes a knowledge phrase can carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PhrasePos {
    Noun,
    Adj,
    Verb,
}

impl PhrasePos {
    /// Proper nouns count as nouns.
    pub fn from_pos(pos: Pos) -> Option<PhrasePos> {
        match pos {
            Pos::Noun | Pos::Propn => Some(PhrasePos::Noun),
            Pos::Adj => Some(PhrasePos::Adj),
            Pos::Verb => Some(PhrasePos::Verb),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub count: u64,
    pub phrase: String,
    pub pos: PhrasePos,
    pub score: f64,
}

/// Fields are declared in lexicographic order so the JSON file has stable,
/// sorted keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainKb {
    pub corpus_size: usize,
    pub domain: String,
    pub entries: BTreeMap<String, Vec<KbEntry>>,
    pub rho: f64,
}

fn is_mention_token(tok: &Token) -> bool {
    tok.pos.is_nominal() || tok.ner.is_entity()
}

fn has_letter(s: &str) -> bool {
    s.chars().any(char::is_alphabetic)
}

/// Lowercased lemmas of the span's nouns and entity tokens, deduplicated in
/// order of appearance.
pub fn extract_mention_words(mention: &Span, doc: &ParsedDocument) -> Vec<String> {
    mention_words(&doc.tokens[mention.start..mention.end])
}

pub fn mention_words(tokens: &[Token]) -> Vec<String> {
    let mut seen = HashSet::new();
    tokens
        .iter()
        .filter(|t| is_mention_token(t))
        .map(Token::key)
        .filter(|k| has_letter(k) && seen.insert(k.clone()))
        .collect()
}

#[derive(Default)]
struct Counts {
    /// (word, phrase) → (sentences with both, POS votes)
    pairs: HashMap<(String, String), (u64, [u64; 3])>,
    /// phrase → number of reviews containing it
    doc_freq: HashMap<String, u64>,
}

impl Counts {
    fn merge(mut self, other: Counts) -> Counts {
        for (k, (c, votes)) in other.pairs {
            let e = self.pairs.entry(k).or_insert((0, [0; 3]));
            e.0 += c;
            for (acc, v) in e.1.iter_mut().zip(votes) {
                *acc += v;
            }
        }
        for (k, c) in other.doc_freq {
            *self.doc_freq.entry(k).or_insert(0) += c;
        }
        self
    }

    fn add_document(&mut self, doc: &ParsedDocument) {
        let stop = stopwords();
        let mut in_doc = HashSet::new();
        for s in 0..doc.sentences.len() {
            let toks = doc.sentence_tokens(s);
            let mut words: Vec<String> = Vec::new();
            let mut phrases: Vec<(String, PhrasePos)> = Vec::new();
            for t in toks {
                let key = t.key();
                in_doc.insert(key.clone());
                if !has_letter(&key) {
                    continue;
                }
                if is_mention_token(t) && !words.contains(&key) {
                    words.push(key.clone());
                }
                if let Some(pp) = PhrasePos::from_pos(t.pos) {
                    // first occurrence in the sentence fixes the POS vote
                    if !stop.contains(key.as_str()) && !phrases.iter().any(|(k, _)| *k == key) {
                        phrases.push((key, pp));
                    }
                }
            }
            for w in &words {
                for (k, pp) in &phrases {
                    if k == w {
                        continue;
                    }
                    let e = self.pairs.entry((w.clone(), k.clone())).or_insert((0, [0; 3]));
                    e.0 += 1;
                    e.1[pp.index()] += 1;
                }
            }
        }
        for k in in_doc {
            *self.doc_freq.entry(k).or_insert(0) += 1;
        }
    }
}

fn majority_pos(votes: [u64; 3]) -> PhrasePos {
    let mut best = PhrasePos::Noun;
    for pp in [PhrasePos::Adj, PhrasePos::Verb] {
        if votes[pp.index()] > votes[best.index()] {
            best = pp;
        }
    }
    best
}

/// Mines the domain KB from unlabeled reviews. Co-occurrence is counted per
/// sentence; document frequency is counted per review.
pub fn mine_domain_kb(unlabeled: &[ParsedDocument], rho: f64) -> Result<DomainKb> {
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabeled corpus has no reviews".into()));
    }
    if !(rho >= 0.0) {
        return Err(Error::Config(format!("rho must be >= 0, got {rho}")));
    }
    let counts = unlabeled
        .par_iter()
        .fold(Counts::default, |mut acc, doc| {
            acc.add_document(doc);
            acc
        })
        .reduce(Counts::default, Counts::merge);

    let n = unlabeled.len() as f64;
    let mut by_word: BTreeMap<String, Vec<(String, u64, [u64; 3])>> = BTreeMap::new();
    for ((w, k), (c, votes)) in counts.pairs {
        by_word.entry(w).or_default().push((k, c, votes));
    }
    let mut entries = BTreeMap::new();
    for (w, list) in by_word {
        let max = list.iter().map(|(_, c, _)| *c).max().unwrap_or(1) as f64;
        let mut kept: Vec<KbEntry> = list
            .into_iter()
            .filter_map(|(k, c, votes)| {
                let df = counts.doc_freq[&k] as f64;
                let score = (c as f64 / max) * (n / df).ln();
                (score >= rho).then(|| KbEntry {
                    count: c,
                    phrase: k,
                    pos: majority_pos(votes),
                    score,
                })
            })
            .collect();
        if kept.is_empty() {
            continue;
        }
        sort_entries(&mut kept);
        entries.insert(w, kept);
    }
    let domain = unlabeled[0].domain.clone();
    Ok(DomainKb {
        corpus_size: unlabeled.len(),
        domain,
        entries,
        rho,
    })
}

fn sort_entries(list: &mut [KbEntry]) {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.phrase.cmp(&b.phrase)));
}

impl DomainKb {
    /// Union of the entries of `words`, one per phrase at its best score,
    /// sorted by score and truncated to `cap`.
    pub fn lookup(&self, words: &[String], cap: usize) -> Vec<KnowledgePhrase> {
        let mut best: HashMap<&str, f64> = HashMap::new();
        for w in words {
            for e in self.entries.get(w).into_iter().flatten() {
                let s = best.entry(e.phrase.as_str()).or_insert(e.score);
                if e.score > *s {
                    *s = e.score;
                }
            }
        }
        let mut merged: Vec<(&str, f64)> = best.into_iter().collect();
        merged.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        merged
            .into_iter()
            .take(cap)
            .map(|(p, s)| KnowledgePhrase::new(p, KnowledgeSource::Domain, Some(s)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<DomainKb> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn num_entries(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }
}

pub fn lookup_domain_knowledge(
    kb: &DomainKb,
    mention: &Span,
    doc: &ParsedDocument,
    cap: usize,
) -> Vec<KnowledgePhrase> {
    kb.lookup(&extract_mention_words(mention, doc), cap.max(1))
}
