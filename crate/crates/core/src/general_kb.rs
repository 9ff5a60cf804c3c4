//! General commonsense knowledge: an `(e1, relation, e2)` triple store with a
//! word index, and an affective lexicon of per-lemma vectors.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::knowledge::{KnowledgePhrase, KnowledgeSource};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triple {
    pub e1: String,
    pub relation: String,
    pub e2: String,
}

fn entity_words(entity: &str) -> impl Iterator<Item = String> + '_ {
    entity.split_whitespace().map(str::to_lowercase)
}

#[derive(Clone, Debug, Default)]
pub struct TripleStore {
    triples: Vec<Triple>,
    word_index: HashMap<String, Vec<usize>>,
}

impl TripleStore {
    pub fn new(triples: Vec<Triple>) -> Result<Self> {
        let mut word_index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, t) in triples.iter().enumerate() {
            if t.e1.trim().is_empty() || t.relation.trim().is_empty() || t.e2.trim().is_empty() {
                return Err(Error::Config(format!("triple {i} has an empty field")));
            }
            let words: BTreeSet<String> = entity_words(&t.e1).chain(entity_words(&t.e2)).collect();
            for w in words {
                word_index.entry(w).or_default().push(i);
            }
        }
        Ok(TripleStore { triples, word_index })
    }

    /// Reads `e1<TAB>relation<TAB>e2` rows.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        let mut triples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::ingestion(
                    &name,
                    i + 1,
                    "<row>",
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            for (f, field) in fields.iter().zip(["e1", "relation", "e2"]) {
                if f.trim().is_empty() {
                    return Err(Error::ingestion(&name, i + 1, field, "empty"));
                }
            }
            triples.push(Triple {
                e1: fields[0].trim().to_string(),
                relation: fields[1].trim().to_string(),
                e2: fields[2].trim().to_string(),
            });
        }
        TripleStore::new(triples)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triples_with_word(&self, word: &str) -> &[usize] {
        self.word_index.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    /// For every triple with an entity containing one of `words` (full-word,
    /// case-insensitive), returns the opposite entity. Results follow triple
    /// order, deduplicated, truncated to `cap`.
    pub fn lookup(&self, words: &[String], cap: usize) -> Vec<KnowledgePhrase> {
        let wanted: HashSet<String> = words.iter().map(|w| w.to_lowercase()).collect();
        let ids: BTreeSet<usize> = wanted
            .iter()
            .flat_map(|w| self.triples_with_word(w).iter().copied())
            .collect();
        let contains = |entity: &str| entity_words(entity).any(|w| wanted.contains(&w));
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for id in ids {
            let t = &self.triples[id];
            let mut other = Vec::with_capacity(2);
            if contains(&t.e1) {
                other.push(&t.e2);
            }
            if contains(&t.e2) {
                other.push(&t.e1);
            }
            for e in other {
                if seen.insert(e.to_lowercase()) {
                    out.push(KnowledgePhrase::new(e.clone(), KnowledgeSource::General, None));
                    if out.len() == cap.max(1) {
                        return out;
                    }
                }
            }
        }
        out
    }
}

pub fn lookup_general_knowledge(store: &TripleStore, mention_words: &[String], cap: usize) -> Vec<KnowledgePhrase> {
    store.lookup(mention_words, cap)
}

/// Per-lemma affect vectors; unknown lemmas map to zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffectLexicon {
    table: HashMap<String, Vec<f64>>,
    width: usize,
}

impl AffectLexicon {
    pub fn new(width: usize, table: HashMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((k, v)) = table.iter().find(|(_, v)| v.len() != width) {
            return Err(Error::Shape(format!(
                "affect vector for `{k}` has width {}, expected {width}",
                v.len()
            )));
        }
        let table = table.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
        Ok(AffectLexicon { table, width })
    }

    /// Reads `lemma,v1,...,vk`; the header row fixes `k`.
    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::ingestion(&name, 1, "<header>", e.to_string()))?;
        let width = reader
            .headers()
            .map_err(|e| Error::ingestion(&name, 1, "<header>", e.to_string()))?
            .len()
            .saturating_sub(1);
        if width == 0 {
            return Err(Error::ingestion(&name, 1, "<header>", "no value columns"));
        }
        let mut table = HashMap::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::ingestion(&name, line, "<row>", e.to_string()))?;
            if rec.len() != width + 1 {
                return Err(Error::ingestion(
                    &name,
                    line,
                    "<row>",
                    format!("expected {} columns, got {}", width + 1, rec.len()),
                ));
            }
            let values = rec
                .iter()
                .skip(1)
                .enumerate()
                .map(|(j, v)| {
                    v.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                        Error::ingestion(&name, line, format!("v{}", j + 1), format!("not a number: `{v}`"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            table.insert(rec[0].trim().to_lowercase(), values);
        }
        AffectLexicon::new(width, table)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn vector_for(&self, lemma: &str) -> Vec<f64> {
        self.table
            .get(&lemma.to_lowercase())
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.width])
    }
}

pub fn affect_vector(lexicon: &AffectLexicon, token: &Token) -> Vec<f64> {
    lexicon.vector_for(&token.lemma)
}
