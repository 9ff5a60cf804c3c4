//! Data model for pre-parsed reviews, coreference annotations and labeled
//! (context, mention, anaphor) triples.
//!
//! Documents arrive already tokenized, tagged and dependency-parsed (see
//! [`io`] for the JSONL layout). In memory every dependency head is a
//! document-global token index, with `None` standing for ROOT.

mod io;
mod triples;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    ingest_parsed_corpus, load_annotations, load_split_assignment, parse_document_line, read_triples,
    write_annotations, write_documents, write_triples,
};
pub use triples::{
    build_triples, split_by_assignment, split_dataset, DatasetSplit, NegativeSampling, SplitName, SplitRatios,
    DEFAULT_NEGATIVE_RATIO,
};

/// Coarse part-of-speech tags (the Universal Dependencies inventory plus `OTHER`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pos {
    Noun,
    Propn,
    Verb,
    Adj,
    Adv,
    Pron,
    Det,
    Adp,
    Aux,
    Cconj,
    Sconj,
    Num,
    Part,
    Punct,
    Intj,
    Sym,
    X,
    Other,
}

const POS_NAMES: &[(Pos, &str)] = &[
    (Pos::Noun, "NOUN"),
    (Pos::Propn, "PROPN"),
    (Pos::Verb, "VERB"),
    (Pos::Adj, "ADJ"),
    (Pos::Adv, "ADV"),
    (Pos::Pron, "PRON"),
    (Pos::Det, "DET"),
    (Pos::Adp, "ADP"),
    (Pos::Aux, "AUX"),
    (Pos::Cconj, "CCONJ"),
    (Pos::Sconj, "SCONJ"),
    (Pos::Num, "NUM"),
    (Pos::Part, "PART"),
    (Pos::Punct, "PUNCT"),
    (Pos::Intj, "INTJ"),
    (Pos::Sym, "SYM"),
    (Pos::X, "X"),
    (Pos::Other, "OTHER"),
];

impl Pos {
    pub fn as_str(self) -> &'static str {
        POS_NAMES
            .iter()
            .find(|(p, _)| *p == self)
            .map(|(_, s)| *s)
            .unwrap_or("OTHER")
    }

    /// Nouns in the broad sense used for mention words: common and proper.
    pub fn is_nominal(self) -> bool {
        matches!(self, Pos::Noun | Pos::Propn)
    }
}

impl FromStr for Pos {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        POS_NAMES
            .iter()
            .find(|(_, name)| *name == s)
            .map(|(p, _)| *p)
            .ok_or_else(|| format!("unknown POS tag `{s}`"))
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Pos {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Pos {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Named-entity tags (OntoNotes inventory, as emitted by common taggers).
pub const NER_TAGS: &[&str] = &[
    "NONE",
    "PERSON",
    "NORP",
    "FAC",
    "ORG",
    "GPE",
    "LOC",
    "PRODUCT",
    "EVENT",
    "WORK_OF_ART",
    "LAW",
    "LANGUAGE",
    "DATE",
    "TIME",
    "PERCENT",
    "MONEY",
    "QUANTITY",
    "ORDINAL",
    "CARDINAL",
    "MISC",
];

/// An entity tag from [`NER_TAGS`]; index 0 is `NONE`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NerTag(u8);

impl NerTag {
    pub const NONE: NerTag = NerTag(0);

    pub fn as_str(self) -> &'static str {
        NER_TAGS[self.0 as usize]
    }

    pub fn is_entity(self) -> bool {
        self.0 != 0
    }
}

impl FromStr for NerTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        // BIO prefixes are accepted and stripped.
        let bare = s.strip_prefix("B-").or_else(|| s.strip_prefix("I-")).unwrap_or(s);
        let bare = if bare == "O" || bare.is_empty() { "NONE" } else { bare };
        NER_TAGS
            .iter()
            .position(|t| *t == bare)
            .map(|i| NerTag(i as u8))
            .ok_or_else(|| format!("unknown NER tag `{s}`"))
    }
}

impl fmt::Display for NerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub surface: String,
    pub lemma: String,
    pub pos: Pos,
    pub ner: NerTag,
    /// Document-global index of the syntactic head; `None` is ROOT.
    pub dep_head: Option<usize>,
    pub dep_label: String,
}

impl Token {
    /// Lowercased lemma, the key used by every knowledge lookup.
    pub fn key(&self) -> String {
        self.lemma.to_lowercase()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedDocument {
    pub doc_id: String,
    pub domain: String,
    pub tokens: Vec<Token>,
    /// Half-open token ranges, sorted and covering the whole document.
    pub sentences: Vec<(usize, usize)>,
}

impl ParsedDocument {
    /// Builds a document from per-sentence token lists whose `dep_head`
    /// values are still sentence-local, then validates it.
    pub fn from_sentences(
        doc_id: impl Into<String>,
        domain: impl Into<String>,
        sentences: Vec<Vec<Token>>,
    ) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut ranges = Vec::with_capacity(sentences.len());
        for sentence in sentences {
            let start = tokens.len();
            for mut tok in sentence {
                tok.dep_head = tok.dep_head.map(|h| h + start);
                tokens.push(tok);
            }
            ranges.push((start, tokens.len()));
        }
        let doc = ParsedDocument {
            doc_id: doc_id.into(),
            domain: domain.into(),
            tokens,
            sentences: ranges,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of the sentence containing `token`.
    pub fn sentence_of(&self, token: usize) -> Option<usize> {
        let idx = self.sentences.partition_point(|&(_, end)| end <= token);
        (idx < self.sentences.len() && self.sentences[idx].0 <= token).then_some(idx)
    }

    pub fn sentence_tokens(&self, sentence: usize) -> &[Token] {
        let (s, e) = self.sentences[sentence];
        &self.tokens[s..e]
    }

    pub fn validate(&self) -> Result<()> {
        let err = |message: String| Error::Structure {
            doc_id: self.doc_id.clone(),
            message,
        };
        let mut expected = 0;
        for &(s, e) in &self.sentences {
            if s != expected || e <= s {
                return Err(err(format!(
                    "sentence range [{s}, {e}) does not continue from token {expected}"
                )));
            }
            expected = e;
        }
        if expected != self.tokens.len() {
            return Err(err(format!(
                "sentences cover {expected} of {} tokens",
                self.tokens.len()
            )));
        }
        for (si, &(s, e)) in self.sentences.iter().enumerate() {
            for i in s..e {
                if let Some(h) = self.tokens[i].dep_head {
                    if h < s || h >= e {
                        return Err(err(format!(
                            "token {i} in sentence {si} has head {h} outside [{s}, {e})"
                        )));
                    }
                    if h == i {
                        return Err(err(format!("token {i} is its own head")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Dependency children of every token.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.tokens.len()];
        for (i, tok) in self.tokens.iter().enumerate() {
            if let Some(h) = tok.dep_head {
                out[h].push(i);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpanKind {
    Mention,
    Anaphor,
    KnowledgePhrase,
    SyntaxPhrase,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Span {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub head: usize,
    pub kind: SpanKind,
}

impl Span {
    /// Validates `[start, end)` against `doc` and resolves its head. When no
    /// head is given, the first token whose dependency head lies outside the
    /// span (or is ROOT) is used.
    pub fn resolve(
        doc: &ParsedDocument,
        start: usize,
        end: usize,
        head: Option<usize>,
        kind: SpanKind,
    ) -> Result<Span> {
        if start >= end || end > doc.len() {
            return Err(Error::InvalidSpan(format!(
                "[{start}, {end}) out of range for `{}` ({} tokens)",
                doc.doc_id,
                doc.len()
            )));
        }
        if doc.sentence_of(start) != doc.sentence_of(end - 1) {
            return Err(Error::InvalidSpan(format!(
                "[{start}, {end}) crosses a sentence boundary in `{}`",
                doc.doc_id
            )));
        }
        let head = match head {
            Some(h) if h >= start && h < end => h,
            Some(h) => {
                return Err(Error::InvalidSpan(format!(
                    "head {h} outside span [{start}, {end}) in `{}`",
                    doc.doc_id
                )))
            }
            None => select_head(doc, start, end),
        };
        Ok(Span {
            doc_id: doc.doc_id.clone(),
            start,
            end,
            head,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.doc_id == other.doc_id && self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, token: usize) -> bool {
        token >= self.start && token < self.end
    }

    pub fn with_kind(mut self, kind: SpanKind) -> Span {
        self.kind = kind;
        self
    }

    pub fn text(&self, doc: &ParsedDocument) -> String {
        doc.tokens[self.start..self.end]
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn select_head(doc: &ParsedDocument, start: usize, end: usize) -> usize {
    (start..end)
        .find(|&i| match doc.tokens[i].dep_head {
            None => true,
            Some(h) => h < start || h >= end,
        })
        .unwrap_or(end - 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTriple {
    pub doc_id: String,
    pub mention: Span,
    pub anaphor: Span,
    pub label: u8,
}

impl LabeledTriple {
    pub fn new(mention: Span, anaphor: Span, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::Config(format!("label must be 0 or 1, got {label}")));
        }
        if mention.doc_id != anaphor.doc_id {
            return Err(Error::InvalidSpan(format!(
                "mention in `{}` but anaphor in `{}`",
                mention.doc_id, anaphor.doc_id
            )));
        }
        if mention.overlaps(&anaphor) {
            return Err(Error::InvalidSpan(format!(
                "mention [{}, {}) overlaps anaphor [{}, {}) in `{}`",
                mention.start, mention.end, anaphor.start, anaphor.end, mention.doc_id
            )));
        }
        Ok(LabeledTriple {
            doc_id: mention.doc_id.clone(),
            mention: mention.with_kind(SpanKind::Mention),
            anaphor: anaphor.with_kind(SpanKind::Anaphor),
            label,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorefAnnotation {
    pub doc_id: String,
    pub clusters: Vec<Vec<Span>>,
}

impl CorefAnnotation {
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for (ci, cluster) in self.clusters.iter().enumerate() {
            for span in cluster {
                if let Some(prev) = seen.insert((span.start, span.end), ci) {
                    if prev != ci {
                        return Err(Error::Structure {
                            doc_id: self.doc_id.clone(),
                            message: format!(
                                "span [{}, {}) belongs to clusters {prev} and {ci}",
                                span.start, span.end
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// An indexed collection of documents.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    docs: Vec<ParsedDocument>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<ParsedDocument>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if index.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::Structure {
                    doc_id: d.doc_id.clone(),
                    message: "duplicate doc_id".into(),
                });
            }
        }
        Ok(Corpus { docs, index })
    }

    pub fn get(&self, doc_id: &str) -> Option<&ParsedDocument> {
        self.index.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn require(&self, doc_id: &str) -> Result<&ParsedDocument> {
        self.get(doc_id)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
    }

    pub fn docs(&self) -> &[ParsedDocument] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Documents not in `exclude`, in corpus order.
    pub fn without(&self, exclude: &std::collections::HashSet<String>) -> Vec<ParsedDocument> {
        self.docs
            .iter()
            .filter(|d| !exclude.contains(&d.doc_id))
            .cloned()
            .collect()
    }
}
