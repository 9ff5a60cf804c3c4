//! Candidate knowledge phrases, whichever store they came from.

use serde::{Deserialize, Serialize};

use crate::corpus::{ParsedDocument, Pos, Span, SpanKind, Token};

/// Upper bound on the merged knowledge list of a mention.
pub const MAX_MERGED_KNOWLEDGE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeSource {
    Domain,
    General,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgePhrase {
    pub text: String,
    pub source: KnowledgeSource,
    /// tf-idf score for domain entries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl KnowledgePhrase {
    pub fn new(text: impl Into<String>, source: KnowledgeSource, score: Option<f64>) -> Self {
        KnowledgePhrase {
            text: text.into(),
            source,
            score,
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.text.split_whitespace().map(str::to_lowercase).collect()
    }

    /// Materializes the phrase as its own one-sentence context. Without a
    /// parse, every word attaches to the last word, which is the head.
    pub fn to_document(&self) -> (ParsedDocument, Span) {
        let mut words = self.words();
        if words.is_empty() {
            words.push(self.text.clone());
        }
        let last = words.len() - 1;
        let tokens = words
            .into_iter()
            .enumerate()
            .map(|(i, w)| Token {
                surface: w.clone(),
                lemma: w,
                pos: Pos::Other,
                ner: crate::corpus::NerTag::NONE,
                dep_head: (i != last).then_some(last),
                dep_label: if i == last { "ROOT".into() } else { "dep".into() },
            })
            .collect::<Vec<_>>();
        let n = tokens.len();
        let doc = ParsedDocument {
            doc_id: format!("kb:{}", self.text),
            domain: String::new(),
            tokens,
            sentences: vec![(0, n)],
        };
        let span = Span {
            doc_id: doc.doc_id.clone(),
            start: 0,
            end: n,
            head: last,
            kind: SpanKind::KnowledgePhrase,
        };
        (doc, span)
    }
}

/// Domain entries first, then general ones; duplicates keep their first
/// occurrence.
pub fn merge_knowledge(
    domain: Vec<KnowledgePhrase>,
    general: Vec<KnowledgePhrase>,
    cap: usize,
) -> Vec<KnowledgePhrase> {
    let mut seen = std::collections::HashSet::new();
    domain
        .into_iter()
        .chain(general)
        .filter(|k| seen.insert(k.text.to_lowercase()))
        .take(cap)
        .collect()
}
