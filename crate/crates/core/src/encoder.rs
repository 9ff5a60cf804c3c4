//! Sub-token encoding of documents and knowledge phrases.
//!
//! Words are split by greedy longest-match WordPiece against a vocabulary
//! (the bundled base list plus whole words collected from the corpus). In
//! TOY mode each sub-token indexes a trainable table; in FROZEN mode vectors
//! come precomputed from a file. Either way an optional affect vector is
//! appended per sub-token and a trainable projection maps the result to the
//! span width `d`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{EncoderConfig, EncoderMode};
use crate::corpus::{ParsedDocument, Token};
use crate::error::{Error, Result};
use crate::general_kb::AffectLexicon;
use crate::tape::{Graph, ParamId, Tensor, Var};

pub const UNK: &str = "[UNK]";
const MAX_WORD_CHARS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    /// The sub-tokenizer vocabulary shipped with the crate.
    pub fn bundled() -> Vocab {
        Vocab::from_tokens(
            include_str!("../data/wordpiece_vocab.txt")
                .lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }

    /// Bundled vocabulary extended with every lowercased corpus word seen at
    /// least `min_count` times, appended in lexicographic order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>, min_count: usize) -> Vocab {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for w in words {
            *counts.entry(w.to_lowercase()).or_insert(0) += 1;
        }
        let mut v = Vocab::bundled();
        for (w, c) in counts {
            if c >= min_count.max(1) && !v.index.contains_key(&w) && w.chars().count() <= MAX_WORD_CHARS {
                v.index.insert(w.clone(), v.tokens.len());
                v.tokens.push(w);
            }
        }
        v
    }

    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    fn unk(&self) -> usize {
        self.index.get(UNK).copied().unwrap_or(0)
    }

    /// Greedy longest-match-first split of one word; a word with any
    /// unmatched remainder becomes a single `[UNK]`.
    pub fn wordpiece(&self, word: &str) -> Vec<usize> {
        let lower = word.to_lowercase();
        if let Some(id) = self.id(&lower) {
            return vec![id];
        }
        let chars: Vec<char> = lower.chars().collect();
        if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
            return vec![self.unk()];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let body: String = chars[start..end].iter().collect();
                let candidate = if start == 0 { body } else { format!("##{body}") };
                if let Some(id) = self.id(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![self.unk()],
            }
        }
        pieces
    }
}

/// Sub-token view of a word sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedText {
    pub ids: Vec<usize>,
    /// Word index of every sub-token.
    pub word_of: Vec<usize>,
    /// First and one-past-last sub-token of every word.
    pub word_range: Vec<(usize, usize)>,
    /// Per-sub-token affect rows (`n × k`), when enabled.
    pub affect: Option<Tensor>,
    /// Per-sub-token precomputed vectors (FROZEN mode).
    pub frozen: Option<Tensor>,
}

impl EncodedText {
    pub fn len(&self) -> usize {
        self.word_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_of.is_empty()
    }

    fn from_pieces(pieces: Vec<Vec<usize>>) -> EncodedText {
        let mut ids = Vec::new();
        let mut word_of = Vec::new();
        let mut word_range = Vec::with_capacity(pieces.len());
        for (w, p) in pieces.into_iter().enumerate() {
            let start = ids.len();
            word_of.extend(std::iter::repeat_n(w, p.len()));
            ids.extend(p);
            word_range.push((start, ids.len()));
        }
        EncodedText {
            ids,
            word_of,
            word_range,
            affect: None,
            frozen: None,
        }
    }

    /// Concatenates several encodings, returning each part's sub-token offset.
    pub fn concat(parts: &[&EncodedText]) -> (EncodedText, Vec<usize>) {
        let mut out = EncodedText::from_pieces(Vec::new());
        let mut offsets = Vec::with_capacity(parts.len());
        let mut affect: Option<Vec<f64>> = None;
        let mut affect_cols = 0;
        let mut frozen: Option<Vec<f64>> = None;
        let mut frozen_cols = 0;
        for p in parts {
            let base = out.ids.len();
            let word_base = out.word_range.len();
            offsets.push(base);
            out.ids.extend(&p.ids);
            out.word_of.extend(p.word_of.iter().map(|w| w + word_base));
            out.word_range
                .extend(p.word_range.iter().map(|(s, e)| (s + base, e + base)));
            if let Some(a) = &p.affect {
                affect_cols = a.cols;
                affect.get_or_insert_with(Vec::new).extend(&a.data);
            }
            if let Some(f) = &p.frozen {
                frozen_cols = f.cols;
                frozen.get_or_insert_with(Vec::new).extend(&f.data);
            }
        }
        let n = out.ids.len().max(out.word_of.len());
        out.affect = affect.map(|d| Tensor::from_vec(n, affect_cols, d));
        out.frozen = frozen.map(|d| Tensor::from_vec(n, frozen_cols, d));
        (out, offsets)
    }
}

/// Precomputed contextual vectors: one JSONL record per text,
/// `{"doc_id", "word_ids": [word index per sub-token], "vectors": [[f64; d']...]}`.
#[derive(Clone, Debug, Default)]
pub struct FrozenStore {
    dim: usize,
    entries: HashMap<String, (Vec<usize>, Tensor)>,
}

#[derive(Deserialize)]
struct FrozenRecord {
    doc_id: String,
    word_ids: Vec<usize>,
    vectors: Vec<Vec<f64>>,
}

impl FrozenStore {
    pub fn load(path: &Path, dim: usize) -> Result<FrozenStore> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FrozenRecord =
                serde_json::from_str(&line).map_err(|e| Error::ingestion(&name, i + 1, "<record>", e.to_string()))?;
            if rec.word_ids.len() != rec.vectors.len() || rec.vectors.is_empty() {
                return Err(Error::ingestion(
                    &name,
                    i + 1,
                    "vectors",
                    "count differs from word_ids or is zero",
                ));
            }
            if rec.word_ids.windows(2).any(|w| w[1] < w[0] || w[1] > w[0] + 1) || rec.word_ids[0] != 0 {
                return Err(Error::ingestion(
                    &name,
                    i + 1,
                    "word_ids",
                    "must start at 0 and be non-decreasing by steps of 0 or 1",
                ));
            }
            if let Some(bad) = rec.vectors.iter().position(|v| v.len() != dim) {
                return Err(Error::ingestion(
                    &name,
                    i + 1,
                    format!("vectors[{bad}]"),
                    format!("expected width {dim}"),
                ));
            }
            let n = rec.vectors.len();
            let t = Tensor::from_vec(n, dim, rec.vectors.into_iter().flatten().collect());
            entries.insert(rec.doc_id, (rec.word_ids, t));
        }
        Ok(FrozenStore { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, doc_id: &str) -> Option<&(Vec<usize>, Tensor)> {
        self.entries.get(doc_id)
    }
}

/// Everything needed to turn words into sub-token inputs.
pub struct TextEncoder<'a> {
    pub config: &'a EncoderConfig,
    pub vocab: &'a Vocab,
    pub affect: Option<&'a AffectLexicon>,
    pub frozen: Option<&'a FrozenStore>,
}

impl TextEncoder<'_> {
    fn affect_rows(&self, lemmas: &[String], enc: &EncodedText) -> Option<Tensor> {
        let lex = self.affect?;
        let k = lex.width();
        let mut data = Vec::with_capacity(enc.len() * k);
        for &w in &enc.word_of {
            data.extend(lex.vector_for(&lemmas[w]));
        }
        Some(Tensor::from_vec(enc.len(), k, data))
    }

    /// Encodes a word sequence. `key` names the text in the frozen store.
    pub fn encode_words(&self, key: &str, surfaces: &[String], lemmas: &[String]) -> Result<EncodedText> {
        if surfaces.is_empty() {
            return Err(Error::Empty(format!("nothing to encode for `{key}`")));
        }
        let mut enc = match self.config.mode {
            EncoderMode::ToyTrainable => {
                EncodedText::from_pieces(surfaces.iter().map(|w| self.vocab.wordpiece(w)).collect())
            }
            EncoderMode::FrozenPretrained => {
                let store = self
                    .frozen
                    .ok_or_else(|| Error::Config("FROZEN_PRETRAINED mode without a vector store".into()))?;
                let (word_ids, vectors) = store
                    .get(key)
                    .ok_or_else(|| Error::UnknownDocument(format!("{key} (no precomputed vectors)")))?;
                let n_words = word_ids.last().map(|w| w + 1).unwrap_or(0);
                if n_words != surfaces.len() {
                    return Err(Error::Shape(format!(
                        "precomputed vectors for `{key}` cover {n_words} words, text has {}",
                        surfaces.len()
                    )));
                }
                let mut pieces = vec![Vec::new(); n_words];
                for &w in word_ids.iter() {
                    pieces[w].push(0);
                }
                let mut enc = EncodedText::from_pieces(pieces);
                enc.frozen = Some(vectors.clone());
                enc
            }
        };
        enc.affect = self.affect_rows(lemmas, &enc);
        Ok(enc)
    }

    pub fn encode_document(&self, doc: &ParsedDocument) -> Result<EncodedText> {
        let surfaces: Vec<String> = doc.tokens.iter().map(|t| t.surface.clone()).collect();
        let lemmas: Vec<String> = doc.tokens.iter().map(Token::key).collect();
        self.encode_words(&doc.doc_id, &surfaces, &lemmas)
    }
}

/// Trainable parameters of the token encoder.
#[derive(Clone, Copy, Debug)]
pub struct EncoderParams {
    pub table: Option<ParamId>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl EncoderParams {
    /// Token vectors (`n × d`) for an encoded text.
    pub fn embed(&self, g: &mut Graph<'_>, enc: &EncodedText) -> Result<Var> {
        let base = match (enc.frozen.as_ref(), self.table) {
            (Some(f), _) => g.constant(f.clone()),
            (None, Some(table)) => g.gather(table, enc.ids.clone()),
            (None, None) => return Err(Error::Config("frozen encoder given text without vectors".into())),
        };
        let input = match &enc.affect {
            Some(a) => {
                let a = g.constant(a.clone());
                g.concat_cols(&[base, a])?
            }
            None => base,
        };
        let w = g.param(self.proj_w);
        let b = g.param(self.proj_b);
        let x = g.matmul(input, w)?;
        g.add_row(x, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wordpiece_greedy_longest_match() {
        let v = Vocab::bundled();
        let ids = v.wordpiece("Moonbeam");
        let pieces: Vec<&str> = ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(pieces, vec!["moon", "##b", "##e", "##am"]);
        assert_eq!(v.wordpiece("clock").len(), 1);
        assert_eq!(v.wordpiece("\u{2603}"), vec![v.id(UNK).unwrap()]);
    }

    #[test]
    fn green_moonbeam_subtoken_count() {
        let v = Vocab::bundled();
        let n: usize = ["a", "green", "Moonbeam"].iter().map(|w| v.wordpiece(w).len()).sum();
        // golden: a | green | moon ##b ##e ##am
        assert_eq!(n, 6);
    }

    #[test]
    fn corpus_words_extend_vocab() {
        let v = Vocab::build(["Moonbeam", "moonbeam", "clock", "zzyzx"], 2);
        assert_eq!(v.wordpiece("moonbeam").len(), 1);
        assert!(v.id("zzyzx").is_none());
        assert_eq!(v.len(), Vocab::bundled().len() + 1);
    }

    #[test]
    fn concat_offsets() {
        let v = Vocab::bundled();
        let cfg = EncoderConfig::default();
        let enc = TextEncoder {
            config: &cfg,
            vocab: &v,
            affect: None,
            frozen: None,
        };
        let a = enc
            .encode_words("a", &["moonbeam".into()], &["moonbeam".into()])
            .unwrap();
        let b = enc
            .encode_words("b", &["the".into(), "clock".into()], &["the".into(), "clock".into()])
            .unwrap();
        let (c, off) = EncodedText::concat(&[&a, &b]);
        assert_eq!(off, vec![0, 4]);
        assert_eq!(c.word_range, vec![(0, 4), (4, 5), (5, 6)]);
        assert_eq!(c.word_of, vec![0, 0, 0, 0, 1, 2]);
        assert!(enc.encode_words("e", &[], &[]).is_err());
    }
}
