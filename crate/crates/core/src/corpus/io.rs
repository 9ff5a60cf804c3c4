//! JSONL readers and writers.
//!
//! Parsed corpus, one document per line:
//!
//! ```text
//! {"doc_id": "r1", "domain": "alarm",
//!  "sentences": [[{"surface": "I", "lemma": "I", "pos": "PRON", "ner": "NONE",
//!                  "dep_head": 1, "dep_label": "nsubj"}, ...], ...]}
//! ```
//!
//! `dep_head` is sentence-local and ROOT is `-1`. Annotations and triples use
//! document-global token indices.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{CorefAnnotation, Corpus, LabeledTriple, ParsedDocument, Span, SpanKind, Token};
use crate::corpus::SplitName;
use crate::error::{Error, Result};

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let owned = path.to_path_buf();
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| Error::io(&owned, e))))
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true)))
}

struct Ctx<'a> {
    file: &'a str,
    line: usize,
}

impl Ctx<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::ingestion(self.file, self.line, field, message)
    }

    fn object<'v>(&self, v: &'v Value, field: &str) -> Result<&'v Map<String, Value>> {
        v.as_object().ok_or_else(|| self.err(field, "expected an object"))
    }

    fn string(&self, obj: &Map<String, Value>, field: &str, path: &str) -> Result<String> {
        match obj.get(field) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.err(path, "expected a string")),
            None => Err(self.err(path, "missing")),
        }
    }

    fn int(&self, obj: &Map<String, Value>, field: &str, path: &str) -> Result<i64> {
        match obj.get(field) {
            Some(v) => v.as_i64().ok_or_else(|| self.err(path, "expected an integer")),
            None => Err(self.err(path, "missing")),
        }
    }

    fn index(&self, obj: &Map<String, Value>, field: &str, path: &str) -> Result<usize> {
        let v = self.int(obj, field, path)?;
        usize::try_from(v).map_err(|_| self.err(path, "expected a non-negative integer"))
    }

    fn array<'v>(&self, obj: &'v Map<String, Value>, field: &str, path: &str) -> Result<&'v Vec<Value>> {
        match obj.get(field) {
            Some(Value::Array(a)) => Ok(a),
            Some(_) => Err(self.err(path, "expected an array")),
            None => Err(self.err(path, "missing")),
        }
    }
}

/// Parses one corpus line. `domain` fills in a missing `domain` field and
/// must agree with a present one.
pub fn parse_document_line(text: &str, file: &str, line: usize, domain: &str) -> Result<ParsedDocument> {
    let ctx = Ctx { file, line };
    let value: Value = serde_json::from_str(text).map_err(|e| ctx.err("<record>", format!("invalid JSON: {e}")))?;
    let obj = ctx.object(&value, "<record>")?;
    let doc_id = ctx.string(obj, "doc_id", "doc_id")?;
    let doc_domain = match obj.get("domain") {
        None | Some(Value::Null) => domain.to_string(),
        Some(Value::String(d)) => {
            if !domain.is_empty() && d != domain {
                return Err(ctx.err("domain", format!("record domain `{d}` != expected `{domain}`")));
            }
            d.clone()
        }
        Some(_) => return Err(ctx.err("domain", "expected a string")),
    };
    let raw_sentences = ctx.array(obj, "sentences", "sentences")?;
    if raw_sentences.is_empty() {
        return Err(ctx.err("sentences", "document has no sentences"));
    }
    let mut sentences = Vec::with_capacity(raw_sentences.len());
    for (si, raw) in raw_sentences.iter().enumerate() {
        let toks = raw
            .as_array()
            .ok_or_else(|| ctx.err(&format!("sentences[{si}]"), "expected an array"))?;
        if toks.is_empty() {
            return Err(ctx.err(&format!("sentences[{si}]"), "empty sentence"));
        }
        let mut sentence = Vec::with_capacity(toks.len());
        for (ti, raw_tok) in toks.iter().enumerate() {
            let path = format!("sentences[{si}][{ti}]");
            let t = ctx.object(raw_tok, &path)?;
            let pos_path = format!("{path}.pos");
            let pos = ctx
                .string(t, "pos", &pos_path)?
                .parse()
                .map_err(|m: String| ctx.err(&pos_path, m))?;
            let ner_path = format!("{path}.ner");
            let ner = match t.get("ner") {
                None | Some(Value::Null) => super::NerTag::NONE,
                Some(Value::String(s)) => s.parse().map_err(|m: String| ctx.err(&ner_path, m))?,
                Some(_) => return Err(ctx.err(&ner_path, "expected a string")),
            };
            let head_path = format!("{path}.dep_head");
            let head = ctx.int(t, "dep_head", &head_path)?;
            let dep_head = match head {
                -1 => None,
                h if h >= 0 && (h as usize) < toks.len() && h as usize != ti => Some(h as usize),
                h => {
                    return Err(Error::Structure {
                        doc_id: doc_id.clone(),
                        message: format!(
                            "line {line}: {head_path} = {h} is outside sentence {si} (len {})",
                            toks.len()
                        ),
                    })
                }
            };
            let surface = ctx.string(t, "surface", &format!("{path}.surface"))?;
            let lemma = match t.get("lemma") {
                None | Some(Value::Null) => surface.clone(),
                Some(Value::String(s)) => s.clone(),
                Some(_) => return Err(ctx.err(&format!("{path}.lemma"), "expected a string")),
            };
            let dep_label = match t.get("dep_label") {
                None | Some(Value::Null) => String::new(),
                Some(Value::String(s)) => s.clone(),
                Some(_) => return Err(ctx.err(&format!("{path}.dep_label"), "expected a string")),
            };
            sentence.push(Token {
                surface,
                lemma,
                pos,
                ner,
                dep_head,
                dep_label,
            });
        }
        sentences.push(sentence);
    }
    ParsedDocument::from_sentences(doc_id, doc_domain, sentences)
}

/// Reads and validates a parsed corpus. An empty `domain` accepts whatever
/// domain each record declares.
pub fn ingest_parsed_corpus(path: &Path, domain: &str) -> Result<Vec<ParsedDocument>> {
    let name = path.display().to_string();
    let mut docs = Vec::new();
    for (line, text) in lines(path)? {
        docs.push(parse_document_line(&text?, &name, line, domain)?);
    }
    Ok(docs)
}

pub fn document_to_json(doc: &ParsedDocument) -> Value {
    let sentences: Vec<Value> = doc
        .sentences
        .iter()
        .map(|&(s, e)| {
            let toks: Vec<Value> = doc.tokens[s..e]
                .iter()
                .map(|t| {
                    json!({
                        "surface": t.surface,
                        "lemma": t.lemma,
                        "pos": t.pos.as_str(),
                        "ner": t.ner.as_str(),
                        "dep_head": t.dep_head.map(|h| (h - s) as i64).unwrap_or(-1),
                        "dep_label": t.dep_label,
                    })
                })
                .collect();
            Value::Array(toks)
        })
        .collect();
    json!({ "doc_id": doc.doc_id, "domain": doc.domain, "sentences": sentences })
}

pub fn write_documents(path: &Path, docs: &[ParsedDocument]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        serde_json::to_writer(&mut w, &document_to_json(doc))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_kind(ctx: &Ctx<'_>, obj: &Map<String, Value>, path: &str) -> Result<Option<SpanKind>> {
    match obj.get("kind") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value::<SpanKind>(v.clone())
            .map(Some)
            .map_err(|e| ctx.err(path, e.to_string())),
    }
}

/// Reads coreference clusters. Every span is resolved against its document.
pub fn load_annotations(path: &Path, corpus: &Corpus) -> Result<Vec<CorefAnnotation>> {
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (line, text) in lines(path)? {
        let text = text?;
        let ctx = Ctx { file: &name, line };
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ctx.err("<record>", format!("invalid JSON: {e}")))?;
        let obj = ctx.object(&value, "<record>")?;
        let doc_id = ctx.string(obj, "doc_id", "doc_id")?;
        let doc = corpus.require(&doc_id)?;
        let mut clusters = Vec::new();
        for (ci, raw_cluster) in ctx.array(obj, "clusters", "clusters")?.iter().enumerate() {
            let raw_cluster = raw_cluster
                .as_array()
                .ok_or_else(|| ctx.err(&format!("clusters[{ci}]"), "expected an array"))?;
            let mut cluster = Vec::with_capacity(raw_cluster.len());
            for (si, raw_span) in raw_cluster.iter().enumerate() {
                let path = format!("clusters[{ci}][{si}]");
                let s = ctx.object(raw_span, &path)?;
                let start = ctx.index(s, "start", &format!("{path}.start"))?;
                let end = ctx.index(s, "end", &format!("{path}.end"))?;
                let head = match s.get("head") {
                    None | Some(Value::Null) => None,
                    Some(_) => Some(ctx.index(s, "head", &format!("{path}.head"))?),
                };
                let kind = parse_kind(&ctx, s, &format!("{path}.kind"))?;
                let span = Span::resolve(doc, start, end, head, kind.unwrap_or(SpanKind::Mention))
                    .map_err(|e| ctx.err(&path, e.to_string()))?;
                cluster.push(span);
            }
            clusters.push(cluster);
        }
        let ann = CorefAnnotation { doc_id, clusters };
        ann.validate()?;
        out.push(ann);
    }
    Ok(out)
}

pub fn read_triples(path: &Path, corpus: &Corpus) -> Result<Vec<LabeledTriple>> {
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (line, text) in lines(path)? {
        let text = text?;
        let ctx = Ctx { file: &name, line };
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ctx.err("<record>", format!("invalid JSON: {e}")))?;
        let obj = ctx.object(&value, "<record>")?;
        let doc_id = ctx.string(obj, "doc_id", "doc_id")?;
        let doc = corpus.require(&doc_id)?;
        let mut spans = Vec::with_capacity(2);
        for (field, kind) in [("mention", SpanKind::Mention), ("anaphor", SpanKind::Anaphor)] {
            let s = ctx.object(obj.get(field).ok_or_else(|| ctx.err(field, "missing"))?, field)?;
            let start = ctx.index(s, "start", &format!("{field}.start"))?;
            let end = ctx.index(s, "end", &format!("{field}.end"))?;
            let head = match s.get("head") {
                None | Some(Value::Null) => None,
                Some(_) => Some(ctx.index(s, "head", &format!("{field}.head"))?),
            };
            spans.push(Span::resolve(doc, start, end, head, kind).map_err(|e| ctx.err(field, e.to_string()))?);
        }
        let label = ctx.int(obj, "label", "label")?;
        if label != 0 && label != 1 {
            return Err(ctx.err("label", format!("expected 0 or 1, got {label}")));
        }
        let anaphor = spans.pop().unwrap();
        let mention = spans.pop().unwrap();
        out.push(LabeledTriple::new(mention, anaphor, label as u8).map_err(|e| ctx.err("mention", e.to_string()))?);
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[LabeledTriple]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in triples {
        let v = json!({
            "doc_id": t.doc_id,
            "mention": {"start": t.mention.start, "end": t.mention.end},
            "anaphor": {"start": t.anaphor.start, "end": t.anaphor.end},
            "label": t.label,
        });
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_annotations(path: &Path, annotations: &[CorefAnnotation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for a in annotations {
        let clusters: Vec<Value> = a
            .clusters
            .iter()
            .map(|c| {
                c.iter()
                    .map(|s| json!({"start": s.start, "end": s.end, "head": s.head, "kind": s.kind}))
                    .collect()
            })
            .collect();
        serde_json::to_writer(&mut w, &json!({"doc_id": a.doc_id, "clusters": clusters}))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `{"doc_id": "train" | "dev" | "test", ...}`.
pub fn load_split_assignment(path: &Path) -> Result<HashMap<String, SplitName>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
