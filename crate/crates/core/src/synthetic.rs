//! Synthetic reviews whose labels can only be decided through the domain
//! knowledge base.
//!
//! Every labeled review introduces a product by an invented brand alias
//! ("I bought a Zorbex .") and then mentions two product categories ("The
//! clock is loud but the lamp is dim ."). The anaphor corefers with the
//! alias exactly when its category is the alias's category. That fact is
//! written nowhere in the labeled data: it is planted in the unlabeled
//! corpus ("The Zorbex is a clock ."), where tf-idf mining picks it up.
//! Aliases are unique per review, so a model without the mined knowledge
//! has nothing to go on for held-out reviews.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EncoderConfig, ModelConfig, OptimizerConfig, RunConfig, RunPaths, TrainConfig};
use crate::corpus::{
    write_annotations, write_documents, write_triples, CorefAnnotation, LabeledTriple, ParsedDocument, Span, SpanKind,
    Token,
};
use crate::error::{Error, Result};
use crate::general_kb::Triple;

pub const CATEGORIES: [&str; 10] = [
    "clock", "lamp", "radio", "speaker", "kettle", "blender", "camera", "router", "heater", "fan",
];
const ADJECTIVES: [&str; 8] = ["loud", "quiet", "bright", "dim", "small", "heavy", "cheap", "sturdy"];
const FILLER_NOUNS: [&str; 10] = [
    "price", "battery", "box", "button", "screen", "cable", "manual", "color", "size", "sound",
];
const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["x", "n", "r", "l", "m", "k"];

pub const SHOWCASE_ALIAS: &str = "Moonbeam";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Labeled reviews; each yields two triples.
    pub reviews: usize,
    /// Unlabeled reviews, planting sentences included.
    pub unlabeled: usize,
    pub categories: usize,
    pub domain: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            reviews: 100,
            unlabeled: 2000,
            categories: CATEGORIES.len(),
            domain: "synthetic".into(),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub labeled: Vec<ParsedDocument>,
    pub unlabeled: Vec<ParsedDocument>,
    pub triples: Vec<LabeledTriple>,
    pub annotations: Vec<CorefAnnotation>,
    pub alias_category: BTreeMap<String, String>,
    /// A held-out review about the alias `Moonbeam` (a clock), with its two
    /// triples: "The clock" (label 1) and "the lamp" (label 0).
    pub showcase: (ParsedDocument, Vec<LabeledTriple>),
    pub general_triples: Vec<Triple>,
    /// Header and rows of a small affect lexicon.
    pub affect_rows: Vec<(String, Vec<f64>)>,
}

type Row<'a> = (&'a str, &'a str, &'a str, &'a str, i64, &'a str);

fn sentence(rows: &[Row<'_>]) -> Vec<Token> {
    rows.iter()
        .map(|&(surface, lemma, pos, ner, head, label)| Token {
            surface: surface.into(),
            lemma: lemma.into(),
            pos: pos.parse().expect("fixed tag"),
            ner: ner.parse().expect("fixed tag"),
            dep_head: (head >= 0).then_some(head as usize),
            dep_label: label.into(),
        })
        .collect()
}

fn alias(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    for _ in 0..2 {
        s.push_str(ONSETS.choose(rng).unwrap());
        s.push_str(VOWELS.choose(rng).unwrap());
    }
    s.push_str(CODAS.choose(rng).unwrap());
    let mut c = s.chars();
    let first = c.next().unwrap().to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

/// Mention sentence; returns tokens and the mention's (start, end, head).
fn mention_sentence(rng: &mut ChaCha8Rng, name: &str, adj: Option<&str>) -> (Vec<Token>, (usize, usize, usize)) {
    let template = if adj.is_some() { 1 } else { rng.gen_range(0..3) };
    match template {
        0 => (
            sentence(&[
                ("I", "I", "PRON", "O", 1, "nsubj"),
                ("bought", "buy", "VERB", "O", -1, "ROOT"),
                ("a", "a", "DET", "O", 3, "det"),
                (name, name, "PROPN", "PRODUCT", 1, "dobj"),
                (".", ".", "PUNCT", "O", 1, "punct"),
            ]),
            (2, 4, 3),
        ),
        1 => {
            let a = adj.unwrap_or_else(|| ADJECTIVES.choose(rng).unwrap());
            (
                sentence(&[
                    ("I", "I", "PRON", "O", 1, "nsubj"),
                    ("bought", "buy", "VERB", "O", -1, "ROOT"),
                    ("a", "a", "DET", "O", 4, "det"),
                    (a, a, "ADJ", "O", 4, "amod"),
                    (name, name, "PROPN", "PRODUCT", 1, "dobj"),
                    (".", ".", "PUNCT", "O", 1, "punct"),
                ]),
                (2, 5, 4),
            )
        }
        _ => (
            sentence(&[
                ("My", "my", "PRON", "O", 1, "poss"),
                (name, name, "PROPN", "PRODUCT", 2, "nsubj"),
                ("arrived", "arrive", "VERB", "O", -1, "ROOT"),
                ("today", "today", "NOUN", "O", 2, "npadvmod"),
                (".", ".", "PUNCT", "O", 2, "punct"),
            ]),
            (0, 2, 1),
        ),
    }
}

/// "The c1 is a1 but the c2 is a2 ." with anaphors at (0,2) and (5,7).
fn anaphor_sentence(c1: &str, a1: &str, c2: &str, a2: &str) -> Vec<Token> {
    sentence(&[
        ("The", "the", "DET", "O", 1, "det"),
        (c1, c1, "NOUN", "O", 3, "nsubj"),
        ("is", "be", "AUX", "O", 3, "cop"),
        (a1, a1, "ADJ", "O", -1, "ROOT"),
        ("but", "but", "CCONJ", "O", 8, "cc"),
        ("the", "the", "DET", "O", 6, "det"),
        (c2, c2, "NOUN", "O", 8, "nsubj"),
        ("is", "be", "AUX", "O", 8, "cop"),
        (a2, a2, "ADJ", "O", 3, "conj"),
        (".", ".", "PUNCT", "O", 3, "punct"),
    ])
}

fn planting_sentence(name: &str, category: &str) -> Vec<Token> {
    sentence(&[
        ("The", "the", "DET", "O", 1, "det"),
        (name, name, "PROPN", "PRODUCT", 4, "nsubj"),
        ("is", "be", "AUX", "O", 4, "cop"),
        ("a", "a", "DET", "O", 4, "det"),
        (category, category, "NOUN", "O", -1, "ROOT"),
        (".", ".", "PUNCT", "O", 4, "punct"),
    ])
}

fn filler_review(rng: &mut ChaCha8Rng, id: String, domain: &str) -> Result<ParsedDocument> {
    let n1 = *FILLER_NOUNS.choose(rng).unwrap();
    let a = *ADJECTIVES.choose(rng).unwrap();
    let mut sents = vec![sentence(&[
        ("The", "the", "DET", "O", 1, "det"),
        (n1, n1, "NOUN", "O", 3, "nsubj"),
        ("is", "be", "AUX", "O", 3, "cop"),
        (a, a, "ADJ", "O", -1, "ROOT"),
        (".", ".", "PUNCT", "O", 3, "punct"),
    ])];
    if rng.gen_bool(0.5) {
        let n2 = *FILLER_NOUNS.choose(rng).unwrap();
        sents.push(sentence(&[
            ("I", "I", "PRON", "O", 1, "nsubj"),
            ("like", "like", "VERB", "O", -1, "ROOT"),
            ("the", "the", "DET", "O", 3, "det"),
            (n2, n2, "NOUN", "O", 1, "dobj"),
            (".", ".", "PUNCT", "O", 1, "punct"),
        ]));
    }
    ParsedDocument::from_sentences(id, domain, sents)
}

/// Builds the labeled review around `name`; `pair` gives the two anaphor
/// categories in order. Returns the document and its two triples.
fn labeled_review(
    rng: &mut ChaCha8Rng,
    id: &str,
    domain: &str,
    name: &str,
    category: &str,
    pair: (&str, &str),
    adj: Option<&str>,
) -> Result<(ParsedDocument, Vec<LabeledTriple>, CorefAnnotation)> {
    let (s1, (ms, me, mh)) = mention_sentence(rng, name, adj);
    let off = s1.len();
    let a1 = *ADJECTIVES.choose(rng).unwrap();
    let a2 = *ADJECTIVES.choose(rng).unwrap();
    let s2 = anaphor_sentence(pair.0, a1, pair.1, a2);
    let doc = ParsedDocument::from_sentences(id, domain, vec![s1, s2])?;
    let mention = Span::resolve(&doc, ms, me, Some(mh), SpanKind::Mention)?;
    let first = Span::resolve(&doc, off, off + 2, Some(off + 1), SpanKind::Anaphor)?;
    let second = Span::resolve(&doc, off + 5, off + 7, Some(off + 6), SpanKind::Anaphor)?;
    let mut triples = Vec::with_capacity(2);
    let mut clusters = vec![vec![mention.clone()]];
    for (span, cat) in [(first, pair.0), (second, pair.1)] {
        let label = u8::from(cat == category);
        triples.push(LabeledTriple::new(mention.clone(), span.clone(), label)?);
        if label == 1 {
            clusters[0].push(span);
        } else {
            clusters.push(vec![span]);
        }
    }
    let ann = CorefAnnotation {
        doc_id: id.to_string(),
        clusters,
    };
    Ok((doc, triples, ann))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.categories < 3 || cfg.categories > CATEGORIES.len() {
        return Err(Error::Config(format!(
            "categories must be in 3..={}, got {}",
            CATEGORIES.len(),
            cfg.categories
        )));
    }
    if cfg.reviews == 0 || cfg.unlabeled < cfg.reviews + 1 {
        return Err(Error::Config(
            "need at least one labeled review and more unlabeled reviews than labeled ones".into(),
        ));
    }
    let cats = &CATEGORIES[..cfg.categories];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut used: HashSet<String> = cats.iter().map(|c| c.to_string()).collect();
    used.insert(SHOWCASE_ALIAS.to_lowercase());
    let mut aliases = Vec::with_capacity(cfg.reviews);
    while aliases.len() < cfg.reviews {
        let a = alias(&mut rng);
        if used.insert(a.to_lowercase()) {
            aliases.push(a);
        }
    }

    let mut labeled = Vec::with_capacity(cfg.reviews);
    let mut triples = Vec::with_capacity(2 * cfg.reviews);
    let mut annotations = Vec::with_capacity(cfg.reviews);
    let mut alias_category = BTreeMap::new();
    for (i, name) in aliases.iter().enumerate() {
        let category = cats[i % cats.len()];
        alias_category.insert(name.clone(), category.to_string());
        let others: Vec<&str> = cats.iter().copied().filter(|c| *c != category).collect();
        // one review in three mentions two unrelated categories
        let pair = if i % 3 == 0 {
            let mut two = others.choose_multiple(&mut rng, 2).copied();
            (two.next().unwrap(), two.next().unwrap())
        } else {
            let other = *others.choose(&mut rng).unwrap();
            if rng.gen_bool(0.5) {
                (category, other)
            } else {
                (other, category)
            }
        };
        let id = format!("syn-r{i:03}");
        let (doc, ts, ann) = labeled_review(&mut rng, &id, &cfg.domain, name, category, pair, None)?;
        labeled.push(doc);
        triples.extend(ts);
        annotations.push(ann);
    }

    let (show_doc, show_triples, _) = labeled_review(
        &mut rng,
        "syn-moonbeam",
        &cfg.domain,
        SHOWCASE_ALIAS,
        "clock",
        ("clock", "lamp"),
        Some("green"),
    )?;

    let mut unlabeled = Vec::with_capacity(cfg.unlabeled);
    let mut planted: Vec<(String, String)> = alias_category.iter().map(|(a, c)| (a.clone(), c.clone())).collect();
    planted.push((SHOWCASE_ALIAS.to_string(), "clock".to_string()));
    for (k, (a, c)) in planted.iter().enumerate() {
        unlabeled.push(ParsedDocument::from_sentences(
            format!("syn-u{k:04}"),
            cfg.domain.clone(),
            vec![planting_sentence(a, c)],
        )?);
    }
    for k in planted.len()..cfg.unlabeled {
        unlabeled.push(filler_review(&mut rng, format!("syn-u{k:04}"), &cfg.domain)?);
    }
    unlabeled.shuffle(&mut rng);

    let general_triples = [
        ("clock", "UsedFor", "keeping time"),
        ("lamp", "UsedFor", "reading"),
        ("radio", "UsedFor", "listening to music"),
        ("kettle", "UsedFor", "boiling water"),
        ("camera", "UsedFor", "taking pictures"),
        ("heater", "UsedFor", "warming a room"),
    ]
    .iter()
    .map(|&(e1, r, e2)| Triple {
        e1: e1.into(),
        relation: r.into(),
        e2: e2.into(),
    })
    .collect();
    let affect_rows = ADJECTIVES
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let x = i as f64 / ADJECTIVES.len() as f64;
            (a.to_string(), vec![x - 0.5, 0.5 - (x - 0.5).abs()])
        })
        .collect();

    Ok(SynthData {
        labeled,
        unlabeled,
        triples,
        annotations,
        alias_category,
        showcase: (show_doc, show_triples),
        general_triples,
        affect_rows,
    })
}

/// Settings that learn the synthetic task in TOY mode within a few epochs.
/// The default learning rate is tuned for a pretrained encoder and is far
/// too small for embeddings trained from scratch.
pub fn reference_config(domain: &str, seed: u64) -> RunConfig {
    let encoder = EncoderConfig {
        embed_dim: 64,
        token_dim: 64,
        ..EncoderConfig::default()
    };
    let model = ModelConfig {
        ffn_hidden: 64,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        learning_rate: 5e-3,
        seed,
        optimizer: OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        ..TrainConfig::default()
    };
    RunConfig {
        domain: domain.to_string(),
        paths: RunPaths::default(),
        model,
        encoder,
        train,
        seed,
    }
}

impl SynthData {
    /// All reviews, labeled first.
    pub fn all_documents(&self) -> Vec<ParsedDocument> {
        self.labeled.iter().chain(&self.unlabeled).cloned().collect()
    }

    /// Writes `corpus.jsonl`, `annotations.jsonl`, `triples.jsonl`,
    /// `showcase.jsonl`, `showcase_triples.jsonl`, `omcs.tsv`, `affect.csv`
    /// and a `config.json` wired to them.
    pub fn write(&self, dir: &Path, domain: &str, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_documents(&dir.join("corpus.jsonl"), &self.all_documents())?;
        write_annotations(&dir.join("annotations.jsonl"), &self.annotations)?;
        write_triples(&dir.join("triples.jsonl"), &self.triples)?;
        write_documents(&dir.join("showcase.jsonl"), std::slice::from_ref(&self.showcase.0))?;
        write_triples(&dir.join("showcase_triples.jsonl"), &self.showcase.1)?;
        let tsv: String = self
            .general_triples
            .iter()
            .map(|t| format!("{}\t{}\t{}\n", t.e1, t.relation, t.e2))
            .collect();
        let path = dir.join("omcs.tsv");
        std::fs::write(&path, tsv).map_err(|e| Error::io(&path, e))?;
        let mut csv = String::from("lemma,valence,arousal\n");
        for (w, v) in &self.affect_rows {
            csv.push_str(&format!("{w},{},{}\n", v[0], v[1]));
        }
        let path = dir.join("affect.csv");
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        let mut config = reference_config(domain, seed);
        config.model.affect_width = 2;
        config.paths = RunPaths {
            corpus: Some("corpus.jsonl".into()),
            annotations: Some("annotations.jsonl".into()),
            triple_store: Some("omcs.tsv".into()),
            affect_lexicon: Some("affect.csv".into()),
            output_dir: Some("run".into()),
            ..RunPaths::default()
        };
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(&config)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
