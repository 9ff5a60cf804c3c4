//! Positive/negative triple construction from clusters and review-level
//! train/dev/test splitting.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorefAnnotation, Corpus, LabeledTriple, Span, SpanKind};
use crate::error::{Error, Result};

/// Realized negative:positive ratio of the annotated review data.
pub const DEFAULT_NEGATIVE_RATIO: f64 = 2.4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "ratio")]
pub enum NegativeSampling {
    /// Keep every cross-cluster pair.
    All,
    /// Per review, keep at most `round(ratio * positives)` negatives.
    Ratio(f64),
}

impl Default for NegativeSampling {
    fn default() -> Self {
        NegativeSampling::Ratio(DEFAULT_NEGATIVE_RATIO)
    }
}

/// Orders a pair as (mention, anaphor). An explicit ANAPHOR kind on exactly
/// one side decides; otherwise the later span is the anaphor.
fn orient<'a>(a: &'a Span, b: &'a Span) -> (&'a Span, &'a Span) {
    let a_ana = a.kind == SpanKind::Anaphor;
    let b_ana = b.kind == SpanKind::Anaphor;
    match (a_ana, b_ana) {
        (true, false) => (b, a),
        (false, true) => (a, b),
        _ => {
            if (a.start, a.end) <= (b.start, b.end) {
                (a, b)
            } else {
                (b, a)
            }
        }
    }
}

/// Derives a per-document RNG so documents can be processed independently.
pub(crate) fn doc_rng(seed: u64, doc_id: &str) -> ChaCha8Rng {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(doc_id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(bytes))
}

fn sort_key(t: &LabeledTriple) -> (usize, usize, usize, usize) {
    (t.anaphor.start, t.anaphor.end, t.mention.start, t.mention.end)
}

/// Builds labeled triples: every within-cluster pair is positive, every
/// cross-cluster pair is a negative candidate. Singleton clusters produce
/// no positives.
pub fn build_triples(
    annotations: &[CorefAnnotation],
    corpus: &Corpus,
    sampling: NegativeSampling,
    seed: u64,
) -> Result<Vec<LabeledTriple>> {
    let mut out = Vec::new();
    for ann in annotations {
        corpus.require(&ann.doc_id)?;
        ann.validate()?;
        let mut positives = Vec::new();
        for cluster in &ann.clusters {
            for i in 0..cluster.len() {
                for j in i + 1..cluster.len() {
                    let (m, p) = orient(&cluster[i], &cluster[j]);
                    positives.push(LabeledTriple::new(m.clone(), p.clone(), 1)?);
                }
            }
        }
        let mut negatives = Vec::new();
        for ci in 0..ann.clusters.len() {
            for cj in ci + 1..ann.clusters.len() {
                for a in &ann.clusters[ci] {
                    for b in &ann.clusters[cj] {
                        let (m, p) = orient(a, b);
                        negatives.push(LabeledTriple::new(m.clone(), p.clone(), 0)?);
                    }
                }
            }
        }
        positives.sort_by_key(sort_key);
        negatives.sort_by_key(sort_key);
        if let NegativeSampling::Ratio(ratio) = sampling {
            let keep = ((ratio * positives.len() as f64).round() as usize).min(negatives.len());
            if keep < negatives.len() {
                let mut rng = doc_rng(seed, &ann.doc_id);
                let mut chosen = rand::seq::index::sample(&mut rng, negatives.len(), keep).into_vec();
                chosen.sort_unstable();
                negatives = chosen.into_iter().map(|i| negatives[i].clone()).collect();
            }
        }
        let mut doc_triples = positives;
        doc_triples.extend(negatives);
        doc_triples.sort_by_key(sort_key);
        out.extend(doc_triples);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledTriple>,
    pub dev: Vec<LabeledTriple>,
    pub test: Vec<LabeledTriple>,
}

impl DatasetSplit {
    pub fn doc_ids(triples: &[LabeledTriple]) -> BTreeSet<String> {
        triples.iter().map(|t| t.doc_id.clone()).collect()
    }

    pub fn assignment(&self) -> HashMap<String, SplitName> {
        let mut out = HashMap::new();
        for (name, part) in [
            (SplitName::Train, &self.train),
            (SplitName::Dev, &self.dev),
            (SplitName::Test, &self.test),
        ] {
            for t in part {
                out.insert(t.doc_id.clone(), name);
            }
        }
        out
    }
}

/// Splits at the review level: every triple of a review lands in the same
/// part. Each part with a positive ratio receives at least one review.
pub fn split_dataset(triples: &[LabeledTriple], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    let parts = [ratios.train, ratios.dev, ratios.test];
    if parts.iter().any(|r| *r < 0.0 || !r.is_finite()) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {parts:?}"
        )));
    }
    let mut docs: Vec<String> = DatasetSplit::doc_ids(triples).into_iter().collect();
    let n = docs.len();
    let needed = parts.iter().filter(|r| **r > 0.0).count();
    if n < needed {
        return Err(Error::Empty(format!(
            "{n} reviews cannot fill {needed} non-empty splits"
        )));
    }
    let at_least = |r: f64| {
        if r > 0.0 {
            ((r * n as f64).round() as usize).max(1)
        } else {
            0
        }
    };
    let n_dev = at_least(ratios.dev);
    let n_test = at_least(ratios.test);
    let n_train = n.saturating_sub(n_dev + n_test);
    if ratios.train > 0.0 && n_train == 0 {
        return Err(Error::Empty(format!("{n} reviews leave no training review")));
    }
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = HashMap::with_capacity(n);
    for (i, d) in docs.into_iter().enumerate() {
        let name = if i < n_train {
            SplitName::Train
        } else if i < n_train + n_dev {
            SplitName::Dev
        } else {
            SplitName::Test
        };
        assignment.insert(d, name);
    }
    split_by_assignment(triples, &assignment)
}

/// Splits by an explicit review → part map.
pub fn split_by_assignment(triples: &[LabeledTriple], assignment: &HashMap<String, SplitName>) -> Result<DatasetSplit> {
    let mut split = DatasetSplit::default();
    let mut missing = HashSet::new();
    for t in triples {
        match assignment.get(&t.doc_id) {
            Some(SplitName::Train) => split.train.push(t.clone()),
            Some(SplitName::Dev) => split.dev.push(t.clone()),
            Some(SplitName::Test) => split.test.push(t.clone()),
            None => {
                missing.insert(t.doc_id.clone());
            }
        }
    }
    if let Some(d) = missing.into_iter().min() {
        return Err(Error::UnknownDocument(format!("{d} (no split assignment)")));
    }
    Ok(split)
}
