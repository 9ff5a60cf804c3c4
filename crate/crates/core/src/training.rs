//! Training with best-dev selection, positive-class evaluation and the
//! ablation grid.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{fingerprint, AttentionVariant, EncoderConfig, ModelConfig, OptimizerConfig, TrainConfig};
use crate::corpus::{Corpus, LabeledTriple};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::nn::Dropout;
use crate::scoring::{Model, Prepared, Resources, THRESHOLD};
use crate::tape::{Gradients, Tensor};

pub const REPORT_SCHEMA: u32 = 1;

/// Learning rate at `step` of `total`: a straight line from `lr` at step 0
/// to `lr * floor_factor` at step `total`.
pub fn lr_at(lr: f64, floor_factor: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    let frac = (step.min(total) as f64) / total as f64;
    lr * (1.0 - (1.0 - floor_factor) * frac)
}

/// Vocabulary for TOY mode: bundled pieces, corpus words, and the words of
/// every knowledge phrase the model could retrieve. Sources the config
/// disables contribute nothing, so their files cannot influence the model.
pub fn build_vocab(corpus: &Corpus, resources: &Resources, config: &ModelConfig, min_count: usize) -> Vocab {
    let mut words: Vec<String> = corpus
        .docs()
        .iter()
        .flat_map(|d| d.tokens.iter().map(|t| t.surface.clone()))
        .collect();
    if let Some(kb) = resources.domain_kb.as_ref().filter(|_| config.use_domain_kb) {
        for entries in kb.entries.values() {
            for e in entries {
                words.extend(std::iter::repeat_n(e.phrase.clone(), min_count.max(1)));
            }
        }
    }
    if let Some(store) = resources.triple_store.as_ref().filter(|_| config.use_general_kb) {
        for t in store.triples() {
            for w in t.e1.split_whitespace().chain(t.e2.split_whitespace()) {
                words.extend(std::iter::repeat_n(w.to_string(), min_count.max(1)));
            }
        }
    }
    Vocab::build(words.iter().map(String::as_str), min_count)
}

pub fn prepare_all(
    model: &Model,
    triples: &[LabeledTriple],
    corpus: &Corpus,
    resources: &Resources,
) -> Result<Vec<Prepared>> {
    triples
        .par_iter()
        .map(|t| model.prepare(t, corpus.require(&t.doc_id)?, resources))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[u8], gold: &[u8]) -> Confusion {
        let mut c = Confusion::default();
        for (&p, &g) in predicted.iter().zip(gold) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `[[tn, fp], [fn, tp]]`, rows gold, columns predicted.
    pub fn matrix(&self) -> [[usize; 2]; 2] {
        [[self.tn, self.fp], [self.fn_, self.tp]]
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub domain: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub n_examples: usize,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f1_pos: f64,
    pub confusion: Confusion,
}

pub fn predict_all(model: &Model, examples: &[Prepared]) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|ex| model.predict(ex).map(|s| s.f_hat))
        .collect()
}

pub fn confusion_of(model: &Model, examples: &[Prepared]) -> Result<Confusion> {
    let probs = predict_all(model, examples)?;
    let predicted: Vec<u8> = probs.iter().map(|&p| u8::from(p >= THRESHOLD)).collect();
    let gold: Vec<u8> = examples.iter().map(|e| e.label).collect();
    Ok(Confusion::from_predictions(&predicted, &gold))
}

pub fn evaluate(model: &Model, examples: &[Prepared], domain: &str, seed: u64) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set has no triples".into()));
    }
    let c = confusion_of(model, examples)?;
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA,
        domain: domain.to_string(),
        seed,
        config_fingerprint: fingerprint(&(&model.config, &model.encoder)),
        n_examples: examples.len(),
        precision_pos: c.precision(),
        recall_pos: c.recall(),
        f1_pos: c.f1(),
        confusion: c,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub history: Vec<EpochRecord>,
}

enum OptState {
    Sgd {
        momentum: f64,
        velocity: Vec<Tensor>,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        t: i32,
    },
}

impl OptState {
    fn new(cfg: OptimizerConfig, model: &Model) -> OptState {
        let zeros = || {
            model
                .params
                .ids()
                .map(|id| {
                    let t = model.params.get(id);
                    Tensor::zeros(t.rows, t.cols)
                })
                .collect::<Vec<_>>()
        };
        match cfg {
            OptimizerConfig::Sgd { momentum } => OptState::Sgd {
                momentum,
                velocity: zeros(),
            },
            OptimizerConfig::Adam { beta1, beta2, eps } => OptState::Adam {
                beta1,
                beta2,
                eps,
                m: zeros(),
                v: zeros(),
                t: 0,
            },
        }
    }

    fn step(&mut self, model: &mut Model, grads: &Gradients, lr: f64) {
        let ids: Vec<_> = model.params.ids().collect();
        match self {
            OptState::Sgd { momentum, velocity } => {
                for (k, id) in ids.into_iter().enumerate() {
                    let g = grads.get(id);
                    let vel = &mut velocity[k];
                    let p = model.params.get_mut(id);
                    for ((pv, vv), gv) in p.data.iter_mut().zip(vel.data.iter_mut()).zip(&g.data) {
                        *vv = *momentum * *vv + gv;
                        *pv -= lr * *vv;
                    }
                }
            }
            OptState::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (k, id) in ids.into_iter().enumerate() {
                    let g = grads.get(id);
                    let p = model.params.get_mut(id);
                    for (((pv, mv), vv), gv) in p
                        .data
                        .iter_mut()
                        .zip(m[k].data.iter_mut())
                        .zip(v[k].data.iter_mut())
                        .zip(&g.data)
                    {
                        *mv = *beta1 * *mv + (1.0 - *beta1) * gv;
                        *vv = *beta2 * *vv + (1.0 - *beta2) * gv * gv;
                        *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + *eps);
                    }
                }
            }
        }
    }
}

/// Labeled data and resources for one domain.
pub struct TrainData<'a> {
    pub domain: &'a str,
    pub corpus: &'a Corpus,
    pub train: &'a [LabeledTriple],
    pub dev: &'a [LabeledTriple],
    pub resources: &'a Resources,
}

/// Trains a fresh model and returns the epoch-end parameters with the best
/// dev positive-F1 (earliest on ties). Without a dev set the training
/// triples are used for selection.
pub fn train(
    data: &TrainData<'_>,
    model_config: &ModelConfig,
    encoder_config: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training set has no triples".into()));
    }
    let vocab = build_vocab(
        data.corpus,
        data.resources,
        model_config,
        encoder_config.vocab_min_count,
    );
    let mut model = Model::new(model_config.clone(), encoder_config.clone(), vocab, cfg.seed)?;
    let train_ex = prepare_all(&model, data.train, data.corpus, data.resources)?;
    let dev_ex = if data.dev.is_empty() {
        log::warn!("no dev triples; selecting on training F1");
        train_ex.clone()
    } else {
        prepare_all(&model, data.dev, data.corpus, data.resources)?
    };

    let batches_per_epoch = train_ex.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut opt = OptState::new(cfg.optimizer, &model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut step = 0usize;
    let mut seen = 0u64;
    let mut best: Option<(usize, f64, crate::tape::Params)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let rate = model.config.dropout;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = cfg.learning_rate;
        for batch in order.chunks(cfg.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let base = seen;
            let frozen_model = &model;
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(2 + base + k as u64);
                    let mut dropout = Dropout::training(rate, &mut rng);
                    frozen_model.loss_and_grad(&train_ex[i], weight, &mut dropout)
                })
                .collect::<Result<_>>()?;
            seen += batch.len() as u64;
            let mut grads = model.params.zero_grads();
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                grads.accumulate(g);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch_loss * weight,
                });
            }
            loss_sum += batch_loss;
            lr = lr_at(cfg.learning_rate, cfg.lr_floor_factor, step, total_steps);
            opt.step(&mut model, &grads, lr);
            step += 1;
        }
        if !model.params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step,
                loss: f64::NAN,
            });
        }
        let dev_f1 = confusion_of(&model, &dev_ex)?.f1();
        let mean_loss = loss_sum / train_ex.len() as f64;
        log::info!("epoch {epoch}: loss {mean_loss:.4} lr {lr:.3e} dev F1 {dev_f1:.4}");
        history.push(EpochRecord {
            epoch,
            mean_loss,
            learning_rate: lr,
            dev_f1,
        });
        if best.as_ref().is_none_or(|b| dev_f1 > b.1) {
            best = Some((epoch, dev_f1, model.params.clone()));
        }
    }
    let (best_epoch, best_dev_f1, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_dev_f1,
        history,
    })
}

/// One configuration change of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationAxis {
    Full,
    NoGeneralKb,
    NoDomainKb,
    NoAffect,
    NoKnowledge,
    NoContextScore,
    NoKnowledgeScore,
    NoSyntaxKnowledgeScore,
    NoSyntaxAttention,
    DotAttention,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 10] = [
        AblationAxis::Full,
        AblationAxis::NoGeneralKb,
        AblationAxis::NoDomainKb,
        AblationAxis::NoAffect,
        AblationAxis::NoKnowledge,
        AblationAxis::NoContextScore,
        AblationAxis::NoKnowledgeScore,
        AblationAxis::NoSyntaxKnowledgeScore,
        AblationAxis::NoSyntaxAttention,
        AblationAxis::DotAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Full => "full",
            AblationAxis::NoGeneralKb => "-omcs",
            AblationAxis::NoDomainKb => "-domain_kb",
            AblationAxis::NoAffect => "-affect",
            AblationAxis::NoKnowledge => "-all_knowledge",
            AblationAxis::NoContextScore => "-f_c",
            AblationAxis::NoKnowledgeScore => "-f_k",
            AblationAxis::NoSyntaxKnowledgeScore => "-f_sk",
            AblationAxis::NoSyntaxAttention => "-syntax_attention",
            AblationAxis::DotAttention => "+dot_attention",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            AblationAxis::Full => {}
            AblationAxis::NoGeneralKb => c.use_general_kb = false,
            AblationAxis::NoDomainKb => c.use_domain_kb = false,
            AblationAxis::NoAffect => c.use_affect = false,
            AblationAxis::NoKnowledge => {
                c.use_general_kb = false;
                c.use_domain_kb = false;
                c.use_affect = false;
            }
            AblationAxis::NoContextScore => c.enable_f_c = false,
            AblationAxis::NoKnowledgeScore => c.enable_f_k = false,
            AblationAxis::NoSyntaxKnowledgeScore => c.enable_f_sk = false,
            AblationAxis::NoSyntaxAttention => c.attention_variant = AttentionVariant::Mean,
            AblationAxis::DotAttention => c.attention_variant = AttentionVariant::Dot,
        }
        c
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = AblationAxis::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!(
                    "unknown ablation axis `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Grid file: either a bare list of axis names or `{"cells": [...]}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum GridFile {
    List(Vec<String>),
    Object { cells: Vec<String> },
}

pub fn parse_grid(text: &str) -> Result<Vec<AblationAxis>> {
    let cells = match serde_json::from_str::<GridFile>(text)? {
        GridFile::List(c) | GridFile::Object { cells: c } => c,
    };
    if cells.is_empty() {
        return Err(Error::Config("ablation grid has no cells".into()));
    }
    cells.iter().map(|c| c.parse()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub cell: String,
    pub f1_pos: f64,
    pub precision_pos: f64,
    pub recall_pos: f64,
    /// F1 change relative to the `full` cell when the grid has one.
    pub delta_f1: Option<f64>,
    pub config_fingerprint: String,
}

/// Trains and evaluates one model per cell on shared splits and seed.
pub fn ablate(
    data: &TrainData<'_>,
    test: &[LabeledTriple],
    base: &ModelConfig,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    grid: &[AblationAxis],
) -> Result<Vec<(AblationAxis, EvalReport)>> {
    let eval_set = if test.is_empty() { data.dev } else { test };
    // cells are independent; each run is deterministic on its own
    grid.par_iter()
        .map(|&axis| {
            let outcome = train(data, &axis.apply(base), encoder, cfg)?;
            let ex = prepare_all(&outcome.model, eval_set, data.corpus, data.resources)?;
            Ok((axis, evaluate(&outcome.model, &ex, data.domain, cfg.seed)?))
        })
        .collect()
}

pub fn ablation_rows(results: &[(AblationAxis, EvalReport)]) -> Vec<AblationRow> {
    let full = results
        .iter()
        .find(|(a, _)| *a == AblationAxis::Full)
        .map(|(_, r)| r.f1_pos);
    results
        .iter()
        .map(|(a, r)| AblationRow {
            cell: a.name().to_string(),
            f1_pos: r.f1_pos,
            precision_pos: r.precision_pos,
            recall_pos: r.recall_pos,
            delta_f1: full.map(|f| r.f1_pos - f),
            config_fingerprint: r.config_fingerprint.clone(),
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn schedule_is_linear() {
        assert_eq!(lr_at(3e-5, 1e-4, 0, 100), 3e-5);
        assert!((lr_at(3e-5, 1e-4, 100, 100) - 3e-9).abs() < 1e-20);
        let mid = lr_at(1.0, 0.0, 50, 100);
        assert!((mid - 0.5).abs() < 1e-15);
        // hand values: lr (1 - (1 - f) s / S)
        assert!((lr_at(2.0, 0.5, 1, 4) - 1.75).abs() < 1e-15);
        assert!((lr_at(2.0, 0.5, 3, 4) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn metrics_from_confusion() {
        let c = Confusion::from_predictions(&[1, 1, 0, 0, 1], &[1, 0, 1, 0, 1]);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 1));
        assert_eq!(c.matrix(), [[1, 1], [1, 2]]);
        assert!((c.precision() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.recall() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);

        let perfect = Confusion::from_predictions(&[1, 0], &[1, 0]);
        assert_eq!(perfect.f1(), 1.0);
        let none = Confusion::from_predictions(&[0, 0, 0], &[1, 0, 1]);
        assert_eq!((none.recall(), none.f1()), (0.0, 0.0));
    }

    #[test]
    fn axis_names_round_trip() {
        for a in AblationAxis::ALL {
            assert_eq!(a.name().parse::<AblationAxis>().unwrap(), a);
        }
        assert!("-bogus".parse::<AblationAxis>().is_err());
        assert_eq!(parse_grid(r#"["full", "-f_c"]"#).unwrap().len(), 2);
        assert_eq!(
            parse_grid(r#"{"cells": ["+dot_attention"]}"#).unwrap(),
            vec![AblationAxis::DotAttention]
        );
        assert!(parse_grid(r#"["full", "nope"]"#).is_err());
    }

    #[test]
    fn axes_toggle_one_thing() {
        let base = ModelConfig::default();
        let distinct: std::collections::HashSet<String> =
            AblationAxis::ALL.iter().map(|a| fingerprint(&a.apply(&base))).collect();
        assert_eq!(distinct.len(), AblationAxis::ALL.len());
        let none = AblationAxis::NoKnowledge.apply(&base);
        assert!(!none.use_domain_kb && !none.use_general_kb && !none.use_affect);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![AblationRow {
            cell: "full".into(),
            f1_pos: 0.5,
            precision_pos: 0.5,
            recall_pos: 0.5,
            delta_f1: Some(0.0),
            config_fingerprint: "abc".into(),
        }];
        let text = ablation_csv(&rows).unwrap();
        assert_eq!(
            text,
            "cell,f1_pos,precision_pos,recall_pos,delta_f1,config_fingerprint\nfull,0.5,0.5,0.5,0.0,abc\n"
        );
    }

    struct Toy {
        corpus: Corpus,
        triples: Vec<LabeledTriple>,
        resources: Resources,
    }

    /// Four synthetic reviews (eight triples) with a mined domain KB.
    fn toy() -> Toy {
        use crate::synthetic::{generate, SynthConfig};
        let d = generate(&SynthConfig {
            reviews: 4,
            unlabeled: 300,
            ..SynthConfig::default()
        })
        .unwrap();
        let kb = crate::kb_mining::mine_domain_kb(&d.unlabeled, 3.0).unwrap();
        let store = crate::general_kb::TripleStore::new(d.general_triples.clone()).unwrap();
        Toy {
            corpus: Corpus::new(d.labeled).unwrap(),
            triples: d.triples,
            resources: Resources {
                domain_kb: Some(kb),
                triple_store: Some(store),
                ..Resources::default()
            },
        }
    }

    fn small() -> (ModelConfig, EncoderConfig, TrainConfig) {
        let enc = EncoderConfig {
            embed_dim: 8,
            token_dim: 8,
            length_embed_dim: 4,
            ..EncoderConfig::default()
        };
        let model = ModelConfig {
            ffn_hidden: 8,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            learning_rate: 0.01,
            batch_size: 1,
            seed: 3,
            optimizer: OptimizerConfig::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            ..TrainConfig::default()
        };
        (model, enc, train)
    }

    #[test]
    fn toy_set_is_learned() {
        let t = toy();
        assert_eq!(t.triples.len(), 8);
        let (m, e, c) = small();
        let data = TrainData {
            domain: "toy",
            corpus: &t.corpus,
            train: &t.triples,
            dev: &[],
            resources: &t.resources,
        };
        let out = train(&data, &m, &e, &c).unwrap();
        assert_eq!(out.history.len(), 20);
        let ex = prepare_all(&out.model, &t.triples, &t.corpus, &t.resources).unwrap();
        assert_eq!(confusion_of(&out.model, &ex).unwrap().f1(), 1.0);
    }

    #[test]
    fn same_seed_same_parameters() {
        let t = toy();
        let (m, e, mut c) = small();
        c.epochs = 3;
        let data = TrainData {
            domain: "toy",
            corpus: &t.corpus,
            train: &t.triples[..6],
            dev: &t.triples[6..],
            resources: &t.resources,
        };
        let a = train(&data, &m, &e, &c).unwrap();
        let b = train(&data, &m, &e, &c).unwrap();
        let bits = |p: &crate::tape::Params| -> Vec<(String, Vec<u64>)> {
            p.to_named()
                .into_iter()
                .map(|(k, t)| (k, t.data.iter().map(|x| x.to_bits()).collect()))
                .collect()
        };
        assert_eq!(bits(&a.model.params), bits(&b.model.params));
        c.seed += 1;
        let other = train(&data, &m, &e, &c).unwrap();
        assert_ne!(bits(&a.model.params), bits(&other.model.params));
    }

    #[test]
    fn returned_model_has_the_best_dev_f1() {
        let t = toy();
        let (m, e, mut c) = small();
        c.epochs = 8;
        c.learning_rate = 0.05;
        let data = TrainData {
            domain: "toy",
            corpus: &t.corpus,
            train: &t.triples[..4],
            dev: &t.triples[4..],
            resources: &t.resources,
        };
        let out = train(&data, &m, &e, &c).unwrap();
        assert!(out.history.iter().all(|h| out.best_dev_f1 >= h.dev_f1));
        let first = out.history.iter().find(|h| h.dev_f1 == out.best_dev_f1).unwrap();
        assert_eq!(first.epoch, out.best_epoch);
        let dev = prepare_all(&out.model, &t.triples[4..], &t.corpus, &t.resources).unwrap();
        assert_eq!(confusion_of(&out.model, &dev).unwrap().f1(), out.best_dev_f1);
    }

    #[test]
    fn knowledge_free_cell_ignores_knowledge_files() {
        let t = toy();
        let (m, e, mut c) = small();
        c.epochs = 2;
        let cfg = AblationAxis::NoKnowledge.apply(&m);
        let with = TrainData {
            domain: "toy",
            corpus: &t.corpus,
            train: &t.triples,
            dev: &[],
            resources: &t.resources,
        };
        let bare = Resources::default();
        let without = TrainData {
            resources: &bare,
            ..with
        };
        let a = train(&with, &cfg, &e, &c).unwrap();
        let b = train(&without, &cfg, &e, &c).unwrap();
        let pa = predict_all(
            &a.model,
            &prepare_all(&a.model, &t.triples, &t.corpus, &t.resources).unwrap(),
        )
        .unwrap();
        let pb = predict_all(&b.model, &prepare_all(&b.model, &t.triples, &t.corpus, &bare).unwrap()).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn two_cells_two_fingerprints() {
        let t = toy();
        let (m, e, mut c) = small();
        c.epochs = 1;
        let data = TrainData {
            domain: "toy",
            corpus: &t.corpus,
            train: &t.triples[..6],
            dev: &t.triples[6..],
            resources: &t.resources,
        };
        let grid = parse_grid(r#"["full", "-f_sk"]"#).unwrap();
        let results = ablate(&data, &[], &m, &e, &c, &grid).unwrap();
        let rows = ablation_rows(&results);
        assert_eq!(rows.len(), 2);
        assert_ne!(rows[0].config_fingerprint, rows[1].config_fingerprint);
        assert_eq!(rows[0].delta_f1, Some(0.0));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let t = toy();
        let (m, e, c) = small();
        let data = TrainData {
            domain: "toy",
            corpus: &t.corpus,
            train: &[],
            dev: &[],
            resources: &t.resources,
        };
        assert!(matches!(train(&data, &m, &e, &c), Err(Error::Empty(_))));
    }

    proptest! {
        #[test]
        fn confusion_reproduces_counts(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let (p, g): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let c = Confusion::from_predictions(&p, &g);
            prop_assert_eq!(c.total(), p.len());
            let tp = p.iter().zip(&g).filter(|(a, b)| **a == 1 && **b == 1).count();
            let pp = p.iter().filter(|a| **a == 1).count();
            let gp = g.iter().filter(|a| **a == 1).count();
            prop_assert_eq!(c.precision(), if pp == 0 { 0.0 } else { tp as f64 / pp as f64 });
            prop_assert_eq!(c.recall(), if gp == 0 { 0.0 } else { tp as f64 / gp as f64 });
            let f = c.f1();
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn schedule_is_monotone(lr in 1e-6f64..1.0, f in 0.0f64..1.0, total in 1usize..500) {
            let mut prev = f64::INFINITY;
            for s in 0..=total {
                let v = lr_at(lr, f, s, total);
                prop_assert!(v <= prev && v >= lr * f * (1.0 - 1e-12));
                prev = v;
            }
        }
    }
}
