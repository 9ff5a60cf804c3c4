//! The coreference classifier: context, knowledge and syntax-knowledge
//! relevance scores summed under a sigmoid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{EncoderConfig, EncoderMode, ModelConfig};
use crate::corpus::{LabeledTriple, ParsedDocument};
use crate::encoder::{EncodedText, EncoderParams, FrozenStore, TextEncoder, Vocab};
use crate::error::{Error, Result};
use crate::general_kb::{lookup_general_knowledge, AffectLexicon, TripleStore};
use crate::kb_mining::{lookup_domain_knowledge, DomainKb};
use crate::knowledge::{merge_knowledge, KnowledgePhrase};
use crate::nn::{Dropout, Ffn};
use crate::span_repr::{extract_syntax_phrases, SpanEncoder, SpanInput};
use crate::tape::{Gradients, Graph, ParamId, Params, Tensor, Var};

/// Probability clamp applied before the log in the loss.
pub const PROB_EPS: f64 = 1e-7;
pub const THRESHOLD: f64 = 0.5;

/// External resources consulted while preparing examples.
#[derive(Clone, Debug, Default)]
pub struct Resources {
    pub domain_kb: Option<DomainKb>,
    pub triple_store: Option<TripleStore>,
    pub affect: Option<AffectLexicon>,
    pub frozen: Option<FrozenStore>,
}

#[derive(Clone, Debug)]
struct Layers {
    encoder: EncoderParams,
    span: SpanEncoder,
    ffn3: Ffn,
    ffn4: Ffn,
    ffn5: Ffn,
    ffn6: Ffn,
    ffn7: Ffn,
    ffn8: Ffn,
    sentinel_knowledge: ParamId,
    sentinel_fsk: ParamId,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: EncoderConfig,
    pub vocab: Vocab,
    pub params: Params,
    layers: Layers,
}

/// A triple turned into sub-token layouts, ready for any number of passes.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub label: u8,
    pub doc: EncodedText,
    /// Sub-token window used as the context sequence.
    pub context: (usize, usize),
    pub mention: SpanInput,
    pub anaphor: SpanInput,
    pub syntax_m: Vec<SpanInput>,
    pub syntax_p: Vec<SpanInput>,
    pub knowledge: Vec<KnowledgePhrase>,
    pub knowledge_text: Option<EncodedText>,
    pub knowledge_spans: Vec<SpanInput>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreBundle {
    pub f_c: f64,
    pub f_k: f64,
    pub f_sk: f64,
    pub f_hat: f64,
    /// Knowledge phrases with their attention weights `c_i`.
    pub knowledge: Vec<(KnowledgePhrase, f64)>,
}

impl ScoreBundle {
    pub fn label(&self) -> u8 {
        u8::from(self.f_hat >= THRESHOLD)
    }
}

/// Graph handles of one forward pass.
pub struct ScoreVars {
    pub f_c: Option<Var>,
    pub f_k: Option<Var>,
    pub f_sk: Option<Var>,
    pub f_hat: Var,
    pub knowledge_weights: Option<Var>,
    /// Span-internal attention of the mention and the anaphor.
    pub span_weights: [Var; 2],
    /// Context attention against the mention and against the anaphor.
    pub context_weights: Option<[Var; 2]>,
    /// Syntax-phrase rows attending over knowledge rows, per side.
    pub syntax_weights: Option<[Var; 2]>,
}

/// Every attention distribution of one prediction, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    pub span_m: Vec<f64>,
    pub span_p: Vec<f64>,
    pub context_m: Option<Vec<f64>>,
    pub context_p: Option<Vec<f64>>,
    /// Empty when the knowledge sentinel stood in.
    pub knowledge: Vec<f64>,
    pub syntax_m: Option<Tensor>,
    pub syntax_p: Option<Tensor>,
}

/// Sub-token window of at most `max` entries centred on `region`.
pub fn context_window(n: usize, region: (usize, usize), max: usize) -> (usize, usize) {
    if n <= max {
        return (0, n);
    }
    let centre = (region.0 + region.1) / 2;
    let start = centre.saturating_sub(max / 2).min(n - max);
    (start, start + max)
}

/// Mean binary cross-entropy of clamped probabilities.
pub fn bce_loss(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("loss over zero predictions".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let y = f64::from(y);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Knowledge for a mention: domain entries first, then general ones.
pub fn retrieve_knowledge(
    config: &ModelConfig,
    resources: &Resources,
    triple: &LabeledTriple,
    doc: &ParsedDocument,
) -> Vec<KnowledgePhrase> {
    let domain = match (&resources.domain_kb, config.use_domain_kb) {
        (Some(kb), true) => lookup_domain_knowledge(kb, &triple.mention, doc, config.knowledge_cap),
        _ => Vec::new(),
    };
    let general = match (&resources.triple_store, config.use_general_kb) {
        (Some(store), true) => {
            let words = crate::kb_mining::extract_mention_words(&triple.mention, doc);
            lookup_general_knowledge(store, &words, config.knowledge_cap)
        }
        _ => Vec::new(),
    };
    merge_knowledge(domain, general, config.max_knowledge)
}

impl Model {
    fn input_width(config: &ModelConfig, encoder: &EncoderConfig) -> usize {
        let base = match encoder.mode {
            EncoderMode::ToyTrainable => encoder.token_dim,
            EncoderMode::FrozenPretrained => encoder.frozen_dim,
        };
        base + if config.uses_affect() { config.affect_width } else { 0 }
    }

    pub fn new(config: ModelConfig, encoder: EncoderConfig, vocab: Vocab, seed: u64) -> Result<Model> {
        config.validate()?;
        encoder.validate_shape()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let d = encoder.embed_dim;
        let h = config.ffn_hidden;
        let table = (encoder.mode == EncoderMode::ToyTrainable)
            .then(|| params.add_uniform("embed", vocab.len(), encoder.token_dim, 0.5, &mut rng));
        let proj_w = params.add_xavier("proj.w", Model::input_width(&config, &encoder), d, &mut rng);
        let proj_b = params.add_zeros("proj.b", 1, d);
        let span = SpanEncoder::new(&mut params, &encoder, h, config.attention_variant, &mut rng);
        let layers = Layers {
            encoder: EncoderParams { table, proj_w, proj_b },
            span,
            ffn3: Ffn::new(&mut params, "ffn3", 3 * d, h, 1, &mut rng),
            ffn4: Ffn::new(&mut params, "ffn4", 3 * d, h, 1, &mut rng),
            ffn5: Ffn::new(&mut params, "ffn5", 3 * d, h, 1, &mut rng),
            ffn6: Ffn::new(&mut params, "ffn6", 5 * d, h, 1, &mut rng),
            ffn7: Ffn::new(&mut params, "ffn7", d, h, h, &mut rng),
            ffn8: Ffn::new(&mut params, "ffn8", h, h, 1, &mut rng),
            sentinel_knowledge: params.add_uniform("sentinel.knowledge", 1, d, 0.1, &mut rng),
            sentinel_fsk: params.add_zeros("sentinel.fsk", 1, 1),
        };
        Ok(Model {
            config,
            encoder,
            vocab,
            params,
            layers,
        })
    }

    /// Rebuilds a model around saved parameters.
    pub fn from_params(config: ModelConfig, encoder: EncoderConfig, vocab: Vocab, params: Params) -> Result<Model> {
        config.validate()?;
        encoder.validate_shape()?;
        let missing = |name: &str| Error::Checkpoint(format!("missing parameter `{name}`"));
        let id = |name: &str| params.id(name).ok_or_else(|| missing(name));
        let ffn = |name: &str| Ffn::lookup(&params, name).ok_or_else(|| missing(name));
        let table = match encoder.mode {
            EncoderMode::ToyTrainable => Some(id("embed")?),
            EncoderMode::FrozenPretrained => None,
        };
        if let Some(t) = table {
            if params.get(t).rows != vocab.len() {
                return Err(Error::Checkpoint(format!(
                    "embedding table has {} rows, vocabulary {}",
                    params.get(t).rows,
                    vocab.len()
                )));
            }
        }
        let layers = Layers {
            encoder: EncoderParams {
                table,
                proj_w: id("proj.w")?,
                proj_b: id("proj.b")?,
            },
            span: SpanEncoder::lookup(&params, &encoder, config.attention_variant)
                .ok_or_else(|| missing("ffn1/ffn2"))?,
            ffn3: ffn("ffn3")?,
            ffn4: ffn("ffn4")?,
            ffn5: ffn("ffn5")?,
            ffn6: ffn("ffn6")?,
            ffn7: ffn("ffn7")?,
            ffn8: ffn("ffn8")?,
            sentinel_knowledge: id("sentinel.knowledge")?,
            sentinel_fsk: id("sentinel.fsk")?,
        };
        if params.get(layers.encoder.proj_w).rows != Model::input_width(&config, &encoder) {
            return Err(Error::Checkpoint(
                "projection width disagrees with the configuration".into(),
            ));
        }
        Ok(Model {
            config,
            encoder,
            vocab,
            params,
            layers,
        })
    }

    fn text_encoder<'a>(&'a self, resources: &'a Resources) -> Result<TextEncoder<'a>> {
        let affect = if self.config.uses_affect() {
            let lex = resources
                .affect
                .as_ref()
                .ok_or_else(|| Error::Config("model uses affect vectors but no lexicon is loaded".into()))?;
            if lex.width() != self.config.affect_width {
                return Err(Error::Shape(format!(
                    "affect lexicon width {} but model expects {}",
                    lex.width(),
                    self.config.affect_width
                )));
            }
            Some(lex)
        } else {
            None
        };
        Ok(TextEncoder {
            config: &self.encoder,
            vocab: &self.vocab,
            affect,
            frozen: resources.frozen.as_ref(),
        })
    }

    pub fn prepare(&self, triple: &LabeledTriple, doc: &ParsedDocument, resources: &Resources) -> Result<Prepared> {
        if triple.doc_id != doc.doc_id {
            return Err(Error::UnknownDocument(format!(
                "triple for `{}` given document `{}`",
                triple.doc_id, doc.doc_id
            )));
        }
        let te = self.text_encoder(resources)?;
        let enc = te.encode_document(doc)?;
        let mention = SpanInput::new(&triple.mention, doc, &enc, 0)?;
        let anaphor = SpanInput::new(&triple.anaphor, doc, &enc, 0)?;
        let region = (
            mention.sub_start.min(anaphor.sub_start),
            mention.sub_end.max(anaphor.sub_end),
        );
        let context = context_window(enc.len(), region, self.encoder.max_seq_len);
        if context != (0, enc.len()) {
            log::warn!(
                "review `{}` has {} sub-tokens; context truncated to [{}, {})",
                doc.doc_id,
                enc.len(),
                context.0,
                context.1
            );
        }
        let syntax = |span| -> Result<Vec<SpanInput>> {
            extract_syntax_phrases(span, doc)
                .phrases
                .iter()
                .map(|s| SpanInput::new(s, doc, &enc, 0))
                .collect()
        };
        let (syntax_m, syntax_p) = if self.config.enable_f_sk {
            (syntax(&triple.mention)?, syntax(&triple.anaphor)?)
        } else {
            (Vec::new(), Vec::new())
        };
        let knowledge = retrieve_knowledge(&self.config, resources, triple, doc);
        let mut parts = Vec::with_capacity(knowledge.len());
        for k in &knowledge {
            let (kdoc, kspan) = k.to_document();
            let kenc = te.encode_document(&kdoc)?;
            parts.push((kdoc, kspan, kenc));
        }
        let (knowledge_text, knowledge_spans) = if parts.is_empty() {
            (None, Vec::new())
        } else {
            let encs: Vec<&EncodedText> = parts.iter().map(|p| &p.2).collect();
            let (joined, offsets) = EncodedText::concat(&encs);
            let mut word_base = 0;
            let mut spans = Vec::with_capacity(parts.len());
            for ((kdoc, kspan, kenc), _) in parts.iter().zip(offsets) {
                spans.push(SpanInput::new(kspan, kdoc, &joined, word_base)?);
                word_base += kenc.word_range.len();
            }
            (Some(joined), spans)
        };
        Ok(Prepared {
            label: triple.label,
            doc: enc,
            context,
            mention,
            anaphor,
            syntax_m,
            syntax_p,
            knowledge,
            knowledge_text,
            knowledge_spans,
        })
    }

    /// `F_C`: cross attention of the context tokens `t` against each span.
    pub fn context_score(&self, g: &mut Graph<'_>, t: Var, vm: Var, vp: Var, dropout: &mut Dropout) -> Result<Var> {
        Ok(self.context_parts(g, t, vm, vp, dropout)?.0)
    }

    fn context_parts(
        &self,
        g: &mut Graph<'_>,
        t: Var,
        vm: Var,
        vp: Var,
        dropout: &mut Dropout,
    ) -> Result<(Var, [Var; 2])> {
        let n = g.shape(t).0;
        if n == 0 {
            return Err(Error::Empty("context has no tokens".into()));
        }
        let mut attended = Vec::with_capacity(2);
        let mut weights = Vec::with_capacity(2);
        for v in [vm, vp] {
            let vb = g.broadcast_rows(v, n)?;
            let prod = g.mul(t, vb)?;
            let feats = g.concat_cols(&[t, vb, prod])?;
            let scores = self.layers.ffn3.forward(g, feats, dropout)?;
            let s = g.masked_softmax_col(scores, &vec![Some(0.0); n], 0)?;
            weights.push(s);
            attended.push(g.scale_rows(t, s)?);
        }
        let (wm, wp) = (attended[0], attended[1]);
        let sm = g.sum_rows(wm);
        let sp = g.sum_rows(wp);
        let prod = g.mul(wm, wp)?;
        let sprod = g.sum_rows(prod);
        let feats = g.concat_cols(&[sm, sp, sprod])?;
        Ok((self.layers.ffn4.forward(g, feats, dropout)?, [weights[0], weights[1]]))
    }

    /// `F_K` and the attention weights over the knowledge rows of `mk`.
    pub fn knowledge_score(
        &self,
        g: &mut Graph<'_>,
        vm: Var,
        vp: Var,
        mk: Var,
        dropout: &mut Dropout,
    ) -> Result<(Var, Var)> {
        let n = g.shape(mk).0;
        let vmb = g.broadcast_rows(vm, n)?;
        let prod = g.mul(mk, vmb)?;
        let feats = g.concat_cols(&[mk, vmb, prod])?;
        let h = self.layers.ffn5.forward(g, feats, dropout)?;
        let c = g.masked_softmax_col(h, &vec![Some(0.0); n], 0)?;
        let v_hat = g.weighted_sum(c, mk)?;
        let pm = g.mul(vm, v_hat)?;
        let pp = g.mul(vp, v_hat)?;
        let first_product = if self.config.literal_knowledge_features { pp } else { pm };
        let feats = g.concat_cols(&[vm, vp, v_hat, first_product, pp])?;
        Ok((self.layers.ffn6.forward(g, feats, dropout)?, c))
    }

    /// `F_SK`: each syntax phrase attends over the knowledge rows; the two
    /// attended sets interact through their pooled element-wise product.
    pub fn syntax_knowledge_score(
        &self,
        g: &mut Graph<'_>,
        mk: Var,
        msm: Option<Var>,
        msp: Option<Var>,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        Ok(self.syntax_parts(g, mk, msm, msp, dropout)?.0)
    }

    fn syntax_parts(
        &self,
        g: &mut Graph<'_>,
        mk: Var,
        msm: Option<Var>,
        msp: Option<Var>,
        dropout: &mut Dropout,
    ) -> Result<(Var, Option<[Var; 2]>)> {
        let (Some(msm), Some(msp)) = (msm, msp) else {
            return Ok((g.param(self.layers.sentinel_fsk), None));
        };
        let d = g.shape(mk).1 as f64;
        let mut pooled = Vec::with_capacity(2);
        let mut maps = Vec::with_capacity(2);
        for s in [msm, msp] {
            let a = g.matmul_bt(s, mk)?;
            let a = g.scale(a, 1.0 / d.sqrt());
            let a = g.softmax_rows(a);
            maps.push(a);
            let attended = g.matmul(a, mk)?;
            pooled.push(g.sum_rows(attended));
        }
        let z = g.mul(pooled[0], pooled[1])?;
        let z = self.layers.ffn7.forward(g, z, dropout)?;
        Ok((self.layers.ffn8.forward(g, z, dropout)?, Some([maps[0], maps[1]])))
    }

    fn stack(&self, g: &mut Graph<'_>, x: Var, spans: &[SpanInput], dropout: &mut Dropout) -> Result<Option<Var>> {
        if spans.is_empty() {
            return Ok(None);
        }
        let rows = spans
            .iter()
            .map(|s| Ok(self.layers.span.forward(g, x, s, dropout)?.vector))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(g.concat_rows(&rows)?))
    }

    pub fn forward(&self, g: &mut Graph<'_>, ex: &Prepared, dropout: &mut Dropout) -> Result<ScoreVars> {
        let cfg = &self.config;
        let x = self.layers.encoder.embed(g, &ex.doc)?;
        let sm = self.layers.span.forward(g, x, &ex.mention, dropout)?;
        let sp = self.layers.span.forward(g, x, &ex.anaphor, dropout)?;
        let (vm, vp) = (sm.vector, sp.vector);

        let (f_c, context_weights) = if cfg.enable_f_c {
            let t = g.slice_rows(x, ex.context.0, ex.context.1)?;
            let (f, w) = self.context_parts(g, t, vm, vp, dropout)?;
            (Some(f), Some(w))
        } else {
            (None, None)
        };

        let mk = if cfg.enable_f_k || cfg.enable_f_sk {
            let stacked = match &ex.knowledge_text {
                Some(text) => {
                    let xk = self.layers.encoder.embed(g, text)?;
                    self.stack(g, xk, &ex.knowledge_spans, dropout)?
                }
                None => None,
            };
            Some(match stacked {
                Some(m) => m,
                None => g.param(self.layers.sentinel_knowledge),
            })
        } else {
            None
        };

        let (f_k, knowledge_weights) = match (cfg.enable_f_k, mk) {
            (true, Some(mk)) => {
                let (f, c) = self.knowledge_score(g, vm, vp, mk, dropout)?;
                (Some(f), ex.knowledge_text.is_some().then_some(c))
            }
            _ => (None, None),
        };

        let (f_sk, syntax_weights) = match (cfg.enable_f_sk, mk) {
            (true, Some(mk)) => {
                let msm = self.stack(g, x, &ex.syntax_m, dropout)?;
                let msp = self.stack(g, x, &ex.syntax_p, dropout)?;
                let (f, w) = self.syntax_parts(g, mk, msm, msp, dropout)?;
                (Some(f), w)
            }
            _ => (None, None),
        };

        let heads: Vec<Var> = [f_c, f_k, f_sk].into_iter().flatten().collect();
        let mut total = heads[0];
        for &h in &heads[1..] {
            total = g.add(total, h)?;
        }
        let f_hat = g.sigmoid(total);
        Ok(ScoreVars {
            f_c,
            f_k,
            f_sk,
            f_hat,
            knowledge_weights,
            span_weights: [sm.weights, sp.weights],
            context_weights,
            syntax_weights,
        })
    }

    /// Inference-mode attention distributions of `ex`.
    pub fn attention_maps(&self, ex: &Prepared) -> Result<AttentionMaps> {
        let mut g = Graph::new(&self.params);
        let vars = self.forward(&mut g, ex, &mut Dropout::inference())?;
        let vec_of = |v: Var| g.value(v).data.clone();
        Ok(AttentionMaps {
            span_m: vec_of(vars.span_weights[0]),
            span_p: vec_of(vars.span_weights[1]),
            context_m: vars.context_weights.map(|w| vec_of(w[0])),
            context_p: vars.context_weights.map(|w| vec_of(w[1])),
            knowledge: vars.knowledge_weights.map(vec_of).unwrap_or_default(),
            syntax_m: vars.syntax_weights.map(|w| g.value(w[0]).clone()),
            syntax_p: vars.syntax_weights.map(|w| g.value(w[1]).clone()),
        })
    }

    pub fn predict(&self, ex: &Prepared) -> Result<ScoreBundle> {
        let mut g = Graph::new(&self.params);
        let vars = self.forward(&mut g, ex, &mut Dropout::inference())?;
        let read = |v: Option<Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
        let weights = vars
            .knowledge_weights
            .map(|c| g.value(c).data.clone())
            .unwrap_or_else(|| vec![0.0; ex.knowledge.len()]);
        Ok(ScoreBundle {
            f_c: read(vars.f_c),
            f_k: read(vars.f_k),
            f_sk: read(vars.f_sk),
            f_hat: g.value(vars.f_hat).item(),
            knowledge: ex.knowledge.iter().cloned().zip(weights).collect(),
        })
    }

    /// Clamped cross-entropy of one example and its gradient, scaled by `weight`.
    pub fn loss_and_grad(&self, ex: &Prepared, weight: f64, dropout: &mut Dropout) -> Result<(f64, Gradients)> {
        let mut g = Graph::new(&self.params);
        let vars = self.forward(&mut g, ex, dropout)?;
        let p = g.clamp(vars.f_hat, PROB_EPS, 1.0 - PROB_EPS);
        let loss = g.bce(p, f64::from(ex.label))?;
        let mut grads = self.params.zero_grads();
        g.backward(loss, weight, &mut grads);
        Ok((g.value(loss).item(), grads))
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Replaces every parameter value, keeping names and shapes.
    pub fn set_params(&mut self, params: Params) -> Result<()> {
        self.params.load_named(&params.to_named())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.params.id(name).map(|id| self.params.get(id))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::config::AttentionVariant;
    use crate::corpus::test_support::moonbeam_doc;
    use crate::corpus::{Span, SpanKind};
    use crate::general_kb::Triple;
    use crate::tape::{gradient_check, sigmoid};

    // ---- independent arithmetic for the oracles ----

    type Mat = Vec<Vec<f64>>;

    fn mm(a: &Mat, b: &Mat) -> Mat {
        a.iter()
            .map(|r| {
                (0..b[0].len())
                    .map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                    .collect()
            })
            .collect()
    }

    fn ffn_ref(x: &[f64], p: &BTreeMap<String, Tensor>, name: &str) -> Vec<f64> {
        let get = |s: &str| {
            let t = &p[&format!("{name}.{s}")];
            (0..t.rows).map(|r| t.row(r).to_vec()).collect::<Mat>()
        };
        let h: Vec<f64> = mm(&vec![x.to_vec()], &get("w1"))[0]
            .iter()
            .zip(&get("b1")[0])
            .map(|(a, b)| (a + b).tanh())
            .collect();
        mm(&vec![h], &get("w2"))[0]
            .iter()
            .zip(&get("b2")[0])
            .map(|(a, b)| a + b)
            .collect()
    }

    fn softmax_ref(v: &[f64]) -> Vec<f64> {
        let z: f64 = v.iter().map(|x| x.exp()).sum();
        v.iter().map(|x| x.exp() / z).collect()
    }

    fn cat(parts: &[&[f64]]) -> Vec<f64> {
        parts.iter().flat_map(|p| p.iter().copied()).collect()
    }

    fn had(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x * y).collect()
    }

    // ---- fixtures ----

    fn tiny_config() -> (ModelConfig, EncoderConfig) {
        (
            ModelConfig {
                ffn_hidden: 3,
                dropout: 0.0,
                ..ModelConfig::default()
            },
            EncoderConfig {
                embed_dim: 2,
                token_dim: 3,
                length_embed_dim: 2,
                ..EncoderConfig::default()
            },
        )
    }

    fn tiny_model() -> Model {
        let (m, e) = tiny_config();
        Model::new(m, e, Vocab::bundled(), 7).unwrap()
    }

    fn resources() -> Resources {
        let store = TripleStore::new(vec![
            Triple {
                e1: "moonbeam".into(),
                relation: "IsA".into(),
                e2: "clock".into(),
            },
            Triple {
                e1: "moonbeam".into(),
                relation: "HasProperty".into(),
                e2: "green light".into(),
            },
        ])
        .unwrap();
        Resources {
            triple_store: Some(store),
            ..Resources::default()
        }
    }

    fn moonbeam_triple(doc: &ParsedDocument) -> LabeledTriple {
        let m = Span::resolve(doc, 2, 5, None, SpanKind::Mention).unwrap();
        let p = Span::resolve(doc, 13, 14, None, SpanKind::Anaphor).unwrap();
        LabeledTriple::new(m, p, 1).unwrap()
    }

    fn rows(v: &[&[f64]]) -> Tensor {
        Tensor::from_vec(v.len(), v[0].len(), v.iter().flat_map(|r| r.iter().copied()).collect())
    }

    #[test]
    fn context_score_matches_oracle() {
        let model = tiny_model();
        let named = model.params.to_named();
        let t: [&[f64]; 3] = [&[0.5, -1.0], &[1.5, 0.25], &[-0.75, 2.0]];
        let vm = [0.3, -0.2];
        let vp = [-1.1, 0.4];

        let mut attended = Vec::new();
        for v in [&vm, &vp] {
            let g: Vec<f64> = t
                .iter()
                .map(|ti| ffn_ref(&cat(&[ti, v, &had(ti, v)]), &named, "ffn3")[0])
                .collect();
            let s = softmax_ref(&g);
            attended.push(
                t.iter()
                    .zip(&s)
                    .map(|(ti, si)| ti.iter().map(|x| x * si).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            );
        }
        let sum = |w: &Vec<Vec<f64>>| vec![w.iter().map(|r| r[0]).sum::<f64>(), w.iter().map(|r| r[1]).sum::<f64>()];
        let prod: Vec<Vec<f64>> = attended[0].iter().zip(&attended[1]).map(|(a, b)| had(a, b)).collect();
        let want = ffn_ref(
            &cat(&[&sum(&attended[0]), &sum(&attended[1]), &sum(&prod)]),
            &named,
            "ffn4",
        )[0];

        let mut g = Graph::new(&model.params);
        let tv = g.constant(rows(&t));
        let vmv = g.constant(Tensor::row_vector(vm.to_vec()));
        let vpv = g.constant(Tensor::row_vector(vp.to_vec()));
        let got = model
            .context_score(&mut g, tv, vmv, vpv, &mut Dropout::inference())
            .unwrap();
        assert!((g.value(got).item() - want).abs() < 1e-12);
    }

    #[test]
    fn zero_output_weights_leave_bias() {
        let mut model = tiny_model();
        let w2 = model.params.id("ffn4.w2").unwrap();
        model.params.get_mut(w2).data.iter_mut().for_each(|v| *v = 0.0);
        let b2 = model.params.id("ffn4.b2").unwrap();
        model.params.get_mut(b2).data[0] = 0.625;
        let mut g = Graph::new(&model.params);
        let t = g.constant(rows(&[&[1.0, 2.0]]));
        let v = g.constant(Tensor::row_vector(vec![0.1, 0.2]));
        let got = model.context_score(&mut g, t, v, v, &mut Dropout::inference()).unwrap();
        assert_eq!(g.value(got).item(), 0.625);
    }

    #[test]
    fn knowledge_score_matches_oracle() {
        let model = tiny_model();
        let named = model.params.to_named();
        let k: [&[f64]; 2] = [&[0.2, 0.9], &[-0.6, 0.1]];
        let vm = [1.0, -0.5];
        let vp = [0.25, 0.75];
        let h: Vec<f64> = k
            .iter()
            .map(|ki| ffn_ref(&cat(&[ki, &vm, &had(ki, &vm)]), &named, "ffn5")[0])
            .collect();
        let c = softmax_ref(&h);
        let v_hat: Vec<f64> = (0..2).map(|j| c[0] * k[0][j] + c[1] * k[1][j]).collect();
        let want = ffn_ref(
            &cat(&[&vm, &vp, &v_hat, &had(&vm, &v_hat), &had(&vp, &v_hat)]),
            &named,
            "ffn6",
        )[0];

        let mut g = Graph::new(&model.params);
        let mk = g.constant(rows(&k));
        let vmv = g.constant(Tensor::row_vector(vm.to_vec()));
        let vpv = g.constant(Tensor::row_vector(vp.to_vec()));
        let (f, cw) = model
            .knowledge_score(&mut g, vmv, vpv, mk, &mut Dropout::inference())
            .unwrap();
        assert!((g.value(f).item() - want).abs() < 1e-12);
        for (a, b) in g.value(cw).data.iter().zip(&c) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_knowledge_row_gets_full_weight() {
        let model = tiny_model();
        let mut g = Graph::new(&model.params);
        let mk = g.constant(rows(&[&[0.4, -0.3]]));
        let v = g.constant(Tensor::row_vector(vec![0.1, 0.2]));
        let (_, c) = model
            .knowledge_score(&mut g, v, v, mk, &mut Dropout::inference())
            .unwrap();
        assert_eq!(g.value(c).data, vec![1.0]);
    }

    #[test]
    fn syntax_knowledge_score_matches_oracle() {
        let model = tiny_model();
        let named = model.params.to_named();
        let k: [&[f64]; 2] = [&[0.3, -0.4], &[1.2, 0.5]];
        let sm: [&[f64]; 2] = [&[0.7, 0.1], &[-0.2, 0.9]];
        let sp: [&[f64]; 2] = [&[0.05, -1.0], &[0.6, 0.6]];
        let attend = |s: &[&[f64]; 2]| {
            let mut pooled = vec![0.0; 2];
            for si in s {
                let logits: Vec<f64> = k
                    .iter()
                    .map(|kj| (si[0] * kj[0] + si[1] * kj[1]) / 2f64.sqrt())
                    .collect();
                let a = softmax_ref(&logits);
                for c in 0..2 {
                    pooled[c] += a[0] * k[0][c] + a[1] * k[1][c];
                }
            }
            pooled
        };
        let z = had(&attend(&sm), &attend(&sp));
        let want = ffn_ref(&ffn_ref(&z, &named, "ffn7"), &named, "ffn8")[0];

        let mut g = Graph::new(&model.params);
        let mk = g.constant(rows(&k));
        let msm = g.constant(rows(&sm));
        let msp = g.constant(rows(&sp));
        let f = model
            .syntax_knowledge_score(&mut g, mk, Some(msm), Some(msp), &mut Dropout::inference())
            .unwrap();
        assert!((g.value(f).item() - want).abs() < 1e-12);
    }

    #[test]
    fn empty_syntax_side_gives_learned_scalar() {
        let mut model = tiny_model();
        let id = model.params.id("sentinel.fsk").unwrap();
        model.params.get_mut(id).data[0] = -0.3;
        let mut g = Graph::new(&model.params);
        let mk = g.constant(rows(&[&[0.4, -0.3]]));
        let msp = g.constant(rows(&[&[0.4, -0.3]]));
        let f = model
            .syntax_knowledge_score(&mut g, mk, None, Some(msp), &mut Dropout::inference())
            .unwrap();
        assert_eq!(g.value(f).item(), -0.3);
    }

    #[test]
    fn loss_values() {
        assert!(bce_loss(&[1.0 - PROB_EPS], &[1]).unwrap() < 1e-6);
        assert!((bce_loss(&[0.5], &[0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        // (-ln 0.9 - ln 0.8 - ln 0.4) / 3
        let want = (0.9f64.ln() + 0.8f64.ln() + 0.4f64.ln()) / -3.0;
        let got = bce_loss(&[0.9, 0.2, 0.4], &[1, 0, 1]).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!(bce_loss(&[], &[]).is_err());
        assert!(bce_loss(&[0.0, 1.0], &[1, 0]).unwrap().is_finite());
    }

    #[test]
    fn sigmoid_of_zero_sum() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(
            ScoreBundle {
                f_c: 0.0,
                f_k: 0.0,
                f_sk: 0.0,
                f_hat: 0.5,
                knowledge: vec![]
            }
            .label(),
            1
        );
    }

    #[test]
    fn saturated_context_head_drives_probability_to_one() {
        let (mut m, e) = tiny_config();
        m.enable_f_k = false;
        m.enable_f_sk = false;
        let mut model = Model::new(m, e, Vocab::bundled(), 7).unwrap();
        let b = model.params.id("ffn4.b2").unwrap();
        model.params.get_mut(b).data[0] = 40.0;
        let w = model.params.id("ffn4.w2").unwrap();
        model.params.get_mut(w).data.iter_mut().for_each(|v| *v = 0.0);
        let doc = moonbeam_doc();
        let ex = model.prepare(&moonbeam_triple(&doc), &doc, &resources()).unwrap();
        let s = model.predict(&ex).unwrap();
        assert!(s.f_hat > 1.0 - 1e-12);
        assert_eq!((s.f_k, s.f_sk), (0.0, 0.0));
    }

    #[test]
    fn prepared_running_example() {
        let model = tiny_model();
        let doc = moonbeam_doc();
        let ex = model.prepare(&moonbeam_triple(&doc), &doc, &resources()).unwrap();
        let texts: Vec<&str> = ex.knowledge.iter().map(|k| k.text.as_str()).collect();
        assert_eq!(texts, vec!["clock", "green light"]);
        assert_eq!(ex.knowledge_spans.len(), 2);
        assert_eq!(ex.syntax_m.len(), 1);
        assert_eq!(ex.syntax_p.len(), 2);
        assert_eq!(ex.context, (0, ex.doc.len()));
        let s = model.predict(&ex).unwrap();
        assert!((s.f_hat - sigmoid(s.f_c + s.f_k + s.f_sk)).abs() < 1e-9);
        let total: f64 = s.knowledge.iter().map(|k| k.1).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_knowledge_uses_sentinel() {
        let model = tiny_model();
        let doc = moonbeam_doc();
        let ex = model
            .prepare(&moonbeam_triple(&doc), &doc, &Resources::default())
            .unwrap();
        assert!(ex.knowledge.is_empty());
        let s = model.predict(&ex).unwrap();
        assert!(s.f_hat.is_finite() && s.knowledge.is_empty());
        // the sentinel receives gradient
        let (_, grads) = model.loss_and_grad(&ex, 1.0, &mut Dropout::inference()).unwrap();
        let id = model.params.id("sentinel.knowledge").unwrap();
        assert!(grads.get(id).data.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn heads_add_up() {
        let doc = moonbeam_doc();
        let (m, e) = tiny_config();
        let full = Model::new(m.clone(), e.clone(), Vocab::bundled(), 7).unwrap();
        let ex = full.prepare(&moonbeam_triple(&doc), &doc, &resources()).unwrap();
        let s = full.predict(&ex).unwrap();
        let mut no_k = full.clone();
        no_k.config.enable_f_k = false;
        let s2 = no_k.predict(&ex).unwrap();
        assert!((s2.f_hat - sigmoid(s.f_c + s.f_sk)).abs() < 1e-9);
        assert_eq!(s2.f_k, 0.0);
    }

    #[test]
    fn context_window_centres_on_region() {
        assert_eq!(context_window(10, (2, 4), 256), (0, 10));
        assert_eq!(context_window(300, (280, 290), 256), (44, 300));
        assert_eq!(context_window(300, (100, 110), 256), (0, 256));
        assert_eq!(context_window(1000, (500, 520), 256), (382, 638));
    }

    #[test]
    fn truncated_context_keeps_both_spans() {
        let (m, mut e) = tiny_config();
        e.max_seq_len = 8;
        let model = Model::new(m, e, Vocab::bundled(), 1).unwrap();
        let doc = moonbeam_doc();
        let ex = model.prepare(&moonbeam_triple(&doc), &doc, &resources()).unwrap();
        assert_eq!(ex.context.1 - ex.context.0, 8);
        assert!(model.predict(&ex).unwrap().f_hat.is_finite());
    }

    #[test]
    fn literal_feature_flag_changes_input() {
        let model = tiny_model();
        let mut literal = model.clone();
        literal.config.literal_knowledge_features = true;
        let doc = moonbeam_doc();
        let ex = model.prepare(&moonbeam_triple(&doc), &doc, &resources()).unwrap();
        assert_ne!(model.predict(&ex).unwrap().f_k, literal.predict(&ex).unwrap().f_k);
    }

    #[test]
    fn end_to_end_gradients() {
        let doc = moonbeam_doc();
        let model = tiny_model();
        let ex = model.prepare(&moonbeam_triple(&doc), &doc, &resources()).unwrap();
        let loss = |p: &Params| {
            let mut m = model.clone();
            m.params = p.clone();
            let (l, g) = m.loss_and_grad(&ex, 1.0, &mut Dropout::inference()).unwrap();
            (l, g)
        };
        let only = |name: &str| !name.starts_with("embed");
        let (worst, at) = gradient_check(&model.params, &loss, 1e-5, 1e-6, Some(&only));
        assert!(worst < 1e-4, "relative error {worst} at {at}");
    }

    #[test]
    fn checkpoint_rebuild_predicts_identically() {
        let doc = moonbeam_doc();
        let model = tiny_model();
        let ex = model.prepare(&moonbeam_triple(&doc), &doc, &resources()).unwrap();
        let rebuilt = Model::from_params(
            model.config.clone(),
            model.encoder.clone(),
            model.vocab.clone(),
            model.params.clone(),
        )
        .unwrap();
        assert_eq!(model.predict(&ex).unwrap(), rebuilt.predict(&ex).unwrap());
    }

    #[test]
    fn variants_all_run() {
        let doc = moonbeam_doc();
        for v in [AttentionVariant::Syntax, AttentionVariant::Dot, AttentionVariant::Mean] {
            let (mut m, e) = tiny_config();
            m.attention_variant = v;
            let model = Model::new(m, e, Vocab::bundled(), 3).unwrap();
            let ex = model.prepare(&moonbeam_triple(&doc), &doc, &resources()).unwrap();
            assert!(model.predict(&ex).unwrap().f_hat.is_finite());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn knowledge_order_is_irrelevant(seed in 0u64..10_000, perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
            let (m, e) = tiny_config();
            let model = Model::new(m, e, Vocab::bundled(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::Rng;
            let k: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let s: Vec<Vec<f64>> = (0..2).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let run = |order: &[usize]| {
                let mut g = Graph::new(&model.params);
                let kr: Vec<&[f64]> = order.iter().map(|&i| k[i].as_slice()).collect();
                let mk = g.constant(rows(&kr));
                let vm = g.constant(Tensor::row_vector(s[0].clone()));
                let vp = g.constant(Tensor::row_vector(s[1].clone()));
                let (fk, _) = model.knowledge_score(&mut g, vm, vp, mk, &mut Dropout::inference()).unwrap();
                let fsk = model.syntax_knowledge_score(&mut g, mk, Some(vm), Some(vp), &mut Dropout::inference()).unwrap();
                (g.value(fk).item(), g.value(fsk).item())
            };
            let a = run(&[0, 1, 2]);
            let b = run(&perm);
            prop_assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
        }

        #[test]
        fn softmaxes_are_distributions(seed in 0u64..10_000) {
            let (m, e) = tiny_config();
            let model = Model::new(m, e, Vocab::bundled(), seed).unwrap();
            let doc = moonbeam_doc();
            let ex = model.prepare(&moonbeam_triple(&doc), &doc, &resources()).unwrap();
            let s = model.predict(&ex).unwrap();
            let total: f64 = s.knowledge.iter().map(|k| k.1).sum();
            prop_assert!(s.knowledge.iter().all(|k| k.1 >= 0.0));
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(&s.f_hat));
        }
    }
}
