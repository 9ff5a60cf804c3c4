//! Syntax-related phrases and span vectors.
//!
//! A span vector pools the span's sub-token embeddings with attention that
//! decays by `2^-l` in the dependency distance `l` to the span head, cut off
//! beyond the window `L`, and concatenates the pooled vector with the
//! boundary embeddings and a span-length embedding.

use std::collections::VecDeque;

use rand::Rng;

use crate::config::{AttentionVariant, EncoderConfig};
use crate::corpus::{ParsedDocument, Pos, Span, SpanKind};
use crate::encoder::EncodedText;
use crate::error::{Error, Result};
use crate::nn::{Dropout, Ffn};
use crate::tape::{Graph, ParamId, Params, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntaxPhraseSet {
    pub for_span: Span,
    pub phrases: Vec<Span>,
}

fn is_content(pos: Pos) -> bool {
    matches!(pos, Pos::Verb | Pos::Adj | Pos::Noun | Pos::Propn)
}

/// The head's governor, climbing past auxiliaries ("it is loud" governs
/// "it" through "is" up to the clause verb).
fn effective_governor(doc: &ParsedDocument, head: usize) -> Option<usize> {
    let mut g = doc.tokens[head].dep_head?;
    let mut steps = 0;
    while doc.tokens[g].pos == Pos::Aux && steps < doc.len() {
        match doc.tokens[g].dep_head {
            Some(up) => g = up,
            None => break,
        }
        steps += 1;
    }
    Some(g)
}

/// Single-word phrases one dependency arc from the span: the verb or
/// adjective governing its head, plus verbs, adjectives and noun heads that
/// the head or that governor directly govern. Span tokens are skipped and
/// results are in document order.
pub fn extract_syntax_phrases(span: &Span, doc: &ParsedDocument) -> SyntaxPhraseSet {
    let children = doc.children();
    let mut picked = std::collections::BTreeSet::new();
    let take = |i: usize, picked: &mut std::collections::BTreeSet<usize>| {
        let t = &doc.tokens[i];
        if !span.contains(i) && is_content(t.pos) && doc.sentence_of(i) == doc.sentence_of(span.head) {
            picked.insert(i);
        }
    };
    for &c in &children[span.head] {
        take(c, &mut picked);
    }
    if let Some(g) = effective_governor(doc, span.head) {
        if matches!(doc.tokens[g].pos, Pos::Verb | Pos::Adj) {
            take(g, &mut picked);
        }
        for &c in &children[g] {
            take(c, &mut picked);
        }
    }
    let phrases = picked
        .into_iter()
        .map(|i| Span {
            doc_id: doc.doc_id.clone(),
            start: i,
            end: i + 1,
            head: i,
            kind: SpanKind::SyntaxPhrase,
        })
        .collect();
    SyntaxPhraseSet {
        for_span: span.clone(),
        phrases,
    }
}

/// Distance of every span token to the head over dependency arcs with both
/// ends inside the span; `None` when unreachable.
pub fn head_distances(span: &Span, doc: &ParsedDocument) -> Vec<Option<usize>> {
    let n = span.len();
    let mut adj = vec![Vec::new(); n];
    for i in span.start..span.end {
        if let Some(h) = doc.tokens[i].dep_head {
            if span.contains(h) {
                adj[i - span.start].push(h - span.start);
                adj[h - span.start].push(i - span.start);
            }
        }
    }
    let mut dist = vec![None; n];
    let root = span.head - span.start;
    dist[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or(0);
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Sub-token layout of one span inside an encoded text.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanInput {
    pub sub_start: usize,
    pub sub_end: usize,
    /// Head word's first sub-token, relative to `sub_start`.
    pub head: usize,
    /// Per-sub-token distance to the head, inherited from its word.
    pub distances: Vec<Option<usize>>,
    pub words: usize,
}

impl SpanInput {
    /// `word_offset` is the index, in `enc`, of the document's first word.
    pub fn new(span: &Span, doc: &ParsedDocument, enc: &EncodedText, word_offset: usize) -> Result<SpanInput> {
        let last = word_offset + span.end - 1;
        if last >= enc.word_range.len() {
            return Err(Error::Shape(format!(
                "span [{}, {}) of `{}` not covered by {} encoded words",
                span.start,
                span.end,
                span.doc_id,
                enc.word_range.len()
            )));
        }
        let word_dist = head_distances(span, doc);
        let sub_start = enc.word_range[word_offset + span.start].0;
        let sub_end = enc.word_range[last].1;
        let mut distances = Vec::with_capacity(sub_end - sub_start);
        for (k, w) in (span.start..span.end).enumerate() {
            let (s, e) = enc.word_range[word_offset + w];
            distances.extend(std::iter::repeat_n(word_dist[k], e - s));
        }
        Ok(SpanInput {
            sub_start,
            sub_end,
            head: enc.word_range[word_offset + span.head].0 - sub_start,
            distances,
            words: span.len(),
        })
    }

    /// A span covering a whole encoded text, as used for knowledge phrases.
    pub fn whole(span: &Span, doc: &ParsedDocument, enc: &EncodedText) -> Result<SpanInput> {
        SpanInput::new(span, doc, enc, 0)
    }

    pub fn len(&self) -> usize {
        self.sub_end - self.sub_start
    }

    pub fn is_empty(&self) -> bool {
        self.sub_end == self.sub_start
    }

    /// Attention offsets `-l ln 2`, or `None` beyond the window.
    pub fn offsets(&self, window: usize) -> Vec<Option<f64>> {
        self.distances
            .iter()
            .map(|d| d.filter(|&l| l <= window).map(|l| -(l as f64) * std::f64::consts::LN_2))
            .collect()
    }
}

/// Parameters of the span encoder.
#[derive(Clone, Debug)]
pub struct SpanEncoder {
    pub ffn1: Ffn,
    pub ffn2: Ffn,
    pub length_table: ParamId,
    pub variant: AttentionVariant,
    pub window: usize,
    pub buckets: Vec<usize>,
}

pub struct SpanOutput {
    pub vector: Var,
    /// Attention weights `b` over the span's sub-tokens.
    pub weights: Var,
}

impl SpanEncoder {
    pub fn new<R: Rng>(
        params: &mut Params,
        config: &EncoderConfig,
        hidden: usize,
        variant: AttentionVariant,
        rng: &mut R,
    ) -> SpanEncoder {
        let d = config.embed_dim;
        let le = config.length_embed_dim;
        SpanEncoder {
            ffn1: Ffn::new(params, "ffn1", 3 * d, hidden, 1, rng),
            ffn2: Ffn::new(params, "ffn2", 3 * d + le, hidden, d, rng),
            length_table: params.add_uniform("length_buckets", config.length_buckets.len(), le, 0.1, rng),
            variant,
            window: config.attention_window,
            buckets: config.length_buckets.clone(),
        }
    }

    pub fn lookup(params: &Params, config: &EncoderConfig, variant: AttentionVariant) -> Option<SpanEncoder> {
        Some(SpanEncoder {
            ffn1: Ffn::lookup(params, "ffn1")?,
            ffn2: Ffn::lookup(params, "ffn2")?,
            length_table: params.id("length_buckets")?,
            variant,
            window: config.attention_window,
            buckets: config.length_buckets.clone(),
        })
    }

    fn bucket(&self, words: usize) -> usize {
        self.buckets.iter().rposition(|&lo| words >= lo).unwrap_or(0)
    }

    /// Attention weights over the span sub-tokens `xs`.
    pub fn attention(&self, g: &mut Graph<'_>, xs: Var, input: &SpanInput, dropout: &mut Dropout) -> Result<Var> {
        let k = input.len();
        let xh = g.row(xs, input.head)?;
        match self.variant {
            AttentionVariant::Syntax => {
                let xhb = g.broadcast_rows(xh, k)?;
                let prod = g.mul(xs, xhb)?;
                let feats = g.concat_cols(&[xs, xhb, prod])?;
                let f = self.ffn1.forward(g, feats, dropout)?;
                g.masked_softmax_col(f, &input.offsets(self.window), input.head)
            }
            AttentionVariant::Dot => {
                let d = g.shape(xs).1 as f64;
                let s = g.matmul_bt(xs, xh)?;
                let s = g.scale(s, 1.0 / d.sqrt());
                g.masked_softmax_col(s, &vec![Some(0.0); k], input.head)
            }
            AttentionVariant::Mean => {
                let z = g.constant(Tensor::zeros(k, 1));
                g.masked_softmax_col(z, &vec![Some(0.0); k], input.head)
            }
        }
    }

    /// Span vector (`1 × d`) from the embeddings `x` of the whole text.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, input: &SpanInput, dropout: &mut Dropout) -> Result<SpanOutput> {
        if input.is_empty() {
            return Err(Error::InvalidSpan("span covers no sub-tokens".into()));
        }
        let xs = g.slice_rows(x, input.sub_start, input.sub_end)?;
        let weights = self.attention(g, xs, input, dropout)?;
        let pooled = g.weighted_sum(weights, xs)?;
        let first = g.row(xs, 0)?;
        let last = g.row(xs, input.len() - 1)?;
        let phi = g.gather(self.length_table, vec![self.bucket(input.words)]);
        let feats = g.concat_cols(&[first, last, pooled, phi])?;
        let vector = self.ffn2.forward(g, feats, dropout)?;
        Ok(SpanOutput { vector, weights })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::test_support::{moonbeam_doc, sentence};
    use crate::encoder::{TextEncoder, Vocab};
    use crate::tape::gradient_check;

    fn texts(set: &SyntaxPhraseSet, doc: &ParsedDocument) -> Vec<String> {
        set.phrases.iter().map(|s| s.text(doc)).collect()
    }

    #[test]
    fn running_example_phrases() {
        let doc = moonbeam_doc();
        let m = Span::resolve(&doc, 2, 5, None, SpanKind::Mention).unwrap();
        assert_eq!(texts(&extract_syntax_phrases(&m, &doc), &doc), vec!["bought"]);
        let p = Span::resolve(&doc, 13, 14, None, SpanKind::Anaphor).unwrap();
        assert_eq!(texts(&extract_syntax_phrases(&p, &doc), &doc), vec!["like", "voice"]);
    }

    #[test]
    fn root_verb_span_gets_governed_nouns() {
        // My kids love this clock: love is ROOT, kids and clock hang off it
        let s = sentence(&[
            ("My", "my", "PRON", "O", 1, "poss"),
            ("kids", "kid", "NOUN", "O", 2, "nsubj"),
            ("love", "love", "VERB", "O", -1, "ROOT"),
            ("this", "this", "DET", "O", 4, "det"),
            ("clock", "clock", "NOUN", "O", 2, "dobj"),
        ]);
        let doc = ParsedDocument::from_sentences("r", "alarm", vec![s]).unwrap();
        let span = Span::resolve(&doc, 2, 3, None, SpanKind::Mention).unwrap();
        assert_eq!(texts(&extract_syntax_phrases(&span, &doc), &doc), vec!["kids", "clock"]);
    }

    #[test]
    fn distances_in_running_example() {
        let doc = moonbeam_doc();
        let m = Span::resolve(&doc, 2, 5, None, SpanKind::Mention).unwrap();
        assert_eq!(head_distances(&m, &doc), vec![Some(1), Some(1), Some(0)]);
    }

    fn setup(variant: AttentionVariant, window: usize) -> (Params, SpanEncoder, EncoderConfig) {
        let cfg = EncoderConfig {
            embed_dim: 4,
            length_embed_dim: 3,
            attention_window: window,
            ..EncoderConfig::default()
        };
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = SpanEncoder::new(&mut params, &cfg, 5, variant, &mut rng);
        (params, enc, cfg)
    }

    fn rand_x(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn plain_input(distances: Vec<Option<usize>>, head: usize) -> SpanInput {
        SpanInput {
            sub_start: 0,
            sub_end: distances.len(),
            head,
            words: distances.len(),
            distances,
        }
    }

    #[test]
    fn single_token_span_pools_itself() {
        for variant in [AttentionVariant::Syntax, AttentionVariant::Dot, AttentionVariant::Mean] {
            let (params, enc, _) = setup(variant, 2);
            let mut g = Graph::new(&params);
            let x = g.constant(rand_x(1, 4, 9));
            let out = enc
                .forward(&mut g, x, &plain_input(vec![Some(0)], 0), &mut Dropout::inference())
                .unwrap();
            assert_eq!(g.value(out.weights).data, vec![1.0]);
            assert_eq!(g.shape(out.vector), (1, 4));
        }
    }

    #[test]
    fn beyond_window_gets_zero_weight() {
        let (params, enc, _) = setup(AttentionVariant::Syntax, 2);
        let mut g = Graph::new(&params);
        let x = g.constant(rand_x(4, 4, 1));
        let input = plain_input(vec![Some(0), Some(1), Some(2), Some(3)], 0);
        let out = enc.forward(&mut g, x, &input, &mut Dropout::inference()).unwrap();
        let w = &g.value(out.weights).data;
        assert_eq!(w[3], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_everything_falls_back_to_head() {
        let (params, enc, _) = setup(AttentionVariant::Syntax, 1);
        let mut g = Graph::new(&params);
        let x = g.constant(rand_x(3, 4, 1));
        // head itself marked out of window: degenerate input
        let input = plain_input(vec![None, Some(5), None], 1);
        let out = enc.forward(&mut g, x, &input, &mut Dropout::inference()).unwrap();
        assert_eq!(g.value(out.weights).data, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn dot_attention_matches_hand_oracle() {
        let (params, enc, _) = setup(AttentionVariant::Dot, 2);
        // 3 sub-tokens of width 4, head at index 1
        let rows = [[1.0, 0.0, 2.0, 0.0], [0.5, 1.0, 0.0, 1.0], [0.0, -1.0, 1.0, 2.0]];
        let x = Tensor::from_vec(3, 4, rows.iter().flatten().copied().collect());
        // x·x_head = 0.5, 2.25, 1.0; divided by sqrt(4) = 2
        let s = [0.25_f64, 1.125, 0.5];
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        let want: Vec<f64> = s.iter().map(|v| v.exp() / z).collect();
        let mut g = Graph::new(&params);
        let xv = g.constant(x);
        let input = plain_input(vec![Some(1), Some(0), Some(9)], 1);
        let out = enc.forward(&mut g, xv, &input, &mut Dropout::inference()).unwrap();
        for (a, b) in g.value(out.weights).data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn uniform_embeddings_give_uniform_dot_weights() {
        let (params, enc, _) = setup(AttentionVariant::Dot, 2);
        let mut g = Graph::new(&params);
        let x = g.constant(Tensor::from_vec(3, 4, vec![0.3; 12]));
        let out = enc
            .forward(&mut g, x, &plain_input(vec![Some(0); 3], 0), &mut Dropout::inference())
            .unwrap();
        for w in &g.value(out.weights).data {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn subtokens_inherit_word_distance() {
        let doc = moonbeam_doc();
        let vocab = Vocab::bundled();
        let cfg = EncoderConfig::default();
        let te = TextEncoder {
            config: &cfg,
            vocab: &vocab,
            affect: None,
            frozen: None,
        };
        let enc = te.encode_document(&doc).unwrap();
        let m = Span::resolve(&doc, 2, 5, None, SpanKind::Mention).unwrap();
        let input = SpanInput::new(&m, &doc, &enc, 0).unwrap();
        // a | green | moon ##b ##e ##am
        assert_eq!(input.len(), 6);
        assert_eq!(input.head, 2);
        assert_eq!(
            input.distances,
            vec![Some(1), Some(1), Some(0), Some(0), Some(0), Some(0)]
        );
        assert_eq!(input.words, 3);
    }

    #[test]
    fn gradients_of_span_encoder() {
        let (params, enc, _) = setup(AttentionVariant::Syntax, 2);
        let x = rand_x(5, 4, 11);
        let input = plain_input(vec![Some(1), Some(2), Some(0), Some(1), Some(3)], 2);
        let loss = |p: &Params| {
            let mut g = Graph::new(p);
            let xv = g.constant(x.clone());
            let out = enc.forward(&mut g, xv, &input, &mut Dropout::inference()).unwrap();
            let s = g.sum_all(out.vector);
            let s = g.tanh(s);
            let mut grads = p.zero_grads();
            g.backward(s, 1.0, &mut grads);
            (g.value(s).item(), grads)
        };
        let (worst, at) = gradient_check(&params, &loss, 1e-5, 1e-6, None);
        assert!(worst < 1e-4, "relative error {worst} at {at}");
    }

    fn brute_distances(heads: &[Option<usize>], start: usize, end: usize, head: usize) -> Vec<Option<usize>> {
        // Floyd-Warshall over the span-restricted undirected arcs
        let n = end - start;
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for i in start..end {
            if let Some(h) = heads[i] {
                if h >= start && h < end {
                    d[i - start][h - start] = 1;
                    d[h - start][i - start] = 1;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        (0..n)
            .map(|i| (d[head - start][i] < inf).then_some(d[head - start][i]))
            .collect()
    }

    proptest! {
        #[test]
        fn bfs_matches_brute_force(parents in prop::collection::vec(0usize..100, 2..12), a in 0usize..12, b in 0usize..12) {
            let n = parents.len();
            // random tree: token i > 0 attaches to some earlier token, 0 is ROOT
            let heads: Vec<Option<usize>> = (0..n).map(|i| (i > 0).then(|| parents[i] % i)).collect();
            let (start, end) = { let (x, y) = (a % n, b % n); (x.min(y), x.max(y) + 1) };
            let rows: Vec<(String, i64)> = heads.iter().enumerate().map(|(i, h)| (format!("w{i}"), h.map(|h| h as i64).unwrap_or(-1))).collect();
            let rows: Vec<_> = rows.iter().map(|(w, h)| (w.as_str(), w.as_str(), "NOUN", "O", *h, "dep")).collect();
            let doc = ParsedDocument::from_sentences("p", "d", vec![sentence(&rows)]).unwrap();
            let span = Span::resolve(&doc, start, end, None, SpanKind::Mention).unwrap();
            prop_assert_eq!(head_distances(&span, &doc), brute_distances(&heads, start, end, span.head));
        }

        #[test]
        fn weights_normalized_and_windowed(
            dists in prop::collection::vec(prop::option::of(0usize..5), 1..8),
            seed in 0u64..1000,
            window in 1usize..4,
        ) {
            let (params, mut enc, _) = setup(AttentionVariant::Syntax, window);
            enc.window = window;
            let n = dists.len();
            let mut g = Graph::new(&params);
            let x = g.constant(rand_x(n, 4, seed));
            let out = enc.forward(&mut g, x, &plain_input(dists.clone(), 0), &mut Dropout::inference()).unwrap();
            let w = g.value(out.weights).data.clone();
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (wi, d) in w.iter().zip(&dists) {
                if d.is_none_or(|l| l > window) && dists.iter().any(|d| d.is_some_and(|l| l <= window)) {
                    prop_assert_eq!(*wi, 0.0);
                }
            }
        }

        #[test]
        fn closer_tokens_win_ties(l1 in 0usize..3, gap in 1usize..3, seed in 0u64..1000) {
            // identical embeddings give identical FFN scores
            let (params, enc, _) = setup(AttentionVariant::Syntax, 4);
            let row = rand_x(1, 4, seed).data;
            let x = Tensor::from_vec(2, 4, row.iter().chain(&row).copied().collect());
            let mut g = Graph::new(&params);
            let xv = g.constant(x);
            let input = plain_input(vec![Some(l1), Some(l1 + gap)], 0);
            let out = enc.forward(&mut g, xv, &input, &mut Dropout::inference()).unwrap();
            let w = &g.value(out.weights).data;
            prop_assert!(w[0] > w[1]);
            prop_assert!((w[0] / w[1] - 2f64.powi(gap as i32)).abs() < 1e-9);
        }
    }
}
