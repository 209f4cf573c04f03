//! Autoregressive linear-softmax policy with exact gradients.
//!
//! At each step the next-token distribution is `softmax(Wᵀ f / T)` where `f`
//! is a sparse feature vector built from the prompt and the generated prefix:
//!
//! | block        | size        | content                                           |
//! |--------------|-------------|---------------------------------------------------|
//! | bias         | 1           | constant 1                                        |
//! | previous     | V + 1       | one-hot of the previous token, or the begin marker |
//! | stack        | 6           | one-hot of the innermost open tag (or none)       |
//! | position     | 1           | `min(t / horizon, 1)`                             |
//! | prompt       | V           | presence of each vocabulary token in the prompt   |
//! | slot         | 6 × 16      | stack state × index inside the current block       |
//! | query        | 6 × 4 × 80  | stack state × early block index × queried value    |
//!
//! The query block one-hot encodes the rule named by the prompt's question
//! together with the tens and ones digit of the cell it refers to, read back
//! from the serialized scene. It is what lets a linear policy compute answers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Lexicon, Query};
use crate::error::{Error, Result};
use crate::grammar::parse_tagged;
use crate::grpo::{GrpoConfig, LogProbGradient};
use crate::vocab::{TagKind, TokenClass, TokenId, Vocab};

/// Distinct block indices told apart by the slot features.
pub const BLOCK_SLOTS: usize = 16;
/// Block indices that see the query features.
pub const QUERY_SLOTS: usize = 4;
/// Stack states: none plus one per tag.
pub const STACK_STATES: usize = 6;
/// Query codes: rule × tens digit, then rule × ones digit.
pub const QUERY_CODES: usize = 80;
/// Default length normalizer of the position feature.
pub const DEFAULT_HORIZON: usize = 64;

/// Offsets of the feature blocks for a vocabulary of size `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub vocab_size: usize,
}

impl FeatureLayout {
    pub const BIAS: usize = 0;

    /// `None` is the begin marker.
    pub fn prev(&self, token: Option<TokenId>) -> usize {
        1 + token.map_or(self.vocab_size, TokenId::index)
    }

    pub fn stack(&self, state: usize) -> usize {
        2 + self.vocab_size + state
    }

    pub fn position(&self) -> usize {
        self.stack(STACK_STATES)
    }

    pub fn prompt(&self, token: TokenId) -> usize {
        self.position() + 1 + token.index()
    }

    pub fn slot(&self, state: usize, index: usize) -> usize {
        self.position() + 1 + self.vocab_size + state * BLOCK_SLOTS + index
    }

    pub fn query(&self, state: usize, index: usize, code: usize) -> usize {
        self.slot(STACK_STATES, 0) + (state * QUERY_SLOTS + index) * QUERY_CODES + code
    }

    pub fn dim(&self) -> usize {
        self.query(STACK_STATES, 0, 0)
    }
}

/// Stack-state index of the innermost open tag.
pub fn stack_state(top: Option<TagKind>) -> usize {
    top.map_or(0, |t| 1 + t.ordinal())
}

/// Sparse feature vector: sorted `(index, value)` pairs, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeatures {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl ContextFeatures {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            out[i] = x;
        }
        out
    }
}

/// Prompt-derived inputs shared by every step of a response.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    presence: Vec<TokenId>,
    query: Option<Query>,
}

impl PromptContext {
    pub fn query(&self) -> Option<Query> {
        self.query
    }
}

/// Decoder state mirroring what [`parse_tagged`] reports for the prefix.
#[derive(Debug, Clone, Default)]
struct DecodeState {
    prev: Option<TokenId>,
    stack: Vec<(TagKind, usize)>,
    /// Position after the last closer that emptied the stack.
    anchor: usize,
    t: usize,
}

impl DecodeState {
    fn advance(&mut self, token: TokenId, class: TokenClass) {
        match class {
            TokenClass::Open(tag) => self.stack.push((tag, self.t)),
            TokenClass::Close(tag) => {
                if let Some(pos) = self.stack.iter().rposition(|&(t, _)| t == tag) {
                    self.stack.truncate(pos);
                    if self.stack.is_empty() {
                        self.anchor = self.t + 1;
                    }
                }
            }
            _ => {}
        }
        self.prev = Some(token);
        self.t += 1;
    }

    fn top(&self) -> Option<TagKind> {
        self.stack.last().map(|&(t, _)| t)
    }

    fn block_index(&self) -> usize {
        match self.stack.last() {
            Some(&(_, open)) => self.t - open - 1,
            None => self.t - self.anchor,
        }
    }
}

/// Strengths of the hand-set initial policy.
///
/// Training starts from these weights rather than from zero: a uniform
/// policy over this vocabulary essentially never emits a well-formed tagged
/// response, so the group advantages would all be zero. The prior plays the
/// part of an instruction-following base model. It knows that tags named in
/// the prompt are worth emitting, how to close what it opened, and roughly
/// what each block kind contains, but not the order of blocks, which blocks
/// a strategy needs, or how to transform the queried value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Opening a tag that appears in the prompt.
    pub tag_copy: f64,
    /// Closing the innermost open tag.
    pub close_match: f64,
    /// Extra push to close once a block has its usual length.
    pub close_ramp: f64,
    /// Penalty on mismatched closers, self-nesting, and ending inside a block
    /// or before anything was generated.
    pub forbid: f64,
    /// Penalty on content tokens outside every block.
    pub top_content: f64,
    /// Ending the response outside every block.
    pub top_end: f64,
    /// Expected token class at each index of box, parse and answer blocks.
    pub syntax: f64,
    /// Word tokens inside think and crucial blocks.
    pub words: f64,
    /// Copying the queried cell's digits into an answer block.
    pub copy: f64,
    /// Usual block order: which opener follows which closer.
    pub order: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            tag_copy: 3.0,
            close_match: 1.0,
            close_ramp: 3.0,
            forbid: 8.0,
            top_content: 4.0,
            top_end: 2.0,
            syntax: 5.0,
            words: 1.5,
            copy: 2.0,
            order: 3.0,
        }
    }
}

/// Weight matrix of shape `feature_dim × vocab_size`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct PolicyParams {
    feature_dim: usize,
    vocab_size: usize,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    feature_dim: usize,
    vocab_size: usize,
    weights: Vec<Vec<f64>>,
}

impl From<PolicyParams> for ParamsRepr {
    fn from(p: PolicyParams) -> Self {
        ParamsRepr {
            feature_dim: p.feature_dim,
            vocab_size: p.vocab_size,
            weights: p.weights.chunks(p.vocab_size).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl TryFrom<ParamsRepr> for PolicyParams {
    type Error = String;

    fn try_from(r: ParamsRepr) -> std::result::Result<Self, String> {
        if r.feature_dim == 0 || r.vocab_size == 0 {
            return Err("feature_dim and vocab_size must be positive".into());
        }
        if r.weights.len() != r.feature_dim || r.weights.iter().any(|row| row.len() != r.vocab_size) {
            return Err(format!("weights are not a {}x{} matrix", r.feature_dim, r.vocab_size));
        }
        let weights = r.weights.concat();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err("weights contain non-finite entries".into());
        }
        Ok(PolicyParams { feature_dim: r.feature_dim, vocab_size: r.vocab_size, weights })
    }
}

impl PolicyParams {
    pub fn zeros(feature_dim: usize, vocab_size: usize) -> PolicyParams {
        PolicyParams { feature_dim, vocab_size, weights: vec![0.0; feature_dim * vocab_size] }
    }

    pub fn from_flat(feature_dim: usize, vocab_size: usize, weights: Vec<f64>) -> Result<PolicyParams> {
        if weights.len() != feature_dim * vocab_size {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a {feature_dim}x{vocab_size} matrix",
                weights.len()
            )));
        }
        Ok(PolicyParams { feature_dim, vocab_size, weights })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn get(&self, feature: usize, token: usize) -> f64 {
        self.weights[feature * self.vocab_size + token]
    }

    pub fn set(&mut self, feature: usize, token: usize, value: f64) {
        self.weights[feature * self.vocab_size + token] = value;
    }

    fn add(&mut self, feature: usize, token: TokenId, delta: f64) {
        self.weights[feature * self.vocab_size + token.index()] += delta;
    }

    fn row(&self, feature: usize) -> &[f64] {
        &self.weights[feature * self.vocab_size..(feature + 1) * self.vocab_size]
    }

    /// `self += scale · delta`.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) -> Result<()> {
        if delta.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "update of length {} for {} weights",
                delta.len(),
                self.weights.len()
            )));
        }
        for (w, d) in self.weights.iter_mut().zip(delta) {
            *w += scale * d;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

/// Feature extractor and decoding rules; parameters live in [`PolicyParams`].
#[derive(Debug, Clone)]
pub struct PolicyModel {
    vocab: Vocab,
    lexicon: Lexicon,
    classes: Vec<TokenClass>,
    end: TokenId,
    layout: FeatureLayout,
    horizon: usize,
}

impl PolicyModel {
    pub fn new(vocab: Vocab, horizon: usize) -> Result<PolicyModel> {
        if horizon == 0 {
            return Err(Error::InvalidConfig("position horizon must be positive".into()));
        }
        let lexicon = Lexicon::new(&vocab)?;
        let end = vocab
            .end_marker()
            .ok_or_else(|| Error::InvalidVocab("no end-of-response marker".into()))?;
        let classes = vocab.ids().map(|t| vocab.class(t)).collect();
        let layout = FeatureLayout { vocab_size: vocab.len() };
        Ok(PolicyModel { vocab, lexicon, classes, end, layout, horizon })
    }

    pub fn canonical() -> PolicyModel {
        PolicyModel::new(Vocab::canonical(), DEFAULT_HORIZON).expect("canonical vocabulary is complete")
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn feature_dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn end_marker(&self) -> TokenId {
        self.end
    }

    pub fn zero_params(&self) -> PolicyParams {
        PolicyParams::zeros(self.feature_dim(), self.vocab.len())
    }

    pub fn check_params(&self, params: &PolicyParams) -> Result<()> {
        if params.feature_dim != self.feature_dim() || params.vocab_size != self.vocab.len() {
            return Err(Error::ShapeMismatch(format!(
                "params are {}x{}, model expects {}x{}",
                params.feature_dim,
                params.vocab_size,
                self.feature_dim(),
                self.vocab.len()
            )));
        }
        Ok(())
    }

    pub fn prompt_context(&self, prompt: &[TokenId]) -> PromptContext {
        let mut presence = prompt.to_vec();
        presence.sort_unstable();
        presence.dedup();
        PromptContext { presence, query: self.lexicon.read_query(&self.vocab, prompt) }
    }

    fn assemble(&self, ctx: &PromptContext, top: Option<TagKind>, index: usize, prev: Option<TokenId>, t: usize) -> ContextFeatures {
        let l = &self.layout;
        let state = stack_state(top);
        let mut entries = Vec::with_capacity(8 + ctx.presence.len());
        entries.push((FeatureLayout::BIAS, 1.0));
        entries.push((l.prev(prev), 1.0));
        entries.push((l.stack(state), 1.0));
        let pos = (t as f64 / self.horizon as f64).min(1.0);
        if pos > 0.0 {
            entries.push((l.position(), pos));
        }
        entries.extend(ctx.presence.iter().map(|&tok| (l.prompt(tok), 1.0)));
        entries.push((l.slot(state, index.min(BLOCK_SLOTS - 1)), 1.0));
        if let (Some(q), true) = (ctx.query, index < QUERY_SLOTS) {
            for code in query_codes(q) {
                entries.push((l.query(state, index, code), 1.0));
            }
        }
        ContextFeatures { dim: l.dim(), entries }
    }

    fn features_at(&self, ctx: &PromptContext, state: &DecodeState) -> ContextFeatures {
        self.assemble(ctx, state.top(), state.block_index(), state.prev, state.t)
    }

    /// Features for predicting the token after `prefix`. The tag-stack state
    /// comes from [`parse_tagged`] on the prefix.
    pub fn features(&self, prompt: &[TokenId], prefix: &[TokenId]) -> ContextFeatures {
        let ctx = self.prompt_context(prompt);
        let parsed = parse_tagged(prefix, &self.vocab);
        let t = prefix.len();
        let top = parsed.open_top(&self.vocab);
        let index = match parsed.open_at_end.last() {
            Some(&open) => t - open - 1,
            None => parsed.blocks.iter().map(|b| b.close + 1).max().map_or(t, |anchor| t - anchor),
        };
        self.assemble(&ctx, top, index, prefix.last().copied(), t)
    }

    /// Features of every step of `response`, computed incrementally.
    pub fn response_features(&self, ctx: &PromptContext, response: &[TokenId]) -> Vec<ContextFeatures> {
        let mut state = DecodeState::default();
        let mut out = Vec::with_capacity(response.len());
        for &tok in response {
            out.push(self.features_at(ctx, &state));
            state.advance(tok, self.classes[tok.index()]);
        }
        out
    }

    fn logits(&self, params: &PolicyParams, feats: &ContextFeatures, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(j, x) in &feats.entries {
            for (o, w) in out.iter_mut().zip(params.row(j)) {
                *o += x * w;
            }
        }
    }

    /// Turn logits into probabilities in place; returns `ln Σ exp(z - max)`
    /// and the max so callers can form exact log-probabilities.
    fn softmax_in_place(z: &mut [f64], temperature: f64) -> (f64, f64) {
        z.iter_mut().for_each(|v| *v /= temperature);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        z.iter_mut().for_each(|v| *v /= sum);
        (max, sum.ln())
    }

    /// `softmax(Wᵀ f / T)`.
    pub fn step_distribution(&self, params: &PolicyParams, feats: &ContextFeatures, temperature: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.vocab.len()];
        self.logits(params, feats, &mut p);
        Self::softmax_in_place(&mut p, temperature);
        p
    }

    /// Log-probability of `token` and the full distribution.
    fn step(&self, params: &PolicyParams, feats: &ContextFeatures, temperature: f64, buf: &mut [f64], token: TokenId) -> f64 {
        self.logits(params, feats, buf);
        let z = buf[token.index()] / temperature;
        let (max, log_sum) = Self::softmax_in_place(buf, temperature);
        z - max - log_sum
    }

    /// Sample until the end marker (kept in the response) or
    /// `config.max_response_len` tokens.
    pub fn sample_response<R: Rng + ?Sized>(
        &self,
        params: &PolicyParams,
        prompt: &[TokenId],
        config: &GrpoConfig,
        rng: &mut R,
    ) -> (Vec<TokenId>, Vec<f64>) {
        let ctx = self.prompt_context(prompt);
        let mut state = DecodeState::default();
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        let mut z = vec![0.0; self.vocab.len()];
        while tokens.len() < config.max_response_len {
            let feats = self.features_at(&ctx, &state);
            self.logits(params, &feats, &mut z);
            let (max, log_sum) = Self::softmax_in_place(&mut z, config.temperature);
            let k = sample_index(&z, rng.gen::<f64>());
            let tok = TokenId(k as u32);
            // Recompute from logits rather than ln(p) to keep full precision.
            let mut logit = 0.0;
            for &(j, x) in &feats.entries {
                logit += x * params.get(j, k);
            }
            logps.push(logit / config.temperature - max - log_sum);
            tokens.push(tok);
            state.advance(tok, self.classes[k]);
            if tok == self.end {
                break;
            }
        }
        (tokens, logps)
    }

    /// Arg-max decoding; ties go to the lowest token id.
    pub fn greedy_response(&self, params: &PolicyParams, prompt: &[TokenId], max_len: usize) -> Vec<TokenId> {
        let ctx = self.prompt_context(prompt);
        let mut state = DecodeState::default();
        let mut tokens = Vec::new();
        let mut z = vec![0.0; self.vocab.len()];
        while tokens.len() < max_len {
            let feats = self.features_at(&ctx, &state);
            self.logits(params, &feats, &mut z);
            let mut best = 0;
            for k in 1..z.len() {
                if z[k] > z[best] {
                    best = k;
                }
            }
            let tok = TokenId(best as u32);
            tokens.push(tok);
            state.advance(tok, self.classes[best]);
            if tok == self.end {
                break;
            }
        }
        tokens
    }

    /// Per-token log-probabilities of `response` given its precomputed features.
    pub fn token_logprobs(
        &self,
        params: &PolicyParams,
        feats: &[ContextFeatures],
        response: &[TokenId],
        temperature: f64,
    ) -> Vec<f64> {
        let mut buf = vec![0.0; self.vocab.len()];
        feats
            .iter()
            .zip(response)
            .map(|(f, &tok)| self.step(params, f, temperature, &mut buf, tok))
            .collect()
    }

    /// `Σ_t log p(y_t | prompt, y_<t)` at the given sampling temperature.
    pub fn sequence_logprob(&self, params: &PolicyParams, prompt: &[TokenId], response: &[TokenId], temperature: f64) -> f64 {
        let feats = self.response_features(&self.prompt_context(prompt), response);
        self.token_logprobs(params, &feats, response, temperature).iter().sum()
    }

    /// Add `scale · ∂ log π(response) / ∂W` into the flat buffer `out`.
    pub fn accumulate_logprob_gradient(
        &self,
        params: &PolicyParams,
        feats: &[ContextFeatures],
        response: &[TokenId],
        temperature: f64,
        scale: f64,
        out: &mut [f64],
    ) {
        let v = self.vocab.len();
        let mut p = vec![0.0; v];
        for (f, &tok) in feats.iter().zip(response) {
            self.logits(params, f, &mut p);
            Self::softmax_in_place(&mut p, temperature);
            // (one_hot - p) / T, folded with the caller's scale.
            p.iter_mut().for_each(|q| *q *= -scale / temperature);
            p[tok.index()] += scale / temperature;
            for &(j, x) in &f.entries {
                for (o, g) in out[j * v..(j + 1) * v].iter_mut().zip(&p) {
                    *o += x * g;
                }
            }
        }
    }

    /// `∂ sequence_logprob / ∂W`, same shape as `params`.
    pub fn logprob_gradient(&self, params: &PolicyParams, prompt: &[TokenId], response: &[TokenId], temperature: f64) -> PolicyParams {
        let feats = self.response_features(&self.prompt_context(prompt), response);
        let mut grad = PolicyParams::zeros(params.feature_dim, params.vocab_size);
        self.accumulate_logprob_gradient(params, &feats, response, temperature, 1.0, &mut grad.weights);
        grad
    }

    /// The hand-set initial policy described on [`PriorConfig`].
    pub fn initial_params(&self, prior: &PriorConfig) -> PolicyParams {
        let l = self.layout;
        let mut w = self.zero_params();
        let none = stack_state(None);
        let end = self.end;

        let ids: Vec<(TokenId, TokenClass)> = self.vocab.ids().map(|t| (t, self.vocab.class(t))).collect();
        let of = |pred: &dyn Fn(TokenClass) -> bool| -> Vec<TokenId> {
            ids.iter().filter(|&&(_, c)| pred(c)).map(|&(t, _)| t).collect()
        };
        let words = of(&|c| c == TokenClass::Word);
        let digits = of(&|c| matches!(c, TokenClass::Digit(_)));
        let content = of(&|c| c.is_content());
        let tok = |s: &str| self.vocab.id(s).expect("lexicon checked the punctuation");
        let (lp, rp, comma) = (tok("("), tok(")"), tok(","));
        let open = |t: TagKind| self.vocab.open_tag(t).expect("vocabulary validated tag pairs");
        let close = |t: TagKind| self.vocab.close_tag(t).expect("vocabulary validated tag pairs");

        // Ending right away, closing nothing, content outside blocks.
        w.add(l.prev(None), end, -prior.forbid);
        w.add(l.stack(none), end, prior.top_end);
        for &c in &content {
            w.add(l.stack(none), c, -prior.top_content);
        }
        for tag in TagKind::ALL {
            w.add(l.prompt(open(tag)), open(tag), prior.tag_copy);
            w.add(l.stack(none), close(tag), -prior.forbid);

            let s = stack_state(Some(tag));
            w.add(l.stack(s), end, -prior.forbid);
            w.add(l.stack(s), open(tag), -prior.forbid);
            for other in TagKind::ALL {
                let delta = if other == tag { prior.close_match } else { -prior.forbid };
                w.add(l.stack(s), close(other), delta);
            }
        }

        // Only a box may open inside another block, and only inside think.
        for tag in TagKind::ALL {
            for inner in TagKind::ALL {
                if inner != tag && !(tag == TagKind::Think && inner == TagKind::Box) {
                    w.add(l.stack(stack_state(Some(tag))), open(inner), -prior.forbid);
                }
            }
        }
        for tag in [TagKind::Answer, TagKind::Crucial, TagKind::Box] {
            w.add(l.prev(None), open(tag), -prior.forbid);
        }
        for tag in TagKind::ALL {
            w.add(l.prev(Some(close(TagKind::Answer))), open(tag), -prior.order);
        }
        w.add(l.prev(Some(close(TagKind::Answer))), end, prior.order);
        w.add(l.prev(Some(close(TagKind::Think))), open(TagKind::Answer), prior.order);
        w.add(l.prev(Some(close(TagKind::Think))), open(TagKind::Think), -prior.forbid);
        w.add(l.prev(Some(close(TagKind::Think))), open(TagKind::Parse), -prior.forbid);
        w.add(l.prev(Some(close(TagKind::Parse))), open(TagKind::Think), prior.order);
        w.add(l.prev(Some(close(TagKind::Crucial))), open(TagKind::Answer), 2.0 * prior.order);
        w.add(l.prompt(open(TagKind::Crucial)), open(TagKind::Answer), -prior.order);

        let close_after = |w: &mut PolicyParams, tag: TagKind, min_len: usize, ramp: f64| {
            let s = stack_state(Some(tag));
            for k in 0..BLOCK_SLOTS {
                let delta = if k < min_len { -prior.forbid } else { ramp };
                w.add(l.slot(s, k), close(tag), delta);
            }
        };

        for tag in [TagKind::Think, TagKind::Crucial] {
            let s = stack_state(Some(tag));
            for k in 0..BLOCK_SLOTS {
                for &t in &words {
                    w.add(l.slot(s, k), t, prior.words);
                }
            }
        }
        close_after(&mut w, TagKind::Think, 1, prior.close_ramp);
        close_after(&mut w, TagKind::Crucial, 3, prior.close_ramp);

        // ( d , d ) , ( d , d )
        let box_state = stack_state(Some(TagKind::Box));
        let box_pattern: [&[TokenId]; 11] =
            [&[lp], &digits, &[comma], &digits, &[rp], &[comma], &[lp], &digits, &[comma], &digits, &[rp]];
        for (k, expected) in box_pattern.iter().enumerate() {
            for &t in expected.iter() {
                w.add(l.slot(box_state, k), t, prior.syntax);
            }
        }
        close_after(&mut w, TagKind::Box, box_pattern.len(), prior.forbid);

        // word ( arg )
        let parse_state = stack_state(Some(TagKind::Parse));
        let args: Vec<TokenId> = words.iter().chain(&digits).copied().collect();
        let parse_pattern: [&[TokenId]; 4] = [&words, &[lp], &args, &[rp]];
        for (k, expected) in parse_pattern.iter().enumerate() {
            for &t in expected.iter() {
                w.add(l.slot(parse_state, k), t, prior.syntax);
            }
        }
        close_after(&mut w, TagKind::Parse, parse_pattern.len(), prior.forbid);

        let answer_state = stack_state(Some(TagKind::Answer));
        for k in 0..3 {
            for &d in &digits {
                w.add(l.slot(answer_state, k), d, prior.syntax);
            }
        }
        close_after(&mut w, TagKind::Answer, 1, prior.close_ramp);
        w.add(l.slot(answer_state, 2), close(TagKind::Answer), prior.syntax);
        for rule in 0..4 {
            for d in 0..10u8 {
                let digit = self.vocab.digit(d).expect("lexicon checked the digits");
                w.add(l.query(answer_state, 0, rule * 10 + d as usize), digit, prior.copy);
                w.add(l.query(answer_state, 1, 40 + rule * 10 + d as usize), digit, prior.copy);
            }
        }
        w
    }
}

/// Rule × tens and rule × ones codes of a query.
pub fn query_codes(q: Query) -> [usize; 2] {
    let r = q.rule.ordinal();
    let v = q.value as usize;
    [r * 10 + v / 10 % 10, 40 + r * 10 + v % 10]
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
fn sample_index(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return k;
        }
    }
    // Rounding left the total just under u: take the last token with mass.
    p.iter().rposition(|&q| q > 0.0).unwrap_or(p.len() - 1)
}

/// Log-probability gradients of one rollout group, recomputed on demand
/// from cached step features.
pub struct GroupGradients<'a> {
    pub model: &'a PolicyModel,
    pub params: &'a PolicyParams,
    pub features: &'a [Vec<ContextFeatures>],
    pub responses: &'a [Vec<TokenId>],
    pub temperature: f64,
}

impl LogProbGradient for GroupGradients<'_> {
    fn dim(&self) -> usize {
        self.params.weights.len()
    }

    fn accumulate(&self, response: usize, scale: f64, out: &mut [f64]) {
        self.model.accumulate_logprob_gradient(
            self.params,
            &self.features[response],
            &self.responses[response],
            self.temperature,
            scale,
            out,
        );
    }
}
