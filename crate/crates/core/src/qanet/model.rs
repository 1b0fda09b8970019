use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rerank_tensor::{Tape, Tensor, Var};

use super::params::{initialize, BlockLayout, Layout, SideLayout};
use super::{Encoded, ModelConfig, Pooling};
use crate::corpus::{Vocabulary, UNK_ID};
use crate::embeddings::WordVectors;
use crate::text::TokenSequence;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Question,
    Answer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout is active and its mask is drawn from `seed`.
    Train { seed: u64 },
}

/// One highway layer: `x + g ⊙ (H(x) − x)` with
/// `g = σ(x·W_g + b_g)` and `H(x) = relu(x·W_h + b_h)`.
pub fn highway(tape: &mut Tape, x: Var, gate_w: Var, gate_b: Var, transform_w: Var, transform_b: Var) -> Result<Var> {
    let g = tape.matmul(x, gate_w)?;
    let g = tape.add(g, gate_b)?;
    let g = tape.sigmoid(g);
    let h = tape.matmul(x, transform_w)?;
    let h = tape.add(h, transform_b)?;
    let h = tape.relu(h);
    let delta = tape.sub(h, x)?;
    let gated = tape.mul(g, delta)?;
    Ok(tape.add(x, gated)?)
}

fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("positive shape")
}

fn mask_column(mask: &[bool]) -> Tensor {
    let data = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![mask.len(), 1], data).expect("non-empty mask")
}

/// The trained goodness classifier: configuration, vocabulary and a flat
/// list of parameter tensors addressed through a [`Layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Qanet {
    config: ModelConfig,
    vocab: Vocabulary,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
    frozen_embedding: bool,
}

impl Qanet {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::new(&config, vocab.len());
        let params = initialize(&specs, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            config,
            vocab,
            layout,
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
            frozen_embedding: false,
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        tensors: Vec<(String, Tensor)>,
        frozen_embedding: bool,
    ) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::new(&config, vocab.len());
        if specs.len() != tensors.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (spec, (name, t)) in specs.into_iter().zip(tensors) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Data(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
            names.push(name);
            params.push(t.requires_grad(true));
        }
        Ok(Self {
            config,
            vocab,
            layout,
            names,
            params,
            frozen_embedding,
        })
    }

    /// Copies pretrained vectors into the embedding rows of known tokens.
    /// When `frozen`, training leaves every row except `<unk>` untouched.
    pub fn with_word_vectors(mut self, vectors: &WordVectors, frozen: bool) -> Result<Self> {
        if vectors.dim() != self.config.word_dim {
            return Err(Error::Config(format!(
                "word vectors have dimension {}, model expects {}",
                vectors.dim(),
                self.config.word_dim
            )));
        }
        let dim = self.config.word_dim;
        let table = self.params[self.layout.embedding].data_mut();
        for (id, token) in self.vocab.tokens().iter().enumerate() {
            if let Some(v) = vectors.get(token) {
                table[id * dim..(id + 1) * dim].copy_from_slice(v);
            }
        }
        self.frozen_embedding = frozen;
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn is_embedding_frozen(&self) -> bool {
        self.frozen_embedding
    }

    /// Records every parameter on `tape`; gradients are kept when
    /// `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.clone().requires_grad(trainable)))
            .collect()
    }

    fn side(&self, side: Side) -> &SideLayout {
        match side {
            Side::Question => &self.layout.question,
            Side::Answer => &self.layout.answer,
        }
    }

    /// Word lookup, highway layers, projection to `d_model` and positional
    /// encodings for one side.
    pub fn embed(&self, tape: &mut Tape, vars: &[Var], side: Side, input: &Encoded) -> Result<Var> {
        let layout = self.side(side);
        let mut x = tape.gather_rows(vars[self.layout.embedding], &input.ids)?;
        for h in &layout.highway {
            x = highway(
                tape,
                x,
                vars[h.gate_w],
                vars[h.gate_b],
                vars[h.transform_w],
                vars[h.transform_b],
            )?;
        }
        let mut x = tape.matmul(x, vars[layout.projection])?;
        if self.config.positional_encoding {
            let pe = tape.constant(positional_encoding(input.ids.len(), self.config.d_model));
            x = tape.add(x, pe)?;
        }
        Ok(x)
    }

    /// Convolution, self-attention and feed-forward sublayers, each
    /// computing `f(layernorm(x)) + x`. Rows where `mask` is false are
    /// zeroed before every convolution and never attended to.
    pub fn encoder_block(&self, tape: &mut Tape, vars: &[Var], block: &BlockLayout, x: Var, mask: &[bool]) -> Result<Var> {
        let padded = mask.iter().any(|m| !m);
        let mask_col = padded.then(|| tape.constant(mask_column(mask)));
        let mut x = x;
        for c in &block.convs {
            let mut h = tape.layernorm(x, vars[c.ln_gain], vars[c.ln_bias])?;
            if let Some(m) = mask_col {
                h = tape.mul(h, m)?;
            }
            let h = tape.conv1d(h, vars[c.kernel])?;
            let h = tape.add(h, vars[c.bias])?;
            let h = tape.relu(h);
            x = tape.add(h, x)?;
        }

        let a = &block.attention;
        let h = tape.layernorm(x, vars[a.ln_gain], vars[a.ln_bias])?;
        let q = tape.matmul(h, vars[a.wq])?;
        let k = tape.matmul(h, vars[a.wk])?;
        let v = tape.matmul(h, vars[a.wv])?;
        let n = mask.len();
        let keep: Vec<bool> = (0..n * n).map(|i| mask[i % n]).collect();
        let dh = self.config.d_model / self.config.num_heads;
        let mut heads = Vec::with_capacity(self.config.num_heads);
        for head in 0..self.config.num_heads {
            let (s, e) = (head * dh, (head + 1) * dh);
            let qh = tape.slice_cols(q, s, e)?;
            let kh = tape.slice_cols(k, s, e)?;
            let vh = tape.slice_cols(v, s, e)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let weights = tape.softmax_masked(scores, 1, Some(&keep))?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? };
        let out = tape.matmul(merged, vars[a.wo])?;
        x = tape.add(out, x)?;

        let f = &block.ffn;
        let h = tape.layernorm(x, vars[f.ln_gain], vars[f.ln_bias])?;
        let h = tape.matmul(h, vars[f.w1])?;
        let h = tape.add(h, vars[f.b1])?;
        let h = tape.relu(h);
        let h = tape.matmul(h, vars[f.w2])?;
        let h = tape.add(h, vars[f.b2])?;
        Ok(tape.add(h, x)?)
    }

    /// Trilinear similarity `S[i,j] = w_a·a_i + w_q·q_j + w_m·(a_i ⊙ q_j)`,
    /// then `a2q = S̄·Q` and `q2a = S̄·S̄̄ᵀ·A`, where `S̄` normalizes over
    /// question positions and `S̄̄` over answer positions.
    pub fn aq_attention(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        a: Var,
        q: Var,
        a_mask: &[bool],
        q_mask: &[bool],
    ) -> Result<(Var, Var)> {
        let d = self.config.d_model;
        let (na, nq) = (a_mask.len(), q_mask.len());
        let w = vars[self.layout.similarity];
        let w_a = tape.slice_cols(w, 0, d)?;
        let w_q = tape.slice_cols(w, d, 2 * d)?;
        let w_m = tape.slice_cols(w, 2 * d, 3 * d)?;

        let w_a_t = tape.transpose(w_a)?;
        let s_a = tape.matmul(a, w_a_t)?;
        let w_q_t = tape.transpose(w_q)?;
        let s_q = tape.matmul(q, w_q_t)?;
        let s_q = tape.transpose(s_q)?;
        let aw = tape.mul(a, w_m)?;
        let q_t = tape.transpose(q)?;
        let s = tape.matmul(aw, q_t)?;
        let s = tape.add(s, s_a)?;
        let s = tape.add(s, s_q)?;

        let keep_q: Vec<bool> = (0..na * nq).map(|i| q_mask[i % nq]).collect();
        let keep_a: Vec<bool> = (0..na * nq).map(|i| a_mask[i / nq]).collect();
        let s_bar = tape.softmax_masked(s, 1, Some(&keep_q))?;
        let s_bbar = tape.softmax_masked(s, 0, Some(&keep_a))?;

        let a2q = tape.matmul(s_bar, q)?;
        let s_bbar_t = tape.transpose(s_bbar)?;
        let mixed = tape.matmul(s_bar, s_bbar_t)?;
        let q2a = tape.matmul(mixed, a)?;
        Ok((a2q, q2a))
    }

    /// Pre-sigmoid score `W_o·[M₀; M₁]` as a `1 × 1` tensor.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], question: &Encoded, answer: &Encoded, mode: Mode) -> Result<Var> {
        let q_mask = question.mask();
        let a_mask = answer.mask();

        let mut q = self.embed(tape, vars, Side::Question, question)?;
        for block in &self.layout.question.encoder {
            q = self.encoder_block(tape, vars, block, q, &q_mask)?;
        }
        let mut a = self.embed(tape, vars, Side::Answer, answer)?;
        for block in &self.layout.answer.encoder {
            a = self.encoder_block(tape, vars, block, a, &a_mask)?;
        }

        let (a2q, q2a) = self.aq_attention(tape, vars, a, q, &a_mask, &q_mask)?;
        let a_a2q = tape.mul(a, a2q)?;
        let a_q2a = tape.mul(a, q2a)?;
        let fused = tape.concat(&[a, a2q, a_a2q, a_q2a], 1)?;
        let mut x = tape.matmul(fused, vars[self.layout.fusion])?;
        if let Mode::Train { seed } = mode {
            x = tape.dropout(x, self.config.dropout, true, seed)?;
        }

        let mut pooled = Vec::with_capacity(self.layout.model.len());
        for block in &self.layout.model {
            x = self.encoder_block(tape, vars, block, x, &a_mask)?;
            pooled.push(match self.config.pooling {
                Pooling::Mean => tape.masked_mean_rows(x, &a_mask)?,
                Pooling::First => tape.gather_rows(x, &[0])?,
            });
        }
        let features = if pooled.len() == 1 { pooled[0] } else { tape.concat(&pooled, 1)? };
        Ok(tape.matmul(features, vars[self.layout.output])?)
    }

    pub fn logit(&self, question: &Encoded, answer: &Encoded) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &vars, question, answer, Mode::Eval)?;
        Ok(tape.value(out).item())
    }

    pub fn probability(&self, question: &Encoded, answer: &Encoded) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &vars, question, answer, Mode::Eval)?;
        let p = tape.sigmoid(out);
        Ok(tape.value(p).item())
    }

    pub fn encode(&self, side: Side, tokens: &TokenSequence) -> Result<Encoded> {
        let max = match side {
            Side::Question => self.config.max_q_len,
            Side::Answer => self.config.max_a_len,
        };
        Encoded::from_tokens(&self.vocab, tokens, max)
    }

    /// Logit for a tokenized question/answer pair.
    pub fn score_tokens(&self, question: &TokenSequence, answer: &TokenSequence) -> Result<f64> {
        self.logit(&self.encode(Side::Question, question)?, &self.encode(Side::Answer, answer)?)
    }

    /// Zeroes the embedding gradient rows that must stay fixed.
    pub(crate) fn mask_frozen_grad(&self, index: usize, grad: &mut [f64]) {
        if self.frozen_embedding && index == self.layout.embedding {
            let dim = self.config.word_dim;
            for (row, chunk) in grad.chunks_mut(dim).enumerate() {
                if row != UNK_ID {
                    chunk.fill(0.0);
                }
            }
        }
    }

    pub(crate) fn embedding_index(&self) -> usize {
        self.layout.embedding
    }
}
