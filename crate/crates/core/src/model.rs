//! Shared tag-conditioned encoder-decoder.
//!
//! One bidirectional LSTM encoder layer over `[tag, x_1 .. x_l]`, a
//! two-layer LSTM decoder with bilinear dot-product attention, and an
//! output projection tied to the decoder-side embedding table.

use std::cell::RefCell;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::checkpoint;
use crate::corpus::{Sentence, Vocab, BOS, EOS, FIRST_TAG, PAD};
use crate::graph::Lang;
use crate::error::{invalid, Error, Result};

const MASKED_SCORE: f64 = -1e30;
const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Vocabulary size including reserved tokens.
    pub vocab_size: usize,
    /// Languages with a reserved target tag.
    pub num_langs: usize,
    pub hidden_size: usize,
    /// Embedding width; also the width of the tied output projection.
    pub embed_size: usize,
    pub dropout: f64,
    /// Longest accepted source sentence and greedy decoding limit.
    pub max_len: usize,
}

impl Hyperparams {
    pub fn new(vocab_size: usize, num_langs: usize) -> Self {
        Self { vocab_size, num_langs, hidden_size: 64, embed_size: 64, dropout: 0.0, max_len: 16 }
    }

    pub fn for_vocab(vocab: &Vocab) -> Self {
        Self::new(vocab.size(), vocab.content_offset() - FIRST_TAG)
    }

    /// Id of the tag requesting translation into `l`.
    pub fn tag(&self, l: Lang) -> usize {
        FIRST_TAG + l.0
    }

    pub fn content_offset(&self) -> usize {
        FIRST_TAG + self.num_langs
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= self.content_offset() || self.hidden_size == 0 || self.embed_size == 0 || self.max_len == 0 {
            return Err(invalid("model sizes must be positive and the vocabulary must hold reserved tokens"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

pub(crate) mod slot {
    pub const SRC_EMBED: usize = 0;
    pub const TGT_EMBED: usize = 1;
    pub const ENC_FWD_W: usize = 2;
    pub const ENC_FWD_B: usize = 3;
    pub const ENC_BWD_W: usize = 4;
    pub const ENC_BWD_B: usize = 5;
    pub const BRIDGE_W: usize = 6;
    pub const BRIDGE_B: usize = 7;
    pub const DEC0_W: usize = 8;
    pub const DEC0_B: usize = 9;
    pub const DEC1_W: usize = 10;
    pub const DEC1_B: usize = 11;
    pub const ATTN_W: usize = 12;
    pub const OUT_W: usize = 13;
    pub const OUT_B: usize = 14;
}

pub const PARAM_NAMES: [&str; 15] = [
    "src_embed",
    "tgt_embed",
    "enc_fwd.w",
    "enc_fwd.b",
    "enc_bwd.w",
    "enc_bwd.b",
    "bridge.w",
    "bridge.b",
    "dec0.w",
    "dec0.b",
    "dec1.w",
    "dec1.b",
    "attn.w",
    "out.w",
    "out.b",
];

/// All model weights, in [`PARAM_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyperparams,
    pub tensors: Vec<Tensor>,
}

fn param_shapes(h: &Hyperparams) -> [[usize; 2]; 15] {
    let (v, e, n) = (h.vocab_size, h.embed_size, h.hidden_size);
    [
        [v, e],
        [v, e],
        [e + n, 4 * n],
        [1, 4 * n],
        [e + n, 4 * n],
        [1, 4 * n],
        [2 * n, n],
        [1, n],
        [e + n, 4 * n],
        [1, 4 * n],
        [2 * n, 4 * n],
        [1, 4 * n],
        [n, 2 * n],
        [3 * n, e],
        [1, e],
    ]
}

impl ModelParams {
    /// Uniform in `[-0.08, 0.08]` per coordinate.
    pub fn init(hyper: &Hyperparams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_shapes(hyper)
            .iter()
            .map(|&[r, c]| {
                let data = (0..r * c).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)).collect();
                Tensor::from_vec(r, c, data)
            })
            .collect::<Result<_>>()?;
        Ok(Self { hyper: hyper.clone(), tensors })
    }

    pub fn zeros(hyper: &Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let tensors = param_shapes(hyper).iter().map(|&[r, c]| Tensor::zeros(r, c)).collect();
        Ok(Self { hyper: hyper.clone(), tensors })
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn tgt_embed(&self) -> &Tensor {
        &self.tensors[slot::TGT_EMBED]
    }

    /// Named tensors under `prefix`, including hyperparameters as scalars.
    pub fn to_named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let h = &self.hyper;
        let mut out: Vec<(String, Tensor)> = [
            ("vocab_size", h.vocab_size as f64),
            ("num_langs", h.num_langs as f64),
            ("hidden_size", h.hidden_size as f64),
            ("embed_size", h.embed_size as f64),
            ("dropout", h.dropout),
            ("max_len", h.max_len as f64),
        ]
        .into_iter()
        .map(|(n, v)| (format!("{prefix}hyper.{n}"), Tensor::scalar(v)))
        .collect();
        out.extend(PARAM_NAMES.iter().zip(&self.tensors).map(|(n, t)| (format!("{prefix}{n}"), t.clone())));
        out
    }

    pub fn from_named(named: &[(String, Tensor)], prefix: &str) -> Result<Self> {
        let scalar = |n: &str| checkpoint::find(named, &format!("{prefix}hyper.{n}")).map(Tensor::item);
        let hyper = Hyperparams {
            vocab_size: scalar("vocab_size")? as usize,
            num_langs: scalar("num_langs")? as usize,
            hidden_size: scalar("hidden_size")? as usize,
            embed_size: scalar("embed_size")? as usize,
            dropout: scalar("dropout")?,
            max_len: scalar("max_len")? as usize,
        };
        hyper.validate()?;
        let shapes = param_shapes(&hyper);
        let tensors = PARAM_NAMES
            .iter()
            .zip(shapes)
            .map(|(n, shape)| {
                let t = checkpoint::find(named, &format!("{prefix}{n}"))?;
                if t.shape() != shape {
                    return Err(Error::Checkpoint(format!("`{n}` has shape {:?}, expected {shape:?}", t.shape())));
                }
                Ok(t.clone())
            })
            .collect::<Result<_>>()?;
        Ok(Self { hyper, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_tensors(path, &self.to_named(""))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_named(&checkpoint::load_tensors(path)?, "")
    }
}

/// Encoder output for a batch: one `B x 2H` block per position.
pub struct Encoded {
    pub positions: Vec<Var>,
    /// `B x P` additive attention mask (0 or a large negative), if ragged.
    mask_bias: Option<Var>,
    summary: Var,
    /// Source length per row, tag included.
    pub lens: Vec<usize>,
}

impl Encoded {
    pub fn batch(&self) -> usize {
        self.lens.len()
    }
}

#[derive(Clone, Copy)]
pub struct DecoderState {
    h: [Var; 2],
    c: [Var; 2],
}

/// Output of one decoder step.
pub struct StepOutput {
    /// Attentional hidden state (`B x E`), the query for the tied projection.
    pub hidden: Var,
    /// `B x |V|` unnormalized scores.
    pub logits: Var,
    /// `B x P` attention distribution.
    pub attention: Var,
    pub state: DecoderState,
}

/// Fixed-length sequence of vocabulary distributions and the embedding
/// mixtures they induce (`z_t = q_t * E_tgt`).
pub struct SoftSequence {
    pub dists: Vec<Var>,
    pub embeds: Vec<Var>,
    /// Valid step count per row; later steps are ignored when scoring.
    pub lens: Vec<usize>,
}

impl SoftSequence {
    pub fn steps(&self) -> usize {
        self.dists.len()
    }

    /// Blocks gradients through every distribution and mixture.
    pub fn detached(&self, tape: &mut Tape) -> SoftSequence {
        SoftSequence {
            dists: self.dists.iter().map(|&d| tape.stop_gradient(d)).collect(),
            embeds: self.embeds.iter().map(|&z| tape.stop_gradient(z)).collect(),
            lens: self.lens.clone(),
        }
    }
}

/// Model parameters bound into a tape, ready for forward passes.
pub struct Net {
    pub vars: Vec<Var>,
    hyper: Hyperparams,
    dropout: RefCell<Option<(f64, ChaCha8Rng)>>,
}

fn col(values: Vec<f64>) -> Tensor {
    Tensor::column(values)
}

impl Net {
    /// Parameters as differentiable leaves.
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params.tensors.iter().map(|t| tape.param(t.clone())).collect();
        Self { vars, hyper: params.hyper.clone(), dropout: RefCell::new(None) }
    }

    /// Parameters as constants (inference only).
    pub fn bind_constant(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        Self { vars, hyper: params.hyper.clone(), dropout: RefCell::new(None) }
    }

    /// Wraps vars already on the tape, in [`PARAM_NAMES`] order.
    pub fn from_vars(tape: &Tape, vars: Vec<Var>, hyper: &Hyperparams) -> Result<Self> {
        let shapes = param_shapes(hyper);
        if vars.len() != shapes.len() || vars.iter().zip(&shapes).any(|(&v, s)| tape.value(v).shape() != *s) {
            return Err(invalid("vars do not match the parameter layout"));
        }
        Ok(Self { vars, hyper: hyper.clone(), dropout: RefCell::new(None) })
    }

    /// A view whose parameters pass values but no gradient.
    pub fn detached(&self, tape: &mut Tape) -> Self {
        let vars = self.vars.iter().map(|&v| tape.stop_gradient(v)).collect();
        Self { vars, hyper: self.hyper.clone(), dropout: RefCell::new(None) }
    }

    pub fn with_dropout(mut self, seed: u64) -> Self {
        if self.hyper.dropout > 0.0 {
            self.dropout = RefCell::new(Some((self.hyper.dropout, ChaCha8Rng::seed_from_u64(seed))));
        }
        self
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    fn p(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    fn dropout(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut cell = self.dropout.borrow_mut();
        let Some((rate, rng)) = cell.as_mut() else { return Ok(x) };
        let [r, c] = tape.value(x).shape();
        let keep = 1.0 / (1.0 - *rate);
        let mask = (0..r * c).map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep }).collect();
        let m = tape.constant(Tensor::from_vec(r, c, mask)?);
        tape.mul(x, m)
    }

    fn lstm(&self, tape: &mut Tape, w: usize, b: usize, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.hyper.hidden_size;
        let xh = tape.concat(&[x, h])?;
        let gates = tape.matmul(xh, self.p(w))?;
        let gates = tape.add_row(gates, self.p(b))?;
        let i = tape.slice(gates, 0, n)?;
        let i = tape.sigmoid(i);
        let f = tape.slice(gates, n, n)?;
        let f = tape.sigmoid(f);
        let g = tape.slice(gates, 2 * n, n)?;
        let g = tape.tanh(g);
        let o = tape.slice(gates, 3 * n, n)?;
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c2 = tape.add(fc, ig)?;
        let tc = tape.tanh(c2);
        let h2 = tape.mul(o, tc)?;
        Ok((h2, c2))
    }

    /// Row-wise select: `new` where the mask is 1, `prev` where it is 0.
    fn masked(tape: &mut Tape, new: Var, prev: Var, mask: Option<(Var, Var)>) -> Result<Var> {
        match mask {
            None => Ok(new),
            Some((keep, hold)) => {
                let a = tape.scale_rows(new, keep)?;
                let b = tape.scale_rows(prev, hold)?;
                tape.add(a, b)
            }
        }
    }

    /// Encodes each source with its target-language tag prepended.
    pub fn encode(&self, tape: &mut Tape, sources: &[&Sentence], tags: &[usize]) -> Result<Encoded> {
        if sources.len() != tags.len() || sources.is_empty() {
            return Err(invalid("encode needs one tag per source and a nonempty batch"));
        }
        if let Some(s) = sources.iter().find(|s| s.len() > self.hyper.max_len) {
            return Err(invalid(format!("sentence of length {} exceeds max length {}", s.len(), self.hyper.max_len)));
        }
        let b = sources.len();
        let n = self.hyper.hidden_size;
        let lens: Vec<usize> = sources.iter().map(|s| s.len() + 1).collect();
        let positions = *lens.iter().max().expect("nonempty");
        let ragged = lens.iter().any(|&l| l != positions);

        let ids_at = |p: usize| -> Vec<usize> {
            (0..b).map(|r| if p == 0 { tags[r] } else { sources[r].tokens.get(p - 1).copied().unwrap_or(PAD) }).collect()
        };
        let masks: Vec<Option<(Var, Var)>> = (0..positions)
            .map(|p| {
                ragged.then(|| {
                    let live: Vec<f64> = lens.iter().map(|&l| f64::from(u8::from(p < l))).collect();
                    let held = live.iter().map(|m| 1.0 - m).collect();
                    (tape.constant(col(live)), tape.constant(col(held)))
                })
            })
            .collect();
        let embeds = (0..positions).map(|p| tape.gather_rows(self.p(slot::SRC_EMBED), &ids_at(p))).collect::<Result<Vec<_>>>()?;

        let zero = tape.constant(Tensor::zeros(b, n));
        let (mut h, mut c) = (zero, zero);
        let mut fwd = Vec::with_capacity(positions);
        for p in 0..positions {
            let (h2, c2) = self.lstm(tape, slot::ENC_FWD_W, slot::ENC_FWD_B, embeds[p], h, c)?;
            h = Self::masked(tape, h2, h, masks[p])?;
            c = Self::masked(tape, c2, c, masks[p])?;
            fwd.push(h);
        }
        let fwd_final = h;
        let (mut h, mut c) = (zero, zero);
        let mut bwd = vec![zero; positions];
        for p in (0..positions).rev() {
            let (h2, c2) = self.lstm(tape, slot::ENC_BWD_W, slot::ENC_BWD_B, embeds[p], h, c)?;
            h = Self::masked(tape, h2, h, masks[p])?;
            c = Self::masked(tape, c2, c, masks[p])?;
            bwd[p] = h;
        }
        let mut out = Vec::with_capacity(positions);
        for p in 0..positions {
            let u = tape.concat(&[fwd[p], bwd[p]])?;
            out.push(self.dropout(tape, u)?);
        }
        let summary = tape.concat(&[fwd_final, bwd[0]])?;
        let mask_bias = if ragged {
            let mut m = Tensor::zeros(b, positions);
            for (r, &l) in lens.iter().enumerate() {
                for v in &mut m.row_mut(r)[l..] {
                    *v = MASKED_SCORE;
                }
            }
            Some(tape.constant(m))
        } else {
            None
        };
        Ok(Encoded { positions: out, mask_bias, summary, lens })
    }

    pub fn init_state(&self, tape: &mut Tape, enc: &Encoded) -> Result<DecoderState> {
        let h = tape.matmul(enc.summary, self.p(slot::BRIDGE_W))?;
        let h = tape.add_row(h, self.p(slot::BRIDGE_B))?;
        let h = tape.tanh(h);
        let c = tape.constant(Tensor::zeros(enc.batch(), self.hyper.hidden_size));
        Ok(DecoderState { h: [h, h], c: [c, c] })
    }

    /// Embeddings of `ids` in the decoder-side table.
    pub fn target_embedding(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        tape.gather_rows(self.p(slot::TGT_EMBED), ids)
    }

    pub fn step(&self, tape: &mut Tape, state: DecoderState, input: Var, enc: &Encoded) -> Result<StepOutput> {
        let (h0, c0) = self.lstm(tape, slot::DEC0_W, slot::DEC0_B, input, state.h[0], state.c[0])?;
        let (h1, c1) = self.lstm(tape, slot::DEC1_W, slot::DEC1_B, h0, state.h[1], state.c[1])?;
        let query = tape.matmul(h1, self.p(slot::ATTN_W))?;
        let mut scores = Vec::with_capacity(enc.positions.len());
        for &u in &enc.positions {
            let prod = tape.mul(u, query)?;
            scores.push(tape.row_sum(prod));
        }
        let mut scores = tape.concat(&scores)?;
        if let Some(m) = enc.mask_bias {
            scores = tape.add(scores, m)?;
        }
        let attention = tape.softmax(scores);
        let mut context = None;
        for (p, &u) in enc.positions.iter().enumerate() {
            let a = tape.slice(attention, p, 1)?;
            let term = tape.scale_rows(u, a)?;
            context = Some(match context {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let context = context.expect("at least the tag position");
        let joined = tape.concat(&[context, h1])?;
        let hidden = tape.matmul(joined, self.p(slot::OUT_W))?;
        let hidden = tape.add_row(hidden, self.p(slot::OUT_B))?;
        let hidden = tape.tanh(hidden);
        let hidden = self.dropout(tape, hidden)?;
        let logits = tape.matmul_nt(hidden, self.p(slot::TGT_EMBED))?;
        Ok(StepOutput { hidden, logits, attention, state: DecoderState { h: [h0, h1], c: [c0, c1] } })
    }

    /// Per-row `sum_t log p(y_t | y_<t, x)` including end-of-sequence, as `B x 1`.
    pub fn teacher_forced_logprob(&self, tape: &mut Tape, enc: &Encoded, targets: &[&Sentence]) -> Result<Var> {
        let b = enc.batch();
        if targets.len() != b {
            return Err(invalid("one target per encoded source required"));
        }
        if targets.iter().any(|t| t.is_empty()) {
            return Err(invalid("empty target sentence"));
        }
        if let Some(t) = targets.iter().find(|t| t.len() > self.hyper.max_len) {
            return Err(invalid(format!("target of length {} exceeds max length {}", t.len(), self.hyper.max_len)));
        }
        let v = self.hyper.vocab_size;
        let steps = targets.iter().map(|t| t.len()).max().expect("nonempty") + 1;
        let mut state = self.init_state(tape, enc)?;
        let mut input = self.target_embedding(tape, &vec![BOS; b])?;
        let mut total: Option<Var> = None;
        for t in 0..steps {
            let out = self.step(tape, state, input, enc)?;
            state = out.state;
            let logp = tape.log_softmax(out.logits);
            let mut onehot = Tensor::zeros(b, v);
            for (r, tgt) in targets.iter().enumerate() {
                match t.cmp(&tgt.len()) {
                    std::cmp::Ordering::Less => onehot.row_mut(r)[tgt.tokens[t]] = 1.0,
                    std::cmp::Ordering::Equal => onehot.row_mut(r)[EOS] = 1.0,
                    std::cmp::Ordering::Greater => {}
                }
            }
            let onehot = tape.constant(onehot);
            let picked = tape.mul(logp, onehot)?;
            let lp = tape.row_sum(picked);
            total = Some(match total {
                None => lp,
                Some(acc) => tape.add(acc, lp)?,
            });
            if t + 1 < steps {
                let ids: Vec<usize> = targets.iter().map(|tgt| tgt.tokens.get(t).copied().unwrap_or(PAD)).collect();
                input = self.target_embedding(tape, &ids)?;
            }
        }
        Ok(total.expect("at least one step"))
    }

    /// Per-row expected log-probability of a soft target: at each valid step
    /// the dot product of the target distribution with `log_softmax(logits)`,
    /// feeding the target's embedding mixtures as decoder inputs. `B x 1`.
    pub fn soft_teacher_forced_logprob(&self, tape: &mut Tape, enc: &Encoded, target: &SoftSequence) -> Result<Var> {
        let b = enc.batch();
        if target.lens.len() != b || target.steps() == 0 {
            return Err(invalid("soft target must be nonempty with one row per encoded source"));
        }
        let ragged = target.lens.iter().any(|&l| l != target.steps());
        let mut state = self.init_state(tape, enc)?;
        let mut input = self.target_embedding(tape, &vec![BOS; b])?;
        let mut total: Option<Var> = None;
        for t in 0..target.steps() {
            let out = self.step(tape, state, input, enc)?;
            state = out.state;
            let logp = tape.log_softmax(out.logits);
            let mut q = target.dists[t];
            if ragged {
                let m = tape.constant(col(target.lens.iter().map(|&l| f64::from(u8::from(t < l))).collect()));
                q = tape.scale_rows(q, m)?;
            }
            let picked = tape.mul(logp, q)?;
            let lp = tape.row_sum(picked);
            total = Some(match total {
                None => lp,
                Some(acc) => tape.add(acc, lp)?,
            });
            input = target.embeds[t];
        }
        Ok(total.expect("at least one step"))
    }

    /// Greedy continuous decoding: each step emits `q = softmax(s * logits)`
    /// and feeds `z = q * E_tgt` back in. Runs `max(lens)` steps with no
    /// early stop.
    pub fn continuous_decode(&self, tape: &mut Tape, enc: &Encoded, lens: &[usize], opts: SoftDecode) -> Result<SoftSequence> {
        let b = enc.batch();
        if lens.len() != b || lens.contains(&0) {
            return Err(invalid("continuous decoding needs a positive length per row"));
        }
        let steps = *lens.iter().max().expect("nonempty");
        let reserved_bias = opts.content_only.then(|| {
            let mut bias = Tensor::zeros(1, self.hyper.vocab_size);
            for v in &mut bias.data_mut()[..self.hyper.content_offset()] {
                *v = MASKED_SCORE;
            }
            tape.constant(bias)
        });
        let mut state = self.init_state(tape, enc)?;
        let mut input = self.target_embedding(tape, &vec![BOS; b])?;
        let (mut dists, mut embeds) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
        for _ in 0..steps {
            let out = self.step(tape, state, input, enc)?;
            state = out.state;
            let mut logits = if opts.logit_scale == 1.0 { out.logits } else { tape.scale(out.logits, opts.logit_scale) };
            if let Some(bias) = reserved_bias {
                logits = tape.add_row(logits, bias)?;
            }
            let q = tape.softmax(logits);
            let z = tape.matmul(q, self.p(slot::TGT_EMBED))?;
            dists.push(q);
            embeds.push(z);
            input = z;
        }
        Ok(SoftSequence { dists, embeds, lens: lens.to_vec() })
    }
}

/// Options for continuous decoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftDecode {
    /// Multiplies logits before the softmax; large values approach argmax.
    pub logit_scale: f64,
    /// Restrict each step's distribution to content tokens.
    pub content_only: bool,
}

impl Default for SoftDecode {
    fn default() -> Self {
        Self { logit_scale: 1.0, content_only: false }
    }
}

/// Single-sentence encoding; returns the `positions x 2H` matrix `u`.
pub fn encode(params: &ModelParams, source: &Sentence, tag: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let net = Net::bind_constant(&mut tape, params);
    let enc = net.encode(&mut tape, &[source], &[tag])?;
    let rows: Vec<Vec<f64>> = enc.positions.iter().map(|&p| tape.value(p).row(0).to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// Scalar `log p(target | source, tag)` including end-of-sequence.
pub fn teacher_forced_logprob(params: &ModelParams, source: &Sentence, tag: usize, target: &Sentence) -> Result<f64> {
    Ok(batch_logprob(params, &[source], &[tag], &[target])?[0])
}

/// Per-pair log-probabilities, evaluated as one batch.
pub fn batch_logprob(params: &ModelParams, sources: &[&Sentence], tags: &[usize], targets: &[&Sentence]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let net = Net::bind_constant(&mut tape, params);
    let enc = net.encode(&mut tape, sources, tags)?;
    let lp = net.teacher_forced_logprob(&mut tape, &enc, targets)?;
    Ok(tape.value(lp).data().to_vec())
}
