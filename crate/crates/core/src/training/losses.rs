//! Composite likelihood and the agreement lower-bound terms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::Sentence;
use crate::error::{invalid, Error, Result};
use crate::graph::{Edge, Lang, TranslationGraph};
use crate::model::{Encoded, ModelParams, Net, SoftDecode, SoftSequence};

/// Which agreement factors produced along supervised edges are shielded
/// from gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protection {
    None,
    /// Soft samples decoded along a supervised edge are detached before
    /// being scored.
    #[default]
    Samples,
    /// Additionally, a supervised scoring model contributes no gradient.
    SamplesAndScorers,
    /// Additionally, a term scored by a supervised model is a constant:
    /// no gradient reaches its scorer or the sample it scores.
    Terms,
}

impl std::str::FromStr for Protection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "samples" => Ok(Self::Samples),
            "samples_and_scorers" => Ok(Self::SamplesAndScorers),
            "terms" => Ok(Self::Terms),
            _ => Err(invalid(format!("unknown protection `{s}` (none, samples, samples_and_scorers, terms)"))),
        }
    }
}

/// Uniform over languages other than `s` and `t`.
pub fn sample_aux_language(graph: &TranslationGraph, s: Lang, t: Lang, rng: &mut impl Rng) -> Result<Lang> {
    let candidates: Vec<Lang> = graph.languages().filter(|&l| l != s && l != t).collect();
    if candidates.is_empty() {
        return Err(invalid(format!("no auxiliary language exists for k = {}", graph.k())));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

/// Per-row `log p(x_t | x_s)` for a batch of `(x_s, x_t, edge)` items as a
/// `B x 1` variable.
pub fn pair_logprobs(tape: &mut Tape, net: &Net, items: &[(&Sentence, &Sentence, Edge)]) -> Result<Var> {
    let sources: Vec<&Sentence> = items.iter().map(|i| i.0).collect();
    let targets: Vec<&Sentence> = items.iter().map(|i| i.1).collect();
    let tags: Vec<usize> = items.iter().map(|i| net.hyper().tag(i.2 .1)).collect();
    let enc = net.encode(tape, &sources, &tags)?;
    net.teacher_forced_logprob(tape, &enc, &targets)
}

/// Mean negative log-likelihood over supervised items, on the tape.
pub fn composite_loss_var(tape: &mut Tape, net: &Net, graph: &TranslationGraph, items: &[(&Sentence, &Sentence, Edge)]) -> Result<Var> {
    if items.is_empty() {
        return Err(invalid("empty batch"));
    }
    if let Some(&(_, _, e)) = items.iter().find(|i| !graph.is_supervised(i.2 .0, i.2 .1)) {
        return Err(invalid(format!("zero-shot edge {} in a supervised batch", graph.edge_label(e))));
    }
    let lp = pair_logprobs(tape, net, items)?;
    let total = tape.reduce_sum(lp);
    Ok(tape.scale(total, -1.0 / items.len() as f64))
}

pub fn composite_loss(params: &ModelParams, graph: &TranslationGraph, items: &[(&Sentence, &Sentence, Edge)]) -> Result<f64> {
    let mut tape = Tape::new();
    let net = Net::bind_constant(&mut tape, params);
    let loss = composite_loss_var(&mut tape, &net, graph, items)?;
    Ok(tape.value(loss).item())
}

/// Settings shared by every agreement computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementSettings {
    pub protection: Protection,
    pub soft: SoftDecode,
    /// Continuous decoding runs `source length + extra_steps` steps.
    pub extra_steps: usize,
}

impl Default for AgreementSettings {
    fn default() -> Self {
        Self { protection: Protection::Samples, soft: SoftDecode::default(), extra_steps: 2 }
    }
}

/// Parameter bindings for the four factors of the agreement terms. The
/// ordinary case binds one [`Net`] to all four; tests bind separate
/// leaves to observe which factors receive gradient.
#[derive(Clone, Copy)]
pub struct AgreementNets<'a> {
    /// Decodes `x_s` into the auxiliary language.
    pub decode_s: &'a Net,
    pub decode_t: &'a Net,
    /// Scores the sample decoded from `x_s`, conditioned on `x_t`.
    pub score_t: &'a Net,
    pub score_s: &'a Net,
}

impl<'a> AgreementNets<'a> {
    pub fn shared(net: &'a Net) -> Self {
        Self { decode_s: net, decode_t: net, score_t: net, score_s: net }
    }
}

/// Per-row agreement log-probabilities, each `B x 1`.
pub struct AgreementTerms {
    /// `log p(z_{a<-s} | x_t)`, the sample from the `s` side scored by the
    /// `t -> a` model.
    pub ell_t: Var,
    /// `log p(z_{a<-t} | x_s)`.
    pub ell_s: Var,
}

/// Computes both cross terms for aligned batches `xs` (in `s`) and `xt`
/// (in `t`) through auxiliary language `aux`.
#[allow(clippy::too_many_arguments)]
pub fn agreement_terms(
    tape: &mut Tape,
    nets: AgreementNets<'_>,
    graph: &TranslationGraph,
    xs: &[&Sentence],
    xt: &[&Sentence],
    (s, t): Edge,
    aux: Lang,
    settings: &AgreementSettings,
) -> Result<AgreementTerms> {
    if aux == s || aux == t {
        return Err(invalid("auxiliary language must differ from both sides"));
    }
    if xs.len() != xt.len() || xs.is_empty() {
        return Err(invalid("agreement needs aligned nonempty batches"));
    }
    let tag = nets.decode_s.hyper().tag(aux);
    let tags = vec![tag; xs.len()];
    let lens = |xs: &[&Sentence]| xs.iter().map(|x| x.len() + settings.extra_steps).collect::<Vec<_>>();

    let enc_s = nets.decode_s.encode(tape, xs, &tags)?;
    let enc_t = nets.decode_t.encode(tape, xt, &tags)?;
    let mut z_s = nets.decode_s.continuous_decode(tape, &enc_s, &lens(xs), settings.soft)?;
    let mut z_t = nets.decode_t.continuous_decode(tape, &enc_t, &lens(xt), settings.soft)?;
    if settings.protection != Protection::None {
        if graph.is_supervised(s, aux) {
            z_s = z_s.detached(tape);
        }
        if graph.is_supervised(t, aux) {
            z_t = z_t.detached(tape);
        }
    }

    let strict = settings.protection == Protection::SamplesAndScorers;
    let score = |tape: &mut Tape, scorer: &Net, decoder: &Net, enc_decoder: &Encoded, x: &[&Sentence], from: Lang, z: &SoftSequence| -> Result<Var> {
        let detached;
        let scorer = if strict && graph.is_supervised(from, aux) {
            detached = scorer.detached(tape);
            &detached
        } else {
            scorer
        };
        let own_enc;
        let enc = if std::ptr::eq(scorer, decoder) {
            enc_decoder
        } else {
            own_enc = scorer.encode(tape, x, &tags)?;
            &own_enc
        };
        let ell = scorer.soft_teacher_forced_logprob(tape, enc, z)?;
        Ok(if settings.protection == Protection::Terms && graph.is_supervised(from, aux) { tape.stop_gradient(ell) } else { ell })
    };
    let ell_t = score(tape, nets.score_t, nets.decode_t, &enc_t, xt, t, &z_s)?;
    let ell_s = score(tape, nets.score_s, nets.decode_s, &enc_s, xs, s, &z_t)?;
    Ok(AgreementTerms { ell_t, ell_s })
}
