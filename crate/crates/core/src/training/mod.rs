//! Composite-likelihood and agreement-based training.

mod losses;
mod optim;

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{
    agreement_terms, composite_loss, composite_loss_var, pair_logprobs, sample_aux_language, AgreementNets, AgreementSettings,
    AgreementTerms, Protection,
};
pub use optim::{clip_global_norm, Adam, Schedule};

use crate::autodiff::{Tape, Tensor};
use crate::checkpoint;
use crate::corpus::{BilingualCorpora, ParallelTuple, Sentence};
use crate::error::{invalid, Error, Result};
use crate::graph::{Edge, Lang, TranslationGraph};
use crate::model::{self, ModelParams, Net, SoftDecode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the agreement terms; 0 gives composite-likelihood training.
    pub gamma: f64,
    /// Agreement is off for steps before this one.
    pub burn_in: usize,
    pub lr: f64,
    /// Pairs drawn per step; each is trained in both directions.
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Dev evaluations without improvement before stopping.
    pub patience: Option<usize>,
    pub eval_interval: usize,
    pub log_interval: usize,
    pub clip_norm: Option<f64>,
    pub protection: Protection,
    pub soft_content_only: bool,
    pub extra_decode_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            burn_in: 1000,
            lr: 1e-3,
            batch_size: 16,
            max_steps: 5000,
            seed: 1,
            patience: None,
            eval_interval: 250,
            log_interval: 10,
            clip_norm: Some(5.0),
            protection: Protection::Samples,
            soft_content_only: false,
            extra_decode_steps: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma must be a finite nonnegative number, got {}", self.gamma)));
        }
        if self.burn_in > self.max_steps {
            return Err(invalid(format!("burn_in {} exceeds max_steps {}", self.burn_in, self.max_steps)));
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.log_interval == 0 {
            return Err(invalid("batch_size, eval_interval and log_interval must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(invalid("clip_norm must be positive"));
        }
        Ok(())
    }

    pub fn mode(&self) -> &'static str {
        if self.gamma == 0.0 {
            "basic"
        } else {
            "agree"
        }
    }

    pub fn agreement_settings(&self) -> AgreementSettings {
        AgreementSettings {
            protection: self.protection,
            soft: SoftDecode { logit_scale: 1.0, content_only: self.soft_content_only },
            extra_steps: self.extra_decode_steps,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { lr: self.lr, hold: self.burn_in as u64 }
    }
}

/// Loss components of one step. Agreement fields are `None` while the
/// agreement terms are not computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: usize,
    pub sup_loss: f64,
    pub agree_s: Option<f64>,
    pub agree_t: Option<f64>,
    pub aux_lang: Option<Lang>,
    pub total: f64,
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub sup_loss: f64,
    pub agree_s: Option<f64>,
    pub agree_t: Option<f64>,
    pub aux_lang: Option<String>,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev_loss: Option<f64>,
    pub wallclock_ms: u64,
    pub mode: String,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: Adam,
    /// Completed steps.
    pub step: usize,
    pub best_dev: Option<f64>,
    pub best_params: Option<ModelParams>,
    pub bad_evals: usize,
    pub stopped: bool,
    pub elapsed_ms: u64,
}

impl TrainState {
    pub fn fresh(params: ModelParams) -> Self {
        let adam = Adam::new(&params);
        Self { params, adam, step: 0, best_dev: None, best_params: None, bad_evals: 0, stopped: false, elapsed_ms: 0 }
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let mut out = self.params.to_named("params.");
        let scalars = [
            ("state.step", self.step as f64),
            ("state.adam_t", self.adam.t as f64),
            ("state.best_dev", self.best_dev.unwrap_or(f64::NAN)),
            ("state.bad_evals", self.bad_evals as f64),
            ("state.stopped", f64::from(u8::from(self.stopped))),
            ("state.elapsed_ms", self.elapsed_ms as f64),
        ];
        out.extend(scalars.into_iter().map(|(n, v)| (n.to_string(), Tensor::scalar(v))));
        for (i, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            out.push((format!("adam.m.{i}"), m.clone()));
            out.push((format!("adam.v.{i}"), v.clone()));
        }
        if let Some(b) = &self.best_params {
            out.extend(b.to_named("best."));
        }
        out
    }

    pub fn from_named(named: &[(String, Tensor)]) -> Result<Self> {
        let params = ModelParams::from_named(named, "params.")?;
        let scalar = |n: &str| checkpoint::find(named, n).map(Tensor::item);
        let mut adam = Adam::new(&params);
        adam.t = scalar("state.adam_t")? as u64;
        for i in 0..params.tensors.len() {
            adam.m[i] = checkpoint::find(named, &format!("adam.m.{i}"))?.clone();
            adam.v[i] = checkpoint::find(named, &format!("adam.v.{i}"))?.clone();
            if adam.m[i].shape() != params.tensors[i].shape() || adam.v[i].shape() != params.tensors[i].shape() {
                return Err(Error::Checkpoint(format!("optimizer moment {i} does not match its parameter")));
            }
        }
        let best_dev = scalar("state.best_dev")?;
        let best_params = if named.iter().any(|(n, _)| n.starts_with("best.")) { Some(ModelParams::from_named(named, "best.")?) } else { None };
        Ok(Self {
            params,
            adam,
            step: scalar("state.step")? as usize,
            best_dev: (!best_dev.is_nan()).then_some(best_dev),
            best_params,
            bad_evals: scalar("state.bad_evals")? as usize,
            stopped: scalar("state.stopped")? != 0.0,
            elapsed_ms: scalar("state.elapsed_ms")? as u64,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_tensors(path, &self.to_named())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_named(&checkpoint::load_tensors(path)?)
    }

    /// Parameters with the best dev loss seen, or the current ones.
    pub fn best(&self) -> &ModelParams {
        self.best_params.as_ref().unwrap_or(&self.params)
    }
}

/// Step-indexed random stream: the draws of step `n` depend only on the
/// seed and `n`, so a resumed run replays an uninterrupted one.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

/// Pairs for one training step: an unordered supervised pair and rows
/// drawn from its corpus.
pub struct StepBatch<'a> {
    pub pair: Edge,
    pub rows: Vec<(&'a Sentence, &'a Sentence)>,
}

impl StepBatch<'_> {
    /// Both directions of every row, as supervised items.
    pub fn items(&self) -> Vec<(&Sentence, &Sentence, Edge)> {
        let (a, b) = self.pair;
        let mut items: Vec<_> = self.rows.iter().map(|&(x, y)| (x, y, (a, b))).collect();
        items.extend(self.rows.iter().map(|&(x, y)| (y, x, (b, a))));
        items
    }
}

pub fn draw_batch<'a>(
    graph: &TranslationGraph,
    corpora: &'a BilingualCorpora,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<StepBatch<'a>> {
    let pairs = graph.supervised_pairs();
    if pairs.is_empty() {
        return Err(invalid("graph has no supervised pairs"));
    }
    let pair = pairs[rng.random_range(0..pairs.len())];
    let corpus = corpora.get(pair).filter(|c| !c.is_empty()).ok_or_else(|| invalid(format!("no corpus for {}", graph.edge_label(pair))))?;
    let rows = (0..batch_size)
        .map(|_| {
            let (x, y) = &corpus.pairs[rng.random_range(0..corpus.len())];
            (x, y)
        })
        .collect();
    Ok(StepBatch { pair, rows })
}

/// Total loss for one batch on `tape`, with its breakdown.
pub fn step_loss(
    tape: &mut Tape,
    net: &Net,
    graph: &TranslationGraph,
    batch: &StepBatch<'_>,
    agreement: Option<(f64, Lang, &AgreementSettings)>,
    step: usize,
) -> Result<(crate::autodiff::Var, LossBreakdown)> {
    let items = batch.items();
    let sup = composite_loss_var(tape, net, graph, &items)?;
    let sup_value = tape.value(sup).item();
    let Some((gamma, aux, settings)) = agreement else {
        let b = LossBreakdown { step, sup_loss: sup_value, agree_s: None, agree_t: None, aux_lang: None, total: sup_value };
        return Ok((sup, b));
    };
    let xs: Vec<&Sentence> = batch.rows.iter().map(|r| r.0).collect();
    let xt: Vec<&Sentence> = batch.rows.iter().map(|r| r.1).collect();
    let terms = agreement_terms(tape, AgreementNets::shared(net), graph, &xs, &xt, batch.pair, aux, settings)?;
    let scale = -1.0 / xs.len() as f64;
    let agree_t = tape.reduce_sum(terms.ell_t);
    let agree_t = tape.scale(agree_t, scale);
    let agree_s = tape.reduce_sum(terms.ell_s);
    let agree_s = tape.scale(agree_s, scale);
    let both = tape.add(agree_s, agree_t)?;
    let weighted = tape.scale(both, gamma);
    let total = tape.add(sup, weighted)?;
    let b = LossBreakdown {
        step,
        sup_loss: sup_value,
        agree_s: Some(tape.value(agree_s).item()),
        agree_t: Some(tape.value(agree_t).item()),
        aux_lang: Some(aux),
        total: tape.value(total).item(),
    };
    Ok((total, b))
}

/// Mean per-pair negative log-likelihood over the supervised directions of
/// multi-parallel `tuples`, averaged across directions.
pub fn dev_loss(params: &ModelParams, graph: &TranslationGraph, tuples: &[ParallelTuple]) -> Result<f64> {
    let dirs: Vec<Edge> = graph.supervised().iter().copied().collect();
    let mut sum = 0.0;
    for &(s, t) in &dirs {
        sum += direction_nll(params, tuples, s, t)?.0;
    }
    Ok(sum / dirs.len() as f64)
}

const EVAL_CHUNK: usize = 64;

/// Mean negative log-likelihood per pair and per target token (end marker
/// included) for direction `s -> t`.
pub fn direction_nll(params: &ModelParams, tuples: &[ParallelTuple], s: Lang, t: Lang) -> Result<(f64, f64)> {
    if tuples.is_empty() {
        return Err(invalid("no evaluation tuples"));
    }
    let (mut nll, mut tokens) = (0.0, 0usize);
    let tag = params.hyper.tag(t);
    for chunk in tuples.chunks(EVAL_CHUNK) {
        let get = |tu: &'_ ParallelTuple, l: Lang| -> Result<usize> {
            if l.0 < tu.sentences.len() {
                Ok(l.0)
            } else {
                Err(invalid(format!("tuple {} lacks language {}", tu.id, l.0)))
            }
        };
        let mut srcs = Vec::with_capacity(chunk.len());
        let mut tgts = Vec::with_capacity(chunk.len());
        for tu in chunk {
            srcs.push(&tu.sentences[get(tu, s)?]);
            tgts.push(&tu.sentences[get(tu, t)?]);
        }
        let lp = model::batch_logprob(params, &srcs, &vec![tag; chunk.len()], &tgts)?;
        nll -= lp.iter().sum::<f64>();
        tokens += tgts.iter().map(|x| x.len() + 1).sum::<usize>();
    }
    Ok((nll / tuples.len() as f64, nll / tokens as f64))
}

/// Drives training from a [`TrainState`].
pub struct Trainer<'a> {
    pub config: TrainConfig,
    graph: &'a TranslationGraph,
    corpora: &'a BilingualCorpora,
    dev: &'a [ParallelTuple],
    pub state: TrainState,
    /// Per-step breakdowns since this trainer was created.
    pub history: Vec<LossBreakdown>,
    clock: Instant,
    clock_base: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        graph: &'a TranslationGraph,
        corpora: &'a BilingualCorpora,
        dev: &'a [ParallelTuple],
        state: TrainState,
    ) -> Result<Self> {
        config.validate()?;
        if !graph.is_spanning() {
            return Err(invalid("supervised edges do not span the translation graph"));
        }
        for &(a, b) in &graph.supervised_pairs() {
            if corpora.get((a, b)).is_none_or(|c| c.is_empty()) {
                return Err(invalid(format!("no training data for {}", graph.edge_label((a, b)))));
            }
        }
        if config.gamma > 0.0 && graph.k() < 3 {
            return Err(invalid("agreement training needs at least three languages"));
        }
        let clock_base = state.elapsed_ms;
        Ok(Self { config, graph, corpora, dev, state, history: vec![], clock: Instant::now(), clock_base })
    }

    pub fn done(&self) -> bool {
        self.state.stopped || self.state.step >= self.config.max_steps
    }

    /// Runs one optimizer step.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let n = self.state.step;
        let cfg = &self.config;
        let mut rng = step_rng(cfg.seed, n);
        let batch = draw_batch(self.graph, self.corpora, cfg.batch_size, &mut rng)?;
        let settings = cfg.agreement_settings();
        let agreement = if cfg.gamma > 0.0 && n >= cfg.burn_in {
            let aux = sample_aux_language(self.graph, batch.pair.0, batch.pair.1, &mut rng)?;
            Some((cfg.gamma, aux, &settings))
        } else {
            None
        };
        let mut tape = Tape::new();
        let net = Net::bind(&mut tape, &self.state.params).with_dropout(rng.random());
        let (loss, breakdown) = step_loss(&mut tape, &net, self.graph, &batch, agreement, n + 1)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite { step: n + 1, detail: format!("{breakdown:?}") });
        }
        let grads = tape.backward(loss)?;
        let mut grads: Vec<Tensor> = net.vars.iter().map(|&v| grads.grad_or_zeros(&tape, v)).collect();
        drop(tape);
        if let Some(c) = cfg.clip_norm {
            let norm = clip_global_norm(&mut grads, c);
            if !norm.is_finite() {
                return Err(Error::NonFinite { step: n + 1, detail: format!("gradient norm {norm}") });
            }
        }
        let lr = cfg.schedule().rate(n as u64 + 1);
        self.state.adam.update(&mut self.state.params, &grads, lr);
        self.state.step = n + 1;
        self.state.elapsed_ms = self.clock_base + self.clock.elapsed().as_millis() as u64;
        self.history.push(breakdown.clone());
        Ok(breakdown)
    }

    /// Dev evaluation with early-stopping bookkeeping.
    fn evaluate(&mut self) -> Result<Option<f64>> {
        if self.dev.is_empty() {
            return Ok(None);
        }
        let loss = dev_loss(&self.state.params, self.graph, self.dev)?;
        if self.state.best_dev.is_none_or(|b| loss < b) {
            self.state.best_dev = Some(loss);
            self.state.best_params = Some(self.state.params.clone());
            self.state.bad_evals = 0;
        } else {
            self.state.bad_evals += 1;
            if self.config.patience.is_some_and(|p| self.state.bad_evals >= p) {
                self.state.stopped = true;
            }
        }
        Ok(Some(loss))
    }

    /// Trains until `until` completed steps (capped by `max_steps`) or early
    /// stopping, handing each metrics record to `sink`.
    pub fn run(&mut self, until: usize, mut sink: impl FnMut(&MetricsRecord) -> Result<()>) -> Result<()> {
        let until = until.min(self.config.max_steps);
        while self.state.step < until && !self.state.stopped {
            let b = self.step()?;
            let n = self.state.step;
            let last = n == self.config.max_steps;
            let dev_loss = if n % self.config.eval_interval == 0 || last { self.evaluate()? } else { None };
            if n % self.config.log_interval == 0 || dev_loss.is_some() || last || self.state.stopped {
                sink(&self.record(&b, dev_loss))?;
            }
        }
        Ok(())
    }

    pub fn record(&self, b: &LossBreakdown, dev_loss: Option<f64>) -> MetricsRecord {
        MetricsRecord {
            step: b.step,
            sup_loss: b.sup_loss,
            agree_s: b.agree_s,
            agree_t: b.agree_t,
            aux_lang: b.aux_lang.map(|l| self.graph.name(l).to_string()),
            total: b.total,
            dev_loss,
            wallclock_ms: self.state.elapsed_ms,
            mode: self.config.mode().to_string(),
        }
    }
}

/// Trains from a seeded initialization to completion; returns the final
/// state and the metrics records.
pub fn train(
    config: &TrainConfig,
    params: ModelParams,
    graph: &TranslationGraph,
    corpora: &BilingualCorpora,
    dev: &[ParallelTuple],
) -> Result<(TrainState, Vec<MetricsRecord>)> {
    let mut trainer = Trainer::new(config.clone(), graph, corpora, dev, TrainState::fresh(params))?;
    let mut records = vec![];
    trainer.run(config.max_steps, |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((trainer.state, records))
}
