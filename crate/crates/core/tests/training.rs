mod common;

use agmt_core::autodiff::{grad_check, Tape, Tensor, Var};
use agmt_core::corpus::Sentence;
use agmt_core::model::{ModelParams, Net};
use agmt_core::training::{
    agreement_terms, clip_global_norm, composite_loss_var, draw_batch, sample_aux_language, step_loss, step_rng, train, Adam, AgreementNets,
    AgreementSettings, Protection, TrainConfig, TrainState, Trainer,
};
use agmt_core::Lang;
use common::setup;

fn bits(p: &ModelParams) -> Vec<u64> {
    p.tensors.iter().flat_map(|t| t.data().iter().map(|x| x.to_bits())).collect()
}

fn config(gamma: f64, steps: usize) -> TrainConfig {
    TrainConfig { gamma, burn_in: 5, max_steps: steps, eval_interval: 10, log_interval: 1, ..Default::default() }
}

#[test]
fn zero_gamma_is_plain_composite_training() {
    let s = setup(3, 8, 60, 1);
    let cfg = config(0.0, 12);
    let (state, records) = train(&cfg, s.params.clone(), &s.graph, &s.corpora, &s.dev).unwrap();
    assert!(records.iter().all(|r| r.mode == "basic" && r.agree_s.is_none()));

    // independent loop: same batches, composite loss only
    let mut params = s.params.clone();
    let mut adam = Adam::new(&params);
    for n in 0..cfg.max_steps {
        let mut rng = step_rng(cfg.seed, n);
        let batch = draw_batch(&s.graph, &s.corpora, cfg.batch_size, &mut rng).unwrap();
        let mut tape = Tape::new();
        let net = Net::bind(&mut tape, &params);
        let loss = composite_loss_var(&mut tape, &net, &s.graph, &batch.items()).unwrap();
        let g = tape.backward(loss).unwrap();
        let mut grads: Vec<Tensor> = net.vars.iter().map(|&v| g.grad_or_zeros(&tape, v)).collect();
        clip_global_norm(&mut grads, cfg.clip_norm.unwrap());
        adam.update(&mut params, &grads, cfg.schedule().rate(n as u64 + 1));
    }
    assert_eq!(bits(&state.params), bits(&params));
}

#[test]
fn burn_in_withholds_agreement() {
    let s = setup(3, 6, 40, 2);
    let cfg = config(0.5, 9);
    let (_, records) = train(&cfg, s.params.clone(), &s.graph, &s.corpora, &s.dev).unwrap();
    for r in &records {
        // records carry 1-based step numbers; step n runs with n - 1 completed
        let on = r.step > cfg.burn_in;
        assert_eq!(r.agree_s.is_some(), on, "step {}", r.step);
        assert_eq!(r.aux_lang.is_some(), on);
        assert_eq!(r.mode, "agree");
    }
}

#[test]
fn total_is_supervised_plus_weighted_agreement() {
    let s = setup(3, 6, 40, 3);
    let gamma = 0.37;
    let (_, records) = train(&config(gamma, 8), s.params.clone(), &s.graph, &s.corpora, &s.dev).unwrap();
    for r in records.iter().filter(|r| r.agree_s.is_some()) {
        let expect = r.sup_loss + gamma * (r.agree_s.unwrap() + r.agree_t.unwrap());
        assert!((r.total - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }
}

#[test]
fn auxiliary_language_is_uniform() {
    let s = setup(4, 4, 30, 4);
    let mut counts = [0usize; 4];
    let mut rng = step_rng(9, 0);
    let n = 4000;
    for _ in 0..n {
        counts[sample_aux_language(&s.graph, Lang(0), Lang(2), &mut rng).unwrap().0] += 1;
    }
    assert_eq!(counts[0] + counts[2], 0);
    // binomial(4000, 1/2): three standard deviations is about 95
    for c in [counts[1], counts[3]] {
        assert!((c as f64 - 2000.0).abs() < 3.0 * (n as f64 * 0.25).sqrt(), "{counts:?}");
    }
    let two = setup(2, 4, 10, 4);
    assert!(sample_aux_language(&two.graph, Lang(0), Lang(1), &mut rng).is_err());
}

#[test]
fn agreement_needs_three_languages() {
    let s = setup(2, 4, 10, 5);
    let err = Trainer::new(config(0.1, 10), &s.graph, &s.corpora, &s.dev, TrainState::fresh(s.params.clone()));
    assert!(err.is_err());
    assert!(Trainer::new(config(0.0, 10), &s.graph, &s.corpora, &s.dev, TrainState::fresh(s.params.clone())).is_ok());
}

/// Gradients of `-(mean ell_s + mean ell_t)` w.r.t. four separately bound
/// copies of the parameters: decode_s, decode_t, score_t, score_s.
fn factor_grads(s: &common::Setup, protection: Protection) -> Vec<Vec<Tensor>> {
    let mut rng = step_rng(3, 0);
    let batch = draw_batch(&s.graph, &s.corpora, 4, &mut rng).unwrap();
    let (a, b) = batch.pair;
    let aux = sample_aux_language(&s.graph, a, b, &mut rng).unwrap();
    let xs: Vec<&Sentence> = batch.rows.iter().map(|r| r.0).collect();
    let xt: Vec<&Sentence> = batch.rows.iter().map(|r| r.1).collect();
    let mut tape = Tape::new();
    let nets: Vec<Net> = (0..4).map(|_| Net::bind(&mut tape, &s.params)).collect();
    let settings = AgreementSettings { protection, ..Default::default() };
    let nets_ref = AgreementNets { decode_s: &nets[0], decode_t: &nets[1], score_t: &nets[2], score_s: &nets[3] };
    let terms = agreement_terms(&mut tape, nets_ref, &s.graph, &xs, &xt, (a, b), aux, &settings).unwrap();
    let both = tape.add(terms.ell_s, terms.ell_t).unwrap();
    let sum = tape.reduce_sum(both);
    let loss = tape.scale(sum, -1.0);
    let g = tape.backward(loss).unwrap();
    nets.iter().map(|n| n.vars.iter().map(|&v| g.grad_or_zeros(&tape, v)).collect()).collect()
}

fn all_zero(g: &[Tensor]) -> bool {
    g.iter().all(|t| t.data().iter().all(|x| x.to_bits() == 0))
}

#[test]
fn protection_zeroes_exactly_the_supervised_factors() {
    // hub graph: the batch pair is (L0, Lx); L0 -> aux is supervised and
    // Lx -> aux is zero-shot
    let s = setup(3, 6, 40, 6);
    let off = factor_grads(&s, Protection::None);
    let on = factor_grads(&s, Protection::Samples);
    let strict = factor_grads(&s, Protection::SamplesAndScorers);
    assert!(off.iter().all(|g| !all_zero(g)));
    assert!(all_zero(&on[0]));
    assert!(!all_zero(&on[1]) && !all_zero(&on[2]) && !all_zero(&on[3]));
    assert!(all_zero(&strict[0]) && all_zero(&strict[3]));
    assert!(!all_zero(&strict[1]) && !all_zero(&strict[2]));
    // the term scored along the supervised edge is a constant, so the
    // zero-shot sample it scores gets nothing either
    let terms = factor_grads(&s, Protection::Terms);
    assert!(all_zero(&terms[0]) && all_zero(&terms[1]) && all_zero(&terms[3]));
    assert!(!all_zero(&terms[2]));
    // unblocked factors see the same gradient with or without protection
    for (x, y) in off[1].iter().zip(&on[1]).chain(off[2].iter().zip(&on[2])).chain(off[2].iter().zip(&terms[2])) {
        assert_eq!(x, y);
    }
}

#[test]
fn full_agreement_graph_matches_finite_differences() {
    let s = setup(3, 3, 20, 7);
    let mut rng = step_rng(1, 0);
    let batch = draw_batch(&s.graph, &s.corpora, 2, &mut rng).unwrap();
    let aux = sample_aux_language(&s.graph, batch.pair.0, batch.pair.1, &mut rng).unwrap();
    let settings = AgreementSettings { protection: Protection::None, ..Default::default() };
    let hyper = s.params.hyper.clone();
    let report = grad_check(
        |tape: &mut Tape, vars: &[Var]| {
            let net = Net::from_vars(tape, vars.to_vec(), &hyper)?;
            Ok(step_loss(tape, &net, &s.graph, &batch, Some((0.5, aux, &settings)), 1)?.0)
        },
        &s.params.tensors,
        1e-5,
        None,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-3, "{:?} {}", report.worst, report.max_rel_error);
}

#[test]
fn small_steps_descend() {
    let s = setup(3, 6, 40, 8);
    let mut decreased = 0;
    let trials = 100;
    for trial in 0..trials {
        let mut rng = step_rng(100 + trial, 0);
        let batch = draw_batch(&s.graph, &s.corpora, 4, &mut rng).unwrap();
        let aux = sample_aux_language(&s.graph, batch.pair.0, batch.pair.1, &mut rng).unwrap();
        let settings = AgreementSettings::default();
        let eval = |p: &ModelParams| -> (f64, Vec<Tensor>) {
            let mut tape = Tape::new();
            let net = Net::bind(&mut tape, p);
            let (loss, _) = step_loss(&mut tape, &net, &s.graph, &batch, Some((0.01, aux, &settings)), 1).unwrap();
            let g = tape.backward(loss).unwrap();
            (tape.value(loss).item(), net.vars.iter().map(|&v| g.grad_or_zeros(&tape, v)).collect())
        };
        let (before, grads) = eval(&s.params);
        let mut p = s.params.clone();
        Adam::new(&p).update(&mut p, &grads, 1e-5);
        if eval(&p).0 <= before {
            decreased += 1;
        }
    }
    assert!(decreased >= 95, "{decreased}/{trials}");
}

#[test]
fn run_windows_concatenate() {
    let s = setup(3, 6, 40, 9);
    let cfg = TrainConfig { log_interval: 3, ..config(0.2, 14) };
    let (whole_state, whole) = train(&cfg, s.params.clone(), &s.graph, &s.corpora, &s.dev).unwrap();
    let mut trainer = Trainer::new(cfg.clone(), &s.graph, &s.corpora, &s.dev, TrainState::fresh(s.params.clone())).unwrap();
    let mut parts = vec![];
    for until in [4, 9, 14, 20] {
        trainer.run(until, |r| {
            parts.push(r.clone());
            Ok(())
        })
        .unwrap();
    }
    let strip = |rs: &[agmt_core::training::MetricsRecord]| rs.iter().map(|r| (r.step, r.total.to_bits(), r.dev_loss.map(f64::to_bits))).collect::<Vec<_>>();
    assert_eq!(strip(&whole), strip(&parts));
    assert_eq!(bits(&whole_state.params), bits(&trainer.state.params));
    assert!(trainer.done());
    let steps: Vec<usize> = whole.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![3, 6, 9, 10, 12, 14]);
}

#[test]
fn checkpoint_resume_is_exact() {
    let s = setup(3, 6, 40, 10);
    let cfg = config(0.2, 16);
    let (_, whole) = train(&cfg, s.params.clone(), &s.graph, &s.corpora, &s.dev).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    let mut first = vec![];
    let mut t = Trainer::new(cfg.clone(), &s.graph, &s.corpora, &s.dev, TrainState::fresh(s.params.clone())).unwrap();
    t.run(8, |r| {
        first.push(r.clone());
        Ok(())
    })
    .unwrap();
    t.state.save(&path).unwrap();
    let mut t = Trainer::new(cfg, &s.graph, &s.corpora, &s.dev, TrainState::load(&path).unwrap()).unwrap();
    t.run(16, |r| {
        first.push(r.clone());
        Ok(())
    })
    .unwrap();
    let strip = |mut r: agmt_core::training::MetricsRecord| {
        r.wallclock_ms = 0;
        serde_json::to_string(&r).unwrap()
    };
    assert_eq!(whole.into_iter().map(strip).collect::<Vec<_>>(), first.into_iter().map(strip).collect::<Vec<_>>());
}

#[test]
fn composite_loss_of_a_zero_model() {
    use agmt_core::model::Hyperparams;
    use agmt_core::training::composite_loss;
    let graph = agmt_core::TranslationGraph::hub(&["A", "B"]).unwrap();
    let h = Hyperparams { vocab_size: 16, num_langs: 2, hidden_size: 4, embed_size: 3, dropout: 0.0, max_len: 8 };
    let p = ModelParams::zeros(&h).unwrap();
    let x = Sentence::new(vec![5, 6, 7]);
    let y = Sentence::new(vec![8, 9, 10, 11]);
    let one = composite_loss(&p, &graph, &[(&x, &y, (Lang(0), Lang(1)))]).unwrap();
    // four tokens and end of sequence, each uniform over 16 ids
    assert!((one - 5.0 * 16f64.ln()).abs() < 1e-12);
    let init = ModelParams::init(&h, 3).unwrap();
    let item = (&x, &y, (Lang(0), Lang(1)));
    let single = composite_loss(&init, &graph, &[item]).unwrap();
    let doubled = composite_loss(&init, &graph, &[item, item, item]).unwrap();
    assert!((single - doubled).abs() < 1e-12 && single >= 0.0);
    assert!(composite_loss(&init, &graph, &[(&x, &y, (Lang(1), Lang(1)))]).is_err());
}

#[test]
fn supervised_loss_falls_across_windows() {
    let s = setup(3, 16, 400, 11);
    let cfg = TrainConfig { gamma: 0.0, batch_size: 8, max_steps: 200, burn_in: 200, log_interval: 1, eval_interval: 200, lr: 3e-3, ..Default::default() };
    let (_, records) = train(&cfg, s.params.clone(), &s.graph, &s.corpora, &s.dev).unwrap();
    let loss: Vec<f64> = records.iter().map(|r| r.sup_loss).collect();
    assert_eq!(loss.len(), 200);
    // per-step losses come from different batches; compare 10-step means
    let mean = |i: usize| loss[i..i + 10].iter().sum::<f64>() / 10.0;
    let windows = 200 - 50 - 10 + 1;
    let falling = (0..windows).filter(|&i| mean(i + 50) < mean(i)).count();
    assert!(falling as f64 >= 0.9 * windows as f64, "{falling}/{windows}");
}
