//! Greedy discrete decoding, greedy continuous decoding, and pivoting.

use crate::autodiff::{Tape, Tensor};
use crate::corpus::{Sentence, BOS, EOS};
use crate::error::{invalid, Result};
use crate::graph::Lang;
use crate::model::{ModelParams, Net, SoftDecode};

/// Raw greedy output: every emitted id in order, reserved ids included,
/// ending with end-of-sequence when it was produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GreedyTrace {
    pub ids: Vec<usize>,
    pub finished: bool,
}

impl GreedyTrace {
    /// Content tokens before end-of-sequence.
    pub fn sentence(&self, content_offset: usize) -> Sentence {
        Sentence::new(self.ids.iter().copied().filter(|&t| t >= content_offset).collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding of a batch into `tgt`, at most `max_len` emitted ids
/// per row.
pub fn greedy_traces(params: &ModelParams, sources: &[&Sentence], tgt: Lang, max_len: usize) -> Result<Vec<GreedyTrace>> {
    if max_len == 0 {
        return Err(invalid("max_len must be at least 1"));
    }
    if sources.is_empty() {
        return Ok(vec![]);
    }
    let b = sources.len();
    let tag = params.hyper.tag(tgt);
    let mut tape = Tape::new();
    let net = Net::bind_constant(&mut tape, params);
    let enc = net.encode(&mut tape, sources, &vec![tag; b])?;
    let mut state = net.init_state(&mut tape, &enc)?;
    let mut input = net.target_embedding(&mut tape, &vec![BOS; b])?;
    let mut traces = vec![GreedyTrace { ids: vec![], finished: false }; b];
    for _ in 0..max_len {
        let out = net.step(&mut tape, state, input, &enc)?;
        state = out.state;
        let logits = tape.value(out.logits);
        let mut next = Vec::with_capacity(b);
        for (r, trace) in traces.iter_mut().enumerate() {
            let id = argmax(logits.row(r));
            if !trace.finished {
                trace.ids.push(id);
                trace.finished = id == EOS;
            }
            next.push(id);
        }
        if traces.iter().all(|t| t.finished) {
            break;
        }
        input = net.target_embedding(&mut tape, &next)?;
    }
    Ok(traces)
}

/// Greedy translations of a batch; reserved ids are dropped from the output.
pub fn greedy_decode_batch(params: &ModelParams, sources: &[&Sentence], tgt: Lang, max_len: usize) -> Result<Vec<Sentence>> {
    let offset = params.hyper.content_offset();
    Ok(greedy_traces(params, sources, tgt, max_len)?.iter().map(|t| t.sentence(offset)).collect())
}

pub fn greedy_decode(params: &ModelParams, source: &Sentence, tgt: Lang, max_len: usize) -> Result<Sentence> {
    Ok(greedy_decode_batch(params, &[source], tgt, max_len)?.remove(0))
}

/// Concrete continuous-decoding output: `T x |V|` distributions and the
/// `T x E` embedding mixtures fed back as decoder inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftOutput {
    pub dists: Tensor,
    pub embeds: Tensor,
}

pub fn continuous_greedy_decode(params: &ModelParams, source: &Sentence, tgt: Lang, steps: usize, opts: SoftDecode) -> Result<SoftOutput> {
    if steps == 0 {
        return Err(invalid("continuous decoding needs at least one step"));
    }
    let mut tape = Tape::new();
    let net = Net::bind_constant(&mut tape, params);
    let enc = net.encode(&mut tape, &[source], &[params.hyper.tag(tgt)])?;
    let soft = net.continuous_decode(&mut tape, &enc, &[steps], opts)?;
    let rows = |vars: &[crate::autodiff::Var]| -> Result<Tensor> {
        Tensor::from_rows(&vars.iter().map(|&v| tape.value(v).row(0).to_vec()).collect::<Vec<_>>())
    };
    Ok(SoftOutput { dists: rows(&soft.dists)?, embeds: rows(&soft.embeds)? })
}

/// Result of translating through a chain of languages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PivotOutput {
    pub sentence: Sentence,
    /// Some intermediate translation came out empty; the output is empty too.
    pub empty_intermediate: bool,
}

/// Greedy translation along consecutive edges of `path`, for a batch of
/// sources in `path[0]`.
pub fn pivot_translate_batch(params: &ModelParams, sources: &[&Sentence], path: &[Lang], max_len: usize) -> Result<Vec<PivotOutput>> {
    if path.len() < 2 {
        return Err(invalid("a pivot path needs at least two languages"));
    }
    let mut current: Vec<Sentence> = sources.iter().map(|s| (*s).clone()).collect();
    let mut empty = vec![false; sources.len()];
    for (hop, &lang) in path[1..].iter().enumerate() {
        let last = hop + 2 == path.len();
        let live: Vec<usize> = (0..current.len()).filter(|&i| !empty[i]).collect();
        let batch: Vec<&Sentence> = live.iter().map(|&i| &current[i]).collect();
        let out = greedy_decode_batch(params, &batch, lang, max_len)?;
        for (i, s) in live.into_iter().zip(out) {
            if !last && s.is_empty() {
                empty[i] = true;
            }
            current[i] = s;
        }
        for (i, e) in empty.iter().enumerate() {
            if *e {
                current[i] = Sentence::default();
            }
        }
    }
    Ok(current.into_iter().zip(empty).map(|(sentence, empty_intermediate)| PivotOutput { sentence, empty_intermediate }).collect())
}

pub fn pivot_translate(params: &ModelParams, source: &Sentence, path: &[Lang], max_len: usize) -> Result<PivotOutput> {
    Ok(pivot_translate_batch(params, &[source], path, max_len)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyperparams;

    fn params(seed: u64) -> ModelParams {
        let h = Hyperparams { vocab_size: 14, num_langs: 3, hidden_size: 8, embed_size: 8, dropout: 0.0, max_len: 10 };
        ModelParams::init(&h, seed).unwrap()
    }

    fn s(ts: &[usize]) -> Sentence {
        Sentence::new(ts.to_vec())
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let p = params(2);
        let x = s(&[6, 7, 8, 9]);
        let a = greedy_decode(&p, &x, Lang(1), 10).unwrap();
        assert_eq!(a, greedy_decode(&p, &x, Lang(1), 10).unwrap());
        assert!(greedy_decode(&p, &x, Lang(1), 1).unwrap().len() <= 1);
        assert!(greedy_decode(&p, &x, Lang(1), 0).is_err());
    }

    #[test]
    fn batch_matches_single_decoding() {
        let p = params(4);
        let xs = [s(&[6, 7, 8, 9, 10]), s(&[11]), s(&[12, 13, 6])];
        let refs: Vec<&Sentence> = xs.iter().collect();
        let batch = greedy_traces(&p, &refs, Lang(2), 10).unwrap();
        for (x, t) in xs.iter().zip(&batch) {
            assert_eq!(&greedy_traces(&p, &[x], Lang(2), 10).unwrap()[0], t);
        }
    }

    #[test]
    fn degenerate_pivot_is_direct_decoding() {
        let p = params(6);
        for x in [s(&[6, 7]), s(&[8, 9, 10, 11, 12])] {
            let piv = pivot_translate(&p, &x, &[Lang(0), Lang(2)], 10).unwrap();
            assert_eq!(piv.sentence, greedy_decode(&p, &x, Lang(2), 10).unwrap());
        }
        assert!(pivot_translate(&p, &s(&[6]), &[Lang(0)], 10).is_err());
    }

    #[test]
    fn soft_mixtures_are_exact_products() {
        let p = params(8);
        let out = continuous_greedy_decode(&p, &s(&[6, 7, 8]), Lang(1), 5, SoftDecode::default()).unwrap();
        assert_eq!(out.dists.shape(), [5, 14]);
        let e = p.tgt_embed();
        for t in 0..5 {
            let q = out.dists.row(t);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..8 {
                let z: f64 = (0..14).map(|v| q[v] * e.get(v, j)).sum();
                assert!((z - out.embeds.get(t, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_decoder_state_gives_uniform_mixture() {
        let mut p = ModelParams::zeros(&params(0).hyper).unwrap();
        p.tensors[crate::model::slot::TGT_EMBED] = params(3).tgt_embed().clone();
        let out = continuous_greedy_decode(&p, &s(&[6, 7]), Lang(0), 3, SoftDecode::default()).unwrap();
        let e = p.tgt_embed();
        for t in 0..3 {
            assert!(out.dists.row(t).iter().all(|&q| (q - 1.0 / 14.0).abs() < 1e-15));
            for j in 0..8 {
                let mean = (0..14).map(|v| e.get(v, j)).sum::<f64>() / 14.0;
                assert!((out.embeds.get(t, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaled_logits_saturate() {
        let mut p = params(5);
        for t in &mut p.tensors {
            *t = t.map(|v| v * 12.0);
        }
        let x = s(&[6, 7, 8]);
        let peak = |scale: f64, step: usize| {
            let opts = SoftDecode { logit_scale: scale, content_only: false };
            let out = continuous_greedy_decode(&p, &x, Lang(1), 4, opts).unwrap();
            let q = out.dists.row(step).to_vec();
            q[argmax(&q)]
        };
        // the first step sees the same logits at every scale
        let firsts: Vec<f64> = [1.0, 10.0, 100.0, 1e3, 1e4].iter().map(|&sc| peak(sc, 0)).collect();
        assert!(firsts.windows(2).all(|w| w[1] >= w[0]), "{firsts:?}");
        for t in 0..4 {
            assert!(peak(1e4, t) >= 0.999);
        }
    }

    #[test]
    fn content_only_mass_stays_on_content() {
        let p = params(7);
        let opts = SoftDecode { logit_scale: 1.0, content_only: true };
        let out = continuous_greedy_decode(&p, &s(&[6, 7]), Lang(1), 3, opts).unwrap();
        for t in 0..3 {
            assert!(out.dists.row(t)[..6].iter().all(|&q| q == 0.0));
        }
    }
}
