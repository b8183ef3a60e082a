//! Exact enumeration over tiny sequence spaces.
//!
//! A [`TabularSystem`] holds a ground-truth joint over tuples of
//! equivalent sentences plus one model conditional per ordered language
//! pair, all as explicit tables, so every expectation is a finite sum.

mod theory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{Lang, TranslationGraph};

pub use theory::*;

/// Largest table the oracle builds before refusing.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// All sequences of length `1..=max_len` over `v` symbols, length-major and
/// then lexicographic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceSpace {
    pub v: usize,
    pub max_len: usize,
    seqs: Vec<Vec<usize>>,
}

impl SequenceSpace {
    pub fn new(v: usize, max_len: usize) -> Result<Self> {
        if v == 0 || max_len == 0 {
            return Err(invalid("sequence space needs v >= 1 and max_len >= 1"));
        }
        let size: u128 = (1..=max_len as u32).map(|l| (v as u128).pow(l)).sum();
        if size > ENUMERATION_CAP {
            return Err(Error::TooLarge { size, cap: ENUMERATION_CAP });
        }
        let mut seqs = vec![];
        for len in 1..=max_len {
            let mut cur = vec![0; len];
            loop {
                seqs.push(cur.clone());
                let mut pos = len;
                while pos > 0 {
                    pos -= 1;
                    cur[pos] += 1;
                    if cur[pos] < v {
                        break;
                    }
                    cur[pos] = 0;
                    if pos == 0 {
                        pos = usize::MAX;
                        break;
                    }
                }
                if pos == usize::MAX {
                    break;
                }
            }
        }
        Ok(Self { v, max_len, seqs })
    }

    pub fn size(&self) -> usize {
        self.seqs.len()
    }

    pub fn seq(&self, i: usize) -> &[usize] {
        &self.seqs[i]
    }

    pub fn seqs(&self) -> &[Vec<usize>] {
        &self.seqs
    }

    pub fn index_of(&self, seq: &[usize]) -> Option<usize> {
        if seq.is_empty() || seq.len() > self.max_len || seq.iter().any(|&t| t >= self.v) {
            return None;
        }
        let shorter: usize = (1..seq.len() as u32).map(|l| self.v.pow(l)).sum();
        Some(shorter + seq.iter().fold(0, |acc, &t| acc * self.v + t))
    }
}

/// Row-stochastic table `p(x_tgt | x_src)` over a [`SequenceSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularConditional {
    pub src: Lang,
    pub tgt: Lang,
    pub n: usize,
    probs: Vec<f64>,
}

impl TabularConditional {
    pub fn new(src: Lang, tgt: Lang, n: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n * n {
            return Err(invalid(format!("conditional table has {} entries, expected {}", probs.len(), n * n)));
        }
        let c = Self { src, tgt, n, probs };
        c.validate()?;
        Ok(c)
    }

    pub fn uniform(src: Lang, tgt: Lang, n: usize) -> Self {
        Self { src, tgt, n, probs: vec![1.0 / n as f64; n * n] }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            let row = self.row(i);
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(invalid(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(invalid(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, src: usize, tgt: usize) -> f64 {
        self.probs[src * self.n + tgt]
    }
}

/// Ground-truth joint plus model conditionals for every ordered pair.
#[derive(Clone, Debug)]
pub struct TabularSystem {
    pub graph: TranslationGraph,
    pub space: SequenceSpace,
    /// Indexed by `src * k + tgt`; diagonal entries are unused.
    conditionals: Vec<Option<TabularConditional>>,
    /// `p(x_1, ..., x_k)` with language 0 as the most significant digit.
    truth: Vec<f64>,
    pub seed: Option<u64>,
}

impl TabularSystem {
    pub fn new(graph: TranslationGraph, space: SequenceSpace, conditionals: Vec<TabularConditional>, truth: Vec<f64>) -> Result<Self> {
        let (k, n) = (graph.k(), space.size());
        let expected = (n as u128).pow(k as u32);
        if expected > ENUMERATION_CAP {
            return Err(Error::TooLarge { size: expected, cap: ENUMERATION_CAP });
        }
        if truth.len() as u128 != expected {
            return Err(invalid(format!("truth has {} entries, expected {expected}", truth.len())));
        }
        if truth.iter().any(|&p| !(p >= 0.0)) || (truth.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(invalid("truth must be a distribution"));
        }
        let mut slots = vec![None; k * k];
        for c in conditionals {
            if c.n != n || c.src == c.tgt || c.src.0 >= k || c.tgt.0 >= k {
                return Err(invalid(format!("conditional {}->{} does not fit the system", c.src.0, c.tgt.0)));
            }
            c.validate()?;
            let idx = c.src.0 * k + c.tgt.0;
            slots[idx] = Some(c);
        }
        for s in 0..k {
            for t in (0..k).filter(|&t| t != s) {
                if slots[s * k + t].is_none() {
                    return Err(invalid(format!("missing conditional {s}->{t}")));
                }
            }
        }
        Ok(Self { graph, space, conditionals: slots, truth, seed: None })
    }

    pub fn k(&self) -> usize {
        self.graph.k()
    }

    pub fn n(&self) -> usize {
        self.space.size()
    }

    pub fn model(&self, src: Lang, tgt: Lang) -> &TabularConditional {
        self.conditionals[src.0 * self.k() + tgt.0].as_ref().expect("validated at construction")
    }

    pub fn set_model(&mut self, c: TabularConditional) -> Result<()> {
        if c.n != self.n() || c.src == c.tgt {
            return Err(invalid("conditional does not fit the system"));
        }
        let k = self.k();
        let idx = c.src.0 * k + c.tgt.0;
        self.conditionals[idx] = Some(c);
        Ok(())
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    /// Digits of a flat tuple index, language 0 first.
    pub fn tuple(&self, mut idx: usize) -> Vec<usize> {
        let (k, n) = (self.k(), self.n());
        let mut out = vec![0; k];
        for l in (0..k).rev() {
            out[l] = idx % n;
            idx /= n;
        }
        out
    }

    /// Marginal of the truth over the listed languages, as a flat table
    /// with the first listed language most significant.
    pub fn marginal(&self, langs: &[Lang]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n.pow(langs.len() as u32)];
        for (idx, &p) in self.truth.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let t = self.tuple(idx);
            let j = langs.iter().fold(0, |acc, l| acc * n + t[l.0]);
            out[j] += p;
        }
        out
    }

    /// Truth conditional `p(x_tgt | x_src)`; rows of zero-mass sources are
    /// uniform.
    pub fn truth_conditional(&self, src: Lang, tgt: Lang) -> TabularConditional {
        let n = self.n();
        let joint = self.marginal(&[src, tgt]);
        let mut probs = vec![0.0; n * n];
        for i in 0..n {
            let z: f64 = joint[i * n..(i + 1) * n].iter().sum();
            for j in 0..n {
                probs[i * n + j] = if z > 0.0 { joint[i * n + j] / z } else { 1.0 / n as f64 };
            }
        }
        TabularConditional { src, tgt, n, probs }
    }
}

/// Knobs for randomized systems built from synonym families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSystemSpec {
    pub k: usize,
    /// Meaning-level symbols.
    pub base_vocab: usize,
    /// Surface synonyms per base symbol; the surface vocabulary has
    /// `base_vocab * m` symbols.
    pub m: usize,
    pub max_len: usize,
    /// Cap on any single synonym weight.
    pub max_weight: f64,
    /// Cap on the mixing weight of Dirichlet noise into model rows.
    pub max_perturbation: f64,
}

impl RandomSystemSpec {
    pub fn new(k: usize, base_vocab: usize, m: usize, max_len: usize) -> Self {
        Self { k, base_vocab, m, max_len, max_weight: 0.6, max_perturbation: 0.05 }
    }

    pub fn surface_vocab(&self) -> usize {
        self.base_vocab * self.m
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize, alpha: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    // normalized gamma draws; the crate's Dirichlet needs a compile-time size
    let g = Gamma::new(alpha, 1.0).expect("valid concentration");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
        let z: f64 = draws.iter().sum();
        if z > 0.0 && z.is_finite() {
            return draws.into_iter().map(|x| x / z).collect();
        }
    }
}

fn synonym_weights(rng: &mut ChaCha8Rng, m: usize, max_weight: f64) -> Result<Vec<f64>> {
    if m == 1 {
        return Ok(vec![1.0]);
    }
    if max_weight * m as f64 <= 1.0 - 1e-12 {
        return Err(invalid(format!("max weight {max_weight} is infeasible for {m} synonyms")));
    }
    if max_weight * m as f64 <= 1.0 + 1e-12 {
        return Ok(vec![1.0 / m as f64; m]);
    }
    for _ in 0..10_000 {
        let w = dirichlet(rng, m, 2.0);
        if w.iter().all(|&x| x <= max_weight) {
            return Ok(w);
        }
    }
    Ok(vec![1.0 / m as f64; m])
}

/// Synonym-family ground truth: a base sentence drawn from a random
/// distribution over base sequences, realized independently per language
/// by choosing among each base symbol's synonyms. Model conditionals are
/// the truth conditionals mixed with Dirichlet noise.
pub fn random_system(spec: &RandomSystemSpec, graph: TranslationGraph, seed: u64) -> Result<TabularSystem> {
    if graph.k() != spec.k {
        return Err(invalid("graph and spec disagree on k"));
    }
    if spec.base_vocab == 0 || spec.m == 0 {
        return Err(invalid("base_vocab and m must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.max_perturbation) {
        return Err(invalid("max_perturbation must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = SequenceSpace::new(spec.surface_vocab(), spec.max_len)?;
    let base = SequenceSpace::new(spec.base_vocab, spec.max_len)?;
    let (k, n) = (spec.k, space.size());
    let size = (n as u128).pow(k as u32);
    if size > ENUMERATION_CAP {
        return Err(Error::TooLarge { size, cap: ENUMERATION_CAP });
    }
    let base_p = dirichlet(&mut rng, base.size(), 1.0);
    // per language: a surface permutation and synonym weights per base symbol
    let mut ciphers = vec![];
    let mut weights = vec![];
    for _ in 0..k {
        let mut perm: Vec<usize> = (0..spec.surface_vocab()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        ciphers.push(perm);
        weights.push((0..spec.base_vocab).map(|_| synonym_weights(&mut rng, spec.m, spec.max_weight)).collect::<Result<Vec<_>>>()?);
    }
    // realization table per language: p(surface seq | base seq)
    let mut realize = vec![vec![vec![]; base.size()]; k];
    for l in 0..k {
        for (b, bseq) in base.seqs().iter().enumerate() {
            let mut options: Vec<(Vec<usize>, f64)> = vec![(vec![], 1.0)];
            for &sym in bseq {
                let mut next = vec![];
                for (prefix, p) in &options {
                    for (syn, &w) in weights[l][sym].iter().enumerate() {
                        let mut s = prefix.clone();
                        s.push(ciphers[l][sym * spec.m + syn]);
                        next.push((s, p * w));
                    }
                }
                options = next;
            }
            realize[l][b] = options.into_iter().map(|(s, p)| (space.index_of(&s).expect("in space"), p)).collect::<Vec<_>>();
        }
    }
    let mut truth = vec![0.0; n.pow(k as u32)];
    for (b, &pb) in base_p.iter().enumerate() {
        let mut partial: Vec<(usize, f64)> = vec![(0, pb)];
        for table in &realize {
            let mut next = Vec::with_capacity(partial.len() * table[b].len());
            for &(idx, p) in &partial {
                for &(s, q) in &table[b] {
                    next.push((idx * n + s, p * q));
                }
            }
            partial = next;
        }
        for (idx, p) in partial {
            truth[idx] += p;
        }
    }
    let mut sys = TabularSystem {
        graph,
        space,
        conditionals: vec![None; k * k],
        truth,
        seed: Some(seed),
    };
    let eta_max = spec.max_perturbation;
    for s in 0..k {
        for t in (0..k).filter(|&t| t != s) {
            let mut c = sys.truth_conditional(Lang(s), Lang(t));
            for i in 0..n {
                let eta = if eta_max > 0.0 { rng.random_range(0.0..=eta_max) } else { 0.0 };
                let noise = dirichlet(&mut rng, n, 1.0);
                for (j, e) in noise.into_iter().enumerate() {
                    let p = &mut c.probs[i * n + j];
                    *p = (1.0 - eta) * *p + eta * e;
                }
                let z: f64 = c.row(i).iter().sum();
                c.probs[i * n..(i + 1) * n].iter_mut().for_each(|p| *p /= z);
            }
            sys.conditionals[s * k + t] = Some(c);
        }
    }
    Ok(sys)
}

/// A system with a Dirichlet-random truth and independent Dirichlet-random
/// model rows (no structure shared between them).
pub fn random_unstructured_system(graph: TranslationGraph, v: usize, max_len: usize, seed: u64) -> Result<TabularSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = SequenceSpace::new(v, max_len)?;
    let (k, n) = (graph.k(), space.size());
    let size = (n as u128).pow(k as u32);
    if size > ENUMERATION_CAP {
        return Err(Error::TooLarge { size, cap: ENUMERATION_CAP });
    }
    let truth = dirichlet(&mut rng, n.pow(k as u32), 1.0);
    let mut conds = vec![];
    for s in 0..k {
        for t in (0..k).filter(|&t| t != s) {
            let probs = (0..n).flat_map(|_| dirichlet(&mut rng, n, 0.5)).collect();
            conds.push(TabularConditional { src: Lang(s), tgt: Lang(t), n, probs });
        }
    }
    let mut sys = TabularSystem::new(graph, space, conds, truth)?;
    sys.seed = Some(seed);
    Ok(sys)
}

/// Replaces every model conditional with the truth conditional.
pub fn with_truth_models(mut sys: TabularSystem) -> TabularSystem {
    let k = sys.k();
    for s in 0..k {
        for t in (0..k).filter(|&t| t != s) {
            let c = sys.truth_conditional(Lang(s), Lang(t));
            sys.conditionals[s * k + t] = Some(c);
        }
    }
    sys
}

/// Supervised chain `0 - 1 - 2` with `0 - 2` zero-shot.
pub fn chain_graph() -> TranslationGraph {
    TranslationGraph::new(&["L1", "L2", "L3"], &[(0, 1), (1, 2)]).expect("valid chain")
}
