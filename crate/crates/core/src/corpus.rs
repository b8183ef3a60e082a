//! Synthetic families of equivalent languages, bilingual corpora cut
//! from them without multi-parallel overlap, and the TSV corpus format.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{Edge, Lang, TranslationGraph};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub(crate) const FIRST_TAG: usize = 3;

/// Shared vocabulary: padding, begin/end markers, one target-language tag
/// per language, then the content tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    num_langs: usize,
}

impl Vocab {
    pub fn new(num_langs: usize, content_size: usize) -> Self {
        let mut tokens = vec!["<pad>".to_string(), "<s>".into(), "</s>".into()];
        tokens.extend((0..num_langs).map(|l| format!("<2L{l}>")));
        tokens.extend((0..content_size).map(|i| format!("w{i}")));
        Self { tokens, num_langs }
    }

    /// Total size including reserved tokens.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Number of content tokens, `|V|`.
    pub fn content_size(&self) -> usize {
        self.tokens.len() - self.content_offset()
    }

    pub fn content_offset(&self) -> usize {
        FIRST_TAG + self.num_langs
    }

    pub fn num_reserved(&self) -> usize {
        self.content_offset()
    }

    pub fn tag(&self, l: Lang) -> usize {
        debug_assert!(l.0 < self.num_langs);
        FIRST_TAG + l.0
    }

    pub fn is_content(&self, id: usize) -> bool {
        id >= self.content_offset() && id < self.tokens.len()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        // content tokens are `w<i>`; everything else is a short linear scan
        if let Some(i) = token.strip_prefix('w').and_then(|s| s.parse::<usize>().ok()) {
            let id = self.content_offset() + i;
            return (id < self.tokens.len() && self.tokens[id] == token).then_some(id);
        }
        self.tokens.iter().position(|t| t == token)
    }

    pub fn render(&self, s: &Sentence) -> String {
        s.tokens.iter().map(|&t| self.token(t)).collect::<Vec<_>>().join(" ")
    }
}

/// Sequence of content-token ids (global vocabulary ids).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<usize>,
}

impl Sentence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Parameters of a synthetic family of `k` equivalent languages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub k: usize,
    /// Base (meaning) vocabulary size.
    pub vocab_size: usize,
    /// Synonym fan-out: surface tokens per base token in every language.
    pub m: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Content tokens available; defaults to `vocab_size * m`.
    pub content_size: Option<usize>,
    /// Draw a random token cipher per language (language 0 stays identity).
    pub cipher: bool,
    /// Languages whose surface order is reversed.
    pub reversed: Vec<bool>,
    pub seed: u64,
}

impl FamilySpec {
    pub fn new(k: usize, vocab_size: usize, m: usize, min_len: usize, max_len: usize, seed: u64) -> Self {
        Self { k, vocab_size, m, min_len, max_len, content_size: None, cipher: true, reversed: vec![], seed }
    }
}

/// One sentence per language, all rendering the same base sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelTuple {
    pub id: usize,
    pub base: Vec<usize>,
    pub sentences: Vec<Sentence>,
}

/// A family with exactly known joint distribution.
///
/// Base sentences come from a bigram-biased categorical sampler with a
/// uniform length in `[min_len, max_len]`. Each language maps every base
/// token to one of `m` equally likely surface tokens (disjoint synonym
/// sets) and optionally reverses the order.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFamily {
    spec: FamilySpec,
    vocab: Vocab,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    /// `synonyms[lang][base]` = surface ids.
    synonyms: Vec<Vec<Vec<usize>>>,
    /// `inverse[lang][surface id]` = base token.
    inverse: Vec<BTreeMap<usize, usize>>,
    reversed: Vec<bool>,
}

fn gamma_simplex(rng: &mut ChaCha8Rng, n: usize, shape: f64) -> Vec<f64> {
    let g = Gamma::new(shape, 1.0).expect("positive shape");
    let mut v: Vec<f64> = (0..n).map(|_| g.sample(rng).max(1e-12)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn counter_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) << 20);
    rng
}

impl SyntheticFamily {
    pub fn generate(spec: &FamilySpec) -> Result<Self> {
        if spec.k < 2 {
            return Err(invalid("a family needs k >= 2 languages"));
        }
        if spec.vocab_size == 0 || spec.m == 0 {
            return Err(invalid("vocab_size and m must be positive"));
        }
        if spec.min_len == 0 || spec.min_len > spec.max_len {
            return Err(invalid(format!("length range [{}, {}] is empty or starts at 0", spec.min_len, spec.max_len)));
        }
        let needed = spec.vocab_size * spec.m;
        let content = spec.content_size.unwrap_or(needed);
        if needed > content {
            return Err(invalid(format!("vocab_size * m = {needed} exceeds {content} available content tokens")));
        }
        if !spec.reversed.is_empty() && spec.reversed.len() != spec.k {
            return Err(invalid("reversed flags must list every language"));
        }
        let vocab = Vocab::new(spec.k, content);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let initial = gamma_simplex(&mut rng, spec.vocab_size, 1.0);
        let transition = (0..spec.vocab_size)
            .map(|_| {
                let bias = gamma_simplex(&mut rng, spec.vocab_size, 0.5);
                let row: Vec<f64> = initial.iter().zip(&bias).map(|(u, b)| u * b + 1e-3 / spec.vocab_size as f64).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(|x| x / s).collect()
            })
            .collect();

        let offset = vocab.content_offset();
        let mut synonyms = Vec::with_capacity(spec.k);
        let mut inverse = Vec::with_capacity(spec.k);
        for lang in 0..spec.k {
            let mut surface: Vec<usize> = (0..content).collect();
            if spec.cipher && lang > 0 {
                surface.shuffle(&mut rng);
            }
            let sets: Vec<Vec<usize>> =
                (0..spec.vocab_size).map(|b| surface[b * spec.m..(b + 1) * spec.m].iter().map(|s| s + offset).collect()).collect();
            let inv = sets.iter().enumerate().flat_map(|(b, set)| set.iter().map(move |&s| (s, b))).collect();
            synonyms.push(sets);
            inverse.push(inv);
        }
        let reversed = if spec.reversed.is_empty() { vec![false; spec.k] } else { spec.reversed.clone() };
        Ok(Self { spec: spec.clone(), vocab, initial, transition, synonyms, inverse, reversed })
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn is_reversed(&self, l: Lang) -> bool {
        self.reversed[l.0]
    }

    pub fn synonyms(&self, l: Lang, base_token: usize) -> &[usize] {
        &self.synonyms[l.0][base_token]
    }

    fn length_prob(&self) -> f64 {
        1.0 / (self.spec.max_len - self.spec.min_len + 1) as f64
    }

    pub fn sample_base(&self, rng: &mut impl Rng) -> Vec<usize> {
        let len = rng.random_range(self.spec.min_len..=self.spec.max_len);
        let mut base = Vec::with_capacity(len);
        let mut dist = &self.initial;
        for _ in 0..len {
            let w = sample_categorical(dist, rng);
            base.push(w);
            dist = &self.transition[w];
        }
        base
    }

    /// Surface form of `base` in language `l` with synonym choices from `rng`.
    pub fn realize(&self, base: &[usize], l: Lang, rng: &mut impl Rng) -> Sentence {
        let mut tokens: Vec<usize> = base
            .iter()
            .map(|&b| {
                let set = &self.synonyms[l.0][b];
                if set.len() == 1 { set[0] } else { set[rng.random_range(0..set.len())] }
            })
            .collect();
        if self.reversed[l.0] {
            tokens.reverse();
        }
        Sentence::new(tokens)
    }

    /// Inverse of [`SyntheticFamily::realize`]; `None` for tokens outside the language.
    pub fn base_of(&self, s: &Sentence, l: Lang) -> Option<Vec<usize>> {
        let mut base: Vec<usize> = s.tokens.iter().map(|t| self.inverse[l.0].get(t).copied()).collect::<Option<_>>()?;
        if self.reversed[l.0] {
            base.reverse();
        }
        Some(base)
    }

    pub fn base_log_prob(&self, base: &[usize]) -> f64 {
        if base.len() < self.spec.min_len || base.len() > self.spec.max_len {
            return f64::NEG_INFINITY;
        }
        let mut lp = self.length_prob().ln();
        let mut dist = &self.initial;
        for &w in base {
            lp += dist[w].ln();
            dist = &self.transition[w];
        }
        lp
    }

    /// Ground-truth `log p(x_tgt | x_src)`: each of the `m^l` equivalent
    /// renderings is equally likely, every other sentence has probability 0.
    pub fn conditional_log_prob(&self, src: &Sentence, src_lang: Lang, tgt: &Sentence, tgt_lang: Lang) -> f64 {
        match (self.base_of(src, src_lang), self.base_of(tgt, tgt_lang)) {
            (Some(a), Some(b)) if a == b && self.base_log_prob(&a).is_finite() => {
                -(a.len() as f64) * (self.spec.m as f64).ln()
            }
            _ => f64::NEG_INFINITY,
        }
    }

    /// Ground-truth joint log-probability of a tuple.
    pub fn tuple_log_prob(&self, t: &ParallelTuple) -> f64 {
        let per_lang = -(t.base.len() as f64) * (self.spec.m as f64).ln();
        self.base_log_prob(&t.base) + per_lang * self.k() as f64
    }

    /// Expected number of occurrences of each base token per sentence.
    pub fn expected_base_counts(&self) -> Vec<f64> {
        let v = self.spec.vocab_size;
        let mut counts = vec![0.0; v];
        let mut marginal = self.initial.clone();
        for pos in 0..self.spec.max_len {
            let remaining = (pos + 1).max(self.spec.min_len)..=self.spec.max_len;
            let p_reach = remaining.count() as f64 * self.length_prob();
            for (c, m) in counts.iter_mut().zip(&marginal) {
                *c += p_reach * m;
            }
            let mut next = vec![0.0; v];
            for (i, m) in marginal.iter().enumerate() {
                for (n, t) in next.iter_mut().zip(&self.transition[i]) {
                    *n += m * t;
                }
            }
            marginal = next;
        }
        counts
    }

    /// `n` i.i.d. tuples; tuple `i` depends only on `(seed, i)`.
    pub fn sample_tuples(&self, n: usize, seed: u64) -> Vec<ParallelTuple> {
        self.sample_tuple_range(seed, 0..n)
    }

    /// Like [`SyntheticFamily::sample_tuples`] but skips tuples whose base
    /// sentence is already in `seen`, so splits drawn with a shared `seen`
    /// never repeat a meaning.
    pub fn sample_distinct_tuples(&self, n: usize, seed: u64, seen: &mut HashSet<Vec<usize>>) -> Result<Vec<ParallelTuple>> {
        let mut out = Vec::with_capacity(n);
        let budget = n.saturating_mul(100).max(1000);
        for id in 0..budget {
            if out.len() == n {
                break;
            }
            let t = self.sample_tuple_range(seed, id..id + 1).pop().expect("one tuple");
            if seen.insert(t.base.clone()) {
                out.push(t);
            }
        }
        if out.len() < n {
            return Err(invalid(format!("could only draw {} distinct sentences of {n} requested", out.len())));
        }
        Ok(out)
    }

    pub fn sample_tuple_range(&self, seed: u64, ids: std::ops::Range<usize>) -> Vec<ParallelTuple> {
        ids.map(|id| {
            let mut rng = counter_rng(seed, 1, id as u64);
            let base = self.sample_base(&mut rng);
            let sentences = (0..self.k()).map(|l| self.realize(&base, Lang(l), &mut rng)).collect();
            ParallelTuple { id, base, sentences }
        })
        .collect()
    }
}

fn sample_categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Parallel pairs for one direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub src: Lang,
    pub tgt: Lang,
    pub pairs: Vec<(Sentence, Sentence)>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn reversed(&self) -> Corpus {
        Corpus { src: self.tgt, tgt: self.src, pairs: self.pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect() }
    }
}

/// Directed corpora for every supervised edge plus the tuple ids behind
/// each unordered pair.
#[derive(Clone, Debug)]
pub struct BilingualCorpora {
    pub corpora: BTreeMap<Edge, Corpus>,
    pub assignment: BTreeMap<Edge, Vec<usize>>,
}

impl BilingualCorpora {
    /// Rebuilds from one corpus per unordered pair (either direction).
    pub fn from_pair_corpora(graph: &TranslationGraph, corpora: Vec<Corpus>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for c in corpora {
            if !graph.is_supervised(c.src, c.tgt) {
                return Err(invalid(format!("corpus for zero-shot direction {}", graph.edge_label((c.src, c.tgt)))));
            }
            out.insert((c.tgt, c.src), c.reversed());
            out.insert((c.src, c.tgt), c);
        }
        for e in graph.supervised() {
            if out.get(e).is_none_or(Corpus::is_empty) {
                return Err(invalid(format!("no training data for supervised edge {}", graph.edge_label(*e))));
            }
        }
        Ok(Self { corpora: out, assignment: BTreeMap::new() })
    }

    pub fn get(&self, e: Edge) -> Option<&Corpus> {
        self.corpora.get(&e)
    }
}

/// Partitions tuples round-robin over the supervised unordered pairs so no
/// tuple reaches two corpora. Zero-shot edges get nothing.
pub fn make_bilingual_corpora(tuples: &[ParallelTuple], graph: &TranslationGraph) -> Result<BilingualCorpora> {
    if !graph.is_spanning() {
        return Err(invalid("supervised edges do not span the translation graph"));
    }
    let pairs = graph.supervised_pairs();
    if tuples.len() < pairs.len() {
        return Err(invalid(format!("{} tuples cannot cover {} supervised pairs", tuples.len(), pairs.len())));
    }
    let mut corpora = BTreeMap::new();
    let mut assignment: BTreeMap<Edge, Vec<usize>> = BTreeMap::new();
    for &(a, b) in &pairs {
        corpora.insert((a, b), Corpus { src: a, tgt: b, pairs: vec![] });
        corpora.insert((b, a), Corpus { src: b, tgt: a, pairs: vec![] });
    }
    for (i, t) in tuples.iter().enumerate() {
        let (a, b) = pairs[i % pairs.len()];
        let (sa, sb) = (&t.sentences[a.0], &t.sentences[b.0]);
        corpora.get_mut(&(a, b)).expect("inserted").pairs.push((sa.clone(), sb.clone()));
        corpora.get_mut(&(b, a)).expect("inserted").pairs.push((sb.clone(), sa.clone()));
        assignment.entry((a, b)).or_default().push(t.id);
    }
    Ok(BilingualCorpora { corpora, assignment })
}

/// Writes `src_name \t tgt_name \t src tokens \t tgt tokens` lines.
pub fn write_corpus(corpus: &Corpus, graph: &TranslationGraph, vocab: &Vocab, path: &Path) -> Result<()> {
    let mut out = String::new();
    let (s, t) = (graph.name(corpus.src), graph.name(corpus.tgt));
    for (a, b) in &corpus.pairs {
        writeln!(out, "{s}\t{t}\t{}\t{}", vocab.render(a), vocab.render(b)).expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a TSV corpus file, grouping lines by direction in order of first
/// appearance. Blank lines and `#` comments are skipped.
pub fn read_corpus(path: &Path, graph: &TranslationGraph, vocab: &Vocab) -> Result<Vec<Corpus>> {
    let text = fs::read_to_string(path)?;
    let mut corpora: Vec<Corpus> = Vec::new();
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(line_no, format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let src = graph.lang(fields[0]).map_err(|e| err(line_no, e.to_string()))?;
        let tgt = graph.lang(fields[1]).map_err(|e| err(line_no, e.to_string()))?;
        let parse = |f: &str| -> Result<Sentence> {
            let tokens = f
                .split_whitespace()
                .map(|tok| {
                    vocab.id(tok).filter(|&id| vocab.is_content(id)).ok_or_else(|| err(line_no, format!("unknown token `{tok}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if tokens.is_empty() {
                return Err(err(line_no, "empty sentence".into()));
            }
            Ok(Sentence::new(tokens))
        };
        let pair = (parse(fields[2])?, parse(fields[3])?);
        match corpora.iter_mut().find(|c| c.src == src && c.tgt == tgt) {
            Some(c) => c.pairs.push(pair),
            None => corpora.push(Corpus { src, tgt, pairs: vec![pair] }),
        }
    }
    Ok(corpora)
}

/// Tuple ids shared between any two distinct unordered pairs (should be empty).
pub fn corpus_overlap(c: &BilingualCorpora) -> BTreeSet<usize> {
    let sets: Vec<BTreeSet<usize>> = c.assignment.values().map(|v| v.iter().copied().collect()).collect();
    let mut overlap = BTreeSet::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            overlap.extend(sets[i].intersection(&sets[j]).copied());
        }
    }
    overlap
}
