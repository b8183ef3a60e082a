//! BLEU, direction-stratified evaluation, consistency reports, and sweep
//! output as CSV and SVG.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelTuple, Sentence};
use crate::decoding::{greedy_decode_batch, pivot_translate_batch};
use crate::error::{invalid, Error, Result};
use crate::graph::{Lang, TranslationGraph};
use crate::model::{self, ModelParams};
use crate::training::direction_nll;

const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 in `[0, 100]` without smoothing.
pub fn corpus_bleu<T: Eq + Hash, S: AsRef<[T]>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(invalid(format!("{} hypotheses but {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(invalid("BLEU needs at least one sentence"));
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 || (0..MAX_ORDER).any(|i| matched[i] == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..MAX_ORDER).map(|i| (matched[i] as f64 / total[i] as f64).ln()).sum::<f64>() / MAX_ORDER as f64;
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0);
    Ok(100.0 * (log_p + bp).exp())
}

pub fn bleu(hyps: &[Sentence], refs: &[Sentence]) -> Result<f64> {
    let h: Vec<&[usize]> = hyps.iter().map(|s| s.tokens.as_slice()).collect();
    let r: Vec<&[usize]> = refs.iter().map(|s| s.tokens.as_slice()).collect();
    corpus_bleu(&h, &r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Direct decoding in the requested direction.
    Basic,
    /// Greedy decoding through the graph's pivot path.
    Pivot,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Basic => "basic",
            EvalMode::Pivot => "pivot",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "basic" => Ok(EvalMode::Basic),
            "pivot" => Ok(EvalMode::Pivot),
            other => Err(invalid(format!("unknown eval mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub src: String,
    pub tgt: String,
    pub mode: EvalMode,
    pub zero_shot: bool,
    /// Pivot row whose path is the direct edge; identical to the basic row.
    pub degenerate: bool,
    pub bleu: f64,
    pub cross_entropy_nats_per_token: f64,
    pub n_sentences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: EvalMode,
    pub supervised_avg_bleu: Option<f64>,
    pub zero_shot_avg_bleu: Option<f64>,
    pub supervised_avg_ce: Option<f64>,
    pub zero_shot_avg_ce: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<ModeAggregate>,
}

impl EvalReport {
    pub fn row(&self, src: &str, tgt: &str, mode: EvalMode) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.src == src && r.tgt == tgt && r.mode == mode)
    }

    pub fn aggregate(&self, mode: EvalMode) -> Option<&ModeAggregate> {
        self.aggregates.iter().find(|a| a.mode == mode)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn check_tuples(tuples: &[ParallelTuple], graph: &TranslationGraph) -> Result<()> {
    if tuples.is_empty() {
        return Err(invalid("no test tuples"));
    }
    for t in tuples {
        if t.sentences.len() < graph.k() {
            return Err(invalid(format!("tuple {} is missing a language", t.id)));
        }
    }
    Ok(())
}

/// Per-token cross-entropy of the last hop given greedy intermediates.
fn pivot_ce(params: &ModelParams, tuples: &[ParallelTuple], path: &[Lang]) -> Result<f64> {
    let t = *path.last().expect("non-empty path");
    if path.len() == 2 {
        return Ok(direction_nll(params, tuples, path[0], t)?.1);
    }
    let max_len = params.hyper.max_len;
    let srcs: Vec<&Sentence> = tuples.iter().map(|tu| &tu.sentences[path[0].0]).collect();
    let mids = pivot_translate_batch(params, &srcs, &path[..path.len() - 1], max_len)?;
    let (mut nll, mut tokens) = (0.0, 0usize);
    let tag = params.hyper.tag(t);
    for (chunk_t, chunk_m) in tuples.chunks(64).zip(mids.chunks(64)) {
        let srcs: Vec<&Sentence> = chunk_m.iter().map(|m| &m.sentence).collect();
        let tgts: Vec<&Sentence> = chunk_t.iter().map(|tu| &tu.sentences[t.0]).collect();
        nll -= model::batch_logprob(params, &srcs, &vec![tag; srcs.len()], &tgts)?.iter().sum::<f64>();
        tokens += tgts.iter().map(|x| x.len() + 1).sum::<usize>();
    }
    Ok(nll / tokens as f64)
}

/// Decodes and scores every ordered direction of `graph` in each mode.
pub fn evaluate_system(params: &ModelParams, tuples: &[ParallelTuple], graph: &TranslationGraph, modes: &[EvalMode]) -> Result<EvalReport> {
    check_tuples(tuples, graph)?;
    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();
    let max_len = params.hyper.max_len;
    let mut rows = vec![];
    for &mode in &modes {
        for (s, t) in graph.directions() {
            let path = match mode {
                EvalMode::Basic => vec![s, t],
                EvalMode::Pivot => graph.pivot_path(s, t)?,
            };
            let srcs: Vec<&Sentence> = tuples.iter().map(|tu| &tu.sentences[s.0]).collect();
            let refs: Vec<Sentence> = tuples.iter().map(|tu| tu.sentences[t.0].clone()).collect();
            let hyps = if path.len() == 2 {
                greedy_decode_batch(params, &srcs, t, max_len)?
            } else {
                pivot_translate_batch(params, &srcs, &path, max_len)?.into_iter().map(|p| p.sentence).collect()
            };
            rows.push(EvalRow {
                src: graph.name(s).to_string(),
                tgt: graph.name(t).to_string(),
                mode,
                zero_shot: !graph.is_supervised(s, t),
                degenerate: mode == EvalMode::Pivot && path.len() == 2,
                bleu: bleu(&hyps, &refs)?,
                cross_entropy_nats_per_token: pivot_ce(params, tuples, &path)?,
                n_sentences: tuples.len(),
            });
        }
    }
    let aggregates = modes
        .iter()
        .map(|&mode| {
            let pick = |zs: bool| rows.iter().filter(move |r| r.mode == mode && r.zero_shot == zs);
            ModeAggregate {
                mode,
                supervised_avg_bleu: mean(pick(false).map(|r| r.bleu)),
                zero_shot_avg_bleu: mean(pick(true).map(|r| r.bleu)),
                supervised_avg_ce: mean(pick(false).map(|r| r.cross_entropy_nats_per_token)),
                zero_shot_avg_ce: mean(pick(true).map(|r| r.cross_entropy_nats_per_token)),
            }
        })
        .collect();
    Ok(EvalReport { rows, aggregates })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionLoss {
    pub src: String,
    pub tgt: String,
    pub zero_shot: bool,
    /// Mean negative log-likelihood per sentence pair.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub epsilon_hat: f64,
    pub zero_shot_max_loss: Option<f64>,
    pub ratio: Option<f64>,
    pub directions: Vec<DirectionLoss>,
}

/// Worst supervised and zero-shot expected losses on held-out tuples.
pub fn consistency_report(params: &ModelParams, tuples: &[ParallelTuple], graph: &TranslationGraph) -> Result<ConsistencyReport> {
    check_tuples(tuples, graph)?;
    let mut directions = vec![];
    for (s, t) in graph.directions() {
        directions.push(DirectionLoss {
            src: graph.name(s).to_string(),
            tgt: graph.name(t).to_string(),
            zero_shot: !graph.is_supervised(s, t),
            loss: direction_nll(params, tuples, s, t)?.0,
        });
    }
    let worst = |zs: bool| directions.iter().filter(|d| d.zero_shot == zs).map(|d| d.loss).fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    let epsilon_hat = worst(false).unwrap_or(0.0);
    let zero_shot_max_loss = worst(true);
    let ratio = zero_shot_max_loss.filter(|_| epsilon_hat > 0.0).map(|z| z / epsilon_hat);
    Ok(ConsistencyReport { epsilon_hat, zero_shot_max_loss, ratio, directions })
}

/// One CSV row of a data-size sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub run_id: String,
    pub corpus_size: usize,
    pub direction: String,
    pub mode: String,
    pub bleu: f64,
    pub ce: f64,
}

/// Rows of `report` as sweep records; `basic_label` names the basic mode
/// (an agreement-trained run is evaluated in basic mode as "agree").
pub fn sweep_records(run_id: &str, corpus_size: usize, basic_label: &str, report: &EvalReport) -> Vec<SweepRecord> {
    report
        .rows
        .iter()
        .map(|r| SweepRecord {
            run_id: run_id.to_string(),
            corpus_size,
            direction: format!("{}-{}", r.src, r.tgt),
            mode: match r.mode {
                EvalMode::Basic => basic_label.to_string(),
                EvalMode::Pivot => "pivot".to_string(),
            },
            bleu: r.bleu,
            ce: r.cross_entropy_nats_per_token,
        })
        .collect()
}

pub fn emit_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<SweepRecord>, _>>()?)
}

/// mode -> corpus size -> direction -> BLEU.
pub type Series = BTreeMap<String, BTreeMap<usize, BTreeMap<String, f64>>>;

pub fn series_from_records<'a>(records: impl IntoIterator<Item = &'a SweepRecord>) -> Series {
    let mut s = Series::new();
    for r in records {
        s.entry(r.mode.clone()).or_default().entry(r.corpus_size).or_default().insert(r.direction.clone(), r.bleu);
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of mean BLEU against corpus size (log axis), one polyline per
/// mode with a marker per direction.
pub fn render_svg(series: &Series, width: f64, height: f64) -> Result<String> {
    if series.values().all(|m| m.is_empty()) {
        return Err(invalid("nothing to plot"));
    }
    let (left, right, top, bottom) = (70.0, 150.0, 30.0, 60.0);
    let (pw, ph) = (width - left - right, height - top - bottom);
    let sizes: Vec<usize> = series.values().flat_map(|m| m.keys().copied()).collect();
    let lo = (*sizes.iter().min().unwrap()).max(1) as f64;
    let hi = (*sizes.iter().max().unwrap()).max(1) as f64;
    let y_max = series.values().flat_map(|m| m.values().flat_map(|d| d.values().copied())).fold(1.0f64, f64::max);
    let y_max = (y_max / 10.0).ceil() * 10.0;
    let x_of = |s: usize| {
        if hi > lo {
            left + pw * ((s.max(1) as f64).ln() - lo.ln()) / (hi.ln() - lo.ln())
        } else {
            left + pw / 2.0
        }
    };
    let y_of = |b: f64| top + ph * (1.0 - b / y_max);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#);
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, top + ph, left + pw, top + ph);
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for i in 0..=5 {
        let b = y_max * i as f64 / 5.0;
        let y = y_of(b);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{b:.0}</text>"#, left - 6.0, y + 4.0);
    }
    let mut ticks = sizes.clone();
    ticks.sort_unstable();
    ticks.dedup();
    for s in &ticks {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle">{s}</text>"#, x_of(*s), top + ph + 16.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" font-size="13" text-anchor="middle">training pairs per corpus</text>"#, left + pw / 2.0, height - 15.0);
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">zero-shot BLEU</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (mode, by_size)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = by_size
            .iter()
            .filter_map(|(&s, dirs)| mean(dirs.values().copied()).map(|b| format!("{:.2},{:.2}", x_of(s), y_of(b))))
            .collect();
        let _ = writeln!(svg, r#"<polyline class="mode" data-mode="{mode}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for (&s, dirs) in by_size {
            for (dir, &b) in dirs {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"><title>{mode} {dir} {b:.2}</title></circle>"#,
                    x_of(s),
                    y_of(b)
                );
            }
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12">{mode}</text>"#, lx + 26.0, ly + 4.0);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_svg_curves(series: &Series, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(series, 800.0, 500.0)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_brevity_example() {
        let b = corpus_bleu(&[words("a b c d")], &[words("a b c d e")]).unwrap();
        assert!((b - 77.88).abs() < 0.005, "{b}");
        assert!((b - 100.0 * (-0.25f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn bleu_edge_cases() {
        let h = [words("x y z w v"), words("p q r s t")];
        assert!((corpus_bleu(&h, &h).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(corpus_bleu(&[words("a b c")], &[words("a b c")]).unwrap(), 0.0);
        assert!(corpus_bleu(&[words("a")], &[]).is_err());
        assert!(corpus_bleu::<&str, Vec<&str>>(&[], &[]).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("pivot".parse::<EvalMode>().unwrap(), EvalMode::Pivot);
        assert!("agree".parse::<EvalMode>().is_err());
    }
}
