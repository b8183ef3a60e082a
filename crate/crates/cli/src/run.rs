//! Run directory layout and on-disk data.
//!
//! ```text
//! <runs_root>/<name>/
//!   config.toml          snapshot, written once by gen-data
//!   corpora/<A>-<B>.tsv  one file per supervised pair
//!   corpora/dev.tsv      held-out tuples, one sentence per language
//!   corpora/test.tsv
//!   corpora/manifest.json
//!   checkpoints/step-00000250.ckpt
//!   metrics.jsonl
//!   reports/
//!   plots/
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use agmt_core::corpus::{make_bilingual_corpora, read_corpus, write_corpus, BilingualCorpora, Corpus, ParallelTuple, Sentence, SyntheticFamily};
use agmt_core::training::MetricsRecord;
use agmt_core::{Lang, TranslationGraph};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{self, RunConfig};
use crate::Invalid;

pub const TEST_STREAM: u64 = 1;
pub const DEV_STREAM: u64 = 2;
pub const TRAIN_STREAM: u64 = 3;

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    /// A run given by path, or by name under the runs root.
    pub fn locate(arg: &str) -> Result<Self> {
        let direct = PathBuf::from(arg);
        let dir = if direct.join("config.toml").is_file() { direct } else { config::runs_root(None).join(arg) };
        if !dir.join("config.toml").is_file() {
            return Err(Invalid(format!("no run at `{arg}` (looked for {})", dir.join("config.toml").display())).into());
        }
        Ok(Self::new(dir))
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn corpora(&self) -> PathBuf {
        self.root.join("corpora")
    }
    pub fn manifest_path(&self) -> PathBuf {
        self.corpora().join("manifest.json")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn config(&self) -> Result<RunConfig> {
        config::load(&self.config_path(), &[])
    }

    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.checkpoints().join(format!("step-{step:08}.ckpt"))
    }

    /// Complete checkpoints by step, ascending. Leftover temporaries are ignored.
    pub fn list_checkpoints(&self) -> Result<Vec<(usize, PathBuf)>> {
        let mut out = vec![];
        let dir = self.checkpoints();
        if !dir.is_dir() {
            return Ok(out);
        }
        for e in fs::read_dir(&dir)? {
            let path = e?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(step) = name.strip_prefix("step-").and_then(|n| n.strip_suffix(".ckpt")).and_then(|n| n.parse().ok()) {
                out.push((step, path));
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn latest_checkpoint(&self) -> Result<Option<(usize, PathBuf)>> {
        Ok(self.list_checkpoints()?.pop())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub file: String,
    pub stream: u64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub file: String,
    pub src: String,
    pub tgt: String,
    pub pairs: usize,
}

/// What gen-data produced and from which seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub family_seed: u64,
    pub languages: Vec<String>,
    pub test: SplitInfo,
    pub dev: SplitInfo,
    pub train_tuples: SplitInfo,
    pub corpora: Vec<CorpusInfo>,
}

/// Everything gen-data writes, built in memory first.
pub struct GeneratedData {
    pub corpora: Vec<(String, Corpus)>,
    pub dev: Vec<ParallelTuple>,
    pub test: Vec<ParallelTuple>,
    pub manifest: Manifest,
}

pub fn pair_file(graph: &TranslationGraph, (a, b): (Lang, Lang)) -> String {
    format!("{}-{}.tsv", graph.name(a), graph.name(b))
}

pub fn generate(cfg: &RunConfig) -> Result<GeneratedData> {
    let graph = cfg.graph()?;
    let fam = SyntheticFamily::generate(&cfg.family_spec()).map_err(|e| Invalid(e.to_string()))?;
    let f = &cfg.family;
    let pairs = graph.supervised_pairs();
    let mut seen = HashSet::new();
    let draw = |n: usize, stream: u64, seen: &mut HashSet<Vec<usize>>| fam.sample_distinct_tuples(n, stream, seen).map_err(|e| Invalid(e.to_string()));
    let test = draw(f.test_tuples, TEST_STREAM, &mut seen)?;
    let dev = draw(f.dev_tuples, DEV_STREAM, &mut seen)?;
    let n_train = f.pairs_per_corpus * pairs.len();
    let train = draw(n_train, TRAIN_STREAM, &mut seen)?;
    let split = make_bilingual_corpora(&train, &graph)?;
    let mut corpora = vec![];
    let mut infos = vec![];
    for &e in &pairs {
        let c = split.get(e).ok_or_else(|| anyhow!("no corpus for {}", graph.edge_label(e)))?.clone();
        let file = pair_file(&graph, e);
        infos.push(CorpusInfo { file: file.clone(), src: graph.name(e.0).into(), tgt: graph.name(e.1).into(), pairs: c.len() });
        corpora.push((file, c));
    }
    let manifest = Manifest {
        family_seed: f.seed,
        languages: cfg.graph.languages.clone(),
        test: SplitInfo { file: "test.tsv".into(), stream: TEST_STREAM, count: test.len() },
        dev: SplitInfo { file: "dev.tsv".into(), stream: DEV_STREAM, count: dev.len() },
        train_tuples: SplitInfo { file: String::new(), stream: TRAIN_STREAM, count: train.len() },
        corpora: infos,
    };
    Ok(GeneratedData { corpora, dev, test, manifest })
}

pub fn write_data(run: &RunDir, cfg: &RunConfig, data: &GeneratedData) -> Result<()> {
    let graph = cfg.graph()?;
    let fam = SyntheticFamily::generate(&cfg.family_spec())?;
    let dir = run.corpora();
    fs::create_dir_all(&dir)?;
    for (file, c) in &data.corpora {
        write_corpus(c, &graph, fam.vocab(), &dir.join(file))?;
    }
    write_tuples(&dir.join(&data.manifest.dev.file), &graph, &fam, &data.dev)?;
    write_tuples(&dir.join(&data.manifest.test.file), &graph, &fam, &data.test)?;
    fs::write(run.manifest_path(), serde_json::to_string_pretty(&data.manifest)? + "\n")?;
    Ok(())
}

fn write_tuples(path: &Path, graph: &TranslationGraph, fam: &SyntheticFamily, tuples: &[ParallelTuple]) -> Result<()> {
    let mut out = String::from("# id");
    for n in graph.names() {
        let _ = write!(out, "\t{n}");
    }
    out.push('\n');
    for t in tuples {
        let _ = write!(out, "{}", t.id);
        for s in &t.sentences {
            let _ = write!(out, "\t{}", fam.vocab().render(s));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_tuples(path: &Path, graph: &TranslationGraph, fam: &SyntheticFamily) -> Result<Vec<ParallelTuple>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = vec![];
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Invalid(format!("{}:{}: {msg}", path.display(), i + 1));
        if fields.len() != graph.k() + 1 {
            return Err(bad(format!("expected {} fields, found {}", graph.k() + 1, fields.len())).into());
        }
        let id = fields[0].parse().map_err(|_| bad(format!("bad id `{}`", fields[0])))?;
        let mut sentences = vec![];
        for f in &fields[1..] {
            let toks = f.split_whitespace().map(|t| fam.vocab().id(t).filter(|&id| fam.vocab().is_content(id)).ok_or_else(|| bad(format!("unknown token `{t}`"))));
            sentences.push(Sentence::new(toks.collect::<Result<_, _>>()?));
        }
        let base = fam.base_of(&sentences[0], Lang(0)).ok_or_else(|| bad("sentence is not in the family".into()))?;
        out.push(ParallelTuple { id, base, sentences });
    }
    Ok(out)
}

/// Training inputs of a run, checked against its config and manifest.
pub struct RunData {
    pub graph: TranslationGraph,
    pub corpora: BilingualCorpora,
    pub dev: Vec<ParallelTuple>,
    pub test: Vec<ParallelTuple>,
}

pub fn load_data(run: &RunDir, cfg: &RunConfig) -> Result<RunData> {
    let mismatch = |msg: String| Invalid(format!("config/corpora mismatch: {msg}"));
    let graph = cfg.graph()?;
    let family = SyntheticFamily::generate(&cfg.family_spec())?;
    let text = fs::read_to_string(run.manifest_path()).map_err(|_| Invalid(format!("no corpora in {}; run gen-data first", run.root.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.family_seed != cfg.family.seed || manifest.languages != cfg.graph.languages {
        return Err(mismatch("manifest seed or languages differ from the config".into()).into());
    }
    let expected: BTreeSet<String> = graph.supervised_pairs().into_iter().map(|e| pair_file(&graph, e)).collect();
    let listed: BTreeSet<String> = manifest.corpora.iter().map(|c| c.file.clone()).collect();
    if expected != listed {
        return Err(mismatch(format!("corpus files {listed:?} do not match supervised pairs {expected:?}")).into());
    }
    let mut corpora = vec![];
    for info in &manifest.corpora {
        let path = run.corpora().join(&info.file);
        let mut read = read_corpus(&path, &graph, family.vocab()).map_err(|e| mismatch(e.to_string()))?;
        if read.len() != 1 || read[0].len() != info.pairs || graph.name(read[0].src) != info.src || graph.name(read[0].tgt) != info.tgt {
            return Err(mismatch(format!("{} does not hold {} {}-{} pairs", info.file, info.pairs, info.src, info.tgt)).into());
        }
        corpora.push(read.pop().expect("one corpus"));
    }
    let corpora = BilingualCorpora::from_pair_corpora(&graph, corpora).map_err(|e| mismatch(e.to_string()))?;
    let dev = read_tuples(&run.corpora().join(&manifest.dev.file), &graph, &family)?;
    let test = read_tuples(&run.corpora().join(&manifest.test.file), &graph, &family)?;
    if dev.len() != manifest.dev.count || test.len() != manifest.test.count {
        return Err(mismatch("held-out tuple counts differ from the manifest".into()).into());
    }
    Ok(RunData { graph, corpora, dev, test })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    if !path.exists() {
        return Ok(vec![]);
    }
    let text = fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).context("bad metrics line")).collect()
}

/// Removes `dir` only if it looks like a run directory.
pub fn remove_run(dir: &Path) -> Result<()> {
    let empty = fs::read_dir(dir)?.next().is_none();
    if !empty && !dir.join("config.toml").is_file() {
        bail!(Invalid(format!("{} exists and is not a run directory; refusing to overwrite", dir.display())));
    }
    fs::remove_dir_all(dir)?;
    Ok(())
}
