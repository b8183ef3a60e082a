//! Run configuration.
//!
//! Grammar: UTF-8 text of `[section]` headers followed by `key = value`
//! lines. Values are TOML scalars or arrays (strings quoted, numbers and
//! booleans bare). `#` starts a comment. Unknown sections or keys are
//! rejected. Every key can be overridden on the command line with
//! `--set section.key=value`; an override value that does not parse as a
//! TOML value is taken as a bare string.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use agmt_core::corpus::FamilySpec;
use agmt_core::eval::EvalMode;
use agmt_core::model::Hyperparams;
use agmt_core::training::TrainConfig;
use agmt_core::TranslationGraph;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::Invalid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub graph: GraphSection,
    #[serde(default)]
    pub family: FamilySection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub languages: Vec<String>,
    /// Unordered pairs written `A-B`.
    pub supervised: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySection {
    pub vocab_size: usize,
    pub m: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    pub cipher: bool,
    /// Languages whose surface order is reversed.
    pub reversed: Vec<String>,
    pub pairs_per_corpus: usize,
    pub dev_tuples: usize,
    pub test_tuples: usize,
}

impl Default for FamilySection {
    fn default() -> Self {
        Self { vocab_size: 16, m: 1, min_len: 5, max_len: 8, seed: 7, cipher: true, reversed: vec![], pairs_per_corpus: 5000, dev_tuples: 200, test_tuples: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_size: usize,
    pub embed_size: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden_size: 64, embed_size: 64, dropout: 0.0, max_len: 16, init_seed: 11 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub modes: Vec<EvalMode>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { modes: vec![EvalMode::Basic, EvalMode::Pivot] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Root holding run directories; `AGMT_RUNS_ROOT` wins over this.
    pub runs_root: Option<PathBuf>,
}

pub const RUNS_ROOT_ENV: &str = "AGMT_RUNS_ROOT";

/// Parses config text with `--set` overrides applied, then validates.
pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Invalid(format!("config: {}", e.message())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Invalid(format!("config: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, overrides)
}

fn apply_override(table: &mut toml::Table, o: &str) -> Result<()> {
    let (key, raw) = o.split_once('=').ok_or_else(|| Invalid(format!("override `{o}` is not section.key=value")))?;
    let (section, field) = key.trim().split_once('.').ok_or_else(|| Invalid(format!("override key `{key}` is not section.key")))?;
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let entry = table.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sec = entry.as_table_mut().ok_or_else(|| Invalid(format!("`{section}` is not a section")))?;
    sec.insert(field.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let name = &self.experiment.name;
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || name.starts_with('.') {
            return Err(Invalid(format!("experiment name `{name}` must be nonempty and use only letters, digits, '-', '_' or '.'")).into());
        }
        let graph = self.graph().map_err(|e| Invalid(e.to_string()))?;
        if !graph.is_spanning() {
            return Err(Invalid("supervised pairs do not connect every language".into()).into());
        }
        for r in &self.family.reversed {
            graph.lang(r).map_err(|e| Invalid(format!("family.reversed: {e}")))?;
        }
        let f = &self.family;
        if f.pairs_per_corpus == 0 || f.dev_tuples == 0 || f.test_tuples == 0 {
            return Err(Invalid("pairs_per_corpus, dev_tuples and test_tuples must be positive".into()).into());
        }
        if f.min_len == 0 || f.min_len > f.max_len || f.vocab_size == 0 || f.m == 0 {
            return Err(Invalid("family needs 0 < min_len <= max_len and positive vocab_size and m".into()).into());
        }
        if self.model.max_len < f.max_len {
            return Err(Invalid(format!("model.max_len {} is below family.max_len {}", self.model.max_len, f.max_len)).into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Invalid("model.dropout must be in [0, 1)".into()).into());
        }
        self.hyperparams().validate().map_err(|e| Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| Invalid(e.to_string()))?;
        if self.eval.modes.is_empty() {
            return Err(Invalid("eval.modes is empty".into()).into());
        }
        Ok(())
    }

    /// Warnings that do not block the run.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = vec![];
        if self.train.gamma > 0.0 && self.graph.languages.len() < 3 {
            w.push(format!(
                "agreement is enabled (gamma = {}) but only {} languages exist: no auxiliary language, training will refuse to start",
                self.train.gamma,
                self.graph.languages.len()
            ));
        }
        w
    }

    pub fn graph(&self) -> agmt_core::Result<TranslationGraph> {
        let mut pairs = vec![];
        for p in &self.graph.supervised {
            let (a, b) = p.split_once('-').ok_or_else(|| agmt_core::Error::Validation(format!("supervised pair `{p}` is not written A-B")))?;
            pairs.push((a.trim().to_string(), b.trim().to_string()));
        }
        let unique: BTreeSet<&String> = self.graph.languages.iter().collect();
        if unique.len() != self.graph.languages.len() {
            return Err(agmt_core::Error::Validation("duplicate language names".into()));
        }
        TranslationGraph::from_names(&self.graph.languages, &pairs)
    }

    pub fn family_spec(&self) -> FamilySpec {
        let f = &self.family;
        let mut spec = FamilySpec::new(self.graph.languages.len(), f.vocab_size, f.m, f.min_len, f.max_len, f.seed);
        spec.cipher = f.cipher;
        spec.reversed = self.graph.languages.iter().map(|l| f.reversed.contains(l)).collect();
        spec
    }

    /// Model sizes; the vocabulary layout comes from the family.
    pub fn hyperparams(&self) -> Hyperparams {
        let spec = self.family_spec();
        let content = spec.content_size.unwrap_or(spec.vocab_size * spec.m);
        let vocab = agmt_core::corpus::Vocab::new(spec.k, content);
        let mut h = Hyperparams::for_vocab(&vocab);
        h.hidden_size = self.model.hidden_size;
        h.embed_size = self.model.embed_size;
        h.dropout = self.model.dropout;
        h.max_len = self.model.max_len;
        h
    }

    pub fn runs_root(&self) -> PathBuf {
        runs_root(self.paths.runs_root.as_deref())
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).context("serializing config")
    }
}

pub fn runs_root(configured: Option<&Path>) -> PathBuf {
    match std::env::var_os(RUNS_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs")),
    }
}
