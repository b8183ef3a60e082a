use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use agmt_core::eval::{consistency_report, emit_csv, emit_svg_curves, evaluate_system, series_from_records, sweep_records, EvalMode, EvalReport};
use agmt_core::model::ModelParams;
use agmt_core::oracle::{
    chain_graph, full_likelihood_harness, jensen_harness, lemma1_harness, pivoting_harness, random_system, theorem1_harness, verify_pivoting,
    verify_theorem1, BoundReport, RandomSystemSpec,
};
use agmt_core::training::{TrainState, Trainer};
use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use crate::config::{self, RunConfig};
use crate::run::{self, RunDir};
use crate::Invalid;

fn warn(cfg: &RunConfig) {
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
}

pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<RunDir> {
    warn(cfg);
    let run = RunDir::new(cfg.runs_root().join(&cfg.experiment.name));
    if run.root.exists() && !force {
        bail!(Invalid(format!("{} already exists; pass --force to regenerate", run.root.display())));
    }
    // everything that can fail validation happens before the first write
    let data = run::generate(cfg)?;
    let snapshot = cfg.to_text()?;
    if run.root.exists() {
        run::remove_run(&run.root)?;
    }
    for d in [run.reports(), run.plots()] {
        fs::create_dir_all(d)?;
    }
    fs::write(run.config_path(), snapshot)?;
    run::write_data(&run, cfg, &data)?;
    for c in &data.manifest.corpora {
        println!("{}: {} pairs", c.file, c.pairs);
    }
    println!("dev {} / test {} tuples in {}", data.dev.len(), data.test.len(), run.root.display());
    Ok(run)
}

/// The run to train: either named directly or implied by a config whose
/// resolved form must equal the stored snapshot.
pub fn resolve_run(run: Option<&str>, config_path: Option<&Path>, overrides: &[String]) -> Result<(RunDir, RunConfig)> {
    match (run, config_path) {
        (Some(_), Some(_)) => bail!(Invalid("give either a run or --config, not both".into())),
        (None, None) => bail!(Invalid("give a run name or --config".into())),
        (Some(name), None) => {
            if !overrides.is_empty() {
                bail!(Invalid("--set needs --config; a run's snapshot is immutable".into()));
            }
            let run = RunDir::locate(name)?;
            let cfg = run.config()?;
            Ok((run, cfg))
        }
        (None, Some(path)) => {
            let cfg = config::load(path, overrides)?;
            let run = RunDir::new(cfg.runs_root().join(&cfg.experiment.name));
            if !run.config_path().is_file() {
                bail!(Invalid(format!("{} has no data; run gen-data first", run.root.display())));
            }
            if run.config()? != cfg {
                bail!(Invalid(format!("config differs from the snapshot in {}; snapshots are immutable", run.root.display())));
            }
            Ok((run, cfg))
        }
    }
}

pub fn train(run: &RunDir, cfg: &RunConfig, resume: bool, until: Option<usize>) -> Result<TrainState> {
    warn(cfg);
    let data = run::load_data(run, cfg)?;
    let hyper = cfg.hyperparams();
    let latest = run.latest_checkpoint()?;
    let state = match (&latest, resume) {
        (Some((step, _)), false) => bail!(Invalid(format!("{} already has a checkpoint at step {step}; pass --resume", run.root.display()))),
        (Some((_, path)), true) => {
            let s = TrainState::load(path).with_context(|| format!("loading {}", path.display()))?;
            if s.params.hyper != hyper {
                bail!(Invalid(format!("checkpoint {} was trained with different model sizes", path.display())));
            }
            s
        }
        (None, _) => TrainState::fresh(ModelParams::init(&hyper, cfg.model.init_seed)?),
    };
    let until = until.unwrap_or(cfg.train.max_steps).min(cfg.train.max_steps);

    // the metrics stream must agree with the checkpoint it continues from
    let kept: Vec<_> = run::read_metrics(&run.metrics_path())?.into_iter().filter(|r| r.step <= state.step).collect();
    let mut text = String::new();
    for r in &kept {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(run.metrics_path(), text)?;
    let mut metrics = fs::OpenOptions::new().append(true).open(run.metrics_path())?;

    fs::create_dir_all(run.checkpoints())?;
    let interval = cfg.train.eval_interval;
    let mut trainer = Trainer::new(cfg.train.clone(), &data.graph, &data.corpora, &data.dev, state)?;
    let start = trainer.state.step;
    while !trainer.done() && trainer.state.step < until {
        let next = ((trainer.state.step / interval + 1) * interval).min(until);
        trainer.run(next, |r| {
            writeln!(metrics, "{}", serde_json::to_string(r)?)?;
            if let Some(d) = r.dev_loss {
                eprintln!("step {:>6}  {}  loss {:.4}  dev {:.4}", r.step, r.mode, r.total, d);
            }
            Ok(())
        })?;
        metrics.flush()?;
        trainer.state.save(&run.checkpoint_path(trainer.state.step))?;
    }
    let state = trainer.state;
    println!(
        "{}: steps {start} -> {}{}; best dev {}",
        run.root.display(),
        state.step,
        if state.stopped { " (early stop)" } else { "" },
        state.best_dev.map_or("n/a".to_string(), |d| format!("{d:.4}"))
    );
    Ok(state)
}

pub fn eval(run: &RunDir, modes: Option<Vec<EvalMode>>, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let cfg = run.config()?;
    let modes = modes.unwrap_or_else(|| cfg.eval.modes.clone());
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => run.latest_checkpoint()?.map(|(_, p)| p).ok_or_else(|| anyhow!("{} has no checkpoint; train first", run.root.display()))?,
    };
    let state = TrainState::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let data = run::load_data(run, &cfg)?;
    let params = state.best();
    let report = evaluate_system(params, &data.test, &data.graph, &modes)?;
    let consistency = consistency_report(params, &data.test, &data.graph)?;
    fs::create_dir_all(run.reports())?;
    fs::write(run.reports().join("eval.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(run.reports().join("consistency.json"), serde_json::to_string_pretty(&consistency)? + "\n")?;

    println!("checkpoint {} (step {}), {} test tuples", path.display(), state.step, data.test.len());
    println!("{:<12} {:<6} {:>9} {:>8} {:>10}", "direction", "mode", "zero-shot", "BLEU", "CE/token");
    for r in &report.rows {
        println!("{:<12} {:<6} {:>9} {:>8.2} {:>10.4}", format!("{}->{}", r.src, r.tgt), r.mode.as_str(), r.zero_shot, r.bleu, r.cross_entropy_nats_per_token);
    }
    println!(
        "consistency: eps_hat {:.4}, zero-shot max loss {}, ratio {}",
        consistency.epsilon_hat,
        consistency.zero_shot_max_loss.map_or("n/a".into(), |v| format!("{v:.4}")),
        consistency.ratio.map_or("n/a".into(), |v| format!("{v:.3}"))
    );
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Theorem {
    /// Zero-shot cross-entropy against the agreement bound.
    Agreement,
    /// Pivot cross-entropy against C times the supervised error.
    Pivoting,
    /// Cross-entropy lower bounds on the agreement term.
    Jensen,
    /// The auxiliary lemma's chain of inequalities.
    Lemma,
    /// Full-likelihood lower bound on four-language systems.
    FullLikelihood,
    All,
}

pub struct TheoryOptions {
    pub theorem: Theorem,
    pub count: usize,
    pub seed: u64,
    pub max_xi: f64,
    pub max_c: f64,
    pub single: Option<(usize, usize, usize)>,
    pub out: Option<PathBuf>,
}

fn summarize(name: &str, reports: &[BoundReport]) -> (usize, serde_json::Value) {
    let violations = reports.iter().filter(|r| r.violated()).count();
    let undefined = reports.iter().filter(|r| r.satisfied.is_none()).count();
    eprintln!("{name}: {} systems, {violations} violations, {undefined} undefined", reports.len());
    (violations, serde_json::to_value(reports).expect("reports serialize"))
}

/// Returns the JSON document and the number of violations found.
pub fn verify_theory(o: &TheoryOptions) -> Result<(serde_json::Value, usize)> {
    if let Some((b, m, l)) = o.single {
        let spec = RandomSystemSpec::new(3, b, m, l);
        let sys = random_system(&spec, chain_graph(), o.seed).map_err(|e| Invalid(e.to_string()))?;
        let reports = vec![verify_theorem1(&sys)?, verify_pivoting(&sys)?];
        let (v, doc) = summarize("single system", &reports);
        return Ok((doc, v));
    }
    let (all, t) = (o.theorem == Theorem::All, o.theorem);
    let mut doc = serde_json::Map::new();
    let mut violations = 0;
    if all || t == Theorem::Agreement {
        let (v, d) = summarize("agreement bound", &theorem1_harness(o.count, o.seed, o.max_xi)?);
        violations += v;
        doc.insert("agreement".into(), d);
    }
    if all || t == Theorem::Pivoting {
        let (v, d) = summarize("pivoting bound", &pivoting_harness(o.count, o.seed, o.max_c)?);
        violations += v;
        doc.insert("pivoting".into(), d);
    }
    if all || t == Theorem::Jensen {
        let tally = jensen_harness(o.count, o.seed, 2)?;
        eprintln!("jensen: {} systems, {} checks, {} violations", tally.systems, tally.checks, tally.violations);
        violations += tally.violations;
        doc.insert("jensen".into(), serde_json::to_value(&tally)?);
    }
    if all || t == Theorem::Lemma {
        let tally = lemma1_harness(o.count, o.seed)?;
        eprintln!(
            "lemma: {} events, {} jensen-step violations, {} chain violations, {} statement violations",
            tally.events, tally.jensen_violations, tally.chain_violations, tally.statement_violations
        );
        // the chain is reported, not enforced: it fails even for exact models
        violations += tally.jensen_violations + tally.statement_violations;
        doc.insert("lemma".into(), serde_json::to_value(&tally)?);
    }
    if all || t == Theorem::FullLikelihood {
        let tally = full_likelihood_harness(o.count, o.seed)?;
        eprintln!("full likelihood: {} systems, {} checks, {} violations", tally.systems, tally.checks, tally.violations);
        violations += tally.violations;
        doc.insert("full_likelihood".into(), serde_json::to_value(&tally)?);
    }
    let doc = if all {
        serde_json::Value::Object(doc)
    } else {
        doc.into_iter().next().map(|(_, v)| v).unwrap_or_else(|| json!(null))
    };
    Ok((doc, violations))
}

pub fn write_json(doc: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)? + "\n";
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn plot(runs: &[RunDir], out: &Path) -> Result<()> {
    let mut all = vec![];
    let mut zero_shot = vec![];
    for run in runs {
        let cfg = run.config()?;
        let path = run.reports().join("eval.json");
        let text = fs::read_to_string(&path).map_err(|_| anyhow!("{} has no eval report; run eval first", run.root.display()))?;
        let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let label = cfg.train.mode();
        let size = cfg.family.pairs_per_corpus;
        let mut recs = sweep_records(&cfg.experiment.name, size, label, &report);
        for (rec, row) in recs.iter_mut().zip(&report.rows) {
            if row.mode == EvalMode::Pivot && label != "basic" {
                rec.mode = format!("{label}-pivot");
            }
            if row.zero_shot {
                zero_shot.push(rec.clone());
            }
        }
        all.extend(recs);
    }
    fs::create_dir_all(out)?;
    emit_csv(&all, &out.join("sweep.csv"))?;
    emit_svg_curves(&series_from_records(&zero_shot), &out.join("zero_shot_bleu.svg"))?;
    println!("{} records from {} runs -> {}", all.len(), runs.len(), out.display());
    Ok(())
}
