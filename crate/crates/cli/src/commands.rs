use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use belief_core::config::RunConfig;
use belief_core::env::{generate, read_dataset, split, write_dataset, QuestionKind, Session};
use belief_core::eval::{predict, score};
use belief_core::memory::{load_bank, save_bank, RetrievalConfig};
use belief_core::model::Model;
use belief_core::training::train as run_training;
use belief_core::verify::{run_gates, Fault, Gate};
use belief_core::{Error, Result};
use serde_json::{json, Map, Value};

use crate::Shared;

fn config_json(cfg: &RunConfig) -> Value {
    Value::Object(cfg.entries().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect::<Map<_, _>>())
}

/// `d.jsonl` → `d.test.jsonl`.
fn partition_path(base: &Path, part: &str) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let name = match base.extension().and_then(|s| s.to_str()) {
        Some(ext) => format!("{stem}.{part}.{ext}"),
        None => format!("{stem}.{part}"),
    };
    base.with_file_name(name)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn summarize(sessions: &[Session]) -> (usize, usize, usize) {
    let steps = sessions.iter().map(|s| s.steps.len()).sum();
    let context = sessions
        .iter()
        .flat_map(|s| &s.steps)
        .filter(|t| t.kind == QuestionKind::Context)
        .count();
    let cues = sessions.iter().flat_map(|s| &s.steps).filter(|t| t.cue_present).count();
    (steps, context, cues)
}

pub fn gen_data(cfg: &RunConfig, shared: &Shared) -> Result<()> {
    cfg.gen.validate()?;
    let out = shared.out.clone().unwrap_or_else(|| PathBuf::from("data.jsonl"));
    let sessions = generate(&cfg.gen)?;
    let (steps, context, cues) = summarize(&sessions);
    let mut written = Vec::new();
    if cfg.split == [1.0, 0.0, 0.0] {
        write_dataset(&sessions, &out)?;
        written.push((out.clone(), sessions.len()));
    } else {
        let parts = split(sessions, cfg.split, cfg.seed)?;
        for (name, part) in [("train", &parts.train), ("validation", &parts.validation), ("test", &parts.test)] {
            if part.is_empty() {
                continue;
            }
            let path = partition_path(&out, name);
            write_dataset(part, &path)?;
            written.push((path, part.len()));
        }
    }
    fs::write(sidecar(&out, ".config"), cfg.to_text())?;
    if !shared.quiet {
        println!(
            "{} sessions, {steps} steps ({context} context questions, {} observable, {cues} cue-bearing)",
            cfg.gen.sessions,
            steps - context
        );
        for (path, n) in written {
            println!("wrote {} ({n} sessions)", path.display());
        }
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, shared: &Shared, data: &Path, init: Option<&Path>) -> Result<()> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let sessions = read_dataset(data)?;
    let mut model = match init {
        Some(path) => Model::load_checkpoint(path, cfg.model.clone())?,
        None => Model::new(cfg.model.clone(), cfg.seed, cfg.seed)?,
    };
    let dir = shared.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    let mut metrics = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
    let quiet = shared.quiet;
    let summary = run_training(&sessions, &mut model, &cfg.train, |m| {
        let line = serde_json::to_string(m).map_err(std::io::Error::from)?;
        writeln!(metrics, "{line}")?;
        metrics.flush()?;
        if !quiet {
            println!("{line}");
        }
        Ok(())
    })?;
    model.save_checkpoint(dir.join("model.bmp"))?;
    save_bank(&summary.bank, dir.join("bank.bmb"))?;
    if !quiet {
        println!(
            "{} optimizer steps; wrote {}",
            summary.updates,
            dir.join("model.bmp").display()
        );
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, shared: &Shared, data: &Path, checkpoint: &Path, oracle: bool) -> Result<()> {
    let sessions = read_dataset(data)?;
    let predictions = if oracle {
        sessions.iter().map(|s| s.steps.iter().map(|t| t.label).collect()).collect()
    } else {
        let model = Model::load_checkpoint(checkpoint, cfg.model.clone())?;
        predict(&sessions, &model, &cfg.eval)?
    };
    let report = score(&sessions, &predictions)?;
    let mut doc = match serde_json::to_value(&report).map_err(std::io::Error::from)? {
        Value::Object(m) => m,
        _ => unreachable!("reports serialize to objects"),
    };
    doc.insert("config".into(), config_json(cfg));
    doc.insert("checkpoint".into(), json!(checkpoint.display().to_string()));
    doc.insert("data".into(), json!(data.display().to_string()));
    doc.insert("oracle".into(), json!(oracle));
    let text = serde_json::to_string_pretty(&Value::Object(doc)).map_err(std::io::Error::from)? + "\n";
    match &shared.out {
        Some(path) => {
            fs::write(path, &text)?;
            if !shared.quiet {
                println!(
                    "accuracy {:.4} (context {}, observable {}) over {} questions; wrote {}",
                    report.accuracy_overall,
                    fmt_opt(report.accuracy_context),
                    fmt_opt(report.accuracy_observable),
                    report.questions,
                    path.display()
                );
            }
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

fn parse_query(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("query: cannot parse {s:?}")))
        })
        .collect()
}

pub fn inspect_memory(shared: &Shared, path: &Path, query: Option<&str>, k: usize, limit: usize) -> Result<()> {
    let bank = load_bank(path)?;
    let mut out = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(
        out,
        "{} entries (d_z = {}, d_c = {})",
        bank.len(),
        bank.d_z(),
        bank.d_c()
    );
    for e in bank.entries().take(limit) {
        let _ = writeln!(
            out,
            "#{:<6} action {} reward {} key {:?} value {:?}",
            e.insert_index, e.action, e.reward, e.key, e.value
        );
    }
    if bank.len() > limit {
        let _ = writeln!(out, "... {} more", bank.len() - limit);
    }
    let q = match query {
        Some(text) => parse_query(text)?,
        None => match bank.entries().next() {
            Some(e) => e.key.iter().map(|&x| x as f64).collect(),
            None => vec![1.0; bank.d_z()],
        },
    };
    let result = bank.retrieve(&q, &RetrievalConfig { k, temperature: 1.0 })?;
    if result.is_cold_start() {
        let _ = writeln!(out, "query: cold start (empty bank), belief = 0");
    } else {
        let _ = writeln!(out, "query top-{k}:");
        for ((i, s), w) in result.indices.iter().zip(&result.similarities).zip(&result.weights) {
            let _ = writeln!(out, "  #{i:<6} similarity {s:.6} weight {w:.6}");
        }
    }
    if !shared.quiet {
        print!("{out}");
    }
    Ok(())
}

pub fn verify(cfg: &RunConfig, shared: &Shared, gates: &[String], fault: Option<&str>) -> Result<bool> {
    let selected = if gates.is_empty() {
        Gate::ALL.to_vec()
    } else {
        gates.iter().map(|g| Gate::parse(g)).collect::<Result<Vec<_>>>()?
    };
    let fault = fault.map(Fault::parse).transpose()?;
    let reports = run_gates(&selected, cfg.seed, fault);
    if !shared.quiet {
        println!("{:<12} {:<6} {:>8} {:>9}  detail", "gate", "result", "cases", "seconds");
        for r in &reports {
            println!(
                "{:<12} {:<6} {:>8} {:>9.3}  {}",
                r.gate.name(),
                if r.passed { "pass" } else { "FAIL" },
                r.cases,
                r.seconds,
                r.detail
            );
        }
    }
    match reports.iter().find(|r| !r.passed) {
        Some(r) => {
            eprintln!("first failing gate: {}", r.gate.name());
            Ok(false)
        }
        None => Ok(true),
    }
}
