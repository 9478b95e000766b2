//! JSON-lines dataset files: one [`QAStep`] per line, sessions contiguous.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{QAStep, Session};
use crate::{Error, Result};

pub fn write_dataset(sessions: &[Session], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for step in sessions.iter().flat_map(|s| &s.steps) {
        serde_json::to_writer(&mut out, step).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset, checking each step against its neighbours. Errors carry
/// the 1-based line number.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Session>> {
    let reader = BufReader::new(File::open(path)?);
    let mut sessions: Vec<Session> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse { line: line_no, message };
        let step: QAStep = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        validate_step(&step).map_err(parse)?;

        match sessions.last_mut() {
            Some(s) if s.session_id == step.session_id => {
                if step.intent_truth != s.intent {
                    return Err(parse(format!(
                        "intent {} differs from earlier steps of session {} ({})",
                        step.intent_truth, s.session_id, s.intent
                    )));
                }
                let first = &s.steps[0];
                if step.visual_raw.len() != first.visual_raw.len()
                    || step.language_raw.len() != first.language_raw.len()
                    || step.k_ans != first.k_ans
                {
                    return Err(parse("feature sizes differ within a session".into()));
                }
                if step.step != s.steps.len() {
                    return Err(parse(format!("expected step {}, found {}", s.steps.len(), step.step)));
                }
                s.steps.push(step);
            }
            _ => {
                if !seen.insert(step.session_id) {
                    return Err(parse(format!("session {} is not contiguous", step.session_id)));
                }
                if step.step != 0 {
                    return Err(parse(format!("session {} starts at step {}", step.session_id, step.step)));
                }
                sessions.push(Session {
                    session_id: step.session_id,
                    intent: step.intent_truth,
                    steps: vec![step],
                });
            }
        }
    }
    Ok(sessions)
}

fn validate_step(step: &QAStep) -> std::result::Result<(), String> {
    if step.k_ans < 2 {
        return Err(format!("k_ans must be at least 2, found {}", step.k_ans));
    }
    if step.label >= step.k_ans {
        return Err(format!("label {} out of range for k_ans {}", step.label, step.k_ans));
    }
    if step.visual_raw.is_empty() || step.language_raw.is_empty() {
        return Err("empty feature vector".into());
    }
    if !step.visual_raw.iter().chain(&step.language_raw).all(|x| x.is_finite()) {
        return Err("non-finite feature value".into());
    }
    Ok(())
}
