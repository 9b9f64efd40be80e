//! Job lists for `batch`.
//!
//! One job per line: a subcommand, a config path and optional `key=value`
//! overrides, separated by whitespace. Blank lines and lines starting with
//! `#` are skipped. Paths containing spaces can be double-quoted.

use std::path::PathBuf;

pub const COMMANDS: [&str; 6] = ["prepare", "refine", "evaluate", "diagnose-matching", "fetch-weights", "report"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub line: usize,
    pub command: String,
    pub config: PathBuf,
    pub overrides: Vec<String>,
}

impl Job {
    /// Arguments for a child invocation of the binary.
    pub fn args(&self) -> Vec<String> {
        let mut a = vec![self.command.clone(), "--config".into(), self.config.to_string_lossy().into_owned()];
        for o in &self.overrides {
            a.push("--set".into());
            a.push(o.clone());
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("job list line {line}: {message}")]
pub struct JobListError {
    pub line: usize,
    pub message: String,
}

fn split_words(s: &str) -> Result<Vec<String>, String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut started = false;
    for ch in s.chars() {
        match ch {
            '"' => {
                in_quotes = !in_quotes;
                started = true;
            }
            c if c.is_whitespace() && !in_quotes => {
                if started {
                    words.push(std::mem::take(&mut cur));
                    started = false;
                }
            }
            c => {
                cur.push(c);
                started = true;
            }
        }
    }
    if in_quotes {
        return Err("unterminated quote".into());
    }
    if started {
        words.push(cur);
    }
    Ok(words)
}

pub fn parse_job_list(text: &str) -> Result<Vec<Job>, JobListError> {
    let mut jobs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| JobListError { line, message };
        let words = split_words(trimmed).map_err(err)?;
        let [command, config, rest @ ..] = words.as_slice() else {
            return Err(err("expected `<command> <config> [key=value ...]`".into()));
        };
        if !COMMANDS.contains(&command.as_str()) {
            return Err(err(format!("unknown command `{command}`")));
        }
        if config.is_empty() {
            return Err(err("empty config path".into()));
        }
        if let Some(bad) = rest.iter().find(|o| !o.contains('=') || o.starts_with('=')) {
            return Err(err(format!("override `{bad}` is not key=value")));
        }
        jobs.push(Job {
            line,
            command: command.clone(),
            config: PathBuf::from(config),
            overrides: rest.to_vec(),
        });
    }
    Ok(jobs)
}
