//! JSONL and JSON file helpers. Parse failures are schema errors with the
//! offending line; missing or unwritable files are IO errors.

use std::fs;
use std::path::Path;

use aepo_core::env::Task;
use aepo_core::policy::PolicyParams;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Non-empty lines of `text` with their 1-based line numbers.
pub fn jsonl_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>, CliError> {
    jsonl_lines(text)
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| CliError::schema(path, n, e)))
        .collect()
}

pub fn read_tasks(path: &Path) -> Result<Vec<Task>, CliError> {
    let text = read_text(path)?;
    let tasks: Vec<Task> = parse_jsonl(path, &text)?;
    if tasks.is_empty() {
        return Err(CliError::schema(path, 0, "no tasks"));
    }
    let d = tasks[0].instruction.len();
    for (i, t) in tasks.iter().enumerate() {
        t.validate().map_err(|e| CliError::schema(path, i + 1, e))?;
        if t.instruction.len() != d {
            return Err(CliError::schema(
                path,
                i + 1,
                "feature dimension differs from the first task",
            ));
        }
    }
    Ok(tasks)
}

pub fn write_tasks(path: &Path, tasks: &[Task]) -> Result<(), CliError> {
    write_text(path, &to_jsonl(tasks))
}

pub fn read_params(path: &Path) -> Result<PolicyParams, CliError> {
    let text = read_text(path)?;
    let p: PolicyParams = serde_json::from_str(&text).map_err(|e| CliError::schema(path, 1, e))?;
    p.validate().map_err(|e| CliError::schema(path, 1, e))?;
    Ok(p)
}

pub fn write_params(path: &Path, params: &PolicyParams) -> Result<(), CliError> {
    let mut text = serde_json::to_string(params).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}
