//! `compile_commands.json` loading.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileCommand {
    pub directory: PathBuf,
    pub file: PathBuf,
    /// Command tokens; a `command` string is split with shell quoting rules.
    pub arguments: Vec<String>,
}

impl CompileCommand {
    /// `file` resolved against `directory`.
    pub fn source_path(&self) -> PathBuf {
        if self.file.is_absolute() {
            self.file.clone()
        } else {
            self.directory.join(&self.file)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CompdbError {
    #[error("compilation database not found: {0}")]
    FileNotFound(PathBuf),
    #[error("cannot read compilation database {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed compilation database: {0}")]
    MalformedDatabase(String),
}

pub fn load_compilation_db(path: &Path) -> Result<Vec<CompileCommand>, CompdbError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CompdbError::FileNotFound(path.to_path_buf()),
        _ => CompdbError::Io { path: path.to_path_buf(), source: e },
    })?;
    parse_compilation_db(&text)
}

pub fn parse_compilation_db(text: &str) -> Result<Vec<CompileCommand>, CompdbError> {
    let malformed = |m: String| CompdbError::MalformedDatabase(m);
    let v: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let Value::Array(entries) = v else {
        return Err(malformed("top level is not an array".into()));
    };
    let mut out = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let Some(obj) = e.as_object() else {
            return Err(malformed(format!("entry {i} is not an object")));
        };
        let string = |k: &str| obj.get(k).and_then(Value::as_str);
        let file = match string("file") {
            Some(f) if !f.is_empty() => f,
            _ => return Err(malformed(format!("entry {i}: missing `file`"))),
        };
        let directory = string("directory").ok_or_else(|| malformed(format!("entry {i}: missing `directory`")))?;
        let arguments = match (obj.get("arguments"), obj.get("command")) {
            (Some(a), None) => a
                .as_array()
                .and_then(|a| a.iter().map(|t| t.as_str().map(String::from)).collect::<Option<Vec<_>>>())
                .ok_or_else(|| malformed(format!("entry {i}: `arguments` must be an array of strings")))?,
            (None, Some(c)) => c
                .as_str()
                .and_then(shlex::split)
                .ok_or_else(|| malformed(format!("entry {i}: `command` must be a shell-quotable string")))?,
            (Some(_), Some(_)) => return Err(malformed(format!("entry {i}: both `arguments` and `command`"))),
            (None, None) => return Err(malformed(format!("entry {i}: missing `arguments` or `command`"))),
        };
        out.push(CompileCommand { directory: directory.into(), file: file.into(), arguments });
    }
    Ok(out)
}
