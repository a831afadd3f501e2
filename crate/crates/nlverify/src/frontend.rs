//! Turning compile commands into one merged program.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use nlverify_core::extract::{collect_macros, parse_translation_unit, Extraction, ParseError};
use nlverify_core::{CallsiteRecord, FunctionRecord, TypeContext};

use crate::compdb::CompileCommand;

#[derive(Debug, thiserror::Error)]
pub enum FrontendError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
}

/// Every function, callsite and type of the analyzed translation units.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct Program {
    pub id: String,
    pub functions: Vec<FunctionRecord>,
    pub callsites: Vec<CallsiteRecord>,
    pub types: TypeContext,
    pub diagnostics: Vec<String>,
    /// Files that could not be read or parsed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Flags that matter to the preprocessor; everything else is dropped.
fn preprocess_args(cmd: &CompileCommand) -> (String, Vec<String>) {
    let mut it = cmd.arguments.iter();
    let compiler = it.next().cloned().unwrap_or_else(|| "cc".into());
    let file = cmd.file.to_string_lossy();
    let mut args = Vec::new();
    let mut skip_next = false;
    let mut keep_next = false;
    for a in it {
        if skip_next {
            skip_next = false;
            continue;
        }
        if keep_next {
            keep_next = false;
            args.push(a.clone());
            continue;
        }
        match a.as_str() {
            "-o" | "-MF" | "-MT" | "-MQ" => skip_next = true,
            "-I" | "-D" | "-U" | "-include" | "-isystem" | "-iquote" | "-idirafter" => {
                args.push(a.clone());
                keep_next = true;
            }
            s if s == file || Path::new(s) == cmd.source_path() => {}
            s if s.starts_with("-I") || s.starts_with("-D") || s.starts_with("-U") || s.starts_with("-std=") || s.starts_with("-isystem") || s.starts_with("-m") || s.starts_with("-f") => args.push(a.clone()),
            _ => {}
        }
    }
    args.push("-E".into());
    args.push(file.into_owned());
    (compiler, args)
}

fn run_preprocessor(cmd: &CompileCommand) -> Result<String, String> {
    let (compiler, args) = preprocess_args(cmd);
    let out = Command::new(&compiler)
        .args(&args)
        .current_dir(&cmd.directory)
        .output()
        .map_err(|e| format!("cannot run `{compiler}`: {e}"))?;
    if !out.status.success() {
        let err = String::from_utf8_lossy(&out.stderr);
        return Err(format!("`{compiler} -E` failed: {}", err.lines().next().unwrap_or("").trim()));
    }
    String::from_utf8(out.stdout).map_err(|_| "preprocessor output is not UTF-8".into())
}

/// Extract one translation unit. With `preprocess`, bodies are taken from
/// the compiler's `-E` output; when that fails the original source is used
/// and a diagnostic records the fallback.
pub fn extract_translation_unit(cmd: &CompileCommand, preprocess: bool) -> Result<Extraction, FrontendError> {
    let path = cmd.source_path();
    let original = fs::read_to_string(&path).map_err(|source| FrontendError::Read { path: path.clone(), source })?;
    let name = cmd.file.to_string_lossy().into_owned();
    let parse = |text: &str| parse_translation_unit(&name, text).map_err(|source| FrontendError::Parse { path: path.clone(), source });
    if preprocess {
        match run_preprocessor(cmd) {
            Ok(expanded) => {
                let mut ex = parse(&expanded)?;
                ex.types.macros.extend(collect_macros(&original));
                return Ok(ex);
            }
            Err(reason) => {
                log::warn!("{name}: preprocessing failed, using original source: {reason}");
                let mut ex = parse(&original)?;
                ex.diagnostics.push(format!("preprocess fallback: {reason}"));
                return Ok(ex);
            }
        }
    }
    parse(&original)
}

/// A compile command for a bare source file.
pub fn command_for_file(path: &Path) -> CompileCommand {
    let directory = path.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let file = path.file_name().map_or_else(|| path.to_path_buf(), PathBuf::from);
    CompileCommand {
        directory,
        arguments: vec!["cc".into(), "-c".into(), file.to_string_lossy().into_owned()],
        file,
    }
}

/// Extract every command concurrently and merge the results ordered by
/// (file, line span). Unreadable or unparseable files are skipped.
pub fn load_program(id: &str, cmds: &[CompileCommand], preprocess: bool) -> Program {
    let results: Vec<Result<Extraction, FrontendError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cmds.iter().map(|c| s.spawn(move || extract_translation_unit(c, preprocess))).collect();
        handles.into_iter().map(|h| h.join().expect("extraction thread panicked")).collect()
    });
    let mut program = Program { id: id.into(), ..Default::default() };
    for (cmd, r) in cmds.iter().zip(results) {
        match r {
            Ok(ex) => {
                program.functions.extend(ex.functions);
                program.callsites.extend(ex.callsites);
                program.types.merge(ex.types);
                let file = cmd.file.display();
                program.diagnostics.extend(ex.diagnostics.into_iter().map(|d| format!("{file}: {d}")));
            }
            Err(e) => {
                log::error!("skipping {}: {e}", cmd.source_path().display());
                program.skipped.push((cmd.source_path(), e.to_string()));
            }
        }
    }
    program.functions.sort_by(|a, b| (&a.file_path, a.line_span).cmp(&(&b.file_path, b.line_span)));
    program.callsites.sort_by(|a, b| (&a.file_path, a.line, a.span).cmp(&(&b.file_path, b.line, b.span)));
    program
}
