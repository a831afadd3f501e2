//! Command-line front end. `dispatch` parses arguments, runs one
//! subcommand and returns the process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nlverify_core::libattrs::LibAttrs;
use nlverify_core::prompt::TemplateSet;
use nlverify_core::{Mode, PassTag, Property, Verdict};

use crate::compdb::{load_compilation_db, CompdbError, CompileCommand};
use crate::config::{load_config, ProviderKind, RunConfig};
use crate::driver::Analysis;
use crate::frontend::{command_for_file, load_program, Program};
use crate::harness::{self, BenchSetup, Categories, Category, ReportFormat};
use crate::provider::{HttpProvider, Provider, RuleProvider};
use crate::store::Store;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ISSUE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ENV: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "nlverify", version, about = "Compositional LLM-driven verification of C programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract functions, call sites and types and print them as JSON
    Extract {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        common: Common,
        /// Write the JSON here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a property of a program and print a verification report
    #[command(visible_alias = "verify")]
    Analyze {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        common: Common,
        /// valid-memsafety, valid-memcleanup or no-overflow
        #[arg(long)]
        property: Property,
        /// compositional or baseline
        #[arg(long, default_value = "compositional")]
        mode: Mode,
        /// Summary store file (JSON lines)
        #[arg(long)]
        store: Option<String>,
        /// Iteration bound for recursive components
        #[arg(long, allow_negative_numbers = true)]
        fixpoint_bound: Option<String>,
        /// Entry function for leak verdicts
        #[arg(long)]
        entry: Option<String>,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 1 when the verdict is FALSE
        #[arg(long)]
        fail_on_issue: bool,
    },
    /// Run or import verdicts over a benchmark task tree and report scores
    Bench {
        #[command(flatten)]
        common: Common,
        /// Root directory of task definition files
        #[arg(long)]
        tasks: PathBuf,
        /// Restrict to one category (juliet, data_structure, control_flow, array, linked_list, other)
        #[arg(long)]
        subset: Option<Category>,
        /// compositional, baseline or both; defaults to compositional
        /// unless only imported verdicts are requested
        #[arg(long)]
        mode: Option<String>,
        /// CSV of another tool's verdicts (task id, verdict[, property]); repeatable
        #[arg(long)]
        import_verdicts: Vec<PathBuf>,
        /// json or table
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        /// Tasks analyzed in parallel
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Keep one store file per task in this directory
        #[arg(long)]
        store_dir: Option<PathBuf>,
        /// Category rules file replacing the built-in one
        #[arg(long)]
        categories: Option<PathBuf>,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretty-print the latest stored summary of a function for a pass
    ShowSummary {
        function: String,
        pass: PassTag,
        /// Summary store file
        #[arg(long)]
        store: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Input {
    /// C source files
    files: Vec<PathBuf>,
    /// compile_commands.json listing the translation units
    #[arg(long)]
    compdb: Option<PathBuf>,
}

/// Settings shared by every subcommand. Values are validated by the
/// configuration layer so errors name the offending key.
#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// rule or http
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    temperature: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    max_retries: Option<String>,
    /// Request timeout in seconds
    #[arg(long, allow_negative_numbers = true)]
    timeout: Option<String>,
    /// Concurrent provider requests
    #[arg(long, allow_negative_numbers = true)]
    max_inflight: Option<String>,
    /// Functions longer than this many characters are summarized block-wise
    #[arg(long, allow_negative_numbers = true)]
    block_budget: Option<String>,
    /// Character budget of the whole-program prompt
    #[arg(long, allow_negative_numbers = true)]
    baseline_budget: Option<String>,
    /// on or off
    #[arg(long)]
    preprocess: Option<String>,
    /// Directory of `<name>.txt` files overriding built-in templates
    #[arg(long)]
    templates: Option<String>,
    /// none, instructions or source
    #[arg(long)]
    cache_mode: Option<String>,
    #[arg(long)]
    log_level: Option<String>,
    /// JSON map from library function name to attribute list
    #[arg(long)]
    libattrs: Option<PathBuf>,
}

impl Common {
    fn flags(&self) -> Vec<(String, String)> {
        let pairs = [
            ("provider", &self.provider),
            ("endpoint", &self.endpoint),
            ("model", &self.model),
            ("temperature", &self.temperature),
            ("max_retries", &self.max_retries),
            ("timeout", &self.timeout),
            ("max_inflight", &self.max_inflight),
            ("block_budget", &self.block_budget),
            ("baseline_budget", &self.baseline_budget),
            ("preprocess", &self.preprocess),
            ("templates", &self.templates),
            ("cache_mode", &self.cache_mode),
            ("log_level", &self.log_level),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect()
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Env(String),
}

impl From<CompdbError> for CliError {
    fn from(e: CompdbError) -> Self {
        match e {
            CompdbError::MalformedDatabase(_) => CliError::Usage(e.to_string()),
            _ => CliError::Env(e.to_string()),
        }
    }
}

/// Standard output and error streams of one invocation.
pub struct Io<'a> {
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Run one command line. `env` looks up environment variables.
pub fn dispatch<I, T>(argv: I, env: &dyn Fn(&str) -> Option<String>, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(io.stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(io.stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match run(cli.command, env, io) {
        Ok(code) => code,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(io.stderr, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Env(m)) => {
            let _ = writeln!(io.stderr, "error: {m}");
            EXIT_ENV
        }
    }
}

fn config(common: &Common, extra: &[(&str, &Option<String>)], env: &dyn Fn(&str) -> Option<String>) -> Result<RunConfig, CliError> {
    let mut flags = common.flags();
    flags.extend(extra.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))));
    let cfg = load_config(common.config.as_deref(), env, &flags).map_err(|e| CliError::Usage(e.to_string()))?;
    // a second init fails harmlessly when dispatch runs more than once
    let _ = env_logger::Builder::new().parse_filters(&cfg.log_level).format_timestamp(None).try_init();
    Ok(cfg)
}

fn templates(cfg: &RunConfig) -> Result<TemplateSet, CliError> {
    let mut set = TemplateSet::builtin();
    let Some(dir) = &cfg.templates else { return Ok(set) };
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("template directory {} does not exist", dir.display())));
    }
    for name in TemplateSet::names() {
        let path = dir.join(format!("{name}.txt"));
        if path.is_file() {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Env(format!("{}: {e}", path.display())))?;
            set.set(name, &text).map_err(|e| CliError::Usage(e.to_string()))?;
            log::info!("template {name} overridden from {}", path.display());
        }
    }
    Ok(set)
}

fn libattrs(path: Option<&Path>) -> Result<LibAttrs, CliError> {
    let mut attrs = LibAttrs::builtin();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Env(format!("{}: {e}", p.display())))?;
        attrs.overlay_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
    }
    Ok(attrs)
}

fn provider(cfg: &RunConfig) -> Result<Box<dyn Provider>, CliError> {
    match cfg.provider_kind {
        ProviderKind::Rule => Ok(Box::new(RuleProvider)),
        ProviderKind::Http => {
            let p = HttpProvider::new(cfg.provider.clone());
            p.preflight().map_err(|e| CliError::Env(format!("provider endpoint {}: {e}", cfg.provider.endpoint)))?;
            Ok(Box::new(p))
        }
    }
}

fn program(input: &Input, cfg: &RunConfig) -> Result<Program, CliError> {
    let (id, cmds): (String, Vec<CompileCommand>) = match (&input.compdb, input.files.is_empty()) {
        (Some(_), false) => return Err(CliError::Usage("give either source files or --compdb, not both".into())),
        (None, true) => return Err(CliError::Usage("no input: give source files or --compdb".into())),
        (Some(db), true) => (db.display().to_string(), load_compilation_db(db)?),
        (None, false) => {
            let id = input.files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>().join(",");
            (id, input.files.iter().map(|f| command_for_file(f)).collect())
        }
    };
    let program = load_program(&id, &cmds, cfg.preprocess);
    for (path, why) in &program.skipped {
        log::warn!("skipped {}: {why}", path.display());
    }
    if program.functions.is_empty() && !program.skipped.is_empty() {
        let (path, why) = &program.skipped[0];
        return Err(CliError::Env(format!("nothing extracted; {}: {why}", path.display())));
    }
    Ok(program)
}

fn emit(text: &str, out: Option<&Path>, io: &mut Io<'_>) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Env(format!("{}: {e}", p.display()))),
        None => io.stdout.write_all(text.as_bytes()).map_err(|e| CliError::Env(format!("stdout: {e}"))),
    }
}

fn json(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn run(command: Command, env: &dyn Fn(&str) -> Option<String>, io: &mut Io<'_>) -> Result<i32, CliError> {
    match command {
        Command::Extract { input, common, out } => {
            let cfg = config(&common, &[], env)?;
            let program = program(&input, &cfg)?;
            emit(&json(&program), out.as_deref(), io)?;
            Ok(EXIT_OK)
        }
        Command::Analyze { input, common, property, mode, store, fixpoint_bound, entry, out, fail_on_issue } => {
            let cfg = config(&common, &[("store", &store), ("fixpoint_bound", &fixpoint_bound), ("entry", &entry)], env)?;
            let templates = templates(&cfg)?;
            let attrs = libattrs(common.libattrs.as_deref())?;
            let program = program(&input, &cfg)?;
            let store = match &cfg.store {
                Some(p) => Store::open(p).map_err(|e| CliError::Env(e.to_string()))?,
                None => Store::in_memory(),
            };
            let provider = provider(&cfg)?;
            let analysis = Analysis::new(&program, &store, provider.as_ref(), &templates, &cfg).with_attrs(&attrs);
            let report = analysis.run(property, mode).map_err(|e| CliError::Env(e.to_string()))?;
            emit(&json(&report), out.as_deref(), io)?;
            Ok(if fail_on_issue && report.verdict == Verdict::False { EXIT_ISSUE } else { EXIT_OK })
        }
        Command::Bench { common, tasks, subset, mode, import_verdicts, format, jobs, store_dir, categories, out } => {
            let cfg = config(&common, &[], env)?;
            if !tasks.is_dir() {
                return Err(CliError::Usage(format!("task root {} is not a directory", tasks.display())));
            }
            let modes = match mode.as_deref() {
                None if !import_verdicts.is_empty() => Vec::new(),
                None => vec![Mode::Compositional],
                Some("both") => vec![Mode::Compositional, Mode::Baseline],
                Some(m) => vec![m.parse::<Mode>().map_err(|_| CliError::Usage(format!("unknown mode `{m}`")))?],
            };
            let cats = match &categories {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::Env(format!("{}: {e}", p.display())))?;
                    Categories::parse(&text).map_err(|e| CliError::Usage(e.to_string()))?
                }
                None => Categories::builtin(),
            };
            let task_list = harness::load_tasks(&tasks, subset, &cats).map_err(|e| CliError::Env(e.to_string()))?;
            log::info!("{} tasks", task_list.len());
            let mut outcomes = Vec::new();
            for csv in &import_verdicts {
                let (tool, verdicts) = harness::read_verdicts(csv).map_err(|e| CliError::Usage(e.to_string()))?;
                outcomes.extend(harness::judge_imported(&task_list, &tool, &verdicts));
            }
            if !modes.is_empty() {
                let templates = templates(&cfg)?;
                let attrs = libattrs(common.libattrs.as_deref())?;
                let provider = provider(&cfg)?;
                let setup = BenchSetup {
                    cfg: &cfg,
                    provider: provider.as_ref(),
                    templates: &templates,
                    attrs: &attrs,
                    store_dir: store_dir.as_deref(),
                    jobs,
                };
                outcomes.extend(harness::run_tasks(&task_list, &modes, &setup));
            }
            emit(&harness::emit_report(&outcomes, format), out.as_deref(), io)?;
            Ok(EXIT_OK)
        }
        Command::ShowSummary { function, pass, store, common } => {
            let cfg = config(&common, &[("store", &store)], env)?;
            let Some(path) = &cfg.store else {
                return Err(CliError::Usage("no store given; use --store".into()));
            };
            if !path.is_file() {
                return Err(CliError::Env(format!("store {} does not exist", path.display())));
            }
            let store = Store::open(path).map_err(|e| CliError::Env(e.to_string()))?;
            let Some((key, record)) = store.latest_entry(&function, pass) else {
                return Err(CliError::Usage(format!("no {pass} summary for `{function}` in {}", path.display())));
            };
            emit(&json(&serde_json::json!({ "key": key, "record": record.to_value() })), None, io)?;
            Ok(EXIT_OK)
        }
    }
}
