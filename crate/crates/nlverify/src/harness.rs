//! Benchmark tasks: loading, running or importing verdicts, judging and
//! reporting confusion counts with scores.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use glob::{MatchOptions, Pattern};
use nlverify_core::libattrs::LibAttrs;
use nlverify_core::prompt::TemplateSet;
use nlverify_core::score::{judge, metrics, svcomp_score, ConfusionCounts, Metrics, OutcomeClass};
use nlverify_core::{Mode, PassTag, Property, Verdict};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::driver::{Analysis, DriverError, FailedFunction, VerificationReport};
use crate::frontend::{command_for_file, load_program};
use crate::provider::Provider;
use crate::store::Store;

pub const BUILTIN_CATEGORIES: &str = include_str!("../categories.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Juliet,
    DataStructure,
    ControlFlow,
    Array,
    LinkedList,
    Other,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Juliet,
        Category::DataStructure,
        Category::ControlFlow,
        Category::Array,
        Category::LinkedList,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Juliet => "juliet",
            Category::DataStructure => "data_structure",
            Category::ControlFlow => "control_flow",
            Category::Array => "array",
            Category::LinkedList => "linked_list",
            Category::Other => "other",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL.iter().copied().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("category config: {0}")]
    Categories(String),
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("verdict file {path}: {message}")]
    Verdicts { path: PathBuf, message: String },
}

/// Ordered category rules; the first matching pattern wins.
#[derive(Debug, Clone)]
pub struct Categories {
    rules: Vec<(Category, Vec<Pattern>)>,
}

#[derive(Deserialize)]
struct CategoryFile {
    category: Vec<CategoryEntry>,
}

#[derive(Deserialize)]
struct CategoryEntry {
    name: String,
    patterns: Vec<String>,
}

const MATCH: MatchOptions = MatchOptions { case_sensitive: false, require_literal_separator: true, require_literal_leading_dot: false };

impl Categories {
    pub fn builtin() -> Self {
        Categories::parse(BUILTIN_CATEGORIES).expect("built-in category config parses")
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let file: CategoryFile = toml::from_str(text).map_err(|e| HarnessError::Categories(e.to_string()))?;
        let mut rules = Vec::new();
        for entry in file.category {
            let cat: Category = entry.name.parse().map_err(HarnessError::Categories)?;
            let pats = entry
                .patterns
                .iter()
                .map(|p| Pattern::new(p).map_err(|e| HarnessError::Categories(format!("{p}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rules.push((cat, pats));
        }
        Ok(Categories { rules })
    }

    /// Category of a task definition path, matched on its trailing components.
    pub fn classify(&self, path: &Path) -> Category {
        let parts: Vec<String> = path.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let tails: Vec<String> = (0..parts.len()).map(|i| parts[i..].join("/")).collect();
        for (cat, pats) in &self.rules {
            if pats.iter().any(|p| tails.iter().any(|t| p.matches_with(t, MATCH))) {
                return *cat;
            }
        }
        Category::Other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchTask {
    /// Definition path relative to the tasks root, without `.yml`.
    pub id: String,
    pub input_files: Vec<PathBuf>,
    pub property: Property,
    /// True when the property holds.
    pub expected_verdict: bool,
    pub category: Category,
}

#[derive(Deserialize)]
struct TaskFile {
    input_files: InputFiles,
    #[serde(default)]
    properties: Vec<TaskProperty>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InputFiles {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct TaskProperty {
    property_file: String,
    expected_verdict: Option<bool>,
}

/// Property named by a property file such as `../properties/valid-memsafety.prp`.
pub fn property_of_file(property_file: &str) -> Option<Property> {
    let stem = Path::new(property_file).file_stem()?.to_str()?;
    stem.parse().ok()
}

/// Tasks of one definition file; unsupported properties are skipped.
pub fn parse_task(root: &Path, yml: &Path, text: &str, categories: &Categories) -> Result<Vec<BenchTask>, String> {
    let file: TaskFile = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
    let rel = yml.strip_prefix(root).unwrap_or(yml);
    let id = rel.with_extension("").to_string_lossy().replace('\\', "/");
    let dir = yml.parent().unwrap_or(Path::new("."));
    let input_files: Vec<PathBuf> = match file.input_files {
        InputFiles::One(f) => vec![dir.join(f)],
        InputFiles::Many(fs) => fs.into_iter().map(|f| dir.join(f)).collect(),
    };
    let category = categories.classify(rel);
    let mut out = Vec::new();
    for p in file.properties {
        let Some(property) = property_of_file(&p.property_file) else {
            log::info!("{id}: skipping unsupported property {}", p.property_file);
            continue;
        };
        let Some(expected_verdict) = p.expected_verdict else {
            log::info!("{id}: {} has no expected verdict", p.property_file);
            continue;
        };
        out.push(BenchTask { id: id.clone(), input_files: input_files.clone(), property, expected_verdict, category });
    }
    Ok(out)
}

/// All tasks under `root`, optionally restricted to one category, sorted
/// by id and property. Malformed definitions are logged and skipped.
pub fn load_tasks(root: &Path, subset: Option<Category>, categories: &Categories) -> Result<Vec<BenchTask>, HarnessError> {
    let pattern = format!("{}/**/*.yml", Pattern::escape(&root.to_string_lossy()));
    let paths = glob::glob(&pattern).map_err(|e| HarnessError::Read { path: root.into(), message: e.to_string() })?;
    let mut out = Vec::new();
    for entry in paths {
        let path = match entry {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{e}");
                continue;
            }
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        match parse_task(root, &path, &text, categories) {
            Ok(ts) => out.extend(ts.into_iter().filter(|t| subset.is_none_or(|c| t.category == c))),
            Err(e) => log::warn!("skipping malformed task {}: {e}", path.display()),
        }
    }
    out.sort_by(|a, b| (&a.id, a.property).cmp(&(&b.id, b.property)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub task: String,
    pub tool: String,
    pub property: Property,
    pub category: Category,
    pub expected_verdict: bool,
    pub verdict: Verdict,
    pub class: OutcomeClass,
}

pub fn judge_task(task: &BenchTask, tool: &str, verdict: Verdict) -> Outcome {
    Outcome {
        task: task.id.clone(),
        tool: tool.into(),
        property: task.property,
        category: task.category,
        expected_verdict: task.expected_verdict,
        verdict,
        class: judge(verdict, task.expected_verdict),
    }
}

pub fn judge_report(report: &VerificationReport, task: &BenchTask, tool: &str) -> Outcome {
    debug_assert_eq!(report.program, task.id);
    judge_task(task, tool, report.verdict)
}

pub fn tool_name(mode: Mode) -> String {
    format!("nlverify-{}", mode.as_str())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "tool".into(), |s| s.to_string_lossy().into_owned())
}

/// Everything a benchmark run shares across tasks.
pub struct BenchSetup<'a> {
    pub cfg: &'a RunConfig,
    pub provider: &'a dyn Provider,
    pub templates: &'a TemplateSet,
    pub attrs: &'a LibAttrs,
    /// Per-task store files go here; `None` keeps stores in memory.
    pub store_dir: Option<&'a Path>,
    pub jobs: usize,
}

/// Analyze one task with a fresh store: in memory, or one file per task
/// and property under the store directory.
pub fn run_task(task: &BenchTask, mode: Mode, setup: &BenchSetup<'_>) -> Result<VerificationReport, DriverError> {
    let cmds: Vec<_> = task.input_files.iter().map(|p| command_for_file(p)).collect();
    let program = load_program(&task.id, &cmds, setup.cfg.preprocess);
    let store = match setup.store_dir {
        Some(dir) => Store::open(&dir.join(format!("{}.{}.{}.jsonl", task.id.replace('/', "__"), task.property.as_str(), mode.as_str())))?,
        None => Store::in_memory(),
    };
    if program.functions.is_empty() && !program.skipped.is_empty() {
        // nothing could be extracted, so no verdict is possible
        let (path, why) = &program.skipped[0];
        log::warn!("{}: cannot extract {}: {why}", task.id, path.display());
        return Ok(VerificationReport {
            program: task.id.clone(),
            property: task.property,
            mode,
            verdict: Verdict::Unknown,
            issues: Vec::new(),
            failed_functions: program
                .skipped
                .iter()
                .map(|(p, why)| FailedFunction { function: p.display().to_string(), pass: PassTag::Verify, reason: why.clone() })
                .collect(),
            unstable: Vec::new(),
            context_overflow: false,
            wall_seconds: 0.0,
            provider_calls: 0,
        });
    }
    let analysis = Analysis::new(&program, &store, setup.provider, setup.templates, setup.cfg).with_attrs(setup.attrs);
    analysis.run(task.property, mode)
}

/// Run every task in every mode with up to `jobs` tasks in flight. Tasks
/// that hit a store error are judged UNKNOWN.
pub fn run_tasks(tasks: &[BenchTask], modes: &[Mode], setup: &BenchSetup<'_>) -> Vec<Outcome> {
    let work: Vec<(&BenchTask, Mode)> = tasks.iter().flat_map(|t| modes.iter().map(move |m| (t, *m))).collect();
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, Outcome)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..setup.jobs.clamp(1, work.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(task, mode)) = work.get(i) else { break };
                let verdict = match run_task(task, mode, setup) {
                    Ok(r) => r.verdict,
                    Err(e) => {
                        log::error!("{}: {e}", task.id);
                        Verdict::Unknown
                    }
                };
                done.lock().expect("outcomes poisoned").push((i, judge_task(task, &tool_name(mode), verdict)));
            });
        }
    });
    let mut done = done.into_inner().expect("outcomes poisoned");
    done.sort_by_key(|(i, _)| *i);
    done.into_iter().map(|(_, o)| o).collect()
}

fn parse_verdict(s: &str) -> Option<Verdict> {
    let s = s.trim().to_ascii_lowercase();
    if s.starts_with("true") {
        Some(Verdict::True)
    } else if s.starts_with("false") {
        Some(Verdict::False)
    } else if matches!(s.as_str(), "unknown" | "unk" | "timeout" | "error" | "out of memory" | "") {
        Some(Verdict::Unknown)
    } else {
        None
    }
}

/// Verdicts keyed by task id and, when the file names one, property.
pub type ImportedVerdicts = HashMap<(String, Option<Property>), Verdict>;

/// Verdicts of another tool from CSV rows `task id, verdict[, property]`.
/// The tool is named after the file stem. A header row is tolerated.
pub fn read_verdicts(path: &Path) -> Result<(String, ImportedVerdicts), HarnessError> {
    let err = |message: String| HarnessError::Verdicts { path: path.into(), message };
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path).map_err(|e| err(e.to_string()))?;
    let mut out = HashMap::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| err(e.to_string()))?;
        let (Some(id), Some(v)) = (row.get(0), row.get(1)) else {
            return Err(err(format!("row {}: expected at least two columns", n + 1)));
        };
        let Some(verdict) = parse_verdict(v) else {
            if n == 0 {
                continue;
            }
            return Err(err(format!("row {}: unknown verdict `{v}`", n + 1)));
        };
        let property = match row.get(2).filter(|p| !p.is_empty()) {
            Some(p) => Some(p.parse::<Property>().map_err(|_| err(format!("row {}: unknown property `{p}`", n + 1)))?),
            None => None,
        };
        out.insert((id.trim_end_matches(".yml").to_string(), property), verdict);
    }
    Ok((file_stem(path), out))
}

/// Judge imported verdicts; tasks missing from the file count as UNKNOWN.
pub fn judge_imported(tasks: &[BenchTask], tool: &str, verdicts: &ImportedVerdicts) -> Vec<Outcome> {
    tasks
        .iter()
        .map(|t| {
            let v = verdicts
                .get(&(t.id.clone(), Some(t.property)))
                .or_else(|| verdicts.get(&(t.id.clone(), None)))
                .copied()
                .unwrap_or_else(|| {
                    log::info!("{tool}: no verdict for {}", t.id);
                    Verdict::Unknown
                });
            judge_task(t, tool, v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub category: Category,
    pub tool: String,
    pub property: Property,
    pub counts: ConfusionCounts,
    pub score: i64,
    pub metrics: Metrics,
}

/// Fold outcomes into rows ordered by category, tool, property.
pub fn aggregate(outcomes: &[Outcome]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(Category, String, Property), ConfusionCounts> = BTreeMap::new();
    for o in outcomes {
        groups.entry((o.category, o.tool.clone(), o.property)).or_default().add(o.class, o.expected_verdict);
    }
    groups
        .into_iter()
        .map(|((category, tool, property), counts)| ReportRow { category, tool, property, score: svcomp_score(&counts), metrics: metrics(&counts), counts })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

fn ratio(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

pub fn emit_report(outcomes: &[Outcome], format: ReportFormat) -> String {
    let rows = aggregate(outcomes);
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&serde_json::json!({ "rows": rows })).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Table => {
            let mut s = String::new();
            let header = ["category", "tool", "property", "TP", "FP", "TN", "FN", "UNK", "score", "accuracy", "precision", "recall"];
            let mut lines: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
            for r in &rows {
                let c = &r.counts;
                lines.push(vec![
                    r.category.as_str().into(),
                    r.tool.clone(),
                    r.property.as_str().into(),
                    c.tp.to_string(),
                    c.fp.to_string(),
                    c.tn.to_string(),
                    c.fn_.to_string(),
                    c.unk.to_string(),
                    r.score.to_string(),
                    ratio(r.metrics.accuracy),
                    ratio(r.metrics.precision),
                    ratio(r.metrics.recall),
                ]);
            }
            let widths: Vec<usize> = (0..header.len()).map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0)).collect();
            for l in lines {
                let cells: Vec<String> = l
                    .iter()
                    .enumerate()
                    .map(|(i, c)| if i < 3 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                    .collect();
                let _ = writeln!(s, "{}", cells.join("  ").trim_end());
            }
            s
        }
    }
}
