//! Bottom-up pass orchestration, the compositional verdict and the
//! whole-program baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nlverify_core::blocks::split_function_blocks;
use nlverify_core::callgraph::Scc;
use nlverify_core::json::{extract_json, REPROMPT_SUFFIX};
use nlverify_core::lex::contains_word;
use nlverify_core::libattrs::LibAttrs;
use nlverify_core::prompt::{
    annotate_callsites, baseline_issue_kinds, render_baseline_prompt, render_block_prompt, render_external_prompt,
    render_merge_prompt, render_summarizer_prompt, render_verifier_prompt, PromptBundle, PromptError, PromptExtras,
    TemplateSet,
};
use nlverify_core::summary::{
    callee_context, external_key, input_hash, own_passes, semantic_warnings, validate, validate_program_issues, Issue,
    IssueKind, LeakSummary, Severity, SummarySource,
};
use nlverify_core::{CallGraph, Mode, PassTag, Property, SummaryKey, SummaryRecord, Verdict};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::frontend::Program;
use crate::provider::Provider;
use crate::store::{Store, StoreError};

/// Function name used for failures of the whole-program prompt.
pub const WHOLE_PROGRAM: &str = "<whole-program>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailedFunction {
    pub function: String,
    pub pass: PassTag,
    pub reason: String,
}

/// An issue attributed to the function whose summary reported it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportIssue {
    pub function: String,
    #[serde(flatten)]
    pub issue: Issue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub program: String,
    pub property: Property,
    pub mode: Mode,
    pub verdict: Verdict,
    pub issues: Vec<ReportIssue>,
    pub failed_functions: Vec<FailedFunction>,
    /// Members of recursive components still changing at the fixed-point bound.
    pub unstable: Vec<String>,
    pub context_overflow: bool,
    pub wall_seconds: f64,
    pub provider_calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PassReport {
    pub pass: Option<PassTag>,
    /// Functions summarized by the provider, in completion order.
    pub summarized: Vec<String>,
    pub cached: usize,
    pub failed: Vec<FailedFunction>,
    pub unstable: Vec<String>,
    /// Fixed-point iterations per recursive component, keyed by its first member.
    pub iterations: BTreeMap<String, u32>,
}

impl PassReport {
    fn absorb(&mut self, other: PassReport) {
        self.summarized.extend(other.summarized);
        self.cached += other.cached;
        self.failed.extend(other.failed);
        self.unstable.extend(other.unstable);
        self.iterations.extend(other.iterations);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error(transparent)]
    Store(#[from] StoreError),
}

enum Outcome {
    Fresh(SummaryRecord),
    Cached(SummaryRecord),
}

impl Outcome {
    fn record(&self) -> &SummaryRecord {
        match self {
            Outcome::Fresh(r) | Outcome::Cached(r) => r,
        }
    }
}

/// One failed summarization: a reason to report, or a store error that
/// aborts the run.
enum Failure {
    Function(String),
    Store(StoreError),
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::Store(e)
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        Failure::Function(e.to_string())
    }
}

/// The shared state of one analysis run over one program.
pub struct Analysis<'a> {
    pub program: &'a Program,
    pub graph: CallGraph,
    pub store: &'a Store,
    pub provider: &'a dyn Provider,
    pub templates: &'a TemplateSet,
    pub cfg: &'a RunConfig,
    calls: AtomicUsize,
}

impl<'a> Analysis<'a> {
    pub fn new(program: &'a Program, store: &'a Store, provider: &'a dyn Provider, templates: &'a TemplateSet, cfg: &'a RunConfig) -> Self {
        let graph = CallGraph::build(program.functions.clone(), program.callsites.clone(), &LibAttrs::builtin());
        Analysis { program, graph, store, provider, templates, cfg, calls: AtomicUsize::new(0) }
    }

    /// Rebuild the call graph with a custom library attribute table.
    pub fn with_attrs(mut self, attrs: &LibAttrs) -> Self {
        self.graph = CallGraph::build(self.program.functions.clone(), self.program.callsites.clone(), attrs);
        self
    }

    /// Provider requests issued so far, re-prompts included.
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn complete_json(&self, function: &str, pass: PassTag, bundle: &PromptBundle) -> Result<Value, Failure> {
        let mut current = bundle.clone();
        for attempt in 0..2 {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let res = self.provider.complete_for(function, pass, &current).map_err(|e| Failure::Function(format!("provider: {e}")))?;
            match extract_json(&res.text) {
                Ok(v) => return Ok(v),
                Err(e) if attempt == 0 => {
                    log::warn!("{function} ({pass}): {e}; re-prompting");
                    current = bundle.with_suffix(REPROMPT_SUFFIX);
                }
                Err(e) => return Err(Failure::Function(format!("malformed output after re-prompt: {e}"))),
            }
        }
        unreachable!()
    }

    fn version_tag(&self, body_len: usize, pass: PassTag) -> String {
        let mut tag = format!("{}/{}", self.templates.version(), self.cfg.cache_mode.as_str());
        if body_len > self.cfg.block_budget && pass.has_block_prompt() {
            tag.push_str(&format!("/blocks{}", self.cfg.block_budget));
        }
        tag
    }

    /// Make `key` the latest record of its (function, pass) unless it already is.
    fn touch(&self, key: SummaryKey, rec: &SummaryRecord) -> Result<(), StoreError> {
        let current = self.store.latest_entry(&key.function, key.pass);
        if current.map(|(k, _)| k) != Some(key.clone()) {
            self.store.upsert(key, rec.clone())?;
        }
        Ok(())
    }

    fn summarize_external(&self, name: &str) -> Result<Outcome, Failure> {
        let ext = external_key(name);
        let hash = input_hash(PassTag::External, &ext, "", self.templates.version(), &[]);
        let key = SummaryKey { function: ext, pass: PassTag::External, input_hash: hash };
        if let Some(rec) = self.store.lookup(&key) {
            self.touch(key, &rec)?;
            return Ok(Outcome::Cached(rec));
        }
        let bundle = render_external_prompt(self.templates, name)?;
        let raw = self.complete_json(name, PassTag::External, &bundle)?;
        let rec = validate(PassTag::External, &raw).map_err(|e| Failure::Function(e.to_string()))?;
        self.store.upsert(key, rec.clone())?;
        Ok(Outcome::Fresh(rec))
    }

    fn summarize(&self, fn_key: &str, pass: PassTag) -> Result<Outcome, Failure> {
        let f = self.graph.get(fn_key).ok_or_else(|| Failure::Function(format!("unknown function `{fn_key}`")))?;
        let ctx = callee_context(self.store, fn_key, &self.graph, pass);
        let own: Vec<(PassTag, Option<SummaryRecord>)> = own_passes(pass).iter().map(|p| (*p, self.store.latest(fn_key, *p))).collect();
        let annotated = match pass {
            PassTag::Memsafe | PassTag::Verify => Some(annotate_callsites(fn_key, &self.graph, self.store, pass)),
            _ => None,
        };
        let source = annotated.as_ref().map_or(f.body.as_str(), |a| a.text.as_str());
        let mut consumed = ctx.consumed();
        consumed.extend(own.iter().map(|(p, r)| (fn_key.to_string(), *p, r.clone())));
        let hash = input_hash(pass, fn_key, source, &self.version_tag(source.len(), pass), &consumed);
        let key = SummaryKey { function: fn_key.to_string(), pass, input_hash: hash };
        if let Some(rec) = self.store.lookup(&key) {
            self.touch(key, &rec)?;
            return Ok(Outcome::Cached(rec));
        }

        let blocks = split_function_blocks(source, self.cfg.block_budget);
        let raw = if blocks.len() > 1 && pass.has_block_prompt() {
            let own_contracts = match pass {
                PassTag::Verify => own.iter().find(|(p, _)| *p == PassTag::Memsafe).and_then(|(_, r)| r.as_ref()).map(|r| r.contracts().to_vec()).unwrap_or_default(),
                _ => Vec::new(),
            };
            let mut prior = Vec::new();
            let mut results = Vec::new();
            for b in blocks {
                let bundle = render_block_prompt(self.templates, pass, f, &b, &prior, &own_contracts)?;
                let v = self.complete_json(fn_key, pass, &bundle)?;
                prior.push(match v.get("description").and_then(Value::as_str) {
                    Some(d) if !d.is_empty() => d.to_string(),
                    _ => serde_json::to_string(&v).unwrap_or_default(),
                });
                results.push((b, v));
            }
            let merge = render_merge_prompt(self.templates, pass, f, &results, &ctx)?;
            self.complete_json(fn_key, pass, &merge)?
        } else {
            if blocks.len() > 1 {
                log::info!("{fn_key}: {} characters exceeds the block budget; {pass} has no block prompt, using the whole function", source.len());
            }
            let types = &self.program.types;
            let mode = self.cfg.cache_mode;
            let bundle = match (pass, annotated) {
                (PassTag::Verify, Some(a)) => render_verifier_prompt(self.templates, f, &own, &a, &ctx, types, mode)?,
                (_, annotated) => {
                    let extras = PromptExtras { annotated, own: own.clone(), is_entry: pass == PassTag::Leak && f.name == self.cfg.entry };
                    render_summarizer_prompt(self.templates, pass, f, &ctx, types, mode, &extras)?
                }
            };
            self.complete_json(fn_key, pass, &bundle)?
        };
        let rec = validate(pass, &raw).map_err(|e| Failure::Function(e.to_string()))?;
        let params: Vec<String> = f.param_names().map(String::from).collect();
        for w in semantic_warnings(&rec, &params) {
            log::warn!("{fn_key} ({pass}): {w}");
        }
        self.store.upsert(key, rec.clone())?;
        Ok(Outcome::Fresh(rec))
    }

    fn process_scc(&self, scc: &Scc, pass: PassTag) -> Result<PassReport, StoreError> {
        let mut rep = PassReport::default();
        let record = |rep: &mut PassReport, key: &str, r: Result<Outcome, Failure>| -> Result<Option<SummaryRecord>, StoreError> {
            match r {
                Ok(o) => {
                    match &o {
                        Outcome::Fresh(_) => rep.summarized.push(key.to_string()),
                        Outcome::Cached(_) => rep.cached += 1,
                    }
                    Ok(Some(o.record().clone()))
                }
                Err(Failure::Store(e)) => Err(e),
                Err(Failure::Function(reason)) => {
                    log::warn!("{key} ({pass}) FAILED: {reason}");
                    rep.failed.retain(|f| f.function != key);
                    rep.failed.push(FailedFunction { function: key.to_string(), pass, reason });
                    Ok(None)
                }
            }
        };
        let stubs: Vec<&String> = scc.members.iter().filter(|m| self.graph.is_stub(m)).collect();
        if !stubs.is_empty() {
            if consumes_externals(pass) {
                for m in stubs {
                    record(&mut rep, m, self.summarize_external(m))?;
                }
            }
            return Ok(rep);
        }
        if !scc.is_recursive {
            let key = &scc.members[0];
            record(&mut rep, key, self.summarize(key, pass))?;
            return Ok(rep);
        }
        let mut last: BTreeMap<&str, Option<SummaryRecord>> = scc.members.iter().map(|m| (m.as_str(), self.store.latest(m, pass))).collect();
        let mut changed = BTreeSet::new();
        let mut iterations = 0;
        while iterations < self.cfg.fixpoint_bound {
            iterations += 1;
            changed.clear();
            for m in &scc.members {
                let Some(new) = record(&mut rep, m, self.summarize(m, pass))? else { continue };
                rep.failed.retain(|f| &f.function != m);
                let differs = last[m.as_str()].as_ref().is_none_or(|old| !old.structurally_eq(&new));
                if differs {
                    changed.insert(m.clone());
                }
                last.insert(m, Some(new));
            }
            if changed.is_empty() {
                break;
            }
        }
        rep.iterations.insert(scc.members[0].clone(), iterations);
        if !changed.is_empty() {
            log::warn!("{pass}: component {:?} did not stabilize within {} iterations", scc.members, self.cfg.fixpoint_bound);
            rep.unstable.extend(changed);
        }
        Ok(rep)
    }

    /// Run one pass over the whole program in callee-first order. Components
    /// of equal rank are processed concurrently, at most `max_inflight` at a time.
    pub fn run_pass(&self, pass: PassTag) -> Result<PassReport, DriverError> {
        let order = self.graph.analysis_order();
        let mut report = PassReport { pass: Some(pass), ..Default::default() };
        let mut by_rank: BTreeMap<usize, Vec<&Scc>> = BTreeMap::new();
        for scc in &order.sccs {
            by_rank.entry(scc.rank).or_default().push(scc);
        }
        let workers = self.cfg.provider.max_inflight.max(1);
        for sccs in by_rank.values() {
            let next = AtomicUsize::new(0);
            let results: Mutex<Vec<(usize, Result<PassReport, StoreError>)>> = Mutex::new(Vec::new());
            std::thread::scope(|s| {
                for _ in 0..workers.min(sccs.len()) {
                    s.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(scc) = sccs.get(i) else { break };
                        let r = self.process_scc(scc, pass);
                        results.lock().expect("results poisoned").push((i, r));
                    });
                }
            });
            let mut results = results.into_inner().expect("results poisoned");
            results.sort_by_key(|(i, _)| *i);
            for (_, r) in results {
                report.absorb(r?);
            }
        }
        Ok(report)
    }

    fn collect_issues(&self, property: Property) -> Vec<ReportIssue> {
        let mut out = Vec::new();
        for (key, f) in &self.graph.nodes {
            if f.is_external {
                continue;
            }
            match property {
                Property::ValidMemsafety => {
                    if let Some(SummaryRecord::Verify(v)) = self.store.latest(key, PassTag::Verify) {
                        out.extend(v.issues.into_iter().map(|issue| ReportIssue { function: key.clone(), issue }));
                    }
                }
                Property::ValidMemcleanup => {
                    if let Some(SummaryRecord::Leak(l)) = self.store.latest(key, PassTag::Leak) {
                        let is_entry = f.name == self.cfg.entry;
                        let params: Vec<&str> = f.param_names().collect();
                        for leak in leak_issues(&l, is_entry, &params) {
                            out.push(ReportIssue { function: key.clone(), issue: leak });
                        }
                    }
                }
                Property::NoOverflow => {
                    if let Some(SummaryRecord::Int(s)) = self.store.latest(key, PassTag::Int) {
                        out.extend(s.issues.into_iter().map(|i| ReportIssue {
                            function: key.clone(),
                            issue: Issue {
                                location: i.location,
                                issue_kind: i.issue_kind.into(),
                                description: i.description,
                                severity: i.severity,
                                callee: None,
                                contract_kind: None,
                            },
                        }));
                    }
                }
            }
        }
        out
    }

    /// Run every pass of the property's plan, then derive the verdict.
    pub fn run_property(&self, property: Property) -> Result<VerificationReport, DriverError> {
        let start = Instant::now();
        let before = self.provider_calls();
        let mut failed = Vec::new();
        let mut unstable = Vec::new();
        for pass in property.passes() {
            let r = self.run_pass(pass)?;
            failed.extend(r.failed);
            unstable.extend(r.unstable);
        }
        let issues = self.collect_issues(property);
        Ok(VerificationReport {
            program: self.program.id.clone(),
            property,
            mode: Mode::Compositional,
            verdict: verdict(&issues, !failed.is_empty()),
            issues,
            failed_functions: failed,
            unstable,
            context_overflow: false,
            wall_seconds: start.elapsed().as_secs_f64(),
            provider_calls: self.provider_calls() - before,
        })
    }

    /// One prompt over the whole program; no summaries are produced or read.
    pub fn run_baseline(&self, property: Property) -> VerificationReport {
        let start = Instant::now();
        let before = self.provider_calls();
        let mut report = VerificationReport {
            program: self.program.id.clone(),
            property,
            mode: Mode::Baseline,
            verdict: Verdict::Unknown,
            issues: Vec::new(),
            failed_functions: Vec::new(),
            unstable: Vec::new(),
            context_overflow: false,
            wall_seconds: 0.0,
            provider_calls: 0,
        };
        let fail = |reason: String| vec![FailedFunction { function: WHOLE_PROGRAM.into(), pass: PassTag::Verify, reason }];
        let rendered = render_baseline_prompt(self.templates, &self.program.functions, &self.program.types, property, &self.cfg.entry, self.cfg.baseline_budget);
        match rendered {
            Err(PromptError::ContextOverflow { size, budget }) => {
                log::warn!("{}: whole-program prompt has {size} characters, over the {budget} budget", self.program.id);
                report.context_overflow = true;
            }
            Err(e) => report.failed_functions = fail(e.to_string()),
            Ok(bundle) => match self.complete_json(WHOLE_PROGRAM, PassTag::Verify, &bundle) {
                Err(Failure::Function(reason)) => report.failed_functions = fail(reason),
                Err(Failure::Store(e)) => report.failed_functions = fail(e.to_string()),
                Ok(raw) => match validate_program_issues(&raw, &baseline_issue_kinds(property)) {
                    Ok(v) => report.issues = v.issues.into_iter().map(|issue| ReportIssue { function: WHOLE_PROGRAM.into(), issue }).collect(),
                    Err(e) => report.failed_functions = fail(e.to_string()),
                },
            },
        }
        report.verdict = verdict(&report.issues, report.context_overflow || !report.failed_functions.is_empty());
        report.wall_seconds = start.elapsed().as_secs_f64();
        report.provider_calls = self.provider_calls() - before;
        report
    }

    pub fn run(&self, property: Property, mode: Mode) -> Result<VerificationReport, DriverError> {
        match mode {
            Mode::Compositional => self.run_property(property),
            Mode::Baseline => Ok(self.run_baseline(property)),
        }
    }
}

/// Passes that read callee summaries of external stubs.
fn consumes_externals(pass: PassTag) -> bool {
    !matches!(pass, PassTag::Int | PassTag::External)
}

/// FALSE on any high or medium issue; TRUE when clean and complete.
pub fn verdict(issues: &[ReportIssue], incomplete: bool) -> Verdict {
    if issues.iter().any(|i| matches!(i.issue.severity, Severity::High | Severity::Medium)) {
        Verdict::False
    } else if incomplete {
        Verdict::Unknown
    } else {
        Verdict::True
    }
}

/// Leaks that count against the program: all of the entry function's, and
/// elsewhere only those a caller cannot see (not returned, not stored
/// through a parameter).
pub fn leak_issues(l: &LeakSummary, is_entry: bool, params: &[&str]) -> Vec<Issue> {
    let visible = |stored: &Option<String>| {
        stored.as_deref().is_some_and(|t| {
            let t = t.trim();
            t.starts_with("return") || params.iter().any(|p| contains_word(t, p))
        })
    };
    l.leaks
        .iter()
        .filter(|leak| is_entry || !visible(&leak.stored_to))
        .map(|leak| Issue {
            location: leak.allocation.clone(),
            issue_kind: IssueKind::MemoryLeak,
            description: leak.reason.clone(),
            severity: leak.severity,
            callee: None,
            contract_kind: None,
        })
        .collect()
}
