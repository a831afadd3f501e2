//! Prompt templates and rendering.
//!
//! Templates are plain text with `{placeholder}` slots. Substitution is a
//! single left-to-right pass: only known keys are replaced, inserted values
//! are never rescanned, and a line holding nothing but a placeholder whose
//! value is empty is dropped together with its newline.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::blocks::{with_prior_summaries, Block};
use crate::callgraph::CallGraph;
use crate::extract::{FunctionRecord, TypeContext};
use crate::lex;
use crate::libattrs::NORETURN;
use crate::summary::{lookup_for, CalleeContext, Contract, ContractKind, IssueKind, SummaryRecord, SummarySource};
use crate::types::{CacheMode, PassTag, Property};

/// Bumped by hand when rendering code changes in a way templates do not show.
pub const RENDER_VERSION: &str = "1";

/// Marker opening every inserted precondition line.
pub const PRE_PREFIX: &str = "/* PRE[";
/// Marker opening every inserted post-condition line.
pub const POST_PREFIX: &str = "/* POST[";

/// Default character budget of the whole-program prompt.
pub const DEFAULT_BASELINE_BUDGET: usize = 120_000;

const NONE: &str = "(none)";

macro_rules! builtin_templates {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../templates/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin_templates![
    "alloc.single", "alloc.instructions.system", "alloc.instructions.user",
    "alloc.source.system", "alloc.source.user", "alloc.block", "alloc.rules", "alloc.schema",
    "free.single", "free.instructions.system", "free.instructions.user",
    "free.source.system", "free.source.user", "free.block", "free.rules", "free.schema",
    "init.single", "init.instructions.system", "init.instructions.user",
    "init.source.system", "init.source.user", "init.block", "init.rules", "init.schema",
    "memsafe.single", "memsafe.instructions.system", "memsafe.instructions.user",
    "memsafe.source.system", "memsafe.source.user", "memsafe.block", "memsafe.rules", "memsafe.schema",
    "verify.single", "verify.instructions.system", "verify.instructions.user",
    "verify.source.system", "verify.source.user", "verify.block", "verify.rules", "verify.schema",
    "int.single", "int.instructions.system", "int.instructions.user",
    "int.source.system", "int.source.user", "int.rules", "int.schema",
    "leak.single", "leak.instructions.system", "leak.instructions.user",
    "leak.source.system", "leak.source.user", "leak.rules", "leak.schema", "leak.task",
    "external", "external.schema", "merge", "baseline",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptError {
    UnknownPass { pass: PassTag, what: &'static str },
    UnknownTemplate(String),
    MissingTemplate(String),
    EmptyName,
    ContextOverflow { size: usize, budget: usize },
}

impl fmt::Display for PromptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptError::UnknownPass { pass, what } => write!(f, "no {what} prompt for pass `{pass}`"),
            PromptError::UnknownTemplate(n) => write!(f, "unknown template `{n}`"),
            PromptError::MissingTemplate(n) => write!(f, "template `{n}` not loaded"),
            PromptError::EmptyName => f.write_str("external prompt needs a function name"),
            PromptError::ContextOverflow { size, budget } => {
                write!(f, "whole-program prompt has {size} characters, budget is {budget}")
            }
        }
    }
}

impl core::error::Error for PromptError {}

/// Which part of a bundle a provider may treat as a stable cache prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cacheable {
    None,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: Option<String>,
    pub user: String,
    pub cacheable: Cacheable,
}

impl PromptBundle {
    pub fn single(user: String) -> Self {
        PromptBundle { system: None, user, cacheable: Cacheable::None }
    }

    pub fn total_chars(&self) -> usize {
        self.system.as_ref().map_or(0, |s| s.chars().count()) + self.user.chars().count()
    }

    /// System and user text joined by a blank line.
    pub fn full_text(&self) -> String {
        match &self.system {
            Some(s) => format!("{s}\n\n{}", self.user),
            None => self.user.clone(),
        }
    }

    /// The same bundle with the re-prompt instruction appended to the user message.
    pub fn with_suffix(&self, suffix: &str) -> Self {
        let mut b = self.clone();
        b.user.push_str("\n\n");
        b.user.push_str(suffix);
        b
    }
}

/// The named template texts in use, built in or overridden from a directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    texts: BTreeMap<String, String>,
    version: String,
}

fn trim_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let texts = BUILTIN
            .iter()
            .map(|(n, t)| (n.to_string(), trim_final_newline(t).to_string()))
            .collect();
        let mut set = TemplateSet { texts, version: String::new() };
        set.rehash();
        set
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    /// Replace one template; `name` must be a built-in template name.
    pub fn set(&mut self, name: &str, text: &str) -> Result<(), PromptError> {
        if !self.texts.contains_key(name) {
            return Err(PromptError::UnknownTemplate(name.into()));
        }
        self.texts.insert(name.into(), trim_final_newline(text).to_string());
        self.rehash();
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&str, PromptError> {
        self.texts
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingTemplate(name.into()))
    }

    /// Version string hashed into every summary key.
    pub fn version(&self) -> &str {
        &self.version
    }

    fn rehash(&mut self) {
        let parts = self.texts.iter().flat_map(|(n, t)| [n.as_bytes(), t.as_bytes()]);
        let h = crate::summary::hash_parts(parts);
        self.version = format!("r{RENDER_VERSION}-{}", &h[..16]);
    }
}

/// Substitute known `{key}` placeholders in one left-to-right pass.
pub fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let lookup = |k: &str| vars.iter().find(|(n, _)| *n == k).map(|(_, v)| *v);
    let mut out = String::with_capacity(template.len());
    let lines: Vec<&str> = template.split('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let last = i + 1 == lines.len();
        if let Some(key) = line.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            if lookup(key) == Some("") {
                if last && out.ends_with('\n') {
                    out.pop();
                }
                continue;
            }
        }
        let mut rest = *line;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}');
            let key = close.map(|c| &after[..c]);
            match key.filter(|k| is_key(k)).and_then(|k| lookup(k).map(|v| (k, v))) {
                Some((k, v)) => {
                    out.push_str(v);
                    rest = &after[k.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        if !last {
            out.push('\n');
        }
    }
    out
}

fn is_key(k: &str) -> bool {
    !k.is_empty() && k.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Compact JSON with sorted keys.
fn compact(v: &Value) -> String {
    serde_json::to_string(v).expect("json values serialize")
}

fn callee_label(pass: PassTag) -> &'static str {
    match pass {
        PassTag::Verify | PassTag::Memsafe => "contracts",
        PassTag::Int => "ranges",
        p => p.as_str(),
    }
}

fn callee_value(rec: &SummaryRecord) -> Value {
    match rec {
        SummaryRecord::Memsafe(_) | SummaryRecord::Verify(_) => serde_json::to_value(rec.contracts()).expect("contracts serialize"),
        SummaryRecord::Int(s) => serde_json::json!({"constraints": s.constraints, "output_ranges": s.output_ranges}),
        r => r.to_value(),
    }
}

/// One block per callee: a header line and one indented line per consumed summary.
pub fn render_callee_section(ctx: &CalleeContext) -> String {
    if ctx.is_empty() {
        return NONE.into();
    }
    let mut lines = Vec::new();
    for e in &ctx.entries {
        let sig = if e.is_external || e.signature.is_empty() { "external" } else { e.signature.as_str() };
        lines.push(format!("- {} ({sig}):", e.name));
        for (pass, rec) in &e.summaries {
            let label = callee_label(*pass);
            match rec {
                Some(r) => lines.push(format!("  {label}: {}", compact(&callee_value(r)))),
                None => lines.push(format!("  {label}: no summary yet")),
            }
        }
    }
    lines.join("\n")
}

pub fn render_contract_list(contracts: &[Contract]) -> String {
    if contracts.is_empty() {
        return NONE.into();
    }
    contracts
        .iter()
        .map(|c| format!("- {}", compact(&serde_json::to_value(c).expect("contracts serialize"))))
        .collect::<Vec<_>>()
        .join("\n")
}

fn record_or_none(rec: Option<&SummaryRecord>) -> String {
    rec.map_or_else(|| NONE.into(), |r| compact(&r.to_value()))
}

/// Struct, union and typedef definitions whose names the body mentions,
/// plus macros it uses; empty when there are none.
pub fn type_defs_section(body: &str, types: &TypeContext) -> String {
    let mut defs = Vec::new();
    for (name, def) in &types.structs {
        let tag = name.rsplit(' ').next().unwrap_or(name);
        if lex::contains_word(body, tag) {
            let mut text = def.text.clone();
            if let Some(size) = def.size {
                text.push_str(&format!(" /* sizeof = {size} */"));
            }
            defs.push(text);
        }
    }
    for (name, target) in &types.typedefs {
        if lex::contains_word(body, name) {
            defs.push(format!("typedef {target} {name};"));
        }
    }
    for (name, def) in &types.macros {
        if lex::contains_word(body, name) {
            defs.push(format!("#define {name} {def}").trim_end().to_string());
        }
    }
    if defs.is_empty() {
        return String::new();
    }
    format!("## Type Definitions\n```c\n{}\n```\n", defs.join("\n"))
}

/// Extra per-pass inputs of a summarizer prompt.
#[derive(Debug, Clone, Default)]
pub struct PromptExtras {
    /// Source with callsite annotations, used instead of the raw body.
    pub annotated: Option<AnnotatedSource>,
    /// The function's own summaries from earlier passes.
    pub own: Vec<(PassTag, Option<SummaryRecord>)>,
    /// The function is the program entry point.
    pub is_entry: bool,
}

impl PromptExtras {
    fn own(&self, pass: PassTag) -> Option<&SummaryRecord> {
        self.own.iter().find(|(p, _)| *p == pass).and_then(|(_, r)| r.as_ref())
    }
}

fn memsafe_callee_note(ctx: &CalleeContext, annotated: bool) -> String {
    if ctx.is_empty() {
        return format!("## Callee Contracts\n{NONE}");
    }
    if annotated {
        "## Callee Contracts\nContracts of called functions appear inline above each call as /* PRE[callee]: ... */ comments, and their effects below it as /* POST[callee]: ... */ comments.".into()
    } else {
        format!("## Callee Safety Contracts\n{}", render_callee_section(ctx))
    }
}

fn entry_note(name: &str) -> String {
    format!(
        "Note: {name} is the program entry point. Report every allocation that is still not freed when it returns, including memory that remains reachable from globals."
    )
}

fn own_alloc_free_section(extras: &PromptExtras) -> String {
    let alloc = extras.own(PassTag::Alloc);
    let free = extras.own(PassTag::Free);
    if alloc.is_none() && free.is_none() {
        return String::new();
    }
    format!(
        "## This Function's Allocation Summary\n{}\n\n## This Function's Free Summary\n{}\n",
        record_or_none(alloc),
        record_or_none(free)
    )
}

fn schema_for(set: &TemplateSet, pass: PassTag, name: Option<&str>) -> Result<String, PromptError> {
    let text = set.get(&format!("{}.schema", pass.as_str()))?;
    Ok(match name {
        Some(n) => text.replace("<function_name>", n).replace("<name>", n),
        None => text.to_string(),
    })
}

/// Render a per-function summarizer prompt. For the verify pass this is the
/// verifier prompt; pass the annotated source and own summaries in `extras`.
pub fn render_summarizer_prompt(
    set: &TemplateSet,
    pass: PassTag,
    f: &FunctionRecord,
    ctx: &CalleeContext,
    types: &TypeContext,
    mode: CacheMode,
    extras: &PromptExtras,
) -> Result<PromptBundle, PromptError> {
    if pass == PassTag::External {
        return Err(PromptError::UnknownPass { pass, what: "summarizer" });
    }
    let p = pass.as_str();
    let schema = schema_for(set, pass, (mode != CacheMode::Instructions).then_some(f.name.as_str()))?;
    let source = extras.annotated.as_ref().map_or(f.body.as_str(), |a| a.text.as_str());
    let callee_section = render_callee_section(ctx);
    let rules = set.get(&format!("{p}.rules"))?;
    let task_rules = if pass == PassTag::Leak { set.get("leak.task")? } else { "" };
    let entry = if extras.is_entry { entry_note(&f.name) } else { String::new() };
    let own_contracts = render_contract_list(extras.own(PassTag::Memsafe).map_or(&[], |r| r.contracts()));
    let type_defs = if pass == PassTag::Verify { type_defs_section(&f.body, types) } else { String::new() };
    let alloc_section = record_or_none(extras.own(PassTag::Alloc));
    let free_section = record_or_none(extras.own(PassTag::Free));
    let callee_note = memsafe_callee_note(ctx, extras.annotated.is_some());
    let own_af = own_alloc_free_section(extras);
    let vars: [(&str, &str); 19] = [
        ("source", source),
        ("name", &f.name),
        ("signature", &f.signature),
        ("file_path", &f.file_path),
        ("callee_summaries", &callee_section),
        ("callee_section", &callee_section),
        ("shared_instructions", rules),
        ("schema", &schema),
        ("task_rules", task_rules),
        ("entry_note", &entry),
        ("alloc_section", &alloc_section),
        ("free_section", &free_section),
        ("callee_note", &callee_note),
        ("alias_context", ""),
        ("type_defs_section", &type_defs),
        ("own_contracts", &own_contracts),
        ("own_alloc_free_section", &own_af),
        ("block_source", ""),
        ("block_summaries", ""),
    ];
    let render = |variant: &str| -> Result<String, PromptError> { Ok(substitute(set.get(&format!("{p}.{variant}"))?, &vars)) };
    Ok(match mode {
        CacheMode::None => PromptBundle::single(render("single")?),
        CacheMode::Instructions => PromptBundle {
            system: Some(render("instructions.system")?),
            user: render("instructions.user")?,
            cacheable: Cacheable::System,
        },
        CacheMode::Source => PromptBundle {
            system: Some(render("source.system")?),
            user: render("source.user")?,
            cacheable: Cacheable::System,
        },
    })
}

/// The verifier prompt: the verify summarizer over the annotated source with
/// the function's own contracts and allocation/free summaries.
pub fn render_verifier_prompt(
    set: &TemplateSet,
    f: &FunctionRecord,
    own: &[(PassTag, Option<SummaryRecord>)],
    annotated: &AnnotatedSource,
    ctx: &CalleeContext,
    types: &TypeContext,
    mode: CacheMode,
) -> Result<PromptBundle, PromptError> {
    let extras = PromptExtras { annotated: Some(annotated.clone()), own: own.to_vec(), is_entry: false };
    render_summarizer_prompt(set, PassTag::Verify, f, ctx, types, mode, &extras)
}

/// Prompt for one block of an oversized function; earlier blocks appear as
/// `/* BLOCK k: ... */` comment lines in front of the block source.
pub fn render_block_prompt(
    set: &TemplateSet,
    pass: PassTag,
    f: &FunctionRecord,
    block: &Block,
    prior_block_summaries: &[String],
    own_contracts: &[Contract],
) -> Result<PromptBundle, PromptError> {
    if !pass.has_block_prompt() {
        return Err(PromptError::UnknownPass { pass, what: "block" });
    }
    let annotated = with_prior_summaries(&block.text, prior_block_summaries);
    let block_source = annotated.trim_end_matches('\n');
    let contracts = render_contract_list(own_contracts);
    let vars = [
        ("name", f.name.as_str()),
        ("signature", &f.signature),
        ("file_path", &f.file_path),
        ("block_source", block_source),
        ("own_contracts", &contracts),
    ];
    Ok(PromptBundle::single(substitute(set.get(&format!("{}.block", pass.as_str()))?, &vars)))
}

fn merge_task(pass: PassTag) -> &'static str {
    match pass {
        PassTag::Alloc => "Produce the memory allocation summary of the whole function.",
        PassTag::Free => "Produce the deallocation summary of the whole function.",
        PassTag::Init => "Produce the initialization summary of the whole function; an initialization counts only if it happens on every path through all blocks.",
        PassTag::Memsafe => "Produce the safety contracts (pre-conditions) of the whole function; a requirement of a later block is dropped if an earlier block establishes it.",
        PassTag::Verify => "Produce the verification result of the whole function, keeping every issue found in a block and simplifying the contracts for the whole function.",
        _ => "",
    }
}

/// Prompt combining per-block results into one summary in the pass schema.
/// `blocks` pairs each block with the JSON its block prompt returned.
pub fn render_merge_prompt(
    set: &TemplateSet,
    pass: PassTag,
    f: &FunctionRecord,
    blocks: &[(Block, Value)],
    ctx: &CalleeContext,
) -> Result<PromptBundle, PromptError> {
    if !pass.has_block_prompt() {
        return Err(PromptError::UnknownPass { pass, what: "merge" });
    }
    let listing = if blocks.is_empty() {
        NONE.to_string()
    } else {
        blocks
            .iter()
            .map(|(b, v)| format!("- BLOCK {} ({}): {}", b.index, b.kind.as_str(), compact(v)))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let schema = schema_for(set, pass, Some(&f.name))?;
    let callees = render_callee_section(ctx);
    let vars = [
        ("name", f.name.as_str()),
        ("signature", &f.signature),
        ("file_path", &f.file_path),
        ("block_summaries", &listing),
        ("callee_summaries", &callees),
        ("merge_task", merge_task(pass)),
        ("schema", &schema),
    ];
    Ok(PromptBundle::single(substitute(set.get("merge")?, &vars)))
}

pub fn render_external_prompt(set: &TemplateSet, name: &str) -> Result<PromptBundle, PromptError> {
    if name.trim().is_empty() {
        return Err(PromptError::EmptyName);
    }
    let schema = set.get("external.schema")?;
    let vars = [("name", name), ("schema", schema)];
    Ok(PromptBundle::single(substitute(set.get("external")?, &vars)))
}

/// Issue kinds the whole-program prompt may report for a property.
pub fn baseline_issue_kinds(property: Property) -> Vec<IssueKind> {
    match property {
        Property::ValidMemsafety => IssueKind::MEMORY.to_vec(),
        Property::ValidMemcleanup => alloc::vec![IssueKind::MemoryLeak],
        Property::NoOverflow => alloc::vec![IssueKind::IntegerOverflow, IssueKind::DivisionByZero, IssueKind::ShiftUb],
    }
}

fn property_description(property: Property) -> &'static str {
    match property {
        Property::ValidMemsafety => "memory safety violations (invalid dereferences, invalid frees, use of freed memory, out-of-bounds accesses, reads of uninitialized memory)",
        Property::ValidMemcleanup => "memory that is never freed: every heap allocation must be freed before the program exits",
        Property::NoOverflow => "integer-related undefined behaviour (signed overflow, division by zero, invalid shifts)",
    }
}

/// Whole-program prompt over every defined function, grouped by file in
/// order of appearance.
pub fn render_baseline_prompt(
    set: &TemplateSet,
    functions: &[FunctionRecord],
    types: &TypeContext,
    property: Property,
    entry: &str,
    budget: usize,
) -> Result<PromptBundle, PromptError> {
    let mut files: Vec<(&str, Vec<&FunctionRecord>)> = Vec::new();
    for f in functions.iter().filter(|f| !f.is_external) {
        match files.iter_mut().find(|(p, _)| *p == f.file_path) {
            Some((_, v)) => v.push(f),
            None => files.push((&f.file_path, alloc::vec![f])),
        }
    }
    let mut sources = Vec::new();
    for (path, mut fs) in files {
        fs.sort_by_key(|f| f.line_span.0);
        let body = fs.iter().map(|f| f.body.trim_end()).collect::<Vec<_>>().join("\n\n");
        sources.push(format!("### {path}\n```c\n{body}\n```"));
    }
    let sources = if sources.is_empty() { NONE.to_string() } else { sources.join("\n\n") };
    let macros = if types.macros.is_empty() {
        NONE.to_string()
    } else {
        types
            .macros
            .iter()
            .map(|(n, d)| format!("#define {n} {d}").trim_end().to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut defs: Vec<String> = types.structs.values().map(|s| s.text.clone()).collect();
    defs.extend(types.typedefs.iter().map(|(n, t)| format!("typedef {t} {n};")));
    let type_text = if defs.is_empty() { NONE.to_string() } else { format!("```c\n{}\n```", defs.join("\n")) };
    let kinds = baseline_issue_kinds(property);
    let kinds_list = kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>();
    let kinds_comma = kinds_list.join(", ");
    let kinds_alt = kinds_list.join("|");
    let vars = [
        ("property_description", property_description(property)),
        ("sources", &sources),
        ("macros", &macros),
        ("types", &type_text),
        ("entry", entry),
        ("issue_kinds", &kinds_comma),
        ("issue_kind_alternatives", &kinds_alt),
    ];
    let text = substitute(set.get("baseline")?, &vars);
    let size = text.chars().count();
    if size > budget {
        return Err(PromptError::ContextOverflow { size, budget });
    }
    Ok(PromptBundle::single(text))
}

/// A function body with PRE/POST comment lines inserted around callsites.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotatedSource {
    pub text: String,
    /// (1-based body line of the call, formal, actual expression)
    pub substitutions: Vec<(usize, String, String)>,
}

/// What is known about a callee at its callsites.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalleeFacts {
    pub name: String,
    pub formals: Vec<String>,
    pub contracts: Vec<Contract>,
    /// Post-condition phrases with formals still in place, e.g. `frees p`.
    pub effects: Vec<String>,
    pub noreturn: bool,
}

impl CalleeFacts {
    /// Collect facts from the callee's summaries. `contract_pass` is memsafe
    /// when annotating for the memsafe pass and verify for the verifier.
    pub fn collect(graph: &CallGraph, source: &dyn SummarySource, key: &str, contract_pass: PassTag) -> Option<Self> {
        let rec = graph.get(key)?;
        let mut facts = CalleeFacts {
            name: rec.name.clone(),
            formals: rec.param_names().map(String::from).collect(),
            noreturn: rec.lib_attrs.contains(NORETURN),
            ..Default::default()
        };
        if let Some(r) = lookup_for(source, graph, key, contract_pass) {
            facts.contracts = r.contracts().to_vec();
        }
        if let Some(SummaryRecord::Alloc(a)) = lookup_for(source, graph, key, PassTag::Alloc) {
            for al in &a.allocations {
                let maybe = if al.may_be_null { " (may be NULL)" } else { "" };
                if al.returned {
                    facts.effects.push(format!("returns {} allocation from {}{maybe}", al.kind, al.source));
                }
                if let Some(t) = &al.stored_to {
                    facts.effects.push(format!("stores {} allocation from {} in {t}", al.kind, al.source));
                }
            }
        }
        if let Some(SummaryRecord::Free(fr)) = lookup_for(source, graph, key, PassTag::Free) {
            for it in fr.frees.iter().chain(&fr.resource_releases) {
                let when = it.condition.as_ref().map(|c| format!(" when {c}")).unwrap_or_default();
                facts.effects.push(format!("frees {}{when}", it.target));
            }
        }
        if let Some(SummaryRecord::Init(init)) = lookup_for(source, graph, key, PassTag::Init) {
            for it in &init.inits {
                facts.effects.push(format!("initializes {}", it.target));
            }
            if init.noreturn && init.noreturn_condition.is_none() {
                facts.noreturn = true;
            }
        }
        Some(facts)
    }
}

fn contract_phrase(c: &Contract, size_expr: Option<&str>) -> String {
    let mut s = match c.contract_kind {
        ContractKind::DisallowNull => "must not be NULL".to_string(),
        ContractKind::AllowNull => "may be NULL".to_string(),
        ContractKind::NotFreed => "must not have been previously freed".to_string(),
        ContractKind::Initialized => "must be initialized".to_string(),
        ContractKind::BufferSize => {
            let unit = match c.relationship {
                Some(crate::summary::Relationship::ElementCount) => "elements",
                _ => "bytes",
            };
            format!("must point to at least {} {unit}", size_expr.unwrap_or("?"))
        }
        ContractKind::NonNegative => "must be non-negative".to_string(),
    };
    if let Some(cond) = &c.condition {
        s.push_str(&format!(" when {cond}"));
    }
    s
}

fn comment_safe(s: &str) -> String {
    s.replace("*/", "* /").replace('\n', " ")
}

/// Replace whole-token formals by actual arguments.
fn substitute_formals(text: &str, pairs: &[(&str, &str)]) -> (String, Vec<(String, String)>) {
    let mut used = Vec::new();
    let toks = lex::tokenize(text);
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for t in toks.iter().filter(|t| t.kind == lex::TokKind::Ident) {
        let word = t.text(text);
        if let Some((f, a)) = pairs.iter().find(|(f, _)| *f == word) {
            out.push_str(&text[last..t.start]);
            let needs_parens = a.chars().any(|c| !(c.is_alphanumeric() || c == '_' || c == '.' || c == '>' || c == '-' || c == '[' || c == ']'));
            if needs_parens && text.len() > word.len() {
                out.push('(');
                out.push_str(a);
                out.push(')');
            } else {
                out.push_str(a);
            }
            last = t.end;
            if !used.iter().any(|(uf, _): &(String, String)| uf == f) {
                used.push((f.to_string(), a.to_string()));
            }
        }
    }
    out.push_str(&text[last..]);
    (out, used)
}

fn indent_of(line: &str) -> &str {
    &line[..line.len() - line.trim_start().len()]
}

/// One annotated direct callsite: byte span in the body and what to say.
#[derive(Debug, Clone)]
pub struct SiteFacts {
    pub span: (usize, usize),
    pub args: Vec<String>,
    pub facts: CalleeFacts,
}

/// Insert PRE lines above and POST lines below each callsite.
pub fn annotate_sites(body: &str, sites: &[SiteFacts]) -> AnnotatedSource {
    let starts = lex::line_starts(body);
    let lines: Vec<&str> = body.split('\n').collect();
    let mut pre: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut post: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut substitutions = Vec::new();
    let mut ordered: Vec<&SiteFacts> = sites.iter().collect();
    ordered.sort_by_key(|s| s.span);
    for s in ordered {
        let first = lex::line_of(&starts, s.span.0) - 1;
        let last = lex::line_of(&starts, s.span.1.saturating_sub(1).max(s.span.0)) - 1;
        let indent = indent_of(lines.get(first).copied().unwrap_or(""));
        let g = &s.facts.name;
        let pairs: Vec<(&str, &str)> = s
            .facts
            .formals
            .iter()
            .zip(&s.args)
            .map(|(f, a)| (f.as_str(), a.trim()))
            .collect();
        let mut note = |used: Vec<(String, String)>| {
            for (f, a) in used {
                let entry = (first + 1, f, a);
                if !substitutions.contains(&entry) {
                    substitutions.push(entry);
                }
            }
        };
        for c in &s.facts.contracts {
            let (target, used_t) = substitute_formals(&c.target, &pairs);
            let (size, used_s) = match &c.size_expr {
                Some(e) => {
                    let (s, u) = substitute_formals(e, &pairs);
                    (Some(s), u)
                }
                None => (None, Vec::new()),
            };
            let subject = if used_t.is_empty() { format!("{} (formal)", c.target) } else { format!("{} -> {target}", c.target) };
            note(used_t);
            note(used_s);
            let line = format!("{indent}{PRE_PREFIX}{g}]: {} {} */", comment_safe(&subject), comment_safe(&contract_phrase(c, size.as_deref())));
            pre.entry(first).or_default().push(line);
        }
        for e in &s.facts.effects {
            let (text, used) = substitute_formals(e, &pairs);
            note(used);
            post.entry(last).or_default().push(format!("{indent}{POST_PREFIX}{g}]: {} */", comment_safe(&text)));
        }
        if s.facts.noreturn {
            post.entry(last).or_default().push(format!("{indent}{POST_PREFIX}{g}]: does not return */"));
        }
    }
    let mut out: Vec<String> = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        if let Some(p) = pre.remove(&i) {
            out.extend(p);
        }
        out.push(l.to_string());
        if let Some(p) = post.remove(&i) {
            out.extend(p);
        }
    }
    AnnotatedSource { text: out.join("\n"), substitutions }
}

/// Annotate every direct callsite of `fn_key` with what the store knows
/// about the callee.
pub fn annotate_callsites(fn_key: &str, graph: &CallGraph, source: &dyn SummarySource, contract_pass: PassTag) -> AnnotatedSource {
    let Some(f) = graph.get(fn_key) else { return AnnotatedSource::default() };
    let mut sites = Vec::new();
    for cs in graph.callsites_of(fn_key) {
        if cs.is_indirect {
            continue;
        }
        let Some(key) = graph.resolve(cs) else { continue };
        let Some(mut facts) = CalleeFacts::collect(graph, source, &key, contract_pass) else { continue };
        if facts.formals.is_empty() && graph.is_stub(&key) {
            // external summaries name positional parameters arg0, arg1, ...
            facts.formals = (0..cs.arg_exprs.len()).map(|i| format!("arg{i}")).collect();
        }
        if facts.contracts.is_empty() && facts.effects.is_empty() && !facts.noreturn {
            continue;
        }
        sites.push(SiteFacts { span: cs.span, args: cs.arg_exprs.clone(), facts });
    }
    annotate_sites(&f.body, &sites)
}

/// Remove every inserted PRE/POST line.
pub fn strip_annotations(text: &str) -> String {
    text.split('\n')
        .filter(|l| {
            let t = l.trim_start();
            !(t.starts_with(PRE_PREFIX) || t.starts_with(POST_PREFIX))
        })
        .collect::<Vec<_>>()
        .join("\n")
}
