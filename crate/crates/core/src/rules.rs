//! A deterministic completion provider built from shallow lexical rules.
//!
//! It reads a rendered prompt the way a model would (recognizing the
//! template by its opening line and sections), scans the embedded source
//! and answers with JSON in the requested schema. The rules are
//! intentionally simple; they exist so the pipeline can run end to end
//! without a model, not to analyze C well.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{json, Map, Value};

use crate::lex::{self, TokKind, Token};
use crate::libattrs::{LibAttrs, DEALLOCATOR, NORETURN};
use crate::prompt::{PromptBundle, POST_PREFIX, PRE_PREFIX};
use crate::types::PassTag;

const ALLOCATORS: &[&str] = &["malloc", "calloc", "realloc"];

/// What kind of prompt a bundle holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Summary(PassTag),
    Block(PassTag),
    Merge(PassTag),
    External,
    Baseline,
    Unknown,
}

pub fn classify(text: &str) -> PromptKind {
    let has = |s: &str| text.contains(s);
    if has("You are checking a complete C program") {
        return PromptKind::Baseline;
    }
    if has("You are an expert in C memory safety analysis.") {
        return PromptKind::External;
    }
    if has("You are combining block-level results") {
        let pass = if has("memory allocation summary of the whole") {
            PassTag::Alloc
        } else if has("deallocation summary of the whole") {
            PassTag::Free
        } else if has("initialization summary of the whole") {
            PassTag::Init
        } else if has("safety contracts (pre-conditions) of the whole") {
            PassTag::Memsafe
        } else {
            PassTag::Verify
        };
        return PromptKind::Merge(pass);
    }
    if has("verifying memory safety of a code block") {
        return PromptKind::Block(PassTag::Verify);
    }
    if has("You are analyzing a code block from a large") {
        let pass = if has("heap memory allocations") {
            PassTag::Alloc
        } else if has("free/deallocation operations") {
            PassTag::Free
        } else if has("initialization operations") {
            PassTag::Init
        } else {
            PassTag::Memsafe
        };
        return PromptKind::Block(pass);
    }
    let table = [
        ("generate memory allocation summaries", PassTag::Alloc),
        ("generate deallocation (free) summaries", PassTag::Free),
        ("generate initialization summaries", PassTag::Init),
        ("generate safety pre-condition contracts", PassTag::Memsafe),
        ("for memory leaks by comparing", PassTag::Leak),
        ("value-range analysis on a C/C++ function", PassTag::Int),
        ("verifying memory safety of a C/C++ function", PassTag::Verify),
    ];
    for (marker, pass) in table {
        if has(marker) {
            return PromptKind::Summary(pass);
        }
    }
    PromptKind::Unknown
}

/// Answer a rendered prompt. Identical bundles give identical text.
pub fn respond(bundle: &PromptBundle) -> String {
    let text = bundle.full_text();
    let value = match classify(&text) {
        PromptKind::Summary(pass) => summary(pass, &Prompt::parse(&text)),
        PromptKind::Block(pass) => block(pass, &Prompt::parse(&text)),
        PromptKind::Merge(pass) => merge(pass, &Prompt::parse(&text)),
        PromptKind::External => external(&field(&text, "Function name: ").unwrap_or_default()),
        PromptKind::Baseline => baseline(&text),
        PromptKind::Unknown => return "I cannot tell what this prompt asks for.".into(),
    };
    serde_json::to_string_pretty(&value).expect("json values serialize")
}

fn field(text: &str, prefix: &str) -> Option<String> {
    text.lines().find_map(|l| l.strip_prefix(prefix)).map(|s| s.trim().to_string())
}

/// Contents of every ```c fenced block.
fn fences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(at) = rest.find("```c\n") {
        let body = &rest[at + 5..];
        let end = body.find("\n```").unwrap_or(body.len());
        out.push(body[..end].to_string());
        rest = &body[end.min(body.len())..];
        if rest.len() >= 4 {
            rest = &rest[4..];
        } else {
            break;
        }
    }
    out
}

/// Text under a `## header` line up to the next `## ` header.
fn section<'t>(text: &'t str, header: &str) -> Option<&'t str> {
    let start = text.find(&format!("{header}\n"))? + header.len() + 1;
    let body = &text[start..];
    let end = body.find("\n## ").unwrap_or(body.len());
    Some(&body[..end])
}

/// Parameter names in a signature, e.g. `void f(char *p, int n[])` gives `p`, `n`.
pub fn params_of(sig: &str) -> Vec<String> {
    let (Some(open), Some(close)) = (sig.find('('), sig.rfind(')')) else { return Vec::new() };
    if close <= open {
        return Vec::new();
    }
    let inner = &sig[open + 1..close];
    split_top(inner)
        .iter()
        .filter_map(|p| {
            let p = p.split('[').next().unwrap_or(p);
            let name = if let Some(fp) = p.find("(*") {
                p[fp + 2..].split(')').next().unwrap_or("")
            } else {
                p.rsplit(|c: char| !(c.is_alphanumeric() || c == '_')).next().unwrap_or("")
            };
            (!name.is_empty() && name != "void" && !lex::is_type_word(name) && name != "...").then(|| name.to_string())
        })
        .collect()
}

fn pointer_params(sig: &str) -> BTreeSet<String> {
    let (Some(open), Some(close)) = (sig.find('('), sig.rfind(')')) else { return BTreeSet::new() };
    if close <= open {
        return BTreeSet::new();
    }
    split_top(&sig[open + 1..close])
        .iter()
        .filter(|p| p.contains('*') || p.contains('['))
        .flat_map(|p| params_of(&format!("f({p})")))
        .collect()
}

/// Split at commas outside parentheses and brackets.
fn split_top(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// A callee as listed in a callee section.
#[derive(Debug, Default)]
struct CalleeInfo {
    formals: Vec<String>,
    records: BTreeMap<String, Value>,
}

fn parse_callees(section: &str) -> BTreeMap<String, CalleeInfo> {
    let mut out: BTreeMap<String, CalleeInfo> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in section.lines() {
        if let Some(rest) = line.strip_prefix("- ") {
            let Some(sp) = rest.find(" (") else { continue };
            let name = rest[..sp].to_string();
            let sig = rest[sp + 2..].trim_end_matches(':').trim_end_matches(')');
            let formals = if sig == "external" { Vec::new() } else { params_of(&format!("{sig})")) };
            out.insert(name.clone(), CalleeInfo { formals, records: BTreeMap::new() });
            current = Some(name);
        } else if let (Some(name), Some(rest)) = (&current, line.strip_prefix("  ")) {
            let Some((label, json)) = rest.split_once(": ") else { continue };
            if let Ok(v) = serde_json::from_str::<Value>(json) {
                if let Some(c) = out.get_mut(name) {
                    c.records.insert(label.to_string(), v);
                }
            }
        }
    }
    out
}

/// The pieces of a prompt the rules look at.
struct Prompt {
    name: String,
    signature: String,
    params: Vec<String>,
    source: String,
    callees: BTreeMap<String, CalleeInfo>,
    text: String,
}

impl Prompt {
    fn parse(text: &str) -> Self {
        let signature = field(text, "Signature: ").unwrap_or_default();
        let callee_text = section(text, "## Callee Summaries")
            .or_else(|| section(text, "## Callee Free Summaries"))
            .or_else(|| section(text, "## Callee Initialization Summaries"))
            .or_else(|| section(text, "## Callee Post-conditions"))
            .or_else(|| section(text, "## Callee Information"))
            .or_else(|| section(text, "## Callee Context"))
            .or_else(|| section(text, "## Callee Safety Contracts"))
            .unwrap_or("");
        Prompt {
            name: field(text, "Function: ").unwrap_or_default(),
            params: params_of(&signature),
            signature,
            source: fences(text).into_iter().next().unwrap_or_default(),
            callees: parse_callees(callee_text),
            text: text.to_string(),
        }
    }

    fn is_param(&self, s: &str) -> bool {
        self.params.iter().any(|p| p == s)
    }

    /// The function's own summary JSON from a `## ...` section, if present.
    fn own(&self, header: &str) -> Option<Value> {
        section(&self.text, header).and_then(|s| serde_json::from_str(s.trim()).ok())
    }
}

/// A direct call found in source.
#[derive(Debug, Clone)]
struct Call {
    name: String,
    args: Vec<String>,
    /// Token index of the callee name.
    at: usize,
    /// Token index of the closing parenthesis.
    close: usize,
    /// Variable the result is assigned to, or `return` when returned.
    lhs: Option<String>,
}

struct Scan<'s> {
    src: &'s str,
    toks: Vec<Token>,
    starts: Vec<usize>,
}

const STOPWORDS: &[&str] = &["if", "while", "for", "switch", "return", "sizeof", "do", "else", "case"];

impl<'s> Scan<'s> {
    fn new(src: &'s str) -> Self {
        Scan { src, toks: lex::tokenize(src), starts: lex::line_starts(src) }
    }

    fn t(&self, i: usize) -> &'s str {
        self.toks.get(i).map_or("", |t| t.text(self.src))
    }

    fn is_ident(&self, i: usize) -> bool {
        self.toks.get(i).is_some_and(|t| t.kind == TokKind::Ident)
    }

    fn line(&self, i: usize) -> usize {
        lex::line_of(&self.starts, self.toks[i].start)
    }

    fn calls(&self) -> Vec<Call> {
        let mut out = Vec::new();
        let mut depth = 0i32;
        for i in 0..self.toks.len() {
            match self.t(i) {
                "{" => depth += 1,
                "}" => depth -= 1,
                _ => {}
            }
            if depth < 1 || !self.is_ident(i) || self.t(i + 1) != "(" {
                continue;
            }
            let name = self.t(i);
            if lex::is_keyword(name) || STOPWORDS.contains(&name) {
                continue;
            }
            let Some(close) = lex::matching(self.src, &self.toks, i + 1) else { continue };
            let inner = &self.src[self.toks[i + 1].end..self.toks[close].start];
            out.push(Call {
                name: name.to_string(),
                args: split_top(inner).into_iter().map(|a| lex::squash_ws(&a)).collect(),
                at: i,
                close,
                lhs: self.lhs_of(i),
            });
        }
        out
    }

    /// Destination of `lhs = [cast] call(...)` or `return call(...)`.
    fn lhs_of(&self, call: usize) -> Option<String> {
        let mut j = call.checked_sub(1)?;
        // skip a cast such as `(char *)`
        if self.t(j) == ")" {
            let mut k = j;
            while k > 0 && self.t(k) != "(" {
                k -= 1;
            }
            let is_cast = (k + 1..j).all(|m| self.is_ident(m) || self.t(m) == "*");
            if !is_cast || k == 0 {
                return None;
            }
            j = k - 1;
        }
        if self.t(j) == "return" {
            return Some("return".into());
        }
        if self.t(j) != "=" {
            return None;
        }
        let end = j;
        let mut k = j;
        while k > 0 {
            let p = self.t(k - 1);
            let ok = self.is_ident(k - 1) && !STOPWORDS.contains(&p)
                || matches!(p, "*" | "->" | "." | "[" | "]")
                || self.toks[k - 1].kind == TokKind::Number;
            if !ok {
                break;
            }
            k -= 1;
        }
        let run: Vec<&str> = (k..end).map(|m| self.t(m)).collect();
        let idents: Vec<usize> = (k..end).filter(|&m| self.is_ident(m)).collect();
        let declaration = idents.len() >= 2
            && !run.iter().any(|t| matches!(*t, "->" | "." | "["))
            && (lex::is_type_word(self.t(idents[0])) || self.t(idents[0]) == "struct" || idents.len() == 2 || run.contains(&"*"));
        if declaration {
            return idents.last().map(|&m| self.t(m).to_string());
        }
        if run.is_empty() {
            return None;
        }
        Some(run.concat())
    }

    /// Token indices where `name` is dereferenced: `*name`, `name->`, `name[`.
    fn derefs(&self, name: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for i in 0..self.toks.len() {
            if self.t(i) != name || !self.is_ident(i) {
                continue;
            }
            let next = self.t(i + 1);
            let unary_star = i > 0 && self.t(i - 1) == "*" && (i < 2 || self.is_unary_context(i - 2));
            if next == "->" || next == "[" || unary_star {
                if next == "[" && self.is_declaration_at(i) {
                    continue;
                }
                out.push(i);
            }
        }
        out
    }

    fn is_unary_context(&self, prev: usize) -> bool {
        let p = self.t(prev);
        let tok = &self.toks[prev];
        !(tok.kind == TokKind::Ident && !matches!(p, "return" | "sizeof" | "case") || tok.kind == TokKind::Number || matches!(p, ")" | "]"))
    }

    fn is_declaration_at(&self, i: usize) -> bool {
        i > 0 && (lex::is_type_word(self.t(i - 1)) || self.t(i - 1) == "*" && i > 1 && self.is_ident(i - 2))
    }

    fn null_checked(&self, name: &str) -> bool {
        for i in 0..self.toks.len() {
            if self.t(i) != name {
                continue;
            }
            let prev = if i > 0 { self.t(i - 1) } else { "" };
            let next = self.t(i + 1);
            let cmp_null = |op: &str, other: &str| matches!(op, "==" | "!=") && matches!(other, "NULL" | "0" | "nullptr");
            if cmp_null(next, self.t(i + 2)) || (i >= 2 && cmp_null(prev, self.t(i - 2))) {
                return true;
            }
            if prev == "!" || matches!(prev, "&&" | "||" | "?") || matches!(next, "&&" | "||" | "?") {
                return true;
            }
            if prev == "(" && next == ")" && i >= 2 && matches!(self.t(i - 2), "if" | "while") {
                return true;
            }
        }
        false
    }

    /// Top-level `return` statements exist.
    fn has_return(&self) -> bool {
        (0..self.toks.len()).any(|i| self.t(i) == "return")
    }

    fn depth_at(&self, at: usize) -> i32 {
        let mut d = 0;
        for i in 0..at {
            match self.t(i) {
                "{" => d += 1,
                "}" => d -= 1,
                _ => {}
            }
        }
        d
    }

    fn returned(&self, name: &str) -> bool {
        (0..self.toks.len()).any(|i| self.t(i) == "return" && self.t(i + 1) == name && matches!(self.t(i + 2), ";" | ")"))
            || (0..self.toks.len()).any(|i| self.t(i) == "return" && self.t(i + 1) == "(" && self.t(i + 2) == name && self.t(i + 3) == ")")
    }

    /// Assignments `name = NULL` / `name = 0` after token `after`.
    fn nulled_after(&self, name: &str, after: usize) -> bool {
        let want: Vec<String> = lex::tokenize(name).iter().map(|t| t.text(name).to_string()).collect();
        let n = want.len();
        (after..self.toks.len()).any(|i| {
            (0..n).all(|k| self.t(i + k) == want[k]) && self.t(i + n) == "=" && matches!(self.t(i + n + 1), "NULL" | "0")
        })
    }

    /// Local variable declared in this body.
    fn declares(&self, name: &str) -> bool {
        (1..self.toks.len()).any(|i| {
            self.t(i) == name
                && self.is_ident(i)
                && matches!(self.t(i + 1), "=" | ";" | "[" | ",")
                && (lex::is_type_word(self.t(i - 1)) || self.t(i - 1) == "*" && i > 1 && (self.is_ident(i - 2) || self.t(i - 2) == "*") && self.depth_at(i) >= 1 || self.is_ident(i - 1) && !STOPWORDS.contains(&self.t(i - 1)) && self.depth_at(i) >= 1)
        })
    }
}

fn kind_of_target(p: &Prompt, target: &str) -> &'static str {
    let base = target.trim_start_matches('*');
    if target.contains("->") || target.contains('.') {
        "field"
    } else if p.is_param(base) {
        "parameter"
    } else {
        "local"
    }
}

fn size_params(p: &Prompt, expr: &str) -> Vec<String> {
    p.params.iter().filter(|q| lex::contains_word(expr, q)).cloned().collect()
}

/// Replace callee formals by call arguments in a target expression.
fn rebind(target: &str, formals: &[String], args: &[String]) -> String {
    let mut out = target.to_string();
    let pairs: Vec<(&String, &String)> = formals.iter().zip(args).collect();
    let toks = lex::tokenize(target);
    if toks.len() == 1 {
        if let Some((_, a)) = pairs.iter().find(|(f, _)| **f == out) {
            return (*a).clone();
        }
    }
    for (f, a) in pairs {
        let wrapped = if a.chars().all(|c| c.is_alphanumeric() || c == '_') { a.clone() } else { format!("({a})") };
        out = lex::replace_word(&out, f, &wrapped);
    }
    out
}

/// Formals of a callee; stubs use `arg0`, `arg1`, ...
fn formals_for(info: Option<&CalleeInfo>, arity: usize) -> Vec<String> {
    match info {
        Some(i) if !i.formals.is_empty() => i.formals.clone(),
        _ => (0..arity).map(|k| format!("arg{k}")).collect(),
    }
}

fn allocations(p: &Prompt, src: &str) -> Vec<Value> {
    let scan = Scan::new(src);
    let mut out = Vec::new();
    for c in scan.calls() {
        let (source, size) = if ALLOCATORS.contains(&c.name.as_str()) {
            let size = match (c.name.as_str(), c.args.as_slice()) {
                ("calloc", [a, b]) => Some(format!("{a} * {b}")),
                ("realloc", [_, b]) => Some(b.clone()),
                (_, [a, ..]) => Some(a.clone()),
                _ => None,
            };
            (c.name.clone(), size)
        } else if let Some(info) = p.callees.get(&c.name) {
            let returns = info
                .records
                .get("alloc")
                .and_then(|a| a["allocations"].as_array())
                .is_some_and(|a| a.iter().any(|x| x["returned"] == json!(true)));
            if !returns {
                continue;
            }
            (c.name.clone(), None)
        } else {
            continue;
        };
        let (returned, stored_to) = match c.lhs.as_deref() {
            Some("return") => (true, None),
            Some(l) => (scan.returned(l), Some(l.to_string())),
            None => (false, None),
        };
        let params = size.as_deref().map(|s| size_params(p, s)).unwrap_or_default();
        out.push(json!({
            "type": "heap",
            "source": source,
            "size_expr": size,
            "size_params": params,
            "returned": returned,
            "stored_to": stored_to,
            "may_be_null": true,
        }));
    }
    out
}

/// (frees, resource_releases)
fn frees(p: &Prompt, src: &str) -> (Vec<Value>, Vec<Value>) {
    let scan = Scan::new(src);
    let attrs = LibAttrs::builtin();
    let mut heap = Vec::new();
    let mut other = Vec::new();
    for c in scan.calls() {
        let conditional = scan.depth_at(c.at) > 1;
        if matches!(c.name.as_str(), "free" | "cfree") {
            let Some(t) = c.args.first() else { continue };
            heap.push(json!({
                "target": t,
                "target_kind": kind_of_target(p, t),
                "deallocator": c.name,
                "conditional": conditional,
                "nulled_after": scan.nulled_after(t, c.close),
            }));
        } else if attrs.has(&c.name, DEALLOCATOR) && !ALLOCATORS.contains(&c.name.as_str()) {
            let Some(t) = c.args.first() else { continue };
            other.push(json!({
                "target": t,
                "target_kind": kind_of_target(p, t),
                "deallocator": c.name,
                "conditional": conditional,
                "nulled_after": scan.nulled_after(t, c.close),
            }));
        } else if let Some(info) = p.callees.get(&c.name) {
            let Some(rec) = info.records.get("free") else { continue };
            let formals = formals_for(Some(info), c.args.len());
            for item in rec["frees"].as_array().into_iter().flatten() {
                let Some(t) = item["target"].as_str() else { continue };
                let target = rebind(t, &formals, &c.args);
                heap.push(json!({
                    "target": target,
                    "target_kind": kind_of_target(p, &target),
                    "deallocator": item["deallocator"].as_str().unwrap_or("free"),
                    "conditional": conditional || item["conditional"] == json!(true),
                    "nulled_after": false,
                    "description": format!("freed by {}", c.name),
                }));
            }
        }
    }
    (heap, other)
}

fn inits(p: &Prompt, src: &str) -> (Vec<Value>, bool) {
    let scan = Scan::new(src);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for i in 0..scan.toks.len() {
        if scan.depth_at(i) != 1 {
            continue;
        }
        // *p = ...
        if scan.t(i) == "*" && scan.is_ident(i + 1) && scan.t(i + 2) == "=" && p.is_param(scan.t(i + 1)) && (i == 0 || scan.is_unary_context(i - 1)) {
            let target = format!("*{}", scan.t(i + 1));
            if seen.insert(target.clone()) {
                out.push(json!({"target": target, "target_kind": "parameter", "initializer": "assignment", "byte_count": null, "conditional": false}));
            }
        }
        // p->f = ...
        if scan.is_ident(i) && p.is_param(scan.t(i)) && matches!(scan.t(i + 1), "->" | ".") && scan.is_ident(i + 2) && scan.t(i + 3) == "=" {
            let target = format!("{}{}{}", scan.t(i), scan.t(i + 1), scan.t(i + 2));
            if seen.insert(target.clone()) {
                out.push(json!({"target": target, "target_kind": "field", "initializer": "assignment", "byte_count": null, "conditional": false}));
            }
        }
    }
    for c in scan.calls() {
        if scan.depth_at(c.at) != 1 {
            continue;
        }
        if matches!(c.name.as_str(), "memset" | "memcpy" | "memmove") && c.args.len() == 3 && p.is_param(&c.args[0]) {
            let target = format!("*{}", c.args[0]);
            if seen.insert(target.clone()) {
                out.push(json!({"target": target, "target_kind": "parameter", "initializer": c.name, "byte_count": c.args[2], "conditional": false}));
            }
        }
    }
    let attrs = LibAttrs::builtin();
    let noreturn = !scan.has_return()
        && scan.calls().iter().any(|c| {
            scan.depth_at(c.at) == 1
                && (attrs.has(&c.name, NORETURN)
                    || p.callees.get(&c.name).and_then(|i| i.records.get("init")).is_some_and(|r| r["noreturn"] == json!(true)))
        });
    (out, noreturn)
}

/// Parsed `/* PRE[g]: formal -> actual phrase */` line.
struct Pre {
    callee: String,
    actual: Option<String>,
    kind: &'static str,
}

const PHRASES: &[(&str, &str)] = &[
    (" must not be NULL", "disallow_null"),
    (" may be NULL", "allow_null"),
    (" must not have been previously freed", "not_freed"),
    (" must be initialized", "initialized"),
    (" must point to at least", "buffer_size"),
    (" must be non-negative", "non_negative"),
];

fn parse_pre(line: &str) -> Option<Pre> {
    let rest = line.trim().strip_prefix(PRE_PREFIX)?;
    let (callee, rest) = rest.split_once("]: ")?;
    let rest = rest.trim_end_matches("*/").trim_end();
    let (at, kind) = PHRASES.iter().filter_map(|(ph, k)| rest.find(ph).map(|i| (i, *k))).min_by_key(|(i, _)| *i)?;
    let subject = &rest[..at];
    let actual = subject.split_once(" -> ").map(|(_, a)| a.trim().to_string());
    Some(Pre { callee: callee.to_string(), actual, kind })
}

fn parse_post_free(line: &str) -> Option<String> {
    let rest = line.trim().strip_prefix(POST_PREFIX)?;
    let (_, rest) = rest.split_once("]: ")?;
    let rest = rest.trim_end_matches("*/").trim_end();
    let target = rest.strip_prefix("frees ")?;
    if target.contains(" when ") {
        return None;
    }
    Some(target.to_string())
}

fn contract(target: &str, kind: &str, description: String) -> Value {
    json!({"target": target, "contract_kind": kind, "description": description})
}

fn memsafe_contracts(p: &Prompt, src: &str) -> Vec<Value> {
    let code = crate::prompt::strip_annotations(src);
    let scan = Scan::new(&code);
    let ptrs = pointer_params(&p.signature);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |t: &str, k: &str, d: String, out: &mut Vec<Value>| {
        if seen.insert((t.to_string(), k.to_string())) {
            out.push(contract(t, k, d));
        }
    };
    for q in &p.params {
        if !ptrs.contains(q) {
            continue;
        }
        if !scan.derefs(q).is_empty() && !scan.null_checked(q) {
            push(q, "disallow_null", format!("{q} is dereferenced"), &mut out);
        }
    }
    for c in scan.calls() {
        if c.name == "free" && c.args.first().is_some_and(|a| p.is_param(a)) {
            let a = &c.args[0];
            push(a, "not_freed", format!("{a} is freed here"), &mut out);
        }
    }
    for line in src.lines() {
        let Some(pre) = parse_pre(line) else { continue };
        let Some(a) = pre.actual else { continue };
        if !p.is_param(&a) || pre.kind == "allow_null" || pre.kind == "buffer_size" {
            continue;
        }
        if pre.kind == "disallow_null" && scan.null_checked(&a) {
            continue;
        }
        push(&a, pre.kind, format!("required by {}", pre.callee), &mut out);
    }
    out
}

fn issue(line: usize, kind: &str, description: String, callee: Option<&str>, contract_kind: Option<&str>) -> Value {
    let mut m = Map::new();
    m.insert("location".into(), json!(format!("line {line}")));
    m.insert("issue_kind".into(), json!(kind));
    m.insert("description".into(), json!(description));
    m.insert("severity".into(), json!("high"));
    if let (Some(c), Some(k)) = (callee, contract_kind) {
        m.insert("callee".into(), json!(c));
        m.insert("contract_kind".into(), json!(k));
    }
    Value::Object(m)
}

/// Walk the annotated body in order, tracking freed pointers.
fn verify_issues(src: &str) -> Vec<Value> {
    verify_issues_with(src, &BTreeMap::new())
}

/// Argument positions a call to `name` frees.
fn freed_positions(name: &str, wrappers: &BTreeMap<String, BTreeSet<usize>>) -> Vec<usize> {
    match wrappers.get(name) {
        Some(ps) => ps.iter().copied().collect(),
        None if name == "free" => alloc::vec![0],
        None => Vec::new(),
    }
}

/// `verify_issues` where calls to `wrappers` free the arguments at the listed positions.
fn verify_issues_with(src: &str, wrappers: &BTreeMap<String, BTreeSet<usize>>) -> Vec<Value> {
    let mut freed: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::new();
    let mut flagged: BTreeSet<(usize, String)> = BTreeSet::new();
    let mut code_line = 0usize;
    for line in src.split('\n') {
        let t = line.trim_start();
        if t.starts_with(PRE_PREFIX) {
            let Some(pre) = parse_pre(line) else { continue };
            let Some(a) = pre.actual else { continue };
            let at = code_line + 1;
            if pre.kind == "not_freed" && freed.contains(&a) && flagged.insert((at, a.clone())) {
                out.push(issue(at, "double_free", format!("{a} is passed to {} after it was freed", pre.callee), Some(&pre.callee), Some("not_freed")));
            }
            if pre.kind == "disallow_null" && matches!(a.as_str(), "NULL" | "0") && flagged.insert((at, a.clone())) {
                out.push(issue(at, "null_deref", format!("NULL is passed to {}", pre.callee), Some(&pre.callee), Some("disallow_null")));
            }
            continue;
        }
        if t.starts_with(POST_PREFIX) {
            if let Some(x) = parse_post_free(line) {
                freed.insert(x);
            }
            continue;
        }
        code_line += 1;
        let scan = Scan::new(line);
        let calls = scan.calls_flat();
        for i in 0..scan.toks.len() {
            // assignment resets what the variable points to
            if scan.is_ident(i) && scan.t(i + 1) == "=" && (i == 0 || !matches!(scan.t(i - 1), "*" | "->" | ".")) {
                freed.remove(scan.t(i));
            }
            if let Some(c) = calls.iter().find(|c| c.at == i) {
                for a in freed_positions(&c.name, wrappers).iter().filter_map(|k| c.args.get(*k)) {
                    if a.starts_with('&') && flagged.insert((code_line, a.clone())) {
                        out.push(issue(code_line, "invalid_free", format!("{a} does not point to heap memory"), None, None));
                    } else if freed.contains(a) {
                        if flagged.insert((code_line, a.clone())) {
                            out.push(issue(code_line, "double_free", format!("{a} is freed twice"), None, None));
                        }
                    } else {
                        freed.insert(a.clone());
                    }
                }
                continue;
            }
            if scan.is_ident(i) && freed.contains(scan.t(i)) {
                let name = scan.t(i);
                let next = scan.t(i + 1);
                let star = i > 0 && scan.t(i - 1) == "*" && (i < 2 || scan.is_unary_context(i - 2));
                if (next == "->" || next == "[" || star) && flagged.insert((code_line, name.to_string())) {
                    out.push(issue(code_line, "use_after_free", format!("{name} is used after it was freed"), None, None));
                }
            }
        }
    }
    out
}

impl Scan<'_> {
    /// Calls at any depth (for single lines without braces).
    fn calls_flat(&self) -> Vec<Call> {
        let mut out = Vec::new();
        for i in 0..self.toks.len() {
            if !self.is_ident(i) || self.t(i + 1) != "(" {
                continue;
            }
            let name = self.t(i);
            if lex::is_keyword(name) || STOPWORDS.contains(&name) {
                continue;
            }
            let Some(close) = lex::matching(self.src, &self.toks, i + 1) else { continue };
            let inner = &self.src[self.toks[i + 1].end..self.toks[close].start];
            out.push(Call {
                name: name.to_string(),
                args: split_top(inner).into_iter().map(|a| lex::squash_ws(&a)).collect(),
                at: i,
                close,
                lhs: None,
            });
        }
        out
    }
}

fn int_issues(src: &str) -> Vec<Value> {
    let scan = Scan::new(src);
    let mut out = Vec::new();
    for i in 0..scan.toks.len() {
        let line = scan.line(i);
        let op = scan.t(i);
        let rhs = scan.t(i + 1);
        let number = |s: &str| {
            let s = s.trim_end_matches(['u', 'U', 'l', 'L']);
            if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
                u64::from_str_radix(h, 16).ok()
            } else {
                s.parse::<u64>().ok()
            }
        };
        if matches!(op, "/" | "%" | "/=" | "%=") && scan.toks.get(i + 1).is_some_and(|t| t.kind == TokKind::Number) && number(rhs) == Some(0) {
            out.push(json!({"location": format!("line {line}"), "issue_kind": "division_by_zero", "description": format!("`{op} 0` divides by zero"), "severity": "high"}));
        }
        if matches!(op, "<<" | ">>" | "<<=" | ">>=") {
            let negative = rhs == "-" && scan.toks.get(i + 2).is_some_and(|t| t.kind == TokKind::Number);
            let big = scan.toks.get(i + 1).is_some_and(|t| t.kind == TokKind::Number) && number(rhs).is_some_and(|n| n >= 64);
            if negative || big {
                out.push(json!({"location": format!("line {line}"), "issue_kind": "shift_ub", "description": format!("shift count `{rhs}` is out of range"), "severity": "high"}));
            }
        }
        if matches!(op, "INT_MAX" | "2147483647" | "LONG_MAX" | "9223372036854775807") && matches!(rhs, "+" | "*") && (i == 0 || !matches!(scan.t(i - 1), "-" | "<" | ">" | "<=" | ">=" | "==" | "!=")) {
            out.push(json!({"location": format!("line {line}"), "issue_kind": "integer_overflow", "description": format!("`{op} {rhs}` exceeds the type's maximum"), "severity": "high"}));
        }
    }
    out
}

fn leak(p: &Prompt) -> Value {
    let scan = Scan::new(&p.source);
    let is_entry = p.text.contains(&format!("Note: {} is the program entry point.", p.name));
    let allocs = p.own("## This Function's Allocation Summary").map(|v| v["allocations"].as_array().cloned().unwrap_or_default()).unwrap_or_default();
    let free_rec = p.own("## This Function's Free Summary");
    let freed: BTreeSet<String> = free_rec
        .iter()
        .flat_map(|f| f["frees"].as_array().cloned().unwrap_or_default())
        .filter_map(|f| f["target"].as_str().map(|s| s.trim_start_matches('*').to_string()))
        .collect();
    let mut leaks = Vec::new();
    let mut kept = Vec::new();
    for a in &allocs {
        if a["type"] != json!("heap") {
            continue;
        }
        let returned = a["returned"] == json!(true);
        let stored = a["stored_to"].as_str().map(|s| s.trim_start_matches('*').to_string());
        let is_freed = stored.as_ref().is_some_and(|s| freed.contains(s));
        let local = stored.as_ref().is_none_or(|s| !s.contains("->") && !s.contains('.') && !p.is_param(s) && scan.declares(s));
        if is_freed {
            continue;
        }
        if returned || (!local && !is_entry) {
            kept.push(json!({
                "source": a["source"],
                "size_expr": a["size_expr"],
                "returned": returned,
                "stored_to": a["stored_to"],
                "may_be_null": a["may_be_null"].as_bool().unwrap_or(true),
            }));
            continue;
        }
        leaks.push(json!({
            "allocation": format!("{}({})", a["source"].as_str().unwrap_or("?"), a["size_expr"].as_str().unwrap_or("")),
            "stored_to": a["stored_to"],
            "reason": if is_entry && !local { "still allocated when the entry point returns" } else { "not freed, returned or stored to a caller-visible location" },
            "severity": "high",
        }));
    }
    let frees: Vec<Value> = free_rec
        .iter()
        .flat_map(|f| f["frees"].as_array().cloned().unwrap_or_default())
        .filter(|f| matches!(f["target_kind"].as_str(), Some("parameter" | "field")))
        .map(|f| {
            json!({
                "target": f["target"],
                "target_kind": f["target_kind"],
                "deallocator": f["deallocator"],
                "conditional": f["conditional"].as_bool().unwrap_or(false),
                "condition": f.get("condition").cloned().unwrap_or(Value::Null),
            })
        })
        .collect();
    let description = if leaks.is_empty() { "No leaks found." } else { "Leaks heap memory." };
    json!({
        "function": p.name,
        "description": description,
        "leaks": leaks,
        "simplified_allocations": kept,
        "simplified_frees": frees,
    })
}

fn own_contracts(p: &Prompt) -> Vec<Value> {
    section(&p.text, "## Pre-conditions (assume these hold)")
        .into_iter()
        .flat_map(|s| s.lines())
        .filter_map(|l| l.strip_prefix("- ").and_then(|j| serde_json::from_str::<Value>(j).ok()))
        .collect()
}

fn summary(pass: PassTag, p: &Prompt) -> Value {
    let name = &p.name;
    match pass {
        PassTag::Alloc => {
            let allocs = allocations(p, &p.source);
            let d = if allocs.is_empty() { "Does not allocate memory.".to_string() } else { format!("Allocates {} heap object(s).", allocs.len()) };
            json!({"function": name, "description": d, "parameters": {}, "allocations": allocs, "buffer_size_pairs": []})
        }
        PassTag::Free => {
            let (f, r) = frees(p, &p.source);
            let d = if f.is_empty() && r.is_empty() { "Does not free memory.".to_string() } else { format!("Frees {} object(s).", f.len() + r.len()) };
            json!({"function": name, "description": d, "frees": f, "resource_releases": r})
        }
        PassTag::Init => {
            let (i, noreturn) = inits(p, &p.source);
            let d = if noreturn { "Does not return." } else if i.is_empty() { "Initializes nothing visible to the caller." } else { "Initializes caller-visible memory." };
            json!({"function": name, "description": d, "inits": i, "output_ranges": [], "noreturn": noreturn})
        }
        PassTag::Memsafe => {
            let c = memsafe_contracts(p, &p.source);
            let d = if c.is_empty() { "No requirements on the caller." } else { "Requires valid pointer arguments." };
            json!({"function": name, "description": d, "contracts": c})
        }
        PassTag::Leak => leak(p),
        PassTag::Int => {
            let issues = int_issues(&p.source);
            let d = if issues.is_empty() { "No integer UB found." } else { "Integer UB is possible." };
            json!({"function": name, "description": d, "constraints": [], "output_ranges": [], "issues": issues})
        }
        PassTag::Verify => {
            let issues = verify_issues(&p.source);
            let d = if issues.is_empty() { "No violations found." } else { "Memory safety violations found." };
            json!({"function": name, "description": d, "simplified_contracts": own_contracts(p), "issues": issues})
        }
        PassTag::External => external(name),
    }
}

fn block(pass: PassTag, p: &Prompt) -> Value {
    let code: String = p.source.lines().filter(|l| !l.trim_start().starts_with("/* BLOCK ")).collect::<Vec<_>>().join("\n");
    let wrapped = format!("void __block(void) {{\n{code}\n}}");
    let sub = Prompt { source: wrapped.clone(), ..Prompt::parse(&p.text) };
    let (key, items, summary): (&str, Vec<Value>, String) = match pass {
        PassTag::Alloc => {
            let a = allocations(&sub, &wrapped);
            let s = if a.is_empty() { "no allocations".into() } else { format!("allocates {} object(s)", a.len()) };
            ("allocations", a, s)
        }
        PassTag::Free => {
            let (f, _) = frees(&sub, &wrapped);
            let s = if f.is_empty() { "no frees".into() } else { format!("frees {}", f.iter().filter_map(|x| x["target"].as_str()).collect::<Vec<_>>().join(", ")) };
            ("frees", f, s)
        }
        PassTag::Init => {
            let (i, _) = inits(&sub, &wrapped);
            let s = if i.is_empty() { "no caller-visible writes".into() } else { format!("initializes {} target(s)", i.len()) };
            ("inits", i, s)
        }
        PassTag::Memsafe => {
            let c = memsafe_contracts(&sub, &wrapped);
            let s = if c.is_empty() { "no requirements".into() } else { format!("requires {} contract(s)", c.len()) };
            ("contracts", c, s)
        }
        _ => {
            let i = verify_issues(&code);
            let s = if i.is_empty() { "no violations".into() } else { format!("{} violation(s)", i.len()) };
            ("issues", i, s)
        }
    };
    let index = p.text.matches("/* BLOCK ").count();
    let mut m = Map::new();
    m.insert("suggested_name".into(), json!(format!("{}_block{index}", p.name)));
    m.insert("suggested_signature".into(), json!(format!("void {}_block{index}(void)", p.name)));
    m.insert("summary".into(), json!(summary));
    m.insert(key.into(), Value::Array(items));
    Value::Object(m)
}

fn merge(pass: PassTag, p: &Prompt) -> Value {
    let parts: Vec<Value> = section(&p.text, "## Block Results")
        .into_iter()
        .flat_map(|s| s.lines())
        .filter_map(|l| l.strip_prefix("- BLOCK ").and_then(|r| r.find("): ").map(|i| &r[i + 3..])))
        .filter_map(|j| serde_json::from_str(j).ok())
        .collect();
    let gather = |key: &str| -> Vec<Value> {
        let mut out: Vec<Value> = Vec::new();
        for part in &parts {
            for v in part[key].as_array().into_iter().flatten() {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        }
        out
    };
    let name = &p.name;
    match pass {
        PassTag::Alloc => json!({"function": name, "description": "Merged from blocks.", "parameters": {}, "allocations": gather("allocations"), "buffer_size_pairs": []}),
        PassTag::Free => json!({"function": name, "description": "Merged from blocks.", "frees": gather("frees"), "resource_releases": []}),
        PassTag::Init => json!({"function": name, "description": "Merged from blocks.", "inits": gather("inits"), "output_ranges": [], "noreturn": false}),
        PassTag::Memsafe => json!({"function": name, "description": "Merged from blocks.", "contracts": gather("contracts")}),
        _ => json!({"function": name, "description": "Merged from blocks.", "simplified_contracts": [], "issues": gather("issues")}),
    }
}

/// Canned summaries of a few well-known library functions; arguments are
/// named `arg0`, `arg1`, ... in call order.
pub fn external(name: &str) -> Value {
    let alloc = |size: &str, params: Value| {
        json!({"function": name, "description": "Returns a new heap allocation.", "parameters": {}, "allocations": [
            {"type": "heap", "source": name, "size_expr": size, "size_params": params, "returned": true, "stored_to": null, "may_be_null": true}
        ]})
    };
    let ms = |contracts: Value| json!({"function": name, "description": "Library preconditions.", "contracts": contracts});
    let nn = |t: &str| contract(t, "disallow_null", format!("{t} must not be NULL"));
    let buf = |t: &str, n: &str| json!({"target": t, "contract_kind": "buffer_size", "description": format!("{t} holds {n} bytes"), "size_expr": n, "relationship": "byte_count"});
    let init_buf = |t: &str, n: &str, how: &str| {
        json!({"function": name, "description": "Writes the destination buffer.", "inits": [
            {"target": format!("*{t}"), "target_kind": "parameter", "initializer": how, "byte_count": n, "conditional": false}
        ], "output_ranges": [], "noreturn": false})
    };
    let (allocation, free, init, memsafe) = match name {
        "malloc" | "valloc" => (alloc("arg0", json!(["arg0"])), Value::Null, Value::Null, ms(json!([]))),
        "calloc" => (alloc("arg0 * arg1", json!(["arg0", "arg1"])), Value::Null, Value::Null, ms(json!([]))),
        "realloc" => (
            alloc("arg1", json!(["arg1"])),
            json!({"function": name, "description": "Releases the old block.", "frees": [
                {"target": "arg0", "target_kind": "parameter", "deallocator": "realloc", "conditional": true, "condition": "arg0 != NULL", "nulled_after": false}
            ], "resource_releases": []}),
            Value::Null,
            ms(json!([contract("arg0", "not_freed", "arg0 must not have been freed".into())])),
        ),
        "strdup" => (alloc("strlen(arg0) + 1", json!([])), Value::Null, Value::Null, ms(json!([nn("arg0")]))),
        "free" | "cfree" => (
            Value::Null,
            json!({"function": name, "description": "Frees its argument.", "frees": [
                {"target": "arg0", "target_kind": "parameter", "deallocator": name, "conditional": false, "nulled_after": false}
            ], "resource_releases": []}),
            Value::Null,
            ms(json!([contract("arg0", "not_freed", "arg0 must not have been freed".into())])),
        ),
        "memcpy" | "memmove" => (Value::Null, Value::Null, init_buf("arg0", "arg2", "copy"), ms(json!([nn("arg0"), nn("arg1"), buf("arg0", "arg2"), buf("arg1", "arg2")]))),
        "memset" => (Value::Null, Value::Null, init_buf("arg0", "arg2", "fill"), ms(json!([nn("arg0"), buf("arg0", "arg2")]))),
        "strcpy" | "strcat" => (Value::Null, Value::Null, Value::Null, ms(json!([nn("arg0"), nn("arg1")]))),
        "strlen" | "puts" | "atoi" => (Value::Null, Value::Null, Value::Null, ms(json!([nn("arg0")]))),
        "fclose" => (
            Value::Null,
            json!({"function": name, "description": "Closes a stream.", "frees": [], "resource_releases": [
                {"target": "arg0", "target_kind": "parameter", "deallocator": "fclose", "conditional": false, "nulled_after": false}
            ]}),
            Value::Null,
            ms(json!([nn("arg0")])),
        ),
        n if LibAttrs::builtin().has(n, NORETURN) => (
            Value::Null,
            Value::Null,
            json!({"function": name, "description": "Does not return.", "inits": [], "output_ranges": [], "noreturn": true}),
            ms(json!([])),
        ),
        _ => (Value::Null, Value::Null, Value::Null, Value::Null),
    };
    json!({"allocation": allocation, "free": free, "init": init, "memsafe": memsafe})
}

/// Per-function scans where program functions that free a parameter act
/// as deallocators of the matching argument.
fn whole_program_memsafety(src: &str) -> Vec<Value> {
    let Ok(ex) = crate::extract::parse_translation_unit("program.c", src) else {
        return verify_issues(src);
    };
    let mut wrappers: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    // wrappers of wrappers: iterate to a fixed point, bounded by the function count
    for _ in 0..=ex.functions.len() {
        let mut grew = false;
        for f in &ex.functions {
            let params: Vec<&str> = f.param_names().collect();
            for c in Scan::new(&f.body).calls() {
                for k in freed_positions(&c.name, &wrappers) {
                    let Some(a) = c.args.get(k) else { continue };
                    if let Some(i) = params.iter().position(|p| p == a) {
                        grew |= wrappers.entry(f.name.clone()).or_default().insert(i);
                    }
                }
            }
        }
        if !grew {
            break;
        }
    }
    ex.functions.iter().flat_map(|f| verify_issues_with(&f.body, &wrappers)).collect()
}

fn baseline(text: &str) -> Value {
    let kinds = text.lines().find_map(|l| l.strip_prefix("feasible path, using one of these issue kinds: ")).unwrap_or("");
    let mut issues = Vec::new();
    for src in fences(text) {
        if kinds.contains("memory_leak") {
            let scan = Scan::new(&src);
            let allocated: BTreeSet<String> = scan.calls().into_iter().filter(|c| ALLOCATORS.contains(&c.name.as_str())).filter_map(|c| c.lhs).collect();
            let freed: BTreeSet<String> = scan.calls().into_iter().filter(|c| c.name == "free").filter_map(|c| c.args.first().cloned()).collect();
            for a in allocated.difference(&freed) {
                if a != "return" {
                    issues.push(json!({"location": "program", "issue_kind": "memory_leak", "description": format!("{a} is never freed"), "severity": "high"}));
                }
            }
        } else if kinds.contains("integer_overflow") {
            issues.extend(int_issues(&src));
        } else {
            issues.extend(whole_program_memsafety(&src));
        }
    }
    json!({"function": "<whole-program>", "description": "Whole-program check.", "issues": issues})
}
