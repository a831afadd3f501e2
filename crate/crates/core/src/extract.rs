//! Structural extraction of functions, callsites and type context from one
//! C translation unit.
//!
//! The recognizer works on the token stream from [`crate::lex`]: file-scope
//! declarations are chunked at `;` and at function bodies, function
//! definitions are recognized by their trailing parameter list, and calls are
//! identifiers (or parenthesized/indexed/member expressions) followed by an
//! argument list. Input may be either original source or preprocessor output
//! with line markers; in the latter case only definitions whose markers point
//! at the main file are kept and line numbers are mapped back.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::lex::{self, is_keyword, is_type_word, line_starts, tokenize, TokKind, Token};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

/// One extracted C function, or an external stub when `is_external`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub name: String,
    pub signature: String,
    pub params: Vec<Param>,
    pub file_path: String,
    /// 1-based inclusive.
    pub line_span: (usize, usize),
    /// Full definition text, signature through closing brace.
    pub body: String,
    pub is_external: bool,
    #[serde(default)]
    pub lib_attrs: BTreeSet<String>,
}

impl FunctionRecord {
    pub fn external(name: &str, attrs: BTreeSet<String>) -> Self {
        FunctionRecord {
            name: name.into(),
            signature: String::new(),
            params: Vec::new(),
            file_path: String::new(),
            line_span: (0, 0),
            body: String::new(),
            is_external: true,
            lib_attrs: attrs,
        }
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.iter().any(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallsiteRecord {
    pub caller: String,
    pub file_path: String,
    /// `None` when the callee could not be resolved (indirect call).
    pub callee_name: Option<String>,
    pub arg_exprs: Vec<String>,
    pub line: usize,
    pub is_indirect: bool,
    /// Byte range of the call expression within the caller's `body`.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldInfo {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructDef {
    pub is_union: bool,
    pub fields: Vec<FieldInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<u64>,
    /// Declaration text as written.
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeContext {
    pub typedefs: BTreeMap<String, String>,
    /// Keyed `struct name` / `union name`, or the typedef name for anonymous ones.
    pub structs: BTreeMap<String, StructDef>,
    pub sizeof_values: BTreeMap<String, u64>,
    pub macros: BTreeMap<String, String>,
}

impl TypeContext {
    pub fn merge(&mut self, other: TypeContext) {
        self.typedefs.extend(other.typedefs);
        self.structs.extend(other.structs);
        self.sizeof_values.extend(other.sizeof_values);
        self.macros.extend(other.macros);
    }

    pub fn is_empty(&self) -> bool {
        self.typedefs.is_empty()
            && self.structs.is_empty()
            && self.sizeof_values.is_empty()
            && self.macros.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub functions: Vec<FunctionRecord>,
    pub callsites: Vec<CallsiteRecord>,
    pub types: TypeContext,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl core::error::Error for ParseError {}

/// Common typedef names from libc headers treated as types when the header
/// itself was not preprocessed in.
const STD_TYPEDEFS: &[(&str, u64)] = &[
    ("size_t", 8),
    ("ssize_t", 8),
    ("ptrdiff_t", 8),
    ("intptr_t", 8),
    ("uintptr_t", 8),
    ("off_t", 8),
    ("time_t", 8),
    ("int8_t", 1),
    ("uint8_t", 1),
    ("int16_t", 2),
    ("uint16_t", 2),
    ("int32_t", 4),
    ("uint32_t", 4),
    ("int64_t", 8),
    ("uint64_t", 8),
    ("wchar_t", 4),
    ("bool", 1),
    ("FILE", 216),
    ("pthread_mutex_t", 40),
    ("va_list", 24),
];

/// LP64 size of a scalar type spelled with C keywords, if it is one.
fn scalar_size(words: &[&str]) -> Option<u64> {
    let core: Vec<&str> = words
        .iter()
        .copied()
        .filter(|w| !matches!(*w, "const" | "volatile" | "static" | "extern" | "register" | "signed" | "unsigned" | "__const" | "__signed__" | "_Atomic" | "inline" | "__inline" | "__inline__" | "__extension__" | "restrict" | "__restrict" | "__restrict__"))
        .collect();
    let has_sign = words.iter().any(|w| matches!(*w, "signed" | "unsigned" | "__signed__"));
    match core.as_slice() {
        [] if has_sign => Some(4),
        ["char"] | ["_Bool"] => Some(1),
        ["short"] | ["short", "int"] => Some(2),
        ["int"] => Some(4),
        ["long"] | ["long", "int"] | ["long", "long"] | ["long", "long", "int"] => Some(8),
        ["float"] => Some(4),
        ["double"] => Some(8),
        ["long", "double"] => Some(16),
        ["__int128"] => Some(16),
        ["void"] => Some(1),
        _ => None,
    }
}

struct Scanner<'a> {
    path: &'a str,
    src: &'a str,
    toks: Vec<Token>,
    starts: Vec<usize>,
    /// (offset of marker directive, line it declares for the next line, file)
    markers: Vec<(usize, usize, String)>,
    out: Extraction,
    fn_like_macros: BTreeSet<String>,
    fnptr_typedefs: BTreeSet<String>,
    global_fnptrs: BTreeSet<String>,
    /// typedef name -> aliased type text, for simple aliases
    aliases: BTreeMap<String, String>,
}

/// Extract one translation unit. `file_path` names the main file; when the
/// text contains preprocessor line markers, only functions located in that
/// file are returned.
pub fn parse_translation_unit(file_path: &str, src: &str) -> Result<Extraction, ParseError> {
    let mut sc = Scanner {
        path: file_path,
        src,
        toks: tokenize(src),
        starts: line_starts(src),
        markers: Vec::new(),
        out: Extraction::default(),
        fn_like_macros: BTreeSet::new(),
        fnptr_typedefs: BTreeSet::new(),
        global_fnptrs: BTreeSet::new(),
        aliases: BTreeMap::new(),
    };
    sc.run()?;
    Ok(sc.out)
}

/// Only the `#define`s of a source text, for pairing with preprocessed bodies.
pub fn collect_macros(src: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for t in tokenize(src).iter().filter(|t| t.kind == TokKind::Directive) {
        if let Some((name, def, _)) = parse_define(t.text(src)) {
            out.insert(name, def);
        }
    }
    out
}

/// `#define NAME(params) body` -> (NAME, "(params) body", function_like)
fn parse_define(text: &str) -> Option<(String, String, bool)> {
    let rest = text.strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix("define")?;
    if !rest.starts_with([' ', '\t']) {
        return None;
    }
    let rest = rest.trim_start();
    let name_len = rest
        .find(|c: char| !(c == '_' || c.is_ascii_alphanumeric()))
        .unwrap_or(rest.len());
    if name_len == 0 {
        return None;
    }
    let name = &rest[..name_len];
    let after = &rest[name_len..];
    let fn_like = after.starts_with('(');
    let def = lex::squash_ws(&after.replace("\\\n", " "));
    Some((name.to_string(), def, fn_like))
}

fn parse_marker(text: &str) -> Option<(usize, String)> {
    let rest = text.strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix("line").unwrap_or(rest).trim_start();
    let digits = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    if digits == 0 {
        return None;
    }
    let line: usize = rest[..digits].parse().ok()?;
    let rest = rest[digits..].trim_start();
    let file = rest.strip_prefix('"').and_then(|r| r.find('"').map(|e| r[..e].to_string()));
    Some((line, file.unwrap_or_default()))
}

fn same_file(marker: &str, main: &str) -> bool {
    if marker == main {
        return true;
    }
    let base = |p: &str| p.rsplit('/').next().unwrap_or(p).to_string();
    let m = marker.trim_start_matches("./");
    let n = main.trim_start_matches("./");
    m == n || m.ends_with(&format!("/{n}")) || n.ends_with(&format!("/{m}")) || (base(m) == base(n) && !m.contains('<'))
}

impl<'a> Scanner<'a> {
    fn text(&self, i: usize) -> &'a str {
        self.toks[i].text(self.src)
    }

    fn is(&self, i: usize, s: &str) -> bool {
        i < self.toks.len() && self.toks[i].kind != TokKind::Str && self.text(i) == s
    }

    fn phys_line(&self, offset: usize) -> usize {
        lex::line_of(&self.starts, offset)
    }

    /// (file, line) for a byte offset, honoring line markers.
    fn locate(&self, offset: usize) -> (String, usize) {
        let phys = self.phys_line(offset);
        let idx = self.markers.partition_point(|m| m.0 <= offset);
        if idx == 0 {
            return (self.path.to_string(), phys);
        }
        let (moff, mline, ref mfile) = self.markers[idx - 1];
        let mphys = self.phys_line(moff);
        let file = if mfile.is_empty() {
            // `#line N` without a file keeps the previous file
            self.markers[..idx - 1]
                .iter()
                .rev()
                .find(|m| !m.2.is_empty())
                .map_or_else(|| self.path.to_string(), |m| m.2.clone())
        } else {
            mfile.clone()
        };
        (file, mline + phys.saturating_sub(mphys + 1))
    }

    fn in_main_file(&self, offset: usize) -> bool {
        if self.markers.is_empty() {
            return true;
        }
        same_file(&self.locate(offset).0, self.path)
    }

    fn matching(&self, open: usize) -> Option<usize> {
        lex::matching(self.src, &self.toks, open)
    }

    fn matching_back(&self, close: usize) -> Option<usize> {
        let (o, c) = match self.text(close) {
            ")" => ("(", ")"),
            "]" => ("[", "]"),
            "}" => ("{", "}"),
            _ => return None,
        };
        let mut depth = 0usize;
        let mut j = close;
        loop {
            let t = &self.toks[j];
            if t.kind == TokKind::Punct {
                let s = t.text(self.src);
                if s == c {
                    depth += 1;
                } else if s == o {
                    depth -= 1;
                    if depth == 0 {
                        return Some(j);
                    }
                }
            }
            if j == 0 {
                return None;
            }
            j -= 1;
        }
    }

    fn err(&self, offset: usize, message: &str) -> ParseError {
        ParseError { line: self.phys_line(offset), message: message.into() }
    }

    fn run(&mut self) -> Result<(), ParseError> {
        let mut i = 0;
        let mut chunk = 0;
        while i < self.toks.len() {
            let t = self.toks[i];
            if t.kind == TokKind::Directive {
                self.directive(i);
                if chunk == i {
                    chunk = i + 1;
                }
                i += 1;
                continue;
            }
            if t.kind != TokKind::Punct {
                i += 1;
                continue;
            }
            match self.text(i) {
                ";" => {
                    self.declaration(chunk, i);
                    chunk = i + 1;
                    i += 1;
                }
                "(" | "[" => {
                    i = self.matching(i).ok_or_else(|| self.err(t.start, "unbalanced parenthesis"))? + 1;
                }
                "{" => {
                    let close = self.matching(i).ok_or_else(|| self.err(t.start, "unbalanced brace"))?;
                    if let Some(header) = self.function_header(chunk, i) {
                        self.function(chunk, i, close, header);
                        chunk = close + 1;
                    }
                    i = close + 1;
                }
                ")" | "]" | "}" => return Err(self.err(t.start, "unexpected closing bracket")),
                _ => i += 1,
            }
        }
        if chunk < self.toks.len() && self.toks[chunk..].iter().any(|t| t.kind != TokKind::Directive) {
            self.out.diagnostics.push(format!(
                "trailing tokens without terminator at line {}",
                self.phys_line(self.toks[chunk].start)
            ));
        }
        self.finish_types();
        Ok(())
    }

    fn directive(&mut self, i: usize) {
        let text = self.text(i);
        if let Some((line, file)) = parse_marker(text) {
            self.markers.push((self.toks[i].start, line, file));
            return;
        }
        if let Some((name, def, fn_like)) = parse_define(text) {
            if self.in_main_file(self.toks[i].start) {
                if fn_like {
                    self.fn_like_macros.insert(name.clone());
                }
                self.out.types.macros.insert(name, def);
            }
        }
    }

    /// For `[lo, brace)` return (name token, params open, params close) if
    /// it is a function definition header.
    fn function_header(&self, lo: usize, brace: usize) -> Option<(usize, usize, usize)> {
        if brace <= lo {
            return None;
        }
        let first = self.text(lo);
        if first == "typedef" {
            return None;
        }
        // initializers and struct bodies are not function headers
        let mut depth = 0i32;
        for j in lo..brace {
            match self.text(j) {
                "(" | "[" => depth += 1,
                ")" | "]" => depth -= 1,
                "=" if depth == 0 => return None,
                _ => {}
            }
        }
        let mut j = brace - 1;
        let mut guard = 0;
        loop {
            guard += 1;
            if guard > 16 {
                return None;
            }
            let t = self.toks[j];
            if t.kind == TokKind::Ident && !is_keyword(self.text(j)) && j > lo {
                // trailing macro such as __THROW
                j -= 1;
                continue;
            }
            if self.text(j) != ")" {
                return None;
            }
            let open = self.matching_back(j)?;
            if open == 0 || open <= lo {
                return None;
            }
            let before = self.text(open - 1);
            if matches!(before, "__attribute__" | "__attribute" | "__asm__" | "__asm" | "asm" | "__declspec") {
                if open < lo + 2 {
                    return None;
                }
                j = open - 2;
                continue;
            }
            if self.toks[open - 1].kind == TokKind::Ident && !is_keyword(before) {
                return Some((open - 1, open, j));
            }
            if before == ")" {
                // function returning a function pointer: `T (*name(params))(...)`
                let inner_open = self.matching_back(open - 1)?;
                for k in inner_open + 1..open - 1 {
                    if self.toks[k].kind == TokKind::Ident && !is_keyword(self.text(k)) && self.is(k + 1, "(") {
                        let close = self.matching(k + 1)?;
                        return Some((k, k + 1, close));
                    }
                }
            }
            return None;
        }
    }

    fn function(&mut self, lo: usize, brace: usize, close: usize, header: (usize, usize, usize)) {
        let (name_tok, popen, pclose) = header;
        let start = self.toks[lo].start;
        if !self.in_main_file(start) {
            return;
        }
        let end = self.toks[close].end;
        let name = self.text(name_tok).to_string();
        let sig_end = self.toks[brace - 1].end;
        let signature = lex::squash_ws(&self.src[start..sig_end]);
        let params = self.params(popen, pclose);
        let (file, first_line) = self.locate(start);
        let (_, last_line) = self.locate(self.toks[close].start);
        let file = if self.markers.is_empty() { self.path.to_string() } else { file };
        let mut attrs = BTreeSet::new();
        for j in lo..brace {
            let s = self.text(j);
            if s == "_Noreturn" || s == "noreturn" || s == "__noreturn__" {
                attrs.insert("noreturn".to_string());
            }
        }
        let body = self.src[start..end].to_string();

        let mut fnptrs: BTreeSet<String> = params.iter().map(|p| p.name.clone()).collect();
        fnptrs.extend(self.global_fnptrs.iter().cloned());
        for j in popen..close {
            if let Some(n) = self.fnptr_declarator(j) {
                fnptrs.insert(n);
            }
            if self.toks[j].kind == TokKind::Ident
                && self.fnptr_typedefs.contains(self.text(j))
                && j + 1 < close
                && self.toks[j + 1].kind == TokKind::Ident
            {
                fnptrs.insert(self.text(j + 1).to_string());
            }
        }

        let mut calls = Vec::new();
        for j in brace + 1..close {
            if let Some(call) = self.callsite(j, &fnptrs) {
                calls.push(call);
            }
        }
        for (callee, args, cstart, cend) in calls {
            let (_, line) = self.locate(self.toks[cstart].start);
            let is_indirect = callee.is_none();
            self.out.callsites.push(CallsiteRecord {
                caller: name.clone(),
                file_path: file.clone(),
                callee_name: callee,
                arg_exprs: args,
                line,
                is_indirect,
                span: (self.toks[cstart].start - start, self.toks[cend].end - start),
            });
        }
        self.out.functions.push(FunctionRecord {
            name,
            signature,
            params,
            file_path: file,
            line_span: (first_line, last_line),
            body,
            is_external: false,
            lib_attrs: attrs,
        });
    }

    /// `( * name )` starting at `j`.
    fn fnptr_declarator(&self, j: usize) -> Option<String> {
        if self.is(j, "(") && self.is(j + 1, "*") {
            let mut k = j + 2;
            while k < self.toks.len() && matches!(self.text(k), "const" | "volatile" | "restrict" | "__restrict") {
                k += 1;
            }
            if k < self.toks.len() && self.toks[k].kind == TokKind::Ident && self.is(k + 1, ")") && self.is(k + 2, "(") {
                return Some(self.text(k).to_string());
            }
        }
        None
    }

    fn split_args(&self, open: usize, close: usize) -> Vec<String> {
        let mut out = Vec::new();
        if close == open + 1 {
            return out;
        }
        let mut depth = 0i32;
        let mut seg = open + 1;
        for j in open + 1..close {
            match self.text(j) {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                "," if depth == 0 && self.toks[j].kind == TokKind::Punct => {
                    out.push(self.src[self.toks[seg].start..self.toks[j - 1].end].trim().to_string());
                    seg = j + 1;
                }
                _ => {}
            }
        }
        if seg < close {
            out.push(self.src[self.toks[seg].start..self.toks[close - 1].end].trim().to_string());
        }
        out
    }

    fn is_type_name(&self, s: &str) -> bool {
        is_type_word(s)
            || self.out.types.typedefs.contains_key(s)
            || STD_TYPEDEFS.iter().any(|(n, _)| *n == s)
            || s.ends_with("_t")
    }

    /// Recognize a call whose argument list opens at `j + 1`.
    /// Returns (callee or None if indirect, args, first token, last token).
    #[allow(clippy::type_complexity)]
    fn callsite(&self, j: usize, fnptrs: &BTreeSet<String>) -> Option<(Option<String>, Vec<String>, usize, usize)> {
        if !self.is(j + 1, "(") {
            return None;
        }
        let open = j + 1;
        let close = self.matching(open)?;
        let t = self.toks[j];
        let prev = if j > 0 { Some(j - 1) } else { None };
        let prev_text = prev.map(|p| self.text(p));
        let prev_is_decl_type = prev.is_some_and(|p| {
            let s = self.text(p);
            self.toks[p].kind == TokKind::Ident && (is_type_word(s) || !is_keyword(s))
        });
        match t.kind {
            TokKind::Ident => {
                let name = self.text(j);
                if is_keyword(name) || name.starts_with("__builtin_") || name == "defined" {
                    return None;
                }
                if matches!(prev_text, Some("." | "->")) {
                    let base = self.member_base(j - 1);
                    return Some((None, self.split_args(open, close), base, close));
                }
                if prev_is_decl_type {
                    return None;
                }
                if self.fn_like_macros.contains(name) {
                    return None;
                }
                let args = self.split_args(open, close);
                if fnptrs.contains(name) {
                    return Some((None, args, j, close));
                }
                Some((Some(name.to_string()), args, j, close))
            }
            TokKind::Punct if self.text(j) == ")" => {
                let gopen = self.matching_back(j)?;
                if gopen > 0 {
                    let before = self.toks[gopen - 1];
                    let b = before.text(self.src);
                    if before.kind == TokKind::Ident && (is_keyword(b) || is_type_word(b) || !is_keyword(b)) {
                        // if (...) (...), sizeof (...) (...), or a declarator
                        if is_keyword(b) || is_type_word(b) || self.is_type_name(b) {
                            return None;
                        }
                        // f(a)(b): call through a returned pointer
                    }
                }
                let inner: Vec<usize> = (gopen + 1..j).collect();
                let is_cast = !inner.is_empty()
                    && inner.iter().all(|&k| {
                        let s = self.text(k);
                        self.toks[k].kind == TokKind::Punct && s == "*" || self.is_type_name(s)
                    });
                if is_cast || inner.is_empty() {
                    return None;
                }
                Some((None, self.split_args(open, close), gopen, close))
            }
            TokKind::Punct if self.text(j) == "]" => {
                let gopen = self.matching_back(j)?;
                let base = if gopen > 0 { gopen - 1 } else { gopen };
                Some((None, self.split_args(open, close), base, close))
            }
            _ => None,
        }
    }

    /// First token of a member-access chain ending at the `.`/`->` at `dot`.
    fn member_base(&self, dot: usize) -> usize {
        let mut k = dot;
        while k > 0 {
            let p = k - 1;
            let s = self.text(p);
            if self.toks[p].kind == TokKind::Ident {
                if p > 0 && matches!(self.text(p - 1), "." | "->") {
                    k = p - 1;
                    continue;
                }
                return p;
            }
            if s == ")" || s == "]" {
                if let Some(o) = self.matching_back(p) {
                    if o > 0 && matches!(self.text(o - 1), "." | "->") {
                        k = o - 1;
                        continue;
                    }
                    if s == "]" && o > 0 && self.toks[o - 1].kind == TokKind::Ident {
                        return o - 1;
                    }
                    return o;
                }
            }
            return p;
        }
        k
    }

    fn params(&self, open: usize, close: usize) -> Vec<Param> {
        let mut out: Vec<Param> = Vec::new();
        let mut depth = 0i32;
        let mut seg = open + 1;
        let mut parts = Vec::new();
        for j in open + 1..close {
            match self.text(j) {
                "(" | "[" => depth += 1,
                ")" | "]" => depth -= 1,
                "," if depth == 0 => {
                    parts.push((seg, j));
                    seg = j + 1;
                }
                _ => {}
            }
        }
        if seg < close {
            parts.push((seg, close));
        }
        for (idx, (a, b)) in parts.into_iter().enumerate() {
            let texts: Vec<&str> = (a..b).map(|k| self.text(k)).collect();
            if texts == ["void"] || texts == ["..."] || texts.is_empty() {
                continue;
            }
            let (name_tok, _) = self.declarator_name(a, b);
            let name = match name_tok {
                Some(k) => self.text(k).to_string(),
                None => format!("__arg{idx}"),
            };
            let ty = match name_tok {
                Some(k) => {
                    let mut s = String::new();
                    s.push_str(&self.src[self.toks[a].start..self.toks[k].start]);
                    s.push(' ');
                    if k + 1 < b {
                        s.push_str(&self.src[self.toks[k + 1].start..self.toks[b - 1].end]);
                    }
                    lex::squash_ws(&s.replace("( )", "()"))
                }
                None => lex::squash_ws(&self.src[self.toks[a].start..self.toks[b - 1].end]),
            };
            let name = if out.iter().any(|p| p.name == name) { format!("{name}__{idx}") } else { name };
            out.push(Param { name, ty });
        }
        out
    }

    /// Name token of a declarator in `[a, b)` and whether it is a function pointer.
    fn declarator_name(&self, a: usize, b: usize) -> (Option<usize>, bool) {
        for j in a..b {
            if self.fnptr_declarator(j).is_some() {
                let mut k = j + 2;
                while self.toks[k].kind != TokKind::Ident || matches!(self.text(k), "const" | "volatile" | "restrict" | "__restrict") {
                    k += 1;
                }
                return (Some(k), true);
            }
        }
        let mut candidates = Vec::new();
        let mut depth = 0i32;
        let mut has_base_kw = false;
        let mut j = a;
        while j < b {
            let s = self.text(j);
            match s {
                "[" | "(" => depth += 1,
                "]" | ")" => depth -= 1,
                _ => {}
            }
            if depth == 0 && self.toks[j].kind == TokKind::Ident {
                if matches!(s, "struct" | "union" | "enum") {
                    has_base_kw = true;
                    j += 2;
                    continue;
                }
                if s == "__attribute__"
                    && self.is(j + 1, "(") {
                        j = self.matching(j + 1).unwrap_or(j) + 1;
                        continue;
                    }
                if is_type_word(s) {
                    has_base_kw = true;
                } else if !is_keyword(s) {
                    candidates.push(j);
                }
            }
            j += 1;
        }
        match candidates.len() {
            0 => (None, false),
            1 if !has_base_kw => {
                // a lone typedef name is an unnamed parameter
                let s = self.text(candidates[0]);
                if self.is_type_name(s) || (a..b).count() == 1 {
                    (None, false)
                } else {
                    (Some(candidates[0]), false)
                }
            }
            _ => (candidates.last().copied(), false),
        }
    }

    fn declaration(&mut self, lo: usize, semi: usize) {
        if lo >= semi {
            return;
        }
        let mut start = lo;
        while start < semi && self.text(start) == "__extension__" {
            start += 1;
        }
        if start >= semi {
            return;
        }
        // struct/union bodies anywhere in the declaration
        let mut j = start;
        let mut anon_struct: Option<(bool, usize, usize)> = None;
        while j < semi {
            let s = self.text(j);
            if matches!(s, "struct" | "union") {
                let is_union = s == "union";
                let (tag, brace) = if self.toks.get(j + 1).is_some_and(|t| t.kind == TokKind::Ident) && self.is(j + 2, "{") {
                    (Some(self.text(j + 1).to_string()), j + 2)
                } else if self.is(j + 1, "{") {
                    (None, j + 1)
                } else {
                    j += 1;
                    continue;
                };
                let Some(close) = self.matching(brace) else { return };
                match tag {
                    Some(tag) => {
                        let key = format!("{} {}", if is_union { "union" } else { "struct" }, tag);
                        let def = self.struct_def(is_union, j, brace, close);
                        self.out.types.structs.insert(key, def);
                    }
                    None => anon_struct = Some((is_union, j, brace)),
                }
                j = close + 1;
                continue;
            }
            if s == "{" || s == "(" || s == "[" {
                j = self.matching(j).unwrap_or(j) + 1;
                continue;
            }
            j += 1;
        }

        if self.text(start) == "typedef" {
            for (name, is_fnptr, a, b) in self.typedef_names(start + 1, semi) {
                let text = lex::squash_ws(&self.src[self.toks[start].start..self.toks[semi].end]);
                if is_fnptr {
                    self.fnptr_typedefs.insert(name.clone());
                } else {
                    // simple alias: everything before the name, if no declarator punctuation
                    let alias: Vec<&str> = (start + 1..a).map(|k| self.text(k)).collect();
                    let tail_is_empty = a + 1 == b;
                    if tail_is_empty && alias.iter().all(|s| !matches!(*s, "{" | "}" | "(" | ")" | "[" | "]")) {
                        let alias_text = alias.join(" ");
                        let ptr_free = alias_text.trim_end_matches(['*', ' ']).to_string();
                        if alias_text.ends_with('*') {
                            self.aliases.insert(name.clone(), "void *".into());
                        } else {
                            self.aliases.insert(name.clone(), ptr_free);
                        }
                    } else if let Some((is_union, kw, brace)) = anon_struct {
                        if let Some(close) = self.matching(brace) {
                            if a > close {
                                let def = self.struct_def(is_union, kw, brace, close);
                                self.out.types.structs.entry(name.clone()).or_insert(def);
                                self.aliases.insert(name.clone(), name.clone());
                            }
                        }
                    }
                }
                self.out.types.typedefs.insert(name, text);
            }
            return;
        }

        // global function-pointer variables
        for k in start..semi {
            if let Some(n) = self.fnptr_declarator(k) {
                self.global_fnptrs.insert(n);
            }
            if self.toks[k].kind == TokKind::Ident
                && self.fnptr_typedefs.contains(self.text(k))
                && k + 1 < semi
                && self.toks[k + 1].kind == TokKind::Ident
            {
                self.global_fnptrs.insert(self.text(k + 1).to_string());
            }
        }
    }

    /// Declared names of a typedef in `[a, b)`: (name, is_fnptr, name_tok, part_end).
    fn typedef_names(&self, a: usize, b: usize) -> Vec<(String, bool, usize, usize)> {
        let mut parts = Vec::new();
        let mut depth = 0i32;
        let mut seg = a;
        for j in a..b {
            match self.text(j) {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                "," if depth == 0 => {
                    parts.push((seg, j));
                    seg = j + 1;
                }
                _ => {}
            }
        }
        parts.push((seg, b));
        let mut out = Vec::new();
        for (pa, pb) in parts {
            let mut found = None;
            for j in pa..pb {
                if let Some(n) = self.fnptr_declarator(j) {
                    let k = (j..pb).find(|&k| self.text(k) == n).unwrap_or(j);
                    found = Some((n, true, k));
                    break;
                }
            }
            if found.is_none() {
                let mut depth = 0i32;
                let mut last = None;
                let mut j = pa;
                while j < pb {
                    match self.text(j) {
                        "{" | "(" | "[" => depth += 1,
                        "}" | ")" | "]" => depth -= 1,
                        _ => {}
                    }
                    if depth == 0 && self.toks[j].kind == TokKind::Ident {
                        let s = self.text(j);
                        if s == "__attribute__" {
                            if self.is(j + 1, "(") {
                                j = self.matching(j + 1).unwrap_or(j) + 1;
                                continue;
                            }
                        } else if !is_keyword(s) {
                            last = Some(j);
                        }
                    }
                    j += 1;
                }
                if let Some(k) = last {
                    found = Some((self.text(k).to_string(), false, k));
                }
            }
            if let Some((n, fp, k)) = found {
                out.push((n, fp, k, pb));
            }
        }
        out
    }

    fn struct_def(&self, is_union: bool, kw: usize, brace: usize, close: usize) -> StructDef {
        let mut fields = Vec::new();
        let mut depth = 0i32;
        let mut seg = brace + 1;
        for j in brace + 1..close {
            match self.text(j) {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                ";" if depth == 0 => {
                    self.fields(seg, j, &mut fields);
                    seg = j + 1;
                }
                _ => {}
            }
        }
        StructDef {
            is_union,
            fields,
            size: None,
            text: lex::squash_ws(&self.src[self.toks[kw].start..self.toks[close].end]),
        }
    }

    /// Field declarations `[a, b)` (without the `;`).
    fn fields(&self, a: usize, b: usize, out: &mut Vec<FieldInfo>) {
        if a >= b {
            return;
        }
        if (a..b).any(|k| self.text(k) == "{") {
            // nested anonymous aggregate: record its declared name, layout unknown
            let name = (a..b).rev().find(|&k| self.toks[k].kind == TokKind::Ident).map(|k| self.text(k).to_string());
            out.push(FieldInfo { name: name.unwrap_or_default(), ty: "<nested>".into(), offset: None });
            return;
        }
        let mut parts = Vec::new();
        let mut depth = 0i32;
        let mut seg = a;
        for j in a..b {
            match self.text(j) {
                "(" | "[" => depth += 1,
                ")" | "]" => depth -= 1,
                "," if depth == 0 => {
                    parts.push((seg, j));
                    seg = j + 1;
                }
                _ => {}
            }
        }
        parts.push((seg, b));
        let (first_name, _) = self.declarator_name(parts[0].0, parts[0].1);
        let base_end = first_name.unwrap_or(parts[0].1);
        let base: Vec<&str> = (a..base_end)
            .map(|k| self.text(k))
            .filter(|s| *s != "*" && *s != "(")
            .collect();
        let base = base.join(" ");
        for (pa, pb) in parts {
            let (name_tok, is_fnptr) = self.declarator_name(pa, pb);
            let Some(k) = name_tok else { continue };
            
            let stars = (pa..k).filter(|&j| self.text(j) == "*").count();
            let mut dims = String::new();
            let mut bitfield = false;
            let mut j = k + 1;
            while j < pb {
                if self.text(j) == "[" {
                    let c = self.matching(j).unwrap_or(j);
                    dims.push_str(&lex::squash_ws(&self.src[self.toks[j].start..self.toks[c].end]).replace(' ', ""));
                    j = c + 1;
                    continue;
                }
                if self.text(j) == ":" {
                    bitfield = true;
                }
                j += 1;
            }
            let mut ty = base.clone();
            if is_fnptr {
                ty.push_str(" (*)()");
            } else if stars > 0 {
                ty.push(' ');
                ty.push_str(&"*".repeat(stars));
            }
            ty.push_str(&dims);
            if bitfield {
                ty.push_str(" :bits");
            }
            out.push(FieldInfo { name: self.text(k).to_string(), ty, offset: None });
        }
    }

    /// (size, align) of a type spelled as text, LP64.
    fn layout(&self, ty: &str, depth: usize) -> Option<(u64, u64)> {
        if depth > 16 || ty.contains(":bits") || ty == "<nested>" {
            return None;
        }
        let (elem, count) = match ty.find('[') {
            Some(p) => {
                let mut count = 1u64;
                for dim in ty[p..].split('[').skip(1) {
                    let d = dim.trim_end_matches(']');
                    if d.is_empty() {
                        count = 0;
                    } else {
                        count *= parse_int(d)?;
                    }
                }
                (ty[..p].trim(), count)
            }
            None => (ty.trim(), 1),
        };
        if elem.ends_with('*') || elem.ends_with("(*)()") {
            return Some((8 * count, 8));
        }
        let words: Vec<&str> = elem.split_whitespace().collect();
        if let Some(sz) = scalar_size(&words) {
            let align = sz.min(16);
            return Some((sz * count, align));
        }
        let core: Vec<&str> = words
            .iter()
            .copied()
            .filter(|w| !matches!(*w, "const" | "volatile" | "static" | "extern"))
            .collect();
        let key = core.join(" ");
        if core.first() == Some(&"enum") {
            return Some((4 * count, 4));
        }
        if let Some(def) = self.out.types.structs.get(&key) {
            let (sz, al) = self.struct_layout(def, depth + 1)?.0;
            return Some((sz * count, al));
        }
        if let Some((_, sz)) = STD_TYPEDEFS.iter().find(|(n, _)| *n == key) {
            return Some((sz * count, (*sz).min(8)));
        }
        if let Some(alias) = self.aliases.get(&key) {
            if alias == &key {
                let def = self.out.types.structs.get(&key)?;
                let (sz, al) = self.struct_layout(def, depth + 1)?.0;
                return Some((sz * count, al));
            }
            let (sz, al) = self.layout(alias, depth + 1)?;
            return Some((sz * count, al));
        }
        None
    }

    /// ((size, align), offsets) of a struct, if every field is computable.
    #[allow(clippy::type_complexity)]
    fn struct_layout(&self, def: &StructDef, depth: usize) -> Option<((u64, u64), Vec<Option<u64>>)> {
        let mut off = 0u64;
        let mut max_align = 1u64;
        let mut size = 0u64;
        let mut offsets = Vec::new();
        for f in &def.fields {
            let (sz, al) = self.layout(&f.ty, depth)?;
            max_align = max_align.max(al);
            if def.is_union {
                size = size.max(sz);
                offsets.push(None);
            } else {
                let at = align_up(off, al);
                offsets.push(Some(at));
                off = at + sz;
            }
        }
        let raw = if def.is_union { size } else { off };
        Some(((align_up(raw, max_align), max_align), offsets))
    }

    fn finish_types(&mut self) {
        let keys: Vec<String> = self.out.types.structs.keys().cloned().collect();
        for key in &keys {
            let def = self.out.types.structs[key].clone();
            if let Some(((size, _), offsets)) = self.struct_layout(&def, 0) {
                let entry = self.out.types.structs.get_mut(key).unwrap();
                entry.size = Some(size);
                for (f, o) in entry.fields.iter_mut().zip(offsets) {
                    f.offset = o;
                }
                self.out.types.sizeof_values.insert(key.clone(), size);
            } else {
                // partial offsets: keep the computable prefix
                let mut off = 0u64;
                let mut fields = def.fields.clone();
                if !def.is_union {
                    for f in fields.iter_mut() {
                        match self.layout(&f.ty, 0) {
                            Some((sz, al)) => {
                                let at = align_up(off, al);
                                f.offset = Some(at);
                                off = at + sz;
                            }
                            None => break,
                        }
                    }
                }
                self.out.types.structs.get_mut(key).unwrap().fields = fields;
            }
        }
        let aliases: Vec<String> = self.out.types.typedefs.keys().cloned().collect();
        for name in aliases {
            if let Some((sz, _)) = self.layout(&name, 0) {
                self.out.types.sizeof_values.insert(name, sz);
            }
        }
        // sizeof(type) expressions in the translation unit
        let mut seen = Vec::new();
        for j in 0..self.toks.len() {
            if self.text(j) == "sizeof" && self.is(j + 1, "(") {
                if let Some(c) = self.matching(j + 1) {
                    let words: Vec<&str> = (j + 2..c).map(|k| self.text(k)).collect();
                    if words.is_empty() {
                        continue;
                    }
                    let first_is_type = self.is_type_name(words[0]) || self.aliases.contains_key(words[0]);
                    if !first_is_type {
                        continue;
                    }
                    let text = lex::squash_ws(&words.join(" "));
                    let norm = text.replace(" *", "*").replace('*', " *");
                    seen.push(lex::squash_ws(&norm));
                }
            }
        }
        for ty in seen {
            if let Some((sz, _)) = self.layout(&ty, 0) {
                self.out.types.sizeof_values.insert(ty, sz);
            }
        }
    }
}

fn align_up(v: u64, a: u64) -> u64 {
    if a <= 1 {
        v
    } else {
        v.div_ceil(a) * a
    }
}

fn parse_int(s: &str) -> Option<u64> {
    let s = s.trim().trim_end_matches(['u', 'U', 'l', 'L']);
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()
    } else {
        s.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Extraction {
        parse_translation_unit("t.c", src).unwrap()
    }

    #[test]
    fn single_function_no_calls() {
        let x = parse("int f(void){return 0;}");
        assert_eq!(x.functions.len(), 1);
        let f = &x.functions[0];
        assert_eq!(f.name, "f");
        assert_eq!(f.signature, "int f(void)");
        assert!(f.params.is_empty());
        assert_eq!(f.body, "int f(void){return 0;}");
        assert_eq!(f.line_span, (1, 1));
        assert!(x.callsites.is_empty());
    }

    #[test]
    fn direct_call_with_argument_text() {
        let x = parse("void a(){b(1+x);}");
        assert_eq!(x.callsites.len(), 1);
        let c = &x.callsites[0];
        assert_eq!(c.caller, "a");
        assert_eq!(c.callee_name.as_deref(), Some("b"));
        assert_eq!(c.arg_exprs, ["1+x"]);
        assert!(!c.is_indirect);
        let body = &x.functions[0].body;
        assert_eq!(&body[c.span.0..c.span.1], "b(1+x)");
    }

    #[test]
    fn local_function_pointer_is_indirect() {
        let x = parse("int g(int);\nvoid a(){ int (*fp)(int) = g; fp(); }");
        assert_eq!(x.callsites.len(), 1);
        let c = &x.callsites[0];
        assert!(c.is_indirect);
        assert_eq!(c.callee_name, None);
    }

    #[test]
    fn indirect_forms() {
        let src = "struct ops { void (*run)(int); };\n\
                   typedef void (*cb_t)(void);\n\
                   void a(struct ops *o, cb_t cb, void (**tbl)(void)) {\n\
                     o->run(1);\n  (*cb)();\n  cb();\n  tbl[0]();\n  real(2);\n}\n";
        let x = parse(src);
        let indirect = x.callsites.iter().filter(|c| c.is_indirect).count();
        assert_eq!(indirect, 4, "{:#?}", x.callsites);
        let direct: Vec<_> = x.callsites.iter().filter_map(|c| c.callee_name.clone()).collect();
        assert_eq!(direct, ["real"]);
        assert!(x.types.typedefs.contains_key("cb_t"));
    }

    #[test]
    fn params_and_types() {
        let x = parse("static char *dup(const char *s, size_t n, int buf[10], struct node *head) { return 0; }");
        let f = &x.functions[0];
        let names: Vec<_> = f.param_names().collect();
        assert_eq!(names, ["s", "n", "buf", "head"]);
        assert_eq!(f.params[0].ty, "const char *");
        assert_eq!(f.params[2].ty, "int [10]");
        assert_eq!(f.signature, "static char *dup(const char *s, size_t n, int buf[10], struct node *head)");
    }

    #[test]
    fn unnamed_params() {
        let x = parse("int h(int, size_t) { return 0; }");
        let names: Vec<_> = x.functions[0].param_names().collect();
        assert_eq!(names, ["__arg0", "__arg1"]);
    }

    #[test]
    fn casts_declarations_and_keywords_are_not_calls() {
        let src = "int g(int);\nint f(int x) {\n  int y = (int)(x);\n  if (x) (void)g(x);\n  while (x) x--;\n  return sizeof(int) + g(y);\n}\n";
        let x = parse(src);
        let names: Vec<_> = x.callsites.iter().map(|c| c.callee_name.clone().unwrap()).collect();
        assert_eq!(names, ["g", "g"]);
        assert_eq!(x.callsites[0].line, 4);
        assert_eq!(x.callsites[1].line, 6);
    }

    #[test]
    fn nested_calls_each_recorded_once() {
        let x = parse("void f(){ a(b(1), c(d(2), 3)); }");
        let names: Vec<_> = x.callsites.iter().map(|c| c.callee_name.clone().unwrap()).collect();
        assert_eq!(names, ["a", "b", "c", "d"]);
        assert_eq!(x.callsites[0].arg_exprs, ["b(1)", "c(d(2), 3)"]);
    }

    #[test]
    fn macros_types_and_layout() {
        let src = "#define N 16\n#define SQ(x) ((x)*(x))\n\
                   struct pair { char tag; int value; long big; char name[3]; };\n\
                   typedef struct { int a; char *p; } anon_t;\n\
                   typedef unsigned long word;\n\
                   int f(void) { return SQ(2) + sizeof(struct pair) + sizeof(word); }\n";
        let x = parse(src);
        assert_eq!(x.types.macros["N"], "16");
        assert_eq!(x.types.macros["SQ"], "(x) ((x)*(x))");
        // SQ is a function-like macro, not a call
        assert!(x.callsites.is_empty());
        let pair = &x.types.structs["struct pair"];
        let offs: Vec<_> = pair.fields.iter().map(|f| f.offset).collect();
        assert_eq!(offs, [Some(0), Some(4), Some(8), Some(16)]);
        assert_eq!(pair.size, Some(24));
        assert_eq!(x.types.sizeof_values["struct pair"], 24);
        assert_eq!(x.types.sizeof_values["anon_t"], 16);
        assert_eq!(x.types.sizeof_values["word"], 8);
        assert_eq!(x.types.structs["anon_t"].fields[1].offset, Some(8));
    }

    #[test]
    fn flexible_array_and_bitfields() {
        let src = "struct buf { int len; char data[]; };\nstruct flags { int a : 3; int b; };\n";
        let x = parse(src);
        let b = &x.types.structs["struct buf"];
        assert_eq!(b.fields[1].offset, Some(4));
        assert_eq!(b.size, Some(4));
        let f = &x.types.structs["struct flags"];
        assert_eq!(f.size, None);
        assert!(f.fields.iter().all(|fi| fi.offset.is_none()));
    }

    #[test]
    fn preprocessed_line_markers() {
        let src = "# 1 \"main.c\"\n# 1 \"/usr/include/stdlib.h\" 1 3 4\nextern void free(void *);\nstatic int hdr(void) { return 1; }\n# 3 \"main.c\" 2\n\nvoid run(char *p)\n{\n  free(p);\n}\n";
        let x = parse_translation_unit("main.c", src).unwrap();
        assert_eq!(x.functions.len(), 1);
        let f = &x.functions[0];
        assert_eq!(f.name, "run");
        assert_eq!(f.line_span, (4, 7));
        assert_eq!(x.callsites[0].line, 6);
    }

    #[test]
    fn noreturn_attribute() {
        let x = parse("_Noreturn void die(void) { for(;;); }\nvoid __attribute__((noreturn)) die2(void) { for(;;); }");
        assert!(x.functions[0].lib_attrs.contains("noreturn"));
        assert!(x.functions[1].lib_attrs.contains("noreturn"));
        assert_eq!(x.functions[1].name, "die2");
    }

    #[test]
    fn function_returning_function_pointer() {
        let x = parse("int (*pick(int k))(int) { return 0; }");
        assert_eq!(x.functions[0].name, "pick");
        assert_eq!(x.functions[0].params[0].name, "k");
    }

    #[test]
    fn unbalanced_is_parse_error() {
        assert!(parse_translation_unit("t.c", "void f() { if (x) { }").is_err());
        assert!(parse_translation_unit("t.c", "void f() { } }").is_err());
    }

    #[test]
    fn initializers_are_not_functions() {
        let x = parse("int tbl[] = { 1, 2 };\nstruct s { int a; } v = { 3 };\nvoid f(void) {}\n");
        let names: Vec<_> = x.functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["f"]);
    }

    #[test]
    fn member_call_span_covers_base() {
        let x = parse("void f(struct s *o){ o->inner.run(1); }");
        let c = &x.callsites[0];
        assert!(c.is_indirect);
        assert_eq!(&x.functions[0].body[c.span.0..c.span.1], "o->inner.run(1)");
    }

    #[test]
    fn deterministic() {
        let src = "void a(){b();c();}\nvoid b(){}\n";
        assert_eq!(parse(src), parse(src));
    }
}
