//! Typed per-pass summaries, their validation from raw JSON, cache keys and
//! the callee context a pass consumes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::callgraph::CallGraph;
use crate::types::PassTag;

/// Serialized summaries larger than this are rejected.
pub const MAX_SUMMARY_BYTES: usize = 64 * 1024;

fn normalize_tag(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace([' ', '-'], "_")
}

macro_rules! tag_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($var),* }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),*];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),* }
            }

            pub fn parse(s: &str) -> Option<Self> {
                let n = normalize_tag(s);
                Self::ALL.iter().copied().find(|v| v.as_str() == n)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

tag_enum!(AllocType { Heap => "heap", Static => "static", ParameterDerived => "parameter_derived", EscapedStack => "escaped_stack" });
tag_enum!(PairKind { ParamPair => "param_pair", StructField => "struct_field", FlexibleArray => "flexible_array" });
tag_enum!(FreeTargetKind { Parameter => "parameter", Field => "field", Local => "local", ReturnValue => "return_value" });
tag_enum!(InitTargetKind { Parameter => "parameter", Field => "field", ReturnValue => "return_value" });
tag_enum!(SimpleFreeKind { Parameter => "parameter", Field => "field" });
tag_enum!(ContractKind {
    DisallowNull => "disallow_null",
    AllowNull => "allow_null",
    NotFreed => "not_freed",
    Initialized => "initialized",
    BufferSize => "buffer_size",
    NonNegative => "non_negative",
});
tag_enum!(Relationship { ByteCount => "byte_count", ElementCount => "element_count" });
tag_enum!(Severity { High => "high", Medium => "medium", Low => "low" });
tag_enum!(IntIssueKind { IntegerOverflow => "integer_overflow", DivisionByZero => "division_by_zero", ShiftUb => "shift_ub" });
tag_enum!(
    /// Memory-safety kinds reported by the verify pass, integer kinds for
    /// no-overflow, and `memory_leak` for whole-program memcleanup checks.
    IssueKind {
        NullDeref => "null_deref",
        BufferOverflow => "buffer_overflow",
        UseAfterFree => "use_after_free",
        DoubleFree => "double_free",
        UninitializedUse => "uninitialized_use",
        InvalidFree => "invalid_free",
        IntegerOverflow => "integer_overflow",
        DivisionByZero => "division_by_zero",
        ShiftUb => "shift_ub",
        MemoryLeak => "memory_leak",
    }
);

impl IssueKind {
    pub const MEMORY: &'static [IssueKind] = &[
        IssueKind::NullDeref,
        IssueKind::BufferOverflow,
        IssueKind::UseAfterFree,
        IssueKind::DoubleFree,
        IssueKind::UninitializedUse,
        IssueKind::InvalidFree,
    ];
}

impl From<IntIssueKind> for IssueKind {
    fn from(k: IntIssueKind) -> Self {
        match k {
            IntIssueKind::IntegerOverflow => IssueKind::IntegerOverflow,
            IntIssueKind::DivisionByZero => IssueKind::DivisionByZero,
            IntIssueKind::ShiftUb => IssueKind::ShiftUb,
        }
    }
}

type Extra = BTreeMap<String, Value>;

fn no_extra(e: &Extra) -> bool {
    e.is_empty()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamRole {
    pub role: String,
    pub used_in_allocation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    #[serde(rename = "type")]
    pub kind: AllocType,
    pub source: String,
    pub size_expr: Option<String>,
    pub size_params: Vec<String>,
    pub returned: bool,
    pub stored_to: Option<String>,
    pub may_be_null: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferSizePair {
    pub buffer: String,
    pub size: String,
    pub kind: PairKind,
    pub relationship: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocSummary {
    pub function: String,
    pub description: String,
    pub parameters: BTreeMap<String, ParamRole>,
    pub allocations: Vec<Allocation>,
    pub buffer_size_pairs: Vec<BufferSizePair>,
    #[serde(flatten, skip_serializing_if = "no_extra")]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeItem {
    pub target: String,
    pub target_kind: FreeTargetKind,
    pub deallocator: String,
    pub conditional: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub nulled_after: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeSummary {
    pub function: String,
    pub description: String,
    pub frees: Vec<FreeItem>,
    pub resource_releases: Vec<FreeItem>,
    #[serde(flatten, skip_serializing_if = "no_extra")]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitItem {
    pub target: String,
    pub target_kind: InitTargetKind,
    pub initializer: String,
    pub byte_count: Option<String>,
    pub conditional: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeItem {
    pub target: String,
    pub range: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitSummary {
    pub function: String,
    pub description: String,
    pub inits: Vec<InitItem>,
    pub output_ranges: Vec<RangeItem>,
    pub noreturn: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noreturn_condition: Option<String>,
    #[serde(flatten, skip_serializing_if = "no_extra")]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contract {
    pub target: String,
    pub contract_kind: ContractKind,
    pub description: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_expr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relationship: Option<Relationship>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemsafeSummary {
    pub function: String,
    pub description: String,
    pub contracts: Vec<Contract>,
    #[serde(flatten, skip_serializing_if = "no_extra")]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leak {
    pub allocation: String,
    pub stored_to: Option<String>,
    pub reason: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimpleAlloc {
    pub source: String,
    pub size_expr: Option<String>,
    pub returned: bool,
    pub stored_to: Option<String>,
    pub may_be_null: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimpleFree {
    pub target: String,
    pub target_kind: SimpleFreeKind,
    pub deallocator: String,
    pub conditional: bool,
    pub condition: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakSummary {
    pub function: String,
    pub description: String,
    pub leaks: Vec<Leak>,
    pub simplified_allocations: Vec<SimpleAlloc>,
    pub simplified_frees: Vec<SimpleFree>,
    #[serde(flatten, skip_serializing_if = "no_extra")]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntIssue {
    pub location: String,
    pub issue_kind: IntIssueKind,
    pub description: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntSummary {
    pub function: String,
    pub description: String,
    pub constraints: Vec<RangeItem>,
    pub output_ranges: Vec<RangeItem>,
    pub issues: Vec<IntIssue>,
    #[serde(flatten, skip_serializing_if = "no_extra")]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub location: String,
    pub issue_kind: IssueKind,
    pub description: String,
    pub severity: Severity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub callee: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contract_kind: Option<ContractKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationSummary {
    pub function: String,
    pub description: String,
    pub simplified_contracts: Vec<Contract>,
    pub issues: Vec<Issue>,
    #[serde(flatten, skip_serializing_if = "no_extra")]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExternalSummary {
    pub allocation: Option<AllocSummary>,
    pub free: Option<FreeSummary>,
    pub init: Option<InitSummary>,
    pub memsafe: Option<MemsafeSummary>,
    #[serde(flatten, skip_serializing_if = "no_extra")]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
#[allow(clippy::large_enum_variant)]
pub enum SummaryRecord {
    Alloc(AllocSummary),
    Free(FreeSummary),
    Init(InitSummary),
    Memsafe(MemsafeSummary),
    Leak(LeakSummary),
    Int(IntSummary),
    External(ExternalSummary),
    Verify(VerificationSummary),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SummaryKey {
    pub function: String,
    pub pass: PassTag,
    pub input_hash: String,
}

/// Store key for the external summary of a stub.
pub fn external_key(name: &str) -> String {
    format!("ext::{name}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    /// `path: message` entries, e.g. `allocations[0].type: ...`.
    pub violations: Vec<String>,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "schema violations: {}", self.violations.join("; "))
    }
}

impl core::error::Error for SchemaError {}

impl SummaryRecord {
    pub fn pass(&self) -> PassTag {
        match self {
            SummaryRecord::Alloc(_) => PassTag::Alloc,
            SummaryRecord::Free(_) => PassTag::Free,
            SummaryRecord::Init(_) => PassTag::Init,
            SummaryRecord::Memsafe(_) => PassTag::Memsafe,
            SummaryRecord::Leak(_) => PassTag::Leak,
            SummaryRecord::Int(_) => PassTag::Int,
            SummaryRecord::External(_) => PassTag::External,
            SummaryRecord::Verify(_) => PassTag::Verify,
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("summaries serialize")
    }

    /// Compact canonical JSON (object keys sorted).
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_value()).expect("summaries serialize")
    }

    pub fn description(&self) -> &str {
        match self {
            SummaryRecord::Alloc(s) => &s.description,
            SummaryRecord::Free(s) => &s.description,
            SummaryRecord::Init(s) => &s.description,
            SummaryRecord::Memsafe(s) => &s.description,
            SummaryRecord::Leak(s) => &s.description,
            SummaryRecord::Int(s) => &s.description,
            SummaryRecord::External(_) => "",
            SummaryRecord::Verify(s) => &s.description,
        }
    }

    /// The record with every `description` field removed, for change detection.
    pub fn structural(&self) -> Value {
        fn strip(v: &mut Value) {
            match v {
                Value::Object(m) => {
                    m.remove("description");
                    m.values_mut().for_each(strip);
                }
                Value::Array(a) => a.iter_mut().for_each(strip),
                _ => {}
            }
        }
        let mut v = self.to_value();
        strip(&mut v);
        v
    }

    pub fn structurally_eq(&self, other: &SummaryRecord) -> bool {
        self.structural() == other.structural()
    }

    /// Contracts a caller must satisfy: simplified ones from verify, raw from memsafe.
    pub fn contracts(&self) -> &[Contract] {
        match self {
            SummaryRecord::Memsafe(m) => &m.contracts,
            SummaryRecord::Verify(v) => &v.simplified_contracts,
            SummaryRecord::External(e) => e.memsafe.as_ref().map_or(&[], |m| &m.contracts),
            _ => &[],
        }
    }
}

struct V {
    errors: Vec<String>,
    warnings: Vec<String>,
    /// Nested external records may omit their header fields.
    lenient_header: bool,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl V {
    fn err(&mut self, path: &str, msg: &str) {
        self.errors.push(format!("{}: {msg}", if path.is_empty() { "$" } else { path }));
    }

    fn obj<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Map<String, Value>> {
        match v {
            Value::Object(m) => Some(m),
            _ => {
                self.err(path, "expected an object");
                None
            }
        }
    }

    fn req_str(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> String {
        let p = join(path, key);
        match m.get(key) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => {
                self.err(&p, "missing required field");
                String::new()
            }
            Some(_) => {
                self.err(&p, "expected a string");
                String::new()
            }
        }
    }

    /// Free text that may be absent; numbers are accepted as their text.
    fn text(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> String {
        self.opt_str(m, key, path).unwrap_or_default()
    }

    fn header(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> String {
        if self.lenient_header {
            self.text(m, key, path)
        } else {
            self.req_str(m, key, path)
        }
    }

    fn opt_str(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> Option<String> {
        match m.get(key) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s.trim().is_empty() => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Number(n)) => Some(n.to_string()),
            Some(_) => {
                self.err(&join(path, key), "expected a string or null");
                None
            }
        }
    }

    fn req_bool(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> bool {
        match m.get(key) {
            Some(Value::Bool(b)) => *b,
            None | Some(Value::Null) => {
                self.err(&join(path, key), "missing required field");
                false
            }
            Some(_) => {
                self.err(&join(path, key), "expected a boolean");
                false
            }
        }
    }

    fn opt_bool(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> bool {
        match m.get(key) {
            Some(Value::Bool(b)) => *b,
            None | Some(Value::Null) => false,
            Some(_) => {
                self.err(&join(path, key), "expected a boolean");
                false
            }
        }
    }

    fn tag<T>(&mut self, m: &Map<String, Value>, key: &str, path: &str, parse: fn(&str) -> Option<T>, allowed: &str) -> Option<T> {
        let p = join(path, key);
        match m.get(key) {
            Some(Value::String(s)) => {
                let t = parse(s);
                if t.is_none() {
                    self.err(&p, &format!("`{s}` is not one of {allowed}"));
                }
                t
            }
            None | Some(Value::Null) => {
                self.err(&p, "missing required field");
                None
            }
            Some(_) => {
                self.err(&p, "expected a string");
                None
            }
        }
    }

    fn list<'v>(&mut self, m: &'v Map<String, Value>, key: &str, path: &str, required: bool) -> Vec<(String, &'v Value)> {
        let p = join(path, key);
        match m.get(key) {
            Some(Value::Array(a)) => a.iter().enumerate().map(|(i, v)| (format!("{p}[{i}]"), v)).collect(),
            None | Some(Value::Null) => {
                if required {
                    self.err(&p, "missing required field");
                }
                Vec::new()
            }
            Some(_) => {
                self.err(&p, "expected an array");
                Vec::new()
            }
        }
    }

    fn str_list(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (p, v) in self.list(m, key, path, false) {
            match v {
                Value::String(s) => out.push(s.clone()),
                _ => self.err(&p, "expected a string"),
            }
        }
        out
    }

    fn extra(&self, m: &Map<String, Value>, known: &[&str]) -> Extra {
        m.iter()
            .filter(|(k, _)| !known.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// A condition implies `conditional: true`.
    fn condition(&mut self, m: &Map<String, Value>, path: &str, conditional: bool) -> Option<String> {
        let c = self.opt_str(m, "condition", path);
        if c.is_some() && !conditional {
            self.err(&join(path, "condition"), "condition present but `conditional` is not true");
        }
        c
    }

    fn alloc(&mut self, v: &Value, path: &str) -> Option<AllocSummary> {
        let m = self.obj(v, path)?;
        let function = self.header(m, "function", path);
        let description = self.header(m, "description", path);
        let mut parameters = BTreeMap::new();
        match m.get("parameters") {
            None | Some(Value::Null) => {}
            Some(Value::Object(ps)) => {
                for (name, pv) in ps {
                    let pp = join(&join(path, "parameters"), name);
                    if let Some(pm) = self.obj(pv, &pp) {
                        let role = self.text(pm, "role", &pp);
                        let used_in_allocation = self.opt_bool(pm, "used_in_allocation", &pp);
                        parameters.insert(name.clone(), ParamRole { role, used_in_allocation });
                    }
                }
            }
            Some(_) => self.err(&join(path, "parameters"), "expected an object"),
        }
        let mut allocations = Vec::new();
        for (p, item) in self.list(m, "allocations", path, true) {
            let Some(im) = self.obj(item, &p) else { continue };
            let kind = self.tag(im, "type", &p, AllocType::parse, "heap|static|parameter_derived|escaped_stack");
            let source = self.req_str(im, "source", &p);
            let size_expr = self.opt_str(im, "size_expr", &p);
            let size_params = self.str_list(im, "size_params", &p);
            let returned = self.req_bool(im, "returned", &p);
            let stored_to = self.opt_str(im, "stored_to", &p);
            let may_be_null = self.req_bool(im, "may_be_null", &p);
            if let Some(kind) = kind {
                allocations.push(Allocation { kind, source, size_expr, size_params, returned, stored_to, may_be_null });
            }
        }
        let mut buffer_size_pairs = Vec::new();
        for (p, item) in self.list(m, "buffer_size_pairs", path, false) {
            let Some(im) = self.obj(item, &p) else { continue };
            let buffer = self.req_str(im, "buffer", &p);
            let size = self.req_str(im, "size", &p);
            let kind = self.tag(im, "kind", &p, PairKind::parse, "param_pair|struct_field|flexible_array");
            let relationship = self.text(im, "relationship", &p);
            if let Some(kind) = kind {
                buffer_size_pairs.push(BufferSizePair { buffer, size, kind, relationship });
            }
        }
        let extra = self.extra(m, &["function", "description", "parameters", "allocations", "buffer_size_pairs"]);
        Some(AllocSummary { function, description, parameters, allocations, buffer_size_pairs, extra })
    }

    fn free_item(&mut self, im: &Map<String, Value>, p: &str) -> Option<FreeItem> {
        let target = self.req_str(im, "target", p);
        let target_kind = self.tag(im, "target_kind", p, FreeTargetKind::parse, "parameter|field|local|return_value");
        let deallocator = self.req_str(im, "deallocator", p);
        let conditional = self.opt_bool(im, "conditional", p);
        let condition = self.condition(im, p, conditional);
        let nulled_after = self.opt_bool(im, "nulled_after", p);
        let description = self.opt_str(im, "description", p);
        Some(FreeItem { target, target_kind: target_kind?, deallocator, conditional, condition, nulled_after, description })
    }

    fn free(&mut self, v: &Value, path: &str) -> Option<FreeSummary> {
        let m = self.obj(v, path)?;
        let function = self.header(m, "function", path);
        let description = self.header(m, "description", path);
        let mut frees = Vec::new();
        for (p, item) in self.list(m, "frees", path, true) {
            if let Some(im) = self.obj(item, &p) {
                frees.extend(self.free_item(im, &p));
            }
        }
        let mut resource_releases = Vec::new();
        for (p, item) in self.list(m, "resource_releases", path, false) {
            if let Some(im) = self.obj(item, &p) {
                resource_releases.extend(self.free_item(im, &p));
            }
        }
        let extra = self.extra(m, &["function", "description", "frees", "resource_releases"]);
        Some(FreeSummary { function, description, frees, resource_releases, extra })
    }

    fn ranges(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> Vec<RangeItem> {
        let mut out = Vec::new();
        for (p, item) in self.list(m, key, path, false) {
            let Some(im) = self.obj(item, &p) else { continue };
            let target = self.req_str(im, "target", &p);
            let range = self.req_str(im, "range", &p);
            let description = self.text(im, "description", &p);
            out.push(RangeItem { target, range, description });
        }
        out
    }

    fn init(&mut self, v: &Value, path: &str) -> Option<InitSummary> {
        let m = self.obj(v, path)?;
        let function = self.header(m, "function", path);
        let description = self.header(m, "description", path);
        let mut inits = Vec::new();
        for (p, item) in self.list(m, "inits", path, true) {
            let Some(im) = self.obj(item, &p) else { continue };
            let target = self.req_str(im, "target", &p);
            let target_kind = self.tag(im, "target_kind", &p, InitTargetKind::parse, "parameter|field|return_value");
            let initializer = self.req_str(im, "initializer", &p);
            let byte_count = self.opt_str(im, "byte_count", &p);
            let conditional = self.opt_bool(im, "conditional", &p);
            let condition = self.condition(im, &p, conditional);
            if let Some(target_kind) = target_kind {
                inits.push(InitItem { target, target_kind, initializer, byte_count, conditional, condition });
            }
        }
        let output_ranges = self.ranges(m, "output_ranges", path);
        let noreturn = self.opt_bool(m, "noreturn", path);
        let noreturn_condition = self.opt_str(m, "noreturn_condition", path);
        let extra = self.extra(m, &["function", "description", "inits", "output_ranges", "noreturn", "noreturn_condition"]);
        Some(InitSummary { function, description, inits, output_ranges, noreturn, noreturn_condition, extra })
    }

    /// `drop_unknown`: unknown contract kinds are logged and skipped instead of rejected.
    fn contract(&mut self, im: &Map<String, Value>, p: &str, drop_unknown: bool) -> Option<Contract> {
        let target = self.req_str(im, "target", p);
        let kind = if drop_unknown {
            match im.get("contract_kind").and_then(Value::as_str).map(ContractKind::parse) {
                Some(Some(k)) => Some(k),
                _ => {
                    self.warnings.push(format!("{p}.contract_kind: unsupported kind dropped"));
                    return None;
                }
            }
        } else {
            self.tag(im, "contract_kind", p, ContractKind::parse, "disallow_null|allow_null|not_freed|initialized|buffer_size|non_negative")
        }?;
        let description = self.text(im, "description", p);
        let mut size_expr = self.opt_str(im, "size_expr", p);
        let rel_raw = self.opt_str(im, "relationship", p);
        let mut relationship = None;
        let condition = self.opt_str(im, "condition", p);
        if kind == ContractKind::BufferSize {
            if size_expr.is_none() {
                self.err(&join(p, "size_expr"), "required for buffer_size contracts");
            }
            match rel_raw.as_deref().map(|r| (r, Relationship::parse(r))) {
                Some((_, Some(r))) => relationship = Some(r),
                Some((r, None)) => self.err(&join(p, "relationship"), &format!("`{r}` is not one of byte_count|element_count")),
                None => self.err(&join(p, "relationship"), "required for buffer_size contracts"),
            }
        } else if size_expr.is_some() || rel_raw.is_some() {
            self.warnings.push(format!("{p}: size_expr/relationship ignored for {kind}"));
            size_expr = None;
        }
        Some(Contract { target, contract_kind: kind, description, size_expr, relationship, condition })
    }

    fn memsafe(&mut self, v: &Value, path: &str, drop_unknown: bool) -> Option<MemsafeSummary> {
        let m = self.obj(v, path)?;
        let function = self.header(m, "function", path);
        let description = self.header(m, "description", path);
        let mut contracts = Vec::new();
        for (p, item) in self.list(m, "contracts", path, true) {
            if let Some(im) = self.obj(item, &p) {
                contracts.extend(self.contract(im, &p, drop_unknown));
            }
        }
        let extra = self.extra(m, &["function", "description", "contracts"]);
        Some(MemsafeSummary { function, description, contracts, extra })
    }

    fn leak(&mut self, v: &Value, path: &str) -> Option<LeakSummary> {
        let m = self.obj(v, path)?;
        let function = self.header(m, "function", path);
        let description = self.header(m, "description", path);
        let mut leaks = Vec::new();
        for (p, item) in self.list(m, "leaks", path, true) {
            let Some(im) = self.obj(item, &p) else { continue };
            let allocation = self.req_str(im, "allocation", &p);
            let stored_to = self.opt_str(im, "stored_to", &p);
            let reason = self.req_str(im, "reason", &p);
            if let Some(severity) = self.tag(im, "severity", &p, Severity::parse, "high|medium|low") {
                leaks.push(Leak { allocation, stored_to, reason, severity });
            }
        }
        let mut simplified_allocations = Vec::new();
        for (p, item) in self.list(m, "simplified_allocations", path, false) {
            let Some(im) = self.obj(item, &p) else { continue };
            let source = self.req_str(im, "source", &p);
            let size_expr = self.opt_str(im, "size_expr", &p);
            let returned = self.opt_bool(im, "returned", &p);
            let stored_to = self.opt_str(im, "stored_to", &p);
            let may_be_null = self.opt_bool(im, "may_be_null", &p);
            simplified_allocations.push(SimpleAlloc { source, size_expr, returned, stored_to, may_be_null });
        }
        let mut simplified_frees = Vec::new();
        for (p, item) in self.list(m, "simplified_frees", path, false) {
            let Some(im) = self.obj(item, &p) else { continue };
            let target = self.req_str(im, "target", &p);
            let kind = self.tag(im, "target_kind", &p, SimpleFreeKind::parse, "parameter|field");
            let deallocator = self.req_str(im, "deallocator", &p);
            let conditional = self.opt_bool(im, "conditional", &p);
            let condition = self.condition(im, &p, conditional);
            let description = self.opt_str(im, "description", &p);
            if let Some(target_kind) = kind {
                simplified_frees.push(SimpleFree { target, target_kind, deallocator, conditional, condition, description });
            }
        }
        let extra = self.extra(m, &["function", "description", "leaks", "simplified_allocations", "simplified_frees"]);
        Some(LeakSummary { function, description, leaks, simplified_allocations, simplified_frees, extra })
    }

    fn int(&mut self, v: &Value, path: &str) -> Option<IntSummary> {
        let m = self.obj(v, path)?;
        let function = self.header(m, "function", path);
        let description = self.header(m, "description", path);
        let constraints = self.ranges(m, "constraints", path);
        let output_ranges = self.ranges(m, "output_ranges", path);
        let mut issues = Vec::new();
        for (p, item) in self.list(m, "issues", path, false) {
            let Some(im) = self.obj(item, &p) else { continue };
            let location = self.req_str(im, "location", &p);
            let kind = self.tag(im, "issue_kind", &p, IntIssueKind::parse, "integer_overflow|division_by_zero|shift_ub");
            let description = self.text(im, "description", &p);
            let severity = self.tag(im, "severity", &p, Severity::parse, "high|medium|low");
            if let (Some(issue_kind), Some(severity)) = (kind, severity) {
                issues.push(IntIssue { location, issue_kind, description, severity });
            }
        }
        let extra = self.extra(m, &["function", "description", "constraints", "output_ranges", "issues"]);
        Some(IntSummary { function, description, constraints, output_ranges, issues, extra })
    }

    fn issue(&mut self, im: &Map<String, Value>, p: &str, kinds: &[IssueKind]) -> Option<Issue> {
        let location = match im.get("location") {
            Some(Value::Number(n)) => format!("line {n}"),
            _ => self.req_str(im, "location", p),
        };
        let allowed: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
        let kind = match im.get("issue_kind") {
            Some(Value::String(s)) => match IssueKind::parse(s).filter(|k| kinds.contains(k)) {
                Some(k) => Some(k),
                None => {
                    self.err(&join(p, "issue_kind"), &format!("`{s}` is not one of {}", allowed.join("|")));
                    None
                }
            },
            None | Some(Value::Null) => {
                self.err(&join(p, "issue_kind"), "missing required field");
                None
            }
            Some(_) => {
                self.err(&join(p, "issue_kind"), "expected a string");
                None
            }
        };
        let description = self.text(im, "description", p);
        let severity = self.tag(im, "severity", p, Severity::parse, "high|medium|low");
        let callee = self.opt_str(im, "callee", p);
        let contract_kind = match self.opt_str(im, "contract_kind", p) {
            Some(s) => match ContractKind::parse(&s) {
                Some(k) => Some(k),
                None => {
                    self.err(&join(p, "contract_kind"), &format!("`{s}` is not a contract kind"));
                    None
                }
            },
            None => None,
        };
        if callee.is_some() && contract_kind.is_none() && !self.errors.iter().any(|e| e.starts_with(&join(p, "contract_kind"))) {
            self.err(&join(p, "contract_kind"), "required when `callee` is present");
        }
        Some(Issue { location, issue_kind: kind?, description, severity: severity?, callee, contract_kind })
    }

    fn verify(&mut self, v: &Value, path: &str, kinds: &[IssueKind]) -> Option<VerificationSummary> {
        let m = self.obj(v, path)?;
        let function = self.header(m, "function", path);
        let description = self.header(m, "description", path);
        let mut simplified_contracts = Vec::new();
        let contracts_required = !self.lenient_header;
        for (p, item) in self.list(m, "simplified_contracts", path, contracts_required) {
            if let Some(im) = self.obj(item, &p) {
                simplified_contracts.extend(self.contract(im, &p, false));
            }
        }
        let mut issues = Vec::new();
        for (p, item) in self.list(m, "issues", path, true) {
            if let Some(im) = self.obj(item, &p) {
                issues.extend(self.issue(im, &p, kinds));
            }
        }
        let extra = self.extra(m, &["function", "description", "simplified_contracts", "issues"]);
        Some(VerificationSummary { function, description, simplified_contracts, issues, extra })
    }

    fn external(&mut self, v: &Value) -> Option<ExternalSummary> {
        let m = self.obj(v, "")?;
        self.lenient_header = true;
        let sub = |key: &str| m.get(key).filter(|x| !x.is_null()).cloned();
        let (a, f, i, s) = (sub("allocation"), sub("free"), sub("init"), sub("memsafe"));
        let allocation = a.and_then(|x| self.alloc(&x, "allocation"));
        let free = f.and_then(|x| self.free(&x, "free"));
        let init = i.and_then(|x| self.init(&x, "init"));
        let memsafe = s.and_then(|x| self.memsafe(&x, "memsafe", true));
        let extra = self.extra(m, &["allocation", "free", "init", "memsafe"]);
        Some(ExternalSummary { allocation, free, init, memsafe, extra })
    }
}

fn run(raw: &Value, f: impl FnOnce(&mut V) -> Option<SummaryRecord>) -> Result<(SummaryRecord, Vec<String>), SchemaError> {
    let size = serde_json::to_string(raw).map(|s| s.len()).unwrap_or(usize::MAX);
    if size > MAX_SUMMARY_BYTES {
        return Err(SchemaError {
            violations: alloc::vec![format!("$: summary is {size} bytes, over the {MAX_SUMMARY_BYTES}-byte limit")],
        });
    }
    let mut v = V { errors: Vec::new(), warnings: Vec::new(), lenient_header: false };
    let rec = f(&mut v);
    match rec {
        Some(r) if v.errors.is_empty() => Ok((r, v.warnings)),
        _ => {
            if v.errors.is_empty() {
                v.errors.push("$: invalid summary".into());
            }
            Err(SchemaError { violations: v.errors })
        }
    }
}

/// Validate a raw JSON summary for `pass`, returning the typed record and
/// any semantic warnings.
pub fn validate_with_warnings(pass: PassTag, raw: &Value) -> Result<(SummaryRecord, Vec<String>), SchemaError> {
    run(raw, |v| match pass {
        PassTag::Alloc => v.alloc(raw, "").map(SummaryRecord::Alloc),
        PassTag::Free => v.free(raw, "").map(SummaryRecord::Free),
        PassTag::Init => v.init(raw, "").map(SummaryRecord::Init),
        PassTag::Memsafe => v.memsafe(raw, "", false).map(SummaryRecord::Memsafe),
        PassTag::Leak => v.leak(raw, "").map(SummaryRecord::Leak),
        PassTag::Int => v.int(raw, "").map(SummaryRecord::Int),
        PassTag::External => v.external(raw).map(SummaryRecord::External),
        PassTag::Verify => v.verify(raw, "", IssueKind::MEMORY).map(SummaryRecord::Verify),
    })
}

pub fn validate(pass: PassTag, raw: &Value) -> Result<SummaryRecord, SchemaError> {
    let (rec, warnings) = validate_with_warnings(pass, raw)?;
    for w in warnings {
        log::warn!("{pass} summary: {w}");
    }
    Ok(rec)
}

/// Validate a whole-program response whose issues may use `kinds`.
pub fn validate_program_issues(raw: &Value, kinds: &[IssueKind]) -> Result<VerificationSummary, SchemaError> {
    let (rec, _) = run(raw, |v| {
        v.lenient_header = true;
        v.verify(raw, "", kinds).map(SummaryRecord::Verify)
    })?;
    match rec {
        SummaryRecord::Verify(s) => Ok(s),
        _ => unreachable!(),
    }
}

/// Warnings that need the function's parameter list.
pub fn semantic_warnings(rec: &SummaryRecord, params: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    match rec {
        SummaryRecord::Alloc(a) => {
            for (i, al) in a.allocations.iter().enumerate() {
                for sp in &al.size_params {
                    if !params.iter().any(|p| p == sp) {
                        out.push(format!("allocations[{i}].size_params: `{sp}` is not a parameter"));
                    }
                }
            }
        }
        SummaryRecord::Memsafe(MemsafeSummary { contracts, .. }) | SummaryRecord::Verify(VerificationSummary { simplified_contracts: contracts, .. }) => {
            for (i, c) in contracts.iter().enumerate() {
                if !params.iter().any(|p| crate::lex::contains_word(&c.target, p)) {
                    out.push(format!("contracts[{i}].target: `{}` does not mention a parameter", c.target));
                }
            }
        }
        _ => {}
    }
    out
}

/// SHA-256 over length-prefixed parts, hex encoded.
pub fn hash_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Input hash of a summary: pass, function key, body, template version and
/// the canonical JSON of every consumed summary.
pub fn input_hash(pass: PassTag, function: &str, body: &str, template_version: &str, consumed: &[(String, PassTag, Option<SummaryRecord>)]) -> String {
    let mut parts: Vec<Vec<u8>> = alloc::vec![
        pass.as_str().as_bytes().to_vec(),
        function.as_bytes().to_vec(),
        body.as_bytes().to_vec(),
        template_version.as_bytes().to_vec(),
    ];
    for (who, p, rec) in consumed {
        parts.push(who.as_bytes().to_vec());
        parts.push(p.as_str().as_bytes().to_vec());
        parts.push(rec.as_ref().map_or_else(|| b"null".to_vec(), |r| r.to_json().into_bytes()));
    }
    hash_parts(parts.iter().map(Vec::as_slice))
}

/// Read access to the latest stored summaries.
pub trait SummarySource {
    fn latest(&self, function: &str, pass: PassTag) -> Option<SummaryRecord>;
}

impl SummarySource for BTreeMap<(String, PassTag), SummaryRecord> {
    fn latest(&self, function: &str, pass: PassTag) -> Option<SummaryRecord> {
        self.get(&(function.to_string(), pass)).cloned()
    }
}

/// Summaries of one direct callee consumed by a pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CalleeEntry {
    pub key: String,
    pub name: String,
    pub signature: String,
    pub is_external: bool,
    /// `None` marks a summary not produced yet (inside a recursive component).
    pub summaries: Vec<(PassTag, Option<SummaryRecord>)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalleeContext {
    pub entries: Vec<CalleeEntry>,
}

impl CalleeContext {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Flattened (callee key, pass, record) triples for hashing.
    pub fn consumed(&self) -> Vec<(String, PassTag, Option<SummaryRecord>)> {
        self.entries
            .iter()
            .flat_map(|e| e.summaries.iter().map(move |(p, r)| (e.key.clone(), *p, r.clone())))
            .collect()
    }

    pub fn get(&self, key: &str) -> Option<&CalleeEntry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

/// Callee passes a pass reads: the first is required (rendered as missing
/// when absent), the rest are included when present.
pub fn consumed_passes(pass: PassTag) -> &'static [PassTag] {
    match pass {
        PassTag::Alloc => &[PassTag::Alloc],
        PassTag::Free => &[PassTag::Free],
        PassTag::Init => &[PassTag::Init],
        PassTag::Memsafe => &[PassTag::Memsafe],
        PassTag::Leak => &[PassTag::Alloc, PassTag::Free, PassTag::Leak],
        PassTag::Int => &[PassTag::Int],
        PassTag::External => &[],
        PassTag::Verify => &[PassTag::Verify, PassTag::Alloc, PassTag::Free, PassTag::Init, PassTag::Leak, PassTag::Int],
    }
}

/// The function's own earlier-pass summaries a pass reads.
pub fn own_passes(pass: PassTag) -> &'static [PassTag] {
    match pass {
        PassTag::Leak => &[PassTag::Alloc, PassTag::Free],
        PassTag::Verify => &[PassTag::Memsafe, PassTag::Alloc, PassTag::Free],
        _ => &[],
    }
}

/// Project an external summary onto the record of one pass.
pub fn project_external(ext: &ExternalSummary, pass: PassTag, name: &str) -> Option<SummaryRecord> {
    let fill = |f: &str| if f.is_empty() { name.to_string() } else { f.to_string() };
    match pass {
        PassTag::Alloc => ext.allocation.clone().map(|mut s| {
            s.function = fill(&s.function);
            SummaryRecord::Alloc(s)
        }),
        PassTag::Free => ext.free.clone().map(|mut s| {
            s.function = fill(&s.function);
            SummaryRecord::Free(s)
        }),
        PassTag::Init => ext.init.clone().map(|mut s| {
            s.function = fill(&s.function);
            SummaryRecord::Init(s)
        }),
        PassTag::Memsafe | PassTag::Verify => ext.memsafe.clone().map(|mut s| {
            s.function = fill(&s.function);
            SummaryRecord::Memsafe(s)
        }),
        _ => None,
    }
}

/// Latest summary of `key` for `pass`, falling back to the external summary
/// for stubs. For the verify pass a missing verify record falls back to the
/// callee's memsafe contracts.
pub fn lookup_for(source: &dyn SummarySource, graph: &CallGraph, key: &str, pass: PassTag) -> Option<SummaryRecord> {
    if let Some(r) = source.latest(key, pass) {
        return Some(r);
    }
    if graph.is_stub(key) {
        if let Some(SummaryRecord::External(ext)) = source.latest(&external_key(key), PassTag::External) {
            return project_external(&ext, pass, key);
        }
        return None;
    }
    if pass == PassTag::Verify {
        return source.latest(key, PassTag::Memsafe);
    }
    None
}

pub fn callee_context(source: &dyn SummarySource, fn_key: &str, graph: &CallGraph, pass: PassTag) -> CalleeContext {
    let mut entries = Vec::new();
    for callee in graph.callees(fn_key) {
        let Some(rec) = graph.get(callee) else { continue };
        let wanted = consumed_passes(pass);
        let mut summaries = Vec::new();
        for (i, p) in wanted.iter().enumerate() {
            let found = lookup_for(source, graph, callee, *p);
            if i == 0 || found.is_some() {
                summaries.push((*p, found));
            }
        }
        entries.push(CalleeEntry {
            key: callee.to_string(),
            name: rec.name.clone(),
            signature: rec.signature.clone(),
            is_external: rec.is_external,
            summaries,
        });
    }
    CalleeContext { entries }
}
