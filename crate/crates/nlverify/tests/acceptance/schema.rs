//! Generated valid summaries of every variant round-trip; hand-written
//! invalid ones are rejected with a diagnostic naming the field.

use nlverify_core::summary::validate;
use nlverify_core::PassTag;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRng, TestRunner};
use serde_json::{json, Map, Value};

const PER_VARIANT: u32 = 100;

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,7}"
}

fn text() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 _*>.-]{0,23}"
}

fn one_of(xs: &'static [&'static str]) -> impl Strategy<Value = String> {
    proptest::sample::select(xs).prop_map(str::to_string)
}

fn obj(pairs: Vec<(&str, Value)>) -> Value {
    Value::Object(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<Map<_, _>>())
}

/// `condition` appears only when `conditional` is true.
fn conditional() -> impl Strategy<Value = Vec<(&'static str, Value)>> {
    prop_oneof![
        Just(vec![("conditional", json!(false))]),
        text().prop_map(|c| vec![("conditional", json!(true)), ("condition", json!(c))]),
    ]
}

fn list<S: Strategy<Value = Value>>(s: S) -> impl Strategy<Value = Value> {
    proptest::collection::vec(s, 0..4).prop_map(Value::Array)
}

fn header(pass: &'static str) -> impl Strategy<Value = (String, String)> {
    (ident(), text()).prop_map(move |(f, d)| (f, format!("{pass}: {d}")))
}

fn alloc() -> BoxedStrategy<Value> {
    let allocation = (one_of(&["heap", "static", "parameter_derived", "escaped_stack"]), text(), proptest::option::of(text()), proptest::collection::vec(ident(), 0..3), any::<bool>(), proptest::option::of(ident()), any::<bool>())
        .prop_map(|(t, src, size, sp, ret, st, nullable)| obj(vec![("type", json!(t)), ("source", json!(src)), ("size_expr", json!(size)), ("size_params", json!(sp)), ("returned", json!(ret)), ("stored_to", json!(st)), ("may_be_null", json!(nullable))]));
    let pair = (ident(), ident(), one_of(&["param_pair", "struct_field", "flexible_array"]), text())
        .prop_map(|(b, s, k, r)| obj(vec![("buffer", json!(b)), ("size", json!(s)), ("kind", json!(k)), ("relationship", json!(r))]));
    let params = proptest::collection::btree_map(ident(), (text(), any::<bool>()), 0..3)
        .prop_map(|m| Value::Object(m.into_iter().map(|(k, (role, used))| (k, json!({"role": role, "used_in_allocation": used}))).collect()));
    (header("alloc"), params, list(allocation), list(pair))
        .prop_map(|((f, d), p, a, b)| obj(vec![("function", json!(f)), ("description", json!(d)), ("parameters", p), ("allocations", a), ("buffer_size_pairs", b)]))
        .boxed()
}

/// A free entry; `nulled_after` belongs to the free pass only.
fn free_item(kinds: &'static [&'static str], with_nulled: bool) -> impl Strategy<Value = Value> {
    (ident(), one_of(kinds), one_of(&["free", "fclose", "destroy_node"]), conditional(), any::<bool>(), proptest::option::of(text())).prop_map(move |(t, k, d, cond, nulled, desc)| {
        let mut v = vec![("target", json!(t)), ("target_kind", json!(k)), ("deallocator", json!(d))];
        if with_nulled {
            v.push(("nulled_after", json!(nulled)));
        }
        v.extend(cond);
        if let Some(desc) = desc {
            v.push(("description", json!(desc)));
        }
        obj(v)
    })
}

fn free() -> BoxedStrategy<Value> {
    let kinds: &'static [&'static str] = &["parameter", "field", "local", "return_value"];
    (header("free"), list(free_item(kinds, true)), list(free_item(kinds, true)))
        .prop_map(|((f, d), fr, rr)| obj(vec![("function", json!(f)), ("description", json!(d)), ("frees", fr), ("resource_releases", rr)]))
        .boxed()
}

fn range() -> impl Strategy<Value = Value> {
    (ident(), "\\[[0-9]{1,3}, [0-9]{3,5}\\]", text()).prop_map(|(t, r, d)| json!({"target": t, "range": r, "description": d}))
}

fn init() -> BoxedStrategy<Value> {
    let item = (ident(), one_of(&["parameter", "field", "return_value"]), one_of(&["memset", "assignment", "calloc"]), proptest::option::of("[1-9][0-9]{0,2}"), conditional())
        .prop_map(|(t, k, i, b, cond)| {
            let mut v = vec![("target", json!(t)), ("target_kind", json!(k)), ("initializer", json!(i)), ("byte_count", json!(b))];
            v.extend(cond);
            obj(v)
        });
    (header("init"), list(item), list(range()), any::<bool>())
        .prop_map(|((f, d), i, r, nr)| obj(vec![("function", json!(f)), ("description", json!(d)), ("inits", i), ("output_ranges", r), ("noreturn", json!(nr))]))
        .boxed()
}

fn contract() -> impl Strategy<Value = Value> {
    let plain = (ident(), one_of(&["disallow_null", "allow_null", "not_freed", "initialized", "non_negative"]), text())
        .prop_map(|(t, k, d)| json!({"target": t, "contract_kind": k, "description": d}));
    let sized = (ident(), text(), ident(), one_of(&["byte_count", "element_count"]), proptest::option::of(text()))
        .prop_map(|(t, d, s, r, c)| {
            let mut v = vec![("target", json!(t)), ("contract_kind", json!("buffer_size")), ("description", json!(d)), ("size_expr", json!(s)), ("relationship", json!(r))];
            if let Some(c) = c {
                v.push(("condition", json!(c)));
            }
            obj(v)
        });
    prop_oneof![3 => plain, 1 => sized]
}

fn memsafe() -> BoxedStrategy<Value> {
    (header("memsafe"), list(contract())).prop_map(|((f, d), c)| obj(vec![("function", json!(f)), ("description", json!(d)), ("contracts", c)])).boxed()
}

fn severity() -> impl Strategy<Value = String> {
    one_of(&["high", "medium", "low"])
}

fn leak() -> BoxedStrategy<Value> {
    let l = (text(), proptest::option::of(ident()), text(), severity()).prop_map(|(a, s, r, sv)| json!({"allocation": a, "stored_to": s, "reason": r, "severity": sv}));
    let sa = (text(), proptest::option::of(text()), any::<bool>(), proptest::option::of(ident()), any::<bool>())
        .prop_map(|(s, z, r, st, n)| json!({"source": s, "size_expr": z, "returned": r, "stored_to": st, "may_be_null": n}));
    (header("leak"), list(l), list(sa), list(free_item(&["parameter", "field"], false)))
        .prop_map(|((f, d), l, a, fr)| obj(vec![("function", json!(f)), ("description", json!(d)), ("leaks", l), ("simplified_allocations", a), ("simplified_frees", fr)]))
        .boxed()
}

fn int() -> BoxedStrategy<Value> {
    let issue = ("line [1-9][0-9]{0,2}", one_of(&["integer_overflow", "division_by_zero", "shift_ub"]), text(), severity())
        .prop_map(|(l, k, d, s)| json!({"location": l, "issue_kind": k, "description": d, "severity": s}));
    (header("int"), list(range()), list(range()), list(issue))
        .prop_map(|((f, d), c, o, i)| obj(vec![("function", json!(f)), ("description", json!(d)), ("constraints", c), ("output_ranges", o), ("issues", i)]))
        .boxed()
}

fn verify() -> BoxedStrategy<Value> {
    let kinds: &'static [&'static str] = &["null_deref", "buffer_overflow", "use_after_free", "double_free", "uninitialized_use", "invalid_free"];
    let issue = ("line [1-9][0-9]{0,2}", one_of(kinds), text(), severity(), proptest::option::of((ident(), one_of(&["disallow_null", "not_freed", "initialized", "buffer_size"]))))
        .prop_map(|(l, k, d, s, callee)| {
            let mut v = vec![("location", json!(l)), ("issue_kind", json!(k)), ("description", json!(d)), ("severity", json!(s))];
            if let Some((c, ck)) = callee {
                v.push(("callee", json!(c)));
                v.push(("contract_kind", json!(ck)));
            }
            obj(v)
        });
    (header("verify"), list(contract()), list(issue))
        .prop_map(|((f, d), c, i)| obj(vec![("function", json!(f)), ("description", json!(d)), ("simplified_contracts", c), ("issues", i)]))
        .boxed()
}

fn external() -> BoxedStrategy<Value> {
    (proptest::option::of(alloc()), proptest::option::of(free()), proptest::option::of(init()), proptest::option::of(memsafe()))
        .prop_map(|(a, f, i, m)| obj(vec![("allocation", json!(a)), ("free", json!(f)), ("init", json!(i)), ("memsafe", json!(m))]))
        .boxed()
}

/// Every non-null leaf of `input` reappears unchanged in `output`.
fn preserved(input: &Value, output: &Value, path: &str) -> Result<(), String> {
    match (input, output) {
        (Value::Null, _) => Ok(()),
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                let p = format!("{path}.{k}");
                match b.get(k) {
                    Some(w) => preserved(v, w, &p)?,
                    None if v.is_null() => {}
                    None => return Err(format!("{p} dropped")),
                }
            }
            Ok(())
        }
        (Value::Array(a), Value::Array(b)) if a.len() == b.len() => a.iter().zip(b).enumerate().try_for_each(|(i, (v, w))| preserved(v, w, &format!("{path}[{i}]"))),
        (a, b) if a == b => Ok(()),
        (a, b) => Err(format!("{path}: {a} became {b}")),
    }
}

fn round_trips(pass: PassTag, strategy: BoxedStrategy<Value>) -> Result<(), String> {
    let config = Config { cases: PER_VARIANT, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config.clone(), TestRng::deterministic_rng(config.rng_algorithm));
    runner
        .run(&strategy, |raw| {
            let rec = validate(pass, &raw).map_err(|e| TestCaseError::fail(format!("{raw}: {e}")))?;
            let out = rec.to_value();
            preserved(&raw, &out, "$").map_err(TestCaseError::fail)?;
            let again = validate(pass, &out).map_err(|e| TestCaseError::fail(format!("re-validate: {e}")))?;
            prop_assert_eq!(&again, &rec);
            prop_assert_eq!(again.to_json(), rec.to_json());
            Ok(())
        })
        .map_err(|e| format!("{pass}: {e}"))
}

/// (pass, record, field path the diagnostic must name)
fn invalid() -> Vec<(PassTag, Value, &'static str)> {
    let big = "x".repeat(70_000);
    vec![
        (PassTag::Alloc, json!({"function": "f", "description": "d"}), "allocations"),
        (PassTag::Alloc, json!({"description": "d", "allocations": []}), "function"),
        (PassTag::Alloc, json!({"function": "f", "allocations": []}), "description"),
        (PassTag::Alloc, json!({"function": "f", "description": "d", "allocations": [{"type": "stack", "source": "malloc", "returned": true, "may_be_null": true}]}), "allocations[0].type"),
        (PassTag::Alloc, json!({"function": "f", "description": "d", "allocations": [{"type": "heap", "returned": true, "may_be_null": true}]}), "allocations[0].source"),
        (PassTag::Alloc, json!({"function": "f", "description": "d", "allocations": [{"type": "heap", "source": "malloc", "returned": "yes", "may_be_null": true}]}), "allocations[0].returned"),
        (PassTag::Alloc, json!({"function": "f", "description": "d", "allocations": [], "buffer_size_pairs": [{"buffer": "b", "size": "n", "kind": "pair"}]}), "buffer_size_pairs[0].kind"),
        (PassTag::Alloc, json!({"function": "f", "description": "d", "allocations": {}}), "allocations"),
        (PassTag::Free, json!({"function": "f", "description": "d", "frees": [{"target": "p", "target_kind": "global", "deallocator": "free"}]}), "frees[0].target_kind"),
        (PassTag::Free, json!({"function": "f", "description": "d", "frees": [{"target": "p", "target_kind": "parameter"}]}), "frees[0].deallocator"),
        (PassTag::Free, json!({"function": "f", "description": "d", "frees": [{"target": "p", "target_kind": "parameter", "deallocator": "free", "condition": "p != 0"}]}), "frees[0].condition"),
        (PassTag::Free, json!({"function": "f", "description": "d", "frees": [], "resource_releases": [{"target_kind": "field", "deallocator": "fclose"}]}), "resource_releases[0].target"),
        (PassTag::Init, json!({"function": "f", "description": "d", "inits": [{"target": "p", "target_kind": "local", "initializer": "memset"}]}), "inits[0].target_kind"),
        (PassTag::Init, json!({"function": "f", "description": "d", "inits": [], "noreturn": "sometimes"}), "noreturn"),
        (PassTag::Init, json!({"function": "f", "description": "d", "inits": [], "output_ranges": [{"target": "r"}]}), "output_ranges[0].range"),
        (PassTag::Memsafe, json!({"function": "f", "description": "d", "contracts": [{"target": "p", "contract_kind": "non_null"}]}), "contracts[0].contract_kind"),
        (PassTag::Memsafe, json!({"function": "f", "description": "d", "contracts": [{"target": "p", "contract_kind": "buffer_size", "relationship": "byte_count"}]}), "contracts[0].size_expr"),
        (PassTag::Memsafe, json!({"function": "f", "description": "d", "contracts": [{"target": "p", "contract_kind": "buffer_size", "size_expr": "n", "relationship": "bits"}]}), "contracts[0].relationship"),
        (PassTag::Memsafe, json!({"function": "f", "description": "d", "contracts": [{"contract_kind": "not_freed"}]}), "contracts[0].target"),
        (PassTag::Leak, json!({"function": "f", "description": "d", "leaks": [{"allocation": "malloc", "reason": "r", "severity": "critical"}]}), "leaks[0].severity"),
        (PassTag::Leak, json!({"function": "f", "description": "d"}), "leaks"),
        (PassTag::Leak, json!({"function": "f", "description": "d", "leaks": [], "simplified_frees": [{"target": "p", "target_kind": "local", "deallocator": "free"}]}), "simplified_frees[0].target_kind"),
        (PassTag::Int, json!({"function": "f", "description": "d", "issues": [{"location": "line 3", "issue_kind": "null_deref", "severity": "high"}]}), "issues[0].issue_kind"),
        (PassTag::Int, json!({"function": "f", "description": "d", "issues": [{"location": "line 3", "issue_kind": "shift_ub"}]}), "issues[0].severity"),
        (PassTag::Verify, json!({"function": "f", "description": "d", "simplified_contracts": []}), "issues"),
        (PassTag::Verify, json!({"function": "f", "description": "d", "simplified_contracts": [], "issues": [{"location": "line 2", "issue_kind": "integer_overflow", "severity": "high"}]}), "issues[0].issue_kind"),
        (PassTag::Verify, json!({"function": "f", "description": "d", "simplified_contracts": [], "issues": [{"location": "line 2", "issue_kind": "double_free", "severity": "high", "callee": "g"}]}), "issues[0].contract_kind"),
        (PassTag::Verify, json!({"function": "f", "description": "d", "issues": []}), "simplified_contracts"),
        (PassTag::External, json!({"allocation": {"allocations": [{"type": "heap", "source": "malloc", "returned": 1, "may_be_null": true}]}}), "allocation.allocations[0].returned"),
        (PassTag::Free, json!({"function": "f", "description": big, "frees": []}), "$"),
    ]
}

pub fn check() -> Result<String, String> {
    let variants: [(PassTag, BoxedStrategy<Value>); 8] = [
        (PassTag::Alloc, alloc()),
        (PassTag::Free, free()),
        (PassTag::Init, init()),
        (PassTag::Memsafe, memsafe()),
        (PassTag::Leak, leak()),
        (PassTag::Int, int()),
        (PassTag::Verify, verify()),
        (PassTag::External, external()),
    ];
    for (pass, s) in variants {
        round_trips(pass, s)?;
    }
    let cases = invalid();
    for (i, (pass, raw, path)) in cases.iter().enumerate() {
        match validate(*pass, raw) {
            Ok(_) => return Err(format!("invalid case {i} ({pass}) accepted")),
            Err(e) => {
                if !e.violations.iter().any(|v| v.starts_with(&format!("{path}: "))) {
                    return Err(format!("invalid case {i} ({pass}): no diagnostic for {path} in {:?}", e.violations));
                }
            }
        }
    }
    Ok(format!("{} valid records over 8 variants, {} invalid rejected", 8 * PER_VARIANT, cases.len()))
}
