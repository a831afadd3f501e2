//! End-to-end runs of the compositional driver with offline providers.

use nlverify::config::RunConfig;
use nlverify::driver::Analysis;
use nlverify::provider::{Recording, RuleProvider};
use nlverify::store::Store;
use nlverify_core::prompt::TemplateSet;
use nlverify_core::summary::IssueKind;
use nlverify_core::{Mode, PassTag, Property, Verdict};

use crate::common::{analyze, program_from, Restless, DOUBLE_FREE, SINGLE_FREE, TWO_CYCLE};

pub fn propagation() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let buggy = program_from(dir.path(), "double_free.c", DOUBLE_FREE);
    let r = analyze(&buggy, &Store::in_memory(), &RuleProvider, &cfg, Property::ValidMemsafety, Mode::Compositional);
    if r.verdict != Verdict::False {
        return Err(format!("double free judged {}", r.verdict.as_str()));
    }
    let Some(df) = r.issues.iter().find(|i| i.issue.issue_kind == IssueKind::DoubleFree) else {
        return Err(format!("no double_free issue among {:?}", r.issues));
    };
    if df.function != "main" {
        return Err(format!("double free attributed to {}", df.function));
    }
    let fixed = program_from(dir.path(), "single_free.c", SINGLE_FREE);
    let r2 = analyze(&fixed, &Store::in_memory(), &RuleProvider, &cfg, Property::ValidMemsafety, Mode::Compositional);
    if r2.verdict != Verdict::True {
        return Err(format!("without the callee's free the verdict is {} ({:?})", r2.verdict.as_str(), r2.issues));
    }
    Ok(format!("FALSE with double_free at {}, then TRUE", df.issue.location))
}

pub fn boundedness() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prog = program_from(dir.path(), "cycle.c", TWO_CYCLE);
    let templates = TemplateSet::builtin();
    for bound in 1..=4u32 {
        let mut cfg = RunConfig::default();
        cfg.fixpoint_bound = bound;
        let store = Store::in_memory();
        let provider = Recording::new(Restless::new(&["ping", "pong"]));
        let a = Analysis::new(&prog, &store, &provider, &templates, &cfg);
        let rep = a.run_pass(PassTag::Alloc).map_err(|e| e.to_string())?;
        let iters = rep.iterations.get("ping").copied();
        if iters != Some(bound) {
            return Err(format!("bound {bound}: iterations {:?}", rep.iterations));
        }
        let mut unstable = rep.unstable.clone();
        unstable.sort();
        if unstable != ["ping", "pong"] {
            return Err(format!("bound {bound}: unstable {unstable:?}"));
        }
        // each iteration asks once per member
        let asked = provider.trace().iter().filter(|(f, _)| f == "ping" || f == "pong").count();
        if asked != 2 * bound as usize {
            return Err(format!("bound {bound}: {asked} prompts for the cycle"));
        }
    }
    let mut cfg = RunConfig::default();
    cfg.fixpoint_bound = 3;
    let r = analyze(&prog, &Store::in_memory(), &Restless::new(&["ping", "pong"]), &cfg, Property::NoOverflow, Mode::Compositional);
    if r.unstable.len() != 2 {
        return Err(format!("report lists unstable {:?}", r.unstable));
    }
    // the same cycle with a deterministic provider settles early
    let store = Store::in_memory();
    let a = Analysis::new(&prog, &store, &RuleProvider, &templates, &cfg);
    let calm = a.run_pass(PassTag::Alloc).map_err(|e| e.to_string())?;
    if !calm.unstable.is_empty() || calm.iterations.get("ping").copied().unwrap_or(99) >= 3 {
        return Err(format!("deterministic run: {:?}, unstable {:?}", calm.iterations, calm.unstable));
    }
    Ok(format!("bounds 1..=4 each hit exactly; deterministic run settles in {}", calm.iterations["ping"]))
}

pub fn idempotence() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prog = program_from(dir.path(), "double_free.c", DOUBLE_FREE);
    let path = dir.path().join("store.jsonl");
    let cfg = RunConfig::default();
    let mut cold_calls = 0;
    for property in Property::ALL {
        let provider = Recording::new(RuleProvider);
        let store = Store::open(&path).map_err(|e| e.to_string())?;
        let first = analyze(&prog, &store, &provider, &cfg, property, Mode::Compositional);
        cold_calls += provider.calls();
        provider.reset();
        let second = analyze(&prog, &store, &provider, &cfg, property, Mode::Compositional);
        if provider.calls() != 0 || second.provider_calls != 0 {
            return Err(format!("{property}: warm in-process rerun made {} calls", provider.calls()));
        }
        drop(store);
        // a fresh process reading the same file is just as warm
        let reopened = Store::open(&path).map_err(|e| e.to_string())?;
        let third = analyze(&prog, &reopened, &provider, &cfg, property, Mode::Compositional);
        if provider.calls() != 0 {
            return Err(format!("{property}: rerun on reopened store made {} calls", provider.calls()));
        }
        if first.verdict != second.verdict || first.verdict != third.verdict || first.issues != third.issues {
            return Err(format!("{property}: verdict changed across cached runs"));
        }
    }
    Ok(format!("{cold_calls} cold calls, 0 warm"))
}
