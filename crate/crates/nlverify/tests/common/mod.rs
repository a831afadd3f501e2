//! Fixtures and provider wrappers shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use nlverify::config::RunConfig;
use nlverify::driver::{Analysis, VerificationReport};
use nlverify::frontend::{command_for_file, load_program, Program};
use nlverify::provider::{CompletionResult, Provider, ProviderError, RuleProvider};
use nlverify::store::Store;
use nlverify_core::prompt::{PromptBundle, TemplateSet};
use nlverify_core::{Mode, PassTag, Property};

/// Callee frees its argument; the caller frees it again.
pub const DOUBLE_FREE: &str = "\
#include <stdlib.h>

void release(char *p) {
    free(p);
}

int main(void) {
    char *buf = malloc(16);
    release(buf);
    free(buf);
    return 0;
}
";

/// The same program with the callee's free removed.
pub const SINGLE_FREE: &str = "\
#include <stdlib.h>

void release(char *p) {
    (void)p;
}

int main(void) {
    char *buf = malloc(16);
    release(buf);
    free(buf);
    return 0;
}
";

/// Two mutually recursive functions called from main.
pub const TWO_CYCLE: &str = "\
int ping(int n);

int pong(int n) {
    if (n <= 0) return 0;
    return ping(n - 1);
}

int ping(int n) {
    if (n <= 0) return 1;
    return pong(n - 1);
}

int main(void) {
    return ping(4);
}
";

/// Parse `src` as a single translation unit without preprocessing.
pub fn program_from(dir: &Path, name: &str, src: &str) -> Program {
    let p = dir.join(name);
    std::fs::write(&p, src).unwrap();
    let prog = load_program(name, &[command_for_file(&p)], false);
    assert!(prog.skipped.is_empty(), "fixture failed to parse: {:?}", prog.skipped);
    prog
}

pub fn analyze(prog: &Program, store: &Store, provider: &dyn Provider, cfg: &RunConfig, property: Property, mode: Mode) -> VerificationReport {
    let t = TemplateSet::builtin();
    Analysis::new(prog, store, provider, &t, cfg).run(property, mode).unwrap()
}

/// Records the full text of every prompt, labelled by function and pass.
pub struct Capture<P> {
    pub inner: P,
    pub prompts: Mutex<Vec<(String, PassTag, PromptBundle)>>,
}

impl<P: Provider> Capture<P> {
    pub fn new(inner: P) -> Self {
        Capture { inner, prompts: Mutex::new(Vec::new()) }
    }

    pub fn take(&self) -> Vec<(String, PassTag, PromptBundle)> {
        std::mem::take(&mut *self.prompts.lock().unwrap())
    }
}

impl<P: Provider> Provider for Capture<P> {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        self.inner.complete(bundle)
    }

    fn complete_for(&self, function: &str, pass: PassTag, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        self.prompts.lock().unwrap().push((function.to_string(), pass, bundle.clone()));
        self.inner.complete_for(function, pass, bundle)
    }
}

/// Answers like the rule provider, but for the named functions it adds a
/// counter field that changes on every call, so their summaries never settle.
pub struct Restless {
    pub targets: Vec<String>,
    counts: Mutex<HashMap<(String, PassTag), u64>>,
}

impl Restless {
    pub fn new(targets: &[&str]) -> Self {
        Restless { targets: targets.iter().map(|s| s.to_string()).collect(), counts: Mutex::new(HashMap::new()) }
    }
}

impl Provider for Restless {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        RuleProvider.complete(bundle)
    }

    fn complete_for(&self, function: &str, pass: PassTag, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        let mut res = RuleProvider.complete(bundle)?;
        if self.targets.iter().any(|t| t == function) {
            let n = {
                let mut c = self.counts.lock().unwrap();
                let e = c.entry((function.to_string(), pass)).or_default();
                *e += 1;
                *e
            };
            let mut v: serde_json::Value = nlverify_core::json::extract_json(&res.text).expect("rule answers are JSON");
            v["revision"] = serde_json::json!(n);
            res.text = v.to_string();
        }
        Ok(res)
    }
}
