//! Every prompt the pipeline sends for a six-function corpus, compared
//! byte for byte with checked-in snapshots. Set UPDATE_GOLDEN=1 to rewrite
//! the snapshots after an intended template change.

use std::path::{Path, PathBuf};

use nlverify::config::RunConfig;
use nlverify::driver::Analysis;
use nlverify::provider::RuleProvider;
use nlverify::store::Store;
use nlverify_core::prompt::{PromptBundle, TemplateSet};
use nlverify_core::{CacheMode, Mode, PassTag, Property};

use crate::common::{program_from, Capture};

pub const CORPUS: &str = r#"#include <stdlib.h>
#include <string.h>

#define NAME_LEN 16

struct record {
    int id;
    char name[NAME_LEN];
    struct record *next;
};

static int total;

struct record *record_new(int id)
{
    struct record *r = malloc(sizeof *r);
    if (r == NULL)
        return NULL;
    r->id = id;
    r->next = NULL;
    return r;
}

void record_free(struct record *r)
{
    free(r);
}

void record_name(struct record *r, const char *src, size_t n)
{
    memcpy(r->name, src, n);
    r->name[n - 1] = '\0';
}

int scaled(int a, int b)
{
    return a * b + total;
}

int process(struct record *head, int limit)
{
    int seen = 0;
    struct record *cur = head;
    if (head == NULL) {
        total = 0;
        return -1;
    } else {
        total = total + limit;
        seen = scaled(limit, 2);
    }
    while (cur != NULL && seen < limit) {
        struct record *next = cur->next;
        if (cur->id < 0) {
            record_free(cur);
        }
        seen = seen + 1;
        cur = next;
    }
    switch (seen) {
    case 0:
        total = total - 1;
        break;
    default:
        total = scaled(total, seen);
        break;
    }
    return seen;
}

int main(void)
{
    struct record *r = record_new(1);
    record_name(r, "alpha", 6);
    process(r, 3);
    record_free(r);
    return scaled(2, 3);
}
"#;

/// Functions over this many characters are summarized block-wise; only
/// `process` is.
const BLOCK_BUDGET: usize = 400;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn render(prompts: &[(String, PassTag, PromptBundle)]) -> String {
    let mut sorted: Vec<&(String, PassTag, PromptBundle)> = prompts.iter().collect();
    // stable: prompts of one function and pass keep their issue order
    sorted.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let mut out = String::new();
    let mut seq = 0;
    let mut last: Option<(&str, PassTag)> = None;
    for (f, pass, bundle) in sorted {
        seq = if last == Some((f.as_str(), *pass)) { seq + 1 } else { 1 };
        last = Some((f.as_str(), *pass));
        out.push_str(&format!("===== {f} / {pass} #{seq} =====\n"));
        if let Some(system) = &bundle.system {
            out.push_str("----- system -----\n");
            out.push_str(system);
            out.push('\n');
        }
        out.push_str("----- user -----\n");
        out.push_str(&bundle.user);
        out.push('\n');
    }
    out
}

fn first_difference(want: &str, got: &str) -> String {
    for (n, (a, b)) in want.lines().zip(got.lines()).enumerate() {
        if a != b {
            return format!("line {}: expected `{a}`, got `{b}`", n + 1);
        }
    }
    format!("lengths differ: {} vs {} lines", want.lines().count(), got.lines().count())
}

/// All snapshots as (relative file name, content).
pub fn snapshots() -> Result<Vec<(String, String)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prog = program_from(dir.path(), "corpus.c", CORPUS);
    let defined = prog.functions.len();
    if defined != 6 {
        return Err(format!("corpus defines {defined} functions"));
    }
    let templates = TemplateSet::builtin();
    let mut out = Vec::new();
    for mode in CacheMode::ALL {
        for property in Property::ALL {
            let mut cfg = RunConfig::default();
            cfg.cache_mode = mode;
            cfg.block_budget = BLOCK_BUDGET;
            let store = Store::in_memory();
            let provider = Capture::new(RuleProvider);
            Analysis::new(&prog, &store, &provider, &templates, &cfg).run(property, Mode::Compositional).map_err(|e| e.to_string())?;
            out.push((format!("{}/{}.txt", mode.as_str(), property.as_str()), render(&provider.take())));
        }
    }
    for property in Property::ALL {
        let cfg = RunConfig::default();
        let store = Store::in_memory();
        let provider = Capture::new(RuleProvider);
        Analysis::new(&prog, &store, &provider, &templates, &cfg).run(property, Mode::Baseline).map_err(|e| e.to_string())?;
        out.push((format!("baseline/{}.txt", property.as_str()), render(&provider.take())));
    }
    Ok(out)
}

pub fn check() -> Result<String, String> {
    let update = std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1");
    let root = golden_dir();
    let snaps = snapshots()?;
    let mut prompts = 0;
    for (name, text) in &snaps {
        prompts += text.matches("\n===== ").count() + 1;
        let path = root.join(name);
        if update {
            std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
            std::fs::write(&path, text).map_err(|e| e.to_string())?;
            continue;
        }
        let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1 to create)", path.display()))?;
        if &want != text {
            return Err(format!("{name} drifted, {}", first_difference(&want, text)));
        }
    }
    for needed in ["/ external #1", "#2 =====", "----- system -----"] {
        if !snaps.iter().any(|(_, t)| t.contains(needed)) {
            return Err(format!("no snapshot contains `{needed}`"));
        }
    }
    Ok(format!("{} snapshot files, {prompts} prompts{}", snaps.len(), if update { ", rewritten" } else { "" }))
}
