//! Benchmark task loading, categorization and parallel runs.

mod common;

use std::path::Path;

use nlverify::config::RunConfig;
use nlverify::harness::{load_tasks, run_tasks, BenchSetup, Categories, Category};
use nlverify::provider::{Recording, RuleProvider};
use nlverify_core::libattrs::LibAttrs;
use nlverify_core::prompt::TemplateSet;
use nlverify_core::score::OutcomeClass;
use nlverify_core::{Mode, Property, Verdict};

fn write(root: &Path, rel: &str, text: &str) {
    let p = root.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, text).unwrap();
}

fn task(root: &Path, id: &str, src: &str, props: &[(&str, bool)]) {
    let file = id.rsplit('/').next().unwrap();
    write(root, &format!("{id}.c"), src);
    let mut yml = format!("format_version: '2.0'\ninput_files: '{file}.c'\nproperties:\n");
    for (p, holds) in props {
        yml.push_str(&format!("  - property_file: ../properties/{p}.prp\n    expected_verdict: {holds}\n"));
    }
    write(root, &format!("{id}.yml"), &yml);
}

const CLEAN: &str = "int main(void) { return 0; }\n";

#[test]
fn categories_follow_directory_names() {
    let c = Categories::builtin();
    let cases = [
        ("Juliet_Test/CWE415_Double_Free__malloc_01.yml", Category::Juliet),
        ("juliet-cwe/x.yml", Category::Juliet),
        ("list-simple/sll2n_append.yml", Category::LinkedList),
        ("forester-heap/dll-01.yml", Category::LinkedList),
        ("array-examples/sorting.yml", Category::Array),
        ("ARRAY-EXAMPLES/upper.yml", Category::Array),
        ("ldv-memsafety/x.yml", Category::DataStructure),
        ("ntdrivers-simplified/cdaudio.yml", Category::ControlFlow),
        ("recursive/fib.yml", Category::Other),
        ("x/array-examples/deep/y.yml", Category::Other),
    ];
    for (path, want) in cases {
        assert_eq!(c.classify(Path::new(path)), want, "{path}");
    }

    let custom = Categories::parse("[[category]]\nname = \"array\"\npatterns = [\"mine/*.yml\"]\n").unwrap();
    assert_eq!(custom.classify(Path::new("mine/a.yml")), Category::Array);
    assert_eq!(custom.classify(Path::new("array-examples/a.yml")), Category::Other);
    assert!(Categories::parse("[[category]]\nname = \"nonsense\"\npatterns = []\n").is_err());
}

#[test]
fn loading_skips_what_cannot_be_used() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    task(root, "array-examples/a", CLEAN, &[("valid-memsafety", true), ("unreach-call", true)]);
    task(root, "list-simple/b", CLEAN, &[("valid-memcleanup", false), ("no-overflow", true)]);
    write(root, "list-simple/broken.yml", "input_files: [unterminated\n");
    write(root, "list-simple/noverdict.yml", "input_files: x.c\nproperties:\n  - property_file: ../properties/valid-memsafety.prp\n");
    write(root, "list-simple/many.yml", "input_files: ['one.c', 'two.c']\nproperties:\n  - property_file: ../properties/no-overflow.prp\n    expected_verdict: false\n");

    let all = load_tasks(root, None, &Categories::builtin()).unwrap();
    let ids: Vec<(&str, Property)> = all.iter().map(|t| (t.id.as_str(), t.property)).collect();
    assert_eq!(
        ids,
        [
            ("array-examples/a", Property::ValidMemsafety),
            ("list-simple/b", Property::ValidMemcleanup),
            ("list-simple/b", Property::NoOverflow),
            ("list-simple/many", Property::NoOverflow),
        ]
    );
    let many = &all[3];
    assert_eq!(many.input_files, [root.join("list-simple/one.c"), root.join("list-simple/two.c")]);
    assert!(!many.expected_verdict);

    let lists = load_tasks(root, Some(Category::LinkedList), &Categories::builtin()).unwrap();
    assert_eq!(lists.len(), 3);
    assert!(lists.iter().all(|t| t.category == Category::LinkedList));
    assert!(load_tasks(root, Some(Category::Juliet), &Categories::builtin()).unwrap().is_empty());
}

#[test]
fn parallel_runs_match_sequential_runs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("tasks");
    task(&root, "memsafety/df", common::DOUBLE_FREE, &[("valid-memsafety", false), ("valid-memcleanup", true)]);
    task(&root, "memsafety/ok", common::SINGLE_FREE, &[("valid-memsafety", true)]);
    task(&root, "recursive/cycle", common::TWO_CYCLE, &[("no-overflow", true)]);
    task(&root, "array-examples/clean", CLEAN, &[("valid-memsafety", true)]);
    write(&root, "array-examples/gone.yml", "input_files: missing.c\nproperties:\n  - property_file: ../properties/valid-memsafety.prp\n    expected_verdict: true\n");
    let tasks = load_tasks(&root, None, &Categories::builtin()).unwrap();
    assert_eq!(tasks.len(), 6);

    let mut cfg = RunConfig::default();
    cfg.preprocess = false;
    let (templates, attrs) = (TemplateSet::builtin(), LibAttrs::builtin());
    let run = |jobs: usize, store_dir: Option<&Path>, modes: &[Mode]| {
        let provider = Recording::new(RuleProvider);
        let setup = BenchSetup { cfg: &cfg, provider: &provider, templates: &templates, attrs: &attrs, store_dir, jobs };
        (run_tasks(&tasks, modes, &setup), provider.calls())
    };
    let both = [Mode::Compositional, Mode::Baseline];
    let (one, calls_one) = run(1, None, &both);
    let (four, calls_four) = run(4, None, &both);
    assert_eq!(one, four);
    assert_eq!(calls_one, calls_four);
    assert_eq!(one.len(), 12);

    let get = |id: &str, tool: &str| one.iter().find(|o| o.task == id && o.tool == tool).unwrap();
    assert_eq!(get("memsafety/df", "nlverify-compositional").verdict, Verdict::False);
    assert_eq!(get("memsafety/df", "nlverify-compositional").class, OutcomeClass::TP);
    assert_eq!(get("memsafety/ok", "nlverify-compositional").class, OutcomeClass::TN);
    assert_eq!(get("array-examples/gone", "nlverify-baseline").verdict, Verdict::Unknown);

    // per-task stores make a second compositional pass free; the baseline
    // keeps no summaries
    let stores = dir.path().join("stores");
    std::fs::create_dir_all(&stores).unwrap();
    let (first, calls) = run(2, Some(&stores), &[Mode::Compositional]);
    assert!(calls > 0);
    assert!(std::fs::read_dir(&stores).unwrap().count() > 0);
    let (again, calls) = run(2, Some(&stores), &[Mode::Compositional]);
    assert_eq!(calls, 0);
    assert_eq!(first, again);
}
