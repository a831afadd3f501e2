//! Extraction from compilation databases, with and without the preprocessor.

use std::path::Path;

use nlverify::compdb::{load_compilation_db, parse_compilation_db, CompdbError};
use nlverify::frontend::load_program;

fn write(root: &Path, rel: &str, text: &str) {
    let p = root.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, text).unwrap();
}

fn project(root: &Path) {
    write(root, "inc/defs.h", "#define SCALE 3\ntypedef struct node { int v; struct node *next; } node_t;\nint util(int x);\n");
    write(root, "src/a.c", "#include \"defs.h\"\nint util(int x) { return x * SCALE + OFFSET; }\n");
    write(
        root,
        "src/b.c",
        "#include <stdlib.h>\n#include \"defs.h\"\nint main(void) {\n    node_t *n = malloc(sizeof(node_t));\n    if (!n) return 1;\n    n->v = util(2);\n    free(n);\n    return 0;\n}\n",
    );
    write(root, "src/c.c", "int broken( {\n");
    let db = format!(
        r#"[
 {{"directory": "{d}", "file": "src/a.c", "command": "cc -c -Iinc '-DOFFSET=1' src/a.c -o a.o"}},
 {{"directory": "{d}", "file": "src/b.c", "arguments": ["cc", "-c", "-Iinc", "src/b.c"]}},
 {{"directory": "{d}", "file": "src/c.c", "arguments": ["cc", "-c", "src/c.c"]}}
]"#,
        d = root.display()
    );
    write(root, "compile_commands.json", &db);
}

fn have_cc() -> bool {
    std::process::Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn database_entries() {
    let cmds = parse_compilation_db(r#"[{"directory": "/w", "file": "x.c", "command": "cc -c \"-DNAME=a b\" x.c"}]"#).unwrap();
    assert_eq!(cmds[0].arguments, ["cc", "-c", "-DNAME=a b", "x.c"]);
    assert_eq!(cmds[0].source_path(), Path::new("/w/x.c"));
    assert!(matches!(parse_compilation_db("{}"), Err(CompdbError::MalformedDatabase(_))));
    assert!(matches!(parse_compilation_db(r#"[{"file": "x.c"}]"#), Err(CompdbError::MalformedDatabase(_))));
    assert!(load_compilation_db(Path::new("/definitely/not/here.json")).is_err());
}

#[test]
fn preprocessed_project() {
    if !have_cc() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    project(dir.path());
    let cmds = load_compilation_db(&dir.path().join("compile_commands.json")).unwrap();
    let prog = load_program("proj", &cmds, true);

    let defined: Vec<_> = prog.functions.iter().filter(|f| !f.is_external).collect();
    let names: Vec<&str> = defined.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(names, ["util", "main"]);
    // macros from the header and the command line are expanded; lines refer to the original file
    assert_eq!(defined[0].body, "int util(int x) { return x * 3 + 1; }");
    assert_eq!(defined[0].file_path, "src/a.c");
    assert_eq!(defined[0].line_span, (2, 2));
    assert_eq!(defined[1].line_span, (3, 9));

    let calls: Vec<(&str, Option<&str>)> = prog.callsites.iter().map(|c| (c.caller.as_str(), c.callee_name.as_deref())).collect();
    assert_eq!(calls, [("main", Some("malloc")), ("main", Some("util")), ("main", Some("free"))]);
    assert!(prog.types.structs.contains_key("struct node"));
    assert!(prog.types.typedefs.contains_key("node_t"));

    assert_eq!(prog.skipped.len(), 1);
    assert!(prog.skipped[0].0.ends_with("src/c.c"));
}

#[test]
fn raw_sources_keep_macros() {
    let dir = tempfile::tempdir().unwrap();
    project(dir.path());
    let cmds = load_compilation_db(&dir.path().join("compile_commands.json")).unwrap();
    let prog = load_program("proj", &cmds[..1], false);
    let util = prog.functions.iter().find(|f| f.name == "util").unwrap();
    assert!(util.body.contains("SCALE + OFFSET"), "{}", util.body);
    assert!(prog.skipped.is_empty());
}
