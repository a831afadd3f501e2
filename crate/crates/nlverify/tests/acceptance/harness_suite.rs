//! A twelve-task suite with imported verdicts, judged and tallied.

use std::fmt::Write as _;

use nlverify::harness::{aggregate, emit_report, judge_imported, load_tasks, read_verdicts, Categories, Category, ReportFormat};
use nlverify_core::score::OutcomeClass;
use nlverify_core::Property;

/// (task, property holds, imported verdict; `None` = row missing from the CSV)
const SUITE: [(&str, bool, Option<&str>); 12] = [
    ("t01", false, Some("false(valid-free)")),
    ("t02", false, Some("false(valid-deref)")),
    ("t03", false, Some("FALSE")),
    ("t04", true, Some("false(valid-memtrack)")),
    ("t05", true, Some("true")),
    ("t06", true, Some("TRUE")),
    ("t07", true, Some("true")),
    ("t08", false, Some("true")),
    ("t09", false, Some("unknown")),
    ("t10", false, Some("timeout")),
    ("t11", true, Some("UNKNOWN")),
    ("t12", true, None),
];

/// Hand-enumerated classes in suite order.
const CLASSES: [OutcomeClass; 12] = [
    OutcomeClass::TP,
    OutcomeClass::TP,
    OutcomeClass::TP,
    OutcomeClass::FP,
    OutcomeClass::TN,
    OutcomeClass::TN,
    OutcomeClass::TN,
    OutcomeClass::FN,
    OutcomeClass::UNK,
    OutcomeClass::UNK,
    OutcomeClass::UNK,
    OutcomeClass::UNK,
];

pub fn check() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("tasks");
    let cat_dir = root.join("array-memsafety");
    std::fs::create_dir_all(&cat_dir).map_err(|e| e.to_string())?;
    let mut csv = String::from("task,verdict\n");
    for (id, holds, verdict) in SUITE {
        std::fs::write(cat_dir.join(format!("{id}.c")), "int main(void) { return 0; }\n").map_err(|e| e.to_string())?;
        let yml = format!(
            "format_version: '2.0'\ninput_files: '{id}.c'\nproperties:\n  - property_file: ../properties/valid-memsafety.prp\n    expected_verdict: {holds}\n  - property_file: ../properties/unreach-call.prp\n    expected_verdict: true\n"
        );
        std::fs::write(cat_dir.join(format!("{id}.yml")), yml).map_err(|e| e.to_string())?;
        if let Some(v) = verdict {
            let _ = writeln!(csv, "array-memsafety/{id},{v}");
        }
    }
    let csv_path = dir.path().join("othertool.csv");
    std::fs::write(&csv_path, csv).map_err(|e| e.to_string())?;

    let tasks = load_tasks(&root, None, &Categories::builtin()).map_err(|e| e.to_string())?;
    if tasks.len() != 12 || tasks.iter().any(|t| t.property != Property::ValidMemsafety || t.category != Category::Array) {
        return Err(format!("loaded {} tasks: {:?}", tasks.len(), tasks.iter().map(|t| (&t.id, t.property, t.category)).collect::<Vec<_>>()));
    }
    let (tool, verdicts) = read_verdicts(&csv_path).map_err(|e| e.to_string())?;
    let outcomes = judge_imported(&tasks, &tool, &verdicts);
    for (o, want) in outcomes.iter().zip(CLASSES) {
        if o.class != want {
            return Err(format!("{}: judged {:?}, expected {want:?}", o.task, o.class));
        }
    }
    let rows = aggregate(&outcomes);
    let [row] = rows.as_slice() else { return Err(format!("{} report rows", rows.len())) };
    let c = row.counts;
    // TP 3, FP 1, TN 3, FN 1, UNK 4 of which 2 on buggy tasks
    if (c.tp, c.fp, c.tn, c.fn_, c.unk, c.unk_pos) != (3, 1, 3, 1, 4, 2) {
        return Err(format!("counts {c:?}"));
    }
    // 3 + 2*3 - 16 - 32
    if row.score != -39 {
        return Err(format!("score {}", row.score));
    }
    let m = row.metrics;
    // accuracy 6/12, precision 3/4, recall 3/(3+1+2)
    if m.accuracy != Some(0.5) || m.precision != Some(0.75) || m.recall != Some(0.5) {
        return Err(format!("metrics {m:?}"));
    }
    let table = emit_report(&outcomes, ReportFormat::Table);
    let line = table.lines().nth(1).unwrap_or_default().split_whitespace().collect::<Vec<_>>().join(" ");
    if line != "array othertool valid-memsafety 3 1 3 1 4 -39 0.500 0.750 0.500" {
        return Err(format!("table row `{line}`"));
    }
    Ok("TP 3 FP 1 TN 3 FN 1 UNK 4, score -39, acc 0.5, prec 0.75, recall 0.5".into())
}
