//! Published per-category tallies of seven tools, rescored.

use nlverify_core::score::{metrics, svcomp_score, ConfusionCounts};

struct Row {
    category: &'static str,
    tool: &'static str,
    counts: [u64; 5],
    /// Hand-computed score and accuracy numerator / denominator.
    score: i64,
    correct: u64,
    total: u64,
}

const fn row(category: &'static str, tool: &'static str, counts: [u64; 5], score: i64, correct: u64, total: u64) -> Row {
    Row { category, tool, counts, score, correct, total }
}

#[rustfmt::skip]
const ROWS: [Row; 21] = [
    row("juliet", "Sonnet-4.6", [921, 98, 830, 0, 0], 1013, 1751, 1849),
    row("juliet", "GPT-5.4", [805, 34, 894, 116, 0], -1663, 1699, 1849),
    row("juliet", "Qwen3.5-27B-Q4", [889, 147, 781, 32, 0], -925, 1670, 1849),
    row("juliet", "Gemini-3.1-flash-lite", [894, 186, 742, 27, 0], -1462, 1636, 1849),
    row("juliet", "CPAchecker", [921, 0, 928, 0, 0], 2777, 1849, 1849),
    row("juliet", "Symbiotic", [921, 0, 913, 0, 15], 2747, 1834, 1849),
    row("juliet", "UAutomizer", [446, 0, 891, 0, 512], 2228, 1337, 1849),
    row("data_structure", "Sonnet-4.6", [255, 251, 318, 4, 0], -3253, 573, 828),
    row("data_structure", "GPT-5.4", [223, 196, 373, 36, 0], -3319, 596, 828),
    row("data_structure", "Qwen3.5-27B-Q4", [215, 182, 387, 44, 0], -3331, 602, 828),
    row("data_structure", "Gemini-3.1-flash-lite", [203, 234, 335, 56, 0], -4663, 538, 828),
    row("data_structure", "CPAchecker", [168, 0, 414, 0, 246], 996, 582, 828),
    row("data_structure", "Symbiotic", [223, 0, 328, 1, 276], 847, 551, 828),
    row("data_structure", "UAutomizer", [91, 0, 360, 0, 377], 811, 451, 828),
    row("control_flow", "Sonnet-4.6", [86, 5, 18, 0, 0], 42, 104, 109),
    row("control_flow", "Qwen3.5-27B-Q4", [77, 1, 22, 9, 0], -183, 99, 109),
    row("control_flow", "GPT-5.4", [73, 0, 23, 13, 0], -297, 96, 109),
    row("control_flow", "Gemini-3.1-flash-lite", [63, 4, 19, 23, 0], -699, 82, 109),
    row("control_flow", "CPAchecker", [85, 0, 23, 0, 1], 131, 108, 109),
    row("control_flow", "Symbiotic", [76, 0, 22, 1, 10], 88, 98, 109),
    row("control_flow", "UAutomizer", [83, 0, 20, 0, 6], 123, 103, 109),
];

/// Independent scoring oracle: weights applied as a dot product.
fn oracle_score(c: [u64; 5]) -> i64 {
    const W: [i64; 5] = [1, -16, 2, -32, 0];
    c.iter().zip(W).map(|(&n, w)| n as i64 * w).sum()
}

fn sum(tool: &str, field: usize) -> u64 {
    ROWS.iter().filter(|r| r.tool == tool).map(|r| r.counts[field]).sum()
}

pub fn check() -> Result<String, String> {
    let mut errors = Vec::new();
    for r in &ROWS {
        let [tp, fp, tn, fn_, unk] = r.counts;
        let c = ConfusionCounts::new(tp, fp, tn, fn_, unk);
        let got = svcomp_score(&c);
        if got != r.score || oracle_score(r.counts) != r.score {
            errors.push(format!("{}/{}: score {got}, oracle {}, expected {}", r.category, r.tool, oracle_score(r.counts), r.score));
        }
        if tp + tn != r.correct || c.total() != r.total {
            errors.push(format!("{}/{}: tallies {} of {}", r.category, r.tool, tp + tn, c.total()));
        }
        let acc = metrics(&c).accuracy;
        if acc != Some(r.correct as f64 / r.total as f64) {
            errors.push(format!("{}/{}: accuracy {acc:?}", r.category, r.tool));
        }
    }
    // every tool saw every task of a category
    for cat in ["juliet", "data_structure", "control_flow"] {
        let totals: Vec<u64> = ROWS.iter().filter(|r| r.category == cat).map(|r| r.counts.iter().sum()).collect();
        if totals.windows(2).any(|w| w[0] != w[1]) {
            errors.push(format!("{cat}: per-tool totals differ: {totals:?}"));
        }
    }
    // cross-category sums quoted alongside the table
    let quoted = [
        ("Sonnet-4.6", 0, 1262),
        ("Sonnet-4.6", 3, 4),
        ("Sonnet-4.6", 1, 354),
        ("GPT-5.4", 1, 230),
        ("GPT-5.4", 3, 165),
        ("CPAchecker", 4, 247),
        ("Symbiotic", 4, 301),
        ("Symbiotic", 3, 2),
        ("UAutomizer", 4, 895),
    ];
    for (tool, field, want) in quoted {
        let got = sum(tool, field);
        if got != want {
            errors.push(format!("{tool} column {field}: sum {got}, quoted {want}"));
        }
    }
    if errors.is_empty() {
        Ok(format!("{} rows, e.g. Sonnet-4.6/juliet = {}", ROWS.len(), ROWS[0].score))
    } else {
        Err(errors.join("; "))
    }
}
