//! Oversized generated functions are split, annotated with earlier-block
//! summaries, stripped and concatenated back to the original body.

use nlverify_core::blocks::{split_function_blocks, strip_block_summaries, with_prior_summaries};
use std::cell::Cell;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRng, TestRunner};

const FUNCTIONS: u32 = 50;

fn stmt(depth: u32) -> BoxedStrategy<String> {
    let leaf = prop_oneof![
        "[a-z]{1,6}".prop_map(|v| format!("    {v} = {v} + 1;\n")),
        "[a-z]{1,6}".prop_map(|v| format!("    use(\"{v} {{ }}\", '}}');\n")),
        "[a-z ]{0,20}".prop_map(|c| format!("    /* {c} */\n")),
        Just("    // trailing } in a comment\n".to_string()),
        Just("    p = malloc(n * sizeof *p);\n".to_string()),
    ];
    if depth == 0 {
        return leaf.boxed();
    }
    let body = proptest::collection::vec(stmt(depth - 1), 1..4).prop_map(|v| v.concat());
    prop_oneof![
        3 => leaf,
        1 => (body.clone(), body.clone()).prop_map(|(a, b)| format!("    if (k > 1) {{\n{a}    }} else {{\n{b}    }}\n")),
        1 => body.clone().prop_map(|b| format!("    for (int i = 0; i < k; i++) {{\n{b}    }}\n")),
        1 => body.clone().prop_map(|b| format!("    while (k--)\n    {{\n{b}    }}\n")),
        1 => (body.clone(), body).prop_map(|(a, b)| format!("    switch (k) {{\n    case 0:\n{a}        break;\n    default:\n{b}    }}\n")),
    ]
    .boxed()
}

fn function() -> impl Strategy<Value = (String, Vec<String>)> {
    let body = proptest::collection::vec(stmt(3), 4..14).prop_map(|s| format!("static int work(int k, char *p)\n{{\n{}    return k;\n}}\n", s.concat()));
    // summaries may contain comment terminators and line breaks
    (body, proptest::collection::vec("[a-z */\n]{0,30}", 16))
}

pub fn check() -> Result<String, String> {
    let config = Config { cases: FUNCTIONS, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config.clone(), TestRng::deterministic_rng(config.rng_algorithm));
    let blocks_seen = Cell::new(0usize);
    let max_blocks = Cell::new(0usize);
    let result = runner.run(&function(), |(body, notes)| {
        let budget = (body.len() / 3).max(40);
        prop_assert!(body.len() > budget);
        let blocks = split_function_blocks(&body, budget);
        prop_assert!(blocks.len() > 1, "over-budget body was not split");
        let mut rebuilt = String::new();
        for (i, b) in blocks.iter().enumerate() {
            let prior: Vec<String> = notes.iter().cycle().take(i).cloned().collect();
            let annotated = with_prior_summaries(&b.text, &prior);
            prop_assert_eq!(annotated.lines().count() >= i, true);
            rebuilt.push_str(strip_block_summaries(&annotated));
        }
        prop_assert_eq!(&rebuilt, &body);
        blocks_seen.set(blocks_seen.get() + blocks.len());
        max_blocks.set(max_blocks.get().max(blocks.len()));
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok(format!("{FUNCTIONS} functions, {} blocks, at most {} per function", blocks_seen.get(), max_blocks.get()))
}
