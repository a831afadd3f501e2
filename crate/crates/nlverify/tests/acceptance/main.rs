//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

#[path = "../common/mod.rs"]
mod common;

mod blocks;
mod harness_suite;
mod pipeline;
mod prompts;
mod scc;
mod schema;
mod scoring;

use std::time::{Duration, Instant};

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    check: Check,
    /// Wall-clock ceiling; exceeding it fails the criterion.
    limit: Option<Duration>,
}

fn main() {
    let filter: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let criteria = [
        Criterion { id: 1, name: "scoring reproduction", check: scoring::check, limit: Some(Duration::from_secs(1)) },
        Criterion { id: 2, name: "SCC oracle equivalence", check: scc::check, limit: Some(Duration::from_secs(10)) },
        Criterion { id: 3, name: "prompt snapshot fidelity", check: prompts::check, limit: None },
        Criterion { id: 4, name: "compositional propagation", check: pipeline::propagation, limit: Some(Duration::from_secs(2)) },
        Criterion { id: 5, name: "fixed-point boundedness", check: pipeline::boundedness, limit: None },
        Criterion { id: 6, name: "cache idempotence", check: pipeline::idempotence, limit: None },
        Criterion { id: 7, name: "schema suite", check: schema::check, limit: None },
        Criterion { id: 8, name: "harness judging", check: harness_suite::check, limit: None },
        Criterion { id: 9, name: "block reassembly", check: blocks::check, limit: None },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_none_or(|f| f == c.id)) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if took > limit => Err(format!("took {took:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {} ({detail}; {took:.2?})", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {} ({why}; {took:.2?})", c.id, c.name);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
