//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::Check;

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", common::criterion_gradients),
        ("loss oracle", common::criterion_loss_oracle),
        ("causality", common::criterion_causality),
        ("overfit sanity", common::criterion_overfit),
        ("top-k sampler statistics", common::criterion_sampler),
        ("fixture validation", common::criterion_fixtures),
        ("pairing rule", common::criterion_pairing),
        ("acrostic pipeline", common::criterion_acrostic),
        ("round-trips", common::criterion_round_trips),
        ("diversity", common::criterion_diversity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
