//! Round-robin versus packing for a group-by over uniform and skewed keys,
//! and which one the skew-aware decision node picks.
//!
//! ```bash
//! cargo run --release --example skew_scheduling
//! ```

use extfaas::bench::{gen_table, run_scenario, KeyDist, ScenarioConfig, ScenarioKind, TableSpec};
use extfaas::model::MB;

fn main() -> extfaas::Result<()> {
    for (label, dist) in [("uniform", KeyDist::Uniform), ("pareto(1.16)", KeyDist::Pareto(1.16))] {
        let parts = gen_table(&TableSpec::new("T", 800.0, 8000, dist), 8, 42)?;
        let sizes: Vec<String> = parts.iter().map(|p| format!("{:.0}", p.size_bytes as f64 / MB as f64)).collect();
        println!("{label:>13} partition MB: {}", sizes.join(" "));
    }

    let out = run_scenario(&ScenarioConfig::preset(ScenarioKind::SchedSkew))?;
    println!();
    for r in &out.rows {
        let dist = if r.sweep_value == 0.0 { "uniform" } else { "pareto" };
        println!("{dist:>8} {:>4}: {:.2}s", r.strategy, r.completion_s);
    }
    Ok(())
}
