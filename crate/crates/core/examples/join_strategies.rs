//! Static merge join, static broadcast hash join and the adaptive join
//! decision across a growing build table.
//!
//! ```bash
//! cargo run --release --example join_strategies
//! ```

use extfaas::bench::{run_scenario, ScenarioConfig, ScenarioKind};

fn main() -> extfaas::Result<()> {
    let cfg = ScenarioConfig::preset(ScenarioKind::JoinSizeSweep);
    let out = run_scenario(&cfg)?;

    println!("A = 400 MB on {} nodes, B on one node\n", cfg.cluster.node_count);
    println!("{:>6}  {:>14}  {:>14}  {:>22}", "B (MB)", "S-M s / slot-s", "S-H s / slot-s", "DYN s / slot-s (join)");
    for chunk in out.rows.chunks(cfg.strategy.len()) {
        let cell = |s: &str| {
            let r = chunk.iter().find(|r| r.strategy == s).unwrap();
            (format!("{:.2} / {:.1}", r.completion_s, r.cost_slot_s), r.chosen_join.clone())
        };
        let (dyn_cell, chosen) = cell("DYN");
        println!(
            "{:>6}  {:>14}  {:>14}  {:>13} ({})",
            chunk[0].sweep_value,
            cell("S-M").0,
            cell("S-H").0,
            dyn_cell,
            chosen
        );
    }
    Ok(())
}
