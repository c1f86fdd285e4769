//! A latency-sensitive query sharing the cluster with background chains.
//! Prints the per-second allocation and the query's slowdown.
//!
//! ```bash
//! cargo run --release --example coshare
//! ```

use extfaas::bench::{query_point, ScenarioConfig, ScenarioKind, Strategy};
use extfaas::controlplane::{corun, CorunConfig};

fn main() -> extfaas::Result<()> {
    let cfg = ScenarioConfig::preset(ScenarioKind::Coshare);
    let total = cfg.cluster.total_slots();
    let run = |filler| {
        let (mut cluster, query) = query_point(&cfg, 6.0, Strategy::Dynamic)?;
        corun(&mut cluster, query, &CorunConfig { lead_time: cfg.query.lead_time, filler })
    };
    let shared = run(Some(cfg.filler))?;
    let alone = run(None)?;

    println!("  t  high  low   ({total} slots; # high, + low)");
    for s in &shared.timeline {
        println!(
            "{:>3} {:>5} {:>4}   {}{}",
            s.t,
            s.alloc_high,
            s.alloc_low,
            "#".repeat(s.alloc_high as usize),
            "+".repeat(s.alloc_low as usize)
        );
    }
    println!(
        "\nquery: {:.2}s shared vs {:.2}s alone; {} background tasks ran",
        shared.metrics.completion_time,
        alone.metrics.completion_time,
        shared.low_tasks.len()
    );
    Ok(())
}
