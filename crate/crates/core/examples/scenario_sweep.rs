//! Loads a scenario config (default: the shipped sample), runs its grid,
//! writes the CSVs and prints the summary.
//!
//! ```bash
//! cargo run --release --example scenario_sweep -- configs/tpcds_subquery.toml
//! ```

use std::path::PathBuf;

use extfaas::bench::{report, run_scenario, write_outputs, ScenarioConfig};

fn main() -> extfaas::Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/tpcds_subquery.toml")
    });
    let mut cfg = ScenarioConfig::from_toml(&std::fs::read_to_string(&path)?)?;
    cfg.output_dir = std::env::temp_dir().join("extfaas-sweep");

    let out = run_scenario(&cfg)?;
    for file in write_outputs(&cfg.output_dir, &out)? {
        println!("wrote {}", file.display());
    }
    print!("\n{}", report(&cfg.output_dir)?);
    Ok(())
}
