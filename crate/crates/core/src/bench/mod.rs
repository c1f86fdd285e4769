//! Table generation, evaluation scenarios, CSV output and reporting.

pub mod config;
pub mod gen;
pub mod report;
pub mod scenarios;

pub use config::{
    DecisionParams, KeyDist, QueryParams, ScenarioConfig, ScenarioKind, Strategy, SweepAxis,
    SweepSpec, TableSpec,
};
pub use gen::gen_table;
pub use report::{read_results, report, write_outputs, Summary};
pub use scenarios::{join_cluster, join_stage, mapreduce_decision, query_point, run_point, run_scenario, CoshareRun, PointOutcome, ResultRow, ScenarioOutput};
