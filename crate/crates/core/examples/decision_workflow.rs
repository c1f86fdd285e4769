//! A user-defined decision node in a two-stage workflow: filter and
//! aggregate a table, then join the aggregate against a small dimension
//! table with the built-in join decision.
//!
//! ```bash
//! cargo run --release --example decision_workflow
//! ```

use std::collections::BTreeMap;

use extfaas::bench::{gen_table, KeyDist, TableSpec};
use extfaas::dataplane::Cluster;
use extfaas::decision::{
    join_decision_node, run_workflow, DecisionNode, DecisionWorkflow, ExchangePattern, JoinDecisionConfig,
    StageMeta, WorkflowStage,
};
use extfaas::model::{
    Aggregate, ClusterSpec, DecisionTuple, NodeId, OpParams, Partition, Priority, Row, SchedulePolicy, MB,
};

fn main() -> extfaas::Result<()> {
    let mut cluster = Cluster::new(ClusterSpec::with_shape(4, 4))?;
    let facts = gen_table(&TableSpec::new("facts", 800.0, 8000, KeyDist::Uniform), 8, 1)?;
    // Dimension rows keyed by every tenth fact key, 25 KB each.
    let dim_rows: Vec<Row> = facts
        .iter()
        .flat_map(|p| p.rows.iter().step_by(10))
        .enumerate()
        .map(|(i, r)| Row::new(r.key, 25_000, i as u64))
        .collect();
    let placement: Vec<NodeId> = (0..8).map(|i| NodeId(i % 4)).collect();
    cluster.load_table("facts", facts, &placement)?;
    cluster.load_table("dim", vec![Partition::new("dim", 0, dim_rows, NodeId(3))], &[NodeId(3)])?;

    // One reducer per 50 MB of filtered input, spread over the nodes with
    // the most free slots.
    let config = BTreeMap::from([("mb_per_instance".to_string(), 50.0), ("selectivity".to_string(), 0.25)]);
    let sized = DecisionNode::new("sized_group_by", config, |ctx| {
        let bytes = ctx.view.data_dist.total_table_size(ctx.input(0)?)? as f64 * ctx.param("selectivity")?;
        let scale = (bytes / (ctx.param("mb_per_instance")? * MB as f64)).ceil().max(1.0) as u32;
        let mut nodes = ctx.view.node_status.all_nodes();
        nodes.sort_by_key(|&n| std::cmp::Reverse(ctx.view.node_status.free(n).unwrap_or(0)));
        nodes.truncate(3);
        Ok(DecisionTuple { func: "group_by".into(), scale, schedule: SchedulePolicy::round_robin(nodes)? })
    });

    let workflow = DecisionWorkflow::new(vec![
        WorkflowStage {
            node: sized,
            meta: StageMeta::new("aggregate", &["facts"], "agg", ExchangePattern::AllToAll)
                .with_params(OpParams { aggregate: Aggregate::Count, ..OpParams::default() })
                .with_map_side(OpParams { selectivity: 0.25, ..OpParams::default() }),
        },
        WorkflowStage {
            node: join_decision_node(JoinDecisionConfig { t1: 30.0, t2: 2, a: 40.0 * MB as f64 }),
            meta: StageMeta::new("enrich", &["agg", "dim"], "report", ExchangePattern::ByFunction),
        },
    ])?;

    let out = run_workflow(&workflow, &mut cluster, Priority::High)?;
    for (d, t) in out.report.decisions.iter().zip(&out.report.stages) {
        println!(
            "{:<10} {:<11} scale {:>2} {:<10} on {:?}: {:.2}s -> {:.2}s, {:.0} MB shuffled",
            d.stage,
            d.tuple.func,
            d.tuple.scale,
            d.tuple.schedule.kind.to_string(),
            t.nodes.iter().map(|n| n.0).collect::<Vec<_>>(),
            t.submitted_at,
            t.finished_at,
            t.shuffle_bytes as f64 / MB as f64
        );
    }
    let rows: usize = out.results["report"].iter().map(|p| p.rows.len()).sum();
    println!(
        "\n{rows} joined rows in {:.2}s using {:.1} slot-seconds",
        out.metrics.completion_time, out.metrics.resource_time_cost
    );
    Ok(())
}
