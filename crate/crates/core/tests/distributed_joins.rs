use extfaas::dataplane::Cluster;
use extfaas::decision::{
    default_decision, join_decision_node, run_workflow, DecisionNode, DecisionWorkflow, ExchangePattern,
    JoinDecisionConfig, StageMeta, WorkflowStage,
};
use extfaas::model::{Aggregate, ClusterSpec, NodeId, OpParams, Partition, Priority, Row, MB};
use proptest::prelude::*;

fn rows_strategy(max: usize, tag0: u64) -> impl Strategy<Value = Vec<Row>> {
    prop::collection::vec((0u64..40, 1u64..5000), 0..max).prop_map(move |v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (k, b))| Row::new(k, b, tag0 + i as u64))
            .collect()
    })
}

/// Splits rows into `parts` partitions dealt over the cluster's nodes.
fn load(cluster: &mut Cluster, name: &str, rows: &[Row], parts: usize, first_node: u32) {
    let n = cluster.spec().node_count;
    let mut split: Vec<Vec<Row>> = vec![Vec::new(); parts];
    for (i, r) in rows.iter().enumerate() {
        split[i % parts].push(*r);
    }
    let placement: Vec<NodeId> = (0..parts as u32).map(|p| NodeId((first_node + p) % n)).collect();
    let partitions = split
        .into_iter()
        .enumerate()
        .map(|(i, r)| Partition::new(name, i as u32, r, NodeId(0)))
        .collect();
    cluster.load_table(name, partitions, &placement).unwrap();
}

/// (key, combined payload bytes) of every matching pair, sorted.
fn expected(left: &[Row], right: &[Row]) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = left
        .iter()
        .flat_map(|l| right.iter().filter(move |r| r.key == l.key).map(move |r| (l.key, l.payload_bytes + r.payload_bytes)))
        .collect();
    out.sort_unstable();
    out
}

fn run_join(node: DecisionNode, left: &[Row], right: &[Row], nodes: u32, parts: (usize, usize)) -> Vec<(u64, u64)> {
    let mut cluster = Cluster::new(ClusterSpec::with_shape(nodes, 2)).unwrap();
    load(&mut cluster, "L", left, parts.0, 0);
    load(&mut cluster, "R", right, parts.1, 1);
    let wf = DecisionWorkflow::new(vec![WorkflowStage {
        node,
        meta: StageMeta::new("join", &["L", "R"], "out", ExchangePattern::ByFunction),
    }])
    .unwrap();
    let out = run_workflow(&wf, &mut cluster, Priority::High).unwrap();
    let mut got: Vec<(u64, u64)> = out.results["out"]
        .iter()
        .flat_map(|p| p.rows.iter().map(|r| (r.key, r.payload_bytes)))
        .collect();
    got.sort_unstable();
    got
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn planned_joins_match_nested_loop(
        left in rows_strategy(120, 0),
        right in rows_strategy(60, 10_000),
        nodes in 1u32..5,
        lp in 1usize..6,
        rp in 1usize..4,
        scale in 1u32..7,
    ) {
        let want = expected(&left, &right);
        for func in ["merge_join", "hash_join"] {
            let got = run_join(default_decision(func, scale), &left, &right, nodes, (lp, rp));
            prop_assert_eq!(&got, &want, "{}", func);
        }
        let cfg = JoinDecisionConfig { t1: 30.0, t2: 2, a: MB as f64 };
        let got = run_join(join_decision_node(cfg), &left, &right, nodes, (lp, rp));
        prop_assert_eq!(&got, &want);
    }
}

#[test]
fn map_side_scan_then_group_by_counts_every_key_once() {
    let rows: Vec<Row> = (0..400).map(|i| Row::new(i % 37, 10, i)).collect();
    let mut cluster = Cluster::new(ClusterSpec::with_shape(3, 2)).unwrap();
    load(&mut cluster, "T", &rows, 6, 0);
    let scan = OpParams { selectivity: 1.0, ..OpParams::default() };
    let count = OpParams { aggregate: Aggregate::Count, ..OpParams::default() };
    let wf = DecisionWorkflow::new(vec![WorkflowStage {
        node: default_decision("group_by", 4),
        meta: StageMeta::new("agg", &["T"], "G", ExchangePattern::AllToAll)
            .with_params(count)
            .with_map_side(scan),
    }])
    .unwrap();
    let out = run_workflow(&wf, &mut cluster, Priority::High).unwrap();
    let mut groups: Vec<(u64, u64)> = out.results["G"]
        .iter()
        .flat_map(|p| p.rows.iter().map(|r| (r.key, r.payload_tag)))
        .collect();
    groups.sort_unstable();
    let want: Vec<(u64, u64)> = (0..37).map(|k| (k, (400 - k + 36) / 37)).collect();
    assert_eq!(groups, want);
}
