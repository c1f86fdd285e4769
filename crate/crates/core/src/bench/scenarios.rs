use std::collections::BTreeMap;
use std::thread;

use super::config::{KeyDist, ScenarioConfig, ScenarioKind, Strategy, SweepAxis, TableSpec};
use super::gen::gen_table;
use crate::controlplane::{corun, CorunConfig, CorunOutcome, EventRecord};
use crate::dataplane::Cluster;
use crate::decision::{
    default_decision, join_decision_node, run_workflow, scheduling_choice_node, DecisionNode,
    DecisionWorkflow, ExchangePattern, RuntimeReport, StageMeta, WorkflowStage,
};
use crate::error::{Error, Result};
use crate::model::{
    Aggregate, ClusterSpec, DecisionTuple, Metrics, NodeId, OpParams, Priority, SchedulePolicy,
    TimelineSample, MB,
};
use crate::operators::FunctionKind;

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub strategy: String,
    pub sweep_value: f64,
    pub completion_s: f64,
    pub cost_slot_s: f64,
    /// Join function the run used, empty when there is no join stage.
    pub chosen_join: String,
    pub seed: u64,
}

/// Everything one grid point produced.
#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub strategy: Strategy,
    pub sweep_value: f64,
    pub metrics: Metrics,
    pub report: RuntimeReport,
    /// Co-run details for the co-sharing scenario.
    pub corun: Option<CoshareRun>,
}

#[derive(Debug, Clone)]
pub struct CoshareRun {
    pub with_filler: CorunOutcome,
    pub without_filler: CorunOutcome,
    pub total_slots: u32,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub rows: Vec<ResultRow>,
    pub points: Vec<PointOutcome>,
}

impl ScenarioOutput {
    /// Allocation timeline of the co-run with the background filler.
    pub fn timeline(&self) -> Option<(&[TimelineSample], u32)> {
        self.points
            .iter()
            .find_map(|p| p.corun.as_ref())
            .map(|c| (c.with_filler.timeline.as_slice(), c.total_slots))
    }

    pub fn events(&self) -> Option<&[EventRecord]> {
        self.points
            .iter()
            .find_map(|p| p.corun.as_ref())
            .map(|c| c.with_filler.events.as_slice())
    }
}

/// Runs the scenario grid, one fresh cluster per point, points in parallel.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let grid: Vec<(f64, Strategy)> = cfg
        .sweep
        .values
        .iter()
        .flat_map(|&v| cfg.strategy.iter().map(move |&s| (v, s)))
        .collect();

    let workers = thread::available_parallelism().map_or(1, usize::from).min(grid.len()).max(1);
    let mut results: Vec<Option<Result<PointOutcome>>> = (0..grid.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let chunks: Vec<_> = results
            .chunks_mut(grid.len().div_ceil(workers))
            .zip(grid.chunks(grid.len().div_ceil(workers)))
            .map(|(out, points)| {
                scope.spawn(move || {
                    for (slot, &(value, strategy)) in out.iter_mut().zip(points) {
                        *slot = Some(run_point(cfg, value, strategy).map_err(|e| Error::GridPoint {
                            scenario: cfg.scenario.to_string(),
                            point: format!("{}={value} strategy={strategy}", axis_name(cfg.sweep.axis)),
                            source: Box::new(e),
                        }));
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("grid worker panicked");
        }
    });

    let mut rows = Vec::with_capacity(grid.len());
    let mut points = Vec::with_capacity(grid.len());
    for r in results {
        let p = r.expect("every point ran")?;
        rows.push(ResultRow {
            scenario: cfg.scenario.to_string(),
            strategy: p.strategy.to_string(),
            sweep_value: p.sweep_value,
            completion_s: p.metrics.completion_time,
            cost_slot_s: p.metrics.resource_time_cost,
            chosen_join: chosen_join(&p.report),
            seed: cfg.seed,
        });
        points.push(p);
    }
    Ok(ScenarioOutput { rows, points })
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::BSizeMb => "b_size_mb",
        SweepAxis::NodeCount => "node_count",
        SweepAxis::SkewAlpha => "skew_alpha",
        SweepAxis::InputGb => "input_gb",
    }
}

fn chosen_join(report: &RuntimeReport) -> String {
    report
        .decisions
        .iter()
        .map(|d| d.tuple.func.as_str())
        .find(|f| *f == "merge_join" || *f == "hash_join")
        .unwrap_or_default()
        .to_string()
}

/// Runs a single grid point.
pub fn run_point(cfg: &ScenarioConfig, value: f64, strategy: Strategy) -> Result<PointOutcome> {
    let (metrics, report, corun) = match cfg.scenario {
        ScenarioKind::JoinSizeSweep | ScenarioKind::JoinClusterSweep => {
            let (mut cluster, wf) = join_point(cfg, value, strategy)?;
            let out = run_workflow(&wf, &mut cluster, Priority::High)?;
            (out.metrics, out.report, None)
        }
        ScenarioKind::SchedSkew => {
            let (mut cluster, wf) = skew_point(cfg, value, strategy)?;
            let out = run_workflow(&wf, &mut cluster, Priority::High)?;
            (out.metrics, out.report, None)
        }
        ScenarioKind::TpcdsSubquery => {
            let (mut cluster, wf) = query_point(cfg, value, strategy)?;
            let out = run_workflow(&wf, &mut cluster, Priority::High)?;
            (out.metrics, out.report, None)
        }
        ScenarioKind::Coshare => {
            let run = |filler| -> Result<CorunOutcome> {
                let (mut cluster, wf) = query_point(cfg, value, strategy)?;
                corun(
                    &mut cluster,
                    wf,
                    &CorunConfig {
                        lead_time: cfg.query.lead_time,
                        filler,
                    },
                )
            };
            let with_filler = run(Some(cfg.filler))?;
            let without_filler = run(None)?;
            let co = CoshareRun {
                with_filler,
                without_filler,
                total_slots: cfg.cluster.total_slots(),
            };
            (co.with_filler.metrics.clone(), co.with_filler.report.clone(), Some(co))
        }
    };
    Ok(PointOutcome {
        strategy,
        sweep_value: value,
        metrics,
        report,
        corun,
    })
}

fn not_applicable(cfg: &ScenarioConfig, strategy: Strategy) -> Error {
    Error::Config(format!("strategy {strategy} does not apply to {}", cfg.scenario))
}

fn table<'a>(cfg: &'a ScenarioConfig, name: &str) -> Result<&'a TableSpec> {
    cfg.tables
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Config(format!("scenario needs table `{name}`")))
}

/// Generates and loads a table, dealing partitions round-robin over its nodes.
fn load(cluster: &mut Cluster, spec: &TableSpec, seed: u64) -> Result<()> {
    let n = cluster.spec().node_count;
    let nodes: Vec<NodeId> = match &spec.nodes {
        Some(v) => v.iter().map(|&i| NodeId(i)).collect(),
        None => (0..n).map(NodeId).collect(),
    };
    let parts = gen_table(spec, spec.partitions.unwrap_or(nodes.len() as u32), seed)?;
    let placement: Vec<NodeId> = (0..parts.len()).map(|i| nodes[i % nodes.len()]).collect();
    cluster.load_table(&spec.name, parts, &placement)?;
    Ok(())
}

fn static_scale(bytes: f64, per_instance_mb: f64) -> u32 {
    (bytes / (per_instance_mb * MB as f64)).ceil().max(1.0) as u32
}

/// Cluster for one join-sweep point with tables A and B loaded.
pub fn join_cluster(cfg: &ScenarioConfig, value: f64) -> Result<Cluster> {
    let mut spec = ClusterSpec {
        rng_seed: cfg.seed,
        ..cfg.cluster.clone()
    };
    let a = table(cfg, "A")?.clone();
    let mut b = table(cfg, "B")?.clone();
    match cfg.sweep.axis {
        SweepAxis::BSizeMb => {
            b.rows = (b.rows as f64 * value / b.size_mb).round().max(1.0) as u64;
            b.size_mb = value;
        }
        SweepAxis::NodeCount => spec.node_count = value as u32,
        other => return Err(Error::Config(format!("join sweeps cannot sweep {}", axis_name(other)))),
    }
    let mut cluster = Cluster::new(spec)?;
    load(&mut cluster, &a, cfg.seed)?;
    load(&mut cluster, &b, cfg.seed)?;
    Ok(cluster)
}

/// The single join stage over A (probe/left) and B (build/right).
pub fn join_stage(node: DecisionNode) -> Result<DecisionWorkflow> {
    DecisionWorkflow::new(vec![WorkflowStage {
        node,
        meta: StageMeta::new("join", &["A", "B"], "AB", ExchangePattern::ByFunction),
    }])
}

fn join_point(cfg: &ScenarioConfig, value: f64, strategy: Strategy) -> Result<(Cluster, DecisionWorkflow)> {
    let cluster = join_cluster(cfg, value)?;
    let d = cluster.distribution();
    let bytes = d.total_table_size("A")? + d.total_table_size("B")?;
    let scale = static_scale(bytes as f64, cfg.decision.static_a_mb);
    let node = match strategy {
        Strategy::StaticMerge => default_decision("merge_join", scale),
        Strategy::StaticHash => default_decision("hash_join", scale),
        Strategy::Dynamic => join_decision_node(cfg.decision.join),
        s => return Err(not_applicable(cfg, s)),
    };
    Ok((cluster, join_stage(node)?))
}

fn skew_point(cfg: &ScenarioConfig, value: f64, strategy: Strategy) -> Result<(Cluster, DecisionWorkflow)> {
    if cfg.sweep.axis != SweepAxis::SkewAlpha {
        return Err(Error::Config("sched_skew sweeps skew_alpha".into()));
    }
    let mut cluster = Cluster::new(ClusterSpec {
        rng_seed: cfg.seed,
        ..cfg.cluster.clone()
    })?;
    let mut t = table(cfg, "T")?.clone();
    t.dist = KeyDist::from_sweep(value);
    load(&mut cluster, &t, cfg.seed)?;

    let scale = cfg.decision.fixed_scale;
    let node = match strategy {
        Strategy::RoundRobin => default_decision("group_by", scale),
        Strategy::Packing => packing_node("group_by", scale),
        Strategy::Dynamic => scheduling_choice_node("group_by", scale, cfg.decision.skew_threshold),
        s => return Err(not_applicable(cfg, s)),
    };
    let wf = DecisionWorkflow::new(vec![WorkflowStage {
        node,
        meta: StageMeta::new("group", &["T"], "G", ExchangePattern::AllToAll),
    }])?;
    Ok((cluster, wf))
}

/// Fixed scale, packed onto the nodes holding the input.
fn packing_node(func: &str, scale: u32) -> DecisionNode {
    let func = func.to_string();
    let config = BTreeMap::from([("scale".to_string(), scale as f64)]);
    DecisionNode::new("packing", config, move |ctx| {
        Ok(DecisionTuple {
            func: func.clone(),
            scale,
            schedule: SchedulePolicy::packing(ctx.view.data_dist.table_nodes(ctx.input(0)?)?)?,
        })
    })
}

/// Group-by decision for a map-side-filtered input: when the input lives on
/// a single node the stage is consolidated there and needs no shuffle;
/// otherwise reducers are spread round-robin over the cluster so the output
/// is balanced for downstream exchanges. Scale is `a` bytes of filtered input
/// per instance, capped by the chosen nodes' slot capacity.
pub fn mapreduce_decision(selectivity: f64, a_bytes: f64) -> DecisionNode {
    let config = BTreeMap::from([
        ("selectivity".to_string(), selectivity),
        ("a".to_string(), a_bytes),
    ]);
    DecisionNode::new("mapreduce", config, move |ctx| {
        let table = ctx.input(0)?;
        let spec = &ctx.view.cluster;
        let bytes = ctx.view.data_dist.total_table_size(table)? as f64 * ctx.param("selectivity")?;
        let want = (bytes / ctx.param("a")?).ceil().max(1.0) as u32;
        let data_nodes = ctx.view.data_dist.table_nodes(table)?;
        let (nodes, schedule) = if data_nodes.len() == 1 {
            (1, SchedulePolicy::packing(data_nodes)?)
        } else {
            (spec.node_count, SchedulePolicy::round_robin(spec.nodes())?)
        };
        Ok(DecisionTuple {
            func: FunctionKind::GroupBy.name().into(),
            scale: want.min(nodes * spec.slots_per_node),
            schedule,
        })
    })
}

/// Cluster with the two query tables loaded, plus the three-stage workflow.
pub fn query_point(cfg: &ScenarioConfig, value: f64, strategy: Strategy) -> Result<(Cluster, DecisionWorkflow)> {
    if cfg.sweep.axis != SweepAxis::InputGb {
        return Err(Error::Config(format!("{} sweeps input_gb", cfg.scenario)));
    }
    let q = &cfg.query;
    let spec = ClusterSpec {
        rng_seed: cfg.seed,
        node_count: match q.cluster_nodes_per_gb {
            Some(per_gb) => (value * per_gb).ceil().max(1.0) as u32,
            None => cfg.cluster.node_count,
        },
        ..cfg.cluster.clone()
    };
    let data_nodes = ((value / q.gb_per_data_node).ceil() as u32).clamp(1, spec.node_count);
    let mut cluster = Cluster::new(spec)?;
    let total_mb = value * 1000.0;
    for (name, share) in [("T1", q.t1_share), ("T2", 1.0 - q.t1_share)] {
        let size_mb = total_mb * share;
        let t = TableSpec {
            partitions: Some(q.partitions_per_data_node * data_nodes),
            nodes: Some((0..data_nodes).collect()),
            ..TableSpec::new(name, size_mb, (size_mb * q.rows_per_mb).round().max(1.0) as u64, KeyDist::Uniform)
        };
        load(&mut cluster, &t, cfg.seed)?;
    }

    let scan = OpParams {
        selectivity: q.selectivity,
        ..OpParams::default()
    };
    let count = OpParams {
        aggregate: Aggregate::Count,
        ..OpParams::default()
    };
    let d = &cfg.decision;
    let scanned = |share: f64| total_mb * share * MB as f64 * q.selectivity;
    let group_node = |share: f64| match strategy {
        Strategy::StaticMerge | Strategy::StaticHash => {
            Ok(default_decision("group_by", static_scale(scanned(share), d.group_a_mb)))
        }
        Strategy::Dynamic => Ok(mapreduce_decision(q.selectivity, d.group_a_mb * MB as f64)),
        s => Err(not_applicable(cfg, s)),
    };
    let join_scale = static_scale(scanned(1.0), d.static_a_mb);
    let join_node = match strategy {
        Strategy::StaticMerge => default_decision("merge_join", join_scale),
        Strategy::StaticHash => default_decision("hash_join", join_scale),
        Strategy::Dynamic => join_decision_node(d.join),
        s => return Err(not_applicable(cfg, s)),
    };
    let wf = DecisionWorkflow::new(vec![
        WorkflowStage {
            node: group_node(q.t1_share)?,
            meta: StageMeta::new("agg1", &["T1"], "A1", ExchangePattern::AllToAll)
                .with_params(count)
                .with_map_side(scan),
        },
        WorkflowStage {
            node: group_node(1.0 - q.t1_share)?,
            meta: StageMeta::new("agg2", &["T2"], "A2", ExchangePattern::AllToAll)
                .with_params(count)
                .with_map_side(scan),
        },
        WorkflowStage {
            node: join_node,
            meta: StageMeta::new("join", &["A1", "A2"], "J", ExchangePattern::ByFunction),
        },
    ])?;
    Ok((cluster, wf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ScenarioKind) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::preset(kind);
        for t in &mut cfg.tables {
            t.rows = (t.rows / 10).max(1);
        }
        cfg.query.rows_per_mb = 0.2;
        cfg
    }

    #[test]
    fn grid_arity_and_order() {
        let mut cfg = small(ScenarioKind::JoinSizeSweep);
        cfg.strategy = vec![Strategy::StaticHash, Strategy::StaticMerge];
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.rows.len(), 20);
        assert_eq!(out.rows[0].strategy, "S-H");
        assert_eq!(out.rows[1].strategy, "S-M");
        assert_eq!(out.rows[2].sweep_value, 20.0);
        assert!(out.rows.iter().all(|r| r.completion_s > 0.0));
        assert_eq!(out.rows[0].chosen_join, "hash_join");
    }

    #[test]
    fn errors_carry_grid_point() {
        let mut cfg = small(ScenarioKind::JoinSizeSweep);
        cfg.strategy = vec![Strategy::Packing];
        let err = run_scenario(&cfg).unwrap_err();
        assert!(matches!(err, Error::GridPoint { ref point, .. } if point.contains("b_size_mb=10")));
    }

    #[test]
    fn deterministic() {
        let cfg = small(ScenarioKind::SchedSkew);
        let a = run_scenario(&cfg).unwrap().rows;
        let b = run_scenario(&cfg).unwrap().rows;
        assert_eq!(a, b);
    }

    fn first_stage(cfg: &ScenarioConfig, gb: f64) -> (DecisionTuple, u32) {
        let (cluster, wf) = query_point(cfg, gb, Strategy::Dynamic).unwrap();
        let view = crate::decision::RuntimeView {
            data_dist: cluster.distribution().clone(),
            node_status: cluster.snapshot_status(),
            cluster: cluster.spec().clone(),
        };
        let stage = &wf.stages()[0];
        (stage.node.evaluate(&view, &stage.meta.inputs).unwrap(), cluster.spec().node_count)
    }

    #[test]
    fn mapreduce_node_consolidates_only_single_node_input() {
        let cfg = small(ScenarioKind::TpcdsSubquery);
        let (t, _) = first_stage(&cfg, 2.0);
        assert_eq!(t.schedule.kind, crate::model::PolicyKind::Packing);
        assert_eq!(t.schedule.candidate_nodes(), &[NodeId(0)]);
        assert_eq!(t.scale, 8);

        // 3 GB scanned at 0.5 over 64 MB instances, spread over all 6 nodes.
        let (t, _) = first_stage(&cfg, 4.0);
        assert_eq!(t.schedule.kind, crate::model::PolicyKind::RoundRobin);
        assert_eq!(t.schedule.candidate_nodes().len(), 6);
        assert_eq!(t.scale, 24);
    }

    #[test]
    fn cluster_can_scale_with_input() {
        let mut cfg = small(ScenarioKind::TpcdsSubquery);
        cfg.query.cluster_nodes_per_gb = Some(1.0);
        assert_eq!(first_stage(&cfg, 4.0).1, 4);
        cfg.query.cluster_nodes_per_gb = Some(0.0);
        assert!(cfg.validate().is_err());
    }
}
