use std::collections::BTreeMap;

use super::placement::place;
use super::RuntimeView;
use crate::error::{Error, Result};
use crate::model::{
    DecisionTuple, ExecutionPlan, InputRef, NodeId, OpParams, Placement, Select, Side,
};
use crate::operators::FunctionKind;

/// How a stage's instances consume their input partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangePattern {
    /// Instance `i` reads key bucket `i` of every input partition.
    AllToAll,
    /// Input 0 (probe) is split among colocated instances; input 1 (build)
    /// is shipped whole to every instance.
    BroadcastColocate,
    /// Instance `i` reads input partition `i` whole.
    OneToOne,
    /// Chosen from the decided function: joins and group-by as their
    /// natural exchange, scans one-to-one.
    ByFunction,
}

impl ExchangePattern {
    pub fn for_function(kind: FunctionKind) -> Self {
        match kind {
            FunctionKind::MergeJoin | FunctionKind::GroupBy => ExchangePattern::AllToAll,
            FunctionKind::HashJoin => ExchangePattern::BroadcastColocate,
            FunctionKind::ScanMap | FunctionKind::ChainTask => ExchangePattern::OneToOne,
        }
    }
}

/// Static description of one workflow stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageMeta {
    pub name: String,
    pub inputs: Vec<String>,
    pub output: String,
    pub exchange: ExchangePattern,
    pub params: OpParams,
    /// When set, each input partition first runs through a colocated
    /// `scan_map` with these parameters; the stage then reads its output.
    pub map_side: Option<OpParams>,
}

impl StageMeta {
    pub fn new(
        name: impl Into<String>,
        inputs: &[&str],
        output: impl Into<String>,
        exchange: ExchangePattern,
    ) -> Self {
        StageMeta {
            name: name.into(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.into(),
            exchange,
            params: OpParams::default(),
            map_side: None,
        }
    }

    pub fn with_params(mut self, params: OpParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_map_side(mut self, params: OpParams) -> Self {
        self.map_side = Some(params);
        self
    }

    pub fn map_table(&self) -> String {
        format!("{}.map", self.output)
    }
}

/// Plans submitted for one stage: an optional map-side plan and the main plan.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledStage {
    pub map: Option<ExecutionPlan>,
    pub main: ExecutionPlan,
}

#[derive(Debug, Clone)]
struct Source {
    table: String,
    part_id: u32,
    node: NodeId,
    side: Side,
}

fn side_of(input: usize) -> Side {
    if input == 0 {
        Side::Left
    } else {
        Side::Right
    }
}

/// Turns a decision tuple into execution plans with concrete placements.
pub fn compile(
    tuple: &DecisionTuple,
    meta: &StageMeta,
    view: &RuntimeView,
    stage_id: u32,
    map_stage_id: u32,
) -> Result<CompiledStage> {
    let kind = FunctionKind::lookup(&tuple.func)?;
    let exchange = match meta.exchange {
        ExchangePattern::ByFunction => ExchangePattern::for_function(kind),
        e => e,
    };
    let arity_ok = match exchange {
        ExchangePattern::AllToAll => !meta.inputs.is_empty(),
        ExchangePattern::BroadcastColocate => meta.inputs.len() == 2,
        ExchangePattern::OneToOne | ExchangePattern::ByFunction => !meta.inputs.is_empty(),
    };
    if !arity_ok {
        return Err(Error::ExchangeArityMismatch(format!(
            "{:?} with {} inputs in stage `{}`",
            exchange,
            meta.inputs.len(),
            meta.name
        )));
    }

    let mut base = Vec::new();
    for (i, table) in meta.inputs.iter().enumerate() {
        for share in view.data_dist.shares(table)? {
            for &part_id in &share.part_ids {
                base.push(Source {
                    table: table.clone(),
                    part_id,
                    node: share.node,
                    side: side_of(i),
                });
            }
        }
    }

    let (map, sources) = match meta.map_side {
        None => (None, base),
        Some(params) => {
            let table = meta.map_table();
            let mut nodes: Vec<NodeId> = base.iter().map(|s| s.node).collect();
            nodes.sort_unstable();
            nodes.dedup();
            if nodes.is_empty() {
                return Err(Error::EmptyCandidateSet);
            }
            let placements = base
                .iter()
                .enumerate()
                .map(|(i, s)| Placement {
                    instance: i as u32,
                    func: FunctionKind::ScanMap.name().into(),
                    node: s.node,
                    inputs: vec![InputRef {
                        table: s.table.clone(),
                        part_id: s.part_id,
                        side: s.side,
                        select: Select::Whole,
                    }],
                })
                .collect();
            let sources = base
                .iter()
                .enumerate()
                .map(|(i, s)| Source {
                    table: table.clone(),
                    part_id: i as u32,
                    node: s.node,
                    side: s.side,
                })
                .collect();
            let plan = ExecutionPlan {
                stage_id: map_stage_id,
                candidate_nodes: nodes,
                output_table: table,
                params,
                placements,
            };
            (Some(plan), sources)
        }
    };

    let nodes = place(tuple.scale, &tuple.schedule, &view.node_status)?;
    let inputs = assign_inputs(meta, exchange, &nodes, &sources)?;
    let placements = nodes
        .iter()
        .zip(inputs)
        .enumerate()
        .map(|(i, (&node, inputs))| Placement {
            instance: i as u32,
            func: tuple.func.clone(),
            node,
            inputs,
        })
        .collect();
    let main = ExecutionPlan {
        stage_id,
        candidate_nodes: tuple.schedule.candidate_nodes().to_vec(),
        output_table: meta.output.clone(),
        params: meta.params,
        placements,
    };
    main.check_against(tuple)?;
    Ok(CompiledStage { map, main })
}

fn input_ref(s: &Source, select: Select) -> InputRef {
    InputRef {
        table: s.table.clone(),
        part_id: s.part_id,
        side: s.side,
        select,
    }
}

fn assign_inputs(
    meta: &StageMeta,
    exchange: ExchangePattern,
    nodes: &[NodeId],
    sources: &[Source],
) -> Result<Vec<Vec<InputRef>>> {
    let scale = nodes.len() as u32;
    match exchange {
        ExchangePattern::AllToAll => Ok((0..scale)
            .map(|i| {
                sources
                    .iter()
                    .map(|s| input_ref(s, Select::Bucket { index: i, of: scale }))
                    .collect()
            })
            .collect()),
        ExchangePattern::OneToOne | ExchangePattern::ByFunction => {
            if sources.len() != nodes.len() {
                return Err(Error::ExchangeArityMismatch(format!(
                    "stage `{}` has {} input partitions for {} instances",
                    meta.name,
                    sources.len(),
                    nodes.len()
                )));
            }
            Ok(sources
                .iter()
                .map(|s| vec![input_ref(s, Select::Whole)])
                .collect())
        }
        ExchangePattern::BroadcastColocate => {
            let mut out: Vec<Vec<InputRef>> = vec![Vec::new(); nodes.len()];
            let mut local: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
            for (i, n) in nodes.iter().enumerate() {
                local.entry(*n).or_default().push(i);
            }
            // Probe partitions are split among the instances on their node,
            // or among all instances when none runs there.
            for s in sources.iter().filter(|s| s.side == Side::Left) {
                let all: Vec<usize>;
                let owners = match local.get(&s.node) {
                    Some(owners) => owners,
                    None => {
                        all = (0..nodes.len()).collect();
                        &all
                    }
                };
                let of = owners.len() as u32;
                for (j, &i) in owners.iter().enumerate() {
                    let select = if of == 1 {
                        Select::Whole
                    } else {
                        Select::Chunk { index: j as u32, of }
                    };
                    out[i].push(input_ref(s, select));
                }
            }
            for s in sources.iter().filter(|s| s.side == Side::Right) {
                for inputs in out.iter_mut() {
                    inputs.push(input_ref(s, Select::Whole));
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterSpec, DataDistribution, NodeStatus, SchedulePolicy};

    fn view(dist: DataDistribution, nodes: u32) -> RuntimeView {
        RuntimeView {
            data_dist: dist,
            node_status: NodeStatus::uniform(nodes, 8),
            cluster: ClusterSpec::with_shape(nodes, 8),
        }
    }

    fn two_tables() -> DataDistribution {
        let mut d = DataDistribution::new();
        d.add_partition("A", NodeId(0), 0, 100);
        d.add_partition("A", NodeId(1), 1, 100);
        d.add_partition("A", NodeId(2), 2, 100);
        d.add_partition("B", NodeId(0), 0, 50);
        d
    }

    #[test]
    fn all_to_all_buckets() {
        let t = DecisionTuple {
            func: "merge_join".into(),
            scale: 4,
            schedule: SchedulePolicy::round_robin(vec![NodeId(0), NodeId(1)]).unwrap(),
        };
        let meta = StageMeta::new("j", &["A", "B"], "out", ExchangePattern::AllToAll);
        let c = compile(&t, &meta, &view(two_tables(), 3), 7, 8).unwrap();
        assert!(c.map.is_none());
        assert_eq!(c.main.placements.len(), 4);
        for (i, p) in c.main.placements.iter().enumerate() {
            assert_eq!(p.inputs.len(), 4);
            assert!(p.inputs.iter().all(|r| r.select == Select::Bucket { index: i as u32, of: 4 }));
            assert_eq!(p.inputs.iter().filter(|r| r.side == Side::Right).count(), 1);
        }
    }

    #[test]
    fn broadcast_colocates_probe_and_ships_build() {
        let t = DecisionTuple {
            func: "hash_join".into(),
            scale: 3,
            schedule: SchedulePolicy::packing(vec![NodeId(0), NodeId(1)]).unwrap(),
        };
        let meta = StageMeta::new("j", &["A", "B"], "out", ExchangePattern::BroadcastColocate);
        let v = RuntimeView {
            node_status: NodeStatus::from_free(8, &[2, 1, 8]),
            ..view(two_tables(), 3)
        };
        let c = compile(&t, &meta, &v, 1, 2).unwrap();
        let nodes: Vec<_> = c.main.placements.iter().map(|p| p.node).collect();
        assert_eq!(nodes, vec![NodeId(0), NodeId(0), NodeId(1)]);
        // Every probe partition is read exactly once in total.
        let mut probe_cover = BTreeMap::<u32, f64>::new();
        for p in &c.main.placements {
            assert_eq!(p.inputs.iter().filter(|r| r.side == Side::Right).count(), 1);
            for r in p.inputs.iter().filter(|r| r.side == Side::Left) {
                let w = match r.select {
                    Select::Whole => 1.0,
                    Select::Chunk { of, .. } => 1.0 / of as f64,
                    Select::Bucket { .. } => panic!("no buckets in broadcast"),
                };
                *probe_cover.entry(r.part_id).or_default() += w;
            }
        }
        assert_eq!(probe_cover.len(), 3);
        assert!(probe_cover.values().all(|w| (w - 1.0).abs() < 1e-12));
        // The partition on n2, where no instance runs, is split three ways.
        let remote: Vec<Select> = c
            .main
            .placements
            .iter()
            .flat_map(|p| p.inputs.iter())
            .filter(|r| r.part_id == 2 && r.side == Side::Left)
            .map(|r| r.select)
            .collect();
        assert_eq!(
            remote,
            (0..3).map(|index| Select::Chunk { index, of: 3 }).collect::<Vec<_>>()
        );
    }

    #[test]
    fn arity_mismatch() {
        let t = DecisionTuple {
            func: "hash_join".into(),
            scale: 1,
            schedule: SchedulePolicy::packing(vec![NodeId(0)]).unwrap(),
        };
        let meta = StageMeta::new("j", &["A"], "out", ExchangePattern::BroadcastColocate);
        assert!(matches!(
            compile(&t, &meta, &view(two_tables(), 3), 1, 2),
            Err(Error::ExchangeArityMismatch(_))
        ));
        let meta = StageMeta::new("s", &["A"], "out", ExchangePattern::OneToOne);
        let t = DecisionTuple {
            func: "scan_map".into(),
            scale: 2,
            schedule: SchedulePolicy::round_robin(vec![NodeId(0)]).unwrap(),
        };
        assert!(matches!(
            compile(&t, &meta, &view(two_tables(), 3), 1, 2),
            Err(Error::ExchangeArityMismatch(_))
        ));
    }

    #[test]
    fn map_side_is_colocated() {
        let t = DecisionTuple {
            func: "group_by".into(),
            scale: 2,
            schedule: SchedulePolicy::round_robin(vec![NodeId(0), NodeId(1), NodeId(2)]).unwrap(),
        };
        let meta = StageMeta::new("g", &["A"], "agg", ExchangePattern::AllToAll).with_map_side(OpParams {
            selectivity: 0.5,
            ..OpParams::default()
        });
        let c = compile(&t, &meta, &view(two_tables(), 3), 3, 4).unwrap();
        let map = c.map.unwrap();
        assert_eq!(map.output_table, "agg.map");
        assert_eq!(map.placements.len(), 3);
        for p in &map.placements {
            assert_eq!(p.inputs[0].part_id, p.node.0);
        }
        assert!(c.main.placements[0].inputs.iter().all(|r| r.table == "agg.map"));
    }
}
