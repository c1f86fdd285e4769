//! Co-running a High-priority query with a Low-priority background filler on
//! one cluster, with every slot mediated by the global controller.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{CommitResult, Demand, EventRecord, GlobalController, PrivateController};
use crate::dataplane::{Admission, Cluster, InstanceId, Notice, StageId, TaskState};
use crate::decision::{DecisionWorkflow, RuntimeReport, WorkflowRun};
use crate::error::{Error, Result};
use crate::model::{
    ExecutionPlan, Metrics, NodeId, NodeSlots, NodeStatus, OpParams, Placement, Priority,
    TimelineSample,
};
use crate::operators::FunctionKind;

/// Background work: chains of `length` tasks of `task_duration` seconds, at
/// most `wave` tasks running at once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub length: u32,
    pub task_duration: f64,
    pub wave: u32,
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.wave == 0 || !(self.task_duration > 0.0) {
            return Err(Error::Config(format!("invalid chain spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorunConfig {
    /// The query asks for a slot this long before an instance's inputs are
    /// predicted to arrive. At least one background task duration keeps
    /// waits for naturally released slots off the critical path.
    pub lead_time: f64,
    pub filler: Option<ChainSpec>,
}

#[derive(Debug, Clone)]
pub struct CorunOutcome {
    /// Query completion and the query's own slot-seconds.
    pub metrics: Metrics,
    /// Committed slots per priority, 0..=completion.
    pub timeline: Vec<TimelineSample>,
    pub events: Vec<EventRecord>,
    pub report: RuntimeReport,
    /// `(start, end)` of every finished background task.
    pub low_tasks: Vec<(f64, f64)>,
}

const QUERY_APP: &str = "query";
const FILLER_APP: &str = "background";
const LOW_STAGE_BASE: StageId = 1 << 30;

struct QueryDriver {
    ctrl: PrivateController,
    run: WorkflowRun,
    /// Ledger slots per node held by the query but not bound to an instance.
    pool: Vec<u32>,
    /// Submitted instances still waiting for a slot.
    ungranted: BTreeSet<InstanceId>,
    /// Deferred tickets per node.
    tickets: BTreeMap<NodeId, Vec<u64>>,
    wakeups: BTreeSet<u64>,
    lead: f64,
}

impl QueryDriver {
    fn track(&mut self, cluster: &Cluster, stages: &[StageId]) {
        for &s in stages {
            self.ungranted
                .extend(cluster.stage_instances(s).unwrap_or_default().iter().copied());
        }
    }

    /// Binds pooled slots to instances about to become ready, requests the
    /// shortfall, and returns slots that nothing needs soon.
    fn tick(&mut self, cluster: &mut Cluster, global: &mut GlobalController) -> Result<()> {
        let now = cluster.clock();
        let n = cluster.spec().node_count as usize;
        let mut soon: Vec<Vec<(f64, InstanceId)>> = vec![Vec::new(); n];
        let mut upstream = vec![0u32; n];
        for &id in &self.ungranted {
            let node = cluster.instance(id).expect("tracked").node.index();
            match cluster.predicted_ready(id) {
                Some(t) if t - self.lead <= now => soon[node].push((t, id)),
                Some(t) => {
                    let at = t - self.lead;
                    if self.wakeups.insert(at.to_bits()) {
                        cluster.schedule_wakeup(at, id as u64);
                    }
                }
                None => upstream[node] += 1,
            }
        }

        for (i, list) in soon.iter_mut().enumerate() {
            let node = NodeId(i as u32);
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut waiting: VecDeque<InstanceId> = list.iter().map(|&(_, id)| id).collect();

            while self.pool[i] > 0 {
                let Some(id) = waiting.pop_front() else { break };
                self.bind(cluster, id)?;
            }

            // Keep pooled slots for instances still waiting on upstream work.
            let excess = self.pool[i].saturating_sub(upstream[i]);
            if excess > 0 {
                self.pool[i] -= excess;
                let (_, granted) = self
                    .ctrl
                    .release(global, &Demand::from([(node, excess)]))?;
                // Only the query defers, so its own releases grant nothing.
                debug_assert!(granted.is_empty());
            }

            let outstanding = self.tickets.get(&node).map_or(0, Vec::len);
            let mut shortfall = waiting.len().saturating_sub(outstanding);
            while shortfall > 0 {
                match self.ctrl.request(global, Demand::from([(node, 1)]))? {
                    CommitResult::Committed(_) => {
                        let id = waiting.pop_front().expect("shortfall <= waiting");
                        self.bind(cluster, id)?;
                    }
                    CommitResult::Insufficient(_) => {
                        let req = self
                            .ctrl
                            .request_at(Demand::from([(node, 1)]), global.snapshot_cell().version);
                        let t = global.defer(req)?;
                        self.tickets.entry(node).or_default().push(t);
                    }
                    // Snapshots are taken just before the attempt; retry.
                    CommitResult::Conflict(_) => continue,
                }
                shortfall -= 1;
            }

            let wanted = waiting.len();
            if let Some(ts) = self.tickets.get_mut(&node) {
                while ts.len() > wanted {
                    global.withdraw(ts.pop().expect("non-empty"));
                }
            }
        }
        Ok(())
    }

    /// Gives an instance a slot the query already holds on its node.
    fn bind(&mut self, cluster: &mut Cluster, id: InstanceId) -> Result<()> {
        let node = cluster.instance(id).expect("tracked").node;
        if self.pool[node.index()] > 0 {
            self.pool[node.index()] -= 1;
        }
        self.ungranted.remove(&id);
        cluster.grant(id)?;
        Ok(())
    }

    fn on_granted(&mut self, node: NodeId, ticket: u64, demand: &Demand) {
        self.ctrl.absorb(demand);
        self.pool[node.index()] += demand.values().sum::<u32>();
        if let Some(ts) = self.tickets.get_mut(&node) {
            ts.retain(|&t| t != ticket);
        }
    }
}

struct Filler {
    ctrl: PrivateController,
    spec: ChainSpec,
    /// Remaining task counts of chains waiting for a slot.
    paused: VecDeque<u32>,
    running: BTreeMap<InstanceId, u32>,
    next_stage: StageId,
}

impl Filler {
    /// Starts background tasks on every slot open to Low work.
    fn fill(&mut self, cluster: &mut Cluster, global: &mut GlobalController) -> Result<()> {
        for i in 0..cluster.spec().node_count {
            let node = NodeId(i);
            while (self.running.len() as u32) < self.spec.wave
                && global.available(node, Priority::Low) > 0
            {
                if !matches!(
                    self.ctrl.request(global, Demand::from([(node, 1)]))?,
                    CommitResult::Committed(_)
                ) {
                    break;
                }
                let remaining = self.paused.pop_front().unwrap_or(self.spec.length);
                let stage = self.next_stage;
                self.next_stage += 1;
                let plan = ExecutionPlan {
                    stage_id: stage,
                    candidate_nodes: vec![node],
                    output_table: String::new(),
                    params: OpParams {
                        duration: Some(self.spec.task_duration),
                        ..OpParams::default()
                    },
                    placements: vec![Placement {
                        instance: 0,
                        func: FunctionKind::ChainTask.name().into(),
                        node,
                        inputs: Vec::new(),
                    }],
                };
                cluster.submit_plan(&plan, Priority::Low)?;
                let id = cluster.stage_instances(stage).expect("just submitted")[0];
                cluster.grant(id)?;
                self.running.insert(id, remaining - 1);
            }
        }
        Ok(())
    }
}

fn view_status(cluster: &Cluster, global: &GlobalController, pool: &[u32]) -> NodeStatus {
    let slots = cluster.spec().slots_per_node;
    NodeStatus {
        nodes: pool
            .iter()
            .enumerate()
            .map(|(i, &p)| NodeSlots {
                total_slots: slots,
                free_slots: global.cell().free(NodeId(i as u32)) + p,
                queued_tasks: 0,
            })
            .collect(),
    }
}

/// Runs `query` at High priority, with an optional Low filler, until the
/// query completes. Low tasks still running at that point are not counted.
pub fn corun(cluster: &mut Cluster, query: DecisionWorkflow, cfg: &CorunConfig) -> Result<CorunOutcome> {
    if let Some(f) = &cfg.filler {
        f.validate()?;
    }
    if !(cfg.lead_time >= 0.0) {
        return Err(Error::Config(format!("invalid lead time {}", cfg.lead_time)));
    }
    for t in query.base_tables() {
        if !cluster.distribution().contains(t) {
            return Err(Error::TableNotFound(t.to_string()));
        }
    }
    cluster.set_admission(Admission::Gated);
    let spec = cluster.spec().clone();
    let mut global = GlobalController::new(spec.node_count, spec.slots_per_node);
    let mut q = QueryDriver {
        ctrl: global.register_app(QUERY_APP, Priority::High)?,
        run: WorkflowRun::new(query, Priority::High, 0),
        pool: vec![0; spec.node_count as usize],
        ungranted: BTreeSet::new(),
        tickets: BTreeMap::new(),
        wakeups: BTreeSet::new(),
        lead: cfg.lead_time,
    };
    let mut filler = match cfg.filler {
        Some(spec) => Some(Filler {
            ctrl: global.register_app(FILLER_APP, Priority::Low)?,
            spec,
            paused: VecDeque::new(),
            running: BTreeMap::new(),
            next_stage: LOW_STAGE_BASE,
        }),
        None => None,
    };

    loop {
        global.set_time(cluster.clock());
        let pool = q.pool.clone();
        let submitted = q
            .run
            .advance_with(cluster, &|c| view_status(c, &global, &pool))?;
        q.track(cluster, &submitted);
        if q.run.is_finished() {
            break;
        }
        q.tick(cluster, &mut global)?;
        if let Some(f) = filler.as_mut() {
            f.fill(cluster, &mut global)?;
        }

        let Some(notices) = cluster.step() else {
            let stage = q.run.current_stage().unwrap_or_default().to_string();
            return Err(Error::InvalidRequest("co-run stalled".into()).in_stage(&stage));
        };
        global.set_time(cluster.clock());
        for notice in notices {
            let Notice::Finished { instance, priority } = notice else {
                continue;
            };
            let node = cluster.instance(instance).expect("finished").node;
            match priority {
                Priority::High => q.pool[node.index()] += 1,
                Priority::Low => {
                    let f = filler.as_mut().expect("only the filler runs Low work");
                    let remaining = f.running.remove(&instance).expect("tracked");
                    if remaining > 0 {
                        f.paused.push_front(remaining);
                    }
                    let (_, granted) = f.ctrl.release(&mut global, &Demand::from([(node, 1)]))?;
                    for g in granted {
                        debug_assert_eq!(g.app, QUERY_APP);
                        let gnode = *g.demand.keys().next().expect("non-empty demand");
                        q.on_granted(gnode, g.ticket, &g.demand);
                    }
                }
            }
        }
        debug_assert!(safe(cluster, &global));
    }

    let mut controllers = vec![&q.ctrl];
    if let Some(f) = &filler {
        controllers.push(&f.ctrl);
    }
    global.audit(&controllers)?;

    let completion = cluster.metrics().completion_time;
    let low_tasks = cluster
        .instances()
        .iter()
        .filter(|t| t.priority == Priority::Low && t.state == TaskState::Done)
        .map(|t| (t.start.expect("done"), t.end.expect("done")))
        .collect();
    Ok(CorunOutcome {
        metrics: Metrics {
            completion_time: completion,
            resource_time_cost: cluster.resource_time_of(Priority::High),
            timeline: global.timeline_until(completion),
        },
        timeline: global.timeline_until(completion),
        events: global.events().to_vec(),
        report: q.run.report().clone(),
        low_tasks,
    })
}

/// Ledger never exceeds capacity and covers every slot the dataplane holds.
fn safe(cluster: &Cluster, global: &GlobalController) -> bool {
    (0..cluster.spec().node_count).all(|i| {
        let n = NodeId(i);
        let (high, low) = cluster.held_on(n);
        let cell = global.cell();
        cell.committed(n) <= cell.total(n)
            && high <= cell.committed_on(n, Priority::High)
            && low <= cell.committed_on(n, Priority::Low)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{default_decision, ExchangePattern, StageMeta, WorkflowStage};
    use crate::model::{ClusterSpec, Partition, Row, MB};

    fn cluster() -> Cluster {
        let spec = ClusterSpec {
            compute_rate: (10 * MB) as f64,
            net_bandwidth: (10 * MB) as f64,
            ..ClusterSpec::with_shape(2, 4)
        };
        let mut c = Cluster::new(spec).unwrap();
        let parts = (0..2u32)
            .map(|p| {
                let rows = (0..40u64).map(|k| Row::new(k, MB, k)).collect();
                Partition::new("base", p, rows, NodeId(p))
            })
            .collect();
        c.load_table("base", parts, &[NodeId(0), NodeId(1)]).unwrap();
        c
    }

    fn workflow() -> DecisionWorkflow {
        DecisionWorkflow::new(vec![
            WorkflowStage {
                node: default_decision("scan_map", 2),
                meta: StageMeta::new("scan", &["base"], "mid", ExchangePattern::OneToOne),
            },
            WorkflowStage {
                node: default_decision("group_by", 2),
                meta: StageMeta::new("agg", &["mid"], "out", ExchangePattern::AllToAll),
            },
        ])
        .unwrap()
    }

    fn filler(wave: u32) -> Option<ChainSpec> {
        Some(ChainSpec {
            length: 4,
            task_duration: 1.0,
            wave,
        })
    }

    #[test]
    fn query_alone_matches_local_admission() {
        let mut local = cluster();
        let base = crate::decision::run_workflow(&workflow(), &mut local, Priority::High).unwrap();
        let mut c = cluster();
        let out = corun(
            &mut c,
            workflow(),
            &CorunConfig {
                lead_time: 1.0,
                filler: None,
            },
        )
        .unwrap();
        assert!((out.metrics.completion_time - base.metrics.completion_time).abs() < 1e-9);
        assert_eq!(out.report.decisions, base.report.decisions);
        assert!(out.low_tasks.is_empty());
    }

    #[test]
    fn filler_fills_and_yields() {
        let mut alone = cluster();
        let cfg = CorunConfig {
            lead_time: 1.0,
            filler: None,
        };
        let base = corun(&mut alone, workflow(), &cfg).unwrap();

        let mut c = cluster();
        let cfg = CorunConfig {
            lead_time: 1.0,
            filler: filler(8),
        };
        let out = corun(&mut c, workflow(), &cfg).unwrap();
        assert!(!out.low_tasks.is_empty());
        // Low tasks always run their full duration.
        assert!(out.low_tasks.iter().all(|(s, e)| (e - s - 1.0).abs() < 1e-9));
        // Each stage waits at most one background task for its slots.
        let stages = base.report.stages.len() as f64;
        assert!(out.metrics.completion_time <= base.metrics.completion_time + stages * 1.0 + 1e-9);
        // While the query runs, the cell is full.
        let mid = &out.timeline[1..out.timeline.len() - 1];
        assert!(mid.iter().all(|s| s.alloc_high + s.alloc_low == 8));
        assert_eq!(out.report.decisions.len(), base.report.decisions.len());
    }

    #[test]
    fn idle_cell_fills_to_wave() {
        let mut c = cluster();
        let cfg = CorunConfig {
            lead_time: 1.0,
            filler: filler(3),
        };
        let out = corun(&mut c, workflow(), &cfg).unwrap();
        assert!(out.timeline.iter().all(|s| s.alloc_low <= 3));
        assert!(out.timeline.iter().any(|s| s.alloc_low == 3));
        assert!(corun(
            &mut cluster(),
            workflow(),
            &CorunConfig {
                lead_time: 1.0,
                filler: Some(ChainSpec {
                    length: 0,
                    task_duration: 1.0,
                    wave: 1
                }),
            }
        )
        .is_err());
    }
}
