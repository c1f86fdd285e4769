//! Deterministic discrete-event cluster.
//!
//! Operators run for real on the rows they receive; only time is simulated.
//! Each instance holds one slot while it computes. Inputs move through an
//! exchange: once a source partition exists, the selected rows are shipped to
//! the consumer's node over the [`LinkSchedule`], and the consumer becomes
//! runnable when its last input arrives.

pub mod cost;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

pub use cost::{CostModel, LinkSchedule, Transfer};

use crate::error::{Error, Result};
use crate::model::{
    ClusterSpec, DataDistribution, ExecutionPlan, InputRef, Metrics, NodeId, NodeSlots, NodeStatus,
    OpParams, Partition, Priority, Row, Select, Side, TimelineSample,
};
use crate::operators::{self, FunctionKind};

pub type StageId = u32;
pub type InstanceId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskState {
    Queued,
    Running,
    Done,
}

/// How runnable instances obtain slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    /// Per-node queues: High before Low, FIFO within a priority.
    Local,
    /// Instances wait for an explicit [`Cluster::grant`] from a controller.
    Gated,
}

#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub id: InstanceId,
    pub stage: StageId,
    pub func: FunctionKind,
    pub node: NodeId,
    pub priority: Priority,
    pub state: TaskState,
    pub start: Option<f64>,
    pub end: Option<f64>,
    part_id: u32,
    inputs: Vec<InputRef>,
    resolved: usize,
    delivered: usize,
    latest_arrival: f64,
    left: Vec<Row>,
    right: Vec<Row>,
    granted: bool,
    output: Option<Vec<Row>>,
}

impl TaskInstance {
    pub fn inputs_ready(&self) -> bool {
        self.delivered == self.inputs.len()
    }

    pub fn granted(&self) -> bool {
        self.granted
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageStats {
    pub submitted_at: f64,
    pub first_start: Option<f64>,
    pub finished_at: Option<f64>,
    /// Cross-node bytes moved into this stage's instances.
    pub shuffle_bytes: u64,
    pub instances: u32,
}

#[derive(Debug)]
struct StageState {
    output_table: String,
    params: OpParams,
    instances: Vec<InstanceId>,
    done: u32,
    stats: StageStats,
}

/// Something observable that happened while processing an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Notice {
    Ready { instance: InstanceId },
    Started { instance: InstanceId },
    Finished { instance: InstanceId, priority: Priority },
    StageDone { stage: StageId },
    Wakeup { token: u64 },
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Arrive(InstanceId),
    Finish(InstanceId),
    Wakeup(u64),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Held {
    high: u32,
    low: u32,
}

impl Held {
    fn total(self) -> u32 {
        self.high + self.low
    }
}

type TransferKey = (String, u32, Select, NodeId);

/// A simulated cluster. One logical thread drives it; independent clusters
/// may run on separate threads.
#[derive(Debug)]
pub struct Cluster {
    spec: ClusterSpec,
    cost: CostModel,
    admission: Admission,
    clock: f64,
    seq: u64,
    events: BinaryHeap<Reverse<Event>>,
    tables: BTreeMap<String, BTreeMap<u32, Partition>>,
    dist: DataDistribution,
    tasks: Vec<TaskInstance>,
    stages: BTreeMap<StageId, StageState>,
    queues: Vec<BTreeSet<(Priority, u64, InstanceId)>>,
    held: Vec<Held>,
    links: LinkSchedule,
    waiting: HashMap<(String, u32), Vec<(InstanceId, usize)>>,
    inflight: HashMap<TransferKey, f64>,
    alloc_log: Vec<(f64, u32, u32)>,
    last_high_finish: Option<f64>,
    resource_time: f64,
    resource_time_high: f64,
}

impl Cluster {
    pub fn new(spec: ClusterSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.node_count as usize;
        Ok(Cluster {
            cost: CostModel::from_spec(&spec),
            links: LinkSchedule::new(n, spec.net_bandwidth),
            spec,
            admission: Admission::Local,
            clock: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            tables: BTreeMap::new(),
            dist: DataDistribution::new(),
            tasks: Vec::new(),
            stages: BTreeMap::new(),
            queues: vec![BTreeSet::new(); n],
            held: vec![Held::default(); n],
            waiting: HashMap::new(),
            inflight: HashMap::new(),
            alloc_log: vec![(0.0, 0, 0)],
            last_high_finish: None,
            resource_time: 0.0,
            resource_time_high: 0.0,
        })
    }

    pub fn set_admission(&mut self, admission: Admission) {
        self.admission = admission;
    }

    pub fn spec(&self) -> &ClusterSpec {
        &self.spec
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    fn check_node(&self, node: NodeId) -> Result<()> {
        if node.0 < self.spec.node_count {
            Ok(())
        } else {
            Err(Error::NodeNotFound(node))
        }
    }

    /// Pre-loads a table: partition `i` goes to `placement[i]`. Takes no time.
    pub fn load_table(
        &mut self,
        name: &str,
        partitions: Vec<Partition>,
        placement: &[NodeId],
    ) -> Result<DataDistribution> {
        if partitions.len() != placement.len() {
            return Err(Error::InvalidTableSpec(format!(
                "{} partitions but {} placements",
                partitions.len(),
                placement.len()
            )));
        }
        for &node in placement {
            self.check_node(node)?;
        }
        self.dist.ensure_table(name);
        for (mut p, &node) in partitions.into_iter().zip(placement) {
            p.table = name.to_string();
            p.home = node;
            self.materialize(p);
        }
        let mut out = DataDistribution::new();
        out.ensure_table(name);
        for share in self.dist.shares(name)? {
            for &pid in &share.part_ids {
                let size = self.tables[name][&pid].size_bytes;
                out.add_partition(name, share.node, pid, size);
            }
        }
        Ok(out)
    }

    pub fn distribution(&self) -> &DataDistribution {
        &self.dist
    }

    /// Partitions of a table in part-id order.
    pub fn table(&self, name: &str) -> Result<Vec<&Partition>> {
        self.tables
            .get(name)
            .map(|m| m.values().collect())
            .ok_or_else(|| Error::TableNotFound(name.to_string()))
    }

    pub fn table_rows(&self, name: &str) -> Result<Vec<Row>> {
        Ok(self
            .table(name)?
            .into_iter()
            .flat_map(|p| p.rows.iter().copied())
            .collect())
    }

    /// Enqueues every placement of `plan`. Instances whose inputs are local and
    /// present start immediately if their node has a free slot.
    pub fn submit_plan(&mut self, plan: &ExecutionPlan, priority: Priority) -> Result<StageId> {
        if self.stages.contains_key(&plan.stage_id) {
            return Err(Error::StageAlreadySubmitted(plan.stage_id));
        }
        plan.check_candidates()?;
        let mut kinds = Vec::with_capacity(plan.placements.len());
        for p in &plan.placements {
            self.check_node(p.node)?;
            kinds.push(FunctionKind::lookup(&p.func)?);
        }

        let stage = plan.stage_id;
        let mut ids = Vec::with_capacity(plan.placements.len());
        for (i, (p, kind)) in plan.placements.iter().zip(kinds).enumerate() {
            let id = self.tasks.len() as InstanceId;
            self.tasks.push(TaskInstance {
                id,
                stage,
                func: kind,
                node: p.node,
                priority,
                state: TaskState::Queued,
                start: None,
                end: None,
                part_id: i as u32,
                inputs: p.inputs.clone(),
                resolved: 0,
                delivered: 0,
                latest_arrival: self.clock,
                left: Vec::new(),
                right: Vec::new(),
                granted: false,
                output: None,
            });
            ids.push(id);
        }
        if !plan.output_table.is_empty() {
            self.dist.ensure_table(&plan.output_table);
            self.tables.entry(plan.output_table.clone()).or_default();
        }
        self.stages.insert(
            stage,
            StageState {
                output_table: plan.output_table.clone(),
                params: plan.params,
                instances: ids.clone(),
                done: 0,
                stats: StageStats {
                    submitted_at: self.clock,
                    instances: ids.len() as u32,
                    ..StageStats::default()
                },
            },
        );

        let mut notices = Vec::new();
        for &id in &ids {
            let n_inputs = self.tasks[id as usize].inputs.len();
            for r in 0..n_inputs {
                let key = {
                    let input = &self.tasks[id as usize].inputs[r];
                    (input.table.clone(), input.part_id)
                };
                if self
                    .tables
                    .get(&key.0)
                    .is_some_and(|m| m.contains_key(&key.1))
                {
                    self.resolve_input(id, r, &mut notices);
                } else {
                    self.waiting.entry(key).or_default().push((id, r));
                }
            }
            if n_inputs == 0 {
                self.on_ready(id, &mut notices);
            }
        }
        Ok(stage)
    }

    /// Extracts the referenced rows and books their delivery.
    fn resolve_input(&mut self, id: InstanceId, r: usize, notices: &mut Vec<Notice>) {
        let (input, dest) = {
            let t = &self.tasks[id as usize];
            (t.inputs[r].clone(), t.node)
        };
        let part = &self.tables[&input.table][&input.part_id];
        let rows = match input.select {
            Select::Whole => part.rows.clone(),
            Select::Bucket { index, of } => operators::bucket_rows(&part.rows, index, of),
            Select::Chunk { index, of } => operators::chunk_rows(&part.rows, index, of),
        };
        let bytes: u64 = rows.iter().map(|r| r.payload_bytes).sum();
        let src = part.home;

        let arrival = if src == dest || bytes == 0 {
            self.clock
        } else {
            let key = (input.table.clone(), input.part_id, input.select, dest);
            match self.inflight.get(&key) {
                Some(&t) => t,
                None => {
                    let t = self.links.schedule(self.clock, src, dest, bytes);
                    self.inflight.insert(key, t);
                    let stage = self.tasks[id as usize].stage;
                    if let Some(s) = self.stages.get_mut(&stage) {
                        s.stats.shuffle_bytes += bytes;
                    }
                    t
                }
            }
        };

        let task = &mut self.tasks[id as usize];
        match input.side {
            Side::Left => task.left.extend(rows),
            Side::Right => task.right.extend(rows),
        }
        task.resolved += 1;
        task.latest_arrival = task.latest_arrival.max(arrival);
        if arrival <= self.clock {
            task.delivered += 1;
            if task.inputs_ready() {
                self.on_ready(id, notices);
            }
        } else {
            self.push_event(arrival, EventKind::Arrive(id));
        }
    }

    fn push_event(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    fn on_ready(&mut self, id: InstanceId, notices: &mut Vec<Notice>) {
        notices.push(Notice::Ready { instance: id });
        let (node, priority, granted) = {
            let t = &self.tasks[id as usize];
            (t.node, t.priority, t.granted)
        };
        match self.admission {
            Admission::Local => {
                self.seq += 1;
                self.queues[node.index()].insert((priority, self.seq, id));
                self.drain_queue(node, notices);
            }
            Admission::Gated => {
                if granted {
                    self.start(id, notices);
                }
            }
        }
    }

    fn drain_queue(&mut self, node: NodeId, notices: &mut Vec<Notice>) {
        while self.held[node.index()].total() < self.spec.slots_per_node {
            let Some(entry) = self.queues[node.index()].pop_first() else {
                break;
            };
            let id = entry.2;
            self.hold(node, self.tasks[id as usize].priority, 1);
            self.tasks[id as usize].granted = true;
            self.start(id, notices);
        }
    }

    fn hold(&mut self, node: NodeId, priority: Priority, delta: i32) {
        let h = &mut self.held[node.index()];
        let slot = match priority {
            Priority::High => &mut h.high,
            Priority::Low => &mut h.low,
        };
        *slot = (*slot as i32 + delta) as u32;
        self.log_alloc();
    }

    fn log_alloc(&mut self) {
        let high = self.held.iter().map(|h| h.high).sum();
        let low = self.held.iter().map(|h| h.low).sum();
        match self.alloc_log.last_mut() {
            Some(last) if last.0 == self.clock => {
                last.1 = high;
                last.2 = low;
            }
            _ => self.alloc_log.push((self.clock, high, low)),
        }
    }

    fn start(&mut self, id: InstanceId, notices: &mut Vec<Notice>) {
        let now = self.clock;
        let params = self.stages[&self.tasks[id as usize].stage].params;
        let task = &mut self.tasks[id as usize];
        debug_assert!(task.inputs_ready() && task.granted);
        task.state = TaskState::Running;
        task.start = Some(now);
        let left = std::mem::take(&mut task.left);
        let right = std::mem::take(&mut task.right);
        let exec = operators::execute(task.func, &params, left, right, self.cost.sort_factor);
        let duration = match task.func {
            FunctionKind::ChainTask => params.duration.unwrap_or(0.0),
            _ => self.cost.compute_time(exec.work_bytes),
        };
        task.output = Some(exec.rows);
        let stage = task.stage;
        let s = self.stages.get_mut(&stage).expect("stage exists");
        s.stats.first_start.get_or_insert(now);
        notices.push(Notice::Started { instance: id });
        self.push_event(now + duration, EventKind::Finish(id));
    }

    fn finish(&mut self, id: InstanceId, notices: &mut Vec<Notice>) {
        let now = self.clock;
        let (node, priority, stage, part_id, rows) = {
            let t = &mut self.tasks[id as usize];
            t.state = TaskState::Done;
            t.end = Some(now);
            (
                t.node,
                t.priority,
                t.stage,
                t.part_id,
                t.output.take().unwrap_or_default(),
            )
        };
        let start = self.tasks[id as usize].start.unwrap_or(now);
        self.resource_time += now - start;
        if priority == Priority::High {
            self.resource_time_high += now - start;
            self.last_high_finish = Some(now);
        }
        self.hold(node, priority, -1);
        notices.push(Notice::Finished {
            instance: id,
            priority,
        });

        let (output_table, stage_done) = {
            let s = self.stages.get_mut(&stage).expect("stage exists");
            s.done += 1;
            let done = s.done as usize == s.instances.len();
            if done {
                s.stats.finished_at = Some(now);
            }
            (s.output_table.clone(), done)
        };
        if !output_table.is_empty() {
            let part = Partition::new(output_table, part_id, rows, node);
            self.materialize_and_notify(part, notices);
        }
        if stage_done {
            notices.push(Notice::StageDone { stage });
        }
        if self.admission == Admission::Local {
            self.drain_queue(node, notices);
        }
    }

    fn materialize(&mut self, part: Partition) {
        self.dist
            .add_partition(&part.table, part.home, part.part_id, part.size_bytes);
        self.tables
            .entry(part.table.clone())
            .or_default()
            .insert(part.part_id, part);
    }

    fn materialize_and_notify(&mut self, part: Partition, notices: &mut Vec<Notice>) {
        let key = (part.table.clone(), part.part_id);
        self.materialize(part);
        if let Some(waiters) = self.waiting.remove(&key) {
            for (id, r) in waiters {
                self.resolve_input(id, r, notices);
            }
        }
    }

    /// Processes the next event. Returns `None` once the queue is empty.
    pub fn step(&mut self) -> Option<Vec<Notice>> {
        let Reverse(ev) = self.events.pop()?;
        debug_assert!(ev.time >= self.clock);
        self.clock = ev.time;
        let mut notices = Vec::new();
        match ev.kind {
            EventKind::Arrive(id) => {
                let task = &mut self.tasks[id as usize];
                task.delivered += 1;
                debug_assert!(task.delivered <= task.inputs.len());
                if task.inputs_ready() {
                    self.on_ready(id, &mut notices);
                }
            }
            EventKind::Finish(id) => self.finish(id, &mut notices),
            EventKind::Wakeup(token) => notices.push(Notice::Wakeup { token }),
        }
        Some(notices)
    }

    /// Time of the next pending event, if any.
    pub fn next_event_time(&self) -> Option<f64> {
        self.events.peek().map(|Reverse(e)| e.time)
    }

    pub fn schedule_wakeup(&mut self, at: f64, token: u64) {
        let at = at.max(self.clock);
        self.push_event(at, EventKind::Wakeup(token));
    }

    /// Gives a slot on its node to a queued instance (gated admission). The
    /// slot is held from now on; the instance starts once its inputs arrive.
    pub fn grant(&mut self, id: InstanceId) -> Result<Vec<Notice>> {
        let (node, priority, state, granted) = {
            let t = self
                .tasks
                .get(id as usize)
                .ok_or_else(|| Error::InvalidRequest(format!("unknown instance {id}")))?;
            (t.node, t.priority, t.state, t.granted)
        };
        if state != TaskState::Queued || granted {
            return Err(Error::InvalidRequest(format!(
                "instance {id} already holds a slot"
            )));
        }
        if self.held[node.index()].total() >= self.spec.slots_per_node {
            return Err(Error::InvalidRequest(format!("no free slot on {node}")));
        }
        self.hold(node, priority, 1);
        self.tasks[id as usize].granted = true;
        let mut notices = Vec::new();
        if self.tasks[id as usize].inputs_ready() {
            self.start(id, &mut notices);
        }
        Ok(notices)
    }

    pub fn instance(&self, id: InstanceId) -> Option<&TaskInstance> {
        self.tasks.get(id as usize)
    }

    pub fn instances(&self) -> &[TaskInstance] {
        &self.tasks
    }

    /// Arrival time of the last input, once every input has been booked.
    pub fn predicted_ready(&self, id: InstanceId) -> Option<f64> {
        let t = self.tasks.get(id as usize)?;
        (t.resolved == t.inputs.len()).then_some(t.latest_arrival)
    }

    pub fn stage_instances(&self, stage: StageId) -> Option<&[InstanceId]> {
        self.stages.get(&stage).map(|s| s.instances.as_slice())
    }

    pub fn stage_done(&self, stage: StageId) -> bool {
        self.stages
            .get(&stage)
            .is_some_and(|s| s.done as usize == s.instances.len())
    }

    pub fn stage_stats(&self, stage: StageId) -> Option<&StageStats> {
        self.stages.get(&stage).map(|s| &s.stats)
    }

    pub fn snapshot_status(&self) -> NodeStatus {
        let mut queued = vec![0u32; self.held.len()];
        for t in &self.tasks {
            if t.state == TaskState::Queued && !t.granted {
                queued[t.node.index()] += 1;
            }
        }
        NodeStatus {
            nodes: self
                .held
                .iter()
                .zip(queued)
                .map(|(h, q)| NodeSlots {
                    total_slots: self.spec.slots_per_node,
                    free_slots: self.spec.slots_per_node - h.total(),
                    queued_tasks: q,
                })
                .collect(),
        }
    }

    /// Slots held per priority on `node`.
    pub fn held_on(&self, node: NodeId) -> (u32, u32) {
        let h = self.held[node.index()];
        (h.high, h.low)
    }

    /// Drains the event queue.
    pub fn run_to_completion(&mut self) -> Result<Metrics> {
        while self.step().is_some() {}
        if let Some(t) = self.tasks.iter().find(|t| t.state != TaskState::Done) {
            return Err(if !t.inputs_ready() {
                Error::StalledExchange {
                    instance: t.id,
                    func: t.func.name().to_string(),
                }
            } else {
                Error::InvalidRequest(format!("instance {} never received a slot", t.id))
            });
        }
        Ok(self.metrics())
    }

    pub fn metrics(&self) -> Metrics {
        let completion = self.last_high_finish.unwrap_or(self.clock);
        Metrics {
            completion_time: completion,
            resource_time_cost: self.resource_time,
            timeline: self.timeline_until(completion),
        }
    }

    /// Slot-seconds consumed by finished instances of one priority.
    pub fn resource_time_of(&self, priority: Priority) -> f64 {
        match priority {
            Priority::High => self.resource_time_high,
            Priority::Low => self.resource_time - self.resource_time_high,
        }
    }

    /// Allocation sampled at whole seconds `0..=⌈until⌉`.
    pub fn timeline_until(&self, until: f64) -> Vec<TimelineSample> {
        let last_tick = until.max(0.0).ceil() as u64;
        let mut out = Vec::with_capacity(last_tick as usize + 1);
        let mut idx = 0;
        for tick in 0..=last_tick {
            while idx + 1 < self.alloc_log.len() && self.alloc_log[idx + 1].0 <= tick as f64 {
                idx += 1;
            }
            let (_, high, low) = self.alloc_log[idx];
            out.push(TimelineSample {
                t: tick,
                alloc_high: high,
                alloc_low: low,
            });
        }
        out
    }
}
