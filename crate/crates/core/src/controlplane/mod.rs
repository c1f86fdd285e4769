//! Two-tier control plane.
//!
//! A [`GlobalController`] owns the cell's slot ledger ([`CellState`]) and
//! arbitrates optimistic, versioned commits from per-application
//! [`PrivateController`]s. Conflicts are detected per node; High-priority
//! requests that cannot be satisfied are deferred and hold a claim that keeps
//! Low requests off the slots they await. Running work is never preempted.

mod corun;

pub use corun::{corun, ChainSpec, CorunConfig, CorunOutcome};

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{NodeId, Priority, TimelineSample};

pub type Demand = BTreeMap<NodeId, u32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub count: u32,
    pub priority: Priority,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NodeLedger {
    total: u32,
    allocs: BTreeMap<String, Allocation>,
    /// Cell version of the last mutation touching this node.
    changed_at: u64,
}

impl NodeLedger {
    fn committed(&self) -> u32 {
        self.allocs.values().map(|a| a.count).sum()
    }
}

/// Versioned per-node slot ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellState {
    nodes: Vec<NodeLedger>,
    version: u64,
}

impl CellState {
    pub fn new(node_count: u32, slots_per_node: u32) -> Self {
        CellState {
            nodes: (0..node_count)
                .map(|_| NodeLedger {
                    total: slots_per_node,
                    allocs: BTreeMap::new(),
                    changed_at: 0,
                })
                .collect(),
            version: 0,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn total(&self, node: NodeId) -> u32 {
        self.nodes[node.index()].total
    }

    pub fn committed(&self, node: NodeId) -> u32 {
        self.nodes[node.index()].committed()
    }

    pub fn free(&self, node: NodeId) -> u32 {
        self.total(node) - self.committed(node)
    }

    pub fn changed_at(&self, node: NodeId) -> u64 {
        self.nodes[node.index()].changed_at
    }

    /// Slots `app` holds on each node where it holds any.
    pub fn held_by(&self, app: &str) -> Demand {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.allocs.get(app).map(|a| (NodeId(i as u32), a.count)))
            .collect()
    }

    /// Cell-wide committed slots as `(high, low)`.
    pub fn committed_by_priority(&self) -> (u32, u32) {
        let mut out = (0, 0);
        for a in self.nodes.iter().flat_map(|n| n.allocs.values()) {
            match a.priority {
                Priority::High => out.0 += a.count,
                Priority::Low => out.1 += a.count,
            }
        }
        out
    }

    /// Committed slots of one priority on `node`.
    pub fn committed_on(&self, node: NodeId, priority: Priority) -> u32 {
        self.nodes[node.index()]
            .allocs
            .values()
            .filter(|a| a.priority == priority)
            .map(|a| a.count)
            .sum()
    }

    fn check_nodes(&self, demand: &Demand) -> Result<()> {
        match demand.keys().find(|n| n.index() >= self.nodes.len()) {
            Some(&n) => Err(Error::NodeNotFound(n)),
            None => Ok(()),
        }
    }

    fn apply_commit(&mut self, app: &str, priority: Priority, demand: &Demand) -> u64 {
        self.version += 1;
        for (&n, &c) in demand {
            let ledger = &mut self.nodes[n.index()];
            ledger
                .allocs
                .entry(app.to_string())
                .or_insert(Allocation { count: 0, priority })
                .count += c;
            debug_assert!(ledger.committed() <= ledger.total);
            ledger.changed_at = self.version;
        }
        self.version
    }

    fn apply_release(&mut self, app: &str, demand: &Demand) -> Result<u64> {
        self.check_nodes(demand)?;
        for (&n, &c) in demand {
            let held = self.nodes[n.index()].allocs.get(app).map_or(0, |a| a.count);
            if c > held {
                return Err(Error::ReleaseExceedsHolding {
                    app: app.to_string(),
                    node: n,
                });
            }
        }
        self.version += 1;
        for (&n, &c) in demand {
            let ledger = &mut self.nodes[n.index()];
            let a = ledger.allocs.get_mut(app).expect("checked above");
            a.count -= c;
            if a.count == 0 {
                ledger.allocs.remove(app);
            }
            ledger.changed_at = self.version;
        }
        Ok(self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationRequest {
    pub app: String,
    pub demand: Demand,
    pub priority: Priority,
    pub based_on_version: u64,
}

impl AllocationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.demand.is_empty() || self.demand.values().any(|&c| c == 0) {
            return Err(Error::InvalidRequest(format!(
                "demand of `{}` must name nodes with counts >= 1",
                self.app
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitResult {
    Committed(u64),
    /// Nodes changed since the request's snapshot; re-snapshot and retry.
    Conflict(Vec<NodeId>),
    /// Nodes without enough available slots.
    Insufficient(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSnapshot {
    pub free: BTreeMap<NodeId, u32>,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogOp {
    Commit,
    Release,
}

/// One successful ledger mutation, in version order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub version: u64,
    pub op: LogOp,
    pub app: String,
    pub priority: Priority,
    pub demand: Demand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Commit,
    Conflict,
    Insufficient,
    Defer,
    Withdraw,
    Release,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Commit => "commit",
            Action::Conflict => "conflict",
            Action::Insufficient => "insufficient",
            Action::Defer => "defer",
            Action::Withdraw => "withdraw",
            Action::Release => "release",
        })
    }
}

/// One line of the control-plane event log, per node touched.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub t: f64,
    pub app: String,
    pub action: Action,
    pub node: NodeId,
    pub count: u32,
    pub priority: Priority,
    pub version: u64,
}

/// A deferred request that committed during a later release.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Granted {
    pub ticket: u64,
    pub app: String,
    pub demand: Demand,
    pub version: u64,
}

#[derive(Debug, Clone)]
struct Deferred {
    ticket: u64,
    req: AllocationRequest,
}

/// Retry order for competing requests: High before Low, then arrival order.
pub fn resolve_priority(pending: &[AllocationRequest]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pending.len()).collect();
    order.sort_by_key(|&i| (pending[i].priority, i));
    order
}

/// Rebuilds a ledger by applying `log` to a fresh cell of the given shape.
pub fn replay(log: &[LogEntry], node_count: u32, slots_per_node: u32) -> Result<CellState> {
    let mut cell = CellState::new(node_count, slots_per_node);
    for e in log {
        let v = match e.op {
            LogOp::Commit => {
                cell.check_nodes(&e.demand)?;
                cell.apply_commit(&e.app, e.priority, &e.demand)
            }
            LogOp::Release => cell.apply_release(&e.app, &e.demand)?,
        };
        debug_assert_eq!(v, e.version);
    }
    Ok(cell)
}

/// Serialized arbiter over the cell. All commits and releases are applied
/// one at a time; `now` stamps the event log.
#[derive(Debug, Clone)]
pub struct GlobalController {
    cell: CellState,
    slots_per_node: u32,
    apps: BTreeMap<String, Priority>,
    deferred: Vec<Deferred>,
    next_ticket: u64,
    log: Vec<LogEntry>,
    events: Vec<EventRecord>,
    alloc_log: Vec<(f64, u32, u32)>,
    now: f64,
}

impl GlobalController {
    pub fn new(node_count: u32, slots_per_node: u32) -> Self {
        GlobalController {
            cell: CellState::new(node_count, slots_per_node),
            slots_per_node,
            apps: BTreeMap::new(),
            deferred: Vec::new(),
            next_ticket: 0,
            log: Vec::new(),
            events: Vec::new(),
            alloc_log: vec![(0.0, 0, 0)],
            now: 0.0,
        }
    }

    pub fn set_time(&mut self, now: f64) {
        debug_assert!(now >= self.now);
        self.now = now;
    }

    pub fn register_app(&mut self, app: &str, priority: Priority) -> Result<PrivateController> {
        if self.apps.contains_key(app) {
            return Err(Error::AppExists(app.to_string()));
        }
        self.apps.insert(app.to_string(), priority);
        Ok(PrivateController {
            app: app.to_string(),
            priority,
            held: Demand::new(),
        })
    }

    pub fn cell(&self) -> &CellState {
        &self.cell
    }

    pub fn snapshot_cell(&self) -> CellSnapshot {
        CellSnapshot {
            free: (0..self.cell.node_count() as u32)
                .map(|i| (NodeId(i), self.cell.free(NodeId(i))))
                .collect(),
            version: self.cell.version,
        }
    }

    /// Slots on `node` awaited by deferred High requests.
    pub fn claimed(&self, node: NodeId) -> u32 {
        self.deferred
            .iter()
            .filter(|d| d.req.priority == Priority::High)
            .filter_map(|d| d.req.demand.get(&node))
            .sum()
    }

    /// Free slots on `node` that a request of `priority` may take.
    pub fn available(&self, node: NodeId, priority: Priority) -> u32 {
        let free = self.cell.free(node);
        match priority {
            Priority::High => free,
            Priority::Low => free.saturating_sub(self.claimed(node)),
        }
    }

    fn check_app(&self, req: &AllocationRequest) -> Result<()> {
        match self.apps.get(&req.app) {
            None => Err(Error::AppNotRegistered(req.app.clone())),
            Some(&p) if p != req.priority => Err(Error::InvalidRequest(format!(
                "`{}` registered as {p} but requested as {}",
                req.app, req.priority
            ))),
            Some(_) => Ok(()),
        }
    }

    /// Optimistic commit: conflicts only if a demanded node changed since
    /// the request's snapshot; otherwise commits if every node has room.
    pub fn try_commit(&mut self, req: &AllocationRequest) -> Result<CommitResult> {
        self.check_app(req)?;
        req.validate()?;
        self.cell.check_nodes(&req.demand)?;

        if req.based_on_version < self.cell.version {
            let stale: Vec<NodeId> = req
                .demand
                .keys()
                .copied()
                .filter(|&n| self.cell.changed_at(n) > req.based_on_version)
                .collect();
            if !stale.is_empty() {
                self.record(req, Action::Conflict, self.cell.version);
                return Ok(CommitResult::Conflict(stale));
            }
        }
        let short = self.short_nodes(req, None);
        if !short.is_empty() {
            self.record(req, Action::Insufficient, self.cell.version);
            return Ok(CommitResult::Insufficient(short));
        }
        Ok(CommitResult::Committed(self.commit(req)))
    }

    fn short_nodes(&self, req: &AllocationRequest, exclude: Option<u64>) -> Vec<NodeId> {
        req.demand
            .iter()
            .filter(|(&n, &c)| {
                let free = self.cell.free(n);
                let avail = match req.priority {
                    Priority::High => free,
                    Priority::Low => {
                        let claimed: u32 = self
                            .deferred
                            .iter()
                            .filter(|d| Some(d.ticket) != exclude && d.req.priority == Priority::High)
                            .filter_map(|d| d.req.demand.get(&n))
                            .sum();
                        free.saturating_sub(claimed)
                    }
                };
                avail < c
            })
            .map(|(&n, _)| n)
            .collect()
    }

    fn commit(&mut self, req: &AllocationRequest) -> u64 {
        let v = self.cell.apply_commit(&req.app, req.priority, &req.demand);
        self.log.push(LogEntry {
            version: v,
            op: LogOp::Commit,
            app: req.app.clone(),
            priority: req.priority,
            demand: req.demand.clone(),
        });
        self.record(req, Action::Commit, v);
        self.log_alloc();
        v
    }

    /// Queues a request that could not commit. High requests claim their
    /// demanded slots against Low requests until they commit or withdraw.
    pub fn defer(&mut self, req: AllocationRequest) -> Result<u64> {
        self.check_app(&req)?;
        req.validate()?;
        self.cell.check_nodes(&req.demand)?;
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        self.record(&req, Action::Defer, self.cell.version);
        self.deferred.push(Deferred { ticket, req });
        Ok(ticket)
    }

    pub fn withdraw(&mut self, ticket: u64) -> bool {
        match self.deferred.iter().position(|d| d.ticket == ticket) {
            Some(i) => {
                let d = self.deferred.remove(i);
                self.record(&d.req, Action::Withdraw, self.cell.version);
                true
            }
            None => false,
        }
    }

    pub fn pending(&self) -> usize {
        self.deferred.len()
    }

    /// Returns slots to the cell, then re-evaluates deferred requests in
    /// priority order; those that now fit commit in this same step.
    pub fn release(&mut self, app: &str, demand: &Demand) -> Result<(u64, Vec<Granted>)> {
        let priority = *self
            .apps
            .get(app)
            .ok_or_else(|| Error::AppNotRegistered(app.to_string()))?;
        let v = self.cell.apply_release(app, demand)?;
        self.log.push(LogEntry {
            version: v,
            op: LogOp::Release,
            app: app.to_string(),
            priority,
            demand: demand.clone(),
        });
        let req = AllocationRequest {
            app: app.to_string(),
            demand: demand.clone(),
            priority,
            based_on_version: v,
        };
        self.record(&req, Action::Release, v);
        self.log_alloc();
        Ok((v, self.reevaluate()))
    }

    fn reevaluate(&mut self) -> Vec<Granted> {
        let reqs: Vec<AllocationRequest> = self.deferred.iter().map(|d| d.req.clone()).collect();
        let tickets: Vec<u64> = resolve_priority(&reqs)
            .into_iter()
            .map(|i| self.deferred[i].ticket)
            .collect();
        let mut granted = Vec::new();
        for ticket in tickets {
            let i = self
                .deferred
                .iter()
                .position(|d| d.ticket == ticket)
                .expect("tickets only leave the queue here");
            if !self.short_nodes(&self.deferred[i].req, Some(ticket)).is_empty() {
                continue;
            }
            let mut req = self.deferred.remove(i).req;
            req.based_on_version = self.cell.version;
            let version = self.commit(&req);
            granted.push(Granted {
                ticket,
                app: req.app,
                demand: req.demand,
                version,
            });
        }
        granted
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    fn record(&mut self, req: &AllocationRequest, action: Action, version: u64) {
        for (&node, &count) in &req.demand {
            self.events.push(EventRecord {
                t: self.now,
                app: req.app.clone(),
                action,
                node,
                count,
                priority: req.priority,
                version,
            });
        }
    }

    fn log_alloc(&mut self) {
        let (high, low) = self.cell.committed_by_priority();
        match self.alloc_log.last_mut() {
            Some(last) if last.0 == self.now => {
                last.1 = high;
                last.2 = low;
            }
            _ => self.alloc_log.push((self.now, high, low)),
        }
    }

    /// Committed slots sampled at whole seconds `0..=⌈until⌉`.
    pub fn timeline_until(&self, until: f64) -> Vec<TimelineSample> {
        let last_tick = until.max(0.0).ceil() as u64;
        let mut idx = 0;
        (0..=last_tick)
            .map(|tick| {
                while idx + 1 < self.alloc_log.len() && self.alloc_log[idx + 1].0 <= tick as f64 {
                    idx += 1;
                }
                let (_, high, low) = self.alloc_log[idx];
                TimelineSample {
                    t: tick,
                    alloc_high: high,
                    alloc_low: low,
                }
            })
            .collect()
    }

    /// Checks that every controller's holdings match the ledger.
    pub fn audit(&self, controllers: &[&PrivateController]) -> Result<()> {
        for c in controllers {
            if self.cell.held_by(&c.app) != c.held {
                return Err(Error::InvalidRequest(format!(
                    "holdings of `{}` diverge from the ledger",
                    c.app
                )));
            }
        }
        Ok(())
    }

    pub fn slots_per_node(&self) -> u32 {
        self.slots_per_node
    }
}

/// Per-application view of its own holdings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateController {
    pub app: String,
    pub priority: Priority,
    held: Demand,
}

impl PrivateController {
    pub fn held(&self) -> &Demand {
        &self.held
    }

    pub fn held_on(&self, node: NodeId) -> u32 {
        self.held.get(&node).copied().unwrap_or(0)
    }

    /// Builds a request against the given snapshot version.
    pub fn request_at(&self, demand: Demand, version: u64) -> AllocationRequest {
        AllocationRequest {
            app: self.app.clone(),
            demand,
            priority: self.priority,
            based_on_version: version,
        }
    }

    /// Snapshots, then tries to commit `demand`.
    pub fn request(&mut self, global: &mut GlobalController, demand: Demand) -> Result<CommitResult> {
        let req = self.request_at(demand, global.snapshot_cell().version);
        self.submit(global, &req)
    }

    pub fn submit(&mut self, global: &mut GlobalController, req: &AllocationRequest) -> Result<CommitResult> {
        let r = global.try_commit(req)?;
        if matches!(r, CommitResult::Committed(_)) {
            self.absorb(&req.demand);
        }
        Ok(r)
    }

    pub fn release(&mut self, global: &mut GlobalController, demand: &Demand) -> Result<(u64, Vec<Granted>)> {
        for (&n, &c) in demand {
            if c > self.held_on(n) {
                return Err(Error::ReleaseExceedsHolding {
                    app: self.app.clone(),
                    node: n,
                });
            }
        }
        let out = global.release(&self.app, demand)?;
        for (&n, &c) in demand {
            let h = self.held.get_mut(&n).expect("checked above");
            *h -= c;
            if *h == 0 {
                self.held.remove(&n);
            }
        }
        Ok(out)
    }

    /// Records slots granted to this app outside [`Self::request`], e.g. by
    /// a deferred request committing during another app's release.
    pub fn absorb(&mut self, demand: &Demand) {
        for (&n, &c) in demand {
            *self.held.entry(n).or_default() += c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(pairs: &[(u32, u32)]) -> Demand {
        pairs.iter().map(|&(n, c)| (NodeId(n), c)).collect()
    }

    #[test]
    fn register_and_snapshot() {
        let mut g = GlobalController::new(6, 8);
        let q = g.register_app("query", Priority::High).unwrap();
        assert!(q.held().is_empty());
        let _bg = g.register_app("bg", Priority::Low).unwrap();
        assert!(matches!(g.register_app("query", Priority::Low), Err(Error::AppExists(_))));

        let s = g.snapshot_cell();
        assert_eq!(s.version, 0);
        assert!(s.free.values().all(|&f| f == 8));
        assert_eq!(g.snapshot_cell(), s);
    }

    #[test]
    fn commit_examples() {
        let mut g = GlobalController::new(6, 8);
        let mut q = g.register_app("q", Priority::High).unwrap();
        assert_eq!(q.request(&mut g, d(&[(0, 3)])).unwrap(), CommitResult::Committed(1));
        let s = g.snapshot_cell();
        assert_eq!((s.free[&NodeId(0)], s.version), (5, 1));

        let mut g = GlobalController::new(1, 8);
        let mut a = g.register_app("a", Priority::Low).unwrap();
        let mut b = g.register_app("b", Priority::Low).unwrap();
        let v = g.snapshot_cell().version;
        let ra = a.request_at(d(&[(0, 8)]), v);
        let rb = b.request_at(d(&[(0, 8)]), v);
        assert!(matches!(a.submit(&mut g, &ra).unwrap(), CommitResult::Committed(_)));
        assert_eq!(b.submit(&mut g, &rb).unwrap(), CommitResult::Conflict(vec![NodeId(0)]));

        let mut g = GlobalController::new(1, 8);
        let mut a = g.register_app("a", Priority::Low).unwrap();
        assert_eq!(
            a.request(&mut g, d(&[(0, 9)])).unwrap(),
            CommitResult::Insufficient(vec![NodeId(0)])
        );
        let stranger = AllocationRequest {
            app: "nobody".into(),
            demand: d(&[(0, 1)]),
            priority: Priority::Low,
            based_on_version: 0,
        };
        assert!(matches!(g.try_commit(&stranger), Err(Error::AppNotRegistered(_))));
        assert!(a.request(&mut g, d(&[(0, 0)])).is_err());
    }

    #[test]
    fn untouched_nodes_do_not_conflict() {
        let mut g = GlobalController::new(2, 4);
        let mut a = g.register_app("a", Priority::Low).unwrap();
        let mut b = g.register_app("b", Priority::Low).unwrap();
        let v = g.snapshot_cell().version;
        a.request(&mut g, d(&[(0, 4)])).unwrap();
        let r = b.submit(&mut g, &b.request_at(d(&[(1, 4)]), v)).unwrap();
        assert!(matches!(r, CommitResult::Committed(_)));
    }

    #[test]
    fn priority_arbitration() {
        let mut g = GlobalController::new(1, 2);
        let mut hog = g.register_app("hog", Priority::Low).unwrap();
        let mut hi = g.register_app("hi", Priority::High).unwrap();
        let mut lo = g.register_app("lo", Priority::Low).unwrap();
        hog.request(&mut g, d(&[(0, 2)])).unwrap();

        // Both wait for n0's last slot; High is deferred with a claim.
        let rh = hi.request_at(d(&[(0, 1)]), g.snapshot_cell().version);
        assert!(matches!(hi.submit(&mut g, &rh).unwrap(), CommitResult::Insufficient(_)));
        let th = g.defer(rh).unwrap();
        let rl = lo.request_at(d(&[(0, 1)]), g.snapshot_cell().version);
        assert!(matches!(lo.submit(&mut g, &rl).unwrap(), CommitResult::Insufficient(_)));
        let tl = g.defer(rl).unwrap();

        // One slot frees: High commits in the same step, Low stays queued.
        let (_, granted) = hog.release(&mut g, &d(&[(0, 1)])).unwrap();
        assert_eq!(granted.len(), 1);
        assert_eq!(granted[0].ticket, th);
        hi.absorb(&granted[0].demand);
        // The next slot goes to the queued Low request.
        let (_, granted) = hog.release(&mut g, &d(&[(0, 1)])).unwrap();
        assert_eq!(granted.iter().map(|x| x.ticket).collect::<Vec<_>>(), vec![tl]);
        lo.absorb(&granted[0].demand);
        g.audit(&[&hog, &hi, &lo]).unwrap();
    }

    #[test]
    fn claims_block_low_until_withdrawn() {
        let mut g = GlobalController::new(1, 2);
        let mut hog = g.register_app("hog", Priority::Low).unwrap();
        let hi = g.register_app("hi", Priority::High).unwrap();
        let mut lo = g.register_app("lo", Priority::Low).unwrap();
        hog.request(&mut g, d(&[(0, 1)])).unwrap();
        let t = g.defer(hi.request_at(d(&[(0, 2)]), g.snapshot_cell().version)).unwrap();
        assert!(matches!(
            lo.request(&mut g, d(&[(0, 1)])).unwrap(),
            CommitResult::Insufficient(_)
        ));
        assert!(g.withdraw(t));
        assert!(matches!(lo.request(&mut g, d(&[(0, 1)])).unwrap(), CommitResult::Committed(_)));
    }

    #[test]
    fn fifo_among_low() {
        let reqs: Vec<AllocationRequest> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, app)| AllocationRequest {
                app: app.to_string(),
                demand: d(&[(0, 1)]),
                priority: if i == 2 { Priority::High } else { Priority::Low },
                based_on_version: 0,
            })
            .collect();
        assert_eq!(resolve_priority(&reqs), vec![2, 0, 1]);
    }

    #[test]
    fn release_examples() {
        let mut g = GlobalController::new(1, 8);
        let mut a = g.register_app("a", Priority::Low).unwrap();
        a.request(&mut g, d(&[(0, 2)])).unwrap();
        a.release(&mut g, &d(&[(0, 2)])).unwrap();
        assert_eq!(g.cell().free(NodeId(0)), 8);

        a.request(&mut g, d(&[(0, 1)])).unwrap();
        let before = g.cell().clone();
        assert!(matches!(
            g.release("a", &d(&[(0, 2)])),
            Err(Error::ReleaseExceedsHolding { .. })
        ));
        assert_eq!(g.cell(), &before);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Request { app: usize, node: u32, count: u32, lag: u64 },
        Release { app: usize, node: u32, count: u32 },
        Defer { app: usize, node: u32, count: u32 },
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0usize..3, 0u32..3, 1u32..6, 0u64..4)
                .prop_map(|(app, node, count, lag)| Op::Request { app, node, count, lag }),
            (0usize..3, 0u32..3, 1u32..4).prop_map(|(app, node, count)| Op::Release { app, node, count }),
            (0usize..3, 0u32..3, 1u32..4).prop_map(|(app, node, count)| Op::Defer { app, node, count }),
        ]
    }

    proptest! {
        #[test]
        fn ledger_safety_and_replay(ops in prop::collection::vec(op(), 1..60)) {
            let mut g = GlobalController::new(3, 4);
            let prios = [Priority::High, Priority::Low, Priority::Low];
            let mut ctrls: Vec<PrivateController> = prios
                .iter()
                .enumerate()
                .map(|(i, &p)| g.register_app(&format!("app{i}"), p).unwrap())
                .collect();
            let mut last_version = 0;
            for op in ops {
                match op {
                    Op::Request { app, node, count, lag } => {
                        let v = g.snapshot_cell().version.saturating_sub(lag);
                        let req = ctrls[app].request_at(d(&[(node, count)]), v);
                        ctrls[app].submit(&mut g, &req).unwrap();
                    }
                    Op::Release { app, node, count } => {
                        let count = count.min(ctrls[app].held_on(NodeId(node)));
                        if count > 0 {
                            let (_, granted) = ctrls[app].release(&mut g, &d(&[(node, count)])).unwrap();
                            for gr in granted {
                                let i = ctrls.iter().position(|c| c.app == gr.app).unwrap();
                                ctrls[i].absorb(&gr.demand);
                            }
                        }
                    }
                    Op::Defer { app, node, count } => {
                        let req = ctrls[app].request_at(d(&[(node, count)]), g.snapshot_cell().version);
                        g.defer(req).unwrap();
                    }
                }
                for n in 0..3 {
                    prop_assert!(g.cell().committed(NodeId(n)) <= 4);
                }
                prop_assert!(g.cell().version() >= last_version);
                last_version = g.cell().version();
            }
            let refs: Vec<&PrivateController> = ctrls.iter().collect();
            g.audit(&refs).unwrap();
            let versions: Vec<u64> = g.log().iter().map(|e| e.version).collect();
            prop_assert!(versions.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(&replay(g.log(), 3, 4).unwrap(), g.cell());
        }
    }
}
