//! Shared data model: tables, distributions, slot ledgers, decisions, plans
//! and metrics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scenario "MB".
pub const MB: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A keyed row. Value columns are not materialized; `payload_bytes` is their
/// logical width and `payload_tag` identifies the row for correctness checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Row {
    pub key: u64,
    pub payload_bytes: u64,
    pub payload_tag: u64,
}

impl Row {
    pub fn new(key: u64, payload_bytes: u64, payload_tag: u64) -> Self {
        debug_assert!(payload_bytes >= 1);
        Row {
            key,
            payload_bytes,
            payload_tag,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub table: String,
    pub part_id: u32,
    pub rows: Vec<Row>,
    pub size_bytes: u64,
    pub home: NodeId,
}

impl Partition {
    pub fn new(table: impl Into<String>, part_id: u32, rows: Vec<Row>, home: NodeId) -> Self {
        let size_bytes = rows.iter().map(|r| r.payload_bytes).sum();
        Partition {
            table: table.into(),
            part_id,
            rows,
            size_bytes,
            home,
        }
    }

    /// Recomputed byte count; equals `size_bytes` for every well-formed partition.
    pub fn row_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.payload_bytes).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeShare {
    pub node: NodeId,
    pub size_bytes: u64,
    pub part_ids: Vec<u32>,
}

/// Per-table placement of bytes across nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DataDistribution {
    tables: BTreeMap<String, Vec<NodeShare>>,
}

impl DataDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a distribution from explicit `(node, bytes)` entries.
    pub fn from_entries<'a>(
        entries: impl IntoIterator<Item = (&'a str, Vec<(NodeId, u64)>)>,
    ) -> Self {
        let mut dist = DataDistribution::new();
        for (table, shares) in entries {
            let list = dist.tables.entry(table.to_string()).or_default();
            for (node, size_bytes) in shares {
                list.push(NodeShare {
                    node,
                    size_bytes,
                    part_ids: Vec::new(),
                });
            }
        }
        dist
    }

    pub fn add_partition(&mut self, table: &str, node: NodeId, part_id: u32, size_bytes: u64) {
        let list = self.tables.entry(table.to_string()).or_default();
        match list.iter_mut().find(|s| s.node == node) {
            Some(share) => {
                share.size_bytes += size_bytes;
                share.part_ids.push(part_id);
            }
            None => list.push(NodeShare {
                node,
                size_bytes,
                part_ids: vec![part_id],
            }),
        }
    }

    /// Registers a table with no bytes yet (e.g. an empty stage output).
    pub fn ensure_table(&mut self, table: &str) {
        self.tables.entry(table.to_string()).or_default();
    }

    pub fn contains(&self, table: &str) -> bool {
        self.tables.contains_key(table)
    }

    pub fn tables(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn shares(&self, table: &str) -> Result<&[NodeShare]> {
        self.tables
            .get(table)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::TableNotFound(table.to_string()))
    }

    pub fn total_table_size(&self, table: &str) -> Result<u64> {
        Ok(self.shares(table)?.iter().map(|s| s.size_bytes).sum())
    }

    /// Ascending, duplicate-free nodes holding at least one byte of `table`.
    pub fn table_nodes(&self, table: &str) -> Result<Vec<NodeId>> {
        let mut nodes: Vec<NodeId> = self
            .shares(table)?
            .iter()
            .filter(|s| s.size_bytes > 0)
            .map(|s| s.node)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        Ok(nodes)
    }

    /// Bytes of `table` held by `node`.
    pub fn bytes_on(&self, table: &str, node: NodeId) -> Result<u64> {
        Ok(self
            .shares(table)?
            .iter()
            .filter(|s| s.node == node)
            .map(|s| s.size_bytes)
            .sum())
    }

    /// Largest single-node fraction of the table's bytes (0 for empty tables).
    pub fn max_node_share(&self, table: &str) -> Result<f64> {
        let total = self.total_table_size(table)?;
        if total == 0 {
            return Ok(0.0);
        }
        let mut per_node: BTreeMap<NodeId, u64> = BTreeMap::new();
        for s in self.shares(table)? {
            *per_node.entry(s.node).or_default() += s.size_bytes;
        }
        let max = per_node.values().copied().max().unwrap_or(0);
        Ok(max as f64 / total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeSlots {
    pub total_slots: u32,
    pub free_slots: u32,
    pub queued_tasks: u32,
}

/// Point-in-time slot ledger, indexed by node id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeStatus {
    pub nodes: Vec<NodeSlots>,
}

impl NodeStatus {
    pub fn uniform(node_count: u32, slots: u32) -> Self {
        NodeStatus {
            nodes: vec![
                NodeSlots {
                    total_slots: slots,
                    free_slots: slots,
                    queued_tasks: 0,
                };
                node_count as usize
            ],
        }
    }

    /// Builds a status from per-node free counts, with the given capacity per node.
    pub fn from_free(total: u32, free: &[u32]) -> Self {
        NodeStatus {
            nodes: free
                .iter()
                .map(|&f| NodeSlots {
                    total_slots: total.max(f),
                    free_slots: f,
                    queued_tasks: 0,
                })
                .collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn all_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len() as u32).map(NodeId).collect()
    }

    pub fn get(&self, node: NodeId) -> Result<&NodeSlots> {
        self.nodes
            .get(node.index())
            .ok_or(Error::NodeNotFound(node))
    }

    pub fn free(&self, node: NodeId) -> Result<u32> {
        Ok(self.get(node)?.free_slots)
    }

    pub fn num_avail_slots(&self, nodes: &[NodeId]) -> Result<u32> {
        nodes.iter().try_fold(0u32, |acc, &n| Ok(acc + self.free(n)?))
    }

    pub fn total_free(&self) -> u32 {
        self.nodes.iter().map(|n| n.free_slots).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    pub node_count: u32,
    pub slots_per_node: u32,
    /// Bytes per simulated second, per node and direction.
    pub net_bandwidth: f64,
    /// Bytes per simulated second, per slot.
    pub compute_rate: f64,
    pub sort_factor: f64,
    pub rng_seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            node_count: 6,
            slots_per_node: 8,
            net_bandwidth: (100 * MB) as f64,
            compute_rate: (100 * MB) as f64,
            sort_factor: 1.5,
            rng_seed: 42,
        }
    }
}

impl ClusterSpec {
    pub fn with_shape(node_count: u32, slots_per_node: u32) -> Self {
        ClusterSpec {
            node_count,
            slots_per_node,
            ..ClusterSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidClusterSpec(msg.to_string()));
        if self.node_count == 0 {
            return bad("node_count must be >= 1");
        }
        if self.slots_per_node == 0 {
            return bad("slots_per_node must be >= 1");
        }
        for (name, v) in [
            ("net_bandwidth", self.net_bandwidth),
            ("compute_rate", self.compute_rate),
            ("sort_factor", self.sort_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidClusterSpec(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn total_slots(&self) -> u32 {
        self.node_count * self.slots_per_node
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        (0..self.node_count).map(NodeId).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    RoundRobin,
    Packing,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::RoundRobin => "round-robin",
            PolicyKind::Packing => "packing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchedulePolicy {
    pub kind: PolicyKind,
    candidate_nodes: Vec<NodeId>,
}

impl SchedulePolicy {
    /// Candidates are stored ascending; duplicates and empty sets are rejected.
    pub fn new(kind: PolicyKind, mut candidate_nodes: Vec<NodeId>) -> Result<Self> {
        if candidate_nodes.is_empty() {
            return Err(Error::EmptyCandidateSet);
        }
        candidate_nodes.sort_unstable();
        let before = candidate_nodes.len();
        candidate_nodes.dedup();
        if candidate_nodes.len() != before {
            return Err(Error::InvalidRequest(
                "duplicate node in candidate set".into(),
            ));
        }
        Ok(SchedulePolicy {
            kind,
            candidate_nodes,
        })
    }

    pub fn round_robin(nodes: Vec<NodeId>) -> Result<Self> {
        Self::new(PolicyKind::RoundRobin, nodes)
    }

    pub fn packing(nodes: Vec<NodeId>) -> Result<Self> {
        Self::new(PolicyKind::Packing, nodes)
    }

    pub fn candidate_nodes(&self) -> &[NodeId] {
        &self.candidate_nodes
    }
}

/// The `(func, scale, schedule)` output of a decision node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionTuple {
    pub func: String,
    pub scale: u32,
    pub schedule: SchedulePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Priority {
    High,
    Low,
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Priority::High => "high",
            Priority::Low => "low",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Side {
    Left,
    Right,
}

/// Which rows of a source partition an instance consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Select {
    Whole,
    /// Rows with `key % of == index`.
    Bucket { index: u32, of: u32 },
    /// Contiguous row range `index` out of `of` near-equal chunks.
    Chunk { index: u32, of: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct InputRef {
    pub table: String,
    pub part_id: u32,
    pub side: Side,
    pub select: Select,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    Count,
    SumBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpParams {
    pub selectivity: f64,
    pub aggregate: Aggregate,
    /// Fixed run time for synthetic tasks that carry no data.
    pub duration: Option<f64>,
}

impl Default for OpParams {
    fn default() -> Self {
        OpParams {
            selectivity: 1.0,
            aggregate: Aggregate::Count,
            duration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Placement {
    pub instance: u32,
    pub func: String,
    pub node: NodeId,
    pub inputs: Vec<InputRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionPlan {
    pub stage_id: u32,
    pub candidate_nodes: Vec<NodeId>,
    pub output_table: String,
    pub params: OpParams,
    pub placements: Vec<Placement>,
}

impl ExecutionPlan {
    /// Checks the plan against the tuple it was compiled from.
    pub fn check_against(&self, tuple: &DecisionTuple) -> Result<()> {
        if self.placements.len() != tuple.scale as usize {
            return Err(Error::InvalidPlan {
                stage: self.stage_id,
                reason: format!(
                    "{} placements for scale {}",
                    self.placements.len(),
                    tuple.scale
                ),
            });
        }
        self.check_candidates()
    }

    pub fn check_candidates(&self) -> Result<()> {
        for p in &self.placements {
            if !self.candidate_nodes.contains(&p.node) {
                return Err(Error::InvalidPlan {
                    stage: self.stage_id,
                    reason: format!("instance {} placed on {} outside candidates", p.instance, p.node),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimelineSample {
    pub t: u64,
    pub alloc_high: u32,
    pub alloc_low: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub completion_time: f64,
    pub resource_time_cost: f64,
    pub timeline: Vec<TimelineSample>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    #[test]
    fn total_table_size_sums_shares() {
        let d = DataDistribution::from_entries([("A", vec![(n(1), 100), (n(2), 300)])]);
        assert_eq!(d.total_table_size("A").unwrap(), 400);
        let z = DataDistribution::from_entries([("A", vec![(n(1), 0)])]);
        assert_eq!(z.total_table_size("A").unwrap(), 0);
        assert!(matches!(
            d.total_table_size("B"),
            Err(Error::TableNotFound(t)) if t == "B"
        ));
    }

    #[test]
    fn table_nodes_sorted_and_skips_empty() {
        let d = DataDistribution::from_entries([("A", vec![(n(2), 10), (n(1), 5)])]);
        assert_eq!(d.table_nodes("A").unwrap(), vec![n(1), n(2)]);
        let d = DataDistribution::from_entries([("A", vec![(n(1), 0), (n(3), 7)])]);
        assert_eq!(d.table_nodes("A").unwrap(), vec![n(3)]);
        assert!(d.table_nodes("X").is_err());
    }

    #[test]
    fn avail_slots() {
        let s = NodeStatus::from_free(8, &[3, 2]);
        assert_eq!(s.num_avail_slots(&[n(0)]).unwrap(), 3);
        assert_eq!(s.num_avail_slots(&[n(0), n(1)]).unwrap(), 5);
        let s = NodeStatus::from_free(8, &[0]);
        assert_eq!(s.num_avail_slots(&[n(0)]).unwrap(), 0);
        assert!(matches!(
            s.num_avail_slots(&[n(4)]),
            Err(Error::NodeNotFound(NodeId(4)))
        ));
    }

    #[test]
    fn policy_rejects_empty_and_duplicates() {
        assert!(matches!(
            SchedulePolicy::round_robin(vec![]),
            Err(Error::EmptyCandidateSet)
        ));
        assert!(SchedulePolicy::packing(vec![n(1), n(1)]).is_err());
        let p = SchedulePolicy::round_robin(vec![n(3), n(0)]).unwrap();
        assert_eq!(p.candidate_nodes(), &[n(0), n(3)]);
    }

    #[test]
    fn cluster_spec_validation() {
        assert!(ClusterSpec::default().validate().is_ok());
        assert!(ClusterSpec::with_shape(0, 8).validate().is_err());
        assert!(ClusterSpec::with_shape(2, 0).validate().is_err());
        let mut s = ClusterSpec::default();
        s.net_bandwidth = 0.0;
        assert!(s.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn size_and_nodes_match_fold_oracle(entries in prop::collection::vec((0u32..5, 0u64..1_000), 1..12)) {
                let dist = DataDistribution::from_entries([(
                    "A",
                    entries.iter().map(|&(node, b)| (NodeId(node), b)).collect(),
                )]);
                let total: u64 = entries.iter().fold(0, |acc, e| acc + e.1);
                prop_assert_eq!(dist.total_table_size("A").unwrap(), total);

                let mut expect: Vec<NodeId> = Vec::new();
                for node in 0..5u32 {
                    let bytes: u64 = entries.iter().filter(|e| e.0 == node).map(|e| e.1).sum();
                    if bytes > 0 {
                        expect.push(NodeId(node));
                    }
                }
                prop_assert_eq!(dist.table_nodes("A").unwrap(), expect);
            }
        }
    }
}
