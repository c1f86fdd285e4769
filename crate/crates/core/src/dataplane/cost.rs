//! Analytic time model: compute time per slot plus FIFO-serialized per-node
//! egress/ingress links. Intra-node transfers are free.

use crate::model::{ClusterSpec, NodeId};
use crate::operators::{hash_join_work, merge_join_work, FunctionKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub from: NodeId,
    pub to: NodeId,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub compute_rate: f64,
    pub net_bandwidth: f64,
    pub sort_factor: f64,
}

impl CostModel {
    pub fn from_spec(spec: &ClusterSpec) -> Self {
        CostModel {
            compute_rate: spec.compute_rate,
            net_bandwidth: spec.net_bandwidth,
            sort_factor: spec.sort_factor,
        }
    }

    pub fn compute_time(&self, work_bytes: f64) -> f64 {
        work_bytes / self.compute_rate
    }

    /// Declared work of one instance of `kind` over `left`/`right` input bytes.
    /// For hash joins `right` is the build side.
    pub fn work_bytes(&self, kind: FunctionKind, left: u64, right: u64) -> f64 {
        match kind {
            FunctionKind::ScanMap | FunctionKind::GroupBy => (left + right) as f64,
            FunctionKind::MergeJoin => merge_join_work(left, right, self.sort_factor),
            FunctionKind::HashJoin => hash_join_work(right, left),
            FunctionKind::ChainTask => 0.0,
        }
    }

    /// Time until every transfer in `route` has arrived, starting from idle links.
    pub fn network_time(&self, node_count: usize, route: &[Transfer]) -> f64 {
        let mut links = LinkSchedule::new(node_count, self.net_bandwidth);
        route
            .iter()
            .map(|t| links.schedule(0.0, t.from, t.to, t.bytes))
            .fold(0.0, f64::max)
    }

    /// `compute_time + network_time` for one instance and its input route.
    pub fn charge_task_time(
        &self,
        kind: FunctionKind,
        left_bytes: u64,
        right_bytes: u64,
        node_count: usize,
        route: &[Transfer],
    ) -> f64 {
        self.compute_time(self.work_bytes(kind, left_bytes, right_bytes))
            + self.network_time(node_count, route)
    }
}

/// Per-node egress and ingress queues. A cross-node transfer occupies the
/// sender's egress and the receiver's ingress, each for `bytes / bandwidth`,
/// queued behind earlier transfers on the same link; it arrives when both
/// have drained.
#[derive(Debug, Clone)]
pub struct LinkSchedule {
    bandwidth: f64,
    egress_free: Vec<f64>,
    ingress_free: Vec<f64>,
}

impl LinkSchedule {
    pub fn new(node_count: usize, bandwidth: f64) -> Self {
        LinkSchedule {
            bandwidth,
            egress_free: vec![0.0; node_count],
            ingress_free: vec![0.0; node_count],
        }
    }

    /// Books a transfer issued at `now` and returns its arrival time.
    pub fn schedule(&mut self, now: f64, from: NodeId, to: NodeId, bytes: u64) -> f64 {
        if from == to || bytes == 0 {
            return now;
        }
        let dur = bytes as f64 / self.bandwidth;
        let eg = &mut self.egress_free[from.index()];
        *eg = eg.max(now) + dur;
        let ing = &mut self.ingress_free[to.index()];
        *ing = ing.max(now) + dur;
        self.egress_free[from.index()].max(self.ingress_free[to.index()])
    }
}
