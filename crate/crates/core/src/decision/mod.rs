//! Decision nodes and decision workflows.
//!
//! A decision node maps a snapshot of runtime state to a
//! [`DecisionTuple`]; a workflow is a DAG of stages, each driven by one node.
//! Tuples are compiled into execution plans and submitted to the dataplane.

mod compile;
mod placement;
mod workflow;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

pub use compile::{compile, CompiledStage, ExchangePattern, StageMeta};
pub use placement::{place, place_packing, place_round_robin};
pub use workflow::{
    run_workflow, DecisionWorkflow, RuntimeReport, StageDecision, StageTiming, WorkflowOutcome,
    WorkflowRun, WorkflowStage,
};

use crate::error::{Error, Result};
use crate::model::{ClusterSpec, DataDistribution, DecisionTuple, NodeStatus, SchedulePolicy};
use crate::operators::FunctionKind;

/// Consistent runtime snapshot handed to decision nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeView {
    pub data_dist: DataDistribution,
    pub node_status: NodeStatus,
    pub cluster: ClusterSpec,
}

/// What a decision node's logic may read.
pub struct DecisionContext<'a> {
    pub view: &'a RuntimeView,
    pub config: &'a BTreeMap<String, f64>,
    /// The stage's declared input tables, in order.
    pub inputs: &'a [String],
}

impl DecisionContext<'_> {
    pub fn param(&self, key: &str) -> Result<f64> {
        self.config
            .get(key)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing decision parameter `{key}`")))
    }

    pub fn input(&self, i: usize) -> Result<&str> {
        self.inputs
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidWorkflow(format!("stage has no input #{i}")))
    }
}

pub type DecisionLogic = Arc<dyn Fn(&DecisionContext<'_>) -> Result<DecisionTuple> + Send + Sync>;

#[derive(Clone)]
pub struct DecisionNode {
    pub name: String,
    pub config: BTreeMap<String, f64>,
    logic: DecisionLogic,
}

impl fmt::Debug for DecisionNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecisionNode")
            .field("name", &self.name)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl DecisionNode {
    pub fn new<F>(name: impl Into<String>, config: BTreeMap<String, f64>, logic: F) -> Self
    where
        F: Fn(&DecisionContext<'_>) -> Result<DecisionTuple> + Send + Sync + 'static,
    {
        DecisionNode {
            name: name.into(),
            config,
            logic: Arc::new(logic),
        }
    }

    /// Runs the node's logic and validates the resulting tuple.
    pub fn evaluate(&self, view: &RuntimeView, inputs: &[String]) -> Result<DecisionTuple> {
        let ctx = DecisionContext {
            view,
            config: &self.config,
            inputs,
        };
        let invalid = |reason: String| Error::InvalidDecision {
            node: self.name.clone(),
            reason,
        };
        let tuple = (self.logic)(&ctx).map_err(|e| match e {
            Error::EmptyCandidateSet => invalid("empty candidate set".into()),
            other => other,
        })?;
        if tuple.scale < 1 {
            return Err(invalid("scale must be >= 1".into()));
        }
        if tuple.schedule.candidate_nodes().is_empty() {
            return Err(invalid("empty candidate set".into()));
        }
        FunctionKind::lookup(&tuple.func).map_err(|_| invalid(format!("unknown function `{}`", tuple.func)))?;
        Ok(tuple)
    }
}

/// Free function form of [`DecisionNode::evaluate`].
pub fn evaluate(node: &DecisionNode, view: &RuntimeView, inputs: &[String]) -> Result<DecisionTuple> {
    node.evaluate(view, inputs)
}

/// Thresholds of the built-in join decision.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JoinDecisionConfig {
    /// Size-ratio threshold: merge join only when `sizeA / sizeB < t1`.
    pub t1: f64,
    /// Node-count threshold: merge join only when `|nodeA| > t2`.
    pub t2: u32,
    /// Bytes per merge-join instance.
    pub a: f64,
}

impl JoinDecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0 && self.t2 >= 1 && self.a > 0.0) {
            return Err(Error::Config(format!("invalid join decision config {self:?}")));
        }
        Ok(())
    }

    fn to_map(self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("t1".to_string(), self.t1),
            ("t2".to_string(), self.t2 as f64),
            ("a".to_string(), self.a),
        ])
    }
}

/// The join decision: merge join over `nodeA ∪ nodeB` when the tables are
/// comparable in size and A is spread over enough nodes, otherwise a hash
/// join packed onto A's nodes using every free slot there.
///
/// `scale` rounds up with a floor of 1. An empty B counts as an infinite
/// size ratio.
pub fn builtin_join_decision(
    view: &RuntimeView,
    table_a: &str,
    table_b: &str,
    cfg: &JoinDecisionConfig,
) -> Result<DecisionTuple> {
    let dist = &view.data_dist;
    let size_a = dist.total_table_size(table_a)?;
    let size_b = dist.total_table_size(table_b)?;
    let node_a = dist.table_nodes(table_a)?;
    let node_b = dist.table_nodes(table_b)?;

    let ratio = if size_b == 0 {
        f64::INFINITY
    } else {
        size_a as f64 / size_b as f64
    };
    if ratio < cfg.t1 && node_a.len() as u32 > cfg.t2 {
        let scale = (((size_a + size_b) as f64) / cfg.a).ceil().max(1.0) as u32;
        let mut union = node_a;
        union.extend(node_b);
        union.sort_unstable();
        union.dedup();
        Ok(DecisionTuple {
            func: FunctionKind::MergeJoin.name().into(),
            scale,
            schedule: SchedulePolicy::round_robin(union)?,
        })
    } else {
        let scale = view.node_status.num_avail_slots(&node_a)?.max(1);
        Ok(DecisionTuple {
            func: FunctionKind::HashJoin.name().into(),
            scale,
            schedule: SchedulePolicy::packing(node_a)?,
        })
    }
}

/// Decision node wrapping [`builtin_join_decision`]; input 0 is A, input 1 is B.
pub fn join_decision_node(cfg: JoinDecisionConfig) -> DecisionNode {
    DecisionNode::new("join_decision", cfg.to_map(), move |ctx| {
        builtin_join_decision(ctx.view, ctx.input(0)?, ctx.input(1)?, &cfg)
    })
}

/// Static fallback: a fixed function and scale, round-robin over all nodes.
pub fn default_decision(func: &str, scale: u32) -> DecisionNode {
    let func = func.to_string();
    let config = BTreeMap::from([("scale".to_string(), scale as f64)]);
    DecisionNode::new("static", config, move |ctx| {
        Ok(DecisionTuple {
            func: func.clone(),
            scale,
            schedule: SchedulePolicy::round_robin(ctx.view.cluster.nodes())?,
        })
    })
}

/// Packing over the input's nodes when a single node holds more than
/// `skew_threshold` of its bytes, round-robin over all nodes otherwise.
pub fn scheduling_choice_node(func: &str, scale: u32, skew_threshold: f64) -> DecisionNode {
    let func = func.to_string();
    let config = BTreeMap::from([
        ("scale".to_string(), scale as f64),
        ("skew_threshold".to_string(), skew_threshold),
    ]);
    DecisionNode::new("scheduling_choice", config, move |ctx| {
        let table = ctx.input(0)?;
        let share = ctx.view.data_dist.max_node_share(table)?;
        let schedule = if share > ctx.param("skew_threshold")? {
            SchedulePolicy::packing(ctx.view.data_dist.table_nodes(table)?)?
        } else {
            SchedulePolicy::round_robin(ctx.view.cluster.nodes())?
        };
        Ok(DecisionTuple {
            func: func.clone(),
            scale,
            schedule,
        })
    })
}
