use std::collections::{BTreeMap, BTreeSet};

use super::compile::{compile, StageMeta};
use super::{DecisionNode, RuntimeView};
use crate::dataplane::{Cluster, StageId};
use crate::error::{Error, Result};
use crate::model::{DecisionTuple, Metrics, NodeId, NodeStatus, Partition, Priority};

#[derive(Debug, Clone)]
pub struct WorkflowStage {
    pub node: DecisionNode,
    pub meta: StageMeta,
}

/// A DAG of stages linked by table names: a stage depends on the stages
/// producing its inputs. Inputs nobody produces are base tables.
#[derive(Debug, Clone)]
pub struct DecisionWorkflow {
    stages: Vec<WorkflowStage>,
    order: Vec<usize>,
}

impl DecisionWorkflow {
    pub fn new(stages: Vec<WorkflowStage>) -> Result<Self> {
        let mut producer = BTreeMap::new();
        let mut names = BTreeSet::new();
        for (i, s) in stages.iter().enumerate() {
            if !names.insert(s.meta.name.as_str()) {
                return Err(Error::InvalidWorkflow(format!("duplicate stage `{}`", s.meta.name)));
            }
            if producer.insert(s.meta.output.as_str(), i).is_some() {
                return Err(Error::InvalidWorkflow(format!(
                    "table `{}` produced twice",
                    s.meta.output
                )));
            }
        }

        // Kahn's algorithm, lowest stage index first for a stable order.
        let mut indegree = vec![0usize; stages.len()];
        let mut children = vec![Vec::new(); stages.len()];
        for (i, s) in stages.iter().enumerate() {
            for input in &s.meta.inputs {
                if let Some(&p) = producer.get(input.as_str()) {
                    indegree[i] += 1;
                    children[p].push(i);
                }
            }
        }
        let mut ready: BTreeSet<usize> = (0..stages.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(stages.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != stages.len() {
            let stuck: Vec<&str> = (0..stages.len())
                .filter(|i| !order.contains(i))
                .map(|i| stages[i].meta.name.as_str())
                .collect();
            return Err(Error::InvalidWorkflow(format!("cycle through {stuck:?}")));
        }
        Ok(DecisionWorkflow { stages, order })
    }

    pub fn stages(&self) -> &[WorkflowStage] {
        &self.stages
    }

    /// Stages in execution order.
    pub fn ordered(&self) -> impl Iterator<Item = &WorkflowStage> {
        self.order.iter().map(|&i| &self.stages[i])
    }

    /// Tables read but not produced by the workflow.
    pub fn base_tables(&self) -> BTreeSet<&str> {
        let produced: BTreeSet<&str> = self.stages.iter().map(|s| s.meta.output.as_str()).collect();
        self.stages
            .iter()
            .flat_map(|s| s.meta.inputs.iter().map(String::as_str))
            .filter(|t| !produced.contains(t))
            .collect()
    }

    /// Outputs nobody consumes.
    pub fn sink_tables(&self) -> Vec<&str> {
        let consumed: BTreeSet<&str> = self
            .stages
            .iter()
            .flat_map(|s| s.meta.inputs.iter().map(String::as_str))
            .collect();
        self.ordered()
            .map(|s| s.meta.output.as_str())
            .filter(|t| !consumed.contains(t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageDecision {
    pub stage: String,
    pub tuple: DecisionTuple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: String,
    pub submitted_at: f64,
    pub first_start: Option<f64>,
    pub finished_at: f64,
    pub shuffle_bytes: u64,
    pub instances: u32,
    /// Distinct nodes the stage's instances ran on.
    pub nodes: Vec<NodeId>,
}

/// What the runtime decided and observed, stage by stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuntimeReport {
    pub decisions: Vec<StageDecision>,
    pub stages: Vec<StageTiming>,
}

#[derive(Debug)]
struct Active {
    stage: usize,
    map: Option<StageId>,
    main: StageId,
}

/// Drives a workflow on a cluster one stage at a time. Each stage is decided
/// from a fresh snapshot taken when its predecessors have finished.
#[derive(Debug)]
pub struct WorkflowRun {
    workflow: DecisionWorkflow,
    priority: Priority,
    id_base: u32,
    pos: usize,
    active: Option<Active>,
    report: RuntimeReport,
}

impl WorkflowRun {
    /// Stage ids are allocated from `id_base` upward, two per stage.
    pub fn new(workflow: DecisionWorkflow, priority: Priority, id_base: u32) -> Self {
        WorkflowRun {
            workflow,
            priority,
            id_base,
            pos: 0,
            active: None,
            report: RuntimeReport::default(),
        }
    }

    pub fn priority(&self) -> Priority {
        self.priority
    }

    pub fn is_finished(&self) -> bool {
        self.active.is_none() && self.pos == self.workflow.order.len()
    }

    pub fn report(&self) -> &RuntimeReport {
        &self.report
    }

    pub fn workflow(&self) -> &DecisionWorkflow {
        &self.workflow
    }

    /// Name of the stage currently running, if any.
    pub fn current_stage(&self) -> Option<&str> {
        self.active
            .as_ref()
            .map(|a| self.workflow.stages[a.stage].meta.name.as_str())
    }

    /// Retires the running stage if it has finished and submits the next
    /// one. Returns the dataplane stages submitted by this call.
    pub fn advance(&mut self, cluster: &mut Cluster) -> Result<Vec<StageId>> {
        self.advance_with(cluster, &Cluster::snapshot_status)
    }

    /// Like [`Self::advance`], with decisions seeing node status from `status`.
    pub fn advance_with(
        &mut self,
        cluster: &mut Cluster,
        status: &dyn Fn(&Cluster) -> NodeStatus,
    ) -> Result<Vec<StageId>> {
        let mut submitted = Vec::new();
        loop {
            if let Some(active) = &self.active {
                if !cluster.stage_done(active.main) {
                    return Ok(submitted);
                }
                let name = self.workflow.stages[active.stage].meta.name.clone();
                let main = cluster.stage_stats(active.main).expect("submitted stage");
                let map = active.map.and_then(|m| cluster.stage_stats(m));
                let mut nodes: Vec<NodeId> = cluster
                    .stage_instances(active.main)
                    .unwrap_or_default()
                    .iter()
                    .filter_map(|&id| cluster.instance(id).map(|t| t.node))
                    .collect();
                nodes.sort_unstable();
                nodes.dedup();
                self.report.stages.push(StageTiming {
                    stage: name,
                    submitted_at: map.map_or(main.submitted_at, |m| m.submitted_at),
                    first_start: map.and_then(|m| m.first_start).or(main.first_start),
                    finished_at: main.finished_at.unwrap_or(cluster.clock()),
                    shuffle_bytes: main.shuffle_bytes + map.map_or(0, |m| m.shuffle_bytes),
                    instances: main.instances,
                    nodes,
                });
                self.active = None;
                self.pos += 1;
            }
            if self.pos == self.workflow.order.len() {
                return Ok(submitted);
            }
            let idx = self.workflow.order[self.pos];
            let stage = &self.workflow.stages[idx];
            let name = stage.meta.name.clone();
            let (map, main) = self
                .submit(cluster, idx, status(cluster))
                .map_err(|e| e.in_stage(&name))?;
            submitted.extend(map);
            submitted.push(main);
            self.active = Some(Active {
                stage: idx,
                map,
                main,
            });
        }
    }

    fn submit(
        &mut self,
        cluster: &mut Cluster,
        idx: usize,
        node_status: NodeStatus,
    ) -> Result<(Option<StageId>, StageId)> {
        let stage = &self.workflow.stages[idx];
        let view = RuntimeView {
            data_dist: cluster.distribution().clone(),
            node_status,
            cluster: cluster.spec().clone(),
        };
        let tuple = stage.node.evaluate(&view, &stage.meta.inputs)?;
        let map_id = self.id_base + 2 * self.pos as u32;
        let compiled = compile(&tuple, &stage.meta, &view, map_id + 1, map_id)?;
        let map = match &compiled.map {
            Some(plan) => Some(cluster.submit_plan(plan, self.priority)?),
            None => None,
        };
        let main = cluster.submit_plan(&compiled.main, self.priority)?;
        self.report.decisions.push(StageDecision {
            stage: stage.meta.name.clone(),
            tuple,
        });
        Ok((map, main))
    }
}

#[derive(Debug, Clone)]
pub struct WorkflowOutcome {
    /// Partitions of every table no stage consumes.
    pub results: BTreeMap<String, Vec<Partition>>,
    pub metrics: Metrics,
    pub report: RuntimeReport,
}

/// Runs `workflow` to completion on a cluster with local admission.
pub fn run_workflow(
    workflow: &DecisionWorkflow,
    cluster: &mut Cluster,
    priority: Priority,
) -> Result<WorkflowOutcome> {
    for t in workflow.base_tables() {
        if !cluster.distribution().contains(t) {
            return Err(Error::TableNotFound(t.to_string()));
        }
    }
    let mut run = WorkflowRun::new(workflow.clone(), priority, 0);
    loop {
        run.advance(cluster)?;
        if run.is_finished() {
            break;
        }
        if cluster.step().is_none() {
            let stage = run.current_stage().unwrap_or_default().to_string();
            let err = cluster
                .run_to_completion()
                .err()
                .unwrap_or_else(|| Error::InvalidRequest("workflow stalled".into()));
            return Err(err.in_stage(&stage));
        }
    }
    let mut results = BTreeMap::new();
    for t in workflow.sink_tables() {
        let parts = cluster.table(t)?.into_iter().cloned().collect();
        results.insert(t.to_string(), parts);
    }
    Ok(WorkflowOutcome {
        results,
        metrics: cluster.metrics(),
        report: run.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{default_decision, ExchangePattern};
    use crate::model::{ClusterSpec, NodeId, Row};

    fn stage(name: &str, inputs: &[&str], output: &str) -> WorkflowStage {
        WorkflowStage {
            node: default_decision("scan_map", 2),
            meta: StageMeta::new(name, inputs, output, ExchangePattern::AllToAll),
        }
    }

    #[test]
    fn topological_order_and_cycles() {
        let wf = DecisionWorkflow::new(vec![
            stage("c", &["b1", "b2"], "c_out"),
            stage("b1", &["a_out"], "b1"),
            stage("a", &["base"], "a_out"),
            stage("b2", &["a_out"], "b2"),
        ])
        .unwrap();
        let names: Vec<_> = wf.ordered().map(|s| s.meta.name.as_str()).collect();
        assert_eq!(names, vec!["a", "b1", "b2", "c"]);
        assert_eq!(wf.base_tables().into_iter().collect::<Vec<_>>(), vec!["base"]);
        assert_eq!(wf.sink_tables(), vec!["c_out"]);

        let cyc = DecisionWorkflow::new(vec![stage("x", &["y"], "x"), stage("y", &["x"], "y")]);
        assert!(matches!(cyc, Err(Error::InvalidWorkflow(_))));
        let dup = DecisionWorkflow::new(vec![stage("x", &["t"], "o"), stage("y", &["t"], "o")]);
        assert!(matches!(dup, Err(Error::InvalidWorkflow(_))));
    }

    #[test]
    fn two_stage_run_and_errors() {
        let mut c = Cluster::new(ClusterSpec::with_shape(2, 4)).unwrap();
        let parts = (0..2)
            .map(|p| {
                let rows = (0..10).map(|k| Row::new(k * 2 + p, 100, k)).collect();
                Partition::new("base", p as u32, rows, NodeId(p as u32))
            })
            .collect();
        c.load_table("base", parts, &[NodeId(0), NodeId(1)]).unwrap();
        let wf = DecisionWorkflow::new(vec![
            stage("scan", &["base"], "mid"),
            WorkflowStage {
                node: default_decision("group_by", 3),
                meta: StageMeta::new("agg", &["mid"], "out", ExchangePattern::AllToAll),
            },
        ])
        .unwrap();
        let out = run_workflow(&wf, &mut c, Priority::High).unwrap();
        let mut keys: Vec<u64> = out.results["out"]
            .iter()
            .flat_map(|p| p.rows.iter().map(|r| r.key))
            .collect();
        keys.sort_unstable();
        assert_eq!(keys, (0..20).collect::<Vec<_>>());
        assert_eq!(out.report.decisions.len(), 2);
        assert_eq!(out.report.stages.len(), 2);
        assert!(out.report.stages[1].submitted_at >= out.report.stages[0].finished_at);
        assert!(out.metrics.completion_time > 0.0);

        let mut c2 = Cluster::new(ClusterSpec::with_shape(2, 4)).unwrap();
        let missing = run_workflow(&wf, &mut c2, Priority::High);
        assert!(matches!(missing, Err(Error::TableNotFound(t)) if t == "base"));
    }

    #[test]
    fn failing_node_names_the_stage() {
        let mut c = Cluster::new(ClusterSpec::with_shape(2, 4)).unwrap();
        c.load_table(
            "base",
            vec![Partition::new("base", 0, vec![Row::new(1, 1, 1)], NodeId(0))],
            &[NodeId(0)],
        )
        .unwrap();
        let wf = DecisionWorkflow::new(vec![WorkflowStage {
            node: default_decision("scan_map", 0),
            meta: StageMeta::new("bad", &["base"], "o", ExchangePattern::AllToAll),
        }])
        .unwrap();
        let err = run_workflow(&wf, &mut c, Priority::High).unwrap_err();
        assert!(matches!(err, Error::Stage { ref stage, .. } if stage == "bad"));
    }
}
