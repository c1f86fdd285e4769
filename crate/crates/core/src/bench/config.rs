use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::controlplane::ChainSpec;
use crate::decision::JoinDecisionConfig;
use crate::error::{Error, Result};
use crate::model::{ClusterSpec, MB};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    JoinSizeSweep,
    JoinClusterSweep,
    SchedSkew,
    TpcdsSubquery,
    Coshare,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::JoinSizeSweep,
        ScenarioKind::JoinClusterSweep,
        ScenarioKind::SchedSkew,
        ScenarioKind::TpcdsSubquery,
        ScenarioKind::Coshare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::JoinSizeSweep => "join_size_sweep",
            ScenarioKind::JoinClusterSweep => "join_cluster_sweep",
            ScenarioKind::SchedSkew => "sched_skew",
            ScenarioKind::TpcdsSubquery => "tpcds_subquery",
            ScenarioKind::Coshare => "coshare",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

/// Execution strategy compared in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// Merge join at a size-proportional scale, round-robin over all nodes.
    StaticMerge,
    /// Hash join at a size-proportional scale, round-robin over all nodes.
    StaticHash,
    /// Decided at runtime by decision nodes.
    Dynamic,
    /// Fixed scale, round-robin placement.
    RoundRobin,
    /// Fixed scale, packing placement.
    Packing,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::StaticMerge => "S-M",
            Strategy::StaticHash => "S-H",
            Strategy::Dynamic => "DYN",
            Strategy::RoundRobin => "RR",
            Strategy::Packing => "PACK",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Strategy::StaticMerge,
            Strategy::StaticHash,
            Strategy::Dynamic,
            Strategy::RoundRobin,
            Strategy::Packing,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A single strategy or a list of them.
fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Strategy>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Strategy),
        Many(Vec<Strategy>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyDist {
    Uniform,
    Pareto(f64),
}

impl KeyDist {
    /// Sweep encoding: 0 for uniform, alpha for Pareto.
    pub fn from_sweep(v: f64) -> Self {
        if v == 0.0 {
            KeyDist::Uniform
        } else {
            KeyDist::Pareto(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub size_mb: f64,
    pub rows: u64,
    pub dist: KeyDist,
    /// Defaults to one partition per data node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<u32>,
    /// Nodes holding the table, partitions dealt round-robin. Defaults to
    /// every node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<u32>>,
}

impl TableSpec {
    pub fn new(name: &str, size_mb: f64, rows: u64, dist: KeyDist) -> Self {
        TableSpec {
            name: name.into(),
            size_mb,
            rows,
            dist,
            partitions: None,
            nodes: None,
        }
    }

    pub fn size_bytes(&self) -> u64 {
        (self.size_mb * MB as f64).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InvalidTableSpec(format!("{}: {why}", self.name)));
        if self.rows == 0 {
            return bad("rows must be >= 1");
        }
        if !(self.size_mb.is_finite() && self.size_bytes() >= self.rows) {
            return bad("size must cover at least one byte per row");
        }
        if let KeyDist::Pareto(alpha) = self.dist {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return bad("pareto alpha must be > 0");
            }
        }
        if self.partitions == Some(0) || self.nodes.as_ref().is_some_and(Vec::is_empty) {
            return bad("needs at least one partition and one node");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Size of table `B` in MB.
    BSizeMb,
    NodeCount,
    /// Pareto alpha of the input keys, 0 for uniform.
    SkewAlpha,
    /// Total query input in GB.
    InputGb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Decision-node parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionParams {
    pub join: JoinDecisionConfig,
    /// Bytes per instance for the static strategies, in MB.
    pub static_a_mb: f64,
    /// Bytes per group-by instance, in MB.
    pub group_a_mb: f64,
    /// Max-node share above which the skew-aware choice packs.
    pub skew_threshold: f64,
    /// Fixed scale for the scheduling scenario.
    pub fixed_scale: u32,
}

/// Shape of the three-stage query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryParams {
    pub selectivity: f64,
    /// Fraction of the input held by the first table.
    pub t1_share: f64,
    /// Input bytes per data node, in GB: the tables live on
    /// ⌈input / this⌉ nodes. Set at or above the largest input to keep data
    /// on one node, or to input / node_count to spread it.
    pub gb_per_data_node: f64,
    pub rows_per_mb: f64,
    pub partitions_per_data_node: u32,
    /// Lead time for slot requests when co-running, in seconds.
    pub lead_time: f64,
    /// When set, the cluster has ⌈input_gb · this⌉ nodes instead of the
    /// configured count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_nodes_per_gb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub cluster: ClusterSpec,
    pub tables: Vec<TableSpec>,
    #[serde(deserialize_with = "one_or_many")]
    pub strategy: Vec<Strategy>,
    pub sweep: SweepSpec,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub decision: DecisionParams,
    pub query: QueryParams,
    pub filler: ChainSpec,
}

impl ScenarioConfig {
    /// The shipped defaults for a scenario.
    pub fn preset(kind: ScenarioKind) -> Self {
        let uniform = KeyDist::Uniform;
        let (cluster, tables, strategy, sweep) = match kind {
            ScenarioKind::JoinSizeSweep => (
                ClusterSpec::with_shape(12, 8),
                vec![
                    TableSpec::new("A", 400.0, 3360, uniform),
                    TableSpec {
                        partitions: Some(1),
                        nodes: Some(vec![0]),
                        ..TableSpec::new("B", 10.0, 1000, uniform)
                    },
                ],
                vec![Strategy::StaticMerge, Strategy::StaticHash, Strategy::Dynamic],
                SweepSpec {
                    axis: SweepAxis::BSizeMb,
                    values: (1..=10).map(|i| i as f64 * 10.0).collect(),
                },
            ),
            ScenarioKind::JoinClusterSweep => (
                ClusterSpec::with_shape(2, 8),
                vec![
                    TableSpec::new("A", 400.0, 3360, uniform),
                    TableSpec {
                        partitions: Some(1),
                        nodes: Some(vec![0]),
                        ..TableSpec::new("B", 80.0, 800, uniform)
                    },
                ],
                vec![Strategy::StaticMerge, Strategy::StaticHash, Strategy::Dynamic],
                SweepSpec {
                    axis: SweepAxis::NodeCount,
                    values: (1..=8).map(|i| i as f64 * 2.0).collect(),
                },
            ),
            ScenarioKind::SchedSkew => (
                ClusterSpec::with_shape(8, 8),
                vec![TableSpec::new("T", 800.0, 8000, uniform)],
                vec![Strategy::RoundRobin, Strategy::Packing, Strategy::Dynamic],
                SweepSpec {
                    axis: SweepAxis::SkewAlpha,
                    values: vec![0.0, 1.16],
                },
            ),
            ScenarioKind::TpcdsSubquery | ScenarioKind::Coshare => (
                ClusterSpec::with_shape(6, 8),
                Vec::new(),
                if kind == ScenarioKind::Coshare {
                    vec![Strategy::Dynamic]
                } else {
                    vec![Strategy::StaticMerge, Strategy::StaticHash, Strategy::Dynamic]
                },
                SweepSpec {
                    axis: SweepAxis::InputGb,
                    values: if kind == ScenarioKind::Coshare {
                        vec![6.0]
                    } else {
                        vec![2.0, 4.0, 6.0]
                    },
                },
            ),
        };
        ScenarioConfig {
            scenario: kind,
            cluster,
            tables,
            strategy,
            sweep,
            seed: 42,
            output_dir: PathBuf::from("results"),
            decision: DecisionParams {
                join: JoinDecisionConfig {
                    t1: 30.0,
                    t2: 2,
                    a: 40.0 * MB as f64,
                },
                static_a_mb: 60.0,
                group_a_mb: 64.0,
                skew_threshold: 0.5,
                fixed_scale: 8,
            },
            query: QueryParams {
                selectivity: 0.5,
                t1_share: 0.75,
                gb_per_data_node: 2.0,
                rows_per_mb: 4.0,
                partitions_per_data_node: 8,
                lead_time: 1.0,
                cluster_nodes_per_gb: None,
            },
            filler: ChainSpec {
                length: 4,
                task_duration: 1.0,
                wave: 48,
            },
        }
    }

    /// Parses a TOML key tree; keys left out keep the scenario's defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Value = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        Self::from_value(user)
    }

    pub fn from_value(user: toml::Value) -> Result<Self> {
        let kind: ScenarioKind = user
            .get("scenario")
            .and_then(toml::Value::as_str)
            .ok_or_else(|| Error::Config("missing `scenario`".into()))?
            .parse()?;
        let mut base = toml::Value::try_from(Self::preset(kind))
            .map_err(|e| Error::Config(format!("{e}")))?;
        merge(&mut base, user);
        let cfg: ScenarioConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key.path = value` overrides, e.g. from command-line flags.
    pub fn with_overrides(&self, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut v = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for (path, value) in overrides {
            let mut cur = &mut v;
            let parts: Vec<&str> = path.split('.').collect();
            for (i, key) in parts.iter().enumerate() {
                let table = cur
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{path}` is not a table path")))?;
                if i + 1 == parts.len() {
                    table.insert(key.to_string(), value.clone());
                    break;
                }
                cur = table
                    .entry(key.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        Self::from_value(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        for t in &self.tables {
            t.validate()?;
        }
        if self.strategy.is_empty() {
            return Err(Error::Config("no strategy selected".into()));
        }
        if self.sweep.values.is_empty()
            || self.sweep.values.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::Config("sweep values must be strictly increasing".into()));
        }
        self.decision.join.validate()?;
        let d = &self.decision;
        if !(d.static_a_mb > 0.0 && d.group_a_mb > 0.0 && d.fixed_scale >= 1)
            || !(0.0..=1.0).contains(&d.skew_threshold)
        {
            return Err(Error::Config(format!("invalid decision parameters {d:?}")));
        }
        let q = &self.query;
        if !(q.selectivity > 0.0 && q.selectivity <= 1.0)
            || !(q.t1_share > 0.0 && q.t1_share < 1.0)
            || !(q.gb_per_data_node > 0.0 && q.rows_per_mb > 0.0 && q.lead_time >= 0.0)
            || q.partitions_per_data_node == 0
            || q.cluster_nodes_per_gb.is_some_and(|v| !(v > 0.0))
        {
            return Err(Error::Config(format!("invalid query parameters {q:?}")));
        }
        self.filler.validate()
    }
}

/// Recursively overlays `over` onto `base`; arrays and scalars replace.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
