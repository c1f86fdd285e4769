use crate::model::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("table not found: {0}")]
    TableNotFound(String),

    #[error("node not found: {0}")]
    NodeNotFound(NodeId),

    #[error("invalid cluster spec: {0}")]
    InvalidClusterSpec(String),

    #[error("invalid table spec: {0}")]
    InvalidTableSpec(String),

    #[error("stage already submitted: {0}")]
    StageAlreadySubmitted(u32),

    #[error("invalid plan for stage {stage}: {reason}")]
    InvalidPlan { stage: u32, reason: String },

    #[error("unknown function: {0}")]
    UnknownFunction(String),

    #[error("stalled exchange: instance {instance} ({func}) waits on inputs that are never produced")]
    StalledExchange { instance: u32, func: String },

    #[error("invalid decision from node `{node}`: {reason}")]
    InvalidDecision { node: String, reason: String },

    #[error("empty candidate set")]
    EmptyCandidateSet,

    #[error("exchange arity mismatch: {0}")]
    ExchangeArityMismatch(String),

    #[error("invalid workflow: {0}")]
    InvalidWorkflow(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("app exists: {0}")]
    AppExists(String),

    #[error("app not registered: {0}")]
    AppNotRegistered(String),

    #[error("release exceeds holding for app {app} on node {node}")]
    ReleaseExceedsHolding { app: String, node: NodeId },

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("no results in {0}")]
    NoResults(String),

    #[error("config: {0}")]
    Config(String),

    #[error("scenario {scenario} at {point}: {source}")]
    GridPoint {
        scenario: String,
        point: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
