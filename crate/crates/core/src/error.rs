use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{what}: expected {expected} nodes, found {found}")]
    NodeCountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("edge ({u}, {v}) has an endpoint outside [0, {num_nodes})")]
    EdgeOutOfRange {
        u: usize,
        v: usize,
        num_nodes: usize,
    },

    #[error("node {node} has label {label}, outside [0, {num_labels})")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_labels: usize,
    },

    #[error("label class {0} has no nodes")]
    EmptyLabelClass(usize),

    #[error("node {anchor} has an empty neighbor set at hop {hop}")]
    EmptyHopSet { anchor: usize, hop: String },

    #[error("graph is disconnected: {components} components (sizes {sizes:?}); extract the largest component first")]
    Disconnected {
        components: usize,
        sizes: Vec<usize>,
    },

    #[error("label class {0} has zero total degree")]
    ZeroDegreeLabel(usize),

    #[error("no nodes carry label {0}")]
    NoNodesWithLabel(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("backward root must be a 1x1 scalar, got {0:?}")]
    NonScalarRoot((usize, usize)),

    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardAlreadyRun,

    #[error("parameter {0} is not connected to the loss")]
    DisconnectedLeaf(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}; parameter norms: {norms}")]
    NonFiniteLoss { epoch: usize, norms: String },

    #[error("graph has no node features")]
    MissingFeatures,

    #[error("graph does not match the one the encoder was built for")]
    GraphMismatch,

    #[error("training split contains a single class")]
    SingleClassTrainSplit,

    #[error("need at least {needed} nodes, found {found}")]
    TooFewNodes { needed: usize, found: usize },

    #[error("node {0} appears in more than one split")]
    OverlappingSplits(usize),

    #[error("could not produce a connected graph: {0}")]
    ConnectivityFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::NodeCountMismatch { .. } => "node_count_mismatch",
            Error::EmptyGraph => "empty_graph",
            Error::EdgeOutOfRange { .. } => "edge_out_of_range",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::EmptyLabelClass(_) => "empty_label_class",
            Error::EmptyHopSet { .. } => "empty_hop_set",
            Error::Disconnected { .. } => "disconnected",
            Error::ZeroDegreeLabel(_) => "zero_degree_label",
            Error::NoNodesWithLabel(_) => "no_nodes_with_label",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonScalarRoot(_) => "non_scalar_root",
            Error::BackwardAlreadyRun => "backward_already_run",
            Error::DisconnectedLeaf(_) => "disconnected_leaf",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::MissingFeatures => "missing_features",
            Error::GraphMismatch => "graph_mismatch",
            Error::SingleClassTrainSplit => "single_class_train_split",
            Error::TooFewNodes { .. } => "too_few_nodes",
            Error::OverlappingSplits(_) => "overlapping_splits",
            Error::ConnectivityFailed(_) => "connectivity_failed",
        }
    }
}
