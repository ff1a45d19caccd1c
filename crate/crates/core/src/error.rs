use thiserror::Error;

/// Errors raised while building or loading a [`crate::Dataset`].
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("missing header row")]
    MissingHeader,
    #[error("row {row}: expected {expected} cells, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}, column {column}: non-finite value")]
    NonFinite { row: usize, column: String },
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("duplicate feature name {0:?}")]
    DuplicateFeature(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid generator parameters: {0}")]
    Generator(String),
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("k = {k} must satisfy 1 <= k < n = {n}")]
    BadNeighborCount { k: usize, n: usize },
    #[error("empty distance list")]
    EmptyDistances,
}

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("invalid optimizer parameters: {0}")]
    BadParams(String),
    #[error("curve fit diverged for min_dist={min_dist}, spread={spread}")]
    CurveFit { min_dist: f64, spread: f64 },
    #[error("empty graph")]
    EmptyGraph,
    #[error("constraint references point {index} but n = {n}")]
    ConstraintIndex { index: usize, n: usize },
    #[error("coordinates have {found} rows, graph has {expected} points")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite coordinate at point {point} in epoch {epoch}")]
    NonFinite { point: usize, epoch: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintError {
    #[error("constraint pairs a point with itself ({0})")]
    SelfPair(usize),
    #[error("point index {index} out of range for n = {n}")]
    OutOfRange { index: usize, n: usize },
    #[error("weight must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("pair ({}, {}) conflicts with existing {:?} constraint", .existing.i, .existing.j, .existing.kind)]
    Conflict {
        existing: crate::constraints::Constraint,
        incoming: crate::constraints::Constraint,
    },
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("eps must be positive, got {0}")]
    BadEps(f64),
    #[error("min_pts must be at least 1")]
    BadMinPts,
    #[error("need more than min_pts = {min_pts} points, got {n}")]
    TooFewPoints { n: usize, min_pts: usize },
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("cluster {0} not present in clustering result")]
    UnknownCluster(i64),
    #[error("cluster {cluster} needs >= 2 members and >= 2 non-members (has {members} / {others})")]
    TooSmall { cluster: i64, members: usize, others: usize },
    #[error("max_depth must be at least 1")]
    ZeroDepth,
    #[error("dataset has {dataset} rows but clustering has {labels}")]
    LengthMismatch { dataset: usize, labels: usize },
    #[error("no split separates the target classes")]
    Degenerate,
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("need at least 2 non-noise clusters, found {0}")]
    TooFewClusters(usize),
    #[error("k = {k} must satisfy 1 <= k <= n = {n}")]
    BadK { k: usize, n: usize },
    #[error("dims = {dims} must satisfy 1 <= dims <= {max}")]
    BadDims { dims: usize, max: usize },
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dataset has no ground-truth labels")]
    NoLabels,
    #[error("cannot sample cannot-link pairs from a single class")]
    SingleClass,
    #[error("requested {requested} {kind} pairs but only {available} are available")]
    NotEnoughPairs { kind: &'static str, requested: usize, available: usize },
    #[error("labels ({labels}) and coordinates ({coords}) differ in length")]
    LengthMismatch { labels: usize, coords: usize },
}

/// Umbrella error for pipeline code that crosses module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
