use citytb_core::Urn;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate URN {0}")]
    DuplicateUrn(Urn),
    #[error("node {node} names unknown cluster {cluster}")]
    UnknownCluster { node: Urn, cluster: String },
    #[error("orphan node {0}: no management path to its gateway")]
    Orphan(Urn),
    #[error("reading topology: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown URN {0}")]
    UnknownUrn(Urn),
    #[error("no route from {0} to its gateway")]
    NoRoute(Urn),
    #[error("{0} is not a cluster member")]
    NotClusterMember(Urn),
    #[error("{0} is unreachable")]
    Unreachable(Urn),
    #[error("gateway {0} is down")]
    GatewayDown(Urn),
    #[error("unknown behavior {0:?}")]
    UnknownBehavior(String),
    #[error("image checksum mismatch for {0}")]
    ChecksumMismatch(Urn),
}
