use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SnlError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SnlError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Numerical rank of a Gram matrix (or of a design matrix) fell below what
    /// the operation needs.
    #[error("rank deficient: need rank {needed}, found {found}")]
    RankDeficient { needed: usize, found: usize },

    #[error("node set is not a clique: distance ({0}, {1}) is unknown")]
    NotAClique(usize, usize),

    /// The shared rows of two faces do not carry a full `r + 1` dimensional
    /// range, so the rigid intersection formula does not apply.
    #[error("intersection rank loss: shared block has rank {rank}, need {needed}")]
    IntersectionRankLoss { rank: usize, needed: usize },

    /// The shared block has full rank, so the non-rigid construction does not
    /// apply and the caller should take the rigid path.
    #[error("shared block has full rank {rank}; use the rigid intersection")]
    RigidIntersection { rank: usize },

    #[error("shared blocks span different subspaces (largest principal angle {angle:e} rad)")]
    RangeMismatch { angle: f64 },

    /// Shared nodes are nearly affinely dependent; merging through them would
    /// amplify round-off. Only raised while a spread floor is active.
    #[error("shared nodes are too close to a lower dimensional affine set")]
    IllConditionedOverlap,

    #[error("no real nonzero branch in the two-completion pencil")]
    NoRealBranch,

    #[error("no measured sub-clique of rank {r} inside the face")]
    NoRigidSeed { r: usize },

    #[error("anchor cross-covariance has rank {rank}; alignment in dimension {r} is ambiguous")]
    DegenerateAnchors { rank: usize, r: usize },

    #[error("no positioned sensors")]
    EmptyPositioned,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
