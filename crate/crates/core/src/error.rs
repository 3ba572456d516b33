use thiserror::Error;

use crate::types::VoxelCoord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("voxel index has no occupied voxels")]
    EmptyIndex,

    #[error("invalid point cloud: {0} violation(s), first: {1}")]
    InvalidCloud(usize, String),

    #[error("non-finite coordinate in {0:?}")]
    NonFinite([f64; 3]),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("voxel {0} is not occupied")]
    NotOccupied(VoxelCoord),

    #[error("incompatible methods: sampler {sampler} cannot feed querier {querier}")]
    IncompatibleMethods { sampler: String, querier: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient data for fit: {0}")]
    InsufficientSpan(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("source cloud has {available} points, {requested} requested")]
    SourceTooSmall { available: usize, requested: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
