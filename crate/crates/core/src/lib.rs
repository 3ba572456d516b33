//! Coverage-aware grid query for point clouds.
//!
//! Points are quantized into a capped voxel-point index. Centers are chosen
//! among occupied voxels (random or coverage-aware swapping) or among points
//! (random, farthest-point), and each center gathers `K` nodes with a cube,
//! ball or layered k-NN query over its voxel neighborhood. [`pipeline::cagq`]
//! runs the whole thing; [`bench`] sweeps methods over grids of sizes.
//!
//! ```
//! use cagq::{cagq, synth::uniform_cube, QueryMethod, SamplingConfig, SamplingMethod, SeededRng};
//!
//! let cloud = uniform_cube(2000, 1.0, 7);
//! let config = SamplingConfig::new(0.1, 64, 16).with_seed(7);
//! let mut rng = SeededRng::new(7);
//! let out = cagq(&cloud, &config, SamplingMethod::Cas, QueryMethod::Cube, &mut rng).unwrap();
//! assert_eq!(out.groups.len(), 64);
//! assert!(out.groups.iter().all(|g| g.nodes.node_indices.len() == 16));
//! ```

pub mod bench;
pub mod error;
pub mod gca;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod query;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod types;
pub mod voxel;

pub use error::{Error, Result};
pub use pipeline::{cagq, chain, GroupingOutput, Level, PointGroup, Warning};
pub use query::{KnnMode, KnnStats, QueryMethod, QueryResult};
pub use rng::{seeded_rng, SeededRng};
pub use sampling::{CenterSelection, Centers, SamplingMethod};
pub use types::{
    BallRadius, Point, PointCloud, SamplingConfig, ShortGroupPolicy, ValidationReport, Violation, ViolationKind,
    VoxelCoord,
};
pub use voxel::{quantize, Neighborhood, VoxelPointIndex};
