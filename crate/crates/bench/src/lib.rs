//! Fixtures shared by the criterion benches.

use cagq::synth::uniform_cube;
use cagq::{PointCloud, SamplingConfig, SeededRng, VoxelPointIndex};

/// Point density the benches hold fixed as `N` grows.
pub const DENSITY: f64 = 16_384.0;

/// Uniform cube of `n` points at [`DENSITY`] points per unit volume.
pub fn cloud(n: usize, seed: u64) -> PointCloud {
    uniform_cube(n, (n as f64 / DENSITY).cbrt(), seed)
}

/// Config with voxel edge 0.05 (about two points per voxel), `M = N / 64`.
pub fn config(n: usize, k: usize) -> SamplingConfig {
    SamplingConfig::new(0.05, (n / 64).max(1), k)
}

/// Cloud, config and a built index.
pub fn indexed(n: usize, k: usize) -> (PointCloud, SamplingConfig, VoxelPointIndex) {
    let cloud = cloud(n, 1);
    let cfg = config(n, k);
    let index = VoxelPointIndex::build(&cloud, &cfg, &mut SeededRng::new(2)).expect("index");
    (cloud, cfg, index)
}
