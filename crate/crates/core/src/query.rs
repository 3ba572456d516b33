//! Node querying: ball query and brute-force k-NN over the raw cloud, cube
//! query and layered k-NN over a voxel neighborhood.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{PointCloud, ShortGroupPolicy, VoxelCoord};
use crate::voxel::{Neighborhood, VoxelPointIndex};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryResult {
    pub node_indices: Vec<usize>,
    /// Fewer than `K` candidates existed.
    pub truncated: bool,
    /// Repeat padding was applied to reach `K`.
    pub padded: bool,
}

impl QueryResult {
    /// Wraps distinct picks, padding by cycling through them when the policy
    /// asks for it and fewer than `k` exist.
    pub fn from_picks(mut picks: Vec<usize>, k: usize, policy: ShortGroupPolicy) -> Self {
        let distinct = picks.len();
        let truncated = distinct < k;
        let padded = truncated && distinct > 0 && policy == ShortGroupPolicy::Repeat;
        if padded {
            for j in 0..k - distinct {
                picks.push(picks[j % distinct]);
            }
        }
        Self {
            node_indices: picks,
            truncated,
            padded,
        }
    }

    pub fn len(&self) -> usize {
        self.node_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryMethod {
    /// Uniform pick among points within a radius; scans the whole cloud.
    Ball,
    /// Exact k-NN over the whole cloud.
    Knn,
    /// Uniform pick among the neighborhood's context points.
    Cube,
    /// k-NN over context points, shell by shell with early stop.
    LayeredKnn,
    /// k-NN over all context points.
    StrictKnn,
    /// Uniform pick among the center voxel's own stored points.
    WithinVoxel,
}

impl QueryMethod {
    pub const ALL: [QueryMethod; 6] = [
        Self::Ball,
        Self::Knn,
        Self::Cube,
        Self::LayeredKnn,
        Self::StrictKnn,
        Self::WithinVoxel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ball => "ball",
            Self::Knn => "knn",
            Self::Cube => "cube",
            Self::LayeredKnn => "cagq-knn",
            Self::StrictKnn => "strict-knn",
            Self::WithinVoxel => "voxel",
        }
    }

    /// Queries that read the voxel index rather than the raw cloud.
    pub fn uses_index(self) -> bool {
        matches!(
            self,
            Self::Cube | Self::LayeredKnn | Self::StrictKnn | Self::WithinVoxel
        )
    }
}

impl fmt::Display for QueryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ball" => Ok(Self::Ball),
            "knn" => Ok(Self::Knn),
            "cube" => Ok(Self::Cube),
            "cagq-knn" | "layered-knn" | "layered" => Ok(Self::LayeredKnn),
            "strict-knn" | "strict" => Ok(Self::StrictKnn),
            "voxel" | "grid" | "within-voxel" => Ok(Self::WithinVoxel),
            other => Err(Error::config(format!("unknown querier {other:?}"))),
        }
    }
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Keeps the `k` smallest `(distance, index)` pairs, in ascending order.
fn select_nearest(mut keyed: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    if keyed.len() > k {
        keyed.select_nth_unstable_by(k - 1, by_distance_then_index);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(by_distance_then_index);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Uniform `K`-subset of the points within `radius` of `center`.
pub fn ball_query(
    cloud: &PointCloud,
    center: [f64; 3],
    radius: f64,
    k: usize,
    policy: ShortGroupPolicy,
    rng: &mut SeededRng,
) -> Result<QueryResult> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::config(format!("ball radius must be > 0, got {radius}")));
    }
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    let r2 = radius * radius;
    let in_range: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| dist2(p.position, center) <= r2)
        .map(|(i, _)| i)
        .collect();
    let picks = rng
        .sample_indices(in_range.len(), k)
        .into_iter()
        .map(|j| in_range[j])
        .collect();
    Ok(QueryResult::from_picks(picks, k, policy))
}

/// Uniform `K`-subset of `context` (point indices).
pub fn pick_uniform(
    context: &[u32],
    k: usize,
    policy: ShortGroupPolicy,
    rng: &mut SeededRng,
) -> Result<QueryResult> {
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    if context.is_empty() {
        return Err(Error::EmptyInput("context points"));
    }
    let picks = rng
        .sample_indices(context.len(), k)
        .into_iter()
        .map(|j| context[j] as usize)
        .collect();
    Ok(QueryResult::from_picks(picks, k, policy))
}

/// Cube query: uniform `K`-subset of the neighborhood's context points.
pub fn cube_query(
    neighborhood: &Neighborhood,
    k: usize,
    policy: ShortGroupPolicy,
    rng: &mut SeededRng,
) -> Result<QueryResult> {
    pick_uniform(&neighborhood.context_point_indices, k, policy, rng)
}

/// Exact `K` nearest points of the whole cloud; lower index wins ties.
/// Indices come back in ascending distance order.
pub fn knn_bruteforce(
    cloud: &PointCloud,
    center: [f64; 3],
    k: usize,
    policy: ShortGroupPolicy,
) -> Result<QueryResult> {
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    let keyed = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(p.position, center), i))
        .collect();
    Ok(QueryResult::from_picks(select_nearest(keyed, k), k, policy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnMode {
    /// Stop after the first shell that fills the quota.
    Layered,
    /// Gather every shell, then select.
    Strict,
}

/// Work done by one layered k-NN query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KnnStats {
    pub shells_inspected: usize,
    pub candidates_examined: usize,
}

/// k-NN restricted to the context points of `center_voxel`'s `(2r+1)^3`
/// neighborhood.
///
/// In [`KnnMode::Layered`] shells are walked from the center outward. A shell
/// that fits in the remaining quota is taken whole; otherwise its nearest
/// `quota` points are taken and the walk stops. Chebyshev shells do not order
/// Euclidean distance exactly, so this can differ from [`KnnMode::Strict`].
#[allow(clippy::too_many_arguments)]
pub fn knn_layered(
    index: &VoxelPointIndex,
    cloud: &PointCloud,
    center_voxel: VoxelCoord,
    center: [f64; 3],
    k: usize,
    r: u32,
    mode: KnnMode,
    policy: ShortGroupPolicy,
) -> Result<(QueryResult, KnnStats)> {
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    if !index.is_occupied(center_voxel) {
        return Err(Error::NotOccupied(center_voxel));
    }
    let mut stats = KnnStats::default();
    let mut shell = Vec::new();
    let keyed_of = |pts: &[u32]| -> Vec<(f64, usize)> {
        pts.iter()
            .map(|&i| (dist2(cloud.points[i as usize].position, center), i as usize))
            .collect()
    };
    let picks = match mode {
        KnnMode::Strict => {
            for level in 0..=r {
                index.shell_into(center_voxel, level, &mut shell);
            }
            stats.shells_inspected = r as usize + 1;
            stats.candidates_examined = shell.len();
            select_nearest(keyed_of(&shell), k)
        }
        KnnMode::Layered => {
            let mut picks = Vec::with_capacity(k);
            for level in 0..=r {
                shell.clear();
                index.shell_into(center_voxel, level, &mut shell);
                stats.shells_inspected += 1;
                stats.candidates_examined += shell.len();
                let quota = k - picks.len();
                if shell.len() <= quota {
                    picks.extend(shell.iter().map(|&i| i as usize));
                } else {
                    picks.extend(select_nearest(keyed_of(&shell), quota));
                }
                if picks.len() >= k {
                    break;
                }
            }
            picks
        }
    };
    Ok((QueryResult::from_picks(picks, k, policy), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::types::SamplingConfig;

    fn sorted(mut v: Vec<usize>) -> Vec<usize> {
        v.sort_unstable();
        v
    }

    #[test]
    fn ball_picks_in_range_points() {
        let cloud = PointCloud::from_positions([[0.5, 0.0, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 1.5]]);
        let q = ball_query(&cloud, [0.0; 3], 1.0, 2, ShortGroupPolicy::Repeat, &mut seeded_rng(1)).unwrap();
        assert_eq!(sorted(q.node_indices), vec![0, 1]);
        assert!(!q.truncated && !q.padded);
    }

    #[test]
    fn ball_pads_by_repeating() {
        let cloud = PointCloud::from_positions([[0.5, 0.0, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 1.5]]);
        let q = ball_query(&cloud, [0.0; 3], 1.0, 5, ShortGroupPolicy::Repeat, &mut seeded_rng(1)).unwrap();
        assert_eq!(q.len(), 5);
        assert!(q.truncated && q.padded);
        let mut distinct = q.node_indices.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct, vec![0, 1]);

        let r = ball_query(&cloud, [0.0; 3], 1.0, 5, ShortGroupPolicy::Reject, &mut seeded_rng(1)).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.truncated && !r.padded);
    }

    #[test]
    fn ball_with_nothing_in_range_is_empty() {
        let cloud = PointCloud::from_positions([[5.0, 0.0, 0.0]]);
        let q = ball_query(&cloud, [0.0; 3], 1.0, 3, ShortGroupPolicy::Repeat, &mut seeded_rng(1)).unwrap();
        assert!(q.is_empty() && q.truncated && !q.padded);
        assert!(ball_query(&cloud, [0.0; 3], 0.0, 3, ShortGroupPolicy::Repeat, &mut seeded_rng(1)).is_err());
    }

    fn nb(ctx: Vec<u32>) -> Neighborhood {
        Neighborhood {
            center: VoxelCoord::new(0, 0, 0),
            occupied_neighbors: vec![VoxelCoord::new(0, 0, 0)],
            context_point_indices: ctx,
        }
    }

    #[test]
    fn cube_takes_exact_context() {
        let q = cube_query(&nb(vec![4, 7, 9]), 3, ShortGroupPolicy::Repeat, &mut seeded_rng(2)).unwrap();
        assert_eq!(sorted(q.node_indices), vec![4, 7, 9]);
    }

    #[test]
    fn cube_pads_short_context() {
        let q = cube_query(&nb(vec![4, 7, 9]), 5, ShortGroupPolicy::Repeat, &mut seeded_rng(2)).unwrap();
        assert_eq!(q.len(), 5);
        let mut d = q.node_indices.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d, vec![4, 7, 9]);
        assert!(cube_query(&nb(vec![]), 1, ShortGroupPolicy::Repeat, &mut seeded_rng(2)).is_err());
    }

    #[test]
    fn knn_brute_basics() {
        let cloud = PointCloud::from_positions((0..6).map(|i| [i as f64, 0.0, 0.0]));
        let q = knn_bruteforce(&cloud, [2.0, 0.0, 0.0], 1, ShortGroupPolicy::Repeat).unwrap();
        assert_eq!(q.node_indices, vec![2]);
        let all = knn_bruteforce(&cloud, [0.0; 3], 6, ShortGroupPolicy::Repeat).unwrap();
        assert_eq!(sorted(all.node_indices), (0..6).collect::<Vec<_>>());
        // Equidistant points 1 and 3 from x=2: lower index first.
        let tie = knn_bruteforce(&cloud, [2.0, 0.0, 0.0], 2, ShortGroupPolicy::Repeat).unwrap();
        assert_eq!(tie.node_indices, vec![2, 1]);
    }

    #[test]
    fn layered_shell_zero_only() {
        let mut pts: Vec<[f64; 3]> = (0..6).map(|i| [0.1 + 0.15 * i as f64, 0.5, 0.5]).collect();
        pts.push([1.5, 0.5, 0.5]);
        let cloud = PointCloud::from_positions(pts);
        let cfg = SamplingConfig::new(1.0, 1, 10);
        let idx = VoxelPointIndex::build(&cloud, &cfg, &mut seeded_rng(0)).unwrap();
        let center = [0.3, 0.5, 0.5];
        let (q, stats) = knn_layered(
            &idx,
            &cloud,
            VoxelCoord::new(0, 0, 0),
            center,
            3,
            1,
            KnnMode::Layered,
            ShortGroupPolicy::Repeat,
        )
        .unwrap();
        let shell0 = PointCloud::from_positions(cloud.points[..6].iter().map(|p| p.position));
        let oracle = knn_bruteforce(&shell0, center, 3, ShortGroupPolicy::Repeat).unwrap();
        assert_eq!(sorted(q.node_indices), sorted(oracle.node_indices));
        assert_eq!(stats.shells_inspected, 1);
    }

    #[test]
    fn layered_spills_into_second_shell() {
        // Two points in the center voxel, ten in a neighbor; K = 5.
        let mut pts = vec![[0.5, 0.5, 0.5], [0.6, 0.5, 0.5]];
        pts.extend((0..10).map(|i| [1.05 + 0.09 * i as f64, 0.5, 0.5]));
        let cloud = PointCloud::from_positions(pts);
        let cfg = SamplingConfig::new(1.0, 1, 16);
        let idx = VoxelPointIndex::build(&cloud, &cfg, &mut seeded_rng(0)).unwrap();
        let (q, stats) = knn_layered(
            &idx,
            &cloud,
            VoxelCoord::new(0, 0, 0),
            [0.5, 0.5, 0.5],
            5,
            1,
            KnnMode::Layered,
            ShortGroupPolicy::Repeat,
        )
        .unwrap();
        assert_eq!(sorted(q.node_indices), vec![0, 1, 2, 3, 4]);
        assert_eq!(stats.shells_inspected, 2);
    }

    #[test]
    fn layered_rejects_unoccupied_center() {
        let cloud = PointCloud::from_positions([[0.5; 3]]);
        let idx = VoxelPointIndex::build(&cloud, &SamplingConfig::new(1.0, 1, 1), &mut seeded_rng(0)).unwrap();
        assert!(knn_layered(
            &idx,
            &cloud,
            VoxelCoord::new(9, 9, 9),
            [0.0; 3],
            1,
            1,
            KnnMode::Strict,
            ShortGroupPolicy::Repeat
        )
        .is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in QueryMethod::ALL {
            assert_eq!(m.name().parse::<QueryMethod>().unwrap(), m);
        }
    }
}
