//! End-to-end grouping: build the voxel index, sample centers, query nodes
//! per center, and synthesize each group center as the coverage-weighted
//! barycenter of its nodes.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::query::{self, KnnMode, QueryMethod, QueryResult};
use crate::rng::SeededRng;
use crate::sampling::{self, CenterSelection, Centers, SamplingMethod};
use crate::types::{Point, PointCloud, SamplingConfig, VoxelCoord};
use crate::voxel::VoxelPointIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct PointGroup {
    /// Voxel the group was anchored in; for point samplers, the voxel of the
    /// sampled point.
    pub center_voxel: Option<VoxelCoord>,
    /// Sampled point for point samplers.
    pub sampled_point: Option<usize>,
    pub nodes: QueryResult,
    pub center_position: [f64; 3],
    pub center_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Fewer centers than requested were available.
    Undersampled { requested: usize, effective: usize },
    /// Groups whose candidate pool held fewer than `K` points.
    ShortGroups { count: usize },
}

#[derive(Debug, Clone)]
pub struct GroupingOutput {
    pub sampler: SamplingMethod,
    pub querier: QueryMethod,
    pub groups: Vec<PointGroup>,
    /// One point per group: center position and weight, no features.
    pub downsampled: PointCloud,
    pub warnings: Vec<Warning>,
    /// `|O_v|` of the input, when an index was built.
    pub occupied_voxels: Option<usize>,
}

impl GroupingOutput {
    pub fn m_effective(&self) -> usize {
        self.groups.len()
    }
}

/// Weighted barycenter and summed weight of `nodes`. Repeated indices count
/// once per occurrence.
pub fn group_center(cloud: &PointCloud, nodes: &[usize]) -> Result<([f64; 3], f64)> {
    if nodes.is_empty() {
        return Err(Error::EmptyInput("group nodes"));
    }
    let mut weight = 0.0;
    let mut acc = [0.0; 3];
    for &i in nodes {
        let p = &cloud.points[i];
        weight += p.weight;
        for a in 0..3 {
            acc[a] += p.weight * p.position[a];
        }
    }
    Ok(([acc[0] / weight, acc[1] / weight, acc[2] / weight], weight))
}

pub fn check_methods(sampler: SamplingMethod, querier: QueryMethod) -> Result<()> {
    let ok = match sampler {
        SamplingMethod::NaiveGrid => querier == QueryMethod::WithinVoxel,
        SamplingMethod::Rvs | SamplingMethod::Cas => querier.uses_index(),
        SamplingMethod::Rps | SamplingMethod::Fps => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::IncompatibleMethods {
            sampler: sampler.to_string(),
            querier: querier.to_string(),
        })
    }
}

/// Center selection for `sampler`. Voxel samplers require `index`.
pub fn select_centers(
    cloud: &PointCloud,
    index: Option<&VoxelPointIndex>,
    config: &SamplingConfig,
    sampler: SamplingMethod,
    rng: &mut SeededRng,
) -> Result<CenterSelection> {
    let need_index = || index.ok_or_else(|| Error::config("voxel sampler needs an index"));
    match sampler {
        SamplingMethod::Rps => sampling::rps(cloud, config.m, rng),
        SamplingMethod::Fps => sampling::fps(cloud, config.m, rng),
        SamplingMethod::Rvs => sampling::rvs(need_index()?, config.m, rng),
        SamplingMethod::NaiveGrid => sampling::naive_grid(need_index()?, config.m, rng),
        SamplingMethod::Cas => sampling::cas(
            need_index()?,
            config.m,
            config.neighborhood_radius,
            config.beta,
            rng,
        )
        .map(|out| out.selection),
    }
}

struct Anchor {
    voxel: Option<VoxelCoord>,
    point: Option<usize>,
    position: [f64; 3],
}

fn voxel_anchor(index: &VoxelPointIndex, cloud: &PointCloud, v: VoxelCoord) -> [f64; 3] {
    let bucket = index.bucket(v).unwrap_or(&[]);
    let mut acc = [0.0; 3];
    for &i in bucket {
        let p = cloud.points[i as usize].position;
        for a in 0..3 {
            acc[a] += p[a];
        }
    }
    let n = bucket.len().max(1) as f64;
    [acc[0] / n, acc[1] / n, acc[2] / n]
}

fn query_nodes(
    cloud: &PointCloud,
    index: Option<&VoxelPointIndex>,
    config: &SamplingConfig,
    querier: QueryMethod,
    anchor: &Anchor,
    rng: &mut SeededRng,
) -> Result<QueryResult> {
    let k = config.k;
    let policy = config.short_group_policy;
    let r = config.neighborhood_radius;
    let voxel = || {
        anchor
            .voxel
            .zip(index)
            .ok_or_else(|| Error::config("voxel query needs an index"))
    };
    match querier {
        QueryMethod::Ball => query::ball_query(
            cloud,
            anchor.position,
            config.resolved_ball_radius(),
            k,
            policy,
            rng,
        ),
        QueryMethod::Knn => query::knn_bruteforce(cloud, anchor.position, k, policy),
        QueryMethod::Cube => {
            let (v, idx) = voxel()?;
            query::cube_query(&idx.neighborhood(v, r)?, k, policy, rng)
        }
        QueryMethod::WithinVoxel => {
            let (v, idx) = voxel()?;
            let bucket = idx.bucket(v).ok_or(Error::NotOccupied(v))?;
            query::pick_uniform(bucket, k, policy, rng)
        }
        QueryMethod::LayeredKnn | QueryMethod::StrictKnn => {
            let (v, idx) = voxel()?;
            let mode = if querier == QueryMethod::LayeredKnn {
                KnnMode::Layered
            } else {
                KnnMode::Strict
            };
            query::knn_layered(idx, cloud, v, anchor.position, k, r, mode, policy).map(|(q, _)| q)
        }
    }
}

/// Runs one grouping level.
///
/// Random streams are derived from `rng`'s seed: one for the index, one for
/// center sampling, and one per center for node querying, so results do not
/// depend on the number of worker threads.
pub fn cagq(
    cloud: &PointCloud,
    config: &SamplingConfig,
    sampler: SamplingMethod,
    querier: QueryMethod,
    rng: &mut SeededRng,
) -> Result<GroupingOutput> {
    config.validate()?;
    cloud.ensure_valid()?;
    check_methods(sampler, querier)?;

    let index = if sampler.is_voxel_based() || querier.uses_index() {
        Some(VoxelPointIndex::build_parallel(cloud, config, &mut rng.split(1))?)
    } else {
        None
    };
    let selection = select_centers(cloud, index.as_ref(), config, sampler, &mut rng.split(2))?;
    let anchors: Vec<Anchor> = match &selection.centers {
        Centers::Points(pts) => pts
            .iter()
            .map(|&i| {
                let position = cloud.position(i);
                Anchor {
                    voxel: index.as_ref().map(|idx| idx.voxel_of(position)),
                    point: Some(i),
                    position,
                }
            })
            .collect(),
        Centers::Voxels(vs) => {
            let idx = index.as_ref().expect("voxel sampler builds an index");
            vs.iter()
                .map(|&v| Anchor {
                    voxel: Some(v),
                    point: None,
                    position: voxel_anchor(idx, cloud, v),
                })
                .collect()
        }
    };

    let query_root = rng.split(3);
    let groups = anchors
        .par_iter()
        .enumerate()
        .map(|(j, anchor)| {
            let mut qrng = query_root.split(j as u64);
            let nodes = query_nodes(cloud, index.as_ref(), config, querier, anchor, &mut qrng)?;
            let (mut center_position, center_weight) = group_center(cloud, &nodes.node_indices)?;
            if config.keep_sampled_center && anchor.point.is_some() {
                center_position = anchor.position;
            }
            Ok(PointGroup {
                center_voxel: anchor.voxel,
                sampled_point: anchor.point,
                nodes,
                center_position,
                center_weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    if selection.m_effective() < config.m {
        warnings.push(Warning::Undersampled {
            requested: config.m,
            effective: selection.m_effective(),
        });
    }
    let short = groups.iter().filter(|g| g.nodes.truncated).count();
    if short > 0 {
        warnings.push(Warning::ShortGroups { count: short });
    }
    let downsampled = PointCloud::new(
        groups
            .iter()
            .map(|g| Point::with_weight(g.center_position, g.center_weight))
            .collect(),
    );
    Ok(GroupingOutput {
        sampler,
        querier,
        groups,
        downsampled,
        warnings,
        occupied_voxels: index.as_ref().map(VoxelPointIndex::len),
    })
}

/// One level of a downsampling chain.
#[derive(Debug, Clone)]
pub struct Level {
    pub config: SamplingConfig,
    pub sampler: SamplingMethod,
    pub querier: QueryMethod,
}

/// Repeated downsampling: each level groups the previous level's centers,
/// so coverage weights accumulate.
pub fn chain(cloud: &PointCloud, levels: &[Level], rng: &mut SeededRng) -> Result<Vec<GroupingOutput>> {
    if levels.is_empty() {
        return Err(Error::config("chain needs at least one level"));
    }
    if levels.windows(2).any(|w| w[1].config.m >= w[0].config.m) {
        return Err(Error::config("chain levels must have strictly decreasing M"));
    }
    let mut outputs: Vec<GroupingOutput> = Vec::with_capacity(levels.len());
    for (depth, level) in levels.iter().enumerate() {
        let input = outputs.last().map_or(cloud, |o| &o.downsampled);
        if input.is_empty() {
            return Err(Error::EmptyInput("chain level input"));
        }
        let mut level_rng = rng.split(depth as u64);
        outputs.push(cagq(input, &level.config, level.sampler, level.querier, &mut level_rng)?);
    }
    Ok(outputs)
}

/// One group per line: `cx cy cz w k idx1 ... idxk`.
pub fn write_groups<W: Write>(output: &GroupingOutput, mut out: W) -> Result<()> {
    for g in &output.groups {
        let [x, y, z] = g.center_position;
        write!(out, "{x} {y} {z} {} {}", g.center_weight, g.nodes.len())?;
        for i in &g.nodes.node_indices {
            write!(out, " {i}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// A group read back from the text format.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRecord {
    pub center_position: [f64; 3],
    pub center_weight: f64,
    pub nodes: Vec<usize>,
}

pub fn parse_groups(text: &str) -> Result<Vec<GroupRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 5 {
            return Err(Error::parse(line_no, "expected `cx cy cz w k idx...`"));
        }
        let num = |t: &str| t.parse::<f64>().map_err(|_| Error::parse(line_no, format!("bad number {t:?}")));
        let idx = |t: &str| t.parse::<usize>().map_err(|_| Error::parse(line_no, format!("bad index {t:?}")));
        let k = idx(toks[4])?;
        if toks.len() != 5 + k {
            return Err(Error::parse(line_no, format!("expected {k} indices, found {}", toks.len() - 5)));
        }
        records.push(GroupRecord {
            center_position: [num(toks[0])?, num(toks[1])?, num(toks[2])?],
            center_weight: num(toks[3])?,
            nodes: toks[5..].iter().map(|t| idx(t)).collect::<Result<_>>()?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn weighted_center_arithmetic() {
        let cloud = PointCloud::new(vec![
            Point::with_weight([0.0, 0.0, 0.0], 1.0),
            Point::with_weight([2.0, 0.0, 0.0], 3.0),
        ]);
        let (pos, w) = group_center(&cloud, &[0, 1]).unwrap();
        assert_eq!(pos, [1.5, 0.0, 0.0]);
        assert_eq!(w, 4.0);
    }

    #[test]
    fn equal_weights_give_barycenter() {
        let cloud = PointCloud::from_positions([[0.0, 0.0, 0.0], [1.0, 2.0, 0.0], [2.0, 1.0, 3.0]]);
        let (pos, w) = group_center(&cloud, &[0, 1, 2]).unwrap();
        assert_eq!(w, 3.0);
        for (a, e) in pos.iter().zip([1.0, 1.0, 1.0]) {
            assert!((a - e).abs() < 1e-15);
        }
        assert!(group_center(&cloud, &[]).is_err());
    }

    #[test]
    fn method_compatibility() {
        assert!(check_methods(SamplingMethod::Cas, QueryMethod::Cube).is_ok());
        assert!(check_methods(SamplingMethod::Fps, QueryMethod::Cube).is_ok());
        assert!(check_methods(SamplingMethod::Rvs, QueryMethod::Ball).is_err());
        assert!(check_methods(SamplingMethod::NaiveGrid, QueryMethod::Cube).is_err());
        assert!(check_methods(SamplingMethod::NaiveGrid, QueryMethod::WithinVoxel).is_ok());
    }

    #[test]
    fn small_layout_end_to_end() {
        // M = 2, K = 5, n_v = 3 on a small 2D-style layout.
        let layout = [((0, 0), 5), ((2, 0), 7), ((2, 1), 3), ((0, 2), 2), ((1, 1), 9)];
        let mut pts = Vec::new();
        for ((u, v), n) in layout {
            for j in 0..n {
                pts.push([u as f64 + 0.1 + 0.08 * j as f64, v as f64 + 0.5, 0.5]);
            }
        }
        let cloud = PointCloud::from_positions(pts);
        let cfg = SamplingConfig::new(1.0, 2, 5).with_n_v(3);
        let out = cagq(&cloud, &cfg, SamplingMethod::Cas, QueryMethod::Cube, &mut seeded_rng(3)).unwrap();
        assert_eq!(out.groups.len(), 2);
        for g in &out.groups {
            assert_eq!(g.nodes.len(), 5);
            let (pos, w) = group_center(&cloud, &g.nodes.node_indices).unwrap();
            assert_eq!(pos, g.center_position);
            assert_eq!(w, g.center_weight);
        }
        assert_eq!(out.downsampled.len(), 2);
    }

    #[test]
    fn undersampling_is_reported() {
        let cloud = PointCloud::from_positions([[0.5; 3], [3.5; 3]]);
        let cfg = SamplingConfig::new(1.0, 5, 1);
        let out = cagq(&cloud, &cfg, SamplingMethod::Rvs, QueryMethod::Cube, &mut seeded_rng(0)).unwrap();
        assert_eq!(out.m_effective(), 2);
        assert!(out.warnings.contains(&Warning::Undersampled {
            requested: 5,
            effective: 2
        }));
    }

    #[test]
    fn naive_grid_groups_stay_in_one_voxel() {
        let cloud = crate::synth::uniform_cube(500, 1.0, 2);
        let cfg = SamplingConfig::new(0.2, 30, 4);
        let out = cagq(&cloud, &cfg, SamplingMethod::NaiveGrid, QueryMethod::WithinVoxel, &mut seeded_rng(2)).unwrap();
        for g in &out.groups {
            let v = g.center_voxel.unwrap();
            for &i in &g.nodes.node_indices {
                assert_eq!(crate::voxel::quantize(cloud.position(i), cfg.voxel_size).unwrap(), v);
            }
        }
    }

    #[test]
    fn keep_sampled_center_for_baselines() {
        let cloud = crate::synth::uniform_cube(200, 1.0, 1);
        let mut cfg = SamplingConfig::new(0.25, 10, 4);
        cfg.keep_sampled_center = true;
        let out = cagq(&cloud, &cfg, SamplingMethod::Rps, QueryMethod::Ball, &mut seeded_rng(1)).unwrap();
        for g in &out.groups {
            assert_eq!(g.center_position, cloud.position(g.sampled_point.unwrap()));
        }
    }

    #[test]
    fn chain_requires_decreasing_m() {
        let cloud = crate::synth::uniform_cube(100, 1.0, 1);
        let lvl = |m| Level {
            config: SamplingConfig::new(0.25, m, 4),
            sampler: SamplingMethod::Rvs,
            querier: QueryMethod::Cube,
        };
        assert!(chain(&cloud, &[lvl(10), lvl(10)], &mut seeded_rng(0)).is_err());
        let one = chain(&cloud, &[lvl(10)], &mut seeded_rng(0)).unwrap();
        let direct = cagq(&cloud, &lvl(10).config, SamplingMethod::Rvs, QueryMethod::Cube, &mut seeded_rng(0).split(0)).unwrap();
        assert_eq!(one[0].groups, direct.groups);
    }

    #[test]
    fn text_format_round_trip() {
        let cloud = crate::synth::uniform_cube(300, 1.0, 4);
        let cfg = SamplingConfig::new(0.2, 12, 6);
        let out = cagq(&cloud, &cfg, SamplingMethod::Cas, QueryMethod::LayeredKnn, &mut seeded_rng(4)).unwrap();
        let mut buf = Vec::new();
        write_groups(&out, &mut buf).unwrap();
        let parsed = parse_groups(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed.len(), out.groups.len());
        for (rec, g) in parsed.iter().zip(&out.groups) {
            assert_eq!(rec.center_position, g.center_position);
            assert_eq!(rec.center_weight, g.center_weight);
            assert_eq!(rec.nodes, g.nodes.node_indices);
        }
        assert!(parse_groups("1 2 3 4 2 0\n").is_err());
    }
}
