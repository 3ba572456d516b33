use cagq::pipeline::{chain, GroupingOutput, Level};
use cagq::synth::uniform_cube;
use cagq::*;

fn grid_level(voxel: f64, m: usize) -> Level {
    Level {
        config: SamplingConfig::new(voxel, m, 1 << 20).with_policy(ShortGroupPolicy::Reject),
        sampler: SamplingMethod::NaiveGrid,
        querier: QueryMethod::WithinVoxel,
    }
}

/// Every input index appears in exactly one group.
fn assert_partition(out: &GroupingOutput, n: usize) {
    let mut used = vec![0u32; n];
    for g in &out.groups {
        for &i in &g.nodes.node_indices {
            used[i] += 1;
        }
    }
    assert!(used.iter().all(|&c| c == 1), "{used:?}");
}

#[test]
fn two_levels_conserve_weight() {
    let cloud = uniform_cube(100, 1.0, 3);
    let outs = chain(&cloud, &[grid_level(0.2, 100), grid_level(0.5, 8)], &mut SeededRng::new(1)).unwrap();
    assert_eq!(outs.len(), 2);
    assert_partition(&outs[0], 100);
    assert_partition(&outs[1], outs[0].downsampled.len());
    for out in &outs {
        let total: f64 = out.downsampled.points.iter().map(|p| p.weight).sum();
        assert_eq!(total, 100.0);
    }
}

#[test]
fn three_levels_collapse_to_one_center() {
    let cloud = uniform_cube(1024, 1.0, 8);
    let levels = [grid_level(0.05, 1024), grid_level(0.25, 128), grid_level(10.0, 1)];
    let outs = chain(&cloud, &levels, &mut SeededRng::new(2)).unwrap();
    let last = &outs[2].downsampled;
    assert_eq!(last.len(), 1);
    assert_eq!(last.points[0].weight, 1024.0);
    // The single center is the mean of the original cloud.
    for a in 0..3 {
        let mean = cloud.points.iter().map(|p| p.position[a]).sum::<f64>() / 1024.0;
        assert!((last.points[0].position[a] - mean).abs() < 1e-12);
    }
}

#[test]
fn levels_must_shrink() {
    let cloud = uniform_cube(100, 1.0, 3);
    assert!(chain(&cloud, &[grid_level(0.2, 50), grid_level(0.5, 50)], &mut SeededRng::new(1)).is_err());
    assert!(chain(&cloud, &[], &mut SeededRng::new(1)).is_err());
}
