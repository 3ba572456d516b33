//! Occupied-space coverage and the small amount of statistics the harness
//! needs: medians, log-log least squares, and a paired one-sided t-test.

use rustc_hash::FxHashSet;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::pipeline::GroupingOutput;
use crate::types::PointCloud;
use crate::voxel::quantize;

/// Percentage of the original cloud's occupied voxels touched by any queried
/// node point. Node indices refer to `original`.
pub fn occupied_space_coverage(
    original: &PointCloud,
    groups: &GroupingOutput,
    voxel_size: [f64; 3],
) -> Result<f64> {
    coverage_of_nodes(
        original,
        groups.groups.iter().flat_map(|g| g.nodes.node_indices.iter().copied()),
        voxel_size,
    )
}

pub fn coverage_of_nodes<I>(original: &PointCloud, nodes: I, voxel_size: [f64; 3]) -> Result<f64>
where
    I: IntoIterator<Item = usize>,
{
    if original.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut all = FxHashSet::default();
    for p in &original.points {
        all.insert(quantize(p.position, voxel_size)?);
    }
    let mut touched = FxHashSet::default();
    for i in nodes {
        let p = original
            .points
            .get(i)
            .ok_or_else(|| Error::config(format!("node index {i} out of range")))?;
        touched.insert(quantize(p.position, voxel_size)?);
    }
    Ok(100.0 * touched.len() as f64 / all.len() as f64)
}

pub fn median_u64(values: &mut [u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Ordinary least squares of `log(y)` on `log(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// 95% confidence interval of the slope.
    pub ci95: (f64, f64),
    pub n: usize,
}

/// Log-log slope of `(axis value, latency)` samples. Needs at least four
/// distinct axis values spanning a factor of 16 or more.
pub fn scaling_fit(samples: &[(f64, f64)]) -> Result<ScalingFit> {
    if samples.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::InsufficientSpan("axis values and latencies must be positive".into()));
    }
    let mut xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 4 {
        return Err(Error::InsufficientSpan(format!(
            "need >= 4 distinct axis values, have {}",
            xs.len()
        )));
    }
    let span = xs[xs.len() - 1] / xs[0];
    if span < 16.0 {
        return Err(Error::InsufficientSpan(format!("axis spans {span:.2}x, need >= 16x")));
    }
    let lx: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ly: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let n = samples.len();
    let mx = mean(&lx);
    let my = mean(&ly);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = (n - 2) as f64;
    let stderr = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::InsufficientSpan(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(ScalingFit {
        slope,
        intercept,
        stderr,
        ci95: (slope - t * stderr, slope + t * stderr),
        n,
    })
}

/// One-sided paired t-test of `mean(a - b) > 0`; returns the p-value.
pub fn paired_t_greater(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::config("paired t-test needs two equal samples of size >= 2"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if m > 0.0 { 0.0 } else { 1.0 });
    }
    let t = m / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::config(e.to_string()))?;
    Ok(1.0 - dist.cdf(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::PointGroup;
    use crate::query::{QueryMethod, QueryResult};
    use crate::sampling::SamplingMethod;

    fn output_with(nodes: Vec<Vec<usize>>) -> GroupingOutput {
        GroupingOutput {
            sampler: SamplingMethod::Rvs,
            querier: QueryMethod::Cube,
            groups: nodes
                .into_iter()
                .map(|n| PointGroup {
                    center_voxel: None,
                    sampled_point: None,
                    nodes: QueryResult {
                        node_indices: n,
                        truncated: false,
                        padded: false,
                    },
                    center_position: [0.0; 3],
                    center_weight: 1.0,
                })
                .collect(),
            downsampled: PointCloud::default(),
            warnings: vec![],
            occupied_voxels: None,
        }
    }

    fn ten_voxel_cloud() -> PointCloud {
        // Ten voxels along x, three points each.
        PointCloud::from_positions((0..30).map(|i| [(i / 3) as f64 + 0.1 * (i % 3) as f64 + 0.05, 0.5, 0.5]))
    }

    #[test]
    fn full_cover_is_hundred() {
        let cloud = ten_voxel_cloud();
        let out = output_with(vec![(0..15).collect(), (15..30).collect()]);
        assert_eq!(occupied_space_coverage(&cloud, &out, [1.0; 3]).unwrap(), 100.0);
    }

    #[test]
    fn one_of_ten() {
        let cloud = ten_voxel_cloud();
        let out = output_with(vec![vec![0, 1, 2, 0]]);
        assert_eq!(occupied_space_coverage(&cloud, &out, [1.0; 3]).unwrap(), 10.0);
        assert!(occupied_space_coverage(&PointCloud::default(), &out, [1.0; 3]).is_err());
    }

    #[test]
    fn fit_recovers_linear_and_quadratic() {
        let lin: Vec<(f64, f64)> = [1e3, 4e3, 16e3, 64e3].iter().map(|&n| (n, 3.0 * n)).collect();
        let f = scaling_fit(&lin).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-9);
        let quad: Vec<(f64, f64)> = [1e3, 4e3, 16e3, 64e3].iter().map(|&n| (n, 0.5 * n * n)).collect();
        assert!((scaling_fit(&quad).unwrap().slope - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fit_ci_brackets_noisy_slope() {
        let noisy: Vec<(f64, f64)> = [1e3, 2e3, 4e3, 8e3, 16e3, 32e3]
            .iter()
            .zip([1.05, 0.97, 1.02, 0.99, 1.03, 0.96])
            .map(|(&n, e)| (n, n * e))
            .collect();
        let f = scaling_fit(&noisy).unwrap();
        assert!(f.ci95.0 < 1.0 && 1.0 < f.ci95.1, "{f:?}");
    }

    #[test]
    fn fit_rejects_narrow_span() {
        let few = [(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)];
        assert!(scaling_fit(&few).is_err());
        let narrow = [(1.0, 1.0), (2.0, 2.0), (4.0, 4.0), (8.0, 8.0)];
        assert!(scaling_fit(&narrow).is_err());
    }

    #[test]
    fn paired_t() {
        let a = [10.0, 11.0, 12.0, 13.0, 12.5];
        let b = [9.0, 9.5, 11.0, 11.0, 12.0];
        assert!(paired_t_greater(&a, &b).unwrap() < 0.05);
        assert!(paired_t_greater(&b, &a).unwrap() > 0.95);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median_u64(&mut [5, 1, 3]), Some(3));
        assert_eq!(median_u64(&mut [4, 1, 3, 2]), Some(2));
        assert_eq!(median_u64(&mut []), None);
    }
}
