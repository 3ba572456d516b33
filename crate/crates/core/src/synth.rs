//! Deterministic synthetic clouds for tests and benchmarks.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::{Exp1, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CloudKind {
    /// Uniform in `[0, extent)^3`.
    Uniform { extent: f64 },
    /// Isotropic gaussian blobs with centers uniform in the unit cube and
    /// exponentially distributed cluster sizes, so density is uneven.
    GaussianClusters { clusters: usize, spread: f64 },
    /// Uniform on a sphere of `radius` centered at the origin.
    SphereSurface { radius: f64 },
}

impl CloudKind {
    pub fn name(&self) -> &'static str {
        match self {
            CloudKind::Uniform { .. } => "uniform",
            CloudKind::GaussianClusters { .. } => "gaussian",
            CloudKind::SphereSurface { .. } => "sphere",
        }
    }
}

/// A generator spec with an optional point count, as written on the command
/// line: `uniform[:N[,extent]]`, `gaussian[:clusters[,spread[,N]]]`,
/// `sphere[:N[,radius]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub kind: CloudKind,
    pub n: Option<usize>,
}

impl GenSpec {
    pub fn generate(&self, n: Option<usize>, seed: u64) -> Result<PointCloud> {
        let n = n
            .or(self.n)
            .ok_or_else(|| Error::config(format!("{} generator needs a point count", self.kind.name())))?;
        synth_cloud(self.kind, n, seed)
    }
}

impl fmt::Display for GenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.n) {
            (CloudKind::Uniform { extent }, n) => {
                write!(f, "uniform:{},{extent}", n.map_or("?".into(), |n| n.to_string()))
            }
            (CloudKind::GaussianClusters { clusters, spread }, None) => {
                write!(f, "gaussian:{clusters},{spread}")
            }
            (CloudKind::GaussianClusters { clusters, spread }, Some(n)) => {
                write!(f, "gaussian:{clusters},{spread},{n}")
            }
            (CloudKind::SphereSurface { radius }, n) => {
                write!(f, "sphere:{},{radius}", n.map_or("?".into(), |n| n.to_string()))
            }
        }
    }
}

pub const DEFAULT_CLUSTERS: usize = 8;
pub const DEFAULT_SPREAD: f64 = 0.05;

impl FromStr for GenSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let params: Vec<&str> = params.split(',').filter(|p| !p.is_empty()).collect();
        let bad = |what: &str| Error::config(format!("bad {what} in generator spec {s:?}"));
        let count = |p: &str| p.parse::<usize>().map_err(|_| bad("point count"));
        let real = |p: &str, what: &str| p.parse::<f64>().map_err(|_| bad(what));
        let too_many = |max: usize| {
            if params.len() > max {
                Err(bad("parameter list"))
            } else {
                Ok(())
            }
        };
        let spec = match kind {
            "uniform" => {
                too_many(2)?;
                GenSpec {
                    kind: CloudKind::Uniform {
                        extent: params.get(1).map(|p| real(p, "extent")).transpose()?.unwrap_or(1.0),
                    },
                    n: params.first().map(|p| count(p)).transpose()?,
                }
            }
            "gaussian" | "gaussian_clusters" => {
                too_many(3)?;
                GenSpec {
                    kind: CloudKind::GaussianClusters {
                        clusters: params
                            .first()
                            .map(|p| p.parse::<usize>().map_err(|_| bad("cluster count")))
                            .transpose()?
                            .unwrap_or(DEFAULT_CLUSTERS),
                        spread: params.get(1).map(|p| real(p, "spread")).transpose()?.unwrap_or(DEFAULT_SPREAD),
                    },
                    n: params.get(2).map(|p| count(p)).transpose()?,
                }
            }
            "sphere" | "sphere_surface" => {
                too_many(2)?;
                GenSpec {
                    kind: CloudKind::SphereSurface {
                        radius: params.get(1).map(|p| real(p, "radius")).transpose()?.unwrap_or(1.0),
                    },
                    n: params.first().map(|p| count(p)).transpose()?,
                }
            }
            other => return Err(Error::config(format!("unknown generator {other:?}"))),
        };
        validate_kind(spec.kind)?;
        Ok(spec)
    }
}

fn validate_kind(kind: CloudKind) -> Result<()> {
    match kind {
        CloudKind::Uniform { extent } if !(extent.is_finite() && extent > 0.0) => {
            Err(Error::config(format!("uniform extent must be > 0, got {extent}")))
        }
        CloudKind::GaussianClusters { clusters: 0, .. } => {
            Err(Error::config("gaussian generator needs at least one cluster"))
        }
        CloudKind::GaussianClusters { spread, .. } if !(spread.is_finite() && spread >= 0.0) => {
            Err(Error::config(format!("gaussian spread must be >= 0, got {spread}")))
        }
        CloudKind::SphereSurface { radius } if !(radius.is_finite() && radius > 0.0) => {
            Err(Error::config(format!("sphere radius must be > 0, got {radius}")))
        }
        _ => Ok(()),
    }
}

pub fn synth_cloud(kind: CloudKind, n: usize, seed: u64) -> Result<PointCloud> {
    validate_kind(kind)?;
    if n == 0 {
        return Err(Error::config("synthetic cloud needs N >= 1"));
    }
    let mut rng = SeededRng::new(seed);
    let cloud = match kind {
        CloudKind::Uniform { extent } => uniform_with(&mut rng, n, extent),
        CloudKind::GaussianClusters { clusters, spread } => {
            let centers: Vec<[f64; 3]> = (0..clusters)
                .map(|_| [rng.unit(), rng.unit(), rng.unit()])
                .collect();
            let sizes: Vec<f64> = (0..clusters)
                .map(|_| {
                    let e: f64 = Exp1.sample(&mut rng);
                    e + 1e-3
                })
                .collect();
            let pick = WeightedIndex::new(&sizes).map_err(|e| Error::config(e.to_string()))?;
            let noise = Normal::new(0.0, spread).map_err(|e| Error::config(e.to_string()))?;
            PointCloud::from_positions((0..n).map(|_| {
                let c = centers[pick.sample(&mut rng)];
                [
                    c[0] + noise.sample(&mut rng),
                    c[1] + noise.sample(&mut rng),
                    c[2] + noise.sample(&mut rng),
                ]
            }))
        }
        CloudKind::SphereSurface { radius } => PointCloud::from_positions((0..n).map(|_| loop {
            let d: [f64; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if norm > 1e-12 {
                break [radius * d[0] / norm, radius * d[1] / norm, radius * d[2] / norm];
            }
        })),
    };
    Ok(cloud)
}

fn uniform_with(rng: &mut SeededRng, n: usize, extent: f64) -> PointCloud {
    PointCloud::from_positions((0..n).map(|_| {
        [extent * rng.unit(), extent * rng.unit(), extent * rng.unit()]
    }))
}

/// Uniform cloud in `[0, extent)^3`.
pub fn uniform_cube(n: usize, extent: f64, seed: u64) -> PointCloud {
    uniform_with(&mut SeededRng::new(seed), n, extent)
}

/// Uniform subsample of `n` points, keeping source order. Errors when the
/// source is smaller than `n`.
pub fn subsample(cloud: &PointCloud, n: usize, rng: &mut SeededRng) -> Result<PointCloud> {
    if cloud.len() < n {
        return Err(Error::SourceTooSmall {
            available: cloud.len(),
            requested: n,
        });
    }
    if cloud.len() == n {
        return Ok(cloud.clone());
    }
    let mut keep = rng.sample_indices(cloud.len(), n);
    keep.sort_unstable();
    Ok(PointCloud::new(keep.into_iter().map(|i| cloud.points[i].clone()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::quantize;
    use std::collections::HashSet;

    #[test]
    fn uniform_stays_in_unit_cube() {
        let c = synth_cloud(CloudKind::Uniform { extent: 1.0 }, 1000, 3).unwrap();
        assert_eq!(c.len(), 1000);
        assert!(c.points.iter().all(|p| p.position.iter().all(|&x| (0.0..1.0).contains(&x))));
    }

    #[test]
    fn collapsed_cluster_occupies_few_voxels() {
        let c = synth_cloud(CloudKind::GaussianClusters { clusters: 1, spread: 1e-9 }, 500, 4).unwrap();
        let voxels: HashSet<_> = c.points.iter().map(|p| quantize(p.position, [0.5; 3]).unwrap()).collect();
        assert!(voxels.len() <= 8);
    }

    #[test]
    fn sphere_radii_exact() {
        let c = synth_cloud(CloudKind::SphereSurface { radius: 1.0 }, 10_000, 5).unwrap();
        for p in &c.points {
            let r = p.position.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((r - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let kind = CloudKind::GaussianClusters { clusters: 4, spread: 0.1 };
        assert_eq!(synth_cloud(kind, 50, 9).unwrap(), synth_cloud(kind, 50, 9).unwrap());
        assert_ne!(synth_cloud(kind, 50, 9).unwrap(), synth_cloud(kind, 50, 10).unwrap());
    }

    #[test]
    fn spec_grammar() {
        let g: GenSpec = "gaussian:8,0.05".parse().unwrap();
        assert_eq!(g.kind, CloudKind::GaussianClusters { clusters: 8, spread: 0.05 });
        assert_eq!(g.n, None);
        let u: GenSpec = "uniform:1000".parse().unwrap();
        assert_eq!(u.n, Some(1000));
        assert_eq!(u.kind, CloudKind::Uniform { extent: 1.0 });
        let s: GenSpec = "sphere:200,2.5".parse().unwrap();
        assert_eq!(s.kind, CloudKind::SphereSurface { radius: 2.5 });
        assert!("cube:3".parse::<GenSpec>().is_err());
        assert!("gaussian:0".parse::<GenSpec>().is_err());
        assert!("uniform:abc".parse::<GenSpec>().is_err());
        assert!(g.generate(None, 1).is_err());
        assert_eq!(g.generate(Some(10), 1).unwrap().len(), 10);
    }

    #[test]
    fn invalid_params() {
        assert!(synth_cloud(CloudKind::Uniform { extent: 1.0 }, 0, 0).is_err());
        assert!(synth_cloud(CloudKind::SphereSurface { radius: -1.0 }, 5, 0).is_err());
    }

    #[test]
    fn subsample_keeps_order_and_errors_when_short() {
        let c = uniform_cube(100, 1.0, 1);
        let s = subsample(&c, 10, &mut SeededRng::new(2)).unwrap();
        assert_eq!(s.len(), 10);
        assert!(subsample(&c, 101, &mut SeededRng::new(2)).is_err());
    }
}
