//! Shared domain model: points, clouds, voxel coordinates and run configuration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub position: [f64; 3],
    /// Number of raw points aggregated into this one. Raw points start at 1.
    pub weight: f64,
    pub features: Option<Vec<f64>>,
}

impl Point {
    pub fn new(position: [f64; 3]) -> Self {
        Self {
            position,
            weight: 1.0,
            features: None,
        }
    }

    pub fn with_weight(position: [f64; 3], weight: f64) -> Self {
        Self {
            position,
            weight,
            features: None,
        }
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = Some(features);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn from_positions<I>(positions: I) -> Self
    where
        I: IntoIterator<Item = [f64; 3]>,
    {
        Self {
            points: positions.into_iter().map(Point::new).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn position(&self, i: usize) -> [f64; 3] {
        self.points[i].position
    }

    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }

    /// Feature dimension shared by every point, `None` if the cloud has no
    /// features. Only meaningful for a validated cloud.
    pub fn feature_dim(&self) -> Option<usize> {
        self.points
            .first()
            .and_then(|p| p.features.as_ref().map(Vec::len))
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.points.first()?.position;
        Some(self.points.iter().fold((first, first), |(mut lo, mut hi), p| {
            for a in 0..3 {
                lo[a] = lo[a].min(p.position[a]);
                hi[a] = hi[a].max(p.position[a]);
            }
            (lo, hi)
        }))
    }

    /// Structuring operations need a nonempty cloud that passes validation.
    pub fn ensure_valid(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let report = validate_cloud(self);
        match report.violations.first() {
            None => Ok(()),
            Some(first) => Err(Error::InvalidCloud(
                report.violations.len(),
                first.to_string(),
            )),
        }
    }
}

/// Integer voxel coordinate. Negative components are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub u: i64,
    pub v: i64,
    pub w: i64,
}

impl VoxelCoord {
    pub const fn new(u: i64, v: i64, w: i64) -> Self {
        Self { u, v, w }
    }

    #[inline]
    pub fn offset(self, du: i64, dv: i64, dw: i64) -> Self {
        Self::new(self.u + du, self.v + dv, self.w + dw)
    }

    /// Chebyshev distance in voxel units.
    #[inline]
    pub fn chebyshev(self, other: Self) -> u64 {
        (self.u - other.u)
            .unsigned_abs()
            .max((self.v - other.v).unsigned_abs())
            .max((self.w - other.w).unsigned_abs())
    }
}

impl fmt::Display for VoxelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.u, self.v, self.w)
    }
}

/// What to do when a neighborhood holds fewer than `K` candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortGroupPolicy {
    /// Pad to `K` by cycling through the drawn indices.
    #[default]
    Repeat,
    /// Keep only the real candidates; the result is flagged truncated.
    Reject,
}

/// Radius used by ball query when the caller does not give one explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BallRadius {
    /// Half the diagonal of the `(2r+1)^3` neighborhood block.
    #[default]
    HalfDiagonal,
    /// Sphere with the same volume as the `(2r+1)^3` neighborhood block.
    VolumeMatched,
    Fixed(f64),
}

impl std::str::FromStr for ShortGroupPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repeat" => Ok(Self::Repeat),
            "reject" => Ok(Self::Reject),
            other => Err(Error::config(format!("unknown short-group policy {other:?}"))),
        }
    }
}

/// `half-diagonal`, `volume-matched`, or a positive radius.
impl std::str::FromStr for BallRadius {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-diagonal" => Ok(Self::HalfDiagonal),
            "volume-matched" => Ok(Self::VolumeMatched),
            other => match other.parse::<f64>() {
                Ok(r) if r.is_finite() && r > 0.0 => Ok(Self::Fixed(r)),
                _ => Err(Error::config(format!("bad ball radius {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub voxel_size: [f64; 3],
    /// Number of groups (centers).
    pub m: usize,
    /// Nodes per group.
    pub k: usize,
    /// Per-voxel storage cap. `None` means "same as `k`".
    pub n_v: Option<usize>,
    /// Chebyshev radius `r` of the voxel neighborhood, in voxels.
    pub neighborhood_radius: u32,
    /// Over-coverage penalty for coverage-aware sampling.
    pub beta: f64,
    pub seed: u64,
    pub short_group_policy: ShortGroupPolicy,
    pub ball_radius: BallRadius,
    /// Baseline convention: point-sampled groups keep the sampled point as
    /// their center instead of the weighted node barycenter.
    pub keep_sampled_center: bool,
}

impl SamplingConfig {
    pub fn new(voxel_size: f64, m: usize, k: usize) -> Self {
        Self {
            voxel_size: [voxel_size; 3],
            m,
            k,
            n_v: None,
            neighborhood_radius: 1,
            beta: 0.0,
            seed: 0,
            short_group_policy: ShortGroupPolicy::Repeat,
            ball_radius: BallRadius::HalfDiagonal,
            keep_sampled_center: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n_v(mut self, n_v: usize) -> Self {
        self.n_v = Some(n_v);
        self
    }

    pub fn with_radius(mut self, r: u32) -> Self {
        self.neighborhood_radius = r;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_policy(mut self, policy: ShortGroupPolicy) -> Self {
        self.short_group_policy = policy;
        self
    }

    pub fn with_ball_radius(mut self, radius: BallRadius) -> Self {
        self.ball_radius = radius;
        self
    }

    pub fn n_v(&self) -> usize {
        self.n_v.unwrap_or(self.k)
    }

    /// Neighbor count `(2r+1)^3 - 1` used to normalize the over-coverage penalty.
    pub fn lambda(&self) -> usize {
        let side = 2 * self.neighborhood_radius as usize + 1;
        side * side * side - 1
    }

    /// Ball query radius resolved from [`BallRadius`].
    pub fn resolved_ball_radius(&self) -> f64 {
        let side = (2 * self.neighborhood_radius + 1) as f64;
        let [vx, vy, vz] = self.voxel_size;
        match self.ball_radius {
            BallRadius::HalfDiagonal => 0.5 * side * (vx * vx + vy * vy + vz * vz).sqrt(),
            BallRadius::VolumeMatched => {
                let volume = side.powi(3) * vx * vy * vz;
                (3.0 * volume / (4.0 * std::f64::consts::PI)).cbrt()
            }
            BallRadius::Fixed(r) => r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.voxel_size.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::config(format!(
                "voxel size must be positive, got {:?}",
                self.voxel_size
            )));
        }
        if self.m == 0 {
            return Err(Error::config("M must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        if self.n_v == Some(0) {
            return Err(Error::config("n_v must be at least 1"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if let BallRadius::Fixed(r) = self.ball_radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::config(format!("ball radius must be > 0, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NonFinite,
    WeightBelowOne(f64),
    InconsistentFeatureDims { expected: Option<usize>, found: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::NonFinite => write!(f, "point {}: non-finite coordinate", self.index),
            ViolationKind::WeightBelowOne(w) => {
                write!(f, "point {}: coverage weight {w} < 1", self.index)
            }
            ViolationKind::InconsistentFeatureDims { expected, found } => write!(
                f,
                "point {}: inconsistent feature dims (expected {expected:?}, found {found:?})",
                self.index
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reports every invariant violation in `cloud`. Feature dimensions are
/// checked against point 0.
pub fn validate_cloud(cloud: &PointCloud) -> ValidationReport {
    let expected = cloud.feature_dim();
    let mut violations = Vec::new();
    for (index, p) in cloud.points.iter().enumerate() {
        if !p.position.iter().all(|c| c.is_finite()) {
            violations.push(Violation {
                index,
                kind: ViolationKind::NonFinite,
            });
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
        if !(p.weight >= 1.0) {
            violations.push(Violation {
                index,
                kind: ViolationKind::WeightBelowOne(p.weight),
            });
        }
        let found = p.features.as_ref().map(Vec::len);
        if found != expected {
            violations.push(Violation {
                index,
                kind: ViolationKind::InconsistentFeatureDims { expected, found },
            });
        }
    }
    ValidationReport { violations }
}
