//! Training-free forward pass of grid context aggregation.
//!
//! Each node contributes `e ⊙ M(f_i)`, where the edge attention `e` fuses a
//! geometric branch over `(χ_c, χ_i, w_i)` with a semantic branch over
//! `(f_cxt, f_i)`, and `f_cxt` is a parameter-free pooling of every context
//! point's features. Contributions are reduced by a symmetric aggregation.
//! Weights are injected (file or seeded generator); nothing is trained.
//!
//! Forward-mode derivatives (with respect to node features, node weights and
//! optionally all parameters) back the finite-difference checks.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pipeline::PointGroup;
use crate::rng::SeededRng;
use crate::types::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::DimMismatch("layer dims must be positive".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::DimMismatch(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            out.push(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b);
        }
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layers: Vec<DenseLayer>,
}

/// Value, tangent and distance-to-nondifferentiability of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub value: Vec<f64>,
    pub tangent: Vec<f64>,
    /// Smallest step along the tangent that reaches a relu kink or an
    /// aggregation tie, to first order; `+inf` if none is reachable.
    pub margin: f64,
}

impl MlpSpec {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimMismatch("mlp needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::DimMismatch(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random weights, uniform in `±sqrt(3 / in_dim)`, biases in `±0.1`.
    pub fn seeded(dims: &[usize], activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::DimMismatch("mlp needs at least two dims".into()));
        }
        let layers = dims
            .windows(2)
            .map(|d| {
                let scale = (3.0 / d[0] as f64).sqrt();
                let weights = (0..d[0] * d[1]).map(|_| scale * (2.0 * rng.unit() - 1.0)).collect();
                let bias = (0..d[1]).map(|_| 0.1 * (2.0 * rng.unit() - 1.0)).collect();
                DenseLayer::new(d[0], d[1], weights, bias, activation)
            })
            .collect::<Result<_>>()?;
        Self::new(layers)
    }

    /// Single identity layer of width `dim`.
    pub fn identity(dim: usize) -> Self {
        let mut l = DenseLayer::zeros(dim, dim, Activation::Identity);
        for i in 0..dim {
            l.weights[i * dim + i] = 1.0;
        }
        Self { layers: vec![l] }
    }

    /// Same shape, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim, l.activation))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    fn same_shape(&self, other: &MlpSpec) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    /// `self + t * direction`, parameterwise.
    pub fn perturbed(&self, direction: &MlpSpec, t: f64) -> MlpSpec {
        let mut out = self.clone();
        for (l, d) in out.layers.iter_mut().zip(&direction.layers) {
            l.weights.iter_mut().zip(&d.weights).for_each(|(w, dw)| *w += t * dw);
            l.bias.iter_mut().zip(&d.bias).for_each(|(b, db)| *b += t * db);
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimMismatch(format!(
                "mlp expects input dim {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.affine(&cur, &mut next);
            if l.activation == Activation::Relu {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass carrying a tangent: input direction `dx` and an optional
    /// parameter direction of the same shape as `self`.
    pub fn forward_dual(&self, x: &[f64], dx: &[f64], params: Option<&MlpSpec>) -> Result<Dual> {
        if x.len() != self.input_dim() || dx.len() != x.len() {
            return Err(Error::DimMismatch(format!(
                "mlp expects input dim {}, got {} / {}",
                self.input_dim(),
                x.len(),
                dx.len()
            )));
        }
        if let Some(p) = params {
            if !self.same_shape(p) {
                return Err(Error::DimMismatch("parameter tangent shape differs".into()));
            }
        }
        let mut v = x.to_vec();
        let mut dv = dx.to_vec();
        let mut margin = f64::INFINITY;
        let (mut nv, mut ndv, mut extra) = (Vec::new(), Vec::new(), Vec::new());
        for (li, l) in self.layers.iter().enumerate() {
            l.affine(&v, &mut nv);
            let linear = DenseLayer {
                bias: vec![0.0; l.out_dim],
                ..l.clone()
            };
            linear.affine(&dv, &mut ndv);
            if let Some(p) = params {
                p.layers[li].affine(&v, &mut extra);
                ndv.iter_mut().zip(&extra).for_each(|(a, b)| *a += b);
            }
            if l.activation == Activation::Relu {
                for (z, dz) in nv.iter_mut().zip(ndv.iter_mut()) {
                    margin = margin.min(step_to_zero(*z, *dz));
                    if *z <= 0.0 {
                        *z = 0.0;
                        *dz = 0.0;
                    }
                }
            }
            std::mem::swap(&mut v, &mut nv);
            std::mem::swap(&mut dv, &mut ndv);
        }
        Ok(Dual {
            value: v,
            tangent: dv,
            margin,
        })
    }
}

/// Step `t` at which `z + t * dz` reaches zero, in absolute value.
fn step_to_zero(z: f64, dz: f64) -> f64 {
    if dz == 0.0 {
        f64::INFINITY
    } else {
        z.abs() / dz.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    Sum,
    /// Mean weighted by node coverage weight.
    WeightedMean,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "sum" => Ok(Self::Sum),
            "weighted_mean" | "weighted-mean" => Ok(Self::WeightedMean),
            other => Err(Error::config(format!("unknown aggregation {other:?}"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::Sum => "sum",
            Self::WeightedMean => "weighted_mean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Mean,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            other => Err(Error::config(format!("unknown pooling {other:?}"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::Mean => "mean",
        })
    }
}

/// Featurization of the geometric branch input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoInput {
    /// `χ_c ⊕ χ_i ⊕ w_i` (7 values).
    Raw,
    /// `χ_c ⊕ χ_i ⊕ w_i ⊕ (χ_i - χ_c)` (10 values).
    Relative,
}

impl GeoInput {
    pub fn dim(self) -> usize {
        match self {
            GeoInput::Raw => 7,
            GeoInput::Relative => 10,
        }
    }
}

impl FromStr for GeoInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "relative" | "relative_geo" => Ok(Self::Relative),
            other => Err(Error::config(format!("unknown geo input {other:?}"))),
        }
    }
}

impl fmt::Display for GeoInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Raw => "raw",
            Self::Relative => "relative",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcaConfig {
    /// Node feature transform.
    pub m_spec: MlpSpec,
    pub geo_spec: MlpSpec,
    pub sem_spec: MlpSpec,
    /// Fuses `geo ⊕ sem` into the edge vector.
    pub fuse_spec: MlpSpec,
    pub aggregation: Aggregation,
    pub pooling: Pooling,
    pub geo_input: GeoInput,
}

/// Parameter direction for every MLP of a [`GcaConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct GcaParamTangent {
    pub m: MlpSpec,
    pub geo: MlpSpec,
    pub sem: MlpSpec,
    pub fuse: MlpSpec,
}

impl GcaConfig {
    /// Feature dimension the config expects, after checking that every
    /// branch chains.
    pub fn feature_dim(&self) -> Result<usize> {
        let fd = self.m_spec.input_dim();
        let mismatch = |msg: String| Err(Error::DimMismatch(msg));
        if self.geo_spec.input_dim() != self.geo_input.dim() {
            return mismatch(format!(
                "geo mlp input {} != {} for {} geo input",
                self.geo_spec.input_dim(),
                self.geo_input.dim(),
                self.geo_input
            ));
        }
        if self.sem_spec.input_dim() != 2 * fd {
            return mismatch(format!(
                "sem mlp input {} != 2 * feature dim {fd}",
                self.sem_spec.input_dim()
            ));
        }
        let fuse_in = self.geo_spec.output_dim() + self.sem_spec.output_dim();
        if self.fuse_spec.input_dim() != fuse_in {
            return mismatch(format!(
                "fuse mlp input {} != geo out + sem out = {fuse_in}",
                self.fuse_spec.input_dim()
            ));
        }
        let e = self.fuse_spec.output_dim();
        if e != 1 && e != self.m_spec.output_dim() {
            return mismatch(format!(
                "fuse output {e} must be 1 or match node transform output {}",
                self.m_spec.output_dim()
            ));
        }
        Ok(fd)
    }

    pub fn output_dim(&self) -> usize {
        self.m_spec.output_dim()
    }

    /// Random config: hidden width `hidden`, output width `out_dim`.
    pub fn seeded(
        feature_dim: usize,
        hidden: usize,
        out_dim: usize,
        activation: Activation,
        aggregation: Aggregation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let cfg = Self {
            m_spec: MlpSpec::seeded(&[feature_dim, hidden, out_dim], activation, rng)?,
            geo_spec: MlpSpec::seeded(&[GeoInput::Raw.dim(), hidden], activation, rng)?,
            sem_spec: MlpSpec::seeded(&[2 * feature_dim, hidden], activation, rng)?,
            fuse_spec: MlpSpec::seeded(&[2 * hidden, out_dim], activation, rng)?,
            aggregation,
            pooling: Pooling::Max,
            geo_input: GeoInput::Raw,
        };
        cfg.feature_dim()?;
        Ok(cfg)
    }

    /// Random parameter direction with the same shapes.
    pub fn random_tangent(&self, rng: &mut SeededRng) -> GcaParamTangent {
        let rand_like = |m: &MlpSpec, rng: &mut SeededRng| {
            let mut z = m.zeros_like();
            for l in &mut z.layers {
                l.weights.iter_mut().for_each(|w| *w = 2.0 * rng.unit() - 1.0);
                l.bias.iter_mut().for_each(|b| *b = 2.0 * rng.unit() - 1.0);
            }
            z
        };
        GcaParamTangent {
            m: rand_like(&self.m_spec, rng),
            geo: rand_like(&self.geo_spec, rng),
            sem: rand_like(&self.sem_spec, rng),
            fuse: rand_like(&self.fuse_spec, rng),
        }
    }

    pub fn perturbed(&self, dir: &GcaParamTangent, t: f64) -> Self {
        Self {
            m_spec: self.m_spec.perturbed(&dir.m, t),
            geo_spec: self.geo_spec.perturbed(&dir.geo, t),
            sem_spec: self.sem_spec.perturbed(&dir.sem, t),
            fuse_spec: self.fuse_spec.perturbed(&dir.fuse, t),
            ..self.clone()
        }
    }
}

/// A node of a local graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GcaNode {
    pub position: [f64; 3],
    pub weight: f64,
    pub features: Vec<f64>,
}

/// Everything one group's aggregation reads.
#[derive(Debug, Clone, PartialEq)]
pub struct GcaInput {
    pub center: [f64; 3],
    pub nodes: Vec<GcaNode>,
    pub context_features: Vec<Vec<f64>>,
}

impl GcaInput {
    /// Gathers node and context features for `group` from `cloud`.
    pub fn from_group(cloud: &PointCloud, group: &PointGroup, context: &[u32]) -> Result<Self> {
        let feats = |i: usize| {
            cloud.points[i]
                .features
                .clone()
                .ok_or_else(|| Error::DimMismatch(format!("point {i} has no features")))
        };
        Ok(Self {
            center: group.center_position,
            nodes: group
                .nodes
                .node_indices
                .iter()
                .map(|&i| {
                    Ok(GcaNode {
                        position: cloud.points[i].position,
                        weight: cloud.points[i].weight,
                        features: feats(i)?,
                    })
                })
                .collect::<Result<_>>()?,
            context_features: context.iter().map(|&i| feats(i as usize)).collect::<Result<_>>()?,
        })
    }
}

/// Perturbation of the node inputs. Context features are held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct GcaTangent {
    pub node_features: Vec<Vec<f64>>,
    pub node_weights: Vec<f64>,
}

impl GcaTangent {
    pub fn random(input: &GcaInput, rng: &mut SeededRng) -> Self {
        Self {
            node_features: input
                .nodes
                .iter()
                .map(|n| n.features.iter().map(|_| 2.0 * rng.unit() - 1.0).collect())
                .collect(),
            node_weights: input.nodes.iter().map(|_| 2.0 * rng.unit() - 1.0).collect(),
        }
    }

    pub fn zero(input: &GcaInput) -> Self {
        Self {
            node_features: input.nodes.iter().map(|n| vec![0.0; n.features.len()]).collect(),
            node_weights: vec![0.0; input.nodes.len()],
        }
    }

    fn apply(&self, input: &GcaInput, t: f64) -> GcaInput {
        let mut out = input.clone();
        for ((n, df), dw) in out.nodes.iter_mut().zip(&self.node_features).zip(&self.node_weights) {
            n.features.iter_mut().zip(df).for_each(|(f, d)| *f += t * d);
            n.weight += t * dw;
        }
        out
    }
}

/// Parameter-free elementwise reduction of all context features.
pub fn grid_context_pool(context: &[Vec<f64>], pooling: Pooling) -> Result<Vec<f64>> {
    let first = context.first().ok_or(Error::EmptyInput("context features"))?;
    let dim = first.len();
    if context.iter().any(|c| c.len() != dim) {
        return Err(Error::DimMismatch("context features have mixed dims".into()));
    }
    let mut acc = first.clone();
    for c in &context[1..] {
        for (a, v) in acc.iter_mut().zip(c) {
            match pooling {
                Pooling::Max => *a = a.max(*v),
                Pooling::Mean => *a += v,
            }
        }
    }
    if pooling == Pooling::Mean {
        let n = context.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(acc)
}

fn geo_vector(geo: GeoInput, chi_c: [f64; 3], chi_i: [f64; 3], w_i: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(geo.dim());
    v.extend_from_slice(&chi_c);
    v.extend_from_slice(&chi_i);
    v.push(w_i);
    if geo == GeoInput::Relative {
        v.extend((0..3).map(|a| chi_i[a] - chi_c[a]));
    }
    v
}

#[allow(clippy::too_many_arguments)]
fn edge_dual(
    chi_c: [f64; 3],
    chi_i: [f64; 3],
    w_i: f64,
    dw_i: f64,
    f_cxt: &[f64],
    f_i: &[f64],
    df_i: &[f64],
    config: &GcaConfig,
    params: Option<&GcaParamTangent>,
) -> Result<Dual> {
    let geo_in = geo_vector(config.geo_input, chi_c, chi_i, w_i);
    let mut dgeo_in = vec![0.0; geo_in.len()];
    dgeo_in[6] = dw_i;
    let g = config.geo_spec.forward_dual(&geo_in, &dgeo_in, params.map(|p| &p.geo))?;

    let sem_in: Vec<f64> = f_cxt.iter().chain(f_i).copied().collect();
    let dsem_in: Vec<f64> = std::iter::repeat_n(0.0, f_cxt.len()).chain(df_i.iter().copied()).collect();
    let s = config.sem_spec.forward_dual(&sem_in, &dsem_in, params.map(|p| &p.sem))?;

    let fuse_in: Vec<f64> = g.value.iter().chain(&s.value).copied().collect();
    let dfuse_in: Vec<f64> = g.tangent.iter().chain(&s.tangent).copied().collect();
    let mut e = config.fuse_spec.forward_dual(&fuse_in, &dfuse_in, params.map(|p| &p.fuse))?;
    e.margin = e.margin.min(g.margin).min(s.margin);
    Ok(e)
}

/// Edge attention vector for one node.
pub fn edge_attention(
    chi_c: [f64; 3],
    chi_i: [f64; 3],
    w_i: f64,
    f_cxt: &[f64],
    f_i: &[f64],
    config: &GcaConfig,
) -> Result<Vec<f64>> {
    let fd = config.feature_dim()?;
    if f_cxt.len() != fd || f_i.len() != fd {
        return Err(Error::DimMismatch(format!(
            "expected feature dim {fd}, got context {} and node {}",
            f_cxt.len(),
            f_i.len()
        )));
    }
    let zeros = vec![0.0; fd];
    Ok(edge_dual(chi_c, chi_i, w_i, 0.0, f_cxt, f_i, &zeros, config, None)?.value)
}

/// Center feature of one group.
pub fn gca_forward(input: &GcaInput, config: &GcaConfig) -> Result<Vec<f64>> {
    Ok(gca_dual(input, &GcaTangent::zero(input), config, None)?.value)
}

/// [`gca_forward`] plus its directional derivative along `tangent` (and
/// `params`, if given).
pub fn gca_dual(
    input: &GcaInput,
    tangent: &GcaTangent,
    config: &GcaConfig,
    params: Option<&GcaParamTangent>,
) -> Result<Dual> {
    let fd = config.feature_dim()?;
    if input.nodes.is_empty() {
        return Err(Error::EmptyInput("group nodes"));
    }
    if tangent.node_features.len() != input.nodes.len() || tangent.node_weights.len() != input.nodes.len() {
        return Err(Error::DimMismatch("tangent does not match node count".into()));
    }
    let f_cxt = grid_context_pool(&input.context_features, config.pooling)?;
    if f_cxt.len() != fd {
        return Err(Error::DimMismatch(format!("context dim {} != feature dim {fd}", f_cxt.len())));
    }
    let out_dim = config.output_dim();
    let mut margin = f64::INFINITY;
    let mut contributions = Vec::with_capacity(input.nodes.len());
    for (j, node) in input.nodes.iter().enumerate() {
        let df = &tangent.node_features[j];
        if node.features.len() != fd || df.len() != fd {
            return Err(Error::DimMismatch(format!(
                "node {j} has feature dim {}, expected {fd}",
                node.features.len()
            )));
        }
        let e = edge_dual(
            input.center,
            node.position,
            node.weight,
            tangent.node_weights[j],
            &f_cxt,
            &node.features,
            df,
            config,
            params,
        )?;
        let m = config.m_spec.forward_dual(&node.features, df, params.map(|p| &p.m))?;
        margin = margin.min(e.margin).min(m.margin);
        let gate = |k: usize| if e.value.len() == 1 { 0 } else { k };
        let value: Vec<f64> = (0..out_dim).map(|k| e.value[gate(k)] * m.value[k]).collect();
        let tan: Vec<f64> = (0..out_dim)
            .map(|k| e.tangent[gate(k)] * m.value[k] + e.value[gate(k)] * m.tangent[k])
            .collect();
        contributions.push((value, tan));
    }

    let mut value = vec![0.0; out_dim];
    let mut tan = vec![0.0; out_dim];
    match config.aggregation {
        Aggregation::Sum => {
            for (v, t) in &contributions {
                for k in 0..out_dim {
                    value[k] += v[k];
                    tan[k] += t[k];
                }
            }
        }
        Aggregation::Max => {
            for k in 0..out_dim {
                let mut best = 0;
                for (j, (v, _)) in contributions.iter().enumerate().skip(1) {
                    if v[k] > contributions[best].0[k] {
                        best = j;
                    }
                }
                let (bv, bt) = (contributions[best].0[k], contributions[best].1[k]);
                for (j, (v, t)) in contributions.iter().enumerate() {
                    if j != best {
                        margin = margin.min(step_to_zero(bv - v[k], bt - t[k]));
                    }
                }
                value[k] = bv;
                tan[k] = bt;
            }
        }
        Aggregation::WeightedMean => {
            let total: f64 = input.nodes.iter().map(|n| n.weight).sum();
            let dtotal: f64 = tangent.node_weights.iter().sum();
            if total == 0.0 {
                return Err(Error::config("weighted mean over zero total weight"));
            }
            let mut num = vec![0.0; out_dim];
            let mut dnum = vec![0.0; out_dim];
            for (j, (v, t)) in contributions.iter().enumerate() {
                let w = input.nodes[j].weight;
                let dw = tangent.node_weights[j];
                for k in 0..out_dim {
                    num[k] += w * v[k];
                    dnum[k] += dw * v[k] + w * t[k];
                }
            }
            for k in 0..out_dim {
                value[k] = num[k] / total;
                tan[k] = (dnum[k] * total - num[k] * dtotal) / (total * total);
            }
        }
    }
    Ok(Dual {
        value,
        tangent: tan,
        margin,
    })
}

/// Result of comparing forward-mode derivatives with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    /// `max_k |analytic_k - numeric_k| / max(|analytic|_inf, |numeric|_inf, 1)`
    /// over all probes.
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes rerolled because they sat too close to a relu kink or a max tie.
    pub kink_retries: usize,
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let scale = a
        .iter()
        .chain(n)
        .fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(n)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Compares directional derivatives of [`gca_forward`] along random
/// directions in node features, node weights and (if `include_params`) all
/// parameters against central differences with step `epsilon`.
///
/// A probe whose forward pass sits within `100 * epsilon` of a relu kink or
/// an aggregation tie has its nodes and center jittered and is retried
/// (at most 50 times per probe).
pub fn finite_diff_check(
    config: &GcaConfig,
    input: &GcaInput,
    epsilon: f64,
    probes: usize,
    include_params: bool,
    rng: &mut SeededRng,
) -> Result<FdReport> {
    let mut report = FdReport {
        max_rel_error: 0.0,
        probes: 0,
        kink_retries: 0,
    };
    for _ in 0..probes {
        let mut probe = input.clone();
        let mut attempts = 0;
        loop {
            let dir = GcaTangent::random(&probe, rng);
            let pdir = include_params.then(|| config.random_tangent(rng));
            let dual = gca_dual(&probe, &dir, config, pdir.as_ref())?;
            let shifted = |t: f64| -> Result<Dual> {
                let cfg = match &pdir {
                    Some(p) => config.perturbed(p, t),
                    None => config.clone(),
                };
                gca_dual(&dir.apply(&probe, t), &GcaTangent::zero(&probe), &cfg, None)
            };
            let (plus, minus) = (shifted(epsilon)?, shifted(-epsilon)?);
            let near_kink = dual.margin.min(plus.margin).min(minus.margin) < 100.0 * epsilon;
            if near_kink && attempts < 50 {
                attempts += 1;
                report.kink_retries += 1;
                let mut jitter = || 0.05 * (2.0 * rng.unit() - 1.0);
                for n in &mut probe.nodes {
                    n.features.iter_mut().for_each(|f| *f += jitter());
                    n.position.iter_mut().for_each(|x| *x += jitter());
                    n.weight += jitter().abs();
                }
                probe.center.iter_mut().for_each(|x| *x += jitter());
                continue;
            }
            if near_kink {
                return Err(Error::config("could not find a probe away from relu kinks"));
            }
            let numeric: Vec<f64> = plus
                .value
                .iter()
                .zip(&minus.value)
                .map(|(a, b)| (a - b) / (2.0 * epsilon))
                .collect();
            report.max_rel_error = report.max_rel_error.max(rel_error(&dual.tangent, &numeric));
            report.probes += 1;
            break;
        }
    }
    Ok(report)
}

/// Random input with `k` nodes and `context` context points.
pub fn random_input(feature_dim: usize, k: usize, context: usize, rng: &mut SeededRng) -> GcaInput {
    let vec3 = |rng: &mut SeededRng| [rng.unit(), rng.unit(), rng.unit()];
    let nodes = (0..k)
        .map(|_| GcaNode {
            position: vec3(rng),
            weight: 1.0 + (rng.below(8) as f64),
            features: (0..feature_dim).map(|_| 2.0 * rng.unit() - 1.0).collect(),
        })
        .collect();
    GcaInput {
        center: vec3(rng),
        nodes,
        context_features: (0..context)
            .map(|_| (0..feature_dim).map(|_| 2.0 * rng.unit() - 1.0).collect())
            .collect(),
    }
}

/// One line of [`run_checks`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Permutation invariance, shape, pooling and finite-difference checks for
/// `config` on `probes` random inputs.
pub fn run_checks(config: &GcaConfig, probes: usize, rng: &mut SeededRng) -> Result<Vec<CheckResult>> {
    let fd = config.feature_dim()?;
    let linear = [&config.m_spec, &config.geo_spec, &config.sem_spec, &config.fuse_spec]
        .iter()
        .all(|m| m.layers.iter().all(|l| l.activation == Activation::Identity));
    let mut results = Vec::new();

    let mut perm_err = 0.0f64;
    let mut shape_ok = true;
    for _ in 0..probes.max(1) {
        let input = random_input(fd, 6, 10, rng);
        let base = gca_forward(&input, config)?;
        shape_ok &= base.len() == config.output_dim();
        let mut shuffled = input.clone();
        rng.shuffle(&mut shuffled.nodes);
        rng.shuffle(&mut shuffled.context_features);
        let again = gca_forward(&shuffled, config)?;
        perm_err = perm_err.max(rel_error(&base, &again));
    }
    results.push(CheckResult {
        name: "permutation_invariance",
        pass: perm_err <= 1e-12,
        detail: format!("max_rel_diff={perm_err:.3e}"),
    });
    results.push(CheckResult {
        name: "output_shape",
        pass: shape_ok,
        detail: format!("dim={}", config.output_dim()),
    });

    let ctx = random_input(fd, 1, 12, rng).context_features;
    let pooled = grid_context_pool(&ctx, config.pooling)?;
    let mut pool_err = 0.0f64;
    for k in 0..fd {
        let column = ctx.iter().map(|c| c[k]);
        let expected = match config.pooling {
            Pooling::Max => column.fold(f64::NEG_INFINITY, f64::max),
            Pooling::Mean => column.sum::<f64>() / ctx.len() as f64,
        };
        pool_err = pool_err.max((expected - pooled[k]).abs());
    }
    results.push(CheckResult {
        name: "context_pooling",
        pass: pool_err <= 1e-12,
        detail: format!("max_abs_diff={pool_err:.3e}"),
    });

    let tolerance = if linear { 1e-8 } else { 1e-4 };
    let mut fd_err = 0.0f64;
    let mut retries = 0;
    for _ in 0..probes.max(1) {
        let input = random_input(fd, 5, 8, rng);
        let r = finite_diff_check(config, &input, 1e-5, 1, false, rng)?;
        fd_err = fd_err.max(r.max_rel_error);
        retries += r.kink_retries;
    }
    results.push(CheckResult {
        name: "finite_difference",
        pass: fd_err < tolerance,
        detail: format!("max_rel_error={fd_err:.3e} tolerance={tolerance:.0e} kink_retries={retries}"),
    });
    Ok(results)
}

// ---------------------------------------------------------------------------
// Weight files.
//
//     # comments and blank lines are ignored
//     aggregation max|sum|weighted_mean
//     pooling max|mean
//     geo raw|relative
//     mlp <m|geo|sem|fuse> <layer count>
//     layer <in> <out> <relu|identity>
//     <out lines of in weights>
//     <one line of out biases>
//
// The four `mlp` blocks may come in any order; each must appear once.

pub fn write_config<W: Write>(config: &GcaConfig, mut out: W) -> Result<()> {
    writeln!(out, "aggregation {}", config.aggregation)?;
    writeln!(out, "pooling {}", config.pooling)?;
    writeln!(out, "geo {}", config.geo_input)?;
    for (name, spec) in [
        ("m", &config.m_spec),
        ("geo", &config.geo_spec),
        ("sem", &config.sem_spec),
        ("fuse", &config.fuse_spec),
    ] {
        writeln!(out, "mlp {name} {}", spec.layers.len())?;
        for l in &spec.layers {
            writeln!(out, "layer {} {} {}", l.in_dim, l.out_dim, l.activation)?;
            for row in l.weights.chunks_exact(l.in_dim) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
            let line: Vec<String> = l.bias.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<GcaConfig> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let mut aggregation = Aggregation::Max;
    let mut pooling = Pooling::Max;
    let mut geo_input = GeoInput::Raw;
    let mut mlps: [Option<MlpSpec>; 4] = [None, None, None, None];
    let floats = |line_no: usize, line: &str, n: usize| -> Result<Vec<f64>> {
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse(line_no, format!("bad number {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != n {
            return Err(Error::DimMismatch(format!(
                "line {line_no}: expected {n} values, found {}",
                vals.len()
            )));
        }
        Ok(vals)
    };
    while let Some((line_no, line)) = lines.next() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let arg = |i: usize| toks.get(i).copied().ok_or_else(|| Error::parse(line_no, "missing argument"));
        let num = |i: usize| {
            arg(i)?
                .parse::<usize>()
                .map_err(|_| Error::parse(line_no, format!("bad integer {:?}", toks[i])))
        };
        match toks[0] {
            "aggregation" => aggregation = arg(1)?.parse()?,
            "pooling" => pooling = arg(1)?.parse()?,
            "geo" => geo_input = arg(1)?.parse()?,
            "mlp" => {
                let slot = match arg(1)? {
                    "m" => 0,
                    "geo" => 1,
                    "sem" => 2,
                    "fuse" => 3,
                    other => return Err(Error::parse(line_no, format!("unknown mlp {other:?}"))),
                };
                if mlps[slot].is_some() {
                    return Err(Error::parse(line_no, "duplicate mlp block"));
                }
                let count = num(2)?;
                let mut layers = Vec::with_capacity(count);
                for _ in 0..count {
                    let (ln, header) = lines.next().ok_or_else(|| Error::parse(line_no, "missing layer"))?;
                    let h: Vec<&str> = header.split_whitespace().collect();
                    if h.len() != 4 || h[0] != "layer" {
                        return Err(Error::parse(ln, "expected `layer <in> <out> <activation>`"));
                    }
                    let dim = |t: &str| t.parse::<usize>().map_err(|_| Error::parse(ln, format!("bad dim {t:?}")));
                    let (i, o) = (dim(h[1])?, dim(h[2])?);
                    let act: Activation = h[3].parse()?;
                    let mut weights = Vec::with_capacity(i * o);
                    for _ in 0..o {
                        let (wl, row) = lines.next().ok_or_else(|| Error::parse(ln, "missing weight row"))?;
                        weights.extend(floats(wl, row, i)?);
                    }
                    let (bl, brow) = lines.next().ok_or_else(|| Error::parse(ln, "missing bias row"))?;
                    layers.push(DenseLayer::new(i, o, weights, floats(bl, brow, o)?, act)?);
                }
                mlps[slot] = Some(MlpSpec::new(layers)?);
            }
            other => return Err(Error::parse(line_no, format!("unknown directive {other:?}"))),
        }
    }
    let [m, geo, sem, fuse] = mlps;
    let missing = |n: &str| Error::parse(0, format!("missing mlp block {n:?}"));
    let cfg = GcaConfig {
        m_spec: m.ok_or_else(|| missing("m"))?,
        geo_spec: geo.ok_or_else(|| missing("geo"))?,
        sem_spec: sem.ok_or_else(|| missing("sem"))?,
        fuse_spec: fuse.ok_or_else(|| missing("fuse"))?,
        aggregation,
        pooling,
        geo_input,
    };
    cfg.feature_dim()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn zero_config(fd: usize, h: usize, out: usize) -> GcaConfig {
        let z = |dims: &[usize]| MlpSpec::seeded(dims, Activation::Identity, &mut seeded_rng(0)).unwrap().zeros_like();
        GcaConfig {
            m_spec: z(&[fd, out]),
            geo_spec: z(&[7, h]),
            sem_spec: z(&[2 * fd, h]),
            fuse_spec: z(&[2 * h, out]),
            aggregation: Aggregation::Max,
            pooling: Pooling::Max,
            geo_input: GeoInput::Raw,
        }
    }

    #[test]
    fn pooling_basics() {
        assert_eq!(grid_context_pool(&[vec![1.0, 2.0]], Pooling::Max).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            grid_context_pool(&[vec![1.0, 5.0], vec![3.0, 2.0]], Pooling::Max).unwrap(),
            vec![3.0, 5.0]
        );
        assert_eq!(
            grid_context_pool(&[vec![1.0, 5.0], vec![3.0, 2.0]], Pooling::Mean).unwrap(),
            vec![2.0, 3.5]
        );
        let same = vec![vec![0.3, -1.0]; 4];
        assert_eq!(grid_context_pool(&same, Pooling::Max).unwrap(), vec![0.3, -1.0]);
        assert!(grid_context_pool(&[], Pooling::Max).is_err());
        assert!(grid_context_pool(&[vec![1.0], vec![1.0, 2.0]], Pooling::Max).is_err());
    }

    #[test]
    fn zero_weights_give_zero_edge() {
        let cfg = zero_config(3, 4, 2);
        let e = edge_attention([1.0; 3], [2.0; 3], 3.0, &[1.0; 3], &[0.5; 3], &cfg).unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_specs_reproduce_concatenated_inputs() {
        // geo: 7 -> 7, sem: 2 -> 2 (fd = 1), fuse: 9 -> 9 identity, m: 1 -> 9.
        let mut m = MlpSpec::identity(1).zeros_like();
        m.layers[0] = DenseLayer::new(1, 9, vec![1.0; 9], vec![0.0; 9], Activation::Identity).unwrap();
        let cfg = GcaConfig {
            m_spec: m,
            geo_spec: MlpSpec::identity(7),
            sem_spec: MlpSpec::identity(2),
            fuse_spec: MlpSpec::identity(9),
            aggregation: Aggregation::Sum,
            pooling: Pooling::Max,
            geo_input: GeoInput::Raw,
        };
        let e = edge_attention([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], 7.0, &[8.0], &[9.0], &cfg).unwrap();
        assert_eq!(e, (1..=9).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn edge_depends_on_coverage_weight() {
        let cfg = GcaConfig::seeded(4, 8, 8, Activation::Identity, Aggregation::Max, &mut seeded_rng(42)).unwrap();
        let f = [0.1, -0.2, 0.3, 0.4];
        let a = edge_attention([0.0; 3], [0.5; 3], 1.0, &f, &f, &cfg).unwrap();
        let b = edge_attention([0.0; 3], [0.5; 3], 2.0, &f, &f, &cfg).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn dimension_mismatches_rejected() {
        let mut cfg = zero_config(3, 4, 2);
        cfg.sem_spec = MlpSpec::identity(5);
        assert!(matches!(cfg.feature_dim(), Err(Error::DimMismatch(_))));
        let cfg = zero_config(3, 4, 2);
        assert!(edge_attention([0.0; 3], [0.0; 3], 1.0, &[0.0; 2], &[0.0; 3], &cfg).is_err());
        let mut bad = zero_config(3, 4, 2);
        bad.fuse_spec = MlpSpec::identity(8).zeros_like();
        assert!(bad.feature_dim().is_err());
    }

    #[test]
    fn scalar_gate_broadcasts() {
        let mut rng = seeded_rng(3);
        let mut cfg = GcaConfig::seeded(2, 4, 3, Activation::Identity, Aggregation::Sum, &mut rng).unwrap();
        cfg.fuse_spec = MlpSpec::seeded(&[8, 1], Activation::Identity, &mut rng).unwrap();
        let input = random_input(2, 3, 4, &mut rng);
        let out = gca_forward(&input, &cfg).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn single_node_max_is_its_contribution() {
        let mut rng = seeded_rng(5);
        let cfg = GcaConfig::seeded(3, 6, 6, Activation::Relu, Aggregation::Max, &mut rng).unwrap();
        let input = random_input(3, 1, 5, &mut rng);
        let n = &input.nodes[0];
        let f_cxt = grid_context_pool(&input.context_features, cfg.pooling).unwrap();
        let e = edge_attention(input.center, n.position, n.weight, &f_cxt, &n.features, &cfg).unwrap();
        let m = cfg.m_spec.forward(&n.features).unwrap();
        let expected: Vec<f64> = e.iter().zip(&m).map(|(a, b)| a * b).collect();
        assert_eq!(gca_forward(&input, &cfg).unwrap(), expected);
    }

    #[test]
    fn empty_group_rejected() {
        let cfg = zero_config(2, 2, 2);
        let input = GcaInput {
            center: [0.0; 3],
            nodes: vec![],
            context_features: vec![vec![0.0; 2]],
        };
        assert!(matches!(gca_forward(&input, &cfg), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn config_file_round_trip() {
        let mut rng = seeded_rng(8);
        let mut cfg = GcaConfig::seeded(3, 5, 4, Activation::Relu, Aggregation::WeightedMean, &mut rng).unwrap();
        cfg.pooling = Pooling::Mean;
        let mut buf = Vec::new();
        write_config(&cfg, &mut buf).unwrap();
        let back = parse_config(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_file_errors() {
        assert!(parse_config("aggregation max\n").is_err());
        let mut cfg = zero_config(2, 3, 2);
        cfg.sem_spec = MlpSpec::identity(4).zeros_like();
        let mut buf = Vec::new();
        write_config(&cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("mlp sem 1\nlayer 4 3", "mlp sem 1\nlayer 5 3");
        assert!(matches!(parse_config(&text), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn run_checks_pass_for_seeded_configs() {
        let mut rng = seeded_rng(21);
        for act in [Activation::Identity, Activation::Relu] {
            let cfg = GcaConfig::seeded(4, 8, 6, act, Aggregation::Max, &mut rng).unwrap();
            for r in run_checks(&cfg, 5, &mut rng).unwrap() {
                assert!(r.pass, "{act}: {r:?}");
            }
        }
    }
}
