//! Center selection: random and farthest point sampling on raw points, and
//! random, coverage-aware and naive-grid sampling on occupied voxels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{PointCloud, VoxelCoord};
use crate::voxel::VoxelPointIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingMethod {
    Rps,
    Fps,
    Rvs,
    Cas,
    NaiveGrid,
}

impl SamplingMethod {
    pub const ALL: [SamplingMethod; 5] = [Self::Rps, Self::Fps, Self::Rvs, Self::Cas, Self::NaiveGrid];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rps => "rps",
            Self::Fps => "fps",
            Self::Rvs => "rvs",
            Self::Cas => "cas",
            Self::NaiveGrid => "grid",
        }
    }

    /// Voxel samplers pick occupied voxels; the rest pick points.
    pub fn is_voxel_based(self) -> bool {
        matches!(self, Self::Rvs | Self::Cas | Self::NaiveGrid)
    }
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rps" => Ok(Self::Rps),
            "fps" => Ok(Self::Fps),
            "rvs" => Ok(Self::Rvs),
            "cas" => Ok(Self::Cas),
            "grid" | "naive" | "naive-grid" | "naive_grid" => Ok(Self::NaiveGrid),
            other => Err(Error::config(format!("unknown sampler {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Centers {
    Points(Vec<usize>),
    Voxels(Vec<VoxelCoord>),
}

impl Centers {
    pub fn len(&self) -> usize {
        match self {
            Centers::Points(p) => p.len(),
            Centers::Voxels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterSelection {
    pub method: SamplingMethod,
    pub centers: Centers,
    /// The `M` the caller asked for.
    pub requested: usize,
}

impl CenterSelection {
    /// Number of centers actually selected, `min(M, pool size)`.
    pub fn m_effective(&self) -> usize {
        self.centers.len()
    }
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::config("M must be at least 1"));
    }
    Ok(())
}

/// Random point sampling: `min(M, N)` distinct indices, uniform without replacement.
pub fn rps(cloud: &PointCloud, m: usize, rng: &mut SeededRng) -> Result<CenterSelection> {
    check_m(m)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut pool: Vec<usize> = (0..cloud.len()).collect();
    let picked = rng.partial_shuffle(&mut pool, m).to_vec();
    Ok(CenterSelection {
        method: SamplingMethod::Rps,
        centers: Centers::Points(picked),
        requested: m,
    })
}

/// Exact farthest point sampling with a random first point.
pub fn fps(cloud: &PointCloud, m: usize, rng: &mut SeededRng) -> Result<CenterSelection> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let first = rng.below(cloud.len());
    fps_traced(cloud, m, first).map(|(sel, _)| sel)
}

/// Exact `O(N * M)` farthest point sampling starting at `first`.
///
/// Also returns the min-distance of each pick to the already-selected set
/// at the time it was picked (`+inf` for the first). Ties go to the lowest index.
pub fn fps_traced(cloud: &PointCloud, m: usize, first: usize) -> Result<(CenterSelection, Vec<f64>)> {
    check_m(m)?;
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if first >= n {
        return Err(Error::config(format!("first index {first} out of range for {n} points")));
    }
    let m = m.min(n);
    let pos: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.position).collect();
    // Squared distances; selected points are parked at -1 so they never win.
    let mut min_d = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(m);
    let mut trace = Vec::with_capacity(m);
    let mut current = first;
    let mut current_d = f64::INFINITY;
    loop {
        picked.push(current);
        trace.push(current_d.sqrt());
        min_d[current] = -1.0;
        if picked.len() == m {
            break;
        }
        let c = pos[current];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, (p, d)) in pos.iter().zip(min_d.iter_mut()).enumerate() {
            if *d < 0.0 {
                continue;
            }
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            let dz = p[2] - c[2];
            let dist = dx * dx + dy * dy + dz * dz;
            if dist < *d {
                *d = dist;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        current = best;
        current_d = best_d;
    }
    Ok((
        CenterSelection {
            method: SamplingMethod::Fps,
            centers: Centers::Points(picked),
            requested: m,
        },
        trace,
    ))
}

fn random_slots(index: &VoxelPointIndex, m: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    check_m(m)?;
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let mut pool: Vec<usize> = (0..index.len()).collect();
    Ok(rng.partial_shuffle(&mut pool, m).to_vec())
}

fn voxel_selection(
    index: &VoxelPointIndex,
    method: SamplingMethod,
    slots: &[usize],
    requested: usize,
) -> CenterSelection {
    CenterSelection {
        method,
        centers: Centers::Voxels(slots.iter().map(|&s| index.occupied()[s]).collect()),
        requested,
    }
}

/// Random voxel sampling: every occupied voxel equally likely.
pub fn rvs(index: &VoxelPointIndex, m: usize, rng: &mut SeededRng) -> Result<CenterSelection> {
    let slots = random_slots(index, m, rng)?;
    Ok(voxel_selection(index, SamplingMethod::Rvs, &slots, m))
}

/// Same draw as [`rvs`], tagged so node querying stays inside the center voxel.
pub fn naive_grid(index: &VoxelPointIndex, m: usize, rng: &mut SeededRng) -> Result<CenterSelection> {
    let slots = random_slots(index, m, rng)?;
    Ok(voxel_selection(index, SamplingMethod::NaiveGrid, &slots, m))
}

/// Per occupied voxel, the number of incumbent centers whose neighborhood covers it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageState {
    counts: Vec<u32>,
    covered: usize,
}

impl CoverageState {
    /// Recount from scratch for the given center voxels.
    pub fn recount(index: &VoxelPointIndex, centers: &[VoxelCoord], r: u32) -> Result<Self> {
        let mut counts = vec![0u32; index.len()];
        let mut nb = Vec::new();
        for &c in centers {
            if !index.is_occupied(c) {
                return Err(Error::NotOccupied(c));
            }
            nb.clear();
            index.neighbor_slots_into(c, r, &mut nb);
            for &s in &nb {
                counts[s] += 1;
            }
        }
        let covered = counts.iter().filter(|&&c| c > 0).count();
        Ok(Self { counts, covered })
    }

    /// `C_V` for an occupied voxel; `None` if `v` is not occupied.
    pub fn count(&self, index: &VoxelPointIndex, v: VoxelCoord) -> Option<u32> {
        index.slot(v).map(|s| self.counts[s])
    }

    pub fn counts_by_slot(&self) -> &[u32] {
        &self.counts
    }

    /// Occupied voxels with `C_V > 0`.
    pub fn covered_count(&self) -> usize {
        self.covered
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapRecord {
    pub challenger: VoxelCoord,
    pub incumbent: VoxelCoord,
    pub h_add: f64,
    pub h_rmv: f64,
    pub covered_before: usize,
    pub covered_after: usize,
}

#[derive(Debug, Clone)]
pub struct CasOutcome {
    pub selection: CenterSelection,
    pub coverage: CoverageState,
    pub swaps: Vec<SwapRecord>,
    pub challenges: usize,
}

/// Incremental state of the coverage-aware greedy swap.
#[derive(Debug, Clone)]
pub struct CoverageAwareSampler<'a> {
    index: &'a VoxelPointIndex,
    r: u32,
    beta: f64,
    lambda: f64,
    incumbents: Vec<usize>,
    state: CoverageState,
    nb_challenger: Vec<usize>,
    nb_incumbent: Vec<usize>,
}

impl<'a> CoverageAwareSampler<'a> {
    /// Starts from the given incumbent voxels.
    pub fn new(
        index: &'a VoxelPointIndex,
        incumbents: &[VoxelCoord],
        r: u32,
        beta: f64,
    ) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::config(format!("beta must be >= 0, got {beta}")));
        }
        let slots = incumbents
            .iter()
            .map(|&v| index.slot(v).ok_or(Error::NotOccupied(v)))
            .collect::<Result<Vec<_>>>()?;
        let state = CoverageState::recount(index, incumbents, r)?;
        let side = 2 * r as usize + 1;
        // r = 0 has no neighbors; the penalty then normalizes by 1.
        let lambda = (side * side * side - 1).max(1) as f64;
        Ok(Self {
            index,
            r,
            beta,
            lambda,
            incumbents: slots,
            state,
            nb_challenger: Vec::new(),
            nb_incumbent: Vec::new(),
        })
    }

    pub fn incumbents(&self) -> Vec<VoxelCoord> {
        self.incumbents.iter().map(|&s| self.index.occupied()[s]).collect()
    }

    pub fn coverage(&self) -> &CoverageState {
        &self.state
    }

    /// Coverage gain of adding `challenger`, less the over-coverage penalty.
    pub fn h_add(&self, challenger: VoxelCoord) -> f64 {
        let mut nb = Vec::new();
        self.index.neighbor_slots_into(challenger, self.r, &mut nb);
        self.h_add_slots(&nb)
    }

    /// Coverage lost by removing `incumbent`.
    pub fn h_rmv(&self, incumbent: VoxelCoord) -> f64 {
        let mut nb = Vec::new();
        self.index.neighbor_slots_into(incumbent, self.r, &mut nb);
        self.h_rmv_slots(&nb)
    }

    fn h_add_slots(&self, nb: &[usize]) -> f64 {
        nb.iter()
            .map(|&s| {
                let c = self.state.counts[s];
                let delta = if c == 0 { 1.0 } else { 0.0 };
                delta - self.beta * c as f64 / self.lambda
            })
            .sum()
    }

    fn h_rmv_slots(&self, nb: &[usize]) -> f64 {
        nb.iter().filter(|&&s| self.state.counts[s] == 1).count() as f64
    }

    /// `challenger` challenges the incumbent at position `which`; replaces it
    /// iff `H_add > H_rmv`.
    pub fn challenge(&mut self, challenger: VoxelCoord, which: usize) -> Result<Option<SwapRecord>> {
        let c_slot = self.index.slot(challenger).ok_or(Error::NotOccupied(challenger))?;
        if which >= self.incumbents.len() {
            return Err(Error::config(format!("no incumbent at position {which}")));
        }
        Ok(self.challenge_slot(c_slot, which))
    }

    fn challenge_slot(&mut self, c_slot: usize, which: usize) -> Option<SwapRecord> {
        let i_slot = self.incumbents[which];
        let occupied = self.index.occupied();
        let mut nb_c = std::mem::take(&mut self.nb_challenger);
        let mut nb_i = std::mem::take(&mut self.nb_incumbent);
        nb_c.clear();
        nb_i.clear();
        self.index.neighbor_slots_into(occupied[c_slot], self.r, &mut nb_c);
        self.index.neighbor_slots_into(occupied[i_slot], self.r, &mut nb_i);
        let h_add = self.h_add_slots(&nb_c);
        let h_rmv = self.h_rmv_slots(&nb_i);
        let mut record = None;
        if h_add > h_rmv {
            let before = self.state.covered;
            for &s in &nb_i {
                self.state.counts[s] -= 1;
                if self.state.counts[s] == 0 {
                    self.state.covered -= 1;
                }
            }
            for &s in &nb_c {
                if self.state.counts[s] == 0 {
                    self.state.covered += 1;
                }
                self.state.counts[s] += 1;
            }
            self.incumbents[which] = c_slot;
            record = Some(SwapRecord {
                challenger: occupied[c_slot],
                incumbent: occupied[i_slot],
                h_add,
                h_rmv,
                covered_before: before,
                covered_after: self.state.covered,
            });
        }
        self.nb_challenger = nb_c;
        self.nb_incumbent = nb_i;
        record
    }
}

/// Coverage-aware sampling.
///
/// Starts from a random voxel draw, then makes one pass over the remaining
/// occupied voxels in shuffled order; each challenges a uniformly chosen
/// incumbent. With `beta = 0` every accepted swap strictly increases the
/// number of covered occupied voxels.
pub fn cas(
    index: &VoxelPointIndex,
    m: usize,
    r: u32,
    beta: f64,
    rng: &mut SeededRng,
) -> Result<CasOutcome> {
    let init = random_slots(index, m, rng)?;
    let init_voxels: Vec<VoxelCoord> = init.iter().map(|&s| index.occupied()[s]).collect();
    let mut sampler = CoverageAwareSampler::new(index, &init_voxels, r, beta)?;

    let mut picked = vec![false; index.len()];
    for &s in &init {
        picked[s] = true;
    }
    let mut challengers: Vec<usize> = (0..index.len()).filter(|&s| !picked[s]).collect();
    rng.shuffle(&mut challengers);

    let mut swaps = Vec::new();
    let m_eff = init.len();
    for &c in &challengers {
        let which = rng.below(m_eff);
        if let Some(rec) = sampler.challenge_slot(c, which) {
            swaps.push(rec);
        }
    }
    Ok(CasOutcome {
        selection: voxel_selection(index, SamplingMethod::Cas, &sampler.incumbents, m),
        coverage: sampler.state,
        swaps,
        challenges: challengers.len(),
    })
}
