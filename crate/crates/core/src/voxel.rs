//! Voxel-point index: quantizes every point into an integer voxel, keeps up
//! to `n_v` point indices per occupied voxel, and answers neighborhood and
//! shell queries over the occupied set.

use rand::RngCore;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::rng::{splitmix64, SeededRng};
use crate::types::{PointCloud, SamplingConfig, VoxelCoord};

/// Componentwise floor of `position / voxel_size`.
pub fn quantize(position: [f64; 3], voxel_size: [f64; 3]) -> Result<VoxelCoord> {
    if !position.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite(position));
    }
    if !voxel_size.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::config(format!("voxel size must be positive, got {voxel_size:?}")));
    }
    Ok(quantize_unchecked(position, voxel_size))
}

#[inline]
pub(crate) fn quantize_unchecked(p: [f64; 3], s: [f64; 3]) -> VoxelCoord {
    VoxelCoord::new(
        (p[0] / s[0]).floor() as i64,
        (p[1] / s[1]).floor() as i64,
        (p[2] / s[2]).floor() as i64,
    )
}

/// Occupied voxels around a center and their stored points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub center: VoxelCoord,
    /// Occupied voxels of the `(2r+1)^3` block in `(du, dv, dw)` lexicographic order.
    pub occupied_neighbors: Vec<VoxelCoord>,
    /// Stored points of `occupied_neighbors`, concatenated in the same order.
    pub context_point_indices: Vec<u32>,
}

/// Voxel to slot map: a dense array over the bounding box when that box is
/// small relative to the point count, a hash map otherwise.
#[derive(Debug, Clone)]
enum SlotLookup {
    Dense {
        origin: VoxelCoord,
        dims: [i64; 3],
        /// `u32::MAX` marks an empty cell.
        cells: Vec<u32>,
    },
    Hashed(FxHashMap<VoxelCoord, u32>),
}

impl SlotLookup {
    #[inline]
    fn get(&self, v: VoxelCoord) -> Option<usize> {
        match self {
            Self::Dense { origin, dims, cells } => {
                let du = v.u.wrapping_sub(origin.u);
                let dv = v.v.wrapping_sub(origin.v);
                let dw = v.w.wrapping_sub(origin.w);
                if !(0..dims[0]).contains(&du) || !(0..dims[1]).contains(&dv) || !(0..dims[2]).contains(&dw) {
                    return None;
                }
                let s = cells[((du * dims[1] + dv) * dims[2] + dw) as usize];
                (s != u32::MAX).then_some(s as usize)
            }
            Self::Hashed(map) => map.get(&v).map(|&s| s as usize),
        }
    }
}

/// Dense cells allowed per input point before falling back to hashing.
const DENSE_RATIO: u128 = 8;

/// Occupied voxels in ascending order, the point count of each, the slot of
/// every point, and the voxel lookup.
type Assignment = (Vec<VoxelCoord>, Vec<u32>, Vec<u32>, SlotLookup);

fn assign_slots(coords: &[VoxelCoord], parallel: bool) -> Assignment {
    let first = coords[0];
    let (lo, hi) = coords.iter().fold((first, first), |(lo, hi), v| {
        (
            VoxelCoord::new(lo.u.min(v.u), lo.v.min(v.v), lo.w.min(v.w)),
            VoxelCoord::new(hi.u.max(v.u), hi.v.max(v.v), hi.w.max(v.w)),
        )
    });
    let extent = |a: i64, b: i64| (b as i128 - a as i128 + 1) as u128;
    let count = extent(lo.u, hi.u) * extent(lo.v, hi.v) * extent(lo.w, hi.w);
    if count <= DENSE_RATIO * coords.len() as u128 + 4096 {
        assign_dense(coords, lo, [hi.u - lo.u + 1, hi.v - lo.v + 1, hi.w - lo.w + 1])
    } else {
        assign_sorted(coords, parallel)
    }
}

fn assign_dense(coords: &[VoxelCoord], lo: VoxelCoord, dims: [i64; 3]) -> Assignment {
    let cell_of = |v: &VoxelCoord| (((v.u - lo.u) * dims[1] + (v.v - lo.v)) * dims[2] + (v.w - lo.w)) as usize;
    let mut cells = vec![0u32; (dims[0] * dims[1] * dims[2]) as usize];
    for v in coords {
        cells[cell_of(v)] += 1;
    }
    let mut occupied = Vec::new();
    let mut totals = Vec::new();
    for (i, c) in cells.iter_mut().enumerate() {
        if *c == 0 {
            *c = u32::MAX;
            continue;
        }
        let i = i as i64;
        occupied.push(VoxelCoord::new(
            lo.u + i / (dims[1] * dims[2]),
            lo.v + (i / dims[2]) % dims[1],
            lo.w + i % dims[2],
        ));
        totals.push(*c);
        *c = totals.len() as u32 - 1;
    }
    let point_slot = coords.iter().map(|v| cells[cell_of(v)]).collect();
    (occupied, totals, point_slot, SlotLookup::Dense { origin: lo, dims, cells })
}

fn assign_sorted(coords: &[VoxelCoord], parallel: bool) -> Assignment {
    let mut keyed: Vec<(VoxelCoord, u32)> = coords.iter().copied().zip(0..).collect();
    if parallel {
        keyed.par_sort_unstable();
    } else {
        keyed.sort_unstable();
    }
    let mut occupied = Vec::new();
    let mut totals: Vec<u32> = Vec::new();
    let mut point_slot = vec![0u32; coords.len()];
    for &(v, i) in &keyed {
        if occupied.last() != Some(&v) {
            occupied.push(v);
            totals.push(0);
        }
        *totals.last_mut().expect("just pushed") += 1;
        point_slot[i as usize] = totals.len() as u32 - 1;
    }
    let map = occupied.iter().copied().zip(0..).collect();
    (occupied, totals, point_slot, SlotLookup::Hashed(map))
}

#[derive(Debug, Clone)]
pub struct VoxelPointIndex {
    voxel_size: [f64; 3],
    n_v: usize,
    num_points: usize,
    /// Occupied voxels in ascending `(u, v, w)` order; a voxel's position here is its slot.
    occupied: Vec<VoxelCoord>,
    slots: SlotLookup,
    /// CSR layout: stored points of slot `s` are `stored[offsets[s]..offsets[s + 1]]`.
    offsets: Vec<u32>,
    stored: Vec<u32>,
    totals: Vec<u32>,
}

impl VoxelPointIndex {
    /// Builds the index in one pass over `cloud`.
    ///
    /// Voxels holding more than `n_v` points keep a uniform random subset of
    /// size `n_v`: each point gets a priority from a salt drawn from `rng`, and
    /// the `n_v` lowest priorities survive. The result does not depend on point
    /// arrival order within a voxel or on how work is split across threads.
    pub fn build(cloud: &PointCloud, config: &SamplingConfig, rng: &mut SeededRng) -> Result<Self> {
        Self::build_impl(cloud, config, rng, false)
    }

    /// Same result as [`VoxelPointIndex::build`], with quantization and
    /// per-voxel selection spread over the rayon pool.
    pub fn build_parallel(
        cloud: &PointCloud,
        config: &SamplingConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Self::build_impl(cloud, config, rng, true)
    }

    fn build_impl(
        cloud: &PointCloud,
        config: &SamplingConfig,
        rng: &mut SeededRng,
        parallel: bool,
    ) -> Result<Self> {
        config.validate()?;
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if cloud.len() > u32::MAX as usize {
            return Err(Error::config("cloud too large for 32-bit point indices"));
        }
        let voxel_size = config.voxel_size;
        let n_v = config.n_v();
        let salt = rng.next_u64();

        let coords: Vec<VoxelCoord> = if parallel {
            cloud
                .points
                .par_iter()
                .map(|p| quantize_unchecked(p.position, voxel_size))
                .collect()
        } else {
            cloud
                .points
                .iter()
                .map(|p| quantize_unchecked(p.position, voxel_size))
                .collect()
        };
        if let Some(i) = cloud
            .points
            .iter()
            .position(|p| !p.position.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite(cloud.points[i].position));
        }

        let (occupied, totals, point_slot, slots) = assign_slots(&coords, parallel);
        drop(coords);

        // Counting sort of point indices by slot; stable, so each segment is
        // in ascending point order.
        let mut all_offsets = Vec::with_capacity(totals.len() + 1);
        let mut acc = 0u32;
        all_offsets.push(0);
        for &t in &totals {
            acc += t;
            all_offsets.push(acc);
        }
        let mut cursor: Vec<u32> = all_offsets[..totals.len()].to_vec();
        let mut grouped = vec![0u32; cloud.len()];
        for (i, &s) in point_slot.iter().enumerate() {
            let c = &mut cursor[s as usize];
            grouped[*c as usize] = i as u32;
            *c += 1;
        }
        drop(point_slot);

        let keep = |segment: &[u32]| -> Vec<u32> {
            let mut keyed: Vec<(u64, u32)> = segment
                .iter()
                .map(|&i| (splitmix64(salt ^ i as u64), i))
                .collect();
            keyed.select_nth_unstable(n_v - 1);
            let mut kept: Vec<u32> = keyed[..n_v].iter().map(|&(_, i)| i).collect();
            kept.sort_unstable();
            kept
        };

        let overfull: Vec<usize> = (0..totals.len())
            .filter(|&s| totals[s] as usize > n_v)
            .collect();
        let segment = |s: usize| &grouped[all_offsets[s] as usize..all_offsets[s + 1] as usize];
        let reduced: Vec<Vec<u32>> = if parallel {
            overfull.par_iter().map(|&s| keep(segment(s))).collect()
        } else {
            overfull.iter().map(|&s| keep(segment(s))).collect()
        };

        let mut offsets = Vec::with_capacity(totals.len() + 1);
        let mut stored = Vec::with_capacity(cloud.len().min(totals.len() * n_v));
        offsets.push(0u32);
        let mut next_overfull = overfull.iter().zip(&reduced).peekable();
        for s in 0..totals.len() {
            match next_overfull.peek() {
                Some(&(&o, kept)) if o == s => {
                    stored.extend_from_slice(kept);
                    next_overfull.next();
                }
                _ => stored.extend_from_slice(segment(s)),
            }
            offsets.push(stored.len() as u32);
        }

        Ok(Self {
            voxel_size,
            n_v,
            num_points: cloud.len(),
            occupied,
            slots,
            offsets,
            stored,
            totals,
        })
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    /// Number of points in the cloud the index was built from.
    pub fn num_points(&self) -> usize {
        self.num_points
    }

    /// Number of occupied voxels, `|O_v|`.
    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    /// Occupied voxels in ascending `(u, v, w)` order.
    pub fn occupied(&self) -> &[VoxelCoord] {
        &self.occupied
    }

    #[inline]
    pub fn slot(&self, v: VoxelCoord) -> Option<usize> {
        self.slots.get(v)
    }

    pub fn is_occupied(&self, v: VoxelCoord) -> bool {
        self.slots.get(v).is_some()
    }

    #[inline]
    pub fn bucket_by_slot(&self, slot: usize) -> &[u32] {
        &self.stored[self.offsets[slot] as usize..self.offsets[slot + 1] as usize]
    }

    pub fn bucket(&self, v: VoxelCoord) -> Option<&[u32]> {
        self.slot(v).map(|s| self.bucket_by_slot(s))
    }

    /// Points that fell into `v`, including those dropped by the `n_v` cap.
    pub fn total(&self, v: VoxelCoord) -> Option<usize> {
        self.slot(v).map(|s| self.totals[s] as usize)
    }

    pub fn total_by_slot(&self, slot: usize) -> usize {
        self.totals[slot] as usize
    }

    /// Voxel of `position` under this index's voxel size.
    pub fn voxel_of(&self, position: [f64; 3]) -> VoxelCoord {
        quantize_unchecked(position, self.voxel_size)
    }

    /// Appends the slots of occupied voxels in the `(2r+1)^3` block around
    /// `center` (in lexicographic offset order) to `out`.
    pub fn neighbor_slots_into(&self, center: VoxelCoord, r: u32, out: &mut Vec<usize>) {
        let r = r as i64;
        if let SlotLookup::Dense { origin, dims, cells } = &self.slots {
            // Row-wise scan of the block clipped to the dense box.
            let lo = |c: i64, o: i64| c.saturating_sub(o).saturating_sub(r);
            let lo = [lo(center.u, origin.u), lo(center.v, origin.v), lo(center.w, origin.w)];
            let range = |a: usize| lo[a].max(0)..=lo[a].saturating_add(2 * r).min(dims[a] - 1);
            let ws = range(2);
            if ws.is_empty() {
                return;
            }
            let (w0, w1) = (*ws.start() as usize, *ws.end() as usize);
            for u in range(0) {
                for v in range(1) {
                    let row = ((u * dims[1] + v) * dims[2]) as usize;
                    for &s in &cells[row + w0..=row + w1] {
                        if s != u32::MAX {
                            out.push(s as usize);
                        }
                    }
                }
            }
            return;
        }
        for du in -r..=r {
            for dv in -r..=r {
                for dw in -r..=r {
                    if let Some(s) = self.slot(center.offset(du, dv, dw)) {
                        out.push(s);
                    }
                }
            }
        }
    }

    pub fn neighborhood(&self, center: VoxelCoord, r: u32) -> Result<Neighborhood> {
        if !self.is_occupied(center) {
            return Err(Error::NotOccupied(center));
        }
        let mut slots = Vec::new();
        self.neighbor_slots_into(center, r, &mut slots);
        let occupied_neighbors = slots.iter().map(|&s| self.occupied[s]).collect();
        let context_point_indices = slots
            .iter()
            .flat_map(|&s| self.bucket_by_slot(s).iter().copied())
            .collect();
        Ok(Neighborhood {
            center,
            occupied_neighbors,
            context_point_indices,
        })
    }

    /// Stored points grouped by Chebyshev shell: entry `l` holds the points of
    /// occupied voxels at distance exactly `l` from `center`, for `l` in `0..=r`.
    pub fn neighborhood_layers(&self, center: VoxelCoord, r: u32) -> Result<Vec<Vec<u32>>> {
        if !self.is_occupied(center) {
            return Err(Error::NotOccupied(center));
        }
        Ok((0..=r)
            .map(|level| {
                let mut shell = Vec::new();
                self.shell_into(center, level, &mut shell);
                shell
            })
            .collect())
    }

    /// Appends the stored points of occupied voxels at Chebyshev distance
    /// exactly `level` from `center`, in lexicographic offset order.
    pub fn shell_into(&self, center: VoxelCoord, level: u32, out: &mut Vec<u32>) {
        let l = level as i64;
        for du in -l..=l {
            for dv in -l..=l {
                let on_face = du.abs() == l || dv.abs() == l;
                // Interior columns only touch the shell at dw = +-l.
                let step = if on_face || l == 0 { 1 } else { 2 * l };
                let mut dw = -l;
                while dw <= l {
                    if let Some(s) = self.slot(center.offset(du, dv, dw)) {
                        out.extend_from_slice(self.bucket_by_slot(s));
                    }
                    dw += step;
                }
            }
        }
    }
}
