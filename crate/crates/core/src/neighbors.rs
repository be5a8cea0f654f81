//! Fixed-radius neighbour search over augmented samples with a uniform grid
//! hash. Cells have side slightly above the build radius, so any point within
//! that radius of a query lies in one of the `3^dim` surrounding cells.

use rustc_hash::FxHashMap;

use crate::data::{augment, Trajectory};
use crate::error::{Error, Result};

/// Points of an ensemble with their `(path, index)` origin.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    dim: usize,
    cell: f64,
    coords: Vec<f64>,
    tags: Vec<(u32, u32)>,
    /// Point ids sorted by bucket key.
    order: Vec<u32>,
    buckets: FxHashMap<u64, (u32, u32)>,
}

#[inline]
fn mix(h: u64, v: i64) -> u64 {
    (h.rotate_left(5) ^ (v as u64)).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95)
}

impl NeighborIndex {
    /// `coords` is row-major `len x dim`. `radius` sets the cell size and
    /// should be the radius used for most queries.
    pub fn from_points(dim: usize, coords: Vec<f64>, tags: Vec<(u32, u32)>, radius: f64) -> Result<Self> {
        if dim == 0 || coords.len() != tags.len() * dim {
            return Err(Error::arg("point coordinates do not match the declared dimension"));
        }
        if tags.is_empty() {
            return Err(Error::arg("cannot index an empty point set"));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::arg(format!("radius must be finite and nonnegative, got {radius}")));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("cannot index non-finite points"));
        }
        let cell = if radius > 0.0 { radius * (1.0 + 1e-9) } else { 1.0 };
        let mut index = Self {
            dim,
            cell,
            coords,
            tags,
            order: Vec::new(),
            buckets: FxHashMap::default(),
        };
        let mut keyed: Vec<(u64, u32)> = (0..index.len())
            .map(|id| (index.key_of(index.point(id)), id as u32))
            .collect();
        keyed.sort_unstable();
        let mut start = 0;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            index.buckets.insert(key, (start as u32, end as u32));
            start = end;
        }
        index.order = keyed.into_iter().map(|(_, id)| id).collect();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.coords[id * self.dim..(id + 1) * self.dim]
    }

    /// `(path, index)` of a point.
    pub fn tag(&self, id: usize) -> (usize, usize) {
        let (k, i) = self.tags[id];
        (k as usize, i as usize)
    }

    fn cell_coord(&self, v: f64) -> i64 {
        (v / self.cell).floor() as i64
    }

    fn key_of(&self, z: &[f64]) -> u64 {
        z.iter().fold(0xcbf2_9ce4_8422_2325, |h, &v| mix(h, self.cell_coord(v)))
    }

    #[inline]
    fn within(&self, id: usize, z: &[f64], eps2: f64) -> bool {
        let p = self.point(id);
        let mut d2 = 0.0;
        for c in 0..self.dim {
            let d = p[c] - z[c];
            d2 += d * d;
        }
        d2 <= eps2
    }

    /// Ids of all points with `||p - z||_2 <= eps`, ascending.
    pub fn query(&self, z: &[f64], eps: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.query_into(z, eps, &mut out);
        out
    }

    pub fn query_into(&self, z: &[f64], eps: f64, out: &mut Vec<usize>) {
        out.clear();
        debug_assert_eq!(z.len(), self.dim);
        let eps2 = eps * eps;
        let r = (eps / self.cell).ceil().max(0.0) as i64;
        let cells = (2 * r + 1) as f64;
        if cells.powi(self.dim as i32) > self.buckets.len() as f64 {
            out.extend((0..self.len()).filter(|&id| self.within(id, z, eps2)));
            return;
        }
        let base: Vec<i64> = z.iter().map(|&v| self.cell_coord(v)).collect();
        let mut offset = vec![-r; self.dim];
        let mut seen: Vec<u64> = Vec::new();
        loop {
            let key = base
                .iter()
                .zip(&offset)
                .fold(0xcbf2_9ce4_8422_2325, |h, (b, o)| mix(h, b + o));
            if !seen.contains(&key) {
                seen.push(key);
                if let Some(&(s, e)) = self.buckets.get(&key) {
                    for &id in &self.order[s as usize..e as usize] {
                        if self.within(id as usize, z, eps2) {
                            out.push(id as usize);
                        }
                    }
                }
            }
            // Odometer over the (2r+1)^dim offsets.
            let mut c = 0;
            loop {
                if c == self.dim {
                    out.sort_unstable();
                    return;
                }
                offset[c] += 1;
                if offset[c] <= r {
                    break;
                }
                offset[c] = -r;
                c += 1;
            }
        }
    }

    /// Linear scan, for checking [`NeighborIndex::query`].
    pub fn brute_force(&self, z: &[f64], eps: f64) -> Vec<usize> {
        (0..self.len()).filter(|&id| self.within(id, z, eps * eps)).collect()
    }
}

/// Indexes every augmented sample of every path.
pub fn build_index(ensemble: &[Trajectory], tau: f64, radius: f64) -> Result<NeighborIndex> {
    if ensemble.is_empty() {
        return Err(Error::arg("ensemble is empty"));
    }
    let dim = 2 * ensemble[0].dim();
    let mut coords = Vec::new();
    let mut tags = Vec::new();
    for (k, traj) in ensemble.iter().enumerate() {
        if 2 * traj.dim() != dim {
            return Err(Error::arg("ensemble paths differ in dimension"));
        }
        for (i, s) in augment(traj, tau)?.into_iter().enumerate() {
            coords.extend_from_slice(&s.z);
            tags.push((k as u32, i as u32));
        }
    }
    NeighborIndex::from_points(dim, coords, tags, radius)
}
