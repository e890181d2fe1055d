//! Uniform cell lists for neighbor queries.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Vec3;

const MAX_CELLS: usize = 1 << 22;

/// Points bucketed into cubic cells; queries visit the 27 cells around a point.
#[derive(Clone, Debug)]
pub struct CellList {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<usize>>,
}

impl CellList {
    /// Empty list covering the box `[lo, hi]` with cells of side at least `cell`.
    pub fn empty(lo: Vec3, hi: Vec3, cell: f64) -> Self {
        let mut cell = if cell.is_finite() && cell > 0.0 { cell } else { 1.0 };
        let ext = hi - lo;
        let dims = loop {
            let d = [0, 1, 2].map(|a| ((ext[a].max(0.0) / cell) as usize + 1).max(1));
            if d[0].saturating_mul(d[1]).saturating_mul(d[2]) <= MAX_CELLS {
                break d;
            }
            cell *= 2.0;
        };
        CellList {
            origin: lo,
            cell,
            dims,
            buckets: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
        }
    }

    /// List holding `points` with the given cell side.
    pub fn build(points: &[Vec3], cell: f64) -> Self {
        let (lo, hi) = bounds(points);
        let mut c = CellList::empty(lo, hi, cell);
        for (i, p) in points.iter().enumerate() {
            c.insert(i, *p);
        }
        c
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn coords(&self, p: Vec3) -> [isize; 3] {
        [0, 1, 2].map(|a| {
            let t = libm::floor((p[a] - self.origin[a]) / self.cell);
            (t.max(-1.0) as isize).min(self.dims[a] as isize)
        })
    }

    fn index(&self, c: [isize; 3]) -> Option<usize> {
        for a in 0..3 {
            if c[a] < 0 || c[a] >= self.dims[a] as isize {
                return None;
            }
        }
        Some(c[0] as usize + self.dims[0] * (c[1] as usize + self.dims[1] * c[2] as usize))
    }

    /// Add point `id` at `p`; points outside the box go to the nearest boundary cell.
    pub fn insert(&mut self, id: usize, p: Vec3) {
        let c = self.coords(p).map(|v| v.max(0));
        let c = [0, 1, 2].map(|a| c[a].min(self.dims[a] as isize - 1));
        let k = self.index(c).expect("clamped cell");
        self.buckets[k].push(id);
    }

    /// Visit ids stored in the cells adjacent to `p`.
    pub fn for_each_near(&self, p: Vec3, mut f: impl FnMut(usize)) {
        let c = self.coords(p);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(k) = self.index([c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &j in &self.buckets[k] {
                            f(j);
                        }
                    }
                }
            }
        }
    }

    /// Visit ids in all cells within `radius` (in cell units, rounded up) of `p`.
    pub fn for_each_within(&self, p: Vec3, radius: f64, mut f: impl FnMut(usize)) {
        let c = self.coords(p);
        let reach = libm::ceil(radius / self.cell) as isize;
        let lo = [0, 1, 2].map(|a| (c[a] - reach).max(0));
        let hi = [0, 1, 2].map(|a| (c[a] + reach).min(self.dims[a] as isize - 1));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let k = self.index([x, y, z]).expect("in range");
                    for &j in &self.buckets[k] {
                        f(j);
                    }
                }
            }
        }
    }
}

/// Axis-aligned bounding box of a point set.
pub fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if points.is_empty() {
        (Vec3::ZERO, Vec3::ZERO)
    } else {
        (lo, hi)
    }
}
