//! First-hit voxel traversal (Amanatides & Woo): one step per crossed cell.

use crate::error::{Error, Result};
use crate::types::{CellIndex, Vec3, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub cell: CellIndex,
    /// Distance along the ray at which it enters `cell`; 0 when the origin is inside it.
    pub alpha: f64,
    /// Distance at which the ray leaves `cell`.
    pub exit: f64,
    /// Center of `cell`.
    pub hit_point: Vec3,
}

/// Casts rays against one grid, caching its bounding box so traversal can stop
/// once the ray has left it.
#[derive(Debug, Clone)]
pub struct RayCaster<'a> {
    grid: &'a VoxelGrid,
    bounds: Option<(CellIndex, CellIndex)>,
}

impl<'a> RayCaster<'a> {
    pub fn new(grid: &'a VoxelGrid) -> Self {
        RayCaster {
            grid,
            bounds: grid.bounds(),
        }
    }

    pub fn grid(&self) -> &VoxelGrid {
        self.grid
    }

    /// First occupied cell along `origin + t * dir`, `0 <= t <= max_range`.
    /// Non-unit directions are normalized.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Result<Option<RayHit>> {
        let norm = dir.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid("ray direction must be non-zero and finite"));
        }
        if !(max_range > 0.0) {
            return Err(Error::invalid(format!("max range {max_range} must be positive")));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("ray origin is not finite"));
        }
        let Some((lo, hi)) = self.bounds else {
            return Ok(None);
        };
        let dir = dir / norm;
        let s = self.grid.cell_size();
        let local = (origin - self.grid.origin()) / s;
        let mut cell = self.grid.cell_of(origin);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            if dir[a] > 0.0 {
                step[a] = 1;
                t_max[a] = ((cell[a] + 1) as f64 - local[a]) * s / dir[a];
                t_delta[a] = s / dir[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                t_max[a] = (cell[a] as f64 - local[a]) * s / dir[a];
                t_delta[a] = -s / dir[a];
            }
        }
        let mut entry = 0.0;
        while entry <= max_range {
            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if self.grid.is_occupied(&cell) {
                return Ok(Some(RayHit {
                    cell,
                    alpha: entry,
                    exit: t_max[axis],
                    hit_point: self.grid.center_of(cell),
                }));
            }
            let leaving = (0..3).any(|a| {
                (step[a] >= 0 && cell[a] > hi[a]) || (step[a] <= 0 && cell[a] < lo[a])
            });
            if leaving {
                return Ok(None);
            }
            entry = t_max[axis];
            cell[axis] += step[axis];
            t_max[axis] += t_delta[axis];
        }
        Ok(None)
    }
}

/// One-off ray cast; use [`RayCaster`] to cast many rays against the same grid.
pub fn raycast(grid: &VoxelGrid, origin: &Vec3, dir: &Vec3, max_range: f64) -> Result<Option<RayHit>> {
    RayCaster::new(grid).cast(origin, dir, max_range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::CellData;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_with(cells: &[CellIndex]) -> VoxelGrid {
        let mut g = VoxelGrid::new(0.05, Vec3::zeros()).unwrap();
        for c in cells {
            g.insert(*c, CellData::default());
        }
        g
    }

    #[test]
    fn axis_aligned_hit_at_entry_face() {
        // Cell 40 spans x in [2.0, 2.05).
        let g = grid_with(&[[40, 0, 0]]);
        let origin = Vec3::new(0.01, 0.025, 0.025);
        let hit = raycast(&g, &origin, &Vec3::x(), 10.0).unwrap().unwrap();
        assert_eq!(hit.cell, [40, 0, 0]);
        assert!((hit.alpha - 1.99).abs() < 1e-9);
        assert!((hit.exit - 2.04).abs() < 1e-9);
        assert!((hit.hit_point - Vec3::new(2.025, 0.025, 0.025)).norm() < 1e-12);
        assert!(raycast(&g, &origin, &Vec3::x(), 1.5).unwrap().is_none());
        assert!(raycast(&g, &origin, &-Vec3::x(), 10.0).unwrap().is_none());
    }

    #[test]
    fn negative_direction_entry() {
        let g = grid_with(&[[-10, 0, 0]]);
        let origin = Vec3::new(0.025, 0.025, 0.025);
        let hit = raycast(&g, &origin, &-Vec3::x(), 10.0).unwrap().unwrap();
        // Cell -10 spans [-0.5, -0.45); entered at x = -0.45.
        assert!((hit.alpha - 0.475).abs() < 1e-9);
    }

    #[test]
    fn origin_cell_hits_at_zero() {
        let g = grid_with(&[[0, 0, 0]]);
        let hit = raycast(&g, &Vec3::new(0.01, 0.01, 0.01), &Vec3::y(), 1.0).unwrap().unwrap();
        assert_eq!((hit.cell, hit.alpha), ([0, 0, 0], 0.0));
    }

    #[test]
    fn empty_grid_and_bad_direction() {
        let g = grid_with(&[]);
        assert!(raycast(&g, &Vec3::zeros(), &Vec3::x(), 1.0).unwrap().is_none());
        assert!(raycast(&g, &Vec3::zeros(), &Vec3::zeros(), 1.0).is_err());
        assert!(raycast(&g, &Vec3::zeros(), &Vec3::new(f64::NAN, 0.0, 0.0), 1.0).is_err());
        assert!(raycast(&g, &Vec3::zeros(), &Vec3::x(), 0.0).is_err());
    }

    /// Exact oracle: slab intersection of the ray with every occupied cell's box.
    fn slab_first_hit(g: &VoxelGrid, o: &Vec3, d: &Vec3, max_range: f64) -> Option<(CellIndex, f64)> {
        let mut best: Option<(CellIndex, f64)> = None;
        for (cell, _) in g.cells() {
            let lo = g.origin() + Vec3::new(cell[0] as f64, cell[1] as f64, cell[2] as f64) * g.cell_size();
            let hi = lo + Vec3::repeat(g.cell_size());
            let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
            for a in 0..3 {
                if d[a] == 0.0 {
                    if o[a] < lo[a] || o[a] >= hi[a] {
                        t0 = f64::INFINITY;
                    }
                } else {
                    let (ta, tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
            }
            if t0 < t1 && t0 <= max_range && best.is_none_or(|(_, bt)| t0 < bt) {
                best = Some((*cell, t0));
            }
        }
        best
    }

    #[test]
    fn traversal_matches_exact_slab_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let mut g = VoxelGrid::new(0.05, Vec3::zeros()).unwrap();
            for x in 0..20 {
                for y in 0..20 {
                    for z in 0..20 {
                        if rng.random_bool(0.03) {
                            g.insert([x, y, z], CellData::default());
                        }
                    }
                }
            }
            let caster = RayCaster::new(&g);
            for _ in 0..100 {
                let o = Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                if d.norm() < 1e-3 {
                    continue;
                }
                let d = d.normalize();
                let got = caster.cast(&o, &d, 2.0).unwrap();
                let want = slab_first_hit(&g, &o, &d, 2.0);
                assert_eq!(got.map(|h| h.cell), want.map(|w| w.0));
                if let (Some(h), Some(w)) = (got, want) {
                    assert!((h.alpha - w.1).abs() < 1e-9);
                }
            }
        }
    }
}
