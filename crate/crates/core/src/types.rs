//! Geometric primitives shared by every other module.
//!
//! Conventions: right-handed world frame with +z up, camera optical axis
//! along +x of the camera frame, quaternions stored as `(qx, qy, qz, qw)`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Rgb = [u8; 3];
pub type CellIndex = [i64; 3];
pub type CellIndex2 = [i64; 2];

/// Converts a quaternion in `(qx, qy, qz, qw)` order to a rotation matrix.
///
/// Non-unit input is normalized; zero-norm or non-finite input is rejected.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::invalid(format!(
            "quaternion {q:?} has no defined rotation"
        )));
    }
    let [x, y, z, w] = q.map(|c| c / norm);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Inverse of [`quaternion_to_matrix`] (Shepperd's method). Returns `(qx, qy, qz, qw)`
/// with `qw >= 0`.
pub fn matrix_to_quaternion(m: &Matrix3<f64>) -> [f64; 4] {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
            0.25 * s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(2, 1)] - m[(1, 2)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    };
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let sign = if q[3] < 0.0 { -1.0 } else { 1.0 };
    q.map(|c| sign * c / norm)
}

/// Timestamped 6-DoF camera pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    timestamp: f64,
    position: Vec3,
    orientation: UnitQuaternion<f64>,
}

impl Pose {
    /// Builds a pose from a quaternion in `(qx, qy, qz, qw)` order; the quaternion is normalized.
    pub fn new(timestamp: f64, position: Vec3, quaternion: [f64; 4]) -> Result<Self> {
        quaternion_to_matrix(quaternion)?;
        let [x, y, z, w] = quaternion;
        Self::from_rotation(
            timestamp,
            position,
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        )
    }

    pub fn from_rotation(
        timestamp: f64,
        position: Vec3,
        orientation: UnitQuaternion<f64>,
    ) -> Result<Self> {
        if !timestamp.is_finite() {
            return Err(Error::invalid(format!("timestamp {timestamp} is not finite")));
        }
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!(
                "position {:?} is not finite",
                position.as_slice()
            )));
        }
        Ok(Pose {
            timestamp,
            position,
            orientation,
        })
    }

    pub fn identity(timestamp: f64) -> Self {
        Pose {
            timestamp,
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        self.orientation
    }

    /// Orientation as `(qx, qy, qz, qw)`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    /// Camera-to-world rotation matrix.
    pub fn rotation(&self) -> Matrix3<f64> {
        quaternion_to_matrix(self.quaternion()).expect("unit quaternion")
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }
}

/// Poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        for (i, pair) in poses.windows(2).enumerate() {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::Ordering {
                    line: i + 2,
                    timestamp: pair[1].timestamp,
                    previous: pair[0].timestamp,
                });
            }
        }
        Ok(Trajectory { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Pose> {
        self.poses.iter()
    }

    pub fn get(&self, index: usize) -> Option<&Pose> {
        self.poses.get(index)
    }

    pub fn into_poses(self) -> Vec<Pose> {
        self.poses
    }
}

/// A map point. `frame_id` indexes the trajectory pose that observed it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub position: Vec3,
    pub color: Option<Rgb>,
    pub frame_id: Option<usize>,
}

impl MapPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self::at(Vec3::new(x, y, z))
    }

    pub fn at(position: Vec3) -> Self {
        MapPoint {
            position,
            color: None,
            frame_id: None,
        }
    }

    pub fn with_color(mut self, color: Rgb) -> Self {
        self.color = Some(color);
        self
    }

    pub fn with_frame(mut self, frame_id: usize) -> Self {
        self.frame_id = Some(frame_id);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<MapPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<MapPoint>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !p.position.iter().all(|c| c.is_finite()))
        {
            return Err(Error::invalid(format!("point {i} has non-finite coordinates")));
        }
        Ok(PointCloud { points })
    }

    pub fn from_positions(positions: impl IntoIterator<Item = Vec3>) -> Result<Self> {
        Self::new(positions.into_iter().map(MapPoint::at).collect())
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MapPoint> {
        self.points.iter()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn has_colors(&self) -> bool {
        self.points.iter().any(|p| p.color.is_some())
    }

    pub fn has_frames(&self) -> bool {
        self.points.iter().any(|p| p.frame_id.is_some())
    }

    pub fn into_points(self) -> Vec<MapPoint> {
        self.points
    }
}

/// Payload of an occupied voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellData {
    pub color: Option<Rgb>,
    /// First frame that observed the cell.
    pub frame_id: Option<usize>,
}

/// Sparse occupancy over a regular lattice. Cell `k` along an axis covers
/// `[origin + k*s, origin + (k+1)*s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    cell_size: f64,
    origin: Vec3,
    cells: BTreeMap<CellIndex, CellData>,
}

impl VoxelGrid {
    pub const DEFAULT_CELL_SIZE: f64 = 0.05;

    pub fn new(cell_size: f64, origin: Vec3) -> Result<Self> {
        check_cell_size(cell_size)?;
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("grid origin is not finite"));
        }
        Ok(VoxelGrid {
            cell_size,
            origin,
            cells: BTreeMap::new(),
        })
    }

    /// Voxelizes a cloud; the first point to land in a cell sets its payload.
    pub fn from_cloud(cloud: &PointCloud, cell_size: f64, origin: Vec3) -> Result<Self> {
        let mut grid = Self::new(cell_size, origin)?;
        for p in cloud.iter() {
            grid.insert_point(p);
        }
        Ok(grid)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn cell_of(&self, p: &Vec3) -> CellIndex {
        let rel = (p - self.origin) / self.cell_size;
        [
            rel.x.floor() as i64,
            rel.y.floor() as i64,
            rel.z.floor() as i64,
        ]
    }

    pub fn center_of(&self, cell: CellIndex) -> Vec3 {
        self.origin
            + Vec3::new(
                cell[0] as f64 + 0.5,
                cell[1] as f64 + 0.5,
                cell[2] as f64 + 0.5,
            ) * self.cell_size
    }

    /// Marks a cell occupied. Returns `false` (and keeps the old payload) if it already was.
    pub fn insert(&mut self, cell: CellIndex, data: CellData) -> bool {
        use std::collections::btree_map::Entry;
        match self.cells.entry(cell) {
            Entry::Vacant(e) => {
                e.insert(data);
                true
            }
            Entry::Occupied(_) => false,
        }
    }

    pub fn insert_point(&mut self, p: &MapPoint) -> bool {
        let cell = self.cell_of(&p.position);
        self.insert(
            cell,
            CellData {
                color: p.color,
                frame_id: p.frame_id,
            },
        )
    }

    pub fn is_occupied(&self, cell: &CellIndex) -> bool {
        self.cells.contains_key(cell)
    }

    pub fn get(&self, cell: &CellIndex) -> Option<&CellData> {
        self.cells.get(cell)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Occupied cells in lexicographic index order.
    pub fn cells(&self) -> impl Iterator<Item = (&CellIndex, &CellData)> {
        self.cells.iter()
    }

    pub fn occupied(&self) -> BTreeSet<CellIndex> {
        self.cells.keys().copied().collect()
    }

    /// Inclusive min/max cell indices, `None` when empty.
    pub fn bounds(&self) -> Option<(CellIndex, CellIndex)> {
        let mut it = self.cells.keys();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), c| {
            (
                [lo[0].min(c[0]), lo[1].min(c[1]), lo[2].min(c[2])],
                [hi[0].max(c[0]), hi[1].max(c[1]), hi[2].max(c[2])],
            )
        }))
    }

    /// One point per occupied cell at the cell center, carrying the cell payload.
    pub fn centers(&self) -> PointCloud {
        PointCloud {
            points: self
                .cells
                .iter()
                .map(|(cell, data)| MapPoint {
                    position: self.center_of(*cell),
                    color: data.color,
                    frame_id: data.frame_id,
                })
                .collect(),
        }
    }

    /// Set union; payloads of cells already present in `self` are kept.
    pub fn merge(&mut self, other: &VoxelGrid) -> Result<()> {
        if !same_lattice(self.cell_size, other.cell_size) || self.origin != other.origin {
            return Err(Error::invalid("cannot merge grids on different lattices"));
        }
        for (cell, data) in other.cells() {
            self.insert(*cell, *data);
        }
        Ok(())
    }
}

/// Ground-plane occupancy with an explicit bounding box of `width x height` cells
/// starting at `min_cell`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid2D {
    cell_size: f64,
    origin: Vector2<f64>,
    cells: BTreeSet<CellIndex2>,
    min_cell: CellIndex2,
    width: usize,
    height: usize,
}

impl OccupancyGrid2D {
    /// Extents are the bounding box of `cells` (zero when empty).
    pub fn new(
        cell_size: f64,
        origin: Vector2<f64>,
        cells: BTreeSet<CellIndex2>,
    ) -> Result<Self> {
        check_cell_size(cell_size)?;
        let (min_cell, width, height) = match cells.iter().next() {
            None => ([0, 0], 0, 0),
            Some(first) => {
                let (lo, hi) = cells.iter().fold((*first, *first), |(lo, hi), c| {
                    (
                        [lo[0].min(c[0]), lo[1].min(c[1])],
                        [hi[0].max(c[0]), hi[1].max(c[1])],
                    )
                });
                (
                    lo,
                    (hi[0] - lo[0] + 1) as usize,
                    (hi[1] - lo[1] + 1) as usize,
                )
            }
        };
        Ok(OccupancyGrid2D {
            cell_size,
            origin,
            cells,
            min_cell,
            width,
            height,
        })
    }

    pub fn with_extent(
        cell_size: f64,
        origin: Vector2<f64>,
        min_cell: CellIndex2,
        width: usize,
        height: usize,
        cells: BTreeSet<CellIndex2>,
    ) -> Result<Self> {
        check_cell_size(cell_size)?;
        let inside = |c: &CellIndex2| {
            (0..width as i64).contains(&(c[0] - min_cell[0]))
                && (0..height as i64).contains(&(c[1] - min_cell[1]))
        };
        if let Some(c) = cells.iter().find(|c| !inside(c)) {
            return Err(Error::invalid(format!(
                "cell {c:?} lies outside the {width}x{height} extent at {min_cell:?}"
            )));
        }
        Ok(OccupancyGrid2D {
            cell_size,
            origin,
            cells,
            min_cell,
            width,
            height,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Vector2<f64> {
        self.origin
    }

    pub fn cells(&self) -> &BTreeSet<CellIndex2> {
        &self.cells
    }

    pub fn min_cell(&self) -> CellIndex2 {
        self.min_cell
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn is_occupied(&self, cell: &CellIndex2) -> bool {
        self.cells.contains(cell)
    }
}

/// Similarity transform `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
    scale: f64,
}

impl RigidTransform {
    const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vec3, scale: f64) -> Result<Self> {
        let err = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        if !(err <= Self::ORTHONORMAL_TOL) || rotation.determinant() <= 0.0 {
            return Err(Error::invalid("rotation is not a proper orthonormal matrix"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale {scale} must be positive")));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("translation is not finite"));
        }
        Ok(RigidTransform {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        RigidTransform {
            translation,
            ..Self::identity()
        }
    }

    /// The transform carrying the camera frame of `pose` into the world frame.
    pub fn from_pose(pose: &Pose) -> Self {
        RigidTransform {
            rotation: pose.rotation(),
            translation: pose.position(),
            scale: 1.0,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self.compose(other)` applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }
}

/// Free-function form of [`RigidTransform::compose`].
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

/// Correspondences from predicted-map point indices to ground-truth points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    pairs: Vec<(usize, Vec3)>,
    unmatched: BTreeSet<usize>,
}

impl Association {
    pub fn new(pairs: Vec<(usize, Vec3)>, unmatched: BTreeSet<usize>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, _) in &pairs {
            if !seen.insert(*i) || unmatched.contains(i) {
                return Err(Error::invalid(format!(
                    "predicted index {i} is associated more than once"
                )));
            }
        }
        Ok(Association { pairs, unmatched })
    }

    pub fn pairs(&self) -> &[(usize, Vec3)] {
        &self.pairs
    }

    pub fn unmatched(&self) -> &BTreeSet<usize> {
        &self.unmatched
    }

    pub fn matched_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn miss_count(&self) -> usize {
        self.unmatched.len()
    }
}

pub(crate) fn check_cell_size(cell_size: f64) -> Result<()> {
    if cell_size > 0.0 && cell_size.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("cell size {cell_size} must be positive")))
    }
}

pub(crate) fn same_lattice(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}
