//! Point correspondences between a predicted map and the ground truth.
//!
//! Two association functions are provided: plain Euclidean nearest neighbor,
//! and a trajectory-aware ray cast. For the latter, a predicted point `m*`
//! observed from predicted pose `(p*, q*)` is turned into a viewing direction
//! relative to the camera, re-issued from the matching ground-truth pose
//! `(p, q)`, and matched to the first occupied ground-truth voxel along it.

mod kdtree;
mod raycast;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

pub use kdtree::{nearest_brute_force, KdTree, NearestIndex, BRUTE_FORCE_BELOW};
pub use raycast::{raycast, RayCaster, RayHit};

use crate::align::{associate_indices, DEFAULT_MAX_DT};
use crate::error::{Error, Result};
use crate::types::{Association, PointCloud, Trajectory, Vec3, VoxelGrid};

/// Matches every predicted point to its nearest ground-truth point (lowest
/// index on ties). Nothing is left unmatched.
pub fn nn_associate(pred: &PointCloud, gt: &PointCloud) -> Result<Association> {
    if gt.is_empty() {
        return Err(Error::invalid("ground-truth cloud is empty"));
    }
    let gt_positions = gt.positions();
    let index = NearestIndex::new(gt_positions.clone());
    let pairs = pred
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (j, _) = index.nearest(&p.position).expect("non-empty index");
            (i, gt_positions[j])
        })
        .collect();
    Association::new(pairs, BTreeSet::new())
}

/// How the two orientations combine into the re-issued ray direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationOrder {
    /// `r = M(q*)^-1 M(q) (m* - p*)`.
    #[default]
    AsPrinted,
    /// `r = M(q) M(q*)^-1 (m* - p*)`: express the offset in the predicted camera
    /// frame, then rotate it into the world by the ground-truth orientation.
    Swapped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaycastOptions {
    pub max_range: f64,
    /// Tolerance for pairing predicted and ground-truth poses by timestamp.
    pub max_dt: f64,
    pub rotation_order: RotationOrder,
}

impl Default for RaycastOptions {
    fn default() -> Self {
        RaycastOptions {
            max_range: 10.0,
            max_dt: DEFAULT_MAX_DT,
            rotation_order: RotationOrder::AsPrinted,
        }
    }
}

/// Trajectory-aware association. Each predicted point must carry a `frame_id`
/// indexing `pred_traj` whose pose has a timestamp match in `gt_traj`. The
/// point's direction from its predicted camera is re-cast from the
/// ground-truth camera into `gt_map`; the first occupied cell's center is the
/// match. Rays without a hit within `max_range` leave the point unmatched.
pub fn raycast_associate(
    pred: &PointCloud,
    pred_traj: &Trajectory,
    gt_traj: &Trajectory,
    gt_map: &VoxelGrid,
    options: &RaycastOptions,
) -> Result<Association> {
    if gt_map.is_empty() {
        return Err(Error::invalid("ground-truth map is empty"));
    }
    let gt_for_pred: BTreeMap<usize, usize> = associate_indices(gt_traj, pred_traj, options.max_dt)?
        .into_iter()
        .map(|(g, p)| (p, g))
        .collect();
    let resolve = |frame: Option<usize>| frame.and_then(|f| Some((f, *gt_for_pred.get(&f)?)));
    let unresolved: Vec<usize> = pred
        .iter()
        .enumerate()
        .filter(|(_, p)| resolve(p.frame_id).is_none())
        .map(|(i, _)| i)
        .collect();
    if !unresolved.is_empty() {
        return Err(Error::UnresolvedFrames(unresolved));
    }

    let caster = RayCaster::new(gt_map);
    let hits: Vec<Option<Vec3>> = pred
        .points()
        .par_iter()
        .map(|point| {
            let (f, g) = resolve(point.frame_id).expect("checked above");
            let est = &pred_traj.poses()[f];
            let gt = &gt_traj.poses()[g];
            let offset = point.position - est.position();
            let dir = match options.rotation_order {
                RotationOrder::AsPrinted => est.rotation().transpose() * (gt.rotation() * offset),
                RotationOrder::Swapped => gt.rotation() * (est.rotation().transpose() * offset),
            };
            if dir.norm() == 0.0 {
                return Ok(None);
            }
            Ok(caster
                .cast(&gt.position(), &dir, options.max_range)?
                .map(|hit| hit.hit_point))
        })
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    let mut unmatched = BTreeSet::new();
    for (i, hit) in hits.into_iter().enumerate() {
        match hit {
            Some(p) => pairs.push((i, p)),
            None => {
                unmatched.insert(i);
            }
        }
    }
    Association::new(pairs, unmatched)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorRemoval {
    pub cloud: PointCloud,
    pub removed: usize,
}

impl FloorRemoval {
    /// True when nothing survived (worth a warning, not an error).
    pub fn emptied(&self) -> bool {
        self.cloud.is_empty() && self.removed > 0
    }
}

/// Drops points with `z <= z_threshold`, keeping the order of the rest.
pub fn remove_floor(cloud: &PointCloud, z_threshold: f64) -> Result<FloorRemoval> {
    if !z_threshold.is_finite() {
        return Err(Error::invalid(format!("floor threshold {z_threshold} is not finite")));
    }
    let kept: Vec<_> = cloud
        .iter()
        .filter(|p| p.position.z > z_threshold)
        .copied()
        .collect();
    let removed = cloud.len() - kept.len();
    Ok(FloorRemoval {
        cloud: PointCloud::new(kept)?,
        removed,
    })
}

/// Floor cut-off derived from a trajectory: `0.1 m` above the floor level, taken
/// as the lowest camera height minus the camera's mounting height.
pub fn floor_threshold(trajectory: &Trajectory, mount_height: f64) -> Result<f64> {
    let lowest = trajectory
        .iter()
        .map(|p| p.position().z)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::invalid("empty trajectory"))?;
    Ok(lowest - mount_height + 0.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInference {
    pub cloud: PointCloud,
    /// Points that no camera had in front of it; these got the nearest pose anyway.
    pub flagged: Vec<usize>,
}

/// Tags each untagged point with the nearest pose (lowest index on ties). With
/// `fov_check`, only poses that have the point in front of the camera
/// (positive optical-axis component) are candidates, falling back to the
/// nearest pose overall with the point flagged.
pub fn infer_frame_ids(pred: &PointCloud, trajectory: &Trajectory, fov_check: bool) -> Result<FrameInference> {
    if trajectory.is_empty() {
        return Err(Error::invalid("cannot infer frames from an empty trajectory"));
    }
    let cameras: Vec<(Vec3, Vec3)> = trajectory
        .iter()
        .map(|p| (p.position(), p.rotation().column(0).into_owned()))
        .collect();
    let tagged: Vec<(usize, bool)> = pred
        .points()
        .par_iter()
        .map(|point| {
            if let Some(f) = point.frame_id {
                return (f, false);
            }
            let m = point.position;
            let mut nearest = (f64::INFINITY, 0);
            let mut visible: Option<(f64, usize)> = None;
            for (k, (pos, axis)) in cameras.iter().enumerate() {
                let offset = m - pos;
                let d2 = offset.norm_squared();
                if d2 < nearest.0 {
                    nearest = (d2, k);
                }
                if fov_check && axis.dot(&offset) > 0.0 && visible.is_none_or(|(vd, _)| d2 < vd) {
                    visible = Some((d2, k));
                }
            }
            match (fov_check, visible) {
                (false, _) => (nearest.1, false),
                (true, Some((_, k))) => (k, false),
                (true, None) => (nearest.1, true),
            }
        })
        .collect();
    let flagged = tagged
        .iter()
        .enumerate()
        .filter(|(_, (_, f))| *f)
        .map(|(i, _)| i)
        .collect();
    let points = pred
        .iter()
        .zip(&tagged)
        .map(|(p, (f, _))| p.with_frame(*f))
        .collect();
    Ok(FrameInference {
        cloud: PointCloud::new(points)?,
        flagged,
    })
}
