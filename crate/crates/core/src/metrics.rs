//! Trajectory error (ATE, RPE), map error (AME), 2D overlap (IoU) and the
//! end-to-end evaluation that assembles them into a [`MetricReport`].

use std::collections::BTreeSet;

use crate::align::{associate_timestamps, AlignMode, ApplyAlignment, DEFAULT_MAX_DT};
use crate::assoc::{infer_frame_ids, nn_associate, raycast_associate, remove_floor, RaycastOptions};
use crate::error::{Error, Result};
use crate::gtmap::cloud_to_2d;
use crate::report::MetricReport;
use crate::types::{same_lattice, Association, OccupancyGrid2D, PointCloud, Pose, RigidTransform, Trajectory, Vec3, VoxelGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryError {
    pub rmse: f64,
    /// `|p_t - p*_t|` for each pair, in pair order.
    pub per_pose: Vec<f64>,
}

/// Absolute trajectory error: RMSE of position differences over `(gt, est)` pairs.
pub fn ate(pairs: &[(Pose, Pose)]) -> Result<TrajectoryError> {
    if pairs.is_empty() {
        return Err(Error::invalid("ATE needs at least one pose pair"));
    }
    let per_pose: Vec<f64> = pairs
        .iter()
        .map(|(g, e)| (g.position() - e.position()).norm())
        .collect();
    Ok(TrajectoryError {
        rmse: rms(&per_pose),
        per_pose,
    })
}

/// Relative pose error over consecutive pairs, translation only: each step's
/// displacement is expressed in the camera frame at its start,
/// `M(q_t)^-1 (p_{t+1} - p_t)`, for both trajectories and the difference is
/// RMS-averaged over the `T - 1` steps.
pub fn rpe(pairs: &[(Pose, Pose)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::invalid(format!(
            "RPE needs at least two pose pairs, got {}",
            pairs.len()
        )));
    }
    let errors: Vec<f64> = pairs
        .windows(2)
        .map(|w| {
            let ((g0, e0), (g1, e1)) = (w[0], w[1]);
            let gt_step = g0.rotation().transpose() * (g1.position() - g0.position());
            let est_step = e0.rotation().transpose() * (e1.position() - e0.position());
            (gt_step - est_step).norm()
        })
        .collect();
    Ok(rms(&errors))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapError {
    pub rmse: f64,
    pub matched: usize,
    pub missed: usize,
}

impl MapError {
    pub fn miss_rate(&self) -> f64 {
        let total = self.matched + self.missed;
        if total == 0 {
            0.0
        } else {
            self.missed as f64 / total as f64
        }
    }
}

/// Absolute mapping error: RMSE of `|m*_i - f(m*_i)|` over matched points.
/// Unmatched points are excluded and counted separately.
pub fn ame(assoc: &Association, pred: &PointCloud) -> Result<MapError> {
    if assoc.matched_count() == 0 {
        return Err(Error::UndefinedMetric(
            "AME has no matched point pairs".into(),
        ));
    }
    let mut sum = 0.0;
    for (i, matched) in assoc.pairs() {
        let p = pred
            .points()
            .get(*i)
            .ok_or_else(|| Error::invalid(format!("association refers to missing point {i}")))?;
        sum += (p.position - matched).norm_squared();
    }
    Ok(MapError {
        rmse: (sum / assoc.matched_count() as f64).sqrt(),
        matched: assoc.matched_count(),
        missed: assoc.miss_count(),
    })
}

/// `|A ∩ B| / |A ∪ B|` over occupied cells, after snapping both grids onto the
/// world lattice (origins floored to whole cells).
pub fn iou2d(a: &OccupancyGrid2D, b: &OccupancyGrid2D) -> Result<f64> {
    if !same_lattice(a.cell_size(), b.cell_size()) {
        return Err(Error::invalid(format!(
            "cell sizes differ: {} vs {}",
            a.cell_size(),
            b.cell_size()
        )));
    }
    let anchored = |g: &OccupancyGrid2D| -> BTreeSet<[i64; 2]> {
        let s = g.cell_size();
        let shift = [
            (g.origin().x / s).floor() as i64,
            (g.origin().y / s).floor() as i64,
        ];
        g.cells()
            .iter()
            .map(|c| [c[0] + shift[0], c[1] + shift[1]])
            .collect()
    };
    let (sa, sb) = (anchored(a), anchored(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        return Err(Error::UndefinedMetric("IoU of two empty grids".into()));
    }
    Ok(sa.intersection(&sb).count() as f64 / union as f64)
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// One side of an evaluation: a trajectory, a map, or both.
#[derive(Debug, Clone, Default)]
pub struct EvalInput {
    pub trajectory: Option<Trajectory>,
    pub map: Option<PointCloud>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub max_dt: f64,
    pub align: AlignMode,
    pub nn: bool,
    pub raycast: bool,
    pub iou: bool,
    /// Absolute z cut-off applied to both maps before association.
    pub floor_z: Option<f64>,
    pub raycast_options: RaycastOptions,
    pub cell_size: f64,
    /// Restrict inferred frame ids to poses that face the point.
    pub fov_check: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_dt: DEFAULT_MAX_DT,
            align: AlignMode::Umeyama,
            nn: true,
            raycast: true,
            iou: true,
            floor_z: None,
            raycast_options: RaycastOptions::default(),
            cell_size: VoxelGrid::DEFAULT_CELL_SIZE,
            fov_check: true,
        }
    }
}

/// Runs every metric the inputs allow. The estimate is aligned into the
/// ground-truth frame (trajectory and map alike) using `options.align` when
/// both trajectories are present; otherwise it is used as-is.
pub fn evaluate(gt: &EvalInput, est: &EvalInput, options: &EvalOptions) -> Result<MetricReport> {
    let mut report = MetricReport {
        alignment_mode: AlignMode::None.label().to_string(),
        ..MetricReport::default()
    };
    let mut transform = RigidTransform::identity();
    let mut est_traj = None;

    if let (Some(gt_traj), Some(raw_est)) = (&gt.trajectory, &est.trajectory) {
        let pairs = associate_timestamps(gt_traj, raw_est, options.max_dt)
            .map_err(|e| e.context("pairing trajectories"))?;
        transform = options
            .align
            .estimate(&pairs)
            .map_err(|e| e.context(format!("{} alignment", options.align)))?;
        let aligned: Vec<(Pose, Pose)> = pairs
            .iter()
            .map(|(g, e)| (*g, e.aligned(&transform)))
            .collect();
        let traj_err = ate(&aligned)?;
        report.ate = Some(traj_err.rmse);
        report.per_pose_errors = Some(traj_err.per_pose);
        report.rpe = if aligned.len() >= 2 {
            Some(rpe(&aligned)?)
        } else {
            report.warnings.push("RPE needs two pose pairs".into());
            None
        };
        report.pair_count = Some(aligned.len());
        report.alignment_mode = options.align.label().to_string();
        est_traj = Some(raw_est.aligned(&transform));
    }

    let (Some(gt_map), Some(est_map)) = (&gt.map, &est.map) else {
        return Ok(report);
    };
    let mut gt_map = gt_map.clone();
    let mut est_map = est_map.aligned(&transform);
    if let Some(z) = options.floor_z {
        for (name, cloud) in [("ground-truth", &mut gt_map), ("estimated", &mut est_map)] {
            let removal = remove_floor(cloud, z)?;
            if removal.emptied() {
                report
                    .warnings
                    .push(format!("floor removal at z <= {z} emptied the {name} map"));
            }
            *cloud = removal.cloud;
        }
    }
    if gt_map.is_empty() || est_map.is_empty() {
        report.warnings.push("map metrics skipped: empty map".into());
        return Ok(report);
    }

    if options.nn {
        let assoc = nn_associate(&est_map, &gt_map)?;
        report.ame_nn = Some(ame(&assoc, &est_map)?.rmse);
    }
    if options.raycast {
        let (Some(gt_traj), Some(est_traj)) = (&gt.trajectory, &est_traj) else {
            return Err(Error::invalid(
                "ray-cast association needs both trajectories",
            ));
        };
        let grid = VoxelGrid::from_cloud(&gt_map, options.cell_size, Vec3::zeros())?;
        if est_map.iter().any(|p| p.frame_id.is_none()) {
            let inferred = infer_frame_ids(&est_map, est_traj, options.fov_check)?;
            if !inferred.flagged.is_empty() {
                report.warnings.push(format!(
                    "{} point(s) were behind every camera; tagged with the nearest pose",
                    inferred.flagged.len()
                ));
            }
            est_map = inferred.cloud;
        }
        let raycast_options = RaycastOptions {
            max_dt: options.max_dt,
            ..options.raycast_options
        };
        let assoc = raycast_associate(&est_map, est_traj, gt_traj, &grid, &raycast_options)?;
        report.matched_count = Some(assoc.matched_count());
        report.miss_count = Some(assoc.miss_count());
        let err = ame(&assoc, &est_map)?;
        report.miss_rate = Some(err.miss_rate());
        report.ame_raycast = Some(err.rmse);
    }
    if options.iou {
        report.iou = Some(iou2d(
            &cloud_to_2d(&gt_map, options.cell_size)?,
            &cloud_to_2d(&est_map, options.cell_size)?,
        )?);
    }
    Ok(report)
}
