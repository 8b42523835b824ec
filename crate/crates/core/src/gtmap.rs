//! Ground-truth map construction by depth back-projection.
//!
//! A pixel at continuous image coordinates `(col, row)` looks along
//! `R * (1, (col - W/2)/(W/2), (row - H/2)/(H/2))`, normalized, where `R` is the
//! camera orientation. Integer pixel `(h, w)` samples its center
//! `(w + 0.5, h + 0.5)`. Depth is the Euclidean range along that ray.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{
    CellData, MapPoint, OccupancyGrid2D, PointCloud, Pose, Rgb, Vec3, VoxelGrid,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    colors: Option<Vec<Rgb>>,
    pose: Pose,
    max_range: f64,
    frame_id: usize,
}

impl DepthFrame {
    /// `depth` is row-major, `height` rows of `width` meters. Non-finite or
    /// non-positive values mark invalid pixels.
    pub fn new(
        width: usize,
        height: usize,
        depth: Vec<f64>,
        pose: Pose,
        max_range: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("depth frame is {width}x{height}")));
        }
        if depth.len() != width * height {
            return Err(Error::invalid(format!(
                "{} depth values for a {width}x{height} frame",
                depth.len()
            )));
        }
        if !(max_range > 0.0) {
            return Err(Error::invalid(format!("max range {max_range} must be positive")));
        }
        Ok(DepthFrame {
            width,
            height,
            depth,
            colors: None,
            pose,
            max_range,
            frame_id: 0,
        })
    }

    pub fn with_frame_id(mut self, frame_id: usize) -> Self {
        self.frame_id = frame_id;
        self
    }

    pub fn with_colors(mut self, colors: Vec<Rgb>) -> Result<Self> {
        if colors.len() != self.depth.len() {
            return Err(Error::invalid("color image size differs from depth"));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn frame_id(&self) -> usize {
        self.frame_id
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn depth_at(&self, h: usize, w: usize) -> f64 {
        self.depth[h * self.width + w]
    }
}

/// Unit viewing direction at continuous image coordinates `(col, row)`.
pub fn ray_direction(pose: &Pose, width: usize, height: usize, col: f64, row: f64) -> Vec3 {
    let half_w = width as f64 / 2.0;
    let half_h = height as f64 / 2.0;
    let camera = Vec3::new(1.0, (col - half_w) / half_w, (row - half_h) / half_h);
    (pose.rotation() * camera).normalize()
}

/// Viewing direction through the center of pixel `(h, w)`.
pub fn pixel_ray(frame: &DepthFrame, h: usize, w: usize) -> Result<Vec3> {
    if h >= frame.height || w >= frame.width {
        return Err(Error::invalid(format!(
            "pixel ({h}, {w}) outside {}x{} frame",
            frame.height, frame.width
        )));
    }
    Ok(ray_direction(
        &frame.pose,
        frame.width,
        frame.height,
        w as f64 + 0.5,
        h as f64 + 0.5,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backprojection {
    pub cloud: PointCloud,
    /// Pixels with a non-finite or non-positive depth.
    pub invalid: usize,
    /// Valid pixels beyond the frame's max range.
    pub out_of_range: usize,
}

/// Back-projects every valid pixel to `p + d * r`, tagging points with the frame id.
pub fn backproject_frame(frame: &DepthFrame) -> Backprojection {
    let origin = frame.pose.position();
    let rotation = frame.pose.rotation();
    let (half_w, half_h) = (frame.width as f64 / 2.0, frame.height as f64 / 2.0);
    let mut points = Vec::with_capacity(frame.depth.len());
    let (mut invalid, mut out_of_range) = (0, 0);
    for h in 0..frame.height {
        for w in 0..frame.width {
            let i = h * frame.width + w;
            let d = frame.depth[i];
            if !(d.is_finite() && d > 0.0) {
                invalid += 1;
                continue;
            }
            if d > frame.max_range {
                out_of_range += 1;
                continue;
            }
            let camera = Vec3::new(
                1.0,
                (w as f64 + 0.5 - half_w) / half_w,
                (h as f64 + 0.5 - half_h) / half_h,
            );
            let ray = (rotation * camera).normalize();
            let mut point = MapPoint::at(origin + d * ray).with_frame(frame.frame_id);
            point.color = frame.colors.as_ref().map(|c| c[i]);
            points.push(point);
        }
    }
    Backprojection {
        cloud: PointCloud::new(points).expect("finite pose and depth"),
        invalid,
        out_of_range,
    }
}

/// Union of the voxelized back-projections of all frames, on a lattice anchored
/// at the world origin. Frames are applied in frame-id order, so the first
/// observation of a cell (lowest frame id) sets its color and frame tag
/// regardless of the order of `frames`.
pub fn build_gt_map(frames: &[DepthFrame], cell_size: f64) -> Result<VoxelGrid> {
    if frames.is_empty() {
        return Err(Error::invalid("no depth frames to build a map from"));
    }
    let mut grid = VoxelGrid::new(cell_size, Vec3::zeros())?;
    let mut order: Vec<&DepthFrame> = frames.iter().collect();
    order.sort_by_key(|f| f.frame_id);
    let clouds: Vec<PointCloud> = order
        .par_iter()
        .map(|f| backproject_frame(f).cloud)
        .collect();
    for cloud in &clouds {
        for p in cloud.iter() {
            grid.insert_point(p);
        }
    }
    Ok(grid)
}

/// Collapses the grid along z: 2D cell `(i, j)` is occupied iff some `(i, j, k)` is.
pub fn project_to_2d(grid: &VoxelGrid) -> OccupancyGrid2D {
    let cells = grid.cells().map(|(c, _)| [c[0], c[1]]).collect();
    let origin = grid.origin();
    OccupancyGrid2D::new(grid.cell_size(), Vector2::new(origin.x, origin.y), cells)
        .expect("grid cell size already validated")
}

/// Voxelizes a cloud at `cell_size` (world-anchored lattice) and projects it to 2D.
pub fn cloud_to_2d(cloud: &PointCloud, cell_size: f64) -> Result<OccupancyGrid2D> {
    Ok(project_to_2d(&VoxelGrid::from_cloud(
        cloud,
        cell_size,
        Vec3::zeros(),
    )?))
}

/// A cell payload carrying only the observing frame.
pub fn frame_cell(frame_id: usize) -> CellData {
    CellData {
        color: None,
        frame_id: Some(frame_id),
    }
}
