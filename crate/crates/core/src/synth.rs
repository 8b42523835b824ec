//! Synthetic scenes, trajectories, rendered depth and perturbed "SLAM output".
//!
//! Everything here is a pure function of its spec and seed. Random streams
//! come from ChaCha8 seeded with the spec's 64-bit seed.

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::assoc::RayCaster;
use crate::error::{Error, Result};
use crate::gtmap::{build_gt_map, pixel_ray, DepthFrame};
use crate::types::{CellData, MapPoint, PointCloud, Pose, Trajectory, Vec3, VoxelGrid};

/// Sampling rate of generated trajectories.
pub const TRAJECTORY_RATE_HZ: f64 = 10.0;

/// Axis-aligned box `[min, max]` in meters; cells whose centers fall inside are occupied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub min: Vec3,
    pub max: Vec3,
}

/// A room spanning `[0, extents)` whose outer `wall_thickness` cells are solid.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub extents: Vec3,
    pub wall_thickness: usize,
    pub cell_size: f64,
    pub boxes: Vec<SceneBox>,
    /// Extra floor-standing boxes (0.2-0.6 m wide, 0.2-0.5 m tall) placed from `seed`.
    pub random_boxes: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn room(extents: Vec3) -> Self {
        SceneSpec {
            extents,
            wall_thickness: 1,
            cell_size: VoxelGrid::DEFAULT_CELL_SIZE,
            boxes: Vec::new(),
            random_boxes: 0,
            seed: 0,
        }
    }

    fn cells_per_axis(&self) -> Result<[i64; 3]> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::invalid(format!("cell size {} must be positive", self.cell_size)));
        }
        let mut n = [0i64; 3];
        for a in 0..3 {
            let e = self.extents[a];
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::DegenerateGeometry(format!("room extent {e} must be positive")));
            }
            n[a] = (e / self.cell_size).round() as i64;
            if n[a] < 2 * self.wall_thickness as i64 + 1 {
                return Err(Error::DegenerateGeometry(format!(
                    "room extent {e} leaves no free interior inside {}-cell walls",
                    self.wall_thickness
                )));
            }
        }
        Ok(n)
    }
}

/// Generates the scene grid (origin at zero): shell walls, listed boxes, then random boxes.
pub fn gen_scene(spec: &SceneSpec) -> Result<VoxelGrid> {
    let n = spec.cells_per_axis()?;
    let t = spec.wall_thickness as i64;
    let s = spec.cell_size;
    let mut grid = VoxelGrid::new(s, Vec3::zeros())?;
    for x in 0..n[0] {
        for y in 0..n[1] {
            for z in 0..n[2] {
                let c = [x, y, z];
                if (0..3).any(|a| c[a] < t || c[a] >= n[a] - t) {
                    grid.insert(c, CellData::default());
                }
            }
        }
    }
    let mut boxes = spec.boxes.clone();
    for b in &boxes {
        let inside = (0..3).all(|a| b.min[a] >= 0.0 && b.max[a] <= spec.extents[a] && b.min[a] < b.max[a]);
        if !inside {
            return Err(Error::invalid(format!(
                "box {:?}..{:?} is not inside the room",
                b.min.as_slice(),
                b.max.as_slice()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let wall = t as f64 * s;
    for _ in 0..spec.random_boxes {
        let size = Vec3::new(rng.random_range(0.2..0.6), rng.random_range(0.2..0.6), rng.random_range(0.2..0.5));
        let mut min = Vec3::new(0.0, 0.0, wall);
        for a in 0..2 {
            let room = spec.extents[a] - 2.0 * wall - size[a];
            if room <= 0.0 {
                return Err(Error::invalid("room too small for random boxes"));
            }
            min[a] = wall + rng.random_range(0.0..room);
        }
        boxes.push(SceneBox { min, max: min + size });
    }
    for b in &boxes {
        let lo = b.min.map(|v| (v / s - 0.5).ceil() as i64);
        let hi = b.max.map(|v| (v / s - 0.5).floor() as i64);
        for x in lo.x..=hi.x {
            for y in lo.y..=hi.y {
                for z in lo.z..=hi.z {
                    grid.insert([x, y, z], CellData::default());
                }
            }
        }
    }
    Ok(grid)
}

/// Catmull-Rom spline through `waypoints` traversed at constant segment speed,
/// sampled at `rate_hz` from `t = 0`. Yaw follows the horizontal direction of
/// motion; the camera stays level.
pub fn gen_trajectory(waypoints: &[Vec3], speed: f64, rate_hz: f64) -> Result<Trajectory> {
    if !(speed > 0.0 && speed.is_finite() && rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(Error::invalid("speed and rate must be positive"));
    }
    let mut pts: Vec<Vec3> = Vec::with_capacity(waypoints.len());
    for w in waypoints {
        if !w.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("waypoint is not finite"));
        }
        if pts.last().is_none_or(|last| (w - last).norm() > 1e-9) {
            pts.push(*w);
        }
    }
    if pts.len() < 2 {
        return Err(Error::invalid("trajectory needs at least two distinct waypoints"));
    }
    let durations: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm() / speed).collect();
    let total: f64 = durations.iter().sum();
    let at = |i: isize| pts[i.clamp(0, pts.len() as isize - 1) as usize];

    let mut poses = Vec::new();
    let mut yaw = 0.0;
    let (mut segment, mut segment_start) = (0usize, 0.0);
    let mut k = 0u64;
    loop {
        let t = k as f64 / rate_hz;
        if t > total + 1e-12 {
            break;
        }
        while segment + 1 < durations.len() && t > segment_start + durations[segment] {
            segment_start += durations[segment];
            segment += 1;
        }
        let u = ((t - segment_start) / durations[segment]).clamp(0.0, 1.0);
        let i = segment as isize;
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        let position = 0.5
            * (2.0 * p1
                + (p2 - p0) * u
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
                + (3.0 * p1 - p0 - 3.0 * p2 + p3) * u * u * u);
        let tangent = 0.5
            * ((p2 - p0)
                + 2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u
                + 3.0 * (3.0 * p1 - p0 - 3.0 * p2 + p3) * u * u);
        if tangent.x.hypot(tangent.y) > 1e-9 {
            yaw = tangent.y.atan2(tangent.x);
        }
        let orientation = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        poses.push(Pose::from_rotation(t, position, orientation)?);
        k += 1;
    }
    Trajectory::new(poses)
}

/// Rectangular loop inset `margin` from the inner walls at height `z`, closed
/// back onto its first corner.
pub fn loop_waypoints(spec: &SceneSpec, margin: f64, z: f64) -> Vec<Vec3> {
    let wall = spec.wall_thickness as f64 * spec.cell_size;
    let (x0, y0) = (wall + margin, wall + margin);
    let (x1, y1) = (spec.extents.x - wall - margin, spec.extents.y - wall - margin);
    vec![
        Vec3::new(x0, y0, z),
        Vec3::new(x1, y0, z),
        Vec3::new(x1, y1, z),
        Vec3::new(x0, y1, z),
        Vec3::new(x0, y0, z),
    ]
}

/// Does `origin + depth * dir` fall in occupied space, with every cell within
/// 1 nm of it occupied too?
fn lands_inside(scene: &VoxelGrid, origin: &Vec3, dir: &Vec3, depth: f64) -> bool {
    let p = origin + depth * dir;
    (0..8).all(|corner| {
        let nudge = Vec3::new(
            if corner & 1 == 0 { -1e-9 } else { 1e-9 },
            if corner & 2 == 0 { -1e-9 } else { 1e-9 },
            if corner & 4 == 0 { -1e-9 } else { 1e-9 },
        );
        scene.is_occupied(&scene.cell_of(&(p + nudge)))
    })
}

fn check_free(scene: &VoxelGrid, pose: &Pose) -> Result<()> {
    if scene.is_occupied(&scene.cell_of(&pose.position())) {
        return Err(Error::InvalidPose(format!(
            "camera at t={} sits inside an occupied cell",
            pose.timestamp()
        )));
    }
    Ok(())
}

fn render_with(caster: &RayCaster, pose: &Pose, width: usize, height: usize, max_range: f64) -> Result<DepthFrame> {
    let scene = caster.grid();
    check_free(scene, pose)?;
    let template = DepthFrame::new(width, height, vec![f64::NAN; width * height], *pose, max_range)?;
    let origin = pose.position();
    let mut depth = Vec::with_capacity(width * height);
    for h in 0..height {
        for w in 0..width {
            let dir = pixel_ray(&template, h, w)?;
            let d = match caster.cast(&origin, &dir, max_range)? {
                // Step just past the entry face so the surface point lies inside the hit cell.
                Some(hit) => hit.alpha + ((hit.exit - hit.alpha) / 2.0).min(1e-3),
                None => f64::NAN,
            };
            let valid = d <= max_range && lands_inside(scene, &origin, &dir, d);
            depth.push(if valid { d } else { f64::NAN });
        }
    }
    DepthFrame::new(width, height, depth, *pose, max_range)
}

/// Renders a depth frame by casting each pixel's ray into `scene`. Depth is the
/// distance to just inside the first occupied cell (1 mm past its entry face,
/// or half the chord for thinner clips); misses and rays whose surface point
/// would not land robustly inside occupied space are invalid (NaN).
pub fn render_depth(scene: &VoxelGrid, pose: &Pose, width: usize, height: usize, max_range: f64) -> Result<DepthFrame> {
    render_with(&RayCaster::new(scene), pose, width, height, max_range)
}

/// Renders one frame per trajectory pose, tagged with the pose index.
pub fn render_frames(scene: &VoxelGrid, trajectory: &Trajectory, width: usize, height: usize, max_range: f64) -> Result<Vec<DepthFrame>> {
    let caster = RayCaster::new(scene);
    trajectory
        .poses()
        .par_iter()
        .enumerate()
        .map(|(i, pose)| Ok(render_with(&caster, pose, width, height, max_range)?.with_frame_id(i)))
        .collect()
}

/// Rounds each depth to whole millimeters (as stored in 16-bit PGM), nudging by
/// ±1 mm when rounding would move the surface point out of its cell; pixels
/// that cannot be kept inside become invalid.
pub fn quantize_depth_mm(scene: &VoxelGrid, frame: &DepthFrame) -> Result<DepthFrame> {
    let origin = frame.pose().position();
    let mut depth = Vec::with_capacity(frame.depth().len());
    for h in 0..frame.height() {
        for w in 0..frame.width() {
            let d = frame.depth_at(h, w);
            if !d.is_finite() {
                depth.push(f64::NAN);
                continue;
            }
            let dir = pixel_ray(frame, h, w)?;
            let k = (d * 1000.0).round() as i64;
            let kept = [k, k + 1, k - 1]
                .into_iter()
                .filter(|k| (1..=u16::MAX as i64).contains(k))
                .map(|k| k as f64 / 1000.0)
                .find(|d| *d <= frame.max_range() && lands_inside(scene, &origin, &dir, *d));
            depth.push(kept.unwrap_or(f64::NAN));
        }
    }
    Ok(DepthFrame::new(frame.width(), frame.height(), depth, *frame.pose(), frame.max_range())?.with_frame_id(frame.frame_id()))
}

/// Error model for synthetic SLAM output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    translation_sigma: f64,
    yaw_sigma: f64,
    scale: f64,
    depth_sigma: f64,
    seed: u64,
}

impl NoiseSpec {
    pub fn new(translation_sigma: f64, yaw_sigma: f64, scale: f64, depth_sigma: f64, seed: u64) -> Result<Self> {
        for (name, v) in [("translation sigma", translation_sigma), ("yaw sigma", yaw_sigma), ("depth sigma", depth_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} {v} must be non-negative")));
            }
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale {scale} must be positive")));
        }
        Ok(NoiseSpec { translation_sigma, yaw_sigma, scale, depth_sigma, seed })
    }

    pub fn none() -> Self {
        NoiseSpec { translation_sigma: 0.0, yaw_sigma: 0.0, scale: 1.0, depth_sigma: 0.0, seed: 0 }
    }

    pub fn scaled(scale: f64) -> Result<Self> {
        Self::new(0.0, 0.0, scale, 0.0, 0)
    }

    pub fn translation_sigma(&self) -> f64 {
        self.translation_sigma
    }

    pub fn yaw_sigma(&self) -> f64 {
        self.yaw_sigma
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn depth_sigma(&self) -> f64 {
        self.depth_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Accumulated drift at one frame: yaw about the camera position, then a translation.
#[derive(Debug, Clone, Copy)]
struct Drift {
    yaw: f64,
    shift: Vec3,
    pivot: Vec3,
}

impl Drift {
    fn apply(&self, x: Vec3) -> Vec3 {
        if self.yaw == 0.0 {
            return x + self.shift;
        }
        UnitQuaternion::from_euler_angles(0.0, 0.0, self.yaw) * (x - self.pivot) + self.pivot + self.shift
    }
}

/// Simulates SLAM error. Per frame `t >= 1` a random walk accumulates yaw
/// (`N(0, yaw_sigma)`) and translation (`N(0, translation_sigma)` per axis)
/// drift, applied to pose `t` about its own position and to every point tagged
/// with frame `t`. Points are first jittered along their viewing ray by
/// `N(0, depth_sigma)`. Finally everything is scaled by `scale` about the first
/// pose's position. Untagged points only receive the global scale.
pub fn perturb(trajectory: &Trajectory, cloud: &PointCloud, noise: &NoiseSpec) -> (Trajectory, PointCloud) {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let step = Normal::new(0.0, noise.translation_sigma).expect("validated sigma");
    let turn = Normal::new(0.0, noise.yaw_sigma).expect("validated sigma");
    let range = Normal::new(0.0, noise.depth_sigma).expect("validated sigma");

    let mut drifts = Vec::with_capacity(trajectory.len());
    let (mut yaw, mut shift) = (0.0, Vec3::zeros());
    for (t, pose) in trajectory.iter().enumerate() {
        if t > 0 {
            yaw += turn.sample(&mut rng);
            shift += Vec3::new(step.sample(&mut rng), step.sample(&mut rng), step.sample(&mut rng));
        }
        drifts.push(Drift { yaw, shift, pivot: pose.position() });
    }
    let anchor = trajectory.get(0).map_or(Vec3::zeros(), |p| p.position());
    let scale = |x: Vec3| if noise.scale == 1.0 { x } else { anchor + noise.scale * (x - anchor) };

    let poses = trajectory
        .iter()
        .zip(&drifts)
        .map(|(pose, drift)| {
            let turned = UnitQuaternion::from_euler_angles(0.0, 0.0, drift.yaw) * pose.orientation();
            let orientation = if drift.yaw == 0.0 { pose.orientation() } else { turned };
            Pose::from_rotation(pose.timestamp(), scale(drift.apply(pose.position())), orientation)
                .expect("finite perturbed pose")
        })
        .collect();
    let points = cloud
        .iter()
        .map(|p| {
            let frame = p.frame_id.and_then(|f| drifts.get(f));
            let mut x = p.position;
            if let Some(drift) = frame {
                let offset = x - drift.pivot;
                let jitter = range.sample(&mut rng);
                if jitter != 0.0 && offset.norm() > 0.0 {
                    x += jitter * offset.normalize();
                }
                x = drift.apply(x);
            }
            MapPoint { position: scale(x), ..*p }
        })
        .collect();
    (
        Trajectory::new(poses).expect("timestamps unchanged"),
        PointCloud::new(points).expect("finite perturbed points"),
    )
}

/// Flat key-value synthesis config (TOML). Every key is optional.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Room extents in meters, walls included.
    pub room: [f64; 3],
    pub wall_thickness: usize,
    pub cell_size: f64,
    /// `[xmin, ymin, zmin, xmax, ymax, zmax]` per box.
    pub boxes: Vec<[f64; 6]>,
    pub random_boxes: usize,
    pub seed: u64,
    /// Defaults to a loop inset `margin` from the walls at `camera_height`.
    pub waypoints: Vec<[f64; 3]>,
    pub margin: f64,
    pub camera_height: f64,
    pub speed: f64,
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
    pub translation_sigma: f64,
    pub yaw_sigma: f64,
    pub scale: f64,
    pub depth_sigma: f64,
    pub noise_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            room: [4.0, 3.0, 2.5],
            wall_thickness: 1,
            cell_size: VoxelGrid::DEFAULT_CELL_SIZE,
            boxes: Vec::new(),
            random_boxes: 0,
            seed: 0,
            waypoints: Vec::new(),
            margin: 0.6,
            camera_height: 1.0,
            speed: 0.5,
            width: 64,
            height: 48,
            max_range: 10.0,
            translation_sigma: 0.0,
            yaw_sigma: 0.0,
            scale: 1.0,
            depth_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

impl std::str::FromStr for SynthConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |span| s[..span.start].matches('\n').count() + 1);
            Error::parse(line, e.message())
        })
    }
}

impl SynthConfig {
    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            extents: Vec3::from(self.room),
            wall_thickness: self.wall_thickness,
            cell_size: self.cell_size,
            boxes: self
                .boxes
                .iter()
                .map(|b| SceneBox { min: Vec3::new(b[0], b[1], b[2]), max: Vec3::new(b[3], b[4], b[5]) })
                .collect(),
            random_boxes: self.random_boxes,
            seed: self.seed,
        }
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.translation_sigma, self.yaw_sigma, self.scale, self.depth_sigma, self.noise_seed)
    }

    pub fn waypoints(&self) -> Vec<Vec3> {
        if self.waypoints.is_empty() {
            loop_waypoints(&self.scene_spec(), self.margin, self.camera_height)
        } else {
            self.waypoints.iter().map(|w| Vec3::from(*w)).collect()
        }
    }
}

/// Everything generated for one synthetic run.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub scene: VoxelGrid,
    pub trajectory: Trajectory,
    /// Rendered frames with depth already quantized to millimeters.
    pub frames: Vec<DepthFrame>,
    pub gt_map: VoxelGrid,
    /// Ground-truth cell centers tagged with their first observing frame.
    pub gt_cloud: PointCloud,
    pub est_trajectory: Trajectory,
    pub est_cloud: PointCloud,
}

impl SynthBundle {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        let spec = config.scene_spec();
        let noise = config.noise_spec()?;
        let scene = gen_scene(&spec)?;
        let trajectory = gen_trajectory(&config.waypoints(), config.speed, TRAJECTORY_RATE_HZ)?;
        let frames = render_frames(&scene, &trajectory, config.width, config.height, config.max_range)?
            .iter()
            .map(|f| quantize_depth_mm(&scene, f))
            .collect::<Result<Vec<_>>>()?;
        let gt_map = build_gt_map(&frames, config.cell_size)?;
        let gt_cloud = gt_map.centers();
        let (est_trajectory, est_cloud) = perturb(&trajectory, &gt_cloud, &noise);
        Ok(SynthBundle { scene, trajectory, frames, gt_map, gt_cloud, est_trajectory, est_cloud })
    }
}
