//! Temporal pairing of trajectories and rigid alignment of estimates into the
//! ground-truth frame.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::types::{PointCloud, Pose, RigidTransform, Trajectory, Vec3};

pub const DEFAULT_MAX_DT: f64 = 0.02;

/// Greedy nearest-timestamp matching. Candidate pairs with `|dt| <= max_dt`
/// are found with a sorted sweep, then accepted in order of increasing `|dt|`
/// (ties by gt index, then est index) while both poses are unused. Returns
/// `(gt index, est index)` sorted by gt index.
pub fn associate_indices(
    gt: &Trajectory,
    est: &Trajectory,
    max_dt: f64,
) -> Result<Vec<(usize, usize)>> {
    if gt.is_empty() || est.is_empty() {
        return Err(Error::invalid("cannot associate an empty trajectory"));
    }
    if !(max_dt > 0.0 && max_dt.is_finite()) {
        return Err(Error::invalid(format!("max_dt {max_dt} must be positive")));
    }
    let est_t: Vec<f64> = est.iter().map(Pose::timestamp).collect();
    let mut candidates = Vec::new();
    let mut lo = 0;
    for (i, g) in gt.iter().enumerate() {
        let t = g.timestamp();
        while lo < est_t.len() && est_t[lo] < t - max_dt {
            lo += 1;
        }
        for (j, &e) in est_t.iter().enumerate().skip(lo) {
            if e > t + max_dt {
                break;
            }
            let dt = (e - t).abs();
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut est_used = vec![false; est.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !gt_used[i] && !est_used[j] {
            gt_used[i] = true;
            est_used[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoOverlap { max_dt });
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// [`associate_indices`] resolved to `(gt pose, est pose)` pairs.
pub fn associate_timestamps(
    gt: &Trajectory,
    est: &Trajectory,
    max_dt: f64,
) -> Result<Vec<(Pose, Pose)>> {
    Ok(associate_indices(gt, est, max_dt)?
        .into_iter()
        .map(|(i, j)| (gt.poses()[i], est.poses()[j]))
        .collect())
}

/// Least-squares similarity (Umeyama) carrying `est_pts` onto `gt_pts`:
/// minimizes `sum |gt_i - (s R est_i + t)|^2`. With `with_scale == false`, `s = 1`.
pub fn umeyama_align(gt_pts: &[Vec3], est_pts: &[Vec3], with_scale: bool) -> Result<RigidTransform> {
    if gt_pts.len() != est_pts.len() {
        return Err(Error::invalid(format!(
            "{} ground-truth points but {} estimated points",
            gt_pts.len(),
            est_pts.len()
        )));
    }
    let n = gt_pts.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "alignment needs at least 3 point pairs, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let gt_mean = gt_pts.iter().sum::<Vec3>() * inv_n;
    let est_mean = est_pts.iter().sum::<Vec3>() * inv_n;
    let mut cov = Matrix3::zeros();
    let mut est_var = 0.0;
    for (g, e) in gt_pts.iter().zip(est_pts) {
        let (dg, de) = (g - gt_mean, e - est_mean);
        cov += dg * de.transpose();
        est_var += de.norm_squared();
    }
    cov *= inv_n;
    est_var *= inv_n;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(Ordering::Equal));
    let (largest, middle, smallest) = (sv[order[0]], sv[order[1]], order[2]);
    if !(largest > 0.0) || middle <= 1e-10 * largest {
        return Err(Error::DegenerateGeometry(
            "point sets are collinear or coincident (covariance rank < 2)".into(),
        ));
    }
    let mut sign = Vec3::repeat(1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        sign[smallest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&sign) * v_t;
    let scale = if with_scale {
        sv.component_mul(&sign).sum() / est_var
    } else {
        1.0
    };
    let translation = gt_mean - scale * (rotation * est_mean);
    RigidTransform::new(rotation, translation, scale)
}

/// The transform placing the first estimated pose onto the first ground-truth pose.
pub fn first_pose_alignment(gt_first: &Pose, est_first: &Pose) -> RigidTransform {
    RigidTransform::from_pose(gt_first).compose(&RigidTransform::from_pose(est_first).inverse())
}

/// Root-mean-square residual `|gt_i - T(est_i)|` over point pairs.
pub fn alignment_rmse(gt_pts: &[Vec3], est_pts: &[Vec3], transform: &RigidTransform) -> f64 {
    let n = gt_pts.len().max(1) as f64;
    let sum: f64 = gt_pts
        .iter()
        .zip(est_pts)
        .map(|(g, e)| (g - transform.apply(e)).norm_squared())
        .sum();
    (sum / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignMode {
    None,
    FirstPose,
    #[default]
    Umeyama,
    UmeyamaScaled,
}

impl AlignMode {
    pub fn label(&self) -> &'static str {
        match self {
            AlignMode::None => "none",
            AlignMode::FirstPose => "first-pose",
            AlignMode::Umeyama => "umeyama",
            AlignMode::UmeyamaScaled => "umeyama-scaled",
        }
    }

    /// Estimates the est-to-gt transform from temporally paired poses.
    pub fn estimate(&self, pairs: &[(Pose, Pose)]) -> Result<RigidTransform> {
        match self {
            AlignMode::None => Ok(RigidTransform::identity()),
            AlignMode::FirstPose => {
                let (g, e) = pairs
                    .first()
                    .ok_or_else(|| Error::invalid("no pose pairs to align"))?;
                Ok(first_pose_alignment(g, e))
            }
            AlignMode::Umeyama | AlignMode::UmeyamaScaled => {
                let gt: Vec<Vec3> = pairs.iter().map(|(g, _)| g.position()).collect();
                let est: Vec<Vec3> = pairs.iter().map(|(_, e)| e.position()).collect();
                umeyama_align(&gt, &est, *self == AlignMode::UmeyamaScaled)
            }
        }
    }
}

impl fmt::Display for AlignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AlignMode::None),
            "first-pose" => Ok(AlignMode::FirstPose),
            "umeyama" => Ok(AlignMode::Umeyama),
            "umeyama-scaled" => Ok(AlignMode::UmeyamaScaled),
            other => Err(Error::invalid(format!("unknown alignment mode `{other}`"))),
        }
    }
}

/// Data that can be moved into another frame by a [`RigidTransform`].
pub trait ApplyAlignment: Sized {
    fn aligned(&self, transform: &RigidTransform) -> Self;
}

/// Positions are transformed; orientations are left-multiplied by the rotation.
impl ApplyAlignment for Pose {
    fn aligned(&self, transform: &RigidTransform) -> Self {
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            *transform.rotation(),
        ));
        Pose::from_rotation(
            self.timestamp(),
            transform.apply(&self.position()),
            rotation * self.orientation(),
        )
        .expect("finite transform of a finite pose")
    }
}

impl ApplyAlignment for Trajectory {
    fn aligned(&self, transform: &RigidTransform) -> Self {
        Trajectory::new(self.iter().map(|p| p.aligned(transform)).collect())
            .expect("timestamps unchanged")
    }
}

/// Positions are transformed; colors and frame tags are kept.
impl ApplyAlignment for PointCloud {
    fn aligned(&self, transform: &RigidTransform) -> Self {
        PointCloud::new(
            self.iter()
                .map(|p| {
                    let mut q = *p;
                    q.position = transform.apply(&p.position);
                    q
                })
                .collect(),
        )
        .expect("finite transform of a finite cloud")
    }
}

pub fn apply_alignment<T: ApplyAlignment>(x: &T, transform: &RigidTransform) -> T {
    x.aligned(transform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{quaternion_to_matrix, MapPoint};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn traj(ts: &[f64]) -> Trajectory {
        Trajectory::new(ts.iter().map(|&t| Pose::identity(t)).collect()).unwrap()
    }

    #[test]
    fn identical_timestamps_pair_fully() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let pairs = associate_timestamps(&traj(&ts), &traj(&ts), DEFAULT_MAX_DT).unwrap();
        assert_eq!(pairs.len(), 20);
        assert!(pairs.iter().all(|(g, e)| g.timestamp() == e.timestamp()));
    }

    #[test]
    fn shifted_timestamps_within_tolerance() {
        let gt: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let est: Vec<f64> = gt.iter().map(|t| t + 0.01).collect();
        let pairs = associate_indices(&traj(&gt), &traj(&est), 0.02).unwrap();
        assert_eq!(pairs, (0..20).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn disjoint_times_have_no_overlap() {
        let err = associate_indices(&traj(&[0.0, 1.0]), &traj(&[5.0]), 0.02).unwrap_err();
        assert!(matches!(err, Error::NoOverlap { .. }));
        assert!(associate_indices(&traj(&[0.0]), &traj(&[0.0]), 0.0).is_err());
        assert!(associate_indices(&traj(&[]), &traj(&[0.0]), 0.1).is_err());
    }

    /// Exhaustive oracle: every matching of the allowed candidate pairs,
    /// returning (max cardinality, min total |dt| at that cardinality).
    fn best_matching(gt: &[f64], est: &[f64], max_dt: f64) -> (usize, f64) {
        fn go(i: usize, gt: &[f64], est: &[f64], used: &mut Vec<bool>, max_dt: f64) -> (usize, f64) {
            if i == gt.len() {
                return (0, 0.0);
            }
            let mut best = go(i + 1, gt, est, used, max_dt);
            for j in 0..est.len() {
                let dt = (gt[i] - est[j]).abs();
                if !used[j] && dt <= max_dt {
                    used[j] = true;
                    let (n, c) = go(i + 1, gt, est, used, max_dt);
                    used[j] = false;
                    let cand = (n + 1, c + dt);
                    if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                        best = cand;
                    }
                }
            }
            best
        }
        go(0, gt, est, &mut vec![false; est.len()], max_dt)
    }

    #[test]
    fn greedy_matches_exhaustive_oracle_on_jittered_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=8);
            let m = rng.random_range(1..=8);
            let gt: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
            let est: Vec<f64> = (0..m)
                .map(|i| i as f64 * 0.1 + rng.random_range(-0.02..0.02))
                .collect();
            let max_dt = 0.03;
            let (gt_t, est_t) = (traj(&gt), traj(&est));
            let (opt_n, opt_cost) = best_matching(&gt, &est, max_dt);
            match associate_indices(&gt_t, &est_t, max_dt) {
                Err(Error::NoOverlap { .. }) => assert_eq!(opt_n, 0),
                Err(e) => panic!("{e}"),
                Ok(pairs) => {
                    // Jitter below half the spacing leaves no competing candidates,
                    // so greedy is optimal.
                    let cost: f64 = pairs.iter().map(|&(i, j)| (gt[i] - est[j]).abs()).sum();
                    assert_eq!(pairs.len(), opt_n);
                    assert!((cost - opt_cost).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn greedy_is_a_maximal_half_approximation_on_dense_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut gt: Vec<f64> = (0..rng.random_range(1..=7)).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut est: Vec<f64> = (0..rng.random_range(1..=7)).map(|_| rng.random_range(0.0..1.0)).collect();
            gt.sort_by(f64::total_cmp);
            est.sort_by(f64::total_cmp);
            gt.dedup();
            est.dedup();
            let max_dt = 0.2;
            let (opt_n, _) = best_matching(&gt, &est, max_dt);
            let Ok(pairs) = associate_indices(&traj(&gt), &traj(&est), max_dt) else {
                assert_eq!(opt_n, 0);
                continue;
            };
            assert!(2 * pairs.len() >= opt_n);
            let (gu, eu): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            for (i, g) in gt.iter().enumerate() {
                for (j, e) in est.iter().enumerate() {
                    if (g - e).abs() <= max_dt {
                        assert!(gu.contains(&i) || eu.contains(&j), "not maximal");
                    }
                }
            }
            assert!(pairs.iter().all(|&(i, j)| (gt[i] - est[j]).abs() <= max_dt));
            assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect()
    }

    #[test]
    fn identical_sets_align_to_identity() {
        let pts = cloud(1, 30);
        let t = umeyama_align(&pts, &pts, true).unwrap();
        assert!((t.rotation() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.translation().norm() < 1e-12);
        assert!((t.scale() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_known_motion() {
        let gt = cloud(2, 50);
        let motion = RigidTransform::new(
            quaternion_to_matrix([0.0, 0.0, FRAC_PI_4.sin(), FRAC_PI_4.cos()]).unwrap(),
            Vec3::new(1.0, 2.0, 3.0),
            1.0,
        )
        .unwrap();
        let est: Vec<Vec3> = gt.iter().map(|p| motion.apply(p)).collect();
        let t = umeyama_align(&gt, &est, false).unwrap();
        let inv = motion.inverse();
        assert!((t.rotation() - inv.rotation()).abs().max() < 1e-9);
        assert!((t.translation() - inv.translation()).norm() < 1e-9);
        assert!(alignment_rmse(&gt, &est, &t) < 1e-9);
    }

    #[test]
    fn recovers_scale() {
        let gt = cloud(3, 40);
        let est: Vec<Vec3> = gt.iter().map(|p| p / 2.0).collect();
        let t = umeyama_align(&gt, &est, true).unwrap();
        assert!((t.scale() - 2.0).abs() < 1e-9);
        assert!(alignment_rmse(&gt, &est, &t) < 1e-9);
    }

    #[test]
    fn planar_sets_are_fine_but_collinear_are_degenerate() {
        let planar = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 1.0, 0.0)];
        let rotated: Vec<Vec3> = planar.iter().map(|p| Vec3::new(-p.y, p.x, p.z)).collect();
        let t = umeyama_align(&rotated, &planar, false).unwrap();
        assert!(alignment_rmse(&rotated, &planar, &t) < 1e-12);
        assert!(t.rotation().determinant() > 0.0);

        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(umeyama_align(&line, &line, false), Err(Error::DegenerateGeometry(_))));
        let same = vec![Vec3::zeros(); 4];
        assert!(matches!(umeyama_align(&same, &same, true), Err(Error::DegenerateGeometry(_))));
        assert!(umeyama_align(&line[..2], &line[..2], false).is_err());
    }

    #[test]
    fn first_pose_alignment_maps_first_pose() {
        let g = Pose::new(0.0, Vec3::new(1.0, 2.0, 3.0), [0.1, 0.2, 0.3, 0.9]).unwrap();
        let e = Pose::new(0.0, Vec3::new(-4.0, 0.5, 1.0), [0.3, -0.1, 0.0, 0.8]).unwrap();
        let t = first_pose_alignment(&g, &e);
        let moved = e.aligned(&t);
        assert!((moved.position() - g.position()).norm() < 1e-12);
        assert!(moved.orientation().angle_to(&g.orientation()) < 1e-9);
    }

    #[test]
    fn apply_alignment_examples() {
        let c = PointCloud::new(vec![MapPoint::new(1.0, 2.0, 3.0).with_frame(2).with_color([1, 2, 3])]).unwrap();
        assert_eq!(apply_alignment(&c, &RigidTransform::identity()), c);
        let shift = Vec3::new(0.5, -1.0, 2.0);
        let moved = apply_alignment(&c, &RigidTransform::from_translation(shift));
        assert_eq!(moved.points()[0].position, Vec3::new(1.5, 1.0, 5.0));
        assert_eq!(moved.points()[0].frame_id, Some(2));
        let t = Trajectory::new(vec![Pose::identity(0.5)]).unwrap();
        let mt = apply_alignment(&t, &RigidTransform::from_translation(shift));
        assert_eq!(mt.poses()[0].position(), shift);
        assert_eq!(mt.poses()[0].timestamp(), 0.5);
    }

    fn quat() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0).prop_filter("norm", |q| q.iter().map(|c| c * c).sum::<f64>() > 1e-2)
    }

    proptest! {
        #[test]
        fn residual_never_exceeds_identity(seed in 0u64..1000, q in quat(), noise in 0.0f64..0.5) {
            let gt = cloud(seed, 20);
            let rot = RigidTransform::new(quaternion_to_matrix(q).unwrap(), Vec3::new(0.3, -0.2, 1.0), 1.0).unwrap();
            let jitter = cloud(seed + 1, 20);
            let est: Vec<Vec3> = gt.iter().zip(&jitter).map(|(p, j)| rot.apply(p) + noise * j / 5.0).collect();
            let t = umeyama_align(&gt, &est, false).unwrap();
            prop_assert!(alignment_rmse(&gt, &est, &t) <= alignment_rmse(&gt, &est, &RigidTransform::identity()) + 1e-12);
        }

        #[test]
        fn alignment_is_equivariant(seed in 0u64..1000, q in quat(), noise in 0.0f64..0.5) {
            let gt = cloud(seed, 20);
            let jitter = cloud(seed + 7, 20);
            let est: Vec<Vec3> = gt.iter().zip(&jitter).map(|(p, j)| p + noise * j / 5.0).collect();
            let pre = RigidTransform::new(quaternion_to_matrix(q).unwrap(), Vec3::zeros(), 1.0).unwrap();
            let rotated: Vec<Vec3> = est.iter().map(|p| pre.apply(p)).collect();
            let t = umeyama_align(&gt, &est, false).unwrap();
            let tr = umeyama_align(&gt, &rotated, false).unwrap();
            // Rotating the input by Q changes the solution to T * Q^-1, with the same residual.
            let expected = t.compose(&pre.inverse());
            prop_assert!((tr.rotation() - expected.rotation()).abs().max() < 1e-9);
            prop_assert!((tr.translation() - expected.translation()).norm() < 1e-9);
            prop_assert!((alignment_rmse(&gt, &rotated, &tr) - alignment_rmse(&gt, &est, &t)).abs() < 1e-9);
        }

        #[test]
        fn unit_scale_alignment_preserves_distances(seed in 0u64..1000, q in quat()) {
            let pts = cloud(seed, 10);
            let t = RigidTransform::new(quaternion_to_matrix(q).unwrap(), Vec3::new(1.0, 2.0, 3.0), 1.0).unwrap();
            let c = PointCloud::from_positions(pts.clone()).unwrap().aligned(&t);
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let before = (pts[i] - pts[j]).norm();
                    let after = (c.points()[i].position - c.points()[j].position).norm();
                    prop_assert!((before - after).abs() < 1e-9);
                }
            }
        }
    }
}
