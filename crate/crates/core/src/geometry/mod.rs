//! SE(3) pose algebra, trajectory integration and odometry error metrics.
//!
//! Rotations in a [`PoseDelta`] are ZYX Euler angles (yaw-pitch-roll) in
//! radians: `R = Rz(phi.z) * Ry(phi.y) * Rx(phi.x)`. Angles stay in radians
//! everywhere except [`RelativeErrors::r_rel`], which is reported in degrees
//! per 100 m.

pub mod kitti;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Per-step 6-DoF motion: Euler angles `phi` and translation `v`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    pub phi: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl PoseDelta {
    pub fn new(phi: [f64; 3], v: [f64; 3]) -> Self {
        PoseDelta {
            phi: Vector3::from(phi),
            v: Vector3::from(v),
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Network output layout: `phi ∥ v`.
    pub fn from_array(y: [f64; 6]) -> Self {
        PoseDelta::new([y[0], y[1], y[2]], [y[3], y[4], y[5]])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.phi.x, self.phi.y, self.phi.z, self.v.x, self.v.y, self.v.z,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite pose delta {a:?}")));
        }
        if self.phi.iter().any(|x| x.abs() >= std::f64::consts::PI) {
            return Err(Error::invalid(format!(
                "Euler angles outside (-pi, pi): {:?}",
                self.phi
            )));
        }
        Ok(())
    }
}

/// Rigid transform with rotation `r` and translation `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    /// Checked constructor: `r` must be a proper rotation within 1e-9.
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let p = Pose { r, t };
        p.validate(ORTHO_TOL)?;
        Ok(p)
    }

    /// Builds a pose without checking orthonormality (file readers, where
    /// stored precision is lower than the algebraic tolerance).
    pub fn from_parts_unchecked(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        Pose { r, t }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Pose {
            r: Matrix3::identity(),
            t: Vector3::from(t),
        }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.r.iter().chain(self.t.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite pose"));
        }
        let ortho = (self.r.transpose() * self.r - Matrix3::identity()).abs().max();
        let det = self.r.determinant();
        if ortho > tol || (det - 1.0).abs() > tol {
            return Err(Error::invalid(format!(
                "not a rotation: |RᵀR - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(())
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Pose {
            r: m.fixed_view::<3, 3>(0, 0).into_owned(),
            t: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.r.transpose();
        Pose {
            r: rt,
            t: -(rt * self.t),
        }
    }

    /// Row-major `[R | t]`, the KITTI pose line layout.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let (r, t) = (&self.r, &self.t);
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> Pose {
        Pose {
            r: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            t: Vector3::new(v[3], v[7], v[11]),
        }
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        compose(&self, &rhs)
    }
}

/// Poses with strictly increasing timestamps (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    poses: Vec<Pose>,
    timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, timestamps: Vec<f64>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("trajectory needs at least one pose"));
        }
        if poses.len() != timestamps.len() {
            return Err(Error::Structural(format!(
                "{} poses but {} timestamps",
                poses.len(),
                timestamps.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("timestamps must be strictly increasing"));
        }
        Ok(Trajectory { poses, timestamps })
    }

    /// Timestamps `0, dt, 2dt, ...`.
    pub fn with_period(poses: Vec<Pose>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("frame period must be positive"));
        }
        let ts = (0..poses.len()).map(|i| i as f64 * dt).collect();
        Trajectory::new(poses, ts)
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Per-step deltas `T_{t→t+1} = p_t⁻¹ p_{t+1}` in Euler form.
    pub fn deltas(&self) -> Vec<PoseDelta> {
        self.poses
            .windows(2)
            .map(|w| transform_to_delta(&(w[0].inverse() * w[1])))
            .collect()
    }

    /// Left-multiplies every pose by `g`.
    pub fn transformed(&self, g: &Pose) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| *g * *p).collect(),
            timestamps: self.timestamps.clone(),
        }
    }

    /// Cumulative arc length along the translations.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.poses.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.poses.windows(2) {
            acc += (w[1].t - w[0].t).norm();
            out.push(acc);
        }
        out
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `Rz(z)·Ry(y)·Rx(x)`.
pub fn euler_zyx_to_matrix(phi: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(phi.z) * rot_y(phi.y) * rot_x(phi.x)
}

/// Inverse of [`euler_zyx_to_matrix`]; pitch is returned in `[-π/2, π/2]`.
pub fn matrix_to_euler_zyx(r: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Vector3::new(roll, pitch, yaw)
}

pub fn delta_to_transform(d: &PoseDelta) -> Result<Pose> {
    if d.to_array().iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite pose delta"));
    }
    Ok(Pose {
        r: euler_zyx_to_matrix(&d.phi),
        t: d.v,
    })
}

pub fn transform_to_delta(p: &Pose) -> PoseDelta {
    PoseDelta {
        phi: matrix_to_euler_zyx(&p.r),
        v: p.t,
    }
}

/// SE(3) product `p·q`.
pub fn compose(p: &Pose, q: &Pose) -> Pose {
    Pose {
        r: p.r * q.r,
        t: p.r * q.t + p.t,
    }
}

/// Chains deltas from `p0`: `p_{t+1} = p_t · T(d_t)`. Timestamps are the
/// step index times `dt`.
pub fn integrate(p0: &Pose, deltas: &[PoseDelta], dt: f64) -> Result<Trajectory> {
    let mut poses = Vec::with_capacity(deltas.len() + 1);
    poses.push(*p0);
    let mut cur = *p0;
    for d in deltas {
        cur = compose(&cur, &delta_to_transform(d)?);
        poses.push(cur);
    }
    Trajectory::with_period(poses, dt)
}

/// Sequence RMSE over per-step deltas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRmse {
    /// meters
    pub t_rmse: f64,
    /// radians, over Euler-component differences
    pub r_rmse: f64,
}

fn check_paired<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::invalid("empty pose sequence"));
    }
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predicted vs {} ground truth",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn pose_rmse(pred: &[PoseDelta], gt: &[PoseDelta]) -> Result<PoseRmse> {
    check_paired(pred, gt)?;
    let n = pred.len() as f64;
    let (mut st, mut sr) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        st += (p.v - g.v).norm_squared();
        sr += (p.phi - g.phi).norm_squared();
    }
    Ok(PoseRmse {
        t_rmse: (st / n).sqrt(),
        r_rmse: (sr / n).sqrt(),
    })
}

/// Translation error of each individual step (the "pose-wise" t_rmse).
pub fn posewise_translation_errors(pred: &[PoseDelta], gt: &[PoseDelta]) -> Result<Vec<f64>> {
    check_paired(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p.v - g.v).norm()).collect())
}

pub fn posewise_rotation_errors(pred: &[PoseDelta], gt: &[PoseDelta]) -> Result<Vec<f64>> {
    check_paired(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p.phi - g.phi).norm()).collect())
}

/// Segment lengths (meters) used by the relative-error protocol.
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrors {
    /// percent
    pub t_rel: f64,
    /// degrees per 100 m
    pub r_rel: f64,
    pub segments: usize,
}

/// Geodesic angle of a rotation matrix, stable near zero.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm()
        * 0.5;
    let c = (r.trace() - 1.0) * 0.5;
    s.atan2(c)
}

/// Odometry relative errors over 100..800 m segments.
///
/// Every frame is a segment start; the segment ends at the first frame whose
/// ground-truth arc length reaches `start + L`. Errors are normalised by the
/// ground-truth arc length actually covered by the segment. Returns `None`
/// when no segment of 100 m fits in the ground truth.
pub fn relative_errors(pred: &Trajectory, gt: &Trajectory) -> Result<Option<RelativeErrors>> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predicted vs {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    if gt.len() < 2 {
        return Err(Error::invalid("relative errors need at least two poses"));
    }
    let dist = gt.arc_lengths();
    let (gp, pp) = (gt.poses(), pred.poses());
    let (mut t_sum, mut r_sum, mut count) = (0.0, 0.0, 0usize);
    for first in 0..gp.len() {
        let mut last = first;
        for &len in SEGMENT_LENGTHS.iter() {
            let target = dist[first] + len;
            while last < gp.len() && dist[last] < target {
                last += 1;
            }
            if last == gp.len() {
                break;
            }
            let covered = dist[last] - dist[first];
            let d_gt = gp[first].inverse() * gp[last];
            let d_pred = pp[first].inverse() * pp[last];
            let err = d_pred.inverse() * d_gt;
            t_sum += err.t.norm() / covered;
            r_sum += rotation_angle(&err.r) / covered;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(None);
    }
    let n = count as f64;
    Ok(Some(RelativeErrors {
        t_rel: t_sum / n * 100.0,
        r_rel: (r_sum / n).to_degrees() * 100.0,
        segments: count,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_delta(rng: &mut ChaCha8Rng, max_pitch: f64) -> PoseDelta {
        PoseDelta::new(
            [
                rng.random_range(-3.0..3.0),
                rng.random_range(-max_pitch..max_pitch),
                rng.random_range(-3.0..3.0),
            ],
            [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ],
        )
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        delta_to_transform(&random_delta(rng, 1.4)).unwrap()
    }

    #[test]
    fn zero_delta_is_identity() {
        let p = delta_to_transform(&PoseDelta::zero()).unwrap();
        assert_eq!(p, Pose::identity());
    }

    #[test]
    fn quarter_yaw_maps_x_to_y() {
        let p = delta_to_transform(&PoseDelta::new([0.0, 0.0, FRAC_PI_2], [1.0, 0.0, 0.0])).unwrap();
        let y = p.r * Vector3::x();
        assert!((y - Vector3::y()).norm() < 1e-15);
        assert_eq!(p.t, Vector3::new(1.0, 0.0, 0.0));
        p.validate(1e-12).unwrap();
    }

    #[test]
    fn non_finite_delta_rejected() {
        let d = PoseDelta::new([f64::NAN, 0.0, 0.0], [0.0; 3]);
        assert!(matches!(delta_to_transform(&d), Err(Error::InvalidArgument(_))));
        assert!(PoseDelta::new([0.0, 0.0, PI], [0.0; 3]).validate().is_err());
    }

    #[test]
    fn euler_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let d = random_delta(&mut rng, FRAC_PI_2 - 0.1);
            let back = transform_to_delta(&delta_to_transform(&d).unwrap());
            for (a, b) in d.to_array().iter().zip(back.to_array()) {
                assert!((a - b).abs() < 1e-9, "{d:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn compose_identity_and_translations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_pose(&mut rng);
        assert_eq!(compose(&Pose::identity(), &t), t);
        assert_eq!(compose(&t, &Pose::identity()), t);
        let a = Pose::translation([1.0, 2.0, 3.0]);
        let b = Pose::translation([-4.0, 0.5, 2.0]);
        assert_eq!(compose(&a, &b), Pose::translation([-3.0, 2.5, 5.0]));
    }

    #[test]
    fn compose_chain_matches_homogeneous_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chain: Vec<Pose> = (0..20).map(|_| random_pose(&mut rng)).collect();
        let mut acc = Pose::identity();
        let mut m = Matrix4::identity();
        for p in &chain {
            acc = compose(&acc, p);
            m *= p.to_homogeneous();
        }
        let diff = (acc.to_homogeneous() - m).abs().max();
        assert!(diff < 1e-9, "{diff}");
        acc.validate(1e-9).unwrap();
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let l = (a * b) * c;
            let r = a * (b * c);
            assert!((l.to_homogeneous() - r.to_homogeneous()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn integrate_empty_and_straight_line() {
        let p0 = Pose::identity();
        let traj = integrate(&p0, &[], 0.1).unwrap();
        assert_eq!(traj.poses(), &[p0]);

        let step = PoseDelta::new([0.0; 3], [1.0, 0.0, 0.0]);
        let traj = integrate(&p0, &[step; 5], 0.1).unwrap();
        assert_eq!(traj.len(), 6);
        for (i, p) in traj.poses().iter().enumerate() {
            assert_eq!(p.t, Vector3::new(i as f64, 0.0, 0.0));
        }
    }

    #[test]
    fn integrate_matches_compose_fold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p0 = random_pose(&mut rng);
        let deltas: Vec<PoseDelta> = (0..30).map(|_| random_delta(&mut rng, 1.0)).collect();
        let traj = integrate(&p0, &deltas, 0.1).unwrap();
        let fold = deltas.iter().fold(vec![p0], |mut acc, d| {
            let last = *acc.last().unwrap();
            let m = last.to_homogeneous() * delta_to_transform(d).unwrap().to_homogeneous();
            acc.push(Pose::from_homogeneous(&m));
            acc
        });
        assert_eq!(traj.len(), deltas.len() + 1);
        for (a, b) in traj.poses().iter().zip(&fold) {
            assert!((a.to_homogeneous() - b.to_homogeneous()).abs().max() < 1e-9);
        }
        // recovering the deltas gives the input back
        for (a, b) in traj.deltas().iter().zip(&deltas) {
            assert!((a.v - b.v).norm() < 1e-9);
        }
    }

    #[test]
    fn pose_rmse_cases() {
        let gt = vec![PoseDelta::new([0.1, 0.2, 0.3], [1.0, 2.0, 3.0])];
        let r = pose_rmse(&gt, &gt).unwrap();
        assert_eq!((r.t_rmse, r.r_rmse), (0.0, 0.0));
        let pred = vec![PoseDelta::new([0.1, 0.2, 0.3], [4.0, 6.0, 3.0])];
        let r = pose_rmse(&pred, &gt).unwrap();
        assert_eq!((r.t_rmse, r.r_rmse), (5.0, 0.0));
        assert!(pose_rmse(&pred, &[]).is_err());
        assert!(pose_rmse(&[], &[]).is_err());
    }

    #[test]
    fn pose_rmse_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pred: Vec<_> = (0..50).map(|_| random_delta(&mut rng, 1.0)).collect();
        let gt: Vec<_> = (0..50).map(|_| random_delta(&mut rng, 1.0)).collect();
        let r = pose_rmse(&pred, &gt).unwrap();
        let mut st = 0.0;
        let mut sr = 0.0;
        for i in 0..50 {
            let (p, g) = (pred[i].to_array(), gt[i].to_array());
            for c in 0..3 {
                sr += (p[c] - g[c]).powi(2);
                st += (p[c + 3] - g[c + 3]).powi(2);
            }
        }
        assert!((r.t_rmse - (st / 50.0).sqrt()).abs() < 1e-12);
        assert!((r.r_rmse - (sr / 50.0).sqrt()).abs() < 1e-12);
    }

    fn straight(n: usize, step: f64) -> Trajectory {
        let d = PoseDelta::new([0.0; 3], [step, 0.0, 0.0]);
        integrate(&Pose::identity(), &vec![d; n - 1], 0.1).unwrap()
    }

    #[test]
    fn relative_errors_zero_and_short() {
        let gt = straight(300, 1.0);
        let r = relative_errors(&gt, &gt).unwrap().unwrap();
        assert_eq!((r.t_rel, r.r_rel), (0.0, 0.0));
        let short = straight(51, 1.0);
        assert_eq!(relative_errors(&short, &short).unwrap(), None);
        assert!(relative_errors(&short, &gt).is_err());
    }

    #[test]
    fn rotation_angle_small_and_large() {
        for a in [1e-12, 1e-6, 0.3, 2.0, 3.1] {
            let r = euler_zyx_to_matrix(&Vector3::new(0.0, 0.0, a));
            assert!((rotation_angle(&r) - a).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_scale_error_reads_as_percent() {
        let line = |scale: f64| {
            let ps = (0..=300).map(|i| Pose::translation([i as f64 * scale, 0.0, 0.0])).collect();
            Trajectory::with_period(ps, 0.1).unwrap()
        };
        let r = relative_errors(&line(1.01), &line(1.0)).unwrap().unwrap();
        assert!((r.t_rel - 1.0).abs() < 1e-6, "{r:?}");
        assert!(r.r_rel.abs() < 1e-12);
    }
}
