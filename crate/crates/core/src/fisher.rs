//! Bearing-only landmark information about the camera pose.
//!
//! A landmark at world point `v_w` is seen from camera pose `(R_cw, t_cw)` as
//! the unit bearing `b = v_c / |v_c|` with `v_c = R_cw v_w + t_cw`. The pose is
//! perturbed on the left in the world frame, `T_wc <- exp(delta) T_wc` with
//! `delta = (rho, phi)`, which gives
//!
//! ```text
//! d v_c / d delta = R_cw [ -I | [v_w]x ]
//! d b   / d v_c   = I/|v_c| - v_c v_c^T / |v_c|^3
//! ```
//!
//! Information is the Gauss form `J^T Qb^-1 J` where `Qb` is the bearing noise,
//! optionally widened by the landmark's own position covariance. Matrices are
//! reduced to scalars by their trace.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::planner::Waypoint;

pub type Matrix3x6 = SMatrix<f64, 3, 6>;

const DEGENERATE_EPS: f64 = 1e-9;
const REGULARIZE_EPS: f64 = 1e-9;

/// Default landmark position standard deviation, meters.
pub const DEFAULT_LANDMARK_SIGMA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub position: Vector3<f64>,
    /// World-frame position covariance, m^2.
    pub covariance: Matrix3<f64>,
}

impl Landmark {
    pub fn new(position: Vector3<f64>, covariance: Matrix3<f64>) -> Self {
        Self {
            position,
            covariance,
        }
    }

    pub fn isotropic(position: Vector3<f64>, sigma: f64) -> Self {
        Self::new(position, Matrix3::identity() * sigma * sigma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    /// World to camera rotation.
    pub rotation: Matrix3<f64>,
    /// World to camera translation.
    pub translation: Vector3<f64>,
    pub fov: f64,
    pub max_depth: f64,
}

impl CameraPose {
    pub fn identity(fov: f64, max_depth: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            fov,
            max_depth,
        }
    }

    /// Forward-looking camera on a ground robot at `(x, y)` with the given
    /// heading: optical axis (+z) along the heading, +x to the right, +y down.
    pub fn from_planar(x: f64, y: f64, heading: f64, height: f64, fov: f64, max_depth: f64) -> Self {
        let (s, c) = heading.sin_cos();
        let forward = Vector3::new(c, s, 0.0);
        let right = Vector3::new(s, -c, 0.0);
        let down = Vector3::new(0.0, 0.0, -1.0);
        let r_wc = Matrix3::from_columns(&[right, down, forward]);
        let rotation = r_wc.transpose();
        let center = Vector3::new(x, y, height);
        Self {
            rotation,
            translation: -(rotation * center),
            fov,
            max_depth,
        }
    }

    pub fn camera_point(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn camera_point_checked(pose: &CameraPose, landmark: &Landmark) -> Result<Vector3<f64>> {
    let vc = pose.camera_point(&landmark.position);
    if vc.norm() <= DEGENERATE_EPS {
        return Err(Error::DegenerateLandmark);
    }
    Ok(vc)
}

pub fn bearing(pose: &CameraPose, landmark: &Landmark) -> Result<Vector3<f64>> {
    let vc = camera_point_checked(pose, landmark)?;
    Ok(vc / vc.norm())
}

/// Derivative of the normalization `v -> v/|v|`.
pub fn normalization_jacobian(vc: &Vector3<f64>) -> Matrix3<f64> {
    let n = vc.norm();
    Matrix3::identity() / n - vc * vc.transpose() / (n * n * n)
}

pub fn bearing_jacobian(pose: &CameraPose, landmark: &Landmark) -> Result<Matrix3x6> {
    let vc = camera_point_checked(pose, landmark)?;
    let mut dv = Matrix3x6::zeros();
    dv.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-pose.rotation));
    dv.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(pose.rotation * skew(&landmark.position)));
    Ok(normalization_jacobian(&vc) * dv)
}

/// How landmark information is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FimForm {
    /// `J^T Qb^-1 J` with `Qb = sigma^2 I + D R Q R^T D^T`, D the normalization
    /// Jacobian and Q the landmark covariance.
    #[default]
    Information,
    /// `J^T J / sigma^2`, ignoring landmark covariance.
    Isotropic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BearingNoise {
    /// Bearing standard deviation (unit-vector components).
    pub sigma: f64,
    pub form: FimForm,
}

impl Default for BearingNoise {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            form: FimForm::Information,
        }
    }
}

fn invert_spd(m: Matrix3<f64>) -> Matrix3<f64> {
    if let Some(ch) = m.cholesky() {
        return ch.inverse();
    }
    let reg = m + Matrix3::identity() * REGULARIZE_EPS;
    reg.cholesky()
        .map(|c| c.inverse())
        .or_else(|| reg.try_inverse())
        .unwrap_or_else(Matrix3::zeros)
}

/// Fisher information of one landmark about the 6-DoF pose. Landmarks that
/// are not visible contribute nothing.
pub fn landmark_fim(pose: &CameraPose, landmark: &Landmark, noise: &BearingNoise) -> Result<Matrix6<f64>> {
    let j = bearing_jacobian(pose, landmark)?;
    if !visible(pose, landmark) {
        return Ok(Matrix6::zeros());
    }
    Ok(fim_from_jacobian(pose, landmark, &j, noise))
}

pub(crate) fn fim_from_jacobian(
    pose: &CameraPose,
    landmark: &Landmark,
    j: &Matrix3x6,
    noise: &BearingNoise,
) -> Matrix6<f64> {
    let s2 = noise.sigma * noise.sigma;
    let fim = match noise.form {
        FimForm::Isotropic => j.transpose() * j / s2,
        FimForm::Information => {
            let vc = pose.camera_point(&landmark.position);
            let d = normalization_jacobian(&vc);
            let qc = pose.rotation * landmark.covariance * pose.rotation.transpose();
            let qb = Matrix3::identity() * s2 + d * qc * d.transpose();
            j.transpose() * invert_spd(qb) * j
        }
    };
    (fim + fim.transpose()) * 0.5
}

/// In front of the camera, within the field-of-view cone (inclusive) and
/// within `max_depth`.
pub fn visible(pose: &CameraPose, landmark: &Landmark) -> bool {
    let vc = pose.camera_point(&landmark.position);
    if vc.z <= 0.0 {
        return false;
    }
    let n = vc.norm();
    if n > pose.max_depth {
        return false;
    }
    let off_axis = vc.x.hypot(vc.y).atan2(vc.z);
    off_axis <= pose.fov / 2.0 + 1e-12
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathInformation {
    /// `normalizer * raw`.
    pub value: f64,
    /// Sum of FIM traces over waypoints and visible voxels.
    pub raw: f64,
    pub per_waypoint: Vec<f64>,
}

impl PathInformation {
    pub fn normalize(&mut self, normalizer: f64) {
        self.value = normalizer * self.raw;
    }
}

/// Shared normalizer `1 / (1 + max raw)` over one decision epoch.
pub fn path_normalizer<'a>(infos: impl IntoIterator<Item = &'a PathInformation>) -> f64 {
    let max = infos.into_iter().map(|p| p.raw).fold(0.0, f64::max);
    1.0 / (1.0 + max)
}

/// Landmarks snapped into cubic voxels, one representative per voxel: the
/// landmark nearest the voxel center (first in input order on ties).
#[derive(Clone, Debug)]
pub struct LandmarkVoxels {
    pub voxel_size: f64,
    representatives: Vec<Landmark>,
}

impl LandmarkVoxels {
    pub fn build(landmarks: &[Landmark], voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        let mut best: BTreeMap<(i64, i64, i64), (f64, usize)> = BTreeMap::new();
        for (k, lm) in landmarks.iter().enumerate() {
            let key = (
                (lm.position.x / voxel_size).floor() as i64,
                (lm.position.y / voxel_size).floor() as i64,
                (lm.position.z / voxel_size).floor() as i64,
            );
            let center = Vector3::new(
                (key.0 as f64 + 0.5) * voxel_size,
                (key.1 as f64 + 0.5) * voxel_size,
                (key.2 as f64 + 0.5) * voxel_size,
            );
            let d = (lm.position - center).norm();
            best.entry(key)
                .and_modify(|e| {
                    if d < e.0 {
                        *e = (d, k);
                    }
                })
                .or_insert((d, k));
        }
        Self {
            voxel_size,
            representatives: best.values().map(|&(_, k)| landmarks[k]).collect(),
        }
    }

    pub fn representatives(&self) -> &[Landmark] {
        &self.representatives
    }

    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    /// Sum of FIM traces over the voxels visible from `pose`.
    pub fn trace_from(&self, pose: &CameraPose, noise: &BearingNoise) -> f64 {
        let r2 = pose.max_depth * pose.max_depth;
        let center = pose.center();
        self.representatives
            .iter()
            .filter(|lm| (lm.position - center).norm_squared() <= r2)
            .filter(|lm| visible(pose, lm))
            .filter_map(|lm| {
                bearing_jacobian(pose, lm)
                    .ok()
                    .map(|j| fim_from_jacobian(pose, lm, &j, noise).trace())
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fov: f64,
    pub max_depth: f64,
    /// Optical center above the terrain, meters.
    pub height: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fov: 87f64.to_radians(),
            max_depth: 5.0,
            height: 0.3,
        }
    }
}

impl CameraModel {
    pub fn pose(&self, x: f64, y: f64, heading: f64) -> CameraPose {
        CameraPose::from_planar(x, y, heading, self.height, self.fov, self.max_depth)
    }
}

/// Information collected along a sampled path. The returned `value` carries
/// no normalization yet (normalizer 1); see [`path_normalizer`].
pub fn path_information(
    waypoints: &[Waypoint],
    voxels: &LandmarkVoxels,
    camera: &CameraModel,
    noise: &BearingNoise,
) -> PathInformation {
    let per_waypoint: Vec<f64> = waypoints
        .iter()
        .map(|w| voxels.trace_from(&camera.pose(w.x, w.y, w.heading), noise))
        .collect();
    let raw = per_waypoint.iter().sum();
    PathInformation {
        value: raw,
        raw,
        per_waypoint,
    }
}

/// Parses `x y z [cxx cxy cxz cyy cyz czz]` lines.
pub fn parse_landmarks(text: &str) -> Result<Vec<Landmark>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: n + 1, msg };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("{e}")))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        let position = Vector3::new(
            *v.first().ok_or_else(|| bad("empty".into()))?,
            *v.get(1).ok_or_else(|| bad("missing y".into()))?,
            *v.get(2).ok_or_else(|| bad("missing z".into()))?,
        );
        let lm = match v.len() {
            3 => Landmark::isotropic(position, DEFAULT_LANDMARK_SIGMA),
            9 => {
                let c = Matrix3::new(v[3], v[4], v[5], v[4], v[6], v[7], v[5], v[7], v[8]);
                if c.symmetric_eigenvalues().min() < -1e-12 {
                    return Err(bad("covariance is not positive semi-definite".into()));
                }
                Landmark::new(position, c)
            }
            k => return Err(bad(format!("expected 3 or 9 values, got {k}"))),
        };
        out.push(lm);
    }
    Ok(out)
}

pub fn read_landmarks(path: &Path) -> Result<Vec<Landmark>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lm(x: f64, y: f64, z: f64) -> Landmark {
        Landmark::isotropic(Vector3::new(x, y, z), 0.05)
    }

    fn wide() -> CameraPose {
        CameraPose::identity(90f64.to_radians(), 10.0)
    }

    #[test]
    fn bearing_examples() {
        let p = wide();
        assert_eq!(bearing(&p, &lm(0.0, 0.0, 1.0)).unwrap(), Vector3::new(0.0, 0.0, 1.0));
        let b = bearing(&p, &lm(3.0, 4.0, 0.0)).unwrap();
        assert!((b - Vector3::new(0.6, 0.8, 0.0)).norm() < 1e-15);
        assert!(matches!(bearing(&p, &lm(0.0, 0.0, 0.0)), Err(Error::DegenerateLandmark)));
        assert!(bearing_jacobian(&p, &lm(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn unit_z_normalization_jacobian() {
        let d = normalization_jacobian(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(d, Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)));
    }

    #[test]
    fn jacobian_rows_are_tangent_to_the_bearing() {
        let pose = CameraPose::from_planar(1.0, 2.0, 0.7, 0.3, 1.5, 8.0);
        let l = lm(4.0, 5.0, 1.1);
        let b = bearing(&pose, &l).unwrap();
        let j = bearing_jacobian(&pose, &l).unwrap();
        assert!((b.transpose() * j).norm() < 1e-12);
    }

    #[test]
    fn planar_camera_looks_along_heading() {
        let pose = CameraPose::from_planar(1.0, 1.0, std::f64::consts::FRAC_PI_2, 0.3, 1.0, 5.0);
        let r = pose.rotation;
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!((pose.center() - Vector3::new(1.0, 1.0, 0.3)).norm() < 1e-12);
        let ahead = pose.camera_point(&Vector3::new(1.0, 3.0, 0.3));
        assert!((ahead - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        assert!(visible(&pose, &lm(1.0, 3.0, 0.3)));
        assert!(!visible(&pose, &lm(1.0, -1.0, 0.3)));
    }

    #[test]
    fn visibility_rules() {
        let p = CameraPose::identity(60f64.to_radians(), 4.0);
        assert!(visible(&p, &lm(0.0, 0.0, 2.0)));
        assert!(!visible(&p, &lm(0.0, 0.0, -2.0)));
        assert!(!visible(&p, &lm(0.0, 0.0, 4.5)));
        let half = 30f64.to_radians();
        assert!(visible(&p, &lm(half.sin() * 2.0, 0.0, half.cos() * 2.0)));
        assert!(!visible(&p, &lm((half + 1e-6).sin() * 2.0, 0.0, (half + 1e-6).cos() * 2.0)));
    }

    #[test]
    fn isotropic_factorization_and_culling() {
        let p = wide();
        let l = lm(0.5, -0.2, 2.0);
        let noise = BearingNoise {
            sigma: 0.02,
            form: FimForm::Isotropic,
        };
        let j = bearing_jacobian(&p, &l).unwrap();
        let want = j.transpose() * j / (0.02 * 0.02);
        assert!((landmark_fim(&p, &l, &noise).unwrap() - want).norm() < 1e-9 * want.norm());
        // zero landmark covariance reduces the information form to the same thing
        let exact = Landmark::new(l.position, Matrix3::zeros());
        let info = BearingNoise {
            sigma: 0.02,
            form: FimForm::Information,
        };
        assert!((landmark_fim(&p, &exact, &info).unwrap() - want).norm() < 1e-9 * want.norm());
        assert_eq!(landmark_fim(&p, &lm(0.0, 0.0, -2.0), &noise).unwrap(), Matrix6::zeros());
    }

    #[test]
    fn path_information_examples() {
        let cam = CameraModel::default();
        let noise = BearingNoise::default();
        let w = [Waypoint {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        }];
        let none = LandmarkVoxels::build(&[], 0.25);
        assert_eq!(path_information(&w, &none, &cam, &noise).raw, 0.0);

        let l = lm(2.1, 0.1, 0.4);
        let vox = LandmarkVoxels::build(&[l], 0.25);
        let info = path_information(&w, &vox, &cam, &noise);
        let single = landmark_fim(&cam.pose(0.0, 0.0, 0.0), &l, &noise).unwrap().trace();
        assert!(single > 0.0);
        assert!((info.raw - single).abs() < 1e-12 * single);
        let mut normed = info.clone();
        let n = path_normalizer([&info]);
        normed.normalize(n);
        assert!((normed.value - n * single).abs() < 1e-12);

        let dup = LandmarkVoxels::build(&[l, l, lm(2.2, 0.2, 0.3)], 0.25);
        assert_eq!(dup.len(), 1);
        assert_eq!(path_information(&w, &dup, &cam, &noise).raw, info.raw);
    }

    #[test]
    fn parses_landmark_files() {
        let lms = parse_landmarks("1 2 3\n# c\n0 0 1 0.01 0 0 0.02 0 0.03\n").unwrap();
        assert_eq!(lms.len(), 2);
        assert!((lms[0].covariance - Matrix3::identity() * 0.0025).norm() < 1e-15);
        assert_eq!(lms[1].covariance[(1, 1)], 0.02);
        assert!(parse_landmarks("1 2\n").is_err());
        assert!(parse_landmarks("0 0 0 -1 0 0 1 0 1\n").is_err());
    }

    fn rot(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    }

    proptest! {
        #[test]
        fn fim_is_symmetric_psd(x in -5.0f64..5.0, y in -5.0f64..5.0, z in 0.5f64..6.0,
                                 ax in -1.0f64..1.0, ay in -1.0f64..1.0, ang in -0.5f64..0.5, s in 0.001f64..0.3) {
            let pose = CameraPose { rotation: rot(Vector3::new(ax, ay, 1.0), ang), translation: Vector3::new(0.1, -0.2, 0.3), fov: std::f64::consts::PI * 1.9, max_depth: 100.0 };
            let l = Landmark::isotropic(Vector3::new(x, y, z), s);
            let f = landmark_fim(&pose, &l, &BearingNoise::default()).unwrap();
            prop_assert!((f - f.transpose()).norm() <= 1e-10 * (1.0 + f.norm()));
            let eig = f.symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-10 * (1.0 + f.norm()));
        }

        #[test]
        fn trace_is_rotation_invariant(x in -5.0f64..5.0, y in -5.0f64..5.0, z in 0.5f64..6.0,
                                       ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, ang in 0.0f64..3.0) {
            let pose = CameraPose::from_planar(0.3, -0.4, 0.2, 0.3, std::f64::consts::PI * 1.9, 100.0);
            let l = Landmark::new(Vector3::new(x, y, z), Matrix3::new(0.01, 0.002, 0.0, 0.002, 0.02, 0.001, 0.0, 0.001, 0.015));
            let s = rot(Vector3::new(ax, ay, az + 1e-3), ang);
            let pose2 = CameraPose { rotation: pose.rotation * s.transpose(), ..pose };
            let l2 = Landmark::new(s * l.position, s * l.covariance * s.transpose());
            let noise = BearingNoise::default();
            match (landmark_fim(&pose, &l, &noise), landmark_fim(&pose2, &l2, &noise)) {
                (Ok(a), Ok(b)) => prop_assert!((a.trace() - b.trace()).abs() <= 1e-9 * (1.0 + a.trace())),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn new_voxel_never_lowers_path_information(px in -3.0f64..8.0, py in -4.0f64..4.0, pz in 0.0f64..1.5) {
            let cam = CameraModel::default();
            let noise = BearingNoise::default();
            let base = vec![lm(2.0, 0.3, 0.5), lm(3.5, -1.0, 0.2)];
            let wps = [Waypoint { x: 0.0, y: 0.0, heading: 0.0 }, Waypoint { x: 1.0, y: 0.0, heading: 0.1 }];
            let before = path_information(&wps, &LandmarkVoxels::build(&base, 0.25), &cam, &noise).raw;
            let extra = lm(px, py, pz);
            let mut more = base.clone();
            more.push(extra);
            let vox = LandmarkVoxels::build(&more, 0.25);
            prop_assume!(vox.len() == 3);
            let after = path_information(&wps, &vox, &cam, &noise).raw;
            prop_assert!(after >= before);
        }
    }
}
