//! Nine-part kinematic tree standing in for a parametric body model.
//!
//! Canonical space: y up, the body faces +z, its left side is +x. Units are
//! "body units" (roughly one unit per half body height).

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use crate::error::{Error, Result};
use crate::rng::normal;

pub const PART_COUNT: usize = 9;
pub const BETA_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartId {
    Pelvis,
    Torso,
    Head,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
    LeftFoot,
    RightFoot,
}

impl PartId {
    pub const ALL: [PartId; PART_COUNT] = [
        PartId::Pelvis,
        PartId::Torso,
        PartId::Head,
        PartId::LeftArm,
        PartId::RightArm,
        PartId::LeftLeg,
        PartId::RightLeg,
        PartId::LeftFoot,
        PartId::RightFoot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Garment the part belongs to in the toy appearance model.
    pub fn is_upper(self) -> bool {
        matches!(self, PartId::Torso | PartId::LeftArm | PartId::RightArm)
    }

    pub fn is_lower(self) -> bool {
        matches!(self, PartId::Pelvis | PartId::LeftLeg | PartId::RightLeg)
    }
}

/// Axis-aligned box given by center and half extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub center: [f64; 3],
    pub half: [f64; 3],
}

impl Aabb {
    pub fn from_min_max(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        let c = 0.5 * (min + max);
        let h = 0.5 * (max - min);
        Self {
            center: [c.x, c.y, c.z],
            half: [h.x, h.y, h.z],
        }
    }

    pub fn min(&self) -> Vector3<f64> {
        Vector3::from(self.center) - Vector3::from(self.half)
    }

    pub fn max(&self) -> Vector3<f64> {
        Vector3::from(self.center) + Vector3::from(self.half)
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half.iter().product::<f64>()
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let c = Vector3::from(self.center);
        let h = Vector3::from(self.half);
        let mut out = [Vector3::zeros(); 8];
        for (i, o) in out.iter_mut().enumerate() {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *o = c + h.component_mul(&s);
        }
        out
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::from_min_max(self.min().inf(&other.min()), self.max().sup(&other.max()))
    }

    /// Point in box-normalized coordinates (`[-1, 1]^3` inside).
    pub fn normalize(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - Vector3::from(self.center)).component_div(&Vector3::from(self.half))
    }
}

/// Rotation followed by translation: `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation by `angle` about the line through `pivot` along `axis`.
    pub fn about_pivot(axis: &Vector3<f64>, angle: f64, pivot: &Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner();
        Self {
            rotation: rot,
            translation: pivot - rot * pivot,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse_apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() < tol && (r.determinant() - 1.0).abs() < tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub part: PartId,
    pub parent: Option<PartId>,
    pub pivot: [f64; 3],
    pub axis: [f64; 3],
    pub rest_box: Aabb,
}

/// Kinematic tree: one joint per part, parents listed before children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
}

fn joint(part: PartId, parent: Option<PartId>, pivot: [f64; 3], axis: [f64; 3], center: [f64; 3], half: [f64; 3]) -> Joint {
    Joint {
        part,
        parent,
        pivot,
        axis,
        rest_box: Aabb { center, half },
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        use PartId::*;
        let (x, y, z) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        Skeleton {
            joints: vec![
                joint(Pelvis, None, [0.0, 0.0, 0.0], y, [0.0, 0.0, 0.0], [0.22, 0.13, 0.13]),
                joint(Torso, Some(Pelvis), [0.0, 0.1, 0.0], x, [0.0, 0.36, 0.0], [0.26, 0.29, 0.14]),
                joint(Head, Some(Torso), [0.0, 0.63, 0.0], y, [0.0, 0.79, 0.01], [0.12, 0.16, 0.13]),
                joint(LeftArm, Some(Torso), [0.3, 0.6, 0.0], z, [0.33, 0.3, 0.0], [0.08, 0.33, 0.08]),
                joint(RightArm, Some(Torso), [-0.3, 0.6, 0.0], z, [-0.33, 0.3, 0.0], [0.08, 0.33, 0.08]),
                joint(LeftLeg, Some(Pelvis), [0.11, -0.08, 0.0], x, [0.11, -0.5, 0.0], [0.1, 0.43, 0.1]),
                joint(RightLeg, Some(Pelvis), [-0.11, -0.08, 0.0], x, [-0.11, -0.5, 0.0], [0.1, 0.43, 0.1]),
                joint(LeftFoot, Some(LeftLeg), [0.11, -0.9, 0.0], x, [0.11, -0.96, 0.05], [0.09, 0.06, 0.13]),
                joint(RightFoot, Some(RightLeg), [-0.11, -0.9, 0.0], x, [-0.11, -0.96, 0.05], [0.09, 0.06, 0.13]),
            ],
        }
    }
}

impl Skeleton {
    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::param("skeleton has no joints"));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if j.rest_box.half.iter().any(|&h| !(h > 0.0)) {
                return Err(Error::param(format!("part {:?} has a degenerate box", j.part)));
            }
            if Vector3::from(j.axis).norm() < 1e-12 {
                return Err(Error::param(format!("joint {:?} has a zero axis", j.part)));
            }
            match j.parent {
                None if i != 0 => return Err(Error::param("only the first joint may be the root")),
                Some(p) if !self.joints[..i].iter().any(|q| q.part == p) => {
                    return Err(Error::param(format!("parent of {:?} must precede it", j.part)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Skeleton = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Union of the rest-pose part boxes (zero shape coefficients).
    pub fn rest_bounds(&self) -> Aabb {
        let mut it = self.joints.iter().map(|j| j.rest_box);
        let first = it.next().expect("validated skeleton");
        it.fold(first, |a, b| a.union(&b))
    }

    /// Shape-adjusted canonical geometry: `(pivot, box)` per joint.
    fn shaped(&self, beta: &[f64]) -> Vec<(Vector3<f64>, Aabb)> {
        let coef = |i: usize| beta.get(i).copied().unwrap_or(0.0);
        let height = (1.0 + 0.05 * coef(0)).clamp(0.7, 1.3);
        let girth = (1.0 + 0.05 * coef(1)).clamp(0.7, 1.3);
        let breadth = (1.0 + 0.05 * coef(2)).clamp(0.7, 1.3);
        let head = (1.0 + 0.05 * coef(3)).clamp(0.7, 1.3);
        self.joints
            .iter()
            .map(|j| {
                let spread = if matches!(j.part, PartId::LeftArm | PartId::RightArm) { breadth } else { 1.0 };
                let place = |v: [f64; 3]| Vector3::new(v[0] * girth * spread, v[1] * height, v[2] * girth);
                let mut half = Vector3::new(j.rest_box.half[0] * girth, j.rest_box.half[1] * height, j.rest_box.half[2] * girth);
                if j.part == PartId::Head {
                    half *= head;
                }
                let c = place(j.rest_box.center);
                (place(j.pivot), Aabb { center: [c.x, c.y, c.z], half: [half.x, half.y, half.z] })
            })
            .collect()
    }
}

/// Shape, pose and camera for one rendered body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub cam: Camera,
}

impl BodyParams {
    /// Zero shape and pose.
    pub fn rest(joints: usize, cam: Camera) -> Self {
        Self {
            beta: vec![0.0; BETA_LEN],
            theta: vec![0.0; joints],
            cam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cam.validate()?;
        if self.beta.iter().chain(&self.theta).any(|v| !v.is_finite()) {
            return Err(Error::param("shape and pose coefficients must be finite"));
        }
        Ok(())
    }
}

/// One posed part: a canonical box plus its canonical-to-posed transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartVolume {
    pub part: PartId,
    pub canonical_box: Aabb,
    pub world_transform: RigidTransform,
}

impl PartVolume {
    pub fn center(&self) -> Vector3<f64> {
        self.world_transform.apply(&Vector3::from(self.canonical_box.center))
    }

    /// Posed-space corners of the box.
    pub fn world_corners(&self) -> [Vector3<f64>; 8] {
        self.canonical_box.corners().map(|c| self.world_transform.apply(&c))
    }

    /// Posed-space axis-aligned bounds.
    pub fn world_bounds(&self) -> Aabb {
        let cs = self.world_corners();
        let mut lo = cs[0];
        let mut hi = cs[0];
        for c in &cs[1..] {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        Aabb::from_min_max(lo, hi)
    }
}

/// Forward kinematics: one posed volume per joint, in skeleton order.
pub fn pose_part_volumes(params: &BodyParams, skeleton: &Skeleton) -> Result<Vec<PartVolume>> {
    if params.theta.len() != skeleton.joint_count() {
        return Err(Error::param(format!(
            "pose has {} angles but the skeleton has {} joints",
            params.theta.len(),
            skeleton.joint_count()
        )));
    }
    let shaped = skeleton.shaped(&params.beta);
    let mut world: Vec<RigidTransform> = Vec::with_capacity(skeleton.joints.len());
    let mut out = Vec::with_capacity(skeleton.joints.len());
    for (i, (j, (pivot, bx))) in skeleton.joints.iter().zip(&shaped).enumerate() {
        let local = RigidTransform::about_pivot(&Vector3::from(j.axis), params.theta[i], pivot);
        let parent = match j.parent {
            None => RigidTransform::identity(),
            Some(p) => {
                let pi = skeleton.joints.iter().position(|q| q.part == p).expect("validated parent");
                world[pi]
            }
        };
        let xf = parent.compose(&local);
        world.push(xf);
        out.push(PartVolume {
            part: j.part,
            canonical_box: *bx,
            world_transform: xf,
        });
    }
    Ok(out)
}

/// Gaussian shape/pose priors and uniform camera ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDistributions {
    pub beta_mean: Vec<f64>,
    pub beta_std: Vec<f64>,
    pub theta_mean: Vec<f64>,
    pub theta_std: Vec<f64>,
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
    pub distance: (f64, f64),
    pub fov: f64,
    pub target: [f64; 3],
}

pub(crate) const DEFAULT_DISTANCE: f64 = 3.0;

impl ParamDistributions {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        beta_mean: Vec<f64>,
        beta_std: Vec<f64>,
        theta_mean: Vec<f64>,
        theta_std: Vec<f64>,
        azimuth: (f64, f64),
        elevation: (f64, f64),
        distance: (f64, f64),
        fov: f64,
        target: [f64; 3],
    ) -> Result<Self> {
        let d = Self {
            beta_mean,
            beta_std,
            theta_mean,
            theta_std,
            azimuth,
            elevation,
            distance,
            fov,
            target,
        };
        d.validate()?;
        Ok(d)
    }

    /// Default priors for `skeleton`: mild pose noise, full azimuth orbit,
    /// elevation within ±π/12 and a fixed distance.
    pub fn for_skeleton(skeleton: &Skeleton) -> Self {
        let theta_std = skeleton
            .joints
            .iter()
            .map(|j| match j.part {
                PartId::Pelvis => 0.0,
                PartId::Torso => 0.08,
                PartId::Head => 0.2,
                PartId::LeftArm | PartId::RightArm => 0.15,
                PartId::LeftLeg | PartId::RightLeg => 0.15,
                PartId::LeftFoot | PartId::RightFoot => 0.1,
            })
            .collect();
        let b = skeleton.rest_bounds();
        let half_height = b.half[1] * 1.15;
        Self {
            beta_mean: vec![0.0; BETA_LEN],
            beta_std: vec![0.5; BETA_LEN],
            theta_mean: vec![0.0; skeleton.joint_count()],
            theta_std,
            azimuth: (0.0, std::f64::consts::TAU),
            elevation: (-std::f64::consts::PI / 12.0, std::f64::consts::PI / 12.0),
            distance: (DEFAULT_DISTANCE, DEFAULT_DISTANCE),
            fov: 2.0 * (half_height / DEFAULT_DISTANCE).atan(),
            target: b.center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_mean.len() != self.beta_std.len() || self.theta_mean.len() != self.theta_std.len() {
            return Err(Error::param("mean and stddev vectors differ in length"));
        }
        if self.beta_std.iter().chain(&self.theta_std).any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::param("standard deviations must be finite and >= 0"));
        }
        if self.beta_mean.iter().chain(&self.theta_mean).any(|v| !v.is_finite()) {
            return Err(Error::param("means must be finite"));
        }
        for (name, (lo, hi)) in [("azimuth", self.azimuth), ("elevation", self.elevation), ("distance", self.distance)] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::param(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        if !(self.distance.0 > 0.0) {
            return Err(Error::param("camera distance range must be positive"));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::param("field of view must lie in (0, pi)"));
        }
        Ok(())
    }

    /// Camera at the distribution's center: front view, zero elevation.
    pub fn front_camera(&self) -> Camera {
        Camera {
            azimuth: 0.0,
            elevation: 0.0,
            distance: 0.5 * (self.distance.0 + self.distance.1),
            fov: self.fov,
            target: self.target,
        }
    }

    pub fn sample_camera<R: Rng + ?Sized>(&self, rng: &mut R) -> Camera {
        Camera {
            azimuth: uniform(rng, self.azimuth),
            elevation: uniform(rng, self.elevation),
            distance: uniform(rng, self.distance),
            fov: self.fov,
            target: self.target,
        }
    }

    pub fn sample_body_params<R: Rng + ?Sized>(&self, rng: &mut R) -> BodyParams {
        let gauss = |rng: &mut R, m: &[f64], s: &[f64]| -> Vec<f64> {
            m.iter()
                .zip(s)
                .map(|(&m, &s)| if s == 0.0 { m } else { m + s * normal(rng) })
                .collect()
        };
        let beta = gauss(rng, &self.beta_mean, &self.beta_std);
        let theta = gauss(rng, &self.theta_mean, &self.theta_std);
        let cam = self.sample_camera(rng);
        BodyParams { beta, theta, cam }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use std::f64::consts::FRAC_PI_2;

    fn dists() -> (Skeleton, ParamDistributions) {
        let s = Skeleton::default();
        let d = ParamDistributions::for_skeleton(&s);
        (s, d)
    }

    #[test]
    fn degenerate_distribution_returns_point() {
        let (s, mut d) = dists();
        d.beta_mean = vec![0.1, -0.2, 0.3, 0.0];
        d.beta_std = vec![0.0; 4];
        d.theta_mean = (0..s.joint_count()).map(|i| 0.01 * i as f64).collect();
        d.theta_std = vec![0.0; s.joint_count()];
        d.azimuth = (1.0, 1.0);
        d.elevation = (0.1, 0.1);
        d.distance = (2.5, 2.5);
        let p = d.sample_body_params(&mut stream_rng(1, 0, 0));
        assert_eq!(p.beta, d.beta_mean);
        assert_eq!(p.theta, d.theta_mean);
        assert_eq!((p.cam.azimuth, p.cam.elevation, p.cam.distance), (1.0, 0.1, 2.5));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let (_, d) = dists();
        let a = d.sample_body_params(&mut stream_rng(9, 2, 0));
        let b = d.sample_body_params(&mut stream_rng(9, 2, 0));
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn joint_sample_mean_obeys_clt_bound() {
        let (s, mut d) = dists();
        d.theta_std = vec![0.0; s.joint_count()];
        d.theta_std[3] = 0.3;
        let mut rng = stream_rng(4, 0, 0);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| d.sample_body_params(&mut rng).theta[3]).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 3.0 * 0.3 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        let (_, d) = dists();
        let mut bad = d.clone();
        bad.theta_std[2] = -0.1;
        assert!(bad.validate().is_err());
        let mut bad = d.clone();
        bad.azimuth = (1.0, 0.0);
        assert!(bad.validate().is_err());
        let mut bad = d;
        bad.distance = (0.0, 0.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rest_pose_gives_identity_transforms() {
        let (s, d) = dists();
        let p = BodyParams::rest(s.joint_count(), d.front_camera());
        for v in pose_part_volumes(&p, &s).unwrap() {
            assert_eq!(v.world_transform, RigidTransform::identity());
        }
    }

    #[test]
    fn root_rotation_rotates_every_center() {
        let (s, d) = dists();
        let rest = BodyParams::rest(s.joint_count(), d.front_camera());
        let mut turned = rest.clone();
        let phi = 0.7;
        turned.theta[0] = phi;
        let a = pose_part_volumes(&rest, &s).unwrap();
        let b = pose_part_volumes(&turned, &s).unwrap();
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), phi);
        for (va, vb) in a.iter().zip(&b) {
            assert!((rot * va.center() - vb.center()).norm() < 1e-12);
            assert!(vb.world_transform.is_rigid(1e-12));
        }
    }

    #[test]
    fn two_link_chain_matches_standalone_fk() {
        // hip -> ankle chain of the left leg, ankle bent by pi/2
        let (s, d) = dists();
        let mut p = BodyParams::rest(s.joint_count(), d.front_camera());
        let hip = 5;
        let ankle = 7;
        p.theta[hip] = 0.4;
        p.theta[ankle] = FRAC_PI_2;
        let vols = pose_part_volumes(&p, &s).unwrap();

        let rot_x = |a: f64, v: [f64; 3]| -> [f64; 3] {
            let (sn, cs) = a.sin_cos();
            [v[0], cs * v[1] - sn * v[2], sn * v[1] + cs * v[2]]
        };
        let about = |a: f64, pivot: [f64; 3], v: [f64; 3]| -> [f64; 3] {
            let r = rot_x(a, [v[0] - pivot[0], v[1] - pivot[1], v[2] - pivot[2]]);
            [r[0] + pivot[0], r[1] + pivot[1], r[2] + pivot[2]]
        };
        let foot = s.joints[ankle].rest_box.center;
        let after_ankle = about(FRAC_PI_2, s.joints[ankle].pivot, foot);
        let expected = about(0.4, s.joints[hip].pivot, after_ankle);
        let got = vols[ankle].center();
        for k in 0..3 {
            assert!((got[k] - expected[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn root_rotation_composes_additively() {
        let (s, d) = dists();
        let mut p1 = d.sample_body_params(&mut stream_rng(5, 0, 0));
        p1.theta[0] = 0.3;
        let mut p2 = p1.clone();
        p2.theta[0] = 0.3 + 1.1;
        let a = pose_part_volumes(&p1, &s).unwrap();
        let b = pose_part_volumes(&p2, &s).unwrap();
        let extra = RigidTransform::about_pivot(&Vector3::y(), 1.1, &Vector3::from(s.joints[0].pivot));
        for (va, vb) in a.iter().zip(&b) {
            let composed = extra.compose(&va.world_transform);
            assert!((composed.rotation - vb.world_transform.rotation).abs().max() < 1e-12);
            assert!((composed.translation - vb.world_transform.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn mismatched_theta_is_rejected() {
        let (s, d) = dists();
        let mut p = BodyParams::rest(s.joint_count(), d.front_camera());
        p.theta.pop();
        assert!(matches!(pose_part_volumes(&p, &s), Err(Error::Param(_))));
    }

    #[test]
    fn rest_boxes_are_solid_and_cover_bounds() {
        let s = Skeleton::default();
        s.validate().unwrap();
        let bounds = s.rest_bounds();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for j in &s.joints {
            assert!(j.rest_box.volume() > 0.0);
            lo = lo.inf(&j.rest_box.min());
            hi = hi.sup(&j.rest_box.max());
        }
        assert!((lo - bounds.min()).norm() < 1e-12 && (hi - bounds.max()).norm() < 1e-12);
    }

    #[test]
    fn skeleton_toml_round_trips() {
        let s = Skeleton::default();
        let text = s.to_toml().unwrap();
        assert_eq!(Skeleton::from_toml(&text).unwrap(), s);
    }
}
