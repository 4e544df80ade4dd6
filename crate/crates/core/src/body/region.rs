//! Semantic-zoom regions: camera overrides and prompt rewriting.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::skeleton::{PartId, Skeleton};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionName {
    FullBody,
    UpperFront,
    UpperBack,
    LowerFront,
    LowerBack,
    LeftHand,
    RightHand,
}

impl RegionName {
    pub const ALL: [RegionName; 7] = [
        RegionName::FullBody,
        RegionName::UpperFront,
        RegionName::UpperBack,
        RegionName::LowerFront,
        RegionName::LowerBack,
        RegionName::LeftHand,
        RegionName::RightHand,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionName::FullBody => "full_body",
            RegionName::UpperFront => "upper_front",
            RegionName::UpperBack => "upper_back",
            RegionName::LowerFront => "lower_front",
            RegionName::LowerBack => "lower_back",
            RegionName::LeftHand => "left_hand",
            RegionName::RightHand => "right_hand",
        }
    }
}

/// A named crop of the body with its camera override and prompt template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRegion {
    pub name: RegionName,
    /// Camera distance is divided by this factor.
    pub zoom: f64,
    /// Added to the base camera's look-at target.
    pub look_at_offset: [f64; 3],
    pub azimuth_offset: f64,
    /// Contains exactly one `{p}` slot.
    pub prompt_template: String,
    pub parts: Vec<PartId>,
}

impl SemanticRegion {
    pub fn camera_for(&self, base: &Camera) -> Camera {
        if self.name == RegionName::FullBody {
            return *base;
        }
        let t = Vector3::from(base.target) + Vector3::from(self.look_at_offset);
        Camera {
            azimuth: base.azimuth + self.azimuth_offset,
            elevation: base.elevation,
            distance: base.distance / self.zoom,
            fov: base.fov,
            target: [t.x, t.y, t.z],
        }
    }

    pub fn rewrite(&self, prompt: &str) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(Error::param("prompt must not be empty"));
        }
        if self.name == RegionName::FullBody {
            return Ok(prompt.to_string());
        }
        Ok(self.prompt_template.replacen("{p}", prompt, 1))
    }
}

/// The full-body view plus the six zoomed regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub regions: Vec<SemanticRegion>,
    /// Probability of drawing the full-body view during training.
    pub full_body_probability: f64,
}

impl RegionSet {
    /// Default regions, aimed relative to the look-at point `target`
    /// (normally the body bounds center).
    pub fn for_skeleton(skeleton: &Skeleton, target: [f64; 3]) -> Self {
        use std::f64::consts::PI;
        let center_of = |parts: &[PartId]| -> Vector3<f64> {
            let boxes: Vec<_> = skeleton
                .joints
                .iter()
                .filter(|j| parts.contains(&j.part))
                .map(|j| j.rest_box)
                .collect();
            let b = boxes[1..].iter().fold(boxes[0], |a, b| a.union(b));
            Vector3::from(b.center)
        };
        let t = Vector3::from(target);
        let offset = |parts: &[PartId]| {
            let o = center_of(parts) - t;
            [o.x, o.y, o.z]
        };
        let upper = [PartId::Torso, PartId::LeftArm, PartId::RightArm];
        let lower = [PartId::Pelvis, PartId::LeftLeg, PartId::RightLeg, PartId::LeftFoot, PartId::RightFoot];
        let region = |name, zoom, aim: &[PartId], parts: &[PartId], az: f64, template: &str| SemanticRegion {
            name,
            zoom,
            look_at_offset: offset(aim),
            azimuth_offset: az,
            prompt_template: template.to_string(),
            parts: parts.to_vec(),
        };
        let torso = [PartId::Torso];
        let left = [PartId::LeftArm];
        let right = [PartId::RightArm];
        RegionSet {
            regions: vec![
                SemanticRegion {
                    name: RegionName::FullBody,
                    zoom: 1.0,
                    look_at_offset: [0.0; 3],
                    azimuth_offset: 0.0,
                    prompt_template: "{p}".to_string(),
                    parts: PartId::ALL.to_vec(),
                },
                region(RegionName::UpperFront, 1.4, &torso, &upper, 0.0, "upper body of {p}"),
                region(RegionName::UpperBack, 1.4, &torso, &upper, PI, "back view of upper body of {p}"),
                region(RegionName::LowerFront, 1.6, &lower, &lower, 0.0, "lower body of {p}"),
                region(RegionName::LowerBack, 1.6, &lower, &lower, PI, "back view of lower body of {p}"),
                region(RegionName::LeftHand, 1.6, &left, &left, 0.0, "left hand of {p}"),
                region(RegionName::RightHand, 1.6, &right, &right, 0.0, "right hand of {p}"),
            ],
            full_body_probability: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zoomed: Vec<_> = self.regions.iter().filter(|r| r.name != RegionName::FullBody).collect();
        if zoomed.len() != 6 || self.regions.len() != 7 {
            return Err(Error::param("expected the full-body view plus exactly 6 regions"));
        }
        for name in RegionName::ALL {
            if !self.regions.iter().any(|r| r.name == name) {
                return Err(Error::param(format!("region {} missing", name.as_str())));
            }
        }
        for r in zoomed {
            if !(r.zoom > 1.0) {
                return Err(Error::param(format!("region {} needs zoom > 1", r.name.as_str())));
            }
            if r.prompt_template.matches("{p}").count() != 1 {
                return Err(Error::param(format!("template of {} needs one {{p}} slot", r.name.as_str())));
            }
        }
        let az = |n| self.get(n).azimuth_offset;
        for (front, back) in [(RegionName::UpperFront, RegionName::UpperBack), (RegionName::LowerFront, RegionName::LowerBack)] {
            if ((az(back) - az(front)) - std::f64::consts::PI).abs() > 1e-12 {
                return Err(Error::param("back views must sit at azimuth pi from their front view"));
            }
        }
        if !(0.0..=1.0).contains(&self.full_body_probability) {
            return Err(Error::param("full-body probability must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn get(&self, name: RegionName) -> &SemanticRegion {
        self.regions.iter().find(|r| r.name == name).expect("validated region set")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: RegionSet = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Full body with probability `full_body_probability`, otherwise one of the
/// six zoomed regions uniformly.
pub fn sample_region<R: Rng + ?Sized>(rng: &mut R, set: &RegionSet) -> RegionName {
    let u: f64 = rng.random();
    if u < set.full_body_probability {
        return RegionName::FullBody;
    }
    let zoomed: Vec<_> = set.regions.iter().filter(|r| r.name != RegionName::FullBody).collect();
    zoomed[rng.random_range(0..zoomed.len())].name
}

pub fn rewrite_prompt(prompt: &str, region: &SemanticRegion) -> Result<String> {
    region.rewrite(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{pose_part_volumes, BodyParams, ParamDistributions};
    use crate::rng::stream_rng;

    fn setup() -> (Skeleton, ParamDistributions, RegionSet) {
        let s = Skeleton::default();
        let d = ParamDistributions::for_skeleton(&s);
        let r = RegionSet::for_skeleton(&s, d.target);
        (s, d, r)
    }

    #[test]
    fn default_set_is_valid() {
        let (_, _, r) = setup();
        r.validate().unwrap();
        assert_eq!(r.get(RegionName::UpperFront).parts, vec![PartId::Torso, PartId::LeftArm, PartId::RightArm]);
    }

    #[test]
    fn full_body_is_identity() {
        let (_, d, r) = setup();
        let c = d.sample_camera(&mut stream_rng(2, 0, 0));
        assert_eq!(r.get(RegionName::FullBody).camera_for(&c), c);
        assert_eq!(r.get(RegionName::FullBody).rewrite("A farmer").unwrap(), "A farmer");
    }

    #[test]
    fn zoomed_regions_change_the_camera() {
        let (_, d, r) = setup();
        let c = d.front_camera();
        for reg in r.regions.iter().filter(|x| x.name != RegionName::FullBody) {
            let z = reg.camera_for(&c);
            assert_ne!(z, c);
            assert!(reg.zoom > 1.0);
            assert_eq!(reg.camera_for(&c), z);
        }
    }

    #[test]
    fn back_view_adds_pi() {
        let (_, d, r) = setup();
        let c = d.sample_camera(&mut stream_rng(3, 0, 0));
        let b = r.get(RegionName::UpperBack).camera_for(&c);
        assert!((b.azimuth - (c.azimuth + std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn upper_torso_projects_inside_frame() {
        let (s, d, r) = setup();
        let mut rng = stream_rng(11, 0, 0);
        for _ in 0..200 {
            let base = d.sample_camera(&mut rng);
            let cam = r.get(RegionName::UpperFront).camera_for(&base);
            let params = BodyParams::rest(s.joint_count(), cam);
            let torso = pose_part_volumes(&params, &s).unwrap()[PartId::Torso.index()];
            for corner in torso.world_corners() {
                let (x, y, _) = cam.project(&corner, 64, 32).unwrap();
                assert!((0.0..=32.0).contains(&x) && (0.0..=64.0).contains(&y), "corner at ({x}, {y}) az {}", base.azimuth);
            }
        }
    }

    #[test]
    fn prompt_templates() {
        let (_, _, r) = setup();
        let back = r.get(RegionName::UpperBack).rewrite("A man wearing sweater and pants").unwrap();
        assert!(back.contains("back") && back.contains("A man wearing sweater and pants"));
        let left = r.get(RegionName::LeftHand).rewrite("A woman wearing denim").unwrap();
        let oracle = "left hand of {p}".split("{p}").collect::<Vec<_>>().join("A woman wearing denim");
        assert_eq!(left, oracle);
        assert!(matches!(rewrite_prompt("  ", r.get(RegionName::LeftHand)), Err(Error::Param(_))));
    }

    #[test]
    fn region_schedule_is_half_full_body() {
        let (_, _, r) = setup();
        let mut rng = stream_rng(8, 0, 0);
        let n = 4000;
        let full = (0..n).filter(|_| sample_region(&mut rng, &r) == RegionName::FullBody).count();
        let sd = (n as f64 * 0.25).sqrt();
        assert!(((full as f64) - 0.5 * n as f64).abs() < 4.0 * sd);
    }

    #[test]
    fn region_toml_round_trips() {
        let (_, _, r) = setup();
        assert_eq!(RegionSet::from_toml(&r.to_toml().unwrap()).unwrap(), r);
    }
}
