//! Articulated body layout, parameter sampling and semantic-zoom cameras.

mod camera;
mod region;
mod skeleton;

pub use camera::Camera;
pub use region::{rewrite_prompt, sample_region, RegionName, RegionSet, SemanticRegion};
pub use skeleton::{
    pose_part_volumes, Aabb, BodyParams, Joint, ParamDistributions, PartId, PartVolume,
    RigidTransform, Skeleton, BETA_LEN, PART_COUNT,
};
