//! Meshes, rigid transforms and the deterministic geometric primitives
//! shared by the data generator, the encoders, the losses and the metrics.

mod io;
mod label;
mod mesh;
mod nearest;
mod sampling;
mod se3;

pub use io::{
    obj_string, parse_obj, read_jaw, read_obj, write_jaw, write_obj, JawManifest, JawManifestEntry, JAW_MANIFEST,
};
pub use label::{Jaw, ToothLabel};
pub use mesh::{geometric_center, JawModel, ToothMesh, DEFAULT_PATCH_SIZE};
pub use nearest::{
    chamfer_per_tooth, chamfer_points, chamfer_points_brute, distance_matrix, nearest_neighbors, BRUTE_FORCE_LIMIT,
};
pub use sampling::{sample_jaw_points, sample_points, DEFAULT_POINTS_PER_TOOTH};
pub use se3::{
    align, apply_transform, canonicalize_axis_angle, hat, rotation_jacobians, se3_exp, so3_exp, so3_log,
    TransformParams,
};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;
