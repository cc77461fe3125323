//! Transforms, alignment, projection, cropping and region pooling.

mod align;
mod camera;
mod image;
mod pool;
mod rotation;
mod transform;

pub use align::{alignment_residual, umeyama_align};
pub use camera::{back_project, project_point, project_points, CameraIntrinsics, PointMap};
pub use image::{crop_transform, BBox, CropMapping, Image};
pub use pool::{region_pool, region_pool_weights, TokenGrid};
pub use rotation::{
    axis_angle_to_matrix, matrix_to_axis_angle, matrix_to_rot6d, rot6d_to_matrix, rotation_angle,
};
pub use transform::{RigidTransform, SimilarityTransform};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
