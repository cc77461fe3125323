//! Numerical core for online hand-scene reconstruction.
//!
//! * [`handmodel`]: procedural MANO-compatible hand template, forward
//!   kinematics and linear blend skinning.
//! * [`geometry`]: rigid/similarity transforms, closed-form alignment,
//!   pinhole projection, cropping and token-grid region pooling.
//! * [`metrics`]: MPJPE family, PCK-AUC and the windowed world-frame metrics.

pub mod error;
pub mod geometry;
pub mod handmodel;
pub mod metrics;

pub use error::{Error, Result};
pub use geometry::{
    BBox, CameraIntrinsics, Image, PointMap, RigidTransform, SimilarityTransform, TokenGrid,
};
pub use handmodel::{HandMesh, HandParams, HandTemplate, Handedness};
