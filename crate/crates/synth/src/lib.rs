//! Synthetic ground-truth-complete hand-scene sequences.
//!
//! * [`scene`]: ground plane and box primitives with ray casting.
//! * [`raster`]: per-frame rendering of image, depth, pointmap, keypoints,
//!   boxes and occlusion ratios.
//! * [`generator`]: seeded camera and hand trajectories.
//! * [`dataset`]: directory layout with manifest and checksums.

pub mod dataset;
pub mod error;
pub mod generator;
pub mod raster;
pub mod scene;

pub use dataset::{read_dataset, read_manifest, read_sequence, write_dataset, DatasetManifest, SequenceEntry};
pub use error::{Error, Result};
pub use generator::{generate_corpus, generate_sequence, generate_sequence_with, GenConfig, SequenceSample};
pub use raster::{rasterize_frame, FrameRecord, HandAnnotation};
pub use scene::{BoxPrim, SceneSpec};
