//! On-disk dataset layout.
//!
//! ```text
//! <root>/dataset.json              manifest
//! <root>/<id>/sequence.json        per-sequence metadata and annotations
//! <root>/<id>/frame_00000.rgb      u8, res·res·3, row-major RGB
//! <root>/<id>/frame_00000.depth    f32 little-endian, res·res, 0 = invalid
//! <root>/<id>/frame_00000.seg      u8, res·res (0 background, 1 scene, 2+i hand slot i)
//! ```
//!
//! `dataset.json` holds `format` (`"hand3r-synth"`), `version` (1) and a
//! `sequences` list of `{id, dir, n_frames, res, sha256}`. The checksum is
//! SHA-256 over the bytes of `sequence.json` followed by every frame's
//! `.rgb`, `.depth` and `.seg` files in frame order. Images are stored as
//! `round(255·c)` and read back as `u8 / 255`; the pointmap is recomputed
//! from depth, so a write/read cycle is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use hand3r_core::{CameraIntrinsics, Image, PointMap, RigidTransform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::generator::SequenceSample;
use crate::raster::{FrameRecord, HandAnnotation};
use crate::scene::SceneSpec;
use crate::{Error, Result};

pub const FORMAT: &str = "hand3r-synth";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    pub dir: String,
    pub n_frames: usize,
    pub res: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub sequences: Vec<SequenceEntry>,
}

#[derive(Serialize, Deserialize)]
struct FrameMeta {
    intrinsics: CameraIntrinsics,
    cam_pose: RigidTransform,
    hands: Vec<HandAnnotation>,
}

#[derive(Serialize, Deserialize)]
struct SequenceMeta {
    id: String,
    seed: u64,
    fps: f64,
    n_hands: usize,
    template_seed: u64,
    res: usize,
    scene: SceneSpec,
    frames: Vec<FrameMeta>,
}

fn frame_stem(i: usize) -> String {
    format!("frame_{i:05}")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn encode_frame(f: &FrameRecord) -> [Vec<u8>; 3] {
    let rgb = f.image.data.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let depth = f.depth.iter().flat_map(|d| d.to_le_bytes()).collect();
    [rgb, depth, f.segmentation.clone()]
}

/// Writes every sequence under `dir` and returns the manifest.
pub fn write_dataset(samples: &[SequenceSample], dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        if s.frames.is_empty() {
            return Err(Error::InvalidArgument(format!("sequence {} has no frames", s.id)));
        }
        let seq_dir = dir.join(&s.id);
        fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
        let meta = SequenceMeta {
            id: s.id.clone(),
            seed: s.seed,
            fps: s.fps,
            n_hands: s.n_hands,
            template_seed: s.template_seed,
            res: s.res(),
            scene: s.scene.clone(),
            frames: s
                .frames
                .iter()
                .map(|f| FrameMeta { intrinsics: f.intrinsics, cam_pose: f.cam_pose.clone(), hands: f.hands.clone() })
                .collect(),
        };
        let json = serde_json::to_vec_pretty(&meta).expect("sequence metadata serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        write_file(&seq_dir.join("sequence.json"), &json)?;
        for (i, f) in s.frames.iter().enumerate() {
            for (ext, bytes) in ["rgb", "depth", "seg"].iter().zip(encode_frame(f)) {
                hasher.update(&bytes);
                write_file(&seq_dir.join(format!("{}.{ext}", frame_stem(i))), &bytes)?;
            }
        }
        entries.push(SequenceEntry {
            id: s.id.clone(),
            dir: s.id.clone(),
            n_frames: s.frames.len(),
            res: s.res(),
            sha256: hex::encode(hasher.finalize()),
        });
    }
    let manifest = DatasetManifest { format: FORMAT.into(), version: VERSION, sequences: entries };
    let path = dir.join(MANIFEST);
    write_file(&path, &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let m: DatasetManifest =
        serde_json::from_slice(&read_file(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::format(&path, format!("unsupported format {} v{}", m.format, m.version)));
    }
    Ok(m)
}

fn expect_len(path: &Path, bytes: &[u8], len: usize) -> Result<()> {
    if bytes.len() != len {
        return Err(Error::format(path, format!("expected {len} bytes, found {}", bytes.len())));
    }
    Ok(())
}

/// Reads and verifies one sequence listed in the manifest.
pub fn read_sequence(dir: &Path, entry: &SequenceEntry) -> Result<SequenceSample> {
    let seq_dir: PathBuf = dir.join(&entry.dir);
    let meta_path = seq_dir.join("sequence.json");
    let json = read_file(&meta_path)?;
    let mut hasher = Sha256::new();
    hasher.update(&json);
    let meta: SequenceMeta = serde_json::from_slice(&json).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.frames.len() != entry.n_frames || meta.res != entry.res {
        return Err(Error::format(&meta_path, "frame count or resolution disagrees with the manifest"));
    }
    let res = meta.res;
    let mut frames = Vec::with_capacity(meta.frames.len());
    for (i, fm) in meta.frames.into_iter().enumerate() {
        let stem = frame_stem(i);
        let rgb_path = seq_dir.join(format!("{stem}.rgb"));
        let depth_path = seq_dir.join(format!("{stem}.depth"));
        let seg_path = seq_dir.join(format!("{stem}.seg"));
        let rgb = read_file(&rgb_path)?;
        let depth_bytes = read_file(&depth_path)?;
        let segmentation = read_file(&seg_path)?;
        expect_len(&rgb_path, &rgb, res * res * 3)?;
        expect_len(&depth_path, &depth_bytes, res * res * 4)?;
        expect_len(&seg_path, &segmentation, res * res)?;
        hasher.update(&rgb);
        hasher.update(&depth_bytes);
        hasher.update(&segmentation);
        let depth: Vec<f32> = depth_bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let image = Image { width: res, height: res, data: rgb.iter().map(|b| *b as f32 / 255.0).collect() };
        let gt_pointmap = PointMap::from_depth(&fm.intrinsics, &depth, res, res);
        frames.push(FrameRecord {
            image,
            intrinsics: fm.intrinsics,
            cam_pose: fm.cam_pose,
            depth,
            gt_pointmap,
            segmentation,
            hands: fm.hands,
        });
    }
    let actual = hex::encode(hasher.finalize());
    if actual != entry.sha256 {
        return Err(Error::Checksum { path: seq_dir, expected: entry.sha256.clone(), actual });
    }
    Ok(SequenceSample {
        id: meta.id,
        seed: meta.seed,
        fps: meta.fps,
        n_hands: meta.n_hands,
        template_seed: meta.template_seed,
        scene: meta.scene,
        frames,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Vec<SequenceSample>> {
    let m = read_manifest(dir)?;
    m.sequences.iter().map(|e| read_sequence(dir, e)).collect()
}
