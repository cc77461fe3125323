use hand3r_core::geometry::{back_project, project_point, Vec2};
use hand3r_core::handmodel::forward_kinematics;
use hand3r_core::HandTemplate;
use hand3r_synth::dataset::MANIFEST;
use hand3r_synth::generator::corpus_seeds;
use hand3r_synth::{generate_corpus, generate_sequence_with, read_dataset, read_manifest, write_dataset, Error, GenConfig};

fn small(n_frames: usize, n_hands: usize) -> GenConfig {
    GenConfig { n_frames, n_hands, res: 64, ..GenConfig::default() }
}

#[test]
fn occlusion_buckets_populated_over_fifty_sequences() {
    let template = HandTemplate::build(0);
    let mut counts = [0usize; 3];
    for seed in corpus_seeds(2024, 50) {
        let s = generate_sequence_with(&template, seed, &small(12, 1)).unwrap();
        for f in &s.frames {
            for h in &f.hands {
                let r = h.occlusion_ratio;
                assert!((0.0..=1.0).contains(&r));
                counts[if r < 0.5 { 0 } else if r < 0.75 { 1 } else { 2 }] += 1;
            }
        }
    }
    assert!(counts.iter().all(|c| *c > 0), "bucket counts {counts:?}");
}

#[test]
fn ground_truth_is_self_consistent() {
    let template = HandTemplate::build(0);
    for seed in 0..6 {
        let s = generate_sequence_with(&template, seed, &small(5, 2)).unwrap();
        for f in &s.frames {
            let inv = f.cam_pose.inverse();
            for h in &f.hands {
                let joints = forward_kinematics(&template, &h.params).unwrap().joints;
                for (j, kp) in joints.iter().zip(&h.keypoints) {
                    assert!((project_point(&f.intrinsics, &inv.apply(j)) - kp).norm() < 1e-6);
                }
            }
            for row in 0..64 {
                for col in 0..64 {
                    let i = row * 64 + col;
                    if f.gt_pointmap.valid[i] {
                        let uv = Vec2::new(col as f64 + 0.5, row as f64 + 0.5);
                        let p = back_project(&f.intrinsics, &uv, f.depth[i] as f64);
                        assert!((p - f.gt_pointmap.points[i]).norm() < 1e-6);
                        // world point lies on a primitive up to the f32 depth rounding
                        let w = f.cam_pose.apply(&p);
                        assert!(s.scene.surface_distance(&w) < 1e-5, "off-surface by {}", s.scene.surface_distance(&w));
                    }
                }
            }
        }
    }
}

#[test]
fn round_trip_is_bit_exact_on_ten_sequences() {
    let corpus = generate_corpus(9, 10, &small(3, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&corpus, dir.path()).unwrap();
    assert_eq!(manifest.sequences.len(), 10);
    assert_eq!(read_dataset(dir.path()).unwrap(), corpus);
    assert_eq!(read_manifest(dir.path()).unwrap(), manifest);
}

#[test]
fn rewriting_gives_identical_checksums() {
    let corpus = generate_corpus(4, 3, &small(2, 1)).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let again = generate_corpus(4, 3, &small(2, 1)).unwrap();
    assert_eq!(write_dataset(&corpus, a.path()).unwrap(), write_dataset(&again, b.path()).unwrap());
}

#[test]
fn empty_dir_names_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains(MANIFEST), "{err}");
}

#[test]
fn corrupted_frame_is_detected() {
    let corpus = generate_corpus(1, 1, &small(2, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&corpus, dir.path()).unwrap();
    let path = dir.path().join(&corpus[0].id).join("frame_00001.rgb");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[7] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_dataset(dir.path()).unwrap_err(), Error::Checksum { .. }));

    std::fs::write(&path, &bytes[..10]).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("frame_00001.rgb"), "{err}");
}

#[test]
fn fifty_sequence_manifest_matches() {
    let corpus = generate_corpus(77, 50, &small(1, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(&corpus, dir.path()).unwrap();
    assert_eq!(m.sequences.len(), 50);
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 50);
    for (e, s) in m.sequences.iter().zip(&back) {
        assert_eq!(e.id, s.id);
        assert_eq!(e.sha256.len(), 64);
    }
}
