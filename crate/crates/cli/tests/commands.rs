use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use hand3r_cli::commands::*;
use hand3r_cli::manifest::{list_files, RunManifest, MANIFEST};
use hand3r_cli::Cli;
use hand3r_model::gradcheck::check_config;
use hand3r_model::predictions::{ground_truth_predictions, predict_sequence};
use hand3r_model::training::ExpertCorpus;
use hand3r_model::{checkpoint, TrainConfig};
use hand3r_synth::read_dataset;

fn gen(seed: u64, sequences: usize, frames: usize, hands: usize, out: &Path) -> Outcome {
    let a = GenDataArgs { seed, sequences, frames, hands, res: 64, out: None };
    cmd_gen_data(&a, out).unwrap()
}

/// Expert checkpoint of the small check network after one step.
fn tiny_expert(dir: &Path) -> PathBuf {
    let cfg = ExpertConfig {
        model: Some(check_config()),
        corpus: ExpertCorpus { chunks: 1, sequences: 1, frames: 1, ..ExpertCorpus::default() },
        train: TrainConfig { steps: 1, batch_size: 2, ..TrainConfig::default() },
    };
    let path = dir.join("expert.toml");
    fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let a = PretrainArgs {
        kind: PretrainKind::Expert,
        config: Some(path),
        data: None,
        subset: None,
        init_checkpoint: None,
        steps: None,
        out: None,
    };
    let out = dir.join("expert");
    cmd_pretrain(&a, &out).unwrap();
    out.join(CHECKPOINT)
}

fn train_args(stage: u8, data: &Path, init: Option<PathBuf>) -> TrainArgs {
    TrainArgs { stage, data: data.into(), subset: None, config: None, init_checkpoint: init, steps: Some(1), seed: None, out: None }
}

#[test]
fn single_frame_dataset_and_reproducible_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(3, 1, 1, 1, &dir.path().join("a"));
    let data = read_dataset(&dir.path().join("a")).unwrap();
    assert_eq!(data.len(), 1);
    assert_eq!(data[0].frames.len(), 1);
    let b = gen(3, 1, 1, 1, &dir.path().join("b"));
    assert_eq!(a.manifest.checksums(), b.manifest.checksums());
    assert_eq!(a.manifest.config_hash, b.manifest.config_hash);
    assert_eq!(a.manifest.seed, Some(3));
    let c = gen(4, 1, 1, 1, &dir.path().join("c"));
    assert_ne!(a.manifest.checksums(), c.manifest.checksums());
}

#[test]
fn hundred_frame_sequences_are_supported() {
    let dir = tempfile::tempdir().unwrap();
    gen(5, 1, 100, 2, dir.path());
    assert_eq!(read_dataset(dir.path()).unwrap()[0].frames.len(), 100);
}

#[test]
fn invalid_generation_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let bad = [
        GenDataArgs { seed: 0, sequences: 0, frames: 1, hands: 1, res: 64, out: None },
        GenDataArgs { seed: 0, sequences: 1, frames: 0, hands: 1, res: 64, out: None },
        GenDataArgs { seed: 0, sequences: 1, frames: 1, hands: 3, res: 64, out: None },
        GenDataArgs { seed: 0, sequences: 1, frames: 1, hands: 1, res: 16, out: None },
    ];
    for a in bad {
        assert!(cmd_gen_data(&a, &dir.path().join("x")).is_err(), "{a:?}");
    }
    fs::write(dir.path().join("stale"), b"x").unwrap();
    let err = cmd_gen_data(&GenDataArgs { seed: 0, sequences: 1, frames: 1, hands: 1, res: 64, out: None }, dir.path()).unwrap_err();
    assert!(err.to_string().contains("not empty"), "{err}");
}

#[test]
fn manifest_lists_every_file_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let o = gen(6, 2, 2, 1, dir.path());
    let files: Vec<String> = list_files(dir.path()).unwrap().iter().map(|p| p.to_string_lossy().replace('\\', "/")).collect();
    let listed: Vec<String> = o.manifest.artifacts.iter().map(|a| a.path.clone()).collect();
    assert_eq!(files, listed);
    assert!(!listed.contains(&MANIFEST.to_string()));
    let loaded = RunManifest::load(&o.manifest_path).unwrap();
    assert_eq!(loaded, o.manifest);
    loaded.verify(dir.path()).unwrap();
    let victim = dir.path().join(&listed[0]);
    let mut bytes = fs::read(&victim).unwrap();
    bytes[0] ^= 1;
    fs::write(&victim, bytes).unwrap();
    assert!(loaded.verify(dir.path()).is_err());
}

#[test]
fn stage2_requires_an_init_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(7, 1, 2, 1, &data);
    let err = cmd_train(&train_args(2, &data, None), &dir.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("--init-checkpoint"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn smoke_pipeline_emits_valid_reproducible_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(8, 2, 3, 2, &data);
    let expert = tiny_expert(dir.path());
    let s1 = cmd_train(&train_args(1, &data, Some(expert.clone())), &dir.path().join("s1")).unwrap();
    let s1_ckpt = dir.path().join("s1").join(CHECKPOINT);
    let model = checkpoint::load(&s1_ckpt).unwrap();
    assert_eq!(model.config, check_config());
    let trace = fs::read_to_string(dir.path().join("s1").join(TRACE)).unwrap();
    assert_eq!(trace.lines().count(), 2);
    let again = cmd_train(&train_args(1, &data, Some(expert)), &dir.path().join("s1b")).unwrap();
    assert_eq!(s1.manifest.checksums(), again.manifest.checksums());

    let s2 = cmd_train(&train_args(2, &data, Some(s1_ckpt)), &dir.path().join("s2")).unwrap();
    let resolved = TrainConfig::from_toml(&fs::read_to_string(dir.path().join("s2").join(RESOLVED_CONFIG)).unwrap()).unwrap();
    assert_eq!(resolved.stage, 2);
    assert_eq!(resolved.steps, 1);
    assert_eq!(s2.manifest.command, "train");
    checkpoint::load(&dir.path().join("s2").join(CHECKPOINT)).unwrap();
}

#[test]
fn scene_pretraining_needs_data() {
    let dir = tempfile::tempdir().unwrap();
    let a = PretrainArgs { kind: PretrainKind::Scene, config: None, data: None, subset: None, init_checkpoint: None, steps: Some(1), out: None };
    assert!(cmd_pretrain(&a, dir.path()).is_err());
}

#[test]
fn eval_of_ground_truth_is_zero_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    gen(9, 2, 4, 2, &data_dir);
    let data = read_dataset(&data_dir).unwrap();
    let template = hand3r_core::HandTemplate::build(data[0].template_seed);
    let pred = dir.path().join("gt.json");
    ground_truth_predictions(&template, &data).save(&pred).unwrap();
    let a = EvalArgs { checkpoint: None, predictions: Some(pred), data: data_dir, subset: None, report: None, windows: vec![2, 4] };
    let r1 = cmd_eval(&a, &dir.path().join("r1.json")).unwrap();
    let r2 = cmd_eval(&a, &dir.path().join("r2.json")).unwrap();
    assert_eq!(fs::read(dir.path().join("r1.json")).unwrap(), fs::read(dir.path().join("r2.json")).unwrap());
    assert!(r2.manifest_path.ends_with("r2.manifest.json"));
    let report = r1.report.unwrap();
    assert_eq!(report.c_mpjpe_mm, Some(0.0));
    assert_eq!(report.bucket(hand3r_core::metrics::OcclusionBucket::All).auc, Some(1.0));
    for w in &report.windows {
        assert!(w.count > 0);
        assert!(w.w_mpjpe_mm.unwrap() < 1e-9 && w.wa_mpjpe_mm.unwrap() < 1e-9);
    }
    let table = report.to_string();
    assert!(table.contains("50%-75%") && table.contains("C-MPJPE") && table.contains("WA-MPJPE") && table.contains("Bucket"));
}

#[test]
fn eval_rejects_mismatched_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    gen(10, 1, 2, 1, &data_dir);
    let data = read_dataset(&data_dir).unwrap();
    let template = hand3r_core::HandTemplate::build(data[0].template_seed);
    let mut pred = ground_truth_predictions(&template, &data);
    pred.version = 7;
    let path = dir.path().join("p.json");
    pred.save(&path).unwrap();
    let a = EvalArgs { checkpoint: None, predictions: Some(path.clone()), data: data_dir.clone(), subset: None, report: None, windows: vec![] };
    let err = cmd_eval(&a, &dir.path().join("r.json")).unwrap_err();
    assert!(format!("{err:#}").contains("version"), "{err:#}");
    pred.version = 1;
    pred.template_seed += 1;
    pred.save(&path).unwrap();
    assert!(cmd_eval(&a, &dir.path().join("r.json")).is_err());
    let sub = EvalArgs { subset: Some(0..2), ..a };
    assert!(cmd_eval(&sub, &dir.path().join("r.json")).is_err());
}

#[test]
fn reconstruct_exports_match_the_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    gen(11, 2, 3, 2, &data_dir);
    let ckpt = tiny_expert(dir.path());
    let model = checkpoint::load(&ckpt).unwrap();
    let data = read_dataset(&data_dir).unwrap();
    let seq = &data[1];
    let a = ReconstructArgs { checkpoint: ckpt.clone(), data: data_dir.clone(), sequence: seq.id.clone(), stride: 2, min_confidence: 0.0, out: None };
    let out = dir.path().join("rec");
    let o = cmd_reconstruct(&a, &out).unwrap();

    let preds = predict_sequence(&model, seq).unwrap();
    let mut expected_points = 0;
    let mut expected_objs = 0;
    for p in &preds {
        let pm = &p.scene.pointmap;
        for row in (0..pm.height).step_by(2) {
            for col in (0..pm.width).step_by(2) {
                expected_points += pm.valid[row * pm.width + col] as usize;
            }
        }
        expected_objs += p.hands.len();
    }
    let ply = fs::read_to_string(out.join(SCENE_PLY)).unwrap();
    assert!(ply.contains(&format!("element vertex {expected_points}\n")));
    let body = ply.split("end_header\n").nth(1).unwrap();
    assert_eq!(body.lines().count(), expected_points);

    let objs: Vec<_> = o.manifest.artifacts.iter().filter(|a| a.path.ends_with(".obj")).collect();
    assert_eq!(objs.len(), expected_objs);
    assert!(expected_objs > 0);
    let v0 = model.template.template_vertices.len();
    for a in objs {
        let text = fs::read_to_string(out.join(&a.path)).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), v0);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), model.template.faces.len());
    }

    let mut rdr = csv::Reader::from_path(out.join(TRAJECTORY_CSV)).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 7 + 3 * seq.n_hands);
    assert_eq!(rdr.records().count(), seq.frames.len());

    let again = cmd_reconstruct(&a, &dir.path().join("rec2")).unwrap();
    assert_eq!(o.manifest.checksums(), again.manifest.checksums());

    let bad = ReconstructArgs { sequence: "nope".into(), ..a };
    let err = cmd_reconstruct(&bad, &dir.path().join("rec3")).unwrap_err();
    assert!(err.to_string().contains("unknown sequence id"), "{err}");
}

#[test]
fn argument_parsing() {
    let ok = Cli::try_parse_from(["hand3r", "train", "--stage", "2", "--data", "d", "--init-checkpoint", "c"]).unwrap();
    assert_eq!(ok.command.name(), "train");
    assert!(Cli::try_parse_from(["hand3r", "train", "--stage", "3", "--data", "d"]).is_err());
    assert!(Cli::try_parse_from(["hand3r", "eval", "--data", "d"]).is_err());
    assert!(Cli::try_parse_from(["hand3r", "eval", "--data", "d", "--checkpoint", "c", "--predictions", "p"]).is_err());
    let e = Cli::try_parse_from(["hand3r", "eval", "--data", "d", "--predictions", "p", "--windows", "30,100", "--subset", "40..50"]).unwrap();
    match e.command {
        Command::Eval(a) => {
            assert_eq!(a.windows, vec![30, 100]);
            assert_eq!(a.subset, Some(40..50));
        }
        _ => unreachable!(),
    }
    assert_eq!(parse_range("3..5"), Ok(3..5));
    assert!(parse_range("5..5").is_err());
    assert!(parse_range("x").is_err());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let expert = ExpertConfig::from_toml(&fs::read_to_string(root.join("expert.toml")).unwrap()).unwrap();
    assert_eq!(expert.corpus.chunks * expert.corpus.sequences * expert.corpus.frames * expert.corpus.hands, 16000);
    for (name, stage) in [("stage1.toml", 1), ("scene.toml", 1), ("stage2.toml", 2)] {
        let c = TrainConfig::from_toml(&fs::read_to_string(root.join(name)).unwrap()).unwrap();
        assert_eq!(c.stage, stage, "{name}");
    }
}
