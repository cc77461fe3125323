use hand3r_core::metrics::MetricsConfig;
use hand3r_model::checkpoint;
use hand3r_model::gradcheck::check_config;
use hand3r_model::predictions::{evaluate_predictions, ground_truth_predictions, predict_corpus, PredictionsFile};
use hand3r_model::{Error, FrameInput, Hand3R, ModelConfig};
use hand3r_synth::{generate_corpus, GenConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut model = Hand3R::new(check_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for id in model.store.ids().collect::<Vec<_>>() {
        model.store.value_mut(id).mapv_inplace(|v| v + rng.gen_range(-1.0..1.0) * 1e-3);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&model, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.store.all(), model.store.all());
    let data = generate_corpus(3, 1, &GenConfig { n_frames: 3, n_hands: 2, res: 64, ..GenConfig::default() }).unwrap();
    let frames: Vec<_> = data[0].frames.iter().map(FrameInput::from_record).collect();
    assert_eq!(back.forward_online(&frames).unwrap(), model.forward_online(&frames).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = Hand3R::new(check_config()).unwrap();
    let bytes = checkpoint::to_bytes(&model);
    let p = std::path::Path::new("x.ckpt");
    assert!(matches!(checkpoint::from_bytes(&bytes[..bytes.len() - 8], p), Err(Error::Format { .. })));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(checkpoint::from_bytes(&extra, p), Err(Error::Format { .. })));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(checkpoint::from_bytes(&magic, p), Err(Error::Format { .. })));
    let text = String::from_utf8_lossy(&bytes[12..]).to_string();
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = text[..hlen].replace("\"format_version\":1", "\"format_version\":9");
    let mut versioned = bytes[..8].to_vec();
    versioned.extend_from_slice(&(header.len() as u32).to_le_bytes());
    versioned.extend_from_slice(header.as_bytes());
    versioned.extend_from_slice(&bytes[12 + hlen..]);
    let err = checkpoint::from_bytes(&versioned, p).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
}

#[test]
fn ground_truth_predictions_score_zero() {
    let gen = GenConfig { n_frames: 4, n_hands: 2, res: 64, ..GenConfig::default() };
    let data = generate_corpus(5, 2, &gen).unwrap();
    let template = hand3r_core::HandTemplate::build(gen.template_seed);
    let pred = ground_truth_predictions(&template, &data);
    let cfg = MetricsConfig { window_lengths: vec![2, 4], ..MetricsConfig::default() };
    let report = evaluate_predictions(&template, &data, &pred, &cfg).unwrap();
    assert!(report.c_mpjpe_mm.unwrap() < 1e-9);
    for b in &report.local {
        if let Some(m) = b.pa_mpjpe_mm {
            assert!(m < 1e-9);
        }
    }
    for w in &report.windows {
        for m in [w.w_mpjpe_mm, w.wa_mpjpe_mm].into_iter().flatten() {
            assert!(m < 1e-9);
        }
    }
}

#[test]
fn predictions_file_round_trip_and_validation() {
    let gen = GenConfig { n_frames: 2, n_hands: 2, res: 64, ..GenConfig::default() };
    let data = generate_corpus(6, 2, &gen).unwrap();
    let model = Hand3R::new(ModelConfig { image_res: 64, ..check_config() }).unwrap();
    let pred = predict_corpus(&model, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    pred.save(&path).unwrap();
    assert_eq!(PredictionsFile::load(&path).unwrap(), pred);
    evaluate_predictions(&model.template, &data, &pred, &MetricsConfig::default()).unwrap();

    let mut wrong = pred.clone();
    wrong.version = 2;
    wrong.save(&path).unwrap();
    assert!(matches!(PredictionsFile::load(&path), Err(Error::Format { .. })));
    let mut seed = pred.clone();
    seed.template_seed += 1;
    assert!(evaluate_predictions(&model.template, &data, &seed, &MetricsConfig::default()).is_err());
    let mut short = pred.clone();
    short.sequences[0].frames.pop();
    assert!(evaluate_predictions(&model.template, &data, &short, &MetricsConfig::default()).is_err());
}
