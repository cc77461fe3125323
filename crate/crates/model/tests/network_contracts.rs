use hand3r_core::geometry::{BBox, Image, Vec2};
use hand3r_core::Handedness;
use hand3r_model::gradcheck::check_config;
use hand3r_model::training::{Adam, GradAcc};
use hand3r_model::{Error, FrameInput, Graph, Hand3R, HandQuery, ModelConfig, ParamGroup};
use hand3r_synth::{generate_sequence_with, GenConfig, SequenceSample};

fn sequence(model: &Hand3R, seed: u64, n_frames: usize, n_hands: usize) -> SequenceSample {
    let gen = GenConfig { n_frames, n_hands, res: model.config.image_res, ..GenConfig::default() };
    generate_sequence_with(&model.template, seed, &gen).unwrap()
}

fn inputs(seq: &SequenceSample) -> Vec<FrameInput> {
    seq.frames.iter().map(FrameInput::from_record).collect()
}

fn rotation_ok(m: &hand3r_core::geometry::Mat3) -> bool {
    (m.transpose() * m - hand3r_core::geometry::Mat3::identity()).abs().max() < 1e-6 && (m.determinant() - 1.0).abs() < 1e-6
}

#[test]
fn prefix_runs_are_bit_identical() {
    let model = Hand3R::new(check_config()).unwrap();
    let frames = inputs(&sequence(&model, 1, 30, 2));
    let full = model.forward_online(&frames).unwrap();
    for k in [1, 2, 17, 29] {
        assert_eq!(model.forward_online(&frames[..k]).unwrap(), full[..k], "prefix {k}");
    }
}

#[test]
fn future_frames_do_not_change_the_past() {
    let model = Hand3R::new(check_config()).unwrap();
    let mut frames = inputs(&sequence(&model, 2, 8, 1));
    let before = model.forward_online(&frames).unwrap();
    frames[5].image = Image::zeros(64, 64);
    let after = model.forward_online(&frames).unwrap();
    assert_eq!(before[..5], after[..5]);
    assert_ne!(before[5], after[5]);
}

#[test]
fn empty_sequence_is_rejected() {
    let model = Hand3R::new(check_config()).unwrap();
    assert!(matches!(model.forward_online(&[]), Err(Error::InvalidInput(_))));
}

#[test]
fn single_frame_two_hands_in_slot_order() {
    let model = Hand3R::new(check_config()).unwrap();
    let seq = sequence(&model, 3, 1, 2);
    let frames = inputs(&seq);
    let p = model.forward_online(&frames).unwrap();
    assert_eq!(p.len(), 1);
    let hands = &p[0].hands;
    assert_eq!(hands.len(), frames[0].hands.len());
    let order = Hand3R::slot_order(&frames[0].hands);
    assert_eq!(hands.iter().map(|h| h.query).collect::<Vec<_>>(), order);
    for h in hands {
        assert_eq!(h.handedness, frames[0].hands[h.query].handedness);
        assert!(h.params.is_finite());
        assert!(h.mesh_cam.joints.iter().all(|j| j.iter().all(|v| v.is_finite())));
    }
    let s = &p[0].scene;
    assert!(s.confidence.iter().all(|c| *c > 0.0));
    assert!(rotation_ok(&s.cam_pose.rotation));
}

#[test]
fn too_many_prompts_is_a_capacity_error() {
    let model = Hand3R::new(check_config()).unwrap();
    let mut frame = inputs(&sequence(&model, 4, 1, 2)).remove(0);
    let extra = frame.hands[0].clone();
    while frame.hands.len() <= model.config.max_hands {
        frame.hands.push(extra.clone());
    }
    let err = model.step(&frame, &model.initial_state()).unwrap_err();
    assert!(matches!(err, Error::Capacity { got: 3, max: 2 }), "{err}");
}

#[test]
fn hand_free_frame_updates_state() {
    let model = Hand3R::new(check_config()).unwrap();
    let mut frame = inputs(&sequence(&model, 5, 1, 1)).remove(0);
    frame.hands.clear();
    let s0 = model.initial_state();
    let (p, s1) = model.step(&frame, &s0).unwrap();
    assert!(p.hands.is_empty());
    assert_eq!(s1.frame, 1);
    assert_ne!(s1.tokens, s0.tokens);
    assert!(p.scene.pointmap.points.iter().all(|q| q.iter().all(|v| v.is_finite())));
}

#[test]
fn prompt_order_contract() {
    let model = Hand3R::new(check_config()).unwrap();
    let frame = inputs(&sequence(&model, 6, 1, 2)).remove(0);
    assert_eq!(frame.hands.len(), 2);
    let mut swapped = frame.clone();
    swapped.hands.swap(0, 1);
    let a = model.step(&frame, &model.initial_state()).unwrap();
    let b = model.step(&swapped, &model.initial_state()).unwrap();
    // Slots follow (handedness, box center x), so swapping the queries
    // swaps the query indices and nothing else.
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.scene, b.0.scene);
    for (ha, hb) in a.0.hands.iter().zip(&b.0.hands) {
        assert_eq!(ha.query, 1 - hb.query);
        assert_eq!(ha.params, hb.params);
    }
}

#[test]
fn slot_order_is_handedness_then_center_x() {
    let q = |h, x| HandQuery { handedness: h, bbox: BBox { center: Vec2::new(x, 10.0), size: Vec2::new(5.0, 5.0) } };
    let hands = [q(Handedness::Right, 5.0), q(Handedness::Left, 50.0), q(Handedness::Right, 1.0)];
    assert_eq!(Hand3R::slot_order(&hands), vec![1, 2, 0]);
}

#[test]
fn encoders_check_resolution_and_are_deterministic() {
    let model = Hand3R::new(check_config()).unwrap();
    assert!(matches!(model.encode_scene(&Image::zeros(32, 32)), Err(Error::InvalidInput(_))));
    assert!(matches!(model.encode_hand(&Image::zeros(8, 8)), Err(Error::InvalidInput(_))));
    let zero = model.encode_scene(&Image::zeros(64, 64)).unwrap();
    assert!(zero.data.iter().all(|v| v.is_finite()));
    assert_eq!(zero, model.encode_scene(&Image::zeros(64, 64)).unwrap());
    let mut img = Image::zeros(64, 64);
    img.set_pixel(3, 3, [1.0, 1.0, 1.0f32]);
    assert_ne!(zero, model.encode_scene(&img).unwrap());
    let r = model.config.hand_crop_res;
    assert_eq!(model.encode_hand(&Image::zeros(r, r)).unwrap(), model.encode_hand(&Image::zeros(r, r)).unwrap());
}

#[test]
fn prompt_shape_and_sensitivity() {
    let model = Hand3R::new(check_config()).unwrap();
    let d = model.config.token_dim;
    let a = vec![0.1; d];
    let b = vec![-0.2; d];
    let p = model.build_prompt(&a, &b).unwrap();
    assert_eq!(p.len(), d);
    let mut a2 = a.clone();
    a2[0] += 0.5;
    let mut b2 = b.clone();
    b2[1] += 0.5;
    assert_ne!(p, model.build_prompt(&a2, &b).unwrap());
    assert_ne!(p, model.build_prompt(&a, &b2).unwrap());
    assert!(matches!(model.build_prompt(&a[..d - 1], &b), Err(Error::InvalidInput(_))));
}

#[test]
fn mano_head_bias_output_and_rotations() {
    let model = Hand3R::new(ModelConfig::default()).unwrap();
    let zero = vec![0.0; model.config.token_dim];
    let p = model.head_mano(&zero, Handedness::Right);
    assert_eq!(p, model.head_mano(&zero, Handedness::Right));
    assert_eq!(p, hand3r_core::HandParams::zero(Handedness::Right));
    let mut m = model.clone();
    for id in m.mano_head_ids() {
        m.store.value_mut(id).mapv_inplace(|v| v + 0.3);
    }
    let f: Vec<f64> = (0..m.config.token_dim).map(|k| (k as f64).cos()).collect();
    for side in [Handedness::Left, Handedness::Right] {
        assert_eq!(m.head_mano(&f, side).handedness, side);
    }
    let mut g = Graph::new();
    let x = g.constant(ndarray::Array2::from_shape_vec((1, f.len()), f).unwrap());
    let raw = m.mano_raw(&mut g, x);
    let (rots, _) = m.mano_decode(&mut g, raw);
    let rv = g.value(rots);
    assert_eq!(rv.dim(), (16, 9));
    for row in rv.rows() {
        let r = hand3r_core::geometry::Mat3::from_row_slice(&row.to_vec());
        assert!(rotation_ok(&r));
    }
}

#[test]
fn frozen_hand_encoder_survives_an_optimizer_step() {
    let mut model = Hand3R::new(check_config()).unwrap();
    assert!(model.config.freeze_hand_encoder);
    let frame = inputs(&sequence(&model, 7, 1, 1)).remove(0);
    let crop = model.hand_crop(&frame.image, &frame.hands[0]).unwrap();
    let before = model.encode_hand(&crop).unwrap();
    let snapshot = model.store.snapshot(ParamGroup::HandEncoder);
    let mut g = Graph::new();
    let s = model.initial_state_var(&mut g);
    let nodes = model.frame_graph(&mut g, &frame, s, None).unwrap();
    let a = g.sum(nodes.points);
    let b = g.sum(nodes.hands[0].transl);
    let c = g.sum(nodes.hands[0].rots);
    let ab = g.add(a, b);
    let loss = g.add(ab, c);
    let mut acc = GradAcc::new(model.store.len());
    acc.add(&g, loss, 1.0);
    let mut adam = Adam::new(1e-2, model.store.len());
    let others = model.store.snapshot(ParamGroup::Decoder);
    adam.step(&mut model.store, &acc.0);
    assert_eq!(model.store.snapshot(ParamGroup::HandEncoder), snapshot);
    assert_eq!(model.encode_hand(&crop).unwrap(), before);
    assert_ne!(model.store.snapshot(ParamGroup::Decoder), others);
}
