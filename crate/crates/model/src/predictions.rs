//! Per-frame predictions as a JSON file, and the glue that turns them plus
//! a dataset into metric inputs.
//!
//! A predictions file lists, per sequence and frame, the predicted camera
//! pose relative to the sequence's first frame and each predicted hand as
//! camera-frame MANO parameters tagged with the index of the annotation it
//! answers. World-frame joints are `cam_pose ∘ FK(params)`.

use std::path::Path;

use hand3r_core::handmodel::forward_kinematics;
use hand3r_core::metrics::{evaluate, HandFrameEval, HandTrack, MetricsConfig, MetricsReport, SequenceEval};
use hand3r_core::geometry::Vec3;
use hand3r_core::{HandParams, HandTemplate, RigidTransform};
use hand3r_synth::SequenceSample;
use serde::{Deserialize, Serialize};

use crate::losses::{pointmap_loss, prompted_annotations, relative_pose};
use crate::network::{FrameInput, FramePrediction, Hand3R};
use crate::{Error, Result};

pub const FORMAT: &str = "hand3r-predictions";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub format: String,
    pub version: u32,
    pub template_seed: u64,
    pub sequences: Vec<SequencePredictions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePredictions {
    pub id: String,
    pub frames: Vec<FrameRecordPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecordPrediction {
    pub cam_pose: RigidTransform,
    pub hands: Vec<HandRecordPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandRecordPrediction {
    /// Index into the frame's hand annotations.
    pub annotation: usize,
    pub params: HandParams,
}

impl PredictionsFile {
    pub fn new(template_seed: u64, sequences: Vec<SequencePredictions>) -> Self {
        Self { format: FORMAT.into(), version: VERSION, template_seed, sequences }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("predictions serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PredictionsFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if file.format != FORMAT {
            return Err(Error::format(path, format!("format is {:?}, expected {FORMAT:?}", file.format)));
        }
        if file.version != VERSION {
            return Err(Error::format(path, format!("version {} unsupported (expected {VERSION})", file.version)));
        }
        Ok(file)
    }
}

/// Causal model run over one sequence.
pub fn predict_sequence(model: &Hand3R, seq: &SequenceSample) -> Result<Vec<FramePrediction>> {
    let inputs: Vec<FrameInput> = seq.frames.iter().map(FrameInput::from_record).collect();
    model.forward_online(&inputs)
}

/// Model predictions in file form.
pub fn to_record(seq: &SequenceSample, preds: &[FramePrediction]) -> SequencePredictions {
    let frames = seq
        .frames
        .iter()
        .zip(preds)
        .map(|(rec, p)| {
            let prompted = prompted_annotations(rec);
            FrameRecordPrediction {
                cam_pose: p.scene.cam_pose,
                hands: p.hands.iter().map(|h| HandRecordPrediction { annotation: prompted[h.query], params: h.params.clone() }).collect(),
            }
        })
        .collect();
    SequencePredictions { id: seq.id.clone(), frames }
}

pub fn predict_corpus(model: &Hand3R, data: &[SequenceSample]) -> Result<PredictionsFile> {
    let seqs = data.iter().map(|s| Ok(to_record(s, &predict_sequence(model, s)?))).collect::<Result<Vec<_>>>()?;
    Ok(PredictionsFile::new(model.config.template_seed, seqs))
}

/// Ground truth written as predictions: every annotated hand, exact
/// camera-frame parameters and exact relative poses.
pub fn ground_truth_predictions(template: &HandTemplate, data: &[SequenceSample]) -> PredictionsFile {
    let seqs = data
        .iter()
        .map(|seq| {
            let reference = seq.frames[0].cam_pose;
            let frames = seq
                .frames
                .iter()
                .map(|rec| {
                    let w2c = rec.cam_pose.inverse();
                    FrameRecordPrediction {
                        cam_pose: relative_pose(&reference, rec),
                        hands: rec
                            .hands
                            .iter()
                            .enumerate()
                            .map(|(i, h)| HandRecordPrediction { annotation: i, params: h.params.transformed(template, &w2c) })
                            .collect(),
                    }
                })
                .collect();
            SequencePredictions { id: seq.id.clone(), frames }
        })
        .collect();
    PredictionsFile::new(template.seed, seqs)
}

/// Pairs predictions with ground truth, one track per annotated hand.
/// Ground-truth world joints are expressed in the first camera's frame,
/// the frame the predicted poses refer to.
pub fn sequence_eval(template: &HandTemplate, seq: &SequenceSample, pred: &SequencePredictions) -> Result<SequenceEval> {
    if pred.id != seq.id {
        return Err(Error::InvalidInput(format!("prediction for {} paired with sequence {}", pred.id, seq.id)));
    }
    if pred.frames.len() != seq.frames.len() {
        return Err(Error::InvalidInput(format!(
            "{}: {} predicted frames for {} ground-truth frames",
            seq.id,
            pred.frames.len(),
            seq.frames.len()
        )));
    }
    let reference = seq.frames[0].cam_pose;
    let mut tracks = vec![HandTrack::default(); seq.n_hands];
    for (fi, (rec, p)) in seq.frames.iter().zip(&pred.frames).enumerate() {
        let w2c = rec.cam_pose.inverse();
        let gt_rel = relative_pose(&reference, rec);
        let mut row: Vec<Option<HandFrameEval>> = vec![None; seq.n_hands];
        for h in &p.hands {
            let ann = rec.hands.get(h.annotation).ok_or_else(|| {
                Error::InvalidInput(format!("{} frame {fi}: annotation {} does not exist", seq.id, h.annotation))
            })?;
            if ann.params.handedness != h.params.handedness {
                return Err(Error::InvalidInput(format!("{} frame {fi}: handedness mismatch for hand {}", seq.id, h.annotation)));
            }
            let gt_cam = forward_kinematics(template, &ann.params.transformed(template, &w2c))?.joints;
            let pred_cam = forward_kinematics(template, &h.params)?.joints;
            row[h.annotation] = Some(HandFrameEval {
                occlusion_ratio: ann.occlusion_ratio,
                pred_world: p.cam_pose.apply_all(&pred_cam),
                gt_world: gt_rel.apply_all(&gt_cam),
                pred_cam,
                gt_cam,
            });
        }
        for (t, e) in tracks.iter_mut().zip(row) {
            t.frames.push(e);
        }
    }
    Ok(SequenceEval { id: seq.id.clone(), tracks })
}

/// Full metric report of a predictions file against a dataset.
pub fn evaluate_predictions(
    template: &HandTemplate,
    data: &[SequenceSample],
    pred: &PredictionsFile,
    cfg: &MetricsConfig,
) -> Result<MetricsReport> {
    if pred.template_seed != template.seed {
        return Err(Error::InvalidInput(format!(
            "predictions use template seed {}, evaluation template has seed {}",
            pred.template_seed, template.seed
        )));
    }
    if let Some(s) = data.iter().find(|s| s.template_seed != template.seed) {
        return Err(Error::InvalidInput(format!(
            "sequence {} was generated with template seed {}, evaluation template has seed {}",
            s.id, s.template_seed, template.seed
        )));
    }
    if pred.sequences.len() != data.len() {
        return Err(Error::InvalidInput(format!("{} predicted sequences for {} in the dataset", pred.sequences.len(), data.len())));
    }
    let evals = data.iter().zip(&pred.sequences).map(|(s, p)| sequence_eval(template, s, p)).collect::<Result<Vec<_>>>()?;
    Ok(evaluate(&evals, cfg)?)
}

/// Mean held-out pointmap term over every frame of causal runs.
pub fn heldout_pointmap_loss(model: &Hand3R, data: &[SequenceSample]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for seq in data {
        for (rec, p) in seq.frames.iter().zip(predict_sequence(model, seq)?) {
            sum += pointmap_loss(&p, rec)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no frames to evaluate".into()));
    }
    Ok(sum / n as f64)
}

/// Held-out root-relative MPJPE (mm) of the MANO head on every prompted
/// hand, and of the zero-pose, mean-shape predictor on the same hands.
pub fn root_relative_mpjpe(model: &Hand3R, data: &[SequenceSample]) -> Result<(f64, f64)> {
    use hand3r_core::handmodel::root_relative;
    use hand3r_core::metrics::mpjpe;
    let t = &model.template;
    let (mut ours, mut zero, mut n) = (0.0, 0.0, 0usize);
    for seq in data {
        for rec in &seq.frames {
            let input = FrameInput::from_record(rec);
            let w2c = rec.cam_pose.inverse();
            for (q, i) in prompted_annotations(rec).into_iter().enumerate() {
                let gt = rec.hands[i].params.transformed(t, &w2c);
                let gt_rel = root_relative(&forward_kinematics(t, &gt)?).joints;
                let f_h = model.hand_feature_value(&input.image, &input.hands[q])?;
                let pred = model.head_mano(f_h.as_slice().expect("contiguous"), gt.handedness);
                let pred_rel = root_relative(&forward_kinematics(t, &pred)?).joints;
                let base_rel = root_relative(&forward_kinematics(t, &HandParams::zero(gt.handedness))?).joints;
                ours += mpjpe(&pred_rel, &gt_rel)?;
                zero += mpjpe(&base_rel, &gt_rel)?;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no prompted hands to evaluate".into()));
    }
    Ok((ours / n as f64, zero / n as f64))
}

/// Baseline that keeps the model's own root-relative hands but places
/// every hand at a fixed camera-frame translation.
pub fn fixed_translation_predictions(model: &Hand3R, data: &[SequenceSample], transl: Vec3) -> Result<PredictionsFile> {
    let mut seqs = Vec::with_capacity(data.len());
    for seq in data {
        let mut frames = Vec::with_capacity(seq.frames.len());
        for rec in &seq.frames {
            let input = FrameInput::from_record(rec);
            let mut hands = Vec::new();
            for (q, i) in prompted_annotations(rec).into_iter().enumerate() {
                let f_h = model.hand_feature_value(&input.image, &input.hands[q])?;
                let mut params = model.head_mano(f_h.as_slice().expect("contiguous"), rec.hands[i].params.handedness);
                params.transl = transl;
                hands.push(HandRecordPrediction { annotation: i, params });
            }
            frames.push(FrameRecordPrediction { cam_pose: RigidTransform::identity(), hands });
        }
        seqs.push(SequencePredictions { id: seq.id.clone(), frames });
    }
    Ok(PredictionsFile::new(model.config.template_seed, seqs))
}
