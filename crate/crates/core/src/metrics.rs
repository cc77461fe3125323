//! Hand evaluation metrics.
//!
//! All inputs are in meters; every `*_mm` output is in millimeters.
//!
//! * local: MPJPE, PA-MPJPE (per-frame similarity alignment) and the
//!   PCK-AUC over 0–50 mm, bucketed by occlusion ratio;
//! * global: C-MPJPE (camera frame, no alignment), W-MPJPE (rigid fit on
//!   the first frame(s) of each window) and WA-MPJPE (rigid fit on the
//!   whole window), over non-overlapping windows.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{umeyama_align, Vec3};
use crate::{Error, Result};

pub const M_TO_MM: f64 = 1000.0;

/// Mean Euclidean distance in millimeters.
pub fn mpjpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::SizeMismatch(format!("{} predicted joints vs {} ground-truth joints", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("mpjpe of an empty joint set".into()));
    }
    Ok(per_joint_errors(pred, gt).iter().sum::<f64>() / pred.len() as f64 * M_TO_MM)
}

fn per_joint_errors(pred: &[Vec3], gt: &[Vec3]) -> Vec<f64> {
    pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).collect()
}

/// `pred` after per-frame similarity alignment onto `gt`.
pub fn procrustes_aligned(pred: &[Vec3], gt: &[Vec3]) -> Result<Vec<Vec3>> {
    let t = umeyama_align(pred, gt, true)?;
    Ok(t.apply_all(pred))
}

pub fn pa_mpjpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::SizeMismatch(format!("{} predicted joints vs {} ground-truth joints", pred.len(), gt.len())));
    }
    mpjpe(&procrustes_aligned(pred, gt)?, gt)
}

/// PCK threshold sweep used by [`auc_pck`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucConfig {
    pub max_mm: f64,
    /// Number of uniform intervals; `steps + 1` thresholds from 0 to `max_mm`.
    pub steps: usize,
}

impl Default for AucConfig {
    fn default() -> Self {
        Self { max_mm: 50.0, steps: 100 }
    }
}

/// Slack on every PCK threshold, absorbing alignment roundoff so exact
/// predictions count as correct at threshold zero.
pub const PCK_TOLERANCE_MM: f64 = 1e-9;

/// Trapezoidal area under the PCK curve, normalised to `[0, 1]`, from
/// per-joint errors in millimeters. A joint counts as correct when its
/// error is `<=` the threshold plus [`PCK_TOLERANCE_MM`].
pub fn auc_from_errors(errors_mm: &[f64], cfg: &AucConfig) -> f64 {
    if errors_mm.is_empty() {
        return 0.0;
    }
    let mut sorted = errors_mm.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let pck = |tau: f64| sorted.partition_point(|e| *e <= tau + PCK_TOLERANCE_MM) as f64 / n;
    let h = cfg.max_mm / cfg.steps as f64;
    let mut area = 0.0;
    let mut prev = pck(0.0);
    for i in 1..=cfg.steps {
        let cur = pck(h * i as f64);
        area += 0.5 * (prev + cur) * h;
        prev = cur;
    }
    area / cfg.max_mm
}

/// AUC of PCK after per-frame Procrustes alignment, pooling every joint of
/// every frame.
pub fn auc_pck(pred_frames: &[Vec<Vec3>], gt_frames: &[Vec<Vec3>], cfg: &AucConfig) -> Result<f64> {
    if pred_frames.len() != gt_frames.len() {
        return Err(Error::SizeMismatch(format!("{} predicted frames vs {} ground-truth frames", pred_frames.len(), gt_frames.len())));
    }
    if pred_frames.is_empty() {
        return Err(Error::InvalidInput("auc of an empty frame set".into()));
    }
    let mut errors = Vec::new();
    for (p, g) in pred_frames.iter().zip(gt_frames) {
        let aligned = procrustes_aligned(p, g)?;
        errors.extend(per_joint_errors(&aligned, g).into_iter().map(|e| e * M_TO_MM));
    }
    Ok(auc_from_errors(&errors, cfg))
}

/// Camera-frame MPJPE without alignment.
pub fn c_mpjpe(pred_cam: &[Vec3], gt_cam: &[Vec3]) -> Result<f64> {
    mpjpe(pred_cam, gt_cam)
}

/// World-frame window alignment options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Frames at the start of a window used by the W-MPJPE fit.
    pub align_frames: usize,
    /// Fit a similarity instead of a rigid transform.
    pub with_scale: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { align_frames: 1, with_scale: false }
    }
}

fn split_windows<'a>(traj: &'a [Vec<Vec3>], window: usize) -> Result<impl Iterator<Item = &'a [Vec<Vec3>]>> {
    if window == 0 {
        return Err(Error::InvalidInput("window length must be positive".into()));
    }
    if window > traj.len() {
        return Err(Error::InvalidInput(format!("window of {window} frames exceeds sequence of {}", traj.len())));
    }
    Ok(traj.chunks_exact(window))
}

fn check_traj(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::SizeMismatch(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() || p.is_empty() {
            return Err(Error::SizeMismatch(format!("frame {i}: {} vs {} joints", p.len(), g.len())));
        }
    }
    Ok(())
}

fn window_error(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], fit_frames: usize, with_scale: bool) -> Result<f64> {
    let fit_p: Vec<Vec3> = pred[..fit_frames].iter().flatten().copied().collect();
    let fit_g: Vec<Vec3> = gt[..fit_frames].iter().flatten().copied().collect();
    let t = umeyama_align(&fit_p, &fit_g, with_scale)?;
    let all_p: Vec<Vec3> = pred.iter().flatten().map(|p| t.apply(p)).collect();
    let all_g: Vec<Vec3> = gt.iter().flatten().copied().collect();
    mpjpe(&all_p, &all_g)
}

/// Per-window W-MPJPE values (mm), windows non-overlapping; a trailing
/// partial window is dropped.
pub fn w_mpjpe_windows(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], window: usize, cfg: &WindowConfig) -> Result<Vec<f64>> {
    check_traj(pred, gt)?;
    let fit = cfg.align_frames.clamp(1, window);
    split_windows(pred, window)?
        .zip(split_windows(gt, window)?)
        .map(|(p, g)| window_error(p, g, fit, cfg.with_scale))
        .collect()
}

/// Per-window WA-MPJPE values (mm).
pub fn wa_mpjpe_windows(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], window: usize, cfg: &WindowConfig) -> Result<Vec<f64>> {
    check_traj(pred, gt)?;
    split_windows(pred, window)?
        .zip(split_windows(gt, window)?)
        .map(|(p, g)| window_error(p, g, p.len(), cfg.with_scale))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn w_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], window: usize, cfg: &WindowConfig) -> Result<f64> {
    Ok(mean(&w_mpjpe_windows(pred, gt, window, cfg)?))
}

pub fn wa_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], window: usize, cfg: &WindowConfig) -> Result<f64> {
    Ok(mean(&wa_mpjpe_windows(pred, gt, window, cfg)?))
}

// ---------------------------------------------------------------------------
// dataset-level evaluation

/// One hand in one frame, joints in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct HandFrameEval {
    pub occlusion_ratio: f64,
    pub pred_cam: Vec<Vec3>,
    pub gt_cam: Vec<Vec3>,
    pub pred_world: Vec<Vec3>,
    pub gt_world: Vec<Vec3>,
}

/// Per-frame entries of one hand identity; `None` where the hand was not
/// predicted in that frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HandTrack {
    pub frames: Vec<Option<HandFrameEval>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEval {
    pub id: String,
    pub tracks: Vec<HandTrack>,
}

/// Occlusion buckets, reported in the order all, [0.5, 0.75), [0.75, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionBucket {
    All,
    Occ50To75,
    Occ75To100,
}

impl OcclusionBucket {
    pub const ALL: [OcclusionBucket; 3] = [OcclusionBucket::All, OcclusionBucket::Occ50To75, OcclusionBucket::Occ75To100];

    pub fn contains(self, ratio: f64) -> bool {
        match self {
            OcclusionBucket::All => true,
            OcclusionBucket::Occ50To75 => (0.5..0.75).contains(&ratio),
            OcclusionBucket::Occ75To100 => (0.75..=1.0).contains(&ratio),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            OcclusionBucket::All => "All",
            OcclusionBucket::Occ50To75 => "50%-75%",
            OcclusionBucket::Occ75To100 => "75%-100%",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub auc: AucConfig,
    pub window_lengths: Vec<usize>,
    pub window: WindowConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { auc: AucConfig::default(), window_lengths: vec![30, 100], window: WindowConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: OcclusionBucket,
    /// Number of evaluated hand-frames.
    pub count: usize,
    pub pa_mpjpe_mm: Option<f64>,
    /// Fraction in `[0, 1]`.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub length: usize,
    /// Number of evaluated windows.
    pub count: usize,
    pub w_mpjpe_mm: Option<f64>,
    pub wa_mpjpe_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub local: Vec<BucketMetrics>,
    pub c_mpjpe_mm: Option<f64>,
    pub c_count: usize,
    pub windows: Vec<WindowMetrics>,
}

impl MetricsReport {
    pub fn bucket(&self, b: OcclusionBucket) -> &BucketMetrics {
        self.local.iter().find(|m| m.bucket == b).expect("every bucket is reported")
    }

    pub fn window(&self, length: usize) -> Option<&WindowMetrics> {
        self.windows.iter().find(|w| w.length == length)
    }
}

/// Computes every metric over a corpus. Windows run over each hand track
/// separately; a window is evaluated only if the hand was predicted in all
/// of its frames, and tracks shorter than the window contribute nothing.
/// Aggregation order is fixed by the input order.
pub fn evaluate(seqs: &[SequenceEval], cfg: &MetricsConfig) -> Result<MetricsReport> {
    let mut local = Vec::new();
    for bucket in OcclusionBucket::ALL {
        let mut pa = Vec::new();
        let mut errors = Vec::new();
        for f in seqs.iter().flat_map(|s| &s.tracks).flat_map(|t| t.frames.iter().flatten()) {
            if !bucket.contains(f.occlusion_ratio) {
                continue;
            }
            let aligned = procrustes_aligned(&f.pred_cam, &f.gt_cam)?;
            let e = per_joint_errors(&aligned, &f.gt_cam);
            pa.push(mean(&e) * M_TO_MM);
            errors.extend(e.into_iter().map(|x| x * M_TO_MM));
        }
        local.push(BucketMetrics {
            bucket,
            count: pa.len(),
            pa_mpjpe_mm: (!pa.is_empty()).then(|| mean(&pa)),
            auc: (!pa.is_empty()).then(|| auc_from_errors(&errors, &cfg.auc)),
        });
    }

    let mut c = Vec::new();
    for f in seqs.iter().flat_map(|s| &s.tracks).flat_map(|t| t.frames.iter().flatten()) {
        c.push(c_mpjpe(&f.pred_cam, &f.gt_cam)?);
    }

    let mut windows = Vec::new();
    for &len in &cfg.window_lengths {
        let mut w = Vec::new();
        let mut wa = Vec::new();
        for track in seqs.iter().flat_map(|s| &s.tracks) {
            if len == 0 || track.frames.len() < len {
                continue;
            }
            for chunk in track.frames.chunks_exact(len) {
                let Some(frames): Option<Vec<&HandFrameEval>> = chunk.iter().map(|f| f.as_ref()).collect() else {
                    continue;
                };
                let pred: Vec<Vec<Vec3>> = frames.iter().map(|f| f.pred_world.clone()).collect();
                let gt: Vec<Vec<Vec3>> = frames.iter().map(|f| f.gt_world.clone()).collect();
                w.extend(w_mpjpe_windows(&pred, &gt, len, &cfg.window)?);
                wa.extend(wa_mpjpe_windows(&pred, &gt, len, &cfg.window)?);
            }
        }
        windows.push(WindowMetrics {
            length: len,
            count: w.len(),
            w_mpjpe_mm: (!w.is_empty()).then(|| mean(&w)),
            wa_mpjpe_mm: (!wa.is_empty()).then(|| mean(&wa)),
        });
    }

    Ok(MetricsReport { local, c_mpjpe_mm: (!c.is_empty()).then(|| mean(&c)), c_count: c.len(), windows })
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map(|x| format!("{:.2}", x * scale)).unwrap_or_else(|| "-".into())
}

impl fmt::Display for MetricsReport {
    /// Two tables: local metrics by occlusion bucket (AUC as a
    /// percentage) and global metrics by window length.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>10} {:>8} {:>8}", "Bucket", "PA-MPJPE", "AUC", "N")?;
        for b in &self.local {
            writeln!(f, "{:<10} {:>10} {:>8} {:>8}", b.bucket.label(), cell(b.pa_mpjpe_mm, 1.0), cell(b.auc, 100.0), b.count)?;
        }
        writeln!(f)?;
        writeln!(f, "C-MPJPE {} (N={})", cell(self.c_mpjpe_mm, 1.0), self.c_count)?;
        writeln!(f, "{:<8} {:>10} {:>10} {:>8}", "Window", "WA-MPJPE", "W-MPJPE", "N")?;
        for w in &self.windows {
            writeln!(f, "{:<8} {:>10} {:>10} {:>8}", w.length, cell(w.wa_mpjpe_mm, 1.0), cell(w.w_mpjpe_mm, 1.0), w.count)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle_to_matrix, RigidTransform, SimilarityTransform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1))).collect()
    }

    #[test]
    fn mpjpe_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = cloud(&mut rng, 21);
        assert_eq!(mpjpe(&g, &g).unwrap(), 0.0);
        let p: Vec<Vec3> = g.iter().map(|x| x + Vec3::new(0.003, 0.004, 0.0)).collect();
        assert!((mpjpe(&p, &g).unwrap() - 5.0).abs() < 1e-9);
        assert!(mpjpe(&p[..3], &g).is_err());
    }

    #[test]
    fn mpjpe_matches_per_joint_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (p, g) = (cloud(&mut rng, 21), cloud(&mut rng, 21));
            let mut s = 0.0;
            for i in 0..21 {
                let d = p[i] - g[i];
                s += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
            }
            assert!((mpjpe(&p, &g).unwrap() - s / 21.0 * 1000.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pa_removes_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = cloud(&mut rng, 21);
        let t = SimilarityTransform {
            scale: 1.7,
            rotation: axis_angle_to_matrix(&Vec3::new(0.4, -1.0, 2.0)),
            translation: Vec3::new(0.3, 0.2, -1.0),
        };
        assert!(pa_mpjpe(&t.apply_all(&g), &g).unwrap() < 1e-9);
    }

    #[test]
    fn auc_reference_values() {
        let cfg = AucConfig::default();
        assert_eq!(auc_from_errors(&[0.0; 21], &cfg), 1.0);
        assert!((auc_from_errors(&[25.0; 21], &cfg) - 0.5).abs() <= 0.01);
        assert_eq!(auc_from_errors(&[50.5; 21], &cfg), 0.0);
    }

    #[test]
    fn auc_is_monotone_in_error_inflation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..60.0)).collect();
        let cfg = AucConfig::default();
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let s = 1.0 + 0.1 * k as f64;
            let a = auc_from_errors(&e.iter().map(|x| x * s).collect::<Vec<_>>(), &cfg);
            assert!(a <= prev);
            prev = a;
        }
    }

    #[test]
    fn c_mpjpe_depth_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = cloud(&mut rng, 21);
        let p: Vec<Vec3> = g.iter().map(|x| x + Vec3::new(0.0, 0.0, 0.1)).collect();
        assert!((c_mpjpe(&p, &g).unwrap() - 100.0).abs() < 1e-9);
    }

    fn trajectory(rng: &mut ChaCha8Rng, frames: usize) -> Vec<Vec<Vec3>> {
        let base = cloud(rng, 21);
        (0..frames)
            .map(|t| {
                let r = axis_angle_to_matrix(&Vec3::new(0.0, 0.05 * t as f64, 0.02 * t as f64));
                base.iter().map(|p| r * p + Vec3::new(0.01 * t as f64, 0.0, 0.5)).collect()
            })
            .collect()
    }

    #[test]
    fn rigid_window_transform_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = trajectory(&mut rng, 60);
        let t = RigidTransform::new(axis_angle_to_matrix(&Vec3::new(0.3, 0.2, -0.1)), Vec3::new(1.0, -2.0, 0.3));
        let pred: Vec<Vec<Vec3>> = gt.iter().map(|f| t.apply_all(f)).collect();
        let cfg = WindowConfig::default();
        assert!(w_mpjpe(&pred, &gt, 30, &cfg).unwrap() < 1e-9);
        assert!(wa_mpjpe(&pred, &gt, 30, &cfg).unwrap() < 1e-9);
        assert!(w_mpjpe(&pred[..1], &gt[..1], 1, &cfg).unwrap() < 1e-9);
        assert!(wa_mpjpe(&pred[..1], &gt[..1], 1, &cfg).unwrap() < 1e-9);
        assert!(w_mpjpe(&pred[..10], &gt[..10], 30, &cfg).is_err());
    }

    #[test]
    fn linear_drift_hurts_w_more_than_wa() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = trajectory(&mut rng, 30);
        let pred: Vec<Vec<Vec3>> =
            gt.iter().enumerate().map(|(t, f)| f.iter().map(|p| p + Vec3::new(0.004 * t as f64, 0.0, 0.0)).collect()).collect();
        let cfg = WindowConfig::default();
        let w = w_mpjpe(&pred, &gt, 30, &cfg).unwrap();
        let wa = wa_mpjpe(&pred, &gt, 30, &cfg).unwrap();
        assert!(w > wa, "w={w} wa={wa}");
    }

    #[test]
    fn metrics_are_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (p, g) = (cloud(&mut rng, 21), cloud(&mut rng, 21));
        let s = Vec3::new(3.0, -1.0, 2.0);
        let (ps, gs): (Vec<Vec3>, Vec<Vec3>) = (p.iter().map(|x| x + s).collect(), g.iter().map(|x| x + s).collect());
        assert!((mpjpe(&p, &g).unwrap() - mpjpe(&ps, &gs).unwrap()).abs() < 1e-9);
        assert!((pa_mpjpe(&p, &g).unwrap() - pa_mpjpe(&ps, &gs).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn occlusion_buckets() {
        assert!(OcclusionBucket::Occ50To75.contains(0.5));
        assert!(!OcclusionBucket::Occ50To75.contains(0.75));
        assert!(OcclusionBucket::Occ75To100.contains(0.75));
        assert!(OcclusionBucket::Occ75To100.contains(1.0));
        assert!(!OcclusionBucket::Occ75To100.contains(0.3));
    }
}
