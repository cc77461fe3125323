//! PA-MPJPE against an independent closed-form alignment (Horn's unit
//! quaternion method), plus metric inequalities as properties.

use hand3r_core::geometry::{axis_angle_to_matrix, umeyama_align, Mat3, SimilarityTransform, Vec3};
use hand3r_core::metrics::{mpjpe, pa_mpjpe, wa_mpjpe_windows, WindowConfig};
use nalgebra::{Matrix4, SymmetricEigen, UnitQuaternion, Quaternion};
use proptest::prelude::*;

/// Horn (1987): rotation = eigenvector of the largest eigenvalue of the
/// 4×4 matrix built from the cross-covariance; scale from the ratio of
/// projected to source spreads.
fn horn_similarity(src: &[Vec3], dst: &[Vec3]) -> SimilarityTransform {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut m = Mat3::zeros();
    for (a, b) in src.iter().zip(dst) {
        m += (a - cs) * (b - cd).transpose();
    }
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    #[rustfmt::skip]
    let nmat = Matrix4::new(
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(nmat);
    let (imax, _) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let q = eig.eigenvectors.column(imax);
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])).to_rotation_matrix().into_inner();
    let num: f64 = src.iter().zip(dst).map(|(a, b)| (b - cd).dot(&(rot * (a - cs)))).sum();
    let den: f64 = src.iter().map(|a| (a - cs).norm_squared()).sum();
    let scale = num / den;
    SimilarityTransform { scale, rotation: rot, translation: cd - rot * cs * scale }
}

fn pa_oracle(pred: &[Vec3], gt: &[Vec3]) -> f64 {
    let t = horn_similarity(pred, gt);
    pred.iter().zip(gt).map(|(p, g)| (t.apply(p) - g).norm()).sum::<f64>() / pred.len() as f64 * 1000.0
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (-0.1f64..0.1, -0.1f64..0.1, -0.1f64..0.1).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// Fixed non-planar cloud added to generated points so shrunk inputs never collapse.
fn spread(i: usize) -> Vec3 {
    let t = i as f64;
    Vec3::new((t * 1.3).sin(), (t * 0.7).cos(), (t * 0.4).sin() * 0.5) * 0.08
}

fn joints() -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(vec3(), 21)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pa_mpjpe_matches_horn_oracle(gt in joints(), noise in joints()) {
        let pred: Vec<Vec3> = gt.iter().zip(&noise).map(|(g, n)| g * 1.2 + n * 0.2 + Vec3::new(0.3, 0.0, 0.5)).collect();
        let a = pa_mpjpe(&pred, &gt).unwrap();
        let b = pa_oracle(&pred, &gt);
        prop_assert!((a - b).abs() < 1e-9, "umeyama {a} vs horn {b}");
    }

    #[test]
    fn pa_never_exceeds_mpjpe(gt in joints(), pred in joints()) {
        prop_assert!(pa_mpjpe(&pred, &gt).unwrap() <= mpjpe(&pred, &gt).unwrap() + 1e-9);
    }

    #[test]
    fn pa_is_similarity_invariant(gt in joints(), pred in joints(), aa in vec3(), t in vec3(), s in 0.3f64..3.0) {
        let sim = SimilarityTransform { scale: s, rotation: axis_angle_to_matrix(&(aa * 20.0)), translation: t * 10.0 };
        let a = pa_mpjpe(&sim.apply_all(&pred), &gt).unwrap();
        let b = pa_mpjpe(&pred, &gt).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    // Whole-window fitting minimises squared error, so the inequality holds
    // for the summed squared residual; mean L2 can exceed the W value by a hair.
    #[test]
    fn window_fit_sse_never_exceeds_first_frame_fit(frames in prop::collection::vec(joints(), 3), noise in prop::collection::vec(joints(), 3)) {
        let gt: Vec<Vec3> = frames.iter().flatten().enumerate().map(|(i, p)| p + spread(i)).collect();
        let pred: Vec<Vec3> = gt.iter().zip(noise.iter().flatten()).map(|(a, b)| a + b * 0.3).collect();
        let whole = umeyama_align(&pred, &gt, false).unwrap();
        let first = umeyama_align(&pred[..21], &gt[..21], false).unwrap();
        let sse = |t: &SimilarityTransform| pred.iter().zip(&gt).map(|(p, g)| (t.apply(p) - g).norm_squared()).sum::<f64>();
        prop_assert!(sse(&whole) <= sse(&first) + 1e-12);

        let split = |v: &[Vec3]| v.chunks(21).map(|c| c.to_vec()).collect::<Vec<_>>();
        let wa = wa_mpjpe_windows(&split(&pred), &split(&gt), 3, &WindowConfig::default()).unwrap();
        let expect = pred.iter().zip(&gt).map(|(p, g)| (whole.apply(p) - g).norm()).sum::<f64>() / pred.len() as f64 * 1000.0;
        prop_assert!((wa[0] - expect).abs() < 1e-9);
    }
}

#[test]
fn umeyama_and_horn_agree_on_rotation() {
    let src: Vec<Vec3> = (0..10).map(|i| Vec3::new((i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.1)).collect();
    let truth = axis_angle_to_matrix(&Vec3::new(0.2, 1.1, -0.4));
    let dst: Vec<Vec3> = src.iter().map(|p| truth * p * 0.8).collect();
    let a = umeyama_align(&src, &dst, true).unwrap();
    let b = horn_similarity(&src, &dst);
    assert!((a.rotation - b.rotation).abs().max() < 1e-9);
    assert!((a.scale - b.scale).abs() < 1e-9);
}
