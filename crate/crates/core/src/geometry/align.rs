use nalgebra::{Matrix3, SymmetricEigen};

use super::{SimilarityTransform, Vec3};
use crate::{Error, Result};

/// Closed-form least-squares alignment of `source` onto `target`
/// (Umeyama): minimises `Σ ‖s·R·xᵢ + t − yᵢ‖²` over rotations (no
/// reflections), translations and, when `with_scale`, positive scales.
pub fn umeyama_align(source: &[Vec3], target: &[Vec3], with_scale: bool) -> Result<SimilarityTransform> {
    let n = source.len();
    if n != target.len() {
        return Err(Error::SizeMismatch(format!("source has {n} points, target has {}", target.len())));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!("alignment needs at least 3 points, got {n}")));
    }
    if source.iter().chain(target).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput("non-finite point in alignment input".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mu_x = source.iter().sum::<Vec3>() * inv_n;
    let mu_y = target.iter().sum::<Vec3>() * inv_n;

    let mut cov = Matrix3::zeros();
    let mut cov_x = Matrix3::zeros();
    let mut var_y = 0.0;
    for (x, y) in source.iter().zip(target) {
        let dx = x - mu_x;
        let dy = y - mu_y;
        cov += dy * dx.transpose();
        cov_x += dx * dx.transpose();
        var_y += dy.norm_squared();
    }
    cov *= inv_n;
    cov_x *= inv_n;
    let var_x = cov_x.trace();

    // rank(source) >= 2, otherwise the rotation about the line is free
    let mut ev: Vec<f64> = SymmetricEigen::new(cov_x).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("source points are coincident or collinear".into()));
    }
    if !(var_y > 0.0) {
        return Err(Error::Degenerate("target points are all coincident".into()));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(Error::Degenerate("alignment produced a non-positive scale".into()));
    }
    let translation = mu_y - rotation * mu_x * scale;
    Ok(SimilarityTransform { scale, rotation, translation })
}

/// `Σ ‖T(xᵢ) − yᵢ‖²`.
pub fn alignment_residual(t: &SimilarityTransform, source: &[Vec3], target: &[Vec3]) -> f64 {
    source.iter().zip(target).map(|(x, y)| (t.apply(x) - y).norm_squared()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle_to_matrix, Mat3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn identity_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cloud(&mut rng, 21);
        let t = umeyama_align(&p, &p, true).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!((t.rotation - Mat3::identity()).abs().max() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
        assert!(alignment_residual(&t, &p, &p) < 1e-24);
    }

    #[test]
    fn recovers_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = cloud(&mut rng, 10);
            let truth = SimilarityTransform {
                scale: rng.gen_range(0.2..5.0),
                rotation: axis_angle_to_matrix(&Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))),
                translation: Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
            };
            let q = truth.apply_all(&p);
            let est = umeyama_align(&p, &q, true).unwrap();
            assert!((est.scale - truth.scale).abs() < 1e-9);
            assert!((est.rotation - truth.rotation).abs().max() < 1e-9);
            assert!((est.translation - truth.translation).abs().max() < 1e-9);
            assert!(alignment_residual(&est, &p, &q) < 1e-12);
        }
    }

    #[test]
    fn reflection_is_not_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = cloud(&mut rng, 12);
        let q: Vec<Vec3> = p.iter().map(|x| Vec3::new(-x.x, x.y, x.z)).collect();
        let est = umeyama_align(&p, &q, true).unwrap();
        assert!((est.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!(alignment_residual(&est, &p, &q) > 1e-3);
    }

    #[test]
    fn rigid_mode_keeps_unit_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = cloud(&mut rng, 8);
        let q: Vec<Vec3> = p.iter().map(|x| x * 2.0).collect();
        assert_eq!(umeyama_align(&p, &q, false).unwrap().scale, 1.0);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let p = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::x() * 3.0];
        assert!(matches!(umeyama_align(&p, &p, true), Err(Error::Degenerate(_))));
        let two = vec![Vec3::zeros(), Vec3::x()];
        assert!(matches!(umeyama_align(&two, &two, true), Err(Error::Degenerate(_))));
        let tri = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(umeyama_align(&tri, &tri[..2], true), Err(Error::SizeMismatch(_))));
    }

    #[test]
    fn residual_is_a_minimum_under_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = cloud(&mut rng, 15);
        let q: Vec<Vec3> = cloud(&mut rng, 15).iter().zip(&p).map(|(n, x)| x * 1.3 + n * 0.1).collect();
        let est = umeyama_align(&p, &q, true).unwrap();
        let base = alignment_residual(&est, &p, &q);
        for _ in 0..1000 {
            let d = 1e-3;
            let pert = SimilarityTransform {
                scale: est.scale * (1.0 + rng.gen_range(-d..d)),
                rotation: axis_angle_to_matrix(&Vec3::new(rng.gen_range(-d..d), rng.gen_range(-d..d), rng.gen_range(-d..d))) * est.rotation,
                translation: est.translation + Vec3::new(rng.gen_range(-d..d), rng.gen_range(-d..d), rng.gen_range(-d..d)),
            };
            assert!(alignment_residual(&pert, &p, &q) >= base - 1e-12);
        }
    }
}
