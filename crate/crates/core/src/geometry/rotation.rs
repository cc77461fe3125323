use nalgebra::Rotation3;

use super::{Mat3, Vec3};
use crate::{Error, Result};

/// Rodrigues' formula.
pub fn axis_angle_to_matrix(aa: &Vec3) -> Mat3 {
    Rotation3::new(*aa).into_inner()
}

pub fn matrix_to_axis_angle(r: &Mat3) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Geodesic angle between identity and `r`, in radians.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

/// Continuous 6D rotation representation: the first two columns are
/// Gram-Schmidt orthonormalised, the third is their cross product.
pub fn rot6d_to_matrix(x: &[f64; 6]) -> Result<Mat3> {
    let a1 = Vec3::new(x[0], x[1], x[2]);
    let a2 = Vec3::new(x[3], x[4], x[5]);
    let n1 = a1.norm();
    if !(n1 > 1e-12) || !n1.is_finite() {
        return Err(Error::Degenerate("6D rotation: first column has zero norm".into()));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if !(n2 > 1e-12) || !n2.is_finite() {
        return Err(Error::Degenerate("6D rotation: columns are parallel".into()));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

pub fn matrix_to_rot6d(r: &Mat3) -> [f64; 6] {
    [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rot6d_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let aa = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let r = axis_angle_to_matrix(&aa);
            let back = rot6d_to_matrix(&matrix_to_rot6d(&r)).unwrap();
            assert!((back - r).abs().max() < 1e-12);
        }
    }

    #[test]
    fn rot6d_is_orthonormal_for_arbitrary_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let x: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
            let r = rot6d_to_matrix(&x).unwrap();
            assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rot6d_rejects_degenerate() {
        assert!(rot6d_to_matrix(&[0.0; 6]).is_err());
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn axis_angle_round_trip_and_angle() {
        let aa = Vec3::new(0.3, -0.2, 0.9);
        let r = axis_angle_to_matrix(&aa);
        assert!((matrix_to_axis_angle(&r) - aa).norm() < 1e-12);
        assert!((rotation_angle(&r) - aa.norm()).abs() < 1e-12);
    }
}
