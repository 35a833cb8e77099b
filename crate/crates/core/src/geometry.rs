//! Small geometric helpers shared by every module.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Root mean square of per-point vector norms.
pub fn rms_norm(vectors: &[Vec3]) -> f64 {
    if vectors.is_empty() {
        return 0.0;
    }
    (vectors.iter().map(|v| v.norm_squared()).sum::<f64>() / vectors.len() as f64).sqrt()
}

/// Plain RMSD between paired coordinates, no superposition.
pub fn rmsd(a: &[Vec3], b: &[Vec3]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let ss: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    (ss / a.len() as f64).sqrt()
}

pub fn flatten(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn unflatten(flat: &[f64]) -> Vec<Vec3> {
    debug_assert_eq!(flat.len() % 3, 0);
    flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// Rotation matrix from an axis-angle vector (radians).
pub fn rotation_from_vector(v: &Vec3) -> Matrix3<f64> {
    Rotation3::new(*v).into_inner()
}

/// Deterministic quasi-uniform rotations on SO(3) (super-Fibonacci spirals).
///
/// The first element is always the identity.
pub fn quasi_uniform_rotations(n: usize) -> Vec<Matrix3<f64>> {
    let phi = std::f64::consts::SQRT_2;
    let psi = 1.533_751_168_755_204_3_f64;
    let mut out = Vec::with_capacity(n.max(1));
    out.push(Matrix3::identity());
    for i in 0..n.saturating_sub(1) {
        let s = i as f64 + 0.5;
        let r = (s / n as f64).sqrt();
        let big_r = (1.0 - s / n as f64).sqrt();
        let alpha = 2.0 * std::f64::consts::PI * s / phi;
        let beta = 2.0 * std::f64::consts::PI * s / psi;
        let q = nalgebra::Quaternion::new(big_r * beta.cos(), r * alpha.sin(), r * alpha.cos(), big_r * beta.sin());
        out.push(UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner());
    }
    out
}

/// Angle (radians) of the rotation taking `a` to `b`.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}
