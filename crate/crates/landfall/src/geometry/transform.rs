//! Rigid transforms as unit quaternion plus translation.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::GeometryError;

/// Threshold on the absolute quaternion dot product above which slerp falls
/// back to normalised linear interpolation; the arc is too short for a stable
/// sin division beyond it.
const SLERP_LERP_THRESHOLD: f64 = 1.0 - 1e-9;

/// Rigid transform `p_target = R * p_source + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds from raw quaternion components `(w, x, y, z)`; the quaternion
    /// is normalised, so any non-zero input is accepted.
    pub fn from_wxyz_translation(
        w: f64,
        x: f64,
        y: f64,
        z: f64,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        if !q.norm().is_finite() || q.norm() < 1e-12 {
            return Err(GeometryError::NonFinite { what: "quaternion" });
        }
        Ok(Self {
            rotation: UnitQuaternion::new_normalize(q),
            translation,
        })
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Maps a point from the source frame to the target frame.
    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Rotates a direction without translating it.
    pub fn apply_direction(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * dir
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform) -> Transform {
        let q = self.rotation * other.rotation;
        Transform {
            rotation: UnitQuaternion::new_normalize(q.into_inner()),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform {
        let inv_rot = self.rotation.inverse();
        Transform {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation),
        }
    }

    /// Angle in radians of the relative rotation between two transforms.
    pub fn rotation_angle_to(&self, other: &Transform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    /// Euclidean distance between the two translations.
    pub fn translation_distance_to(&self, other: &Transform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl std::ops::Mul for &Transform {
    type Output = Transform;

    fn mul(self, rhs: &Transform) -> Transform {
        self.compose(rhs)
    }
}

/// JSON shape of a [`Transform`]: rotation as `[w, x, y, z]` plus a
/// translation triple.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation_wxyz: [f64; 4],
    translation: [f64; 3],
}

impl Serialize for Transform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        TransformRepr {
            rotation_wxyz: [q.w, q.i, q.j, q.k],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Transform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(deserializer)?;
        let [w, x, y, z] = repr.rotation_wxyz;
        Transform::from_wxyz_translation(w, x, y, z, repr.translation.into())
            .map_err(serde::de::Error::custom)
    }
}

/// Spherical linear interpolation between unit quaternions.
///
/// The second quaternion is negated when the pair's dot product is negative,
/// so interpolation always takes the shorter of the two arcs that the
/// quaternion double cover offers. Nearly parallel inputs interpolate
/// linearly and renormalise instead of dividing by a vanishing sine.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let qa = a.into_inner();
    let mut qb = b.into_inner();
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    if dot > SLERP_LERP_THRESHOLD {
        return UnitQuaternion::new_normalize(qa.lerp(&qb, s));
    }
    let theta = dot.clamp(-1.0, 1.0).acos();
    let sin_theta = theta.sin();
    let wa = ((1.0 - s) * theta).sin() / sin_theta;
    let wb = (s * theta).sin() / sin_theta;
    UnitQuaternion::new_normalize(qa * wa + qb * wb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut impl Rng) -> Transform {
        let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let angle = rng.gen::<f64>() * std::f64::consts::PI;
        let rot = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let t = Vector3::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0);
        Transform::new(rot, t)
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_transform(&mut rng);
            let id = a.compose(&a.inverse());
            assert!(id.rotation_angle_to(&Transform::identity()) < 1e-9);
            assert!(id.translation().norm() < 1e-9);
        }
    }

    #[test]
    fn compose_is_associative_on_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let c = random_transform(&mut rng);
            let p = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let left = a.compose(&b.compose(&c)).apply(&p);
            let right = a.compose(&b).compose(&c).apply(&p);
            assert_relative_eq!(left, right, epsilon = 1e-10);
        }
    }

    #[test]
    fn apply_matches_composition_order() {
        let a = Transform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = Transform::from_rotation(UnitQuaternion::from_scaled_axis(
            Vector3::z() * std::f64::consts::FRAC_PI_2,
        ));
        let p = Vector3::new(1.0, 0.0, 0.0);
        let ab = a.compose(&b).apply(&p);
        assert_relative_eq!(ab, a.apply(&b.apply(&p)), epsilon = 1e-12);
        assert_relative_eq!(ab, Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = UnitQuaternion::identity();
        let b = UnitQuaternion::from_scaled_axis(Vector3::x() * 1.0);
        assert!(slerp(&a, &b, 0.0).angle_to(&a) < 1e-12);
        assert!(slerp(&a, &b, 1.0).angle_to(&b) < 1e-12);
        let mid = slerp(&a, &b, 0.5);
        assert_relative_eq!(mid.angle_to(&a), 0.5, epsilon = 1e-12);
        assert_relative_eq!(mid.angle_to(&b), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn slerp_takes_shorter_arc_across_double_cover() {
        let a = UnitQuaternion::from_scaled_axis(Vector3::z() * 0.1);
        // Same rotation as `b` but with all quaternion components negated.
        let b = UnitQuaternion::from_scaled_axis(Vector3::z() * 0.3);
        let b_neg = UnitQuaternion::new_unchecked(-b.into_inner());
        let mid = slerp(&a, &b_neg, 0.5);
        let expected = UnitQuaternion::from_scaled_axis(Vector3::z() * 0.2);
        assert!(mid.angle_to(&expected) < 1e-12);
    }

    #[test]
    fn slerp_near_parallel_falls_back_to_lerp() {
        let a = UnitQuaternion::from_scaled_axis(Vector3::y() * 1e-12);
        let b = UnitQuaternion::from_scaled_axis(Vector3::y() * 2e-12);
        for s in [0.0, 0.25, 0.5, 1.0] {
            let q = slerp(&a, &b, s);
            assert!((q.into_inner().norm() - 1.0).abs() < 1e-15);
        }
    }
}
