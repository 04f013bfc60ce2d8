//! Rigid transforms in the plane and in space.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// A planar rigid transform: translation `(x, y)` followed by heading `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Se2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Se2 {
    pub const IDENTITY: Se2 = Se2 {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Se2 {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    /// `self ⊕ other`: applies `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Se2) -> Se2 {
        let (s, c) = self.theta.sin_cos();
        Se2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Se2 {
        let (s, c) = self.theta.sin_cos();
        Se2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Relative transform `self⁻¹ ⊕ other`.
    pub fn between(&self, other: &Se2) -> Se2 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// A rigid transform in space. The rotation is expected to be orthonormal with
/// determinant +1; [`Se3::validate`] checks this.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Se3 {
    fn default() -> Self {
        Se3::identity()
    }
}

impl Se3 {
    pub fn identity() -> Self {
        Se3 {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Lifts a planar transform to a yaw-only transform with `z = 0`.
    pub fn from_se2(p: &Se2) -> Self {
        let (s, c) = p.theta.sin_cos();
        Se3 {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::new(p.x, p.y, 0.0),
        }
    }

    /// Builds a transform from a row-major 3×4 `[R | t]` matrix.
    pub fn from_rows_3x4(m: &[f64; 12]) -> Self {
        Se3 {
            rotation: Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vector3::new(m[3], m[7], m[11]),
        }
    }

    pub fn to_rows_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::Contract("non-finite rigid transform".into()));
        }
        let err = self.orthonormality_error();
        if err > tol {
            return Err(Error::Contract(format!(
                "rotation is not orthonormal (|RᵀR − I| = {err:.3e})"
            )));
        }
        if self.rotation.determinant() <= 0.0 {
            return Err(Error::Contract("rotation has negative determinant".into()));
        }
        Ok(())
    }

    /// Projects the rotation back onto SO(3) via SVD, keeping the translation.
    pub fn orthonormalized(&self) -> Se3 {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Se3 {
            rotation: r,
            translation: self.translation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn compose_inverse_is_identity(x in -50.0..50.0f64, y in -50.0..50.0f64, t in -4.0..4.0f64) {
            let p = Se2::new(x, y, t);
            let id = p.compose(&p.inverse());
            prop_assert!(id.x.abs() < 1e-9 && id.y.abs() < 1e-9 && wrap_angle(id.theta).abs() < 1e-12);
        }

        #[test]
        fn between_recovers_delta(x in -50.0..50.0f64, y in -50.0..50.0f64, t in -4.0..4.0f64,
                                  dx in -5.0..5.0f64, dy in -5.0..5.0f64, dt in -1.0..1.0f64) {
            let a = Se2::new(x, y, t);
            let d = Se2::new(dx, dy, dt);
            let r = a.between(&a.compose(&d));
            prop_assert!((r.x - d.x).abs() < 1e-9 && (r.y - d.y).abs() < 1e-9);
            prop_assert!(wrap_angle(r.theta - d.theta).abs() < 1e-12);
        }
    }

    #[test]
    fn se3_roundtrip_rows() {
        let p = Se3::from_se2(&Se2::new(1.0, 2.0, 0.4));
        assert_eq!(Se3::from_rows_3x4(&p.to_rows_3x4()), p);
        assert!(p.validate(1e-9).is_ok());
    }
}
