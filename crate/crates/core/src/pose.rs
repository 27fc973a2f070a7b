//! Rigid transforms in the JSON formats used by object and robot descriptions.

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Translation plus unit quaternion, quaternion stored in `[x, y, z, w]` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRepr {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

impl Default for PoseRepr {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: identity_quat(),
        }
    }
}

impl PoseRepr {
    /// Converts to an isometry. The quaternion is renormalized; `None` if it is
    /// (close to) zero or not finite.
    pub fn to_isometry(&self) -> Option<Isometry3<f64>> {
        let [x, y, z, w] = self.rotation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 || self.translation.iter().any(|t| !t.is_finite()) {
            return None;
        }
        Some(Isometry3::from_parts(
            Translation3::from(Vector3::from(self.translation)),
            UnitQuaternion::from_quaternion(q),
        ))
    }
}

impl From<&Isometry3<f64>> for PoseRepr {
    fn from(iso: &Isometry3<f64>) -> Self {
        let q = iso.rotation.quaternion();
        Self {
            translation: iso.translation.vector.into(),
            rotation: [q.i, q.j, q.k, q.w],
        }
    }
}

/// Joint origin in URDF style: translation and fixed-axis roll/pitch/yaw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OriginRepr {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl OriginRepr {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [r, p, y] = self.rpy;
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.xyz)),
            UnitQuaternion::from_euler_angles(r, p, y),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternion_order_is_xyzw() {
        let half = std::f64::consts::FRAC_PI_4;
        let pose = PoseRepr {
            translation: [1.0, 2.0, 3.0],
            rotation: [0.0, 0.0, half.sin(), half.cos()],
        };
        let iso = pose.to_isometry().unwrap();
        let v = iso.rotation * Vector3::x();
        assert!((v - Vector3::y()).norm() < 1e-12);
        let back = PoseRepr::from(&iso);
        for (a, b) in back.rotation.iter().zip(pose.rotation.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_quaternion_rejected() {
        let pose = PoseRepr {
            translation: [0.0; 3],
            rotation: [0.0; 4],
        };
        assert!(pose.to_isometry().is_none());
    }
}
