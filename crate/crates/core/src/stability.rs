//! Two-finger antipodal grasp stability.
//!
//! `f = phi1 + phi2` where `phi1 = angle(n1, c2 - c1)` and
//! `phi2 = angle(n2, c1 - c2)`. The normals are pressing normals: the direction
//! each fingertip pushes, i.e. the inward object normal at the contact. With
//! that convention `f = 0` is exactly the antipodal condition.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Angles closer than this to 0 or pi have no usable gradient direction.
pub const TOL_ANGLE: f64 = 1e-6;
/// Vectors shorter than this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;
/// Minimum contact separation accepted by [`ContactPair::new`].
pub const MIN_SEPARATION: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("zero-length vector in angle computation")]
    ZeroVector,
    #[error("angle {angle:e} rad is within the singular band of 0 or pi")]
    AngleSingular { angle: f64 },
    #[error("contact normal is not unit length (norm {norm})")]
    InvalidNormal { norm: f64 },
    #[error("contact points coincide (separation {separation:e})")]
    CoincidentContacts { separation: f64 },
}

/// Which stability angle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Angle {
    Phi1,
    Phi2,
}

/// Which contact point a gradient is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contact {
    C1,
    C2,
}

/// Tangent-space descent rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Projected gradient of the total `f`.
    Pgd,
    /// Cross-finger: each contact descends the angle at the other contact.
    Cfgd,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pgd => "pgd",
            Method::Cfgd => "cfgd",
        }
    }

    /// Strict direction; singular angles are errors.
    pub fn direction(
        &self,
        cp: &ContactPair,
    ) -> Result<(Vector3<f64>, Vector3<f64>), StabilityError> {
        match self {
            Method::Pgd => pgd_direction(cp),
            Method::Cfgd => cfgd_direction(cp),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pgd" => Ok(Method::Pgd),
            "cfgd" => Ok(Method::Cfgd),
            other => Err(format!("unknown method '{other}', expected pgd or cfgd")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPair {
    c1: Vector3<f64>,
    c2: Vector3<f64>,
    n1: Vector3<f64>,
    n2: Vector3<f64>,
}

impl ContactPair {
    /// Normals must be unit length to within 1e-6; they are renormalized.
    pub fn new(
        c1: Vector3<f64>,
        c2: Vector3<f64>,
        n1: Vector3<f64>,
        n2: Vector3<f64>,
    ) -> Result<Self, StabilityError> {
        for n in [&n1, &n2] {
            let norm = n.norm();
            if !((norm - 1.0).abs() <= 1e-6) {
                return Err(StabilityError::InvalidNormal { norm });
            }
        }
        let separation = (c2 - c1).norm();
        if !(separation > MIN_SEPARATION) {
            return Err(StabilityError::CoincidentContacts { separation });
        }
        Ok(Self {
            c1,
            c2,
            n1: n1.normalize(),
            n2: n2.normalize(),
        })
    }

    pub fn c1(&self) -> &Vector3<f64> {
        &self.c1
    }
    pub fn c2(&self) -> &Vector3<f64> {
        &self.c2
    }
    pub fn n1(&self) -> &Vector3<f64> {
        &self.n1
    }
    pub fn n2(&self) -> &Vector3<f64> {
        &self.n2
    }

    pub fn separation(&self) -> f64 {
        (self.c2 - self.c1).norm()
    }

    pub fn contact(&self, which: Contact) -> &Vector3<f64> {
        match which {
            Contact::C1 => &self.c1,
            Contact::C2 => &self.c2,
        }
    }

    pub fn normal(&self, which: Contact) -> &Vector3<f64> {
        match which {
            Contact::C1 => &self.n1,
            Contact::C2 => &self.n2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityEval {
    pub phi1: f64,
    pub phi2: f64,
    pub f: f64,
    pub mean_angle_deg: f64,
}

impl StabilityEval {
    pub fn from_angles(phi1: f64, phi2: f64) -> Self {
        Self {
            phi1,
            phi2,
            f: phi1 + phi2,
            mean_angle_deg: 0.5 * (phi1 + phi2).to_degrees(),
        }
    }

    /// Both angles within `tol` of a right angle: the stalled configuration
    /// in which each normal is perpendicular to the contact line.
    pub fn is_right_angle(&self, tol: f64) -> bool {
        (self.phi1 - PI / 2.0).abs() < tol && (self.phi2 - PI / 2.0).abs() < tol
    }
}

pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64, StabilityError> {
    let na = a.norm();
    let nb = b.norm();
    if !(na > MIN_NORM && nb > MIN_NORM) {
        return Err(StabilityError::ZeroVector);
    }
    // Same value as acos(a.b / |a||b|), without acos's loss of precision near 0 and pi.
    Ok(a.cross(b).norm().atan2(a.dot(b)))
}

pub fn evaluate(cp: &ContactPair) -> Result<StabilityEval, StabilityError> {
    let phi1 = angle_between(&cp.n1, &(cp.c2 - cp.c1))?;
    let phi2 = angle_between(&cp.n2, &(cp.c1 - cp.c2))?;
    Ok(StabilityEval::from_angles(phi1, phi2))
}

/// `(I - n n^T) v`.
pub fn tangent_project(n: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    v - n * n.dot(v)
}

/// Gradient of `angle(n, d)` with respect to `d`, for unit `n`.
fn angle_gradient_wrt_chord(
    n: &Vector3<f64>,
    d: &Vector3<f64>,
) -> Result<Vector3<f64>, StabilityError> {
    let len = d.norm();
    if !(len > MIN_NORM) {
        return Err(StabilityError::ZeroVector);
    }
    let dir = d / len;
    let cos = n.dot(&dir).clamp(-1.0, 1.0);
    let angle = n.cross(&dir).norm().atan2(cos);
    if !(TOL_ANGLE..=PI - TOL_ANGLE).contains(&angle) {
        return Err(StabilityError::AngleSingular { angle });
    }
    // d(cos)/dd = (n - (n.dir) dir) / |d|, and |n - (n.dir) dir| = sin(angle).
    let perp = n - dir * cos;
    let sin = perp.norm();
    Ok(-perp / (len * sin))
}

/// Gradient of one stability angle with respect to one contact point, with the
/// normals held fixed.
pub fn grad_phi(
    cp: &ContactPair,
    angle: Angle,
    wrt: Contact,
) -> Result<Vector3<f64>, StabilityError> {
    let (g, own) = match angle {
        // phi1 depends on c2 - c1.
        Angle::Phi1 => (angle_gradient_wrt_chord(&cp.n1, &(cp.c2 - cp.c1))?, Contact::C2),
        // phi2 depends on c1 - c2.
        Angle::Phi2 => (angle_gradient_wrt_chord(&cp.n2, &(cp.c1 - cp.c2))?, Contact::C1),
    };
    Ok(if wrt == own { g } else { -g })
}

/// `d_i = -(I - n_i n_i^T) grad_{c_i} (phi1 + phi2)`, unnormalized.
pub fn pgd_direction(cp: &ContactPair) -> Result<(Vector3<f64>, Vector3<f64>), StabilityError> {
    let g1 = grad_phi(cp, Angle::Phi1, Contact::C1)? + grad_phi(cp, Angle::Phi2, Contact::C1)?;
    let g2 = grad_phi(cp, Angle::Phi1, Contact::C2)? + grad_phi(cp, Angle::Phi2, Contact::C2)?;
    Ok((-tangent_project(&cp.n1, &g1), -tangent_project(&cp.n2, &g2)))
}

/// `d1 = -(I - n1 n1^T) grad_{c1} phi2`, `d2 = -(I - n2 n2^T) grad_{c2} phi1`.
pub fn cfgd_direction(cp: &ContactPair) -> Result<(Vector3<f64>, Vector3<f64>), StabilityError> {
    let g1 = grad_phi(cp, Angle::Phi2, Contact::C1)?;
    let g2 = grad_phi(cp, Angle::Phi1, Contact::C2)?;
    Ok((-tangent_project(&cp.n1, &g1), -tangent_project(&cp.n2, &g2)))
}

fn grad_or_zero(cp: &ContactPair, angle: Angle, wrt: Contact) -> Vector3<f64> {
    grad_phi(cp, angle, wrt).unwrap_or_else(|_| Vector3::zeros())
}

/// Direction used by the descent loops: like [`Method::direction`] but an
/// angle sitting at 0 or pi contributes nothing instead of failing.
pub fn descent_direction(cp: &ContactPair, method: Method) -> (Vector3<f64>, Vector3<f64>) {
    let (g1, g2) = match method {
        Method::Pgd => (
            grad_or_zero(cp, Angle::Phi1, Contact::C1) + grad_or_zero(cp, Angle::Phi2, Contact::C1),
            grad_or_zero(cp, Angle::Phi1, Contact::C2) + grad_or_zero(cp, Angle::Phi2, Contact::C2),
        ),
        Method::Cfgd => (
            grad_or_zero(cp, Angle::Phi2, Contact::C1),
            grad_or_zero(cp, Angle::Phi1, Contact::C2),
        ),
    };
    (-tangent_project(&cp.n1, &g1), -tangent_project(&cp.n2, &g2))
}
