//! Implicit-surface object models.
//!
//! Every object is a closed surface `F(p) = 0` in its own frame, placed in the
//! world by a rigid pose. `F < 0` inside, `F > 0` outside. The implicit forms
//! are
//!
//! ```text
//! ellipsoid     (x/a1)^2 + (y/a2)^2 + (z/a3)^2 - 1
//! superquadric  (|x/a1|^(2/e2) + |y/a2|^(2/e2))^(e2/e1) + |z/a3|^(2/e1) - 1
//! torus         (sqrt(x^2 + y^2) - R)^2 + z^2 - r^2
//! box           exact signed distance to the box with half extents h
//! cylinder      exact signed distance to the z-aligned cylinder
//! ```
//!
//! Closest-point projection is closed form for the torus, box and cylinder, a
//! one-dimensional root solve for the ellipsoid and a Lagrangian Newton
//! iteration (with a tangential gradient-flow fallback) for superquadrics.

use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::PoseRepr;

/// Relative boundary tolerance, scaled per shape by [`Surface::boundary_tol`].
pub const SURFACE_TOL: f64 = 1e-8;
pub const MAX_PROJ_ITERS: usize = 100;
/// Gradients shorter than this have no usable direction.
pub const MIN_GRADIENT_NORM: f64 = 1e-9;

const SUPERQUADRIC_EXP_MIN: f64 = 0.1;
const SUPERQUADRIC_EXP_MAX: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("invalid surface parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate normal at {point:?} (gradient norm {norm:e})")]
    DegenerateNormal { point: [f64; 3], norm: f64 },
    #[error("projection did not converge after {iters} iterations (residual {residual:e})")]
    ProjectionDiverged { iters: usize, residual: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Ellipsoid { axes: Vector3<f64> },
    Superquadric { axes: Vector3<f64>, e1: f64, e2: f64 },
    Torus { major: f64, minor: f64 },
    Box { half_extents: Vector3<f64> },
    Cylinder { radius: f64, half_height: f64 },
}

impl Shape {
    pub fn kind(&self) -> &'static str {
        match self {
            Shape::Ellipsoid { .. } => "ellipsoid",
            Shape::Superquadric { .. } => "superquadric",
            Shape::Torus { .. } => "torus",
            Shape::Box { .. } => "box",
            Shape::Cylinder { .. } => "cylinder",
        }
    }

    /// Compact `key=value` listing of the shape parameters.
    pub fn params_string(&self) -> String {
        match self {
            Shape::Ellipsoid { axes } => {
                format!("a1={:.6};a2={:.6};a3={:.6}", axes.x, axes.y, axes.z)
            }
            Shape::Superquadric { axes, e1, e2 } => format!(
                "a1={:.6};a2={:.6};a3={:.6};e1={:.6};e2={:.6}",
                axes.x, axes.y, axes.z, e1, e2
            ),
            Shape::Torus { major, minor } => format!("R={major:.6};r={minor:.6}"),
            Shape::Box { half_extents: h } => format!("hx={:.6};hy={:.6};hz={:.6}", h.x, h.y, h.z),
            Shape::Cylinder {
                radius,
                half_height,
            } => format!("radius={radius:.6};half_height={half_height:.6}"),
        }
    }

    fn validate(&self) -> Result<(), SurfaceError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SurfaceError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        match *self {
            Shape::Ellipsoid { axes } => {
                positive("a1", axes.x)?;
                positive("a2", axes.y)?;
                positive("a3", axes.z)
            }
            Shape::Superquadric { axes, e1, e2 } => {
                positive("a1", axes.x)?;
                positive("a2", axes.y)?;
                positive("a3", axes.z)?;
                for (name, e) in [("e1", e1), ("e2", e2)] {
                    if !(e > SUPERQUADRIC_EXP_MIN && e <= SUPERQUADRIC_EXP_MAX) {
                        return Err(SurfaceError::InvalidParameter(format!(
                            "{name} must lie in (0.1, 2.0], got {e}"
                        )));
                    }
                }
                Ok(())
            }
            Shape::Torus { major, minor } => {
                positive("R", major)?;
                positive("r", minor)?;
                if major <= minor {
                    return Err(SurfaceError::InvalidParameter(format!(
                        "torus requires R > r, got R={major}, r={minor}"
                    )));
                }
                Ok(())
            }
            Shape::Box { half_extents: h } => {
                positive("hx", h.x)?;
                positive("hy", h.y)?;
                positive("hz", h.z)
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                positive("radius", radius)?;
                positive("half_height", half_height)
            }
        }
    }
}

/// A point on an object boundary with its outward unit normal, both in world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub position: Vector3<f64>,
    pub outward_normal: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SurfaceRepr", into = "SurfaceRepr")]
pub struct Surface {
    shape: Shape,
    pose: Isometry3<f64>,
}

impl Surface {
    pub fn new(shape: Shape, pose: Isometry3<f64>) -> Result<Self, SurfaceError> {
        shape.validate()?;
        Ok(Self { shape, pose })
    }

    /// Surface at the world origin.
    pub fn at_origin(shape: Shape) -> Result<Self, SurfaceError> {
        Self::new(shape, Isometry3::identity())
    }

    pub fn ellipsoid(a1: f64, a2: f64, a3: f64) -> Result<Self, SurfaceError> {
        Self::at_origin(Shape::Ellipsoid {
            axes: Vector3::new(a1, a2, a3),
        })
    }

    pub fn sphere(radius: f64) -> Result<Self, SurfaceError> {
        Self::ellipsoid(radius, radius, radius)
    }

    pub fn superquadric(axes: [f64; 3], e1: f64, e2: f64) -> Result<Self, SurfaceError> {
        Self::at_origin(Shape::Superquadric {
            axes: Vector3::from(axes),
            e1,
            e2,
        })
    }

    pub fn torus(major: f64, minor: f64) -> Result<Self, SurfaceError> {
        Self::at_origin(Shape::Torus { major, minor })
    }

    pub fn cuboid(hx: f64, hy: f64, hz: f64) -> Result<Self, SurfaceError> {
        Self::at_origin(Shape::Box {
            half_extents: Vector3::new(hx, hy, hz),
        })
    }

    pub fn cylinder(radius: f64, half_height: f64) -> Result<Self, SurfaceError> {
        Self::at_origin(Shape::Cylinder {
            radius,
            half_height,
        })
    }

    pub fn with_pose(mut self, pose: Isometry3<f64>) -> Self {
        self.pose = pose;
        self
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn pose(&self) -> &Isometry3<f64> {
        &self.pose
    }

    /// Largest linear dimension of the shape.
    pub fn characteristic_size(&self) -> f64 {
        match self.shape {
            Shape::Ellipsoid { axes } | Shape::Superquadric { axes, .. } => axes.max(),
            Shape::Torus { major, minor } => major + minor,
            Shape::Box { half_extents } => half_extents.max(),
            Shape::Cylinder {
                radius,
                half_height,
            } => radius.max(half_height),
        }
    }

    /// Radius of a sphere about the frame origin that contains the object.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Ellipsoid { axes } => axes.max(),
            Shape::Superquadric { axes, .. } => axes.norm(),
            Shape::Torus { major, minor } => major + minor,
            Shape::Box { half_extents } => half_extents.norm(),
            Shape::Cylinder {
                radius,
                half_height,
            } => radius.hypot(half_height),
        }
    }

    /// Absolute tolerance on `|F|` for a point to count as on the boundary.
    ///
    /// Distance-valued forms (box, cylinder) scale with the object size, the
    /// torus form with `r` times the size, dimensionless forms are used as is.
    pub fn boundary_tol(&self) -> f64 {
        let scale = match self.shape {
            Shape::Ellipsoid { .. } | Shape::Superquadric { .. } => 1.0,
            Shape::Torus { minor, .. } => minor * self.characteristic_size(),
            Shape::Box { .. } | Shape::Cylinder { .. } => self.characteristic_size(),
        };
        SURFACE_TOL * scale
    }

    pub fn on_boundary(&self, p: &Vector3<f64>) -> bool {
        self.implicit_value(p).abs() <= self.boundary_tol()
    }

    /// True on box edges/corners and cylinder rims, where two distance terms
    /// are active.
    pub fn on_crease(&self, p: &Vector3<f64>) -> bool {
        let local = self.to_local(p);
        let tol = 1e-12 * self.characteristic_size();
        match self.shape {
            Shape::Box { half_extents } => {
                let d = local.abs() - half_extents;
                d.iter().filter(|dk| dk.abs() <= tol).count() > 1
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let dx = local.x.hypot(local.y) - radius;
                let dz = local.z.abs() - half_height;
                dx.abs() <= tol && dz.abs() <= tol
            }
            _ => false,
        }
    }

    fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse_transform_point(&Point3::from(*p)).coords
    }

    fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.transform_point(&Point3::from(*p)).coords
    }

    pub fn implicit_value(&self, p: &Vector3<f64>) -> f64 {
        local_value(&self.shape, &self.to_local(p))
    }

    /// Gradient of the implicit function in world frame.
    pub fn gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation * local_gradient(&self.shape, &self.to_local(p))
    }

    /// Outward unit normal at a boundary point.
    ///
    /// Box and cylinder creases use the active distance term; exact ties pick
    /// the first face in x, y, z (side before cap for the cylinder).
    pub fn outward_normal(&self, p: &Vector3<f64>) -> Result<Vector3<f64>, SurfaceError> {
        let local = self.to_local(p);
        let g = match self.shape {
            Shape::Box { half_extents } => box_face_normal(&local, &half_extents),
            Shape::Cylinder {
                radius,
                half_height,
            } => cylinder_face_normal(&local, radius, half_height),
            _ => local_gradient(&self.shape, &local),
        };
        let norm = g.norm();
        if !(norm >= MIN_GRADIENT_NORM) {
            return Err(SurfaceError::DegenerateNormal {
                point: (*p).into(),
                norm,
            });
        }
        Ok(self.pose.rotation * (g / norm))
    }

    /// Closest boundary point to `p`.
    pub fn project(&self, p: &Vector3<f64>) -> Result<SurfacePoint, SurfaceError> {
        let local = self.to_local(p);
        let x = match self.shape {
            Shape::Ellipsoid { axes } => project_ellipsoid(&axes, &local),
            Shape::Superquadric { axes, e1, e2 } => {
                project_superquadric(&self.shape, &axes, e1, e2, &local)?
            }
            Shape::Torus { major, minor } => project_torus(major, minor, &local),
            Shape::Box { half_extents } => project_box(&half_extents, &local),
            Shape::Cylinder {
                radius,
                half_height,
            } => project_cylinder(radius, half_height, &local),
        };
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SurfaceError::ProjectionDiverged {
                iters: MAX_PROJ_ITERS,
                residual: f64::NAN,
            });
        }
        let position = self.to_world(&x);
        let outward_normal = self.outward_normal(&position)?;
        Ok(SurfacePoint {
            position,
            outward_normal,
        })
    }

    /// A boundary point drawn deterministically from `seed`.
    pub fn sample_surface(&self, seed: u64) -> Result<SurfacePoint, SurfaceError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_surface_with(&mut rng)
    }

    /// Rejection-samples an exterior point in a ball around the object and
    /// projects it. Not area-uniform. Crease hits are redrawn.
    pub fn sample_surface_with<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<SurfacePoint, SurfaceError> {
        let radius = 2.0 * self.bounding_radius();
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            );
            if v.norm_squared() > 1.0 {
                continue;
            }
            let local = v * radius;
            if local_value(&self.shape, &local) <= 0.0 {
                continue;
            }
            let world = self.to_world(&local);
            match self.project(&world) {
                Ok(sp) if self.on_crease(&sp.position) => continue,
                Ok(sp) => return Ok(sp),
                // Measure-zero crease hits; draw again.
                Err(SurfaceError::DegenerateNormal { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn local_value(shape: &Shape, p: &Vector3<f64>) -> f64 {
    match *shape {
        Shape::Ellipsoid { axes } => p.component_div(&axes).norm_squared() - 1.0,
        Shape::Superquadric { axes, e1, e2 } => superquadric_inside_outside(&axes, e1, e2, p) - 1.0,
        Shape::Torus { major, minor } => {
            let rho = p.x.hypot(p.y);
            (rho - major).powi(2) + p.z * p.z - minor * minor
        }
        Shape::Box { half_extents } => {
            let d = p.abs() - half_extents;
            d.sup(&Vector3::zeros()).norm() + d.max().min(0.0)
        }
        Shape::Cylinder {
            radius,
            half_height,
        } => {
            let dx = p.x.hypot(p.y) - radius;
            let dz = p.z.abs() - half_height;
            dx.max(0.0).hypot(dz.max(0.0)) + dx.max(dz).min(0.0)
        }
    }
}

/// `G(p)` with `G = 1` on the boundary; homogeneous of degree `2 / e1`.
fn superquadric_inside_outside(axes: &Vector3<f64>, e1: f64, e2: f64, p: &Vector3<f64>) -> f64 {
    let s = (p.x / axes.x).abs().powf(2.0 / e2) + (p.y / axes.y).abs().powf(2.0 / e2);
    s.powf(e2 / e1) + (p.z / axes.z).abs().powf(2.0 / e1)
}

fn local_gradient(shape: &Shape, p: &Vector3<f64>) -> Vector3<f64> {
    match *shape {
        Shape::Ellipsoid { axes } => 2.0 * p.component_div(&axes.component_mul(&axes)),
        Shape::Superquadric { axes, e1, e2 } => {
            let ux = (p.x / axes.x).abs();
            let uy = (p.y / axes.y).abs();
            let uz = (p.z / axes.z).abs();
            let s = ux.powf(2.0 / e2) + uy.powf(2.0 / e2);
            let outer = if s > 0.0 {
                (2.0 / e1) * s.powf(e2 / e1 - 1.0)
            } else {
                0.0
            };
            let term = |u: f64, v: f64, a: f64, e: f64| {
                if u > 0.0 {
                    u.powf(2.0 / e - 1.0) * sgn(v) / a
                } else {
                    0.0
                }
            };
            Vector3::new(
                outer * term(ux, p.x, axes.x, e2),
                outer * term(uy, p.y, axes.y, e2),
                (2.0 / e1) * term(uz, p.z, axes.z, e1),
            )
        }
        Shape::Torus { major, .. } => {
            let rho = p.x.hypot(p.y);
            if rho > 0.0 {
                let k = 2.0 * (rho - major) / rho;
                Vector3::new(k * p.x, k * p.y, 2.0 * p.z)
            } else {
                Vector3::new(0.0, 0.0, 2.0 * p.z)
            }
        }
        Shape::Box { half_extents } => {
            let d = p.abs() - half_extents;
            let q = d.sup(&Vector3::zeros());
            let qn = q.norm();
            if qn > 0.0 {
                Vector3::new(q.x * sgn(p.x), q.y * sgn(p.y), q.z * sgn(p.z)) / qn
            } else {
                box_face_normal(p, &half_extents)
            }
        }
        Shape::Cylinder {
            radius,
            half_height,
        } => {
            let rho = p.x.hypot(p.y);
            let dx = rho - radius;
            let dz = p.z.abs() - half_height;
            let (qx, qz) = (dx.max(0.0), dz.max(0.0));
            let qn = qx.hypot(qz);
            if qn > 0.0 {
                let radial = if rho > 0.0 {
                    Vector3::new(p.x / rho, p.y / rho, 0.0)
                } else {
                    Vector3::zeros()
                };
                radial * (qx / qn) + Vector3::new(0.0, 0.0, sgn(p.z) * qz / qn)
            } else {
                cylinder_face_normal(p, radius, half_height)
            }
        }
    }
}

fn face_sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn box_face_normal(p: &Vector3<f64>, h: &Vector3<f64>) -> Vector3<f64> {
    let d = p.abs() - h;
    let mut k = 0;
    for i in 1..3 {
        if d[i] > d[k] {
            k = i;
        }
    }
    let mut n = Vector3::zeros();
    n[k] = face_sign(p[k]);
    n
}

fn cylinder_face_normal(p: &Vector3<f64>, radius: f64, half_height: f64) -> Vector3<f64> {
    let rho = p.x.hypot(p.y);
    let dx = rho - radius;
    let dz = p.z.abs() - half_height;
    if dx >= dz {
        if rho > 0.0 {
            Vector3::new(p.x / rho, p.y / rho, 0.0)
        } else {
            Vector3::x()
        }
    } else {
        Vector3::new(0.0, 0.0, face_sign(p.z))
    }
}

/// Closest point on an ellipsoid: `x_k = a_k^2 y_k / (t + a_k^2)` with `t` the
/// root of `sum (a_k y_k / (t + a_k^2))^2 = 1` right of `-min a_k^2`.
fn project_ellipsoid(axes: &Vector3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    let a2 = axes.component_mul(axes);
    let mut y = p.abs();
    let kmin = axes.imin();
    // Interior points on the minor-axis plane have two symmetric nearest points;
    // nudge off the plane so the root exists.
    if local_value(&Shape::Ellipsoid { axes: *axes }, p) < 0.0 && y[kmin] < 1e-12 * axes[kmin] {
        y[kmin] = 1e-12 * axes[kmin];
    }
    let g = |t: f64| -> (f64, f64) {
        let mut f = -1.0;
        let mut df = 0.0;
        for k in 0..3 {
            let r = axes[k] * y[k] / (t + a2[k]);
            f += r * r;
            df += -2.0 * r * r / (t + a2[k]);
        }
        (f, df)
    };
    let mut lo = -a2[kmin];
    let mut hi = (axes.max() * y.norm()).max(0.0);
    if g(0.0).0 < 0.0 {
        hi = 0.0;
    } else {
        lo = 0.0;
    }
    let mut t = if lo == 0.0 { 0.5 * hi } else { 0.5 * lo };
    for _ in 0..200 {
        let (f, df) = g(t);
        if f.abs() < 1e-15 {
            break;
        }
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - f / df;
        t = if df < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-16 * (1.0 + t.abs()) {
            break;
        }
    }
    let mut x = Vector3::zeros();
    for k in 0..3 {
        x[k] = sgn_or_one(p[k]) * a2[k] * y[k] / (t + a2[k]);
    }
    let scale = x.component_div(axes).norm();
    if scale > 0.0 {
        x / scale
    } else {
        Vector3::new(0.0, 0.0, axes.z)
    }
}

fn sgn_or_one(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn radial_superquadric(axes: &Vector3<f64>, e1: f64, e2: f64, p: &Vector3<f64>) -> Vector3<f64> {
    let g = superquadric_inside_outside(axes, e1, e2, p);
    if g > 0.0 && g.is_finite() {
        p * g.powf(-0.5 * e1)
    } else {
        Vector3::new(0.0, 0.0, axes.z)
    }
}

/// Closest point on a (convex) superquadric. For exponents above one the
/// coordinate planes are ridges with unbounded curvature, so the minimizer is
/// a smooth stationary point, a stationary point of one of the three planar
/// ridge curves, or one of the six vertices; all are tried and the nearest
/// wins.
fn project_superquadric(
    shape: &Shape,
    axes: &Vector3<f64>,
    e1: f64,
    e2: f64,
    p: &Vector3<f64>,
) -> Result<Vector3<f64>, SurfaceError> {
    let size = axes.max();
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut converged = false;
    let mut consider = |x: Vector3<f64>| {
        if !x.iter().all(|v| v.is_finite()) {
            return;
        }
        let d = (p - x).norm();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, x));
        }
    };

    let x0 = radial_superquadric(axes, e1, e2, p);
    consider(x0);
    if let Some(x) = superquadric_kkt_newton(shape, axes, e1, e2, p, x0, size) {
        converged = true;
        consider(x);
    }
    // The nearest point of a planar ridge curve to p is the nearest point of
    // that curve to p's projection onto the plane.
    for k in 0..3 {
        let mut in_plane = *p;
        in_plane[k] = 0.0;
        let x0 = radial_superquadric(axes, e1, e2, &in_plane);
        consider(x0);
        if let Some(x) = superquadric_kkt_newton(shape, axes, e1, e2, &in_plane, x0, size) {
            consider(x);
        }
    }
    for k in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut vertex = Vector3::zeros();
            vertex[k] = sign * axes[k];
            consider(vertex);
        }
    }

    let Some((_, x)) = best else {
        return Err(SurfaceError::ProjectionDiverged {
            iters: MAX_PROJ_ITERS,
            residual: f64::NAN,
        });
    };
    if converged {
        return Ok(x);
    }
    let flowed = superquadric_gradient_flow(shape, axes, e1, e2, p, x, size)?;
    Ok(if (p - flowed).norm() < (p - x).norm() { flowed } else { x })
}

fn tangential_residual(shape: &Shape, p: &Vector3<f64>, x: &Vector3<f64>) -> f64 {
    let g = local_gradient(shape, x);
    let gn = g.norm();
    if gn < MIN_GRADIENT_NORM {
        return f64::INFINITY;
    }
    let n = g / gn;
    let d = p - x;
    (d - n * n.dot(&d)).norm()
}

/// Newton on the Lagrangian stationarity system `x - p + l grad F(x) = 0`,
/// `F(x) = 0`, with a finite-difference Hessian and backtracking on the
/// residual norm.
fn superquadric_kkt_newton(
    shape: &Shape,
    axes: &Vector3<f64>,
    e1: f64,
    e2: f64,
    p: &Vector3<f64>,
    x0: Vector3<f64>,
    size: f64,
) -> Option<Vector3<f64>> {
    let g0 = local_gradient(shape, &x0);
    let gn0 = g0.norm_squared();
    if gn0 < MIN_GRADIENT_NORM * MIN_GRADIENT_NORM {
        return None;
    }
    let mut x = x0;
    let mut lambda = (p - x0).dot(&g0) / gn0;
    let residual = |x: &Vector3<f64>, lambda: f64| -> (Vector3<f64>, f64, f64) {
        let g = local_gradient(shape, x);
        let r1 = x - p + g * lambda;
        let r2 = local_value(shape, x);
        let scaled = r1.norm_squared() + (r2 / g.norm().max(MIN_GRADIENT_NORM)).powi(2);
        (r1, r2, scaled.sqrt())
    };
    let h = 1e-6 * size;
    for _ in 0..MAX_PROJ_ITERS {
        let (r1, r2, merit) = residual(&x, lambda);
        if merit <= 1e-13 * size {
            break;
        }
        let g = local_gradient(shape, &x);
        let mut hess = Matrix3::zeros();
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let col = (local_gradient(shape, &(x + e)) - local_gradient(shape, &(x - e))) / (2.0 * h);
            hess.set_column(k, &col);
        }
        let hess = 0.5 * (hess + hess.transpose());
        let mut kkt = Matrix4::zeros();
        let top = Matrix3::identity() + hess * lambda;
        kkt.fixed_view_mut::<3, 3>(0, 0).copy_from(&top);
        kkt.fixed_view_mut::<3, 1>(0, 3).copy_from(&g);
        kkt.fixed_view_mut::<1, 3>(3, 0).copy_from(&g.transpose());
        let rhs = -Vector4::new(r1.x, r1.y, r1.z, r2);
        let step = kkt.lu().solve(&rhs)?;
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        let dx = Vector3::new(step.x, step.y, step.z);
        let dl = step.w;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let xt = x + dx * alpha;
            let lt = lambda + dl * alpha;
            if residual(&xt, lt).2 < merit {
                x = xt;
                lambda = lt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let x = radial_superquadric(axes, e1, e2, &x);
    // Must be the outward-facing stationary point and actually stationary.
    let outward_ok = lambda >= -1e-12 || local_value(shape, p) < 0.0;
    if outward_ok && tangential_residual(shape, p, &x) <= 1e-7 * size {
        Some(x)
    } else {
        None
    }
}

/// Damped tangential descent of `|x - p|^2` along the surface, re-projecting
/// radially after each step.
fn superquadric_gradient_flow(
    shape: &Shape,
    axes: &Vector3<f64>,
    e1: f64,
    e2: f64,
    p: &Vector3<f64>,
    x0: Vector3<f64>,
    size: f64,
) -> Result<Vector3<f64>, SurfaceError> {
    let mut x = x0;
    let mut dist = (p - x).norm();
    let mut beta = 1.0;
    let iters = 20 * MAX_PROJ_ITERS;
    for _ in 0..iters {
        let g = local_gradient(shape, &x);
        let gn = g.norm();
        if gn < MIN_GRADIENT_NORM {
            break;
        }
        let n = g / gn;
        let d = p - x;
        let tangential = d - n * n.dot(&d);
        if tangential.norm() <= 1e-9 * size {
            break;
        }
        let candidate = radial_superquadric(axes, e1, e2, &(x + tangential * beta));
        let cd = (p - candidate).norm();
        if cd < dist {
            x = candidate;
            dist = cd;
            beta = (beta * 1.5).min(1.0);
        } else {
            beta *= 0.5;
            if beta < 1e-12 {
                break;
            }
        }
    }
    let residual = local_value(shape, &x).abs();
    if residual.is_finite() && residual <= SURFACE_TOL {
        Ok(x)
    } else {
        Err(SurfaceError::ProjectionDiverged { iters, residual })
    }
}

fn project_torus(major: f64, minor: f64, p: &Vector3<f64>) -> Vector3<f64> {
    let rho = p.x.hypot(p.y);
    let radial = if rho > 0.0 {
        Vector3::new(p.x / rho, p.y / rho, 0.0)
    } else {
        Vector3::x()
    };
    let center = radial * major;
    let d = p - center;
    let dn = d.norm();
    let dir = if dn > 0.0 { d / dn } else { radial };
    center + dir * minor
}

fn project_box(h: &Vector3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    let inside = (0..3).all(|k| p[k].abs() <= h[k]);
    if !inside {
        return p.zip_map(h, |v, hk| v.clamp(-hk, hk));
    }
    let mut k = 0;
    for i in 1..3 {
        if h[i] - p[i].abs() < h[k] - p[k].abs() {
            k = i;
        }
    }
    let mut x = *p;
    x[k] = face_sign(p[k]) * h[k];
    x
}

fn project_cylinder(radius: f64, half_height: f64, p: &Vector3<f64>) -> Vector3<f64> {
    let rho = p.x.hypot(p.y);
    let radial = if rho > 0.0 {
        Vector3::new(p.x / rho, p.y / rho, 0.0)
    } else {
        Vector3::x()
    };
    let inside = rho <= radius && p.z.abs() <= half_height;
    if !inside {
        let r = rho.min(radius);
        let z = p.z.clamp(-half_height, half_height);
        return radial * r + Vector3::new(0.0, 0.0, z);
    }
    if radius - rho <= half_height - p.z.abs() {
        radial * radius + Vector3::new(0.0, 0.0, p.z)
    } else {
        Vector3::new(p.x, p.y, face_sign(p.z) * half_height)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ShapeRepr {
    Ellipsoid {
        a1: f64,
        a2: f64,
        a3: f64,
    },
    Superquadric {
        a1: f64,
        a2: f64,
        a3: f64,
        e1: f64,
        e2: f64,
    },
    Torus {
        #[serde(rename = "R")]
        major: f64,
        #[serde(rename = "r")]
        minor: f64,
    },
    Box {
        hx: f64,
        hy: f64,
        hz: f64,
    },
    Cylinder {
        radius: f64,
        half_height: f64,
    },
}

#[derive(Serialize, Deserialize)]
struct SurfaceRepr {
    #[serde(flatten)]
    shape: ShapeRepr,
    #[serde(default)]
    pose: PoseRepr,
}

impl TryFrom<SurfaceRepr> for Surface {
    type Error = SurfaceError;

    fn try_from(repr: SurfaceRepr) -> Result<Self, Self::Error> {
        let shape = match repr.shape {
            ShapeRepr::Ellipsoid { a1, a2, a3 } => Shape::Ellipsoid {
                axes: Vector3::new(a1, a2, a3),
            },
            ShapeRepr::Superquadric { a1, a2, a3, e1, e2 } => Shape::Superquadric {
                axes: Vector3::new(a1, a2, a3),
                e1,
                e2,
            },
            ShapeRepr::Torus { major, minor } => Shape::Torus { major, minor },
            ShapeRepr::Box { hx, hy, hz } => Shape::Box {
                half_extents: Vector3::new(hx, hy, hz),
            },
            ShapeRepr::Cylinder {
                radius,
                half_height,
            } => Shape::Cylinder {
                radius,
                half_height,
            },
        };
        let pose = repr
            .pose
            .to_isometry()
            .ok_or_else(|| SurfaceError::InvalidParameter("pose rotation must be a nonzero quaternion".into()))?;
        Surface::new(shape, pose)
    }
}

impl From<Surface> for SurfaceRepr {
    fn from(s: Surface) -> Self {
        let shape = match s.shape {
            Shape::Ellipsoid { axes } => ShapeRepr::Ellipsoid {
                a1: axes.x,
                a2: axes.y,
                a3: axes.z,
            },
            Shape::Superquadric { axes, e1, e2 } => ShapeRepr::Superquadric {
                a1: axes.x,
                a2: axes.y,
                a3: axes.z,
                e1,
                e2,
            },
            Shape::Torus { major, minor } => ShapeRepr::Torus { major, minor },
            Shape::Box { half_extents: h } => ShapeRepr::Box {
                hx: h.x,
                hy: h.y,
                hz: h.z,
            },
            Shape::Cylinder {
                radius,
                half_height,
            } => ShapeRepr::Cylinder {
                radius,
                half_height,
            },
        };
        SurfaceRepr {
            shape,
            pose: PoseRepr::from(&s.pose),
        }
    }
}
