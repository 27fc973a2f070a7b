//! Tree-structured arm–hand kinematics: forward kinematics, world-frame
//! geometric Jacobians and signed distances between collision primitives.
//!
//! Every joint owns the link that follows it, so link `k` is the frame of
//! joint `k` after its motion. Chains are the joint paths from the root to a
//! link; joints off a chain contribute zero Jacobian columns.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3xX, Rotation3, Translation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::OriginRepr;

pub const SCHEMA_VERSION: u32 = 1;

const BUILTIN_MODEL: &str = include_str!("../models/arm_hand_15dof.json");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("robot description is not valid JSON for schema 1: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub kind: JointType,
    /// Parent link frame to joint frame at zero displacement.
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub q_min: f64,
    pub q_max: f64,
    pub qd_min: f64,
    pub qd_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fingertip {
    pub name: String,
    pub link: usize,
    /// Tip sphere center in the link frame.
    pub offset: Vector3<f64>,
    pub radius: f64,
    /// Direction from the tip center to the reference contact point, tip frame.
    pub reference_direction: Unit<Vector3<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GeomShape {
    Sphere { center: Vector3<f64>, radius: f64 },
    Capsule { a: Vector3<f64>, b: Vector3<f64>, radius: f64 },
    /// `{x : normal . x >= offset}` is free space; world-fixed only.
    HalfSpace { normal: Unit<Vector3<f64>>, offset: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionGeom {
    pub name: String,
    /// `None` for world-fixed geometry.
    pub link: Option<usize>,
    pub shape: GeomShape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    name: String,
    joints: Vec<Joint>,
    fingertips: Vec<Fingertip>,
    geoms: Vec<CollisionGeom>,
    pairs: Vec<(usize, usize)>,
    home: DVector<f64>,
    /// Joint indices from the root to each link, in root-to-link order.
    chains: Vec<Vec<usize>>,
}

/// Pose and Jacobians of one fingertip sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct TipKinematics {
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub jx: Matrix3xX<f64>,
    pub jr: Matrix3xX<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicState {
    pub q: DVector<f64>,
    /// World pose of every link frame.
    pub frames: Vec<Isometry3<f64>>,
    pub tips: Vec<TipKinematics>,
}

impl KinematicState {
    /// World position of a tip's reference contact point on its sphere.
    pub fn reference_point(&self, model: &RobotModel, tip: usize) -> Vector3<f64> {
        let t = &self.tips[tip];
        let f = &model.fingertips[tip];
        t.position + t.rotation * f.reference_direction.into_inner() * f.radius
    }
}

/// Signed distances of all collision pairs and their joint-space gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct CollisionValues {
    pub gamma: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

impl CollisionValues {
    pub fn min(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl RobotModel {
    /// The bundled 15-DoF test model.
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN_MODEL).expect("bundled robot model is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let repr: RobotModelRepr = serde_json::from_str(s)?;
        Self::try_from(repr)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&RobotModelRepr::from(self)).expect("model serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn fingertips(&self) -> &[Fingertip] {
        &self.fingertips
    }

    pub fn geoms(&self) -> &[CollisionGeom] {
        &self.geoms
    }

    pub fn collision_pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn home(&self) -> &DVector<f64> {
        &self.home
    }

    /// Joints between the root and `link`, root first.
    pub fn chain(&self, link: usize) -> &[usize] {
        &self.chains[link]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn q_min(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.q_min))
    }

    pub fn q_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.q_max))
    }

    pub fn qd_min(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.qd_min))
    }

    pub fn qd_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.qd_max))
    }

    pub fn clamp_to_limits(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dof(),
            q.iter().zip(&self.joints).map(|(v, j)| v.clamp(j.q_min, j.q_max)),
        )
    }

    pub fn within_limits(&self, q: &DVector<f64>) -> bool {
        q.iter().zip(&self.joints).all(|(v, j)| *v >= j.q_min && *v <= j.q_max)
    }

    fn check_dim(&self, q: &DVector<f64>) {
        assert_eq!(q.len(), self.dof(), "joint vector has wrong dimension");
    }

    /// World pose of every link.
    pub fn link_frames(&self, q: &DVector<f64>) -> Vec<Isometry3<f64>> {
        self.check_dim(q);
        let mut frames: Vec<Isometry3<f64>> = Vec::with_capacity(self.dof());
        for (k, joint) in self.joints.iter().enumerate() {
            let parent = joint.parent.map_or_else(Isometry3::identity, |p| frames[p]);
            let motion = match joint.kind {
                JointType::Revolute => Isometry3::from_parts(
                    Translation3::identity(),
                    nalgebra::UnitQuaternion::from_axis_angle(&joint.axis, q[k]),
                ),
                JointType::Prismatic => Isometry3::from_parts(
                    Translation3::from(joint.axis.into_inner() * q[k]),
                    nalgebra::UnitQuaternion::identity(),
                ),
            };
            frames.push(parent * joint.origin * motion);
        }
        frames
    }

    /// Linear (3×n) and angular (3×n) world-frame Jacobian of a point rigidly
    /// attached to `link`, given in world coordinates.
    pub fn point_jacobian(
        &self,
        frames: &[Isometry3<f64>],
        link: usize,
        point: &Vector3<f64>,
    ) -> (Matrix3xX<f64>, Matrix3xX<f64>) {
        let n = self.dof();
        let mut jx = Matrix3xX::zeros(n);
        let mut jr = Matrix3xX::zeros(n);
        for &j in &self.chains[link] {
            let axis = frames[j].rotation * self.joints[j].axis.into_inner();
            match self.joints[j].kind {
                JointType::Revolute => {
                    let origin = frames[j].translation.vector;
                    jx.set_column(j, &axis.cross(&(point - origin)));
                    jr.set_column(j, &axis);
                }
                JointType::Prismatic => jx.set_column(j, &axis),
            }
        }
        (jx, jr)
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> KinematicState {
        let frames = self.link_frames(q);
        let tips = self
            .fingertips
            .iter()
            .map(|tip| {
                let frame = &frames[tip.link];
                let position = frame * nalgebra::Point3::from(tip.offset);
                let (jx, jr) = self.point_jacobian(&frames, tip.link, &position.coords);
                TipKinematics {
                    position: position.coords,
                    rotation: frame.rotation.to_rotation_matrix(),
                    jx,
                    jr,
                }
            })
            .collect();
        KinematicState {
            q: q.clone(),
            frames,
            tips,
        }
    }

    /// Per-fingertip `(J^x, J^R)`.
    pub fn jacobians(&self, q: &DVector<f64>) -> Vec<(Matrix3xX<f64>, Matrix3xX<f64>)> {
        self.forward_kinematics(q)
            .tips
            .into_iter()
            .map(|t| (t.jx, t.jr))
            .collect()
    }

    pub fn collision_values(&self, q: &DVector<f64>) -> CollisionValues {
        self.collision_values_at(&self.link_frames(q))
    }

    /// Collision values for precomputed link frames.
    pub fn collision_values_at(&self, frames: &[Isometry3<f64>]) -> CollisionValues {
        let n = self.dof();
        let k = self.pairs.len();
        let mut gamma = DVector::zeros(k);
        let mut jacobian = DMatrix::zeros(k, n);
        for (row, &(ia, ib)) in self.pairs.iter().enumerate() {
            let (a, b) = (&self.geoms[ia], &self.geoms[ib]);
            let w = pair_distance(&world_core(a, frames), &world_core(b, frames));
            gamma[row] = w.distance;
            // Moving witness b along `direction` (or a against it) opens the gap.
            let mut grad = DVector::zeros(n);
            if let Some(link) = b.link {
                let (jx, _) = self.point_jacobian(frames, link, &w.on_b);
                grad += jx.transpose() * w.direction;
            }
            if let Some(link) = a.link {
                let (jx, _) = self.point_jacobian(frames, link, &w.on_a);
                grad -= jx.transpose() * w.direction;
            }
            jacobian.set_row(row, &grad.transpose());
        }
        CollisionValues { gamma, jacobian }
    }

    /// Row of a named geom pair in [`CollisionValues`], in either order.
    pub fn pair_index(&self, a: &str, b: &str) -> Option<usize> {
        let find = |name: &str| self.geoms.iter().position(|g| g.name == name);
        let (ia, ib) = (find(a)?, find(b)?);
        self.pairs
            .iter()
            .position(|&(x, y)| (x, y) == (ia, ib) || (x, y) == (ib, ia))
    }
}

/// A collision primitive in world coordinates: a core (point, segment or
/// plane) inflated by a radius.
#[derive(Clone, Debug)]
enum WorldCore {
    Segment { a: Vector3<f64>, b: Vector3<f64>, radius: f64 },
    Plane { normal: Vector3<f64>, offset: f64 },
}

fn world_core(g: &CollisionGeom, frames: &[Isometry3<f64>]) -> WorldCore {
    let to_world = |p: &Vector3<f64>| match g.link {
        Some(l) => (frames[l] * nalgebra::Point3::from(*p)).coords,
        None => *p,
    };
    match &g.shape {
        GeomShape::Sphere { center, radius } => {
            let c = to_world(center);
            WorldCore::Segment {
                a: c,
                b: c,
                radius: *radius,
            }
        }
        GeomShape::Capsule { a, b, radius } => WorldCore::Segment {
            a: to_world(a),
            b: to_world(b),
            radius: *radius,
        },
        GeomShape::HalfSpace { normal, offset } => WorldCore::Plane {
            normal: normal.into_inner(),
            offset: *offset,
        },
    }
}

/// Distance between two inflated cores with witness points on the cores and
/// the unit direction from the first witness to the second.
#[derive(Clone, Debug)]
struct Witness {
    distance: f64,
    on_a: Vector3<f64>,
    on_b: Vector3<f64>,
    direction: Vector3<f64>,
}

fn pair_distance(a: &WorldCore, b: &WorldCore) -> Witness {
    match (a, b) {
        (
            WorldCore::Segment { a: a0, b: a1, radius: ra },
            WorldCore::Segment { a: b0, b: b1, radius: rb },
        ) => {
            let (pa, pb) = closest_points_segments(a0, a1, b0, b1);
            let d = pb - pa;
            let len = d.norm();
            // Coincident cores have no separating direction; the gradient is
            // reported as zero there.
            let direction = if len > 1e-12 { d / len } else { Vector3::zeros() };
            Witness {
                distance: len - ra - rb,
                on_a: pa,
                on_b: pb,
                direction,
            }
        }
        (WorldCore::Plane { normal, offset }, WorldCore::Segment { a: s0, b: s1, radius }) => {
            let h0 = normal.dot(s0) - offset;
            let h1 = normal.dot(s1) - offset;
            let (p, h) = if h1 < h0 { (*s1, h1) } else { (*s0, h0) };
            Witness {
                distance: h - radius,
                on_a: p - normal * h,
                on_b: p,
                direction: *normal,
            }
        }
        (WorldCore::Segment { .. }, WorldCore::Plane { .. }) => {
            let w = pair_distance(b, a);
            Witness {
                distance: w.distance,
                on_a: w.on_b,
                on_b: w.on_a,
                direction: -w.direction,
            }
        }
        (WorldCore::Plane { .. }, WorldCore::Plane { .. }) => {
            unreachable!("plane-plane pairs are rejected at load time")
        }
    }
}

/// Closest points between segments `[p0, p1]` and `[q0, q1]`; segments may be
/// degenerate.
fn closest_points_segments(
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    q0: &Vector3<f64>,
    q1: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    const EPS: f64 = 1e-18;
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= EPS && e <= EPS {
        return (*p0, *q0);
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p0 + d1 * s, q0 + d2 * t)
}

// ---- JSON representation ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotModelRepr {
    schema: u32,
    #[serde(default)]
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    joints: Vec<JointRepr>,
    fingertips: Vec<FingertipRepr>,
    #[serde(default)]
    geoms: Vec<GeomRepr>,
    #[serde(default)]
    collision_pairs: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    home: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointRepr {
    name: String,
    parent: Option<String>,
    #[serde(rename = "type")]
    kind: JointType,
    #[serde(default)]
    origin: OriginRepr,
    axis: [f64; 3],
    limits: LimitsRepr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsRepr {
    lower: f64,
    upper: f64,
    velocity: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FingertipRepr {
    name: String,
    link: String,
    offset: [f64; 3],
    radius: f64,
    reference_direction: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeomRepr {
    name: String,
    link: Option<String>,
    shape: ShapeRepr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ShapeRepr {
    Sphere { center: [f64; 3], radius: f64 },
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
    HalfSpace { normal: [f64; 3], offset: f64 },
}

fn finite3(field: &str, v: [f64; 3]) -> Result<Vector3<f64>, ModelError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Vector3::from(v))
    } else {
        Err(invalid(field, "must be finite"))
    }
}

fn unit3(field: &str, v: [f64; 3]) -> Result<Unit<Vector3<f64>>, ModelError> {
    let v = finite3(field, v)?;
    if v.norm() < 1e-9 {
        return Err(invalid(field, "must be a nonzero 3-vector"));
    }
    Ok(Unit::new_normalize(v))
}

fn positive(field: &str, v: f64) -> Result<f64, ModelError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

impl TryFrom<RobotModelRepr> for RobotModel {
    type Error = ModelError;

    fn try_from(r: RobotModelRepr) -> Result<Self, ModelError> {
        if r.schema != SCHEMA_VERSION {
            return Err(invalid("schema", format!("unsupported version {}", r.schema)));
        }
        if r.joints.is_empty() {
            return Err(invalid("joints", "at least one joint is required"));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut joints = Vec::with_capacity(r.joints.len());
        for (k, j) in r.joints.iter().enumerate() {
            let field = |f: &str| format!("joints[{k}].{f}");
            if index.insert(j.name.as_str(), k).is_some() {
                return Err(invalid(field("name"), format!("duplicate joint '{}'", j.name)));
            }
            let parent = match &j.parent {
                None => None,
                Some(p) => Some(*index.get(p.as_str()).ok_or_else(|| {
                    invalid(field("parent"), format!("'{p}' is not an earlier joint"))
                })?),
            };
            let origin_vals = j.origin.xyz.iter().chain(j.origin.rpy.iter());
            if origin_vals.into_iter().any(|v| !v.is_finite()) {
                return Err(invalid(field("origin"), "must be finite"));
            }
            let l = &j.limits;
            if !(l.lower.is_finite() && l.upper.is_finite() && l.lower < l.upper) {
                return Err(invalid(field("limits"), "need finite lower < upper"));
            }
            let velocity = positive(&field("limits.velocity"), l.velocity)?;
            joints.push(Joint {
                name: j.name.clone(),
                parent,
                kind: j.kind,
                origin: j.origin.to_isometry(),
                axis: unit3(&field("axis"), j.axis)?,
                q_min: l.lower,
                q_max: l.upper,
                qd_min: -velocity,
                qd_max: velocity,
            });
        }
        let link_of = |field: String, name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| invalid(field, format!("unknown link '{name}'")))
        };

        if r.fingertips.is_empty() {
            return Err(invalid("fingertips", "at least one fingertip is required"));
        }
        let mut fingertips = Vec::new();
        for (k, t) in r.fingertips.iter().enumerate() {
            let field = |f: &str| format!("fingertips[{k}].{f}");
            fingertips.push(Fingertip {
                name: t.name.clone(),
                link: link_of(field("link"), &t.link)?,
                offset: finite3(&field("offset"), t.offset)?,
                radius: positive(&field("radius"), t.radius)?,
                reference_direction: unit3(&field("reference_direction"), t.reference_direction)?,
            });
        }

        let mut geom_index: HashMap<&str, usize> = HashMap::new();
        let mut geoms = Vec::new();
        for (k, g) in r.geoms.iter().enumerate() {
            let field = |f: &str| format!("geoms[{k}].{f}");
            if geom_index.insert(g.name.as_str(), k).is_some() {
                return Err(invalid(field("name"), format!("duplicate geom '{}'", g.name)));
            }
            let link = match &g.link {
                None => None,
                Some(l) => Some(link_of(field("link"), l)?),
            };
            let shape = match &g.shape {
                ShapeRepr::Sphere { center, radius } => GeomShape::Sphere {
                    center: finite3(&field("shape.center"), *center)?,
                    radius: positive(&field("shape.radius"), *radius)?,
                },
                ShapeRepr::Capsule { a, b, radius } => GeomShape::Capsule {
                    a: finite3(&field("shape.a"), *a)?,
                    b: finite3(&field("shape.b"), *b)?,
                    radius: positive(&field("shape.radius"), *radius)?,
                },
                ShapeRepr::HalfSpace { normal, offset } => {
                    if link.is_some() {
                        return Err(invalid(field("link"), "half-spaces must be world-fixed (null)"));
                    }
                    if !offset.is_finite() {
                        return Err(invalid(field("shape.offset"), "must be finite"));
                    }
                    GeomShape::HalfSpace {
                        normal: unit3(&field("shape.normal"), *normal)?,
                        offset: *offset,
                    }
                }
            };
            geoms.push(CollisionGeom {
                name: g.name.clone(),
                link,
                shape,
            });
        }

        let mut pairs = Vec::new();
        for (k, (a, b)) in r.collision_pairs.iter().enumerate() {
            let field = format!("collision_pairs[{k}]");
            let find = |n: &str| {
                geom_index
                    .get(n)
                    .copied()
                    .ok_or_else(|| invalid(field.clone(), format!("unknown geom '{n}'")))
            };
            let (ia, ib) = (find(a)?, find(b)?);
            if geoms[ia].link.is_none() && geoms[ib].link.is_none() {
                return Err(invalid(field, "at least one geom must be attached to a link"));
            }
            pairs.push((ia, ib));
        }

        let n = joints.len();
        let home = match r.home {
            None => DVector::from_iterator(n, joints.iter().map(|j| 0.5 * (j.q_min + j.q_max))),
            Some(h) => {
                if h.len() != n {
                    return Err(invalid("home", format!("expected {n} values, got {}", h.len())));
                }
                let h = DVector::from_vec(h);
                if !joints.iter().zip(h.iter()).all(|(j, v)| *v >= j.q_min && *v <= j.q_max) {
                    return Err(invalid("home", "outside joint limits"));
                }
                h
            }
        };

        let mut chains: Vec<Vec<usize>> = Vec::with_capacity(n);
        for (k, j) in joints.iter().enumerate() {
            let mut chain = j.parent.map_or_else(Vec::new, |p| chains[p].clone());
            chain.push(k);
            chains.push(chain);
        }

        Ok(RobotModel {
            name: r.name,
            joints,
            fingertips,
            geoms,
            pairs,
            home,
            chains,
        })
    }
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl From<&RobotModel> for RobotModelRepr {
    fn from(m: &RobotModel) -> Self {
        let joints = m
            .joints
            .iter()
            .map(|j| {
                let (roll, pitch, yaw) = j.origin.rotation.euler_angles();
                JointRepr {
                    name: j.name.clone(),
                    parent: j.parent.map(|p| m.joints[p].name.clone()),
                    kind: j.kind,
                    origin: OriginRepr {
                        xyz: arr(&j.origin.translation.vector),
                        rpy: [roll, pitch, yaw],
                    },
                    axis: arr(&j.axis),
                    limits: LimitsRepr {
                        lower: j.q_min,
                        upper: j.q_max,
                        velocity: j.qd_max,
                    },
                }
            })
            .collect();
        let link_name = |l: usize| m.joints[l].name.clone();
        RobotModelRepr {
            schema: SCHEMA_VERSION,
            name: m.name.clone(),
            description: None,
            joints,
            fingertips: m
                .fingertips
                .iter()
                .map(|t| FingertipRepr {
                    name: t.name.clone(),
                    link: link_name(t.link),
                    offset: arr(&t.offset),
                    radius: t.radius,
                    reference_direction: arr(&t.reference_direction),
                })
                .collect(),
            geoms: m
                .geoms
                .iter()
                .map(|g| GeomRepr {
                    name: g.name.clone(),
                    link: g.link.map(link_name),
                    shape: match &g.shape {
                        GeomShape::Sphere { center, radius } => ShapeRepr::Sphere {
                            center: arr(center),
                            radius: *radius,
                        },
                        GeomShape::Capsule { a, b, radius } => ShapeRepr::Capsule {
                            a: arr(a),
                            b: arr(b),
                            radius: *radius,
                        },
                        GeomShape::HalfSpace { normal, offset } => ShapeRepr::HalfSpace {
                            normal: arr(normal),
                            offset: *offset,
                        },
                    },
                })
                .collect(),
            collision_pairs: m
                .pairs
                .iter()
                .map(|&(a, b)| (m.geoms[a].name.clone(), m.geoms[b].name.clone()))
                .collect(),
            home: Some(m.home.iter().copied().collect()),
        }
    }
}
