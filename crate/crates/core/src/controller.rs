//! Tactile reflex controller: closing/adjusting mode machine, fingertip
//! velocity fields and per-tick joint velocity tracking.

use nalgebra::{DVector, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{CollisionValues, KinematicState, RobotModel};
use crate::qp::{
    assemble_tracking_qp, QpError, QpSolution, QpSolver, QpStatus, TipTarget, TrackingParams,
    WarmStart,
};
use crate::stability::{angle_between, evaluate, ContactPair, Method, StabilityError, StabilityEval};

/// Distance below which the centroid and a fingertip count as coincident.
pub const CENTROID_EPS: f64 = 1e-9;
/// Below this `|u x v|` the cone rotation axis is undefined.
pub const AXIS_EPS: f64 = 1e-9;
/// Consecutive failed solves during which the previous command is reused.
pub const MAX_HELD_FAILURES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("fingertip {0} coincides with the fingertip centroid")]
    CentroidDegenerate(usize),
    #[error("contact point coincides with the fingertip center")]
    ContactAtCenter,
    #[error("tracking QP failed: {}", .0.as_str())]
    SolverFailed(QpStatus),
    #[error("tracking QP malformed: {0}")]
    Qp(#[from] QpError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("{0} fingertips reported, controller handles {1}")]
    TipCount(usize, usize),
    #[error("invalid controller parameter {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Closing,
    Adjusting,
    Stable,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Closing, Mode::Adjusting, Mode::Stable];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Closing => "closing",
            Mode::Adjusting => "adjusting",
            Mode::Stable => "stable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// Closing speed, m/s.
    pub closing_speed: f64,
    /// Tangential adjustment speed, m/s.
    pub adjust_speed: f64,
    /// Outward normal speed added while adjusting, m/s.
    pub normal_bleed: f64,
    /// Fingertip re-orientation speed, rad/s.
    pub rotation_speed: f64,
    /// Half-angle of the valid sensing cone around the reference point, rad.
    pub cone_half_angle: f64,
    /// Grasp counts as stable below this total angle, rad.
    pub stable_threshold: f64,
    /// Consecutive qualifying samples needed before declaring stability.
    pub hold_samples: usize,
    pub horizon: f64,
    pub collision_margin: f64,
    /// Joint velocity damping in the tracking objective.
    pub damping: f64,
    pub method: Method,
    pub sensor_rate: u32,
    pub control_rate: u32,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            closing_speed: 0.05,
            adjust_speed: 0.02,
            normal_bleed: 0.0,
            rotation_speed: 1.0,
            cone_half_angle: 45f64.to_radians(),
            stable_threshold: 20f64.to_radians(),
            hold_samples: 5,
            horizon: 0.1,
            collision_margin: 0.005,
            damping: 1e-3,
            method: Method::Cfgd,
            sensor_rate: 200,
            control_rate: 200,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |field, reason: &str| {
            Err(ControllerError::InvalidParam {
                field,
                reason: reason.to_string(),
            })
        };
        for (field, v) in [
            ("closing_speed", self.closing_speed),
            ("adjust_speed", self.adjust_speed),
            ("normal_bleed", self.normal_bleed),
            ("rotation_speed", self.rotation_speed),
            ("collision_margin", self.collision_margin),
            ("damping", self.damping),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, "must be finite and non-negative");
            }
        }
        if !(self.cone_half_angle > 0.0 && self.cone_half_angle < std::f64::consts::FRAC_PI_2) {
            return bad("cone_half_angle", "must lie in (0, pi/2)");
        }
        if !(self.stable_threshold.is_finite() && self.stable_threshold > 0.0) {
            return bad("stable_threshold", "must be positive");
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad("horizon", "must be positive");
        }
        if self.hold_samples == 0 {
            return bad("hold_samples", "must be at least 1");
        }
        if self.sensor_rate == 0 || self.control_rate == 0 {
            return bad("control_rate", "rates must be positive");
        }
        if self.control_rate > self.sensor_rate {
            return bad("control_rate", "must not exceed sensor_rate");
        }
        Ok(())
    }

    pub fn tracking(&self, min_gamma: f64) -> TrackingParams {
        TrackingParams {
            horizon: self.horizon,
            collision_margin: self.collision_margin.min(min_gamma),
            damping: self.damping,
        }
    }
}

/// One fingertip's tactile reading. `normal` is the pressing normal, from
/// the fingertip center toward the contact point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactState {
    pub in_contact: bool,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl ContactState {
    pub fn none() -> Self {
        Self {
            in_contact: false,
            point: Vector3::zeros(),
            normal: Vector3::zeros(),
        }
    }

    pub fn touching(point: Vector3<f64>, normal: Vector3<f64>) -> Self {
        Self {
            in_contact: true,
            point,
            normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub mode: Mode,
    pub latched_normals: Vec<Option<Vector3<f64>>>,
    pub last_sensor: Vec<ContactState>,
    pub stability: Option<StabilityEval>,
    /// Angle between each fingertip's reference direction and its contact.
    pub cone_angles: Vec<f64>,
    /// Consecutive samples with all contacts and `f` below threshold.
    pub stable_count: usize,
    pub transitions: usize,
}

impl ControllerState {
    pub fn new(tips: usize) -> Self {
        Self {
            mode: Mode::Closing,
            latched_normals: vec![None; tips],
            last_sensor: vec![ContactState::none(); tips],
            stability: None,
            cone_angles: vec![0.0; tips],
            stable_count: 0,
            transitions: 0,
        }
    }

    pub fn all_in_contact(&self) -> bool {
        self.last_sensor.iter().all(|s| s.in_contact)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingertipCommand {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
    pub alpha: f64,
}

impl FingertipCommand {
    pub fn linear(v: Vector3<f64>) -> Self {
        Self {
            linear: v,
            angular: Vector3::zeros(),
            alpha: 0.0,
        }
    }

    pub fn target(&self) -> TipTarget {
        TipTarget {
            linear: self.linear,
            angular: self.angular,
            alpha: self.alpha,
        }
    }
}

/// Pose data the velocity fields need for one fingertip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipFrame {
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub reference_direction: Unit<Vector3<f64>>,
}

pub fn tip_frames(state: &KinematicState, model: &RobotModel) -> Vec<TipFrame> {
    state
        .tips
        .iter()
        .zip(model.fingertips())
        .map(|(t, f)| TipFrame {
            position: t.position,
            rotation: t.rotation,
            reference_direction: f.reference_direction,
        })
        .collect()
}

/// Two-fingertip stability of a reading, `None` unless both touch and the
/// pair is well formed.
pub fn sensed_stability(sensor: &[ContactState]) -> Option<StabilityEval> {
    let [a, b] = sensor else { return None };
    if !(a.in_contact && b.in_contact) {
        return None;
    }
    let pair = ContactPair::new(a.point, b.point, a.normal, b.normal).ok()?;
    evaluate(&pair).ok()
}

/// Advances the mode machine by one sensor sample.
pub fn step_mode(
    state: &ControllerState,
    sensor: &[ContactState],
    params: &ControllerParams,
) -> ControllerState {
    let mut next = state.clone();
    next.last_sensor = sensor.to_vec();
    next.stability = sensed_stability(sensor);
    let all = sensor.iter().all(|s| s.in_contact);
    let below = next.stability.is_some_and(|e| e.f < params.stable_threshold);
    next.stable_count = if all && below { state.stable_count + 1 } else { 0 };

    next.mode = match state.mode {
        Mode::Stable => Mode::Stable,
        _ if all && below && next.stable_count >= params.hold_samples => Mode::Stable,
        Mode::Closing if all && !below => Mode::Adjusting,
        Mode::Closing => Mode::Closing,
        Mode::Adjusting if !all => Mode::Closing,
        Mode::Adjusting => Mode::Adjusting,
    };
    if next.mode != state.mode {
        next.transitions += 1;
    }
    if next.mode == Mode::Closing {
        if state.mode != Mode::Closing {
            next.latched_normals.iter_mut().for_each(|l| *l = None);
        }
        for (latch, s) in next.latched_normals.iter_mut().zip(sensor) {
            if latch.is_none() && s.in_contact {
                *latch = Some(s.normal);
            }
        }
    } else {
        next.latched_normals.iter_mut().for_each(|l| *l = None);
    }
    next
}

/// Closing field: toward the fingertip centroid until a fingertip first
/// touches, then along its latched pressing normal.
pub fn closing_velocities(
    state: &ControllerState,
    positions: &[Vector3<f64>],
    params: &ControllerParams,
) -> Result<Vec<FingertipCommand>, ControllerError> {
    if positions.len() != state.latched_normals.len() {
        return Err(ControllerError::TipCount(positions.len(), state.latched_normals.len()));
    }
    let centroid = positions.iter().sum::<Vector3<f64>>() / positions.len() as f64;
    positions
        .iter()
        .zip(&state.latched_normals)
        .enumerate()
        .map(|(i, (x, latch))| match latch {
            Some(n) => Ok(FingertipCommand::linear(n * params.closing_speed)),
            None => {
                let d = centroid - x;
                let norm = d.norm();
                if norm < CENTROID_EPS {
                    return Err(ControllerError::CentroidDegenerate(i));
                }
                Ok(FingertipCommand::linear(d * (params.closing_speed / norm)))
            }
        })
        .collect()
}

/// Angle to the reference cone and the angular velocity that shrinks it.
pub fn rotate_to_cone(
    position: &Vector3<f64>,
    rotation: &Rotation3<f64>,
    reference: &Unit<Vector3<f64>>,
    contact: &Vector3<f64>,
    params: &ControllerParams,
) -> Result<(f64, Vector3<f64>), ControllerError> {
    let to_contact = contact - position;
    if to_contact.norm() <= CENTROID_EPS {
        return Err(ControllerError::ContactAtCenter);
    }
    let u = rotation * reference.into_inner();
    let v = to_contact.normalize();
    let theta = angle_between(&u, &v)?;
    let axis = u.cross(&v);
    let norm = axis.norm();
    if norm >= AXIS_EPS {
        return Ok((theta, axis * (params.rotation_speed / norm)));
    }
    if theta <= params.cone_half_angle {
        return Ok((theta, Vector3::zeros()));
    }
    // Antiparallel: any axis normal to u works; take the one built from the
    // coordinate axis least aligned with u.
    let k = u.abs().imin();
    let axis = u.cross(&Vector3::ith(k, 1.0)).normalize();
    Ok((theta, axis * params.rotation_speed))
}

/// Adjusting field: tangential descent of the stability function plus an
/// optional outward bleed, and cone rotation where a contact strays.
pub fn adjustment_velocities(
    state: &ControllerState,
    frames: &[TipFrame],
    params: &ControllerParams,
) -> Result<(Vec<FingertipCommand>, Vec<f64>), ControllerError> {
    let sensor = &state.last_sensor;
    let [a, b] = sensor.as_slice() else {
        return Err(ControllerError::TipCount(sensor.len(), 2));
    };
    if frames.len() != 2 {
        return Err(ControllerError::TipCount(frames.len(), 2));
    }
    let pair = ContactPair::new(a.point, b.point, a.normal, b.normal)?;
    // A singular angle means that contact already presses along the chord.
    let (d1, d2) = params
        .method
        .direction(&pair)
        .unwrap_or_else(|_| (Vector3::zeros(), Vector3::zeros()));
    let sep = pair.separation();
    let mut commands = Vec::with_capacity(2);
    let mut angles = Vec::with_capacity(2);
    for ((d, s), frame) in [d1, d2].iter().zip(sensor).zip(frames) {
        let tangential = if d.norm() * sep < 1e-10 {
            Vector3::zeros()
        } else {
            d.normalize() * params.adjust_speed
        };
        let (theta, angular) = rotate_to_cone(
            &frame.position,
            &frame.rotation,
            &frame.reference_direction,
            &s.point,
            params,
        )?;
        let alpha = if theta > params.cone_half_angle { 1.0 } else { 0.0 };
        commands.push(FingertipCommand {
            linear: tangential - s.normal * params.normal_bleed,
            angular,
            alpha,
        });
        angles.push(theta);
    }
    Ok((commands, angles))
}

/// Common fingertip velocity that drives the fingertip midpoint to `target`.
pub fn reach_velocity(x1: &Vector3<f64>, x2: &Vector3<f64>, target: &Vector3<f64>) -> Vector3<f64> {
    target - (x1 + x2) / 2.0
}

/// Commands for the reaching phase: common translation, orientation held.
pub fn reach_commands(frames: &[TipFrame], target: &Vector3<f64>, max_speed: f64) -> Vec<FingertipCommand> {
    let mut v = match frames {
        [a, b] => reach_velocity(&a.position, &b.position, target),
        _ => {
            let mid = frames.iter().map(|f| f.position).sum::<Vector3<f64>>() / frames.len() as f64;
            target - mid
        }
    };
    if v.norm() > max_speed {
        v *= max_speed / v.norm();
    }
    frames
        .iter()
        .map(|_| FingertipCommand {
            linear: v,
            angular: Vector3::zeros(),
            alpha: 1.0,
        })
        .collect()
}

/// Result of one control tick.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub state: ControllerState,
    pub joint_velocity: DVector<f64>,
    pub commands: Vec<FingertipCommand>,
    /// `None` when no QP was needed.
    pub solution: Option<QpSolution>,
}

/// Solves the tracking QP for a set of fingertip commands.
pub fn track(
    commands: &[FingertipCommand],
    kin: &KinematicState,
    collisions: &CollisionValues,
    model: &RobotModel,
    params: &ControllerParams,
    solver: &QpSolver,
    warm: Option<&WarmStart>,
) -> Result<QpSolution, ControllerError> {
    let targets: Vec<TipTarget> = commands.iter().map(FingertipCommand::target).collect();
    let min_gamma = if collisions.gamma.is_empty() {
        f64::INFINITY
    } else {
        collisions.min()
    };
    let problem = assemble_tracking_qp(kin, &targets, model, collisions, &params.tracking(min_gamma))?;
    let sol = solver.solve(&problem, warm);
    if sol.status != QpStatus::Solved {
        return Err(ControllerError::SolverFailed(sol.status));
    }
    Ok(sol)
}

/// Mode step plus the fingertip commands of the new mode; `None` once
/// stable.
pub fn plan(
    state: &ControllerState,
    sensor: &[ContactState],
    kin: &KinematicState,
    model: &RobotModel,
    params: &ControllerParams,
) -> Result<(ControllerState, Option<Vec<FingertipCommand>>), ControllerError> {
    if sensor.len() != state.last_sensor.len() {
        return Err(ControllerError::TipCount(sensor.len(), state.last_sensor.len()));
    }
    let mut next = step_mode(state, sensor, params);
    let frames = tip_frames(kin, model);
    let commands = match next.mode {
        Mode::Stable => None,
        Mode::Closing => {
            let positions: Vec<_> = frames.iter().map(|f| f.position).collect();
            Some(closing_velocities(&next, &positions, params)?)
        }
        Mode::Adjusting => {
            let (commands, angles) = adjustment_velocities(&next, &frames, params)?;
            next.cone_angles = angles;
            Some(commands)
        }
    };
    Ok((next, commands))
}

/// One controller update: mode step, velocity fields, tracking QP.
#[allow(clippy::too_many_arguments)]
pub fn control_tick(
    state: &ControllerState,
    sensor: &[ContactState],
    kin: &KinematicState,
    collisions: &CollisionValues,
    model: &RobotModel,
    params: &ControllerParams,
    solver: &QpSolver,
    warm: Option<&WarmStart>,
) -> Result<TickOutput, ControllerError> {
    let (next, commands) = plan(state, sensor, kin, model, params)?;
    let Some(commands) = commands else {
        return Ok(TickOutput {
            state: next,
            joint_velocity: DVector::zeros(model.dof()),
            commands: Vec::new(),
            solution: None,
        });
    };
    let sol = track(&commands, kin, collisions, model, params, solver, warm)?;
    Ok(TickOutput {
        state: next,
        joint_velocity: sol.x.clone(),
        commands,
        solution: Some(sol),
    })
}

/// Stateful wrapper that owns the solver, warm starts and the policy for
/// failed solves: reuse the previous command for a few ticks, then stop.
#[derive(Debug, Clone)]
pub struct ReflexController {
    pub params: ControllerParams,
    solver: QpSolver,
    state: ControllerState,
    warm: Option<WarmStart>,
    last_command: DVector<f64>,
    failures: usize,
}

/// What the wrapper reports for each tick.
#[derive(Debug, Clone)]
pub struct TickReport {
    pub joint_velocity: DVector<f64>,
    pub qp_status: Option<QpStatus>,
    pub qp_iterations: usize,
    /// Error of this tick, if the failure policy replaced its command.
    pub error: Option<ControllerError>,
}

impl ReflexController {
    pub fn new(params: ControllerParams, model: &RobotModel) -> Result<Self, ControllerError> {
        params.validate()?;
        Ok(Self {
            params,
            solver: QpSolver::default(),
            state: ControllerState::new(model.fingertips().len()),
            warm: None,
            last_command: DVector::zeros(model.dof()),
            failures: 0,
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    fn finish(&mut self, result: Result<QpSolution, ControllerError>) -> Result<TickReport, ControllerError> {
        match result {
            Ok(sol) => {
                self.failures = 0;
                self.last_command = sol.x.clone();
                let report = TickReport {
                    joint_velocity: sol.x.clone(),
                    qp_status: Some(sol.status),
                    qp_iterations: sol.iterations,
                    error: None,
                };
                self.warm = Some(sol.warm_start());
                Ok(report)
            }
            Err(ControllerError::SolverFailed(status)) => {
                self.failures += 1;
                self.warm = None;
                if self.failures > MAX_HELD_FAILURES {
                    self.last_command.fill(0.0);
                }
                Ok(TickReport {
                    joint_velocity: self.last_command.clone(),
                    qp_status: Some(status),
                    qp_iterations: self.solver.settings.max_iters,
                    error: Some(ControllerError::SolverFailed(status)),
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Grasp control tick. Non-solver errors are returned to the caller.
    pub fn tick(
        &mut self,
        sensor: &[ContactState],
        kin: &KinematicState,
        collisions: &CollisionValues,
        model: &RobotModel,
    ) -> Result<TickReport, ControllerError> {
        let (next, commands) = plan(&self.state, sensor, kin, model, &self.params)?;
        self.state = next;
        let Some(commands) = commands else {
            self.last_command.fill(0.0);
            return Ok(TickReport {
                joint_velocity: self.last_command.clone(),
                qp_status: None,
                qp_iterations: 0,
                error: None,
            });
        };
        let result = track(
            &commands,
            kin,
            collisions,
            model,
            &self.params,
            &self.solver,
            self.warm.as_ref(),
        );
        self.finish(result)
    }

    /// Reaching tick toward `target`; does not touch the mode machine.
    pub fn reach_tick(
        &mut self,
        target: &Vector3<f64>,
        max_speed: f64,
        kin: &KinematicState,
        collisions: &CollisionValues,
        model: &RobotModel,
    ) -> Result<TickReport, ControllerError> {
        let commands = reach_commands(&tip_frames(kin, model), target, max_speed);
        let result = track(
            &commands,
            kin,
            collisions,
            model,
            &self.params,
            &self.solver,
            self.warm.as_ref(),
        );
        self.finish(result)
    }

    /// Records a sensor sample without a control update, for sensor ticks
    /// that fall between control ticks.
    pub fn observe(&mut self, sensor: &[ContactState]) {
        self.state.last_sensor = sensor.to_vec();
        self.state.stability = sensed_stability(sensor);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn touching(c: Vector3<f64>, n: Vector3<f64>) -> ContactState {
        ContactState::touching(c, n)
    }

    /// Antipodal pair across the y axis.
    fn antipodal() -> Vec<ContactState> {
        vec![touching(v(0.0, 0.05, 0.0), v(0.0, -1.0, 0.0)), touching(v(0.0, -0.05, 0.0), v(0.0, 1.0, 0.0))]
    }

    /// Both normals point along -y while the chord is along x: f = pi.
    fn skewed() -> Vec<ContactState> {
        vec![touching(v(0.05, 0.0, 0.0), v(0.0, -1.0, 0.0)), touching(v(-0.05, 0.0, 0.0), v(0.0, -1.0, 0.0))]
    }

    #[test]
    fn documented_transitions() {
        let p = ControllerParams {
            hold_samples: 1,
            ..Default::default()
        };
        let s = ControllerState::new(2);
        let none = vec![ContactState::none(); 2];
        assert_eq!(step_mode(&s, &none, &p).mode, Mode::Closing);

        let mut adj = ControllerState::new(2);
        adj.mode = Mode::Adjusting;
        let lost = vec![skewed()[0], ContactState::none()];
        let next = step_mode(&adj, &lost, &p);
        assert_eq!(next.mode, Mode::Closing);
        assert_eq!(next.latched_normals[0], Some(v(0.0, -1.0, 0.0)));
        assert_eq!(next.latched_normals[1], None);

        assert_eq!(step_mode(&adj, &antipodal(), &p).mode, Mode::Stable);
        assert_eq!(step_mode(&s, &skewed(), &p).mode, Mode::Adjusting);
    }

    #[test]
    fn stability_needs_consecutive_samples() {
        let p = ControllerParams::default();
        let mut s = ControllerState::new(2);
        s.mode = Mode::Adjusting;
        for _ in 0..p.hold_samples - 1 {
            s = step_mode(&s, &antipodal(), &p);
            assert_eq!(s.mode, Mode::Adjusting);
        }
        let broken = step_mode(&s, &skewed(), &p);
        assert_eq!(broken.stable_count, 0);
        assert_eq!(step_mode(&s, &antipodal(), &p).mode, Mode::Stable);
    }

    #[test]
    fn closing_examples() {
        let p = ControllerParams {
            closing_speed: 0.1,
            ..Default::default()
        };
        let mut s = ControllerState::new(2);
        let c = closing_velocities(&s, &[v(1.0, 0.0, 0.0), v(-1.0, 0.0, 0.0)], &p).unwrap();
        assert!((c[0].linear - v(-0.1, 0.0, 0.0)).norm() < 1e-15);
        assert!((c[1].linear - v(0.1, 0.0, 0.0)).norm() < 1e-15);

        s.latched_normals[0] = Some(v(0.0, -1.0, 0.0));
        let c = closing_velocities(&s, &[v(5.0, 3.0, 0.0), v(-1.0, 0.0, 0.0)], &p).unwrap();
        assert_eq!(c[0].linear, v(0.0, -0.1, 0.0));

        let s3 = ControllerState::new(3);
        let tri: Vec<_> = (0..3)
            .map(|k| {
                let a = k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                v(a.cos(), a.sin(), 0.0)
            })
            .collect();
        let c = closing_velocities(&s3, &tri, &p).unwrap();
        for (cmd, x) in c.iter().zip(&tri) {
            assert!((cmd.linear + x * 0.1).norm() < 1e-12);
        }

        let same = closing_velocities(&ControllerState::new(2), &[v(1.0, 0.0, 0.0); 2], &p);
        assert_eq!(same, Err(ControllerError::CentroidDegenerate(0)));
    }

    #[test]
    fn cone_examples() {
        let p = ControllerParams {
            rotation_speed: 1.0,
            ..Default::default()
        };
        let x = Vector3::zeros();
        let r = Rotation3::identity();
        let ex = Unit::new_normalize(v(1.0, 0.0, 0.0));
        let (t, w) = rotate_to_cone(&x, &r, &ex, &v(0.012, 0.0, 0.0), &p).unwrap();
        assert_eq!((t, w), (0.0, Vector3::zeros()));
        let (t, w) = rotate_to_cone(&x, &r, &ex, &v(0.0, 0.012, 0.0), &p).unwrap();
        assert!((t - FRAC_PI_2).abs() < 1e-15);
        assert!((w - v(0.0, 0.0, 1.0)).norm() < 1e-15);
        // Antiparallel: some axis normal to u at full speed.
        let (t, w) = rotate_to_cone(&x, &r, &ex, &v(-0.012, 0.0, 0.0), &p).unwrap();
        assert!((t - std::f64::consts::PI).abs() < 1e-15);
        assert!((w.norm() - 1.0).abs() < 1e-15 && w.x.abs() < 1e-15);
        assert_eq!(rotate_to_cone(&x, &r, &ex, &x, &p), Err(ControllerError::ContactAtCenter));
    }

    #[test]
    fn adjusting_commands_are_tangential_with_bleed() {
        let p = ControllerParams {
            normal_bleed: 0.002,
            ..Default::default()
        };
        let mut s = ControllerState::new(2);
        s.mode = Mode::Adjusting;
        s.last_sensor = vec![
            touching(v(0.01, 0.05, 0.0), v(0.3, -1.0, 0.1).normalize()),
            touching(v(-0.02, -0.05, 0.01), v(-0.2, 1.0, 0.0).normalize()),
        ];
        let frames: Vec<TipFrame> = s
            .last_sensor
            .iter()
            .map(|c| TipFrame {
                position: c.point - c.normal * 0.012,
                rotation: Rotation3::identity(),
                reference_direction: Unit::new_normalize(c.normal),
            })
            .collect();
        let (cmds, angles) = adjustment_velocities(&s, &frames, &p).unwrap();
        for (cmd, c) in cmds.iter().zip(&s.last_sensor) {
            assert!((cmd.linear.dot(&c.normal) + 0.002).abs() < 1e-9);
            assert!(cmd.alpha == 0.0);
        }
        assert!(angles.iter().all(|a| *a < 1e-7));
    }

    #[test]
    fn reach_examples() {
        let target = v(0.1, 0.0, 0.0);
        assert_eq!(reach_velocity(&v(0.0, 1.0, 0.0), &v(0.0, -1.0, 0.0), &Vector3::zeros()), Vector3::zeros());
        assert_eq!(reach_velocity(&v(0.0, 1.0, 0.0), &v(0.0, -1.0, 0.0), &target), target);
    }

    #[test]
    fn params_validation_and_json() {
        assert!(ControllerParams::default().validate().is_ok());
        let p = ControllerParams {
            control_rate: 400,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(ControllerError::InvalidParam { field: "control_rate", .. })));
        let p = ControllerParams {
            cone_half_angle: 2.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let json = serde_json::to_string(&ControllerParams::default()).unwrap();
        let back: ControllerParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ControllerParams::default());
        let partial: ControllerParams = serde_json::from_str(r#"{"method": "pgd"}"#).unwrap();
        assert_eq!(partial.method, Method::Pgd);
        assert!(serde_json::from_str::<ControllerParams>(r#"{"speed": 1}"#).is_err());
    }
}
