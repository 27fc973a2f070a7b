//! Quasi-static kinematic world: joint velocity integration, fingertip
//! contact with a fixed object, tactile readings and scenario rollouts.

use std::sync::mpsc;

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    reach_velocity, rotate_to_cone, tip_frames, ContactState, ControllerError, ControllerParams,
    Mode, ReflexController, TickReport,
};
use crate::kinematics::{KinematicState, RobotModel};
use crate::stability::{evaluate, ContactPair, StabilityEval};
use crate::surface::{Surface, SurfaceError};

pub const SCENARIO_SCHEMA: u32 = 1;

/// Objects sit on the table at this x, centered on the robot's y = 0 plane.
pub const OBJECT_X: f64 = 0.45;
pub const BOX_HALF_HEIGHT: f64 = 0.04;
pub const CYLINDER_HALF_HEIGHT: f64 = 0.05;

/// Fixed column order of trace CSVs.
pub const TRACE_COLUMNS: [&str; 11] = [
    "time_s",
    "mode",
    "phi1_rad",
    "phi2_rad",
    "f_rad",
    "tip1_contact",
    "tip2_contact",
    "theta1_rad",
    "theta2_rad",
    "qp_status",
    "qp_iters",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("invalid simulation parameter {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::InvalidParam {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub integration_rate: u32,
    /// Gap below which a fingertip counts as touching, m.
    pub contact_tol: f64,
    /// Standard deviation of the sensed contact point, m.
    pub position_noise: f64,
    /// Probability that a touching fingertip reports no contact.
    pub dropout_rate: f64,
    /// Time budget of the grasp phase, s.
    pub max_time: f64,
    pub reach_max_time: f64,
    /// Reaching ends once the fingertip midpoint is this close to the target.
    pub reach_tolerance: f64,
    pub reach_max_speed: f64,
    /// Object stops fingertip motion into it.
    pub block_contacts: bool,
    /// Run integration and control on separate threads.
    pub threaded: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            integration_rate: 1000,
            contact_tol: 1e-4,
            position_noise: 0.0,
            dropout_rate: 0.0,
            max_time: 10.0,
            reach_max_time: 5.0,
            reach_tolerance: 0.003,
            reach_max_speed: 0.1,
            block_contacts: true,
            threaded: false,
        }
    }
}

impl SimParams {
    pub fn validate(&self, controller: &ControllerParams) -> Result<(), SimError> {
        if self.integration_rate == 0 {
            return Err(invalid("integration_rate", "must be positive"));
        }
        if !self.integration_rate.is_multiple_of(controller.sensor_rate)
            || !self.integration_rate.is_multiple_of(controller.control_rate)
        {
            return Err(invalid(
                "integration_rate",
                "must be a multiple of sensor_rate and control_rate",
            ));
        }
        for (field, v) in [
            ("contact_tol", self.contact_tol),
            ("position_noise", self.position_noise),
            ("max_time", self.max_time),
            ("reach_max_time", self.reach_max_time),
            ("reach_tolerance", self.reach_tolerance),
            ("reach_max_speed", self.reach_max_speed),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, "must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(invalid("dropout_rate", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn steps(&self, seconds: f64) -> u64 {
        (seconds * f64::from(self.integration_rate)).round() as u64
    }
}

/// Closest surface point seen from a fingertip sphere, if touching.
/// Returns the contact on the fingertip sphere and the pressing normal.
pub fn detect_contact(
    center: &Vector3<f64>,
    radius: f64,
    object: &Surface,
    contact_tol: f64,
) -> Result<Option<(Vector3<f64>, Vector3<f64>)>, SurfaceError> {
    let (gap, dir) = signed_gap(center, radius, object)?;
    Ok((gap <= contact_tol).then(|| (center + dir * radius, dir)))
}

/// Gap between a fingertip sphere and the object (negative when
/// penetrating) and the unit direction from the fingertip center toward
/// the nearest surface point.
pub fn signed_gap(
    center: &Vector3<f64>,
    radius: f64,
    object: &Surface,
) -> Result<(f64, Vector3<f64>), SurfaceError> {
    let sp = object.project(center)?;
    let offset = sp.position - center;
    let dist = offset.norm();
    if object.implicit_value(center) < 0.0 {
        return Ok((-dist - radius, -sp.outward_normal));
    }
    if dist < 1e-12 {
        return Ok((-radius, -sp.outward_normal));
    }
    Ok((dist - radius, offset / dist))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Box,
    Cylinder,
    Ellipsoid,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Box, ObjectKind::Cylinder, ObjectKind::Ellipsoid];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectKind::Box => "box",
            ObjectKind::Cylinder => "cylinder",
            ObjectKind::Ellipsoid => "ellipsoid",
        }
    }

    /// Default sizes (half-width across the grasp axis), m.
    pub fn default_sizes(&self) -> [f64; 5] {
        [0.02, 0.025, 0.03, 0.035, 0.04]
    }

    /// Default perturbation magnitudes (rad for the box yaw, m otherwise).
    pub fn default_magnitudes(&self) -> [f64; 4] {
        match self {
            ObjectKind::Box => [7.5, 15.0, 22.5, 30.0].map(f64::to_radians),
            ObjectKind::Cylinder => [0.004, 0.008, 0.012, 0.016],
            ObjectKind::Ellipsoid => [0.003, 0.006, 0.009, 0.012],
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        match self {
            ObjectKind::Box => 30f64.to_radians(),
            ObjectKind::Cylinder | ObjectKind::Ellipsoid => 0.03,
        }
    }
}

/// Object on the table and the reaching target handed to the robot.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub object: Surface,
    pub target: Vector3<f64>,
}

impl Scenario {
    /// Unperturbed object of the given size, target at its center.
    pub fn nominal(kind: ObjectKind, size: f64) -> Result<Self, SurfaceError> {
        let (object, height) = match kind {
            ObjectKind::Box => (Surface::cuboid(size, size, BOX_HALF_HEIGHT)?, BOX_HALF_HEIGHT),
            ObjectKind::Cylinder => (Surface::cylinder(size, CYLINDER_HALF_HEIGHT)?, CYLINDER_HALF_HEIGHT),
            ObjectKind::Ellipsoid => (Surface::ellipsoid(1.2 * size, size, 1.1 * size)?, 1.1 * size),
        };
        let center = Vector3::new(OBJECT_X, 0.0, height);
        Ok(Self {
            object: object.with_pose(Isometry3::from_parts(Translation3::from(center), UnitQuaternion::identity())),
            target: center,
        })
    }

    pub fn object_center(&self) -> Vector3<f64> {
        self.object.pose().translation.vector
    }
}

/// Applies the perturbation for `kind`: a yaw for boxes, a target offset
/// along x (horizontal, across the grasp axis) for cylinders and along z
/// (table normal) for ellipsoids. The box yaw is drawn from
/// `±U(magnitude/2, magnitude)`.
pub fn apply_perturbation(
    scenario: &Scenario,
    kind: ObjectKind,
    magnitude: f64,
    rng: &mut impl Rng,
) -> Result<Scenario, SimError> {
    if !(magnitude >= 0.0 && magnitude <= kind.max_magnitude()) {
        return Err(invalid("magnitude", format!("must lie in [0, {}]", kind.max_magnitude())));
    }
    let mut out = scenario.clone();
    match kind {
        ObjectKind::Box => {
            let yaw = if magnitude == 0.0 {
                0.0
            } else {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                sign * rng.random_range(magnitude / 2.0..=magnitude)
            };
            let pose = *scenario.object.pose();
            let rotated = Isometry3::from_parts(
                pose.translation,
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * pose.rotation,
            );
            out.object = scenario.object.clone().with_pose(rotated);
        }
        ObjectKind::Cylinder => out.target += Vector3::x() * magnitude,
        ObjectKind::Ellipsoid => out.target += Vector3::z() * magnitude,
    }
    Ok(out)
}

/// Vanilla closes and stops at the first all-contact sample; reflex runs the
/// full closing/adjusting controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    Reflex,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Reflex => "reflex",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub object: ObjectKind,
    pub size: f64,
    #[serde(default)]
    pub magnitude: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub controller: ControllerParams,
    #[serde(default)]
    pub sim: SimParams,
}

fn default_variant() -> Variant {
    Variant::Reflex
}

impl ScenarioConfig {
    pub fn new(object: ObjectKind, size: f64, magnitude: f64, seed: u64) -> Self {
        Self {
            schema: SCENARIO_SCHEMA,
            object,
            size,
            magnitude,
            seed,
            variant: Variant::Reflex,
            controller: ControllerParams::default(),
            sim: SimParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(invalid("schema", format!("unsupported version {}", self.schema)));
        }
        if !(self.size.is_finite() && self.size > 0.0) {
            return Err(invalid("size", "must be positive"));
        }
        self.controller.validate()?;
        self.sim.validate(&self.controller)
    }

    /// Perturbed scenario; the perturbation draws from its own stream of
    /// the seed so variants sharing a seed see the same object.
    pub fn scenario(&self) -> Result<Scenario, SimError> {
        let nominal = Scenario::nominal(self.object, self.size)?;
        let mut rng = stream(self.seed, 0);
        apply_perturbation(&nominal, self.object, self.magnitude, &mut rng)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Reflex: stability confirmed. Vanilla: all fingertips touching.
    Stable,
    Timeout,
    Error,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Stable => "stable",
            Outcome::Timeout => "timeout",
            Outcome::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time_s: f64,
    pub mode: String,
    pub phi1_rad: Option<f64>,
    pub phi2_rad: Option<f64>,
    pub f_rad: Option<f64>,
    pub tip1_contact: bool,
    pub tip2_contact: bool,
    pub theta1_rad: Option<f64>,
    pub theta2_rad: Option<f64>,
    pub qp_status: String,
    pub qp_iters: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub integration_steps: u64,
    pub sensor_samples: u64,
    pub control_ticks: u64,
    pub qp_solves: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub outcome: Outcome,
    /// Noise-free stability at the stop, when both fingertips touch.
    pub final_eval: Option<StabilityEval>,
    pub reach_time: f64,
    /// Time spent after reaching.
    pub grasp_time: f64,
    /// Control ticks after reaching.
    pub grasp_ticks: u64,
    pub transitions: usize,
    pub max_penetration: f64,
    pub stats: RunStats,
    pub trace: Vec<TraceRow>,
    pub error: Option<String>,
    pub object: Surface,
}

/// Kinematic world state: robot configuration, fixed object, clocks.
#[derive(Debug, Clone)]
pub struct World {
    pub model: RobotModel,
    pub object: Surface,
    pub q: DVector<f64>,
    /// Integration steps taken.
    pub step: u64,
    pub params: SimParams,
    noise: ChaCha8Rng,
    max_penetration: f64,
}

impl World {
    pub fn new(model: RobotModel, object: Surface, q: DVector<f64>, params: SimParams, seed: u64) -> Self {
        Self {
            model,
            object,
            q,
            step: 0,
            params,
            noise: stream(seed, 1),
            max_penetration: 0.0,
        }
    }

    pub fn time(&self) -> f64 {
        self.step as f64 / f64::from(self.params.integration_rate)
    }

    pub fn max_penetration(&self) -> f64 {
        self.max_penetration
    }

    /// Noise-free contacts of every fingertip.
    pub fn true_contacts(&self, kin: &KinematicState) -> Result<Vec<ContactState>, SurfaceError> {
        kin.tips
            .iter()
            .zip(self.model.fingertips())
            .map(|(t, f)| {
                Ok(match detect_contact(&t.position, f.radius, &self.object, self.params.contact_tol)? {
                    Some((c, n)) => ContactState::touching(c, n),
                    None => ContactState::none(),
                })
            })
            .collect()
    }

    /// Tactile reading with noise and dropout. The noisy point is put back
    /// on the fingertip sphere and the normal recomputed from it.
    pub fn sense(&mut self, kin: &KinematicState) -> Result<Vec<ContactState>, SurfaceError> {
        let truth = self.true_contacts(kin)?;
        let sigma = self.params.position_noise;
        let mut out = Vec::with_capacity(truth.len());
        for ((c, t), f) in truth.into_iter().zip(&kin.tips).zip(self.model.fingertips()) {
            if !c.in_contact {
                out.push(c);
                continue;
            }
            if self.params.dropout_rate > 0.0 && self.noise.random_bool(self.params.dropout_rate) {
                out.push(ContactState::none());
                continue;
            }
            let mut point = c.point;
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                point += Vector3::from_fn(|_, _| normal.sample(&mut self.noise));
            }
            let dir = (point - t.position).try_normalize(1e-12).unwrap_or(c.normal);
            out.push(ContactState::touching(t.position + dir * f.radius, dir));
        }
        Ok(out)
    }

    /// Removes the inward normal velocity of touching fingertips and
    /// leaves their other motion as it was: the stacked fingertip velocity
    /// is edited, then mapped back through the pseudo-inverse of the
    /// stacked positional Jacobian.
    fn block(&mut self, kin: &KinematicState, qd: &DVector<f64>) -> Result<DVector<f64>, SurfaceError> {
        let m = kin.tips.len();
        let mut wanted = DVector::zeros(3 * m);
        let mut changed = false;
        for (i, (t, f)) in kin.tips.iter().zip(self.model.fingertips()).enumerate() {
            let (gap, dir) = signed_gap(&t.position, f.radius, &self.object)?;
            self.max_penetration = self.max_penetration.max(-gap);
            let mut v = &t.jx * qd;
            let pressing = v.dot(&dir);
            if self.params.block_contacts && gap <= self.params.contact_tol && pressing > 0.0 {
                v -= dir * pressing;
                changed = true;
            }
            wanted.rows_mut(3 * i, 3).copy_from(&v);
        }
        if !changed {
            return Ok(qd.clone());
        }
        let mut j = DMatrix::zeros(3 * m, qd.len());
        for (i, t) in kin.tips.iter().enumerate() {
            j.rows_mut(3 * i, 3).copy_from(&t.jx);
        }
        let residual = &wanted - &j * qd;
        let gram = &j * j.transpose();
        match gram.cholesky() {
            Some(c) => Ok(qd + j.transpose() * c.solve(&residual)),
            // Singular fingertip Jacobian: stop rather than guess.
            None => Ok(DVector::zeros(qd.len())),
        }
    }

    /// One integration step with joint velocity `qd` held over it.
    pub fn integrate(&mut self, kin: &KinematicState, qd: &DVector<f64>) -> Result<(), SurfaceError> {
        let v = self.block(kin, qd)?;
        let dt = 1.0 / f64::from(self.params.integration_rate);
        self.q = self.model.clamp_to_limits(&(&self.q + v * dt));
        self.step += 1;
        Ok(())
    }
}

/// Phase of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Reach,
    Grasp,
}

/// Per-sample bookkeeping shared by the sequential and threaded loops.
struct Rollout<'a> {
    config: &'a ScenarioConfig,
    target: Vector3<f64>,
    sensor_div: u64,
    control_div: u64,
    reach_steps: u64,
    grasp_steps: u64,
    phase: Phase,
    grasp_start: u64,
    grasp_ticks: u64,
    stats: RunStats,
    trace: Vec<TraceRow>,
}

enum SampleAction {
    Continue,
    Finish(Outcome),
}

impl<'a> Rollout<'a> {
    fn new(config: &'a ScenarioConfig, target: Vector3<f64>) -> Self {
        let rate = u64::from(config.sim.integration_rate);
        Self {
            config,
            target,
            sensor_div: rate / u64::from(config.controller.sensor_rate),
            control_div: rate / u64::from(config.controller.control_rate),
            reach_steps: config.sim.steps(config.sim.reach_max_time),
            grasp_steps: config.sim.steps(config.sim.max_time),
            phase: Phase::Reach,
            grasp_start: 0,
            grasp_ticks: 0,
            stats: RunStats::default(),
            trace: Vec::new(),
        }
    }

    /// True once the grasp phase has used up its integration budget.
    fn expired(&self, step: u64) -> bool {
        self.phase == Phase::Grasp && step - self.grasp_start >= self.grasp_steps
    }

    /// Phase changes and stop conditions at a sensor sample.
    fn on_sample(&mut self, step: u64, kin: &KinematicState, sensor: &[ContactState]) -> SampleAction {
        if self.phase == Phase::Reach {
            let mid_err = match kin.tips.as_slice() {
                [a, b] => reach_velocity(&a.position, &b.position, &self.target).norm(),
                _ => 0.0,
            };
            let touched = sensor.iter().any(|s| s.in_contact);
            if step >= self.reach_steps || touched || mid_err <= self.config.sim.reach_tolerance {
                self.phase = Phase::Grasp;
                self.grasp_start = step;
            }
        }
        if self.phase == Phase::Grasp {
            if step - self.grasp_start >= self.grasp_steps {
                return SampleAction::Finish(Outcome::Timeout);
            }
            if self.config.variant == Variant::Vanilla && sensor.iter().all(|s| s.in_contact) {
                return SampleAction::Finish(Outcome::Stable);
            }
        }
        SampleAction::Continue
    }

    fn record(
        &mut self,
        step: u64,
        mode: &str,
        sensor: &[ContactState],
        kin: &KinematicState,
        model: &RobotModel,
        report: Option<&TickReport>,
    ) {
        let eval = sensor_eval(sensor);
        let frames = tip_frames(kin, model);
        let theta = |i: usize| -> Option<f64> {
            let s = sensor.get(i)?;
            let f = frames.get(i)?;
            if !s.in_contact {
                return None;
            }
            rotate_to_cone(&f.position, &f.rotation, &f.reference_direction, &s.point, &self.config.controller)
                .ok()
                .map(|(t, _)| t)
        };
        let (qp_status, qp_iters) = match report.and_then(|r| r.qp_status.map(|s| (s, r.qp_iterations))) {
            Some((s, it)) => (s.as_str().to_string(), it),
            None => ("none".to_string(), 0),
        };
        self.trace.push(TraceRow {
            time_s: step as f64 / f64::from(self.config.sim.integration_rate),
            mode: mode.to_string(),
            phi1_rad: eval.map(|e| e.phi1),
            phi2_rad: eval.map(|e| e.phi2),
            f_rad: eval.map(|e| e.f),
            tip1_contact: sensor.first().is_some_and(|s| s.in_contact),
            tip2_contact: sensor.get(1).is_some_and(|s| s.in_contact),
            theta1_rad: theta(0),
            theta2_rad: theta(1),
            qp_status,
            qp_iters,
        });
    }
}

fn sensor_eval(sensor: &[ContactState]) -> Option<StabilityEval> {
    let [a, b] = sensor else { return None };
    if !(a.in_contact && b.in_contact) {
        return None;
    }
    evaluate(&ContactPair::new(a.point, b.point, a.normal, b.normal).ok()?).ok()
}

fn control(
    ctrl: &mut ReflexController,
    phase: Phase,
    target: &Vector3<f64>,
    reach_speed: f64,
    sensor: &[ContactState],
    kin: &KinematicState,
    model: &RobotModel,
) -> Result<TickReport, ControllerError> {
    let col = model.collision_values_at(&kin.frames);
    match phase {
        Phase::Reach => ctrl.reach_tick(target, reach_speed, kin, &col, model),
        Phase::Grasp => ctrl.tick(sensor, kin, &col, model),
    }
}

fn mode_label(phase: Phase, mode: Mode) -> &'static str {
    match phase {
        Phase::Reach => "reaching",
        Phase::Grasp => mode.as_str(),
    }
}

/// Runs the scenario described by `config` from the model's home
/// configuration.
pub fn run_scenario(config: &ScenarioConfig, model: &RobotModel) -> Result<RunResult, SimError> {
    config.validate()?;
    run_with_scenario(config, &config.scenario()?, model)
}

/// Like [`run_scenario`] with an explicit object and target; the object
/// fields of `config` are ignored.
pub fn run_with_scenario(
    config: &ScenarioConfig,
    scenario: &Scenario,
    model: &RobotModel,
) -> Result<RunResult, SimError> {
    config.controller.validate()?;
    config.sim.validate(&config.controller)?;
    let world = World::new(
        model.clone(),
        scenario.object.clone(),
        model.home().clone(),
        config.sim.clone(),
        config.seed,
    );
    let ctrl = ReflexController::new(config.controller.clone(), model)?;
    if config.sim.threaded {
        Ok(run_threaded(config, scenario.target, world, ctrl))
    } else {
        Ok(run_sequential(config, scenario.target, world, ctrl))
    }
}

fn finish(
    world: &World,
    rollout: Rollout<'_>,
    outcome: Outcome,
    transitions: usize,
    error: Option<String>,
) -> RunResult {
    let kin = world.model.forward_kinematics(&world.q);
    let final_eval = world.true_contacts(&kin).ok().and_then(|c| sensor_eval(&c));
    let rate = f64::from(world.params.integration_rate);
    let grasp_time = match rollout.phase {
        Phase::Reach => 0.0,
        Phase::Grasp => (world.step - rollout.grasp_start) as f64 / rate,
    };
    let reach_time = match rollout.phase {
        Phase::Reach => world.time(),
        Phase::Grasp => rollout.grasp_start as f64 / rate,
    };
    RunResult {
        outcome,
        final_eval,
        reach_time,
        grasp_time,
        grasp_ticks: rollout.grasp_ticks,
        transitions,
        max_penetration: world.max_penetration,
        stats: rollout.stats,
        trace: rollout.trace,
        error,
        object: world.object.clone(),
    }
}

fn run_sequential(
    config: &ScenarioConfig,
    target: Vector3<f64>,
    mut world: World,
    mut ctrl: ReflexController,
) -> RunResult {
    let mut r = Rollout::new(config, target);
    let mut held = DVector::zeros(world.model.dof());
    let model = world.model.clone();
    loop {
        let step = world.step;
        if r.expired(step) {
            return finish(&world, r, Outcome::Timeout, ctrl.state().transitions, None);
        }
        let kin = model.forward_kinematics(&world.q);
        if step.is_multiple_of(r.sensor_div) {
            let sensor = match world.sense(&kin) {
                Ok(s) => s,
                Err(e) => return finish(&world, r, Outcome::Error, ctrl.state().transitions, Some(e.to_string())),
            };
            r.stats.sensor_samples += 1;
            let action = r.on_sample(step, &kin, &sensor);
            let mut report = None;
            if matches!(action, SampleAction::Continue) && step.is_multiple_of(r.control_div) {
                r.stats.control_ticks += 1;
                match control(&mut ctrl, r.phase, &target, config.sim.reach_max_speed, &sensor, &kin, &model) {
                    Ok(rep) => {
                        if rep.qp_status.is_some() {
                            r.stats.qp_solves += 1;
                        }
                        if r.phase == Phase::Grasp {
                            r.grasp_ticks += 1;
                        }
                        held = rep.joint_velocity.clone();
                        report = Some(rep);
                    }
                    Err(e) => {
                        return finish(&world, r, Outcome::Error, ctrl.state().transitions, Some(e.to_string()))
                    }
                }
            } else if r.phase == Phase::Grasp {
                ctrl.observe(&sensor);
            }
            r.record(step, mode_label(r.phase, ctrl.mode()), &sensor, &kin, &model, report.as_ref());
            if let SampleAction::Finish(outcome) = action {
                return finish(&world, r, outcome, ctrl.state().transitions, None);
            }
            if r.phase == Phase::Grasp && ctrl.mode() == Mode::Stable {
                return finish(&world, r, Outcome::Stable, ctrl.state().transitions, None);
            }
        }
        if let Err(e) = world.integrate(&kin, &held) {
            return finish(&world, r, Outcome::Error, ctrl.state().transitions, Some(e.to_string()));
        }
        r.stats.integration_steps += 1;
    }
}

struct Request {
    phase: Phase,
    sensor: Vec<ContactState>,
    kin: KinematicState,
}

struct Reply {
    result: Result<TickReport, ControllerError>,
    mode: Mode,
    transitions: usize,
}

/// Latest controller output as seen by the integration thread.
struct ControlView {
    mode: Mode,
    transitions: usize,
    last_report: Option<TickReport>,
}

impl ControlView {
    fn absorb(&mut self, reply: Reply, held: &mut DVector<f64>, stats: &mut RunStats) -> Result<(), String> {
        self.mode = reply.mode;
        self.transitions = reply.transitions;
        let rep = reply.result.map_err(|e| e.to_string())?;
        if rep.qp_status.is_some() {
            stats.qp_solves += 1;
        }
        *held = rep.joint_velocity.clone();
        self.last_report = Some(rep);
        Ok(())
    }
}

/// Integration on the calling thread, control on a worker. Each control
/// request is answered before the next one is sent, so the command lags by
/// at most one control period; when within that period it takes effect
/// depends on scheduling.
fn run_threaded(
    config: &ScenarioConfig,
    target: Vector3<f64>,
    mut world: World,
    mut ctrl: ReflexController,
) -> RunResult {
    let (req_tx, req_rx) = mpsc::channel::<Request>();
    let (rep_tx, rep_rx) = mpsc::channel::<Reply>();
    let model = world.model.clone();
    let reach_speed = config.sim.reach_max_speed;
    std::thread::scope(|scope| {
        let worker_model = model.clone();
        scope.spawn(move || {
            for req in req_rx {
                let result = control(&mut ctrl, req.phase, &target, reach_speed, &req.sensor, &req.kin, &worker_model);
                let reply = Reply {
                    result,
                    mode: ctrl.mode(),
                    transitions: ctrl.state().transitions,
                };
                if rep_tx.send(reply).is_err() {
                    break;
                }
            }
        });

        let mut r = Rollout::new(config, target);
        let mut held = DVector::zeros(model.dof());
        let mut pending = false;
        let mut view = ControlView {
            mode: Mode::Closing,
            transitions: 0,
            last_report: None,
        };
        let outcome = loop {
            let step = world.step;
            if r.expired(step) {
                break (Outcome::Timeout, None);
            }
            let kin = model.forward_kinematics(&world.q);
            if pending {
                if let Ok(reply) = rep_rx.try_recv() {
                    pending = false;
                    if let Err(e) = view.absorb(reply, &mut held, &mut r.stats) {
                        break (Outcome::Error, Some(e));
                    }
                }
            }
            if step.is_multiple_of(r.sensor_div) {
                let sensor = match world.sense(&kin) {
                    Ok(s) => s,
                    Err(e) => break (Outcome::Error, Some(e.to_string())),
                };
                r.stats.sensor_samples += 1;
                let action = r.on_sample(step, &kin, &sensor);
                if r.phase == Phase::Grasp && view.mode == Mode::Stable {
                    break (Outcome::Stable, None);
                }
                if let SampleAction::Finish(outcome) = action {
                    r.record(step, mode_label(r.phase, view.mode), &sensor, &kin, &model, None);
                    break (outcome, None);
                }
                if step.is_multiple_of(r.control_div) {
                    if pending {
                        match rep_rx.recv() {
                            Ok(reply) => {
                                if let Err(e) = view.absorb(reply, &mut held, &mut r.stats) {
                                    break (Outcome::Error, Some(e));
                                }
                            }
                            Err(e) => break (Outcome::Error, Some(e.to_string())),
                        }
                    }
                    r.stats.control_ticks += 1;
                    if r.phase == Phase::Grasp {
                        r.grasp_ticks += 1;
                    }
                    let req = Request {
                        phase: r.phase,
                        sensor: sensor.clone(),
                        kin: kin.clone(),
                    };
                    if req_tx.send(req).is_err() {
                        break (Outcome::Error, Some("control thread stopped".into()));
                    }
                    pending = true;
                }
                r.record(step, mode_label(r.phase, view.mode), &sensor, &kin, &model, view.last_report.take().as_ref());
            }
            if let Err(e) = world.integrate(&kin, &held) {
                break (Outcome::Error, Some(e.to_string()));
            }
            r.stats.integration_steps += 1;
        };
        drop(req_tx);
        if pending {
            let _ = rep_rx.recv();
        }
        finish(&world, r, outcome.0, view.transitions, outcome.1)
    })
}

/// Writes trace rows as CSV with the fixed header.
pub fn write_trace<W: std::io::Write>(rows: &[TraceRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(TRACE_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
