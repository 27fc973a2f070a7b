//! Contact-point descent on a single object boundary.
//!
//! Two contact points walk over the surface along the PGD or CFGD direction
//! and are projected back after every step. [`run_table1`] repeats this over
//! random shapes and initializations and reports convergence rates per family.

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stability::{
    descent_direction, evaluate, grad_phi, tangent_project, Angle, Contact, ContactPair, Method,
    StabilityError, StabilityEval,
};
use crate::surface::{Surface, SurfaceError, SurfacePoint};

/// A direction whose norm times the contact separation is below this is zero.
pub const ZERO_DIRECTION: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescentError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("invalid descent configuration: {0}")]
    InvalidConfig(String),
    #[error("initial point {0:?} is not on the boundary")]
    OffBoundary(Vector3<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub method: Method,
    /// Initial step length (world units).
    pub step_size: f64,
    pub max_iters: usize,
    /// Convergence threshold on `f` (rad).
    pub converge_tol: f64,
    /// Band around a right angle used to label stalls (rad).
    pub right_angle_tol: f64,
    /// Both contacts moving less than this in one iteration is a stall.
    pub stall_tol: f64,
    /// Each contact's step is multiplied by this when its direction reverses.
    pub step_shrink: f64,
    pub record_trajectory: bool,
    /// Carried through to results; the descent itself is deterministic.
    pub seed: u64,
}

impl DescentConfig {
    /// Defaults scaled to the object: step 1 % of its size, stall 1e-6 of it.
    pub fn for_surface(method: Method, surface: &Surface) -> Self {
        let size = surface.characteristic_size();
        Self {
            method,
            step_size: 0.01 * size,
            max_iters: 2000,
            converge_tol: 2f64.to_radians(),
            right_angle_tol: 3f64.to_radians(),
            stall_tol: 1e-6 * size,
            step_shrink: 0.5,
            record_trajectory: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DescentError> {
        let bad = |msg: &str| Err(DescentError::InvalidConfig(msg.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.converge_tol > 0.0) {
            return bad("converge_tol must be positive");
        }
        if !(self.right_angle_tol > 0.0) {
            return bad("right_angle_tol must be positive");
        }
        if !(self.stall_tol >= 0.0) {
            return bad("stall_tol must be non-negative");
        }
        if !(self.step_shrink > 0.0 && self.step_shrink <= 1.0) {
            return bad("step_shrink must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DescentStatus {
    Converged,
    LocalMinimum,
    RightAngleFailure,
    IterLimit,
}

impl DescentStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            DescentStatus::Converged => "Converged",
            DescentStatus::LocalMinimum => "LocalMinimum",
            DescentStatus::RightAngleFailure => "RightAngleFailure",
            DescentStatus::IterLimit => "IterLimit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub c1: [f64; 3],
    pub c2: [f64; 3],
    pub phi1: f64,
    pub phi2: f64,
}

/// Tangential gradients at the final contacts, scaled by the contact
/// separation so they are dimensionless. The larger of the two contacts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientDiagnostics {
    pub tangential_grad_f: f64,
    pub tangential_grad_phi1: f64,
    pub tangential_grad_phi2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentOutcome {
    pub status: DescentStatus,
    pub final_eval: StabilityEval,
    pub iters: usize,
    pub final_c1: [f64; 3],
    pub final_c2: [f64; 3],
    pub diagnostics: GradientDiagnostics,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

fn pair_at(s: &Surface, c1: &Vector3<f64>, c2: &Vector3<f64>) -> Result<ContactPair, DescentError> {
    let n1 = -s.outward_normal(c1)?;
    let n2 = -s.outward_normal(c2)?;
    Ok(ContactPair::new(*c1, *c2, n1, n2)?)
}

/// Tangential gradient magnitudes at a contact pair; singular terms count as zero.
pub fn gradient_diagnostics(cp: &ContactPair) -> GradientDiagnostics {
    let g = |angle, wrt| grad_phi(cp, angle, wrt).unwrap_or_else(|_| Vector3::zeros());
    let scale = cp.separation();
    let tangential = |angle: Option<Angle>| {
        [(Contact::C1, cp.n1()), (Contact::C2, cp.n2())]
            .into_iter()
            .map(|(wrt, n)| {
                let grad = match angle {
                    Some(a) => g(a, wrt),
                    None => g(Angle::Phi1, wrt) + g(Angle::Phi2, wrt),
                };
                tangent_project(n, &grad).norm() * scale
            })
            .fold(0.0, f64::max)
    };
    GradientDiagnostics {
        tangential_grad_f: tangential(None),
        tangential_grad_phi1: tangential(Some(Angle::Phi1)),
        tangential_grad_phi2: tangential(Some(Angle::Phi2)),
    }
}

fn to_array(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Walks both contacts until convergence, a stall or the iteration budget.
///
/// Each contact moves a fixed length along its normalized direction. When a
/// contact's direction reverses relative to its previous one, its step length
/// is multiplied by `step_shrink`; this is what lets an oscillation around a
/// stationary configuration register as a stall.
pub fn run_descent(
    s: &Surface,
    init1: &SurfacePoint,
    init2: &SurfacePoint,
    cfg: &DescentConfig,
) -> Result<DescentOutcome, DescentError> {
    cfg.validate()?;
    for p in [init1, init2] {
        if !s.on_boundary(&p.position) {
            return Err(DescentError::OffBoundary(p.position));
        }
    }
    let mut c1 = init1.position;
    let mut c2 = init2.position;
    let mut cp = pair_at(s, &c1, &c2)?;
    let mut eval = evaluate(&cp)?;
    let mut trajectory = cfg.record_trajectory.then(Vec::new);
    let mut steps = [cfg.step_size; 2];
    let mut previous: [Option<Vector3<f64>>; 2] = [None, None];
    let mut iters = 0;

    let record = |traj: &mut Option<Vec<TrajectoryPoint>>, c1: &Vector3<f64>, c2: &Vector3<f64>, e: &StabilityEval| {
        if let Some(t) = traj.as_mut() {
            t.push(TrajectoryPoint {
                c1: to_array(c1),
                c2: to_array(c2),
                phi1: e.phi1,
                phi2: e.phi2,
            });
        }
    };
    record(&mut trajectory, &c1, &c2, &eval);

    let status = loop {
        if eval.f < cfg.converge_tol {
            break DescentStatus::Converged;
        }
        if iters >= cfg.max_iters {
            break DescentStatus::IterLimit;
        }
        let (d1, d2) = descent_direction(&cp, cfg.method);
        let separation = cp.separation();
        let mut moved = [0.0; 2];
        let mut next = [c1, c2];
        for (k, d) in [d1, d2].into_iter().enumerate() {
            if d.norm() * separation < ZERO_DIRECTION {
                previous[k] = None;
                continue;
            }
            let dir = d.normalize();
            if let Some(prev) = previous[k] {
                if prev.dot(&dir) < 0.0 {
                    steps[k] *= cfg.step_shrink;
                }
            }
            previous[k] = Some(dir);
            let projected = s.project(&(next[k] + dir * steps[k]))?.position;
            moved[k] = (projected - next[k]).norm();
            next[k] = projected;
        }
        [c1, c2] = next;
        cp = pair_at(s, &c1, &c2)?;
        eval = evaluate(&cp)?;
        iters += 1;
        record(&mut trajectory, &c1, &c2, &eval);

        if moved[0] < cfg.stall_tol && moved[1] < cfg.stall_tol && eval.f >= cfg.converge_tol {
            break if eval.is_right_angle(cfg.right_angle_tol) {
                DescentStatus::RightAngleFailure
            } else {
                DescentStatus::LocalMinimum
            };
        }
    };

    Ok(DescentOutcome {
        status,
        final_eval: eval,
        iters,
        final_c1: to_array(&c1),
        final_c2: to_array(&c2),
        diagnostics: gradient_diagnostics(&cp),
        trajectory,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Ellipsoid,
    Superquadric,
    Torus,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 3] = [
        ShapeFamily::Ellipsoid,
        ShapeFamily::Superquadric,
        ShapeFamily::Torus,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeFamily::Ellipsoid => "ellipsoid",
            ShapeFamily::Superquadric => "superquadric",
            ShapeFamily::Torus => "torus",
        }
    }
}

/// Closed sampling interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }

    fn valid(&self) -> bool {
        self.0.is_finite() && self.1.is_finite() && self.0 > 0.0 && self.0 <= self.1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeRanges {
    pub ellipsoid_axes: Range,
    pub superquadric_axes: Range,
    pub superquadric_exponents: Range,
    pub torus_major: Range,
    /// Minor radius as a fraction of the sampled major radius.
    pub torus_minor_ratio: Range,
}

impl Default for ShapeRanges {
    fn default() -> Self {
        Self {
            ellipsoid_axes: Range(0.5, 2.0),
            superquadric_axes: Range(0.5, 2.0),
            superquadric_exponents: Range(0.3, 1.8),
            torus_major: Range(1.0, 2.0),
            torus_minor_ratio: Range(0.2, 0.45),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Config {
    pub schema: u32,
    pub families: Vec<ShapeFamily>,
    pub ranges: ShapeRanges,
    pub trials: usize,
    pub seed: u64,
    /// Step length as a fraction of the object's characteristic size.
    pub step_fraction: f64,
    /// Stall threshold as a fraction of the object's characteristic size.
    pub stall_fraction: f64,
    pub step_shrink: f64,
    pub max_iters: usize,
    pub converge_tol_deg: f64,
    pub right_angle_tol_deg: f64,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            schema: 1,
            families: ShapeFamily::ALL.to_vec(),
            ranges: ShapeRanges::default(),
            trials: 100,
            seed: 2024,
            step_fraction: 0.01,
            stall_fraction: 1e-6,
            step_shrink: 0.5,
            max_iters: 2000,
            converge_tol_deg: 2.0,
            right_angle_tol_deg: 3.0,
        }
    }
}

impl Table1Config {
    pub fn validate(&self) -> Result<(), DescentError> {
        let bad = |msg: String| Err(DescentError::InvalidConfig(msg));
        if self.schema != 1 {
            return bad(format!("schema: unsupported version {}", self.schema));
        }
        if self.trials < 1 {
            return bad("trials: must be at least 1".into());
        }
        if self.families.is_empty() {
            return bad("families: must not be empty".into());
        }
        let r = &self.ranges;
        for (name, range) in [
            ("ranges.ellipsoid_axes", r.ellipsoid_axes),
            ("ranges.superquadric_axes", r.superquadric_axes),
            ("ranges.superquadric_exponents", r.superquadric_exponents),
            ("ranges.torus_major", r.torus_major),
            ("ranges.torus_minor_ratio", r.torus_minor_ratio),
        ] {
            if !range.valid() {
                return bad(format!("{name}: expected 0 < lo <= hi"));
            }
        }
        if r.superquadric_exponents.0 <= 0.1 || r.superquadric_exponents.1 > 2.0 {
            return bad("ranges.superquadric_exponents: must lie in (0.1, 2.0]".into());
        }
        if r.torus_minor_ratio.1 >= 1.0 {
            return bad("ranges.torus_minor_ratio: must stay below 1".into());
        }
        if !(self.step_fraction > 0.0) || !(self.stall_fraction >= 0.0) {
            return bad("step_fraction and stall_fraction must be positive".into());
        }
        self.descent_config(Method::Cfgd, 1.0, 0).validate()
    }

    fn descent_config(&self, method: Method, size: f64, seed: u64) -> DescentConfig {
        DescentConfig {
            method,
            step_size: self.step_fraction * size,
            max_iters: self.max_iters,
            converge_tol: self.converge_tol_deg.to_radians(),
            right_angle_tol: self.right_angle_tol_deg.to_radians(),
            stall_tol: self.stall_fraction * size,
            step_shrink: self.step_shrink,
            record_trajectory: false,
            seed,
        }
    }
}

/// Random shape of a family drawn from the configured ranges.
pub fn sample_shape<R: Rng + ?Sized>(
    family: ShapeFamily,
    ranges: &ShapeRanges,
    rng: &mut R,
) -> Result<Surface, SurfaceError> {
    match family {
        ShapeFamily::Ellipsoid => {
            let r = ranges.ellipsoid_axes;
            Surface::ellipsoid(r.sample(rng), r.sample(rng), r.sample(rng))
        }
        ShapeFamily::Superquadric => {
            let a = ranges.superquadric_axes;
            let e = ranges.superquadric_exponents;
            let axes = [a.sample(rng), a.sample(rng), a.sample(rng)];
            Surface::superquadric(axes, e.sample(rng), e.sample(rng))
        }
        ShapeFamily::Torus => {
            let major = ranges.torus_major.sample(rng);
            let minor = ranges.torus_minor_ratio.sample(rng) * major;
            Surface::torus(major, minor)
        }
    }
}

/// Seed of one trial; independent of execution order.
pub fn trial_seed(seed: u64, family: ShapeFamily, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family_index = ShapeFamily::ALL.iter().position(|f| *f == family).unwrap_or(0) as u64;
    rng.set_stream((family_index << 32) | trial as u64);
    rng.next_u64()
}

/// Two boundary points separated by at least 5 % of the object size.
pub fn sample_initial_pair<R: Rng + ?Sized>(
    s: &Surface,
    rng: &mut R,
) -> Result<(SurfacePoint, SurfacePoint), SurfaceError> {
    let min_sep = 0.05 * s.characteristic_size();
    let first = s.sample_surface_with(rng)?;
    loop {
        let second = s.sample_surface_with(rng)?;
        if (second.position - first.position).norm() > min_sep {
            return Ok((first, second));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Trial {
    pub family: ShapeFamily,
    pub trial: usize,
    pub seed: u64,
    pub surface: Surface,
    pub init: (SurfacePoint, SurfacePoint),
    pub pgd: DescentOutcome,
    pub cfgd: DescentOutcome,
}

impl Table1Trial {
    pub fn outcome(&self, method: Method) -> &DescentOutcome {
        match method {
            Method::Pgd => &self.pgd,
            Method::Cfgd => &self.cfgd,
        }
    }
}

/// One CSV row: one method on one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub shape_kind: String,
    pub shape_params: String,
    pub method: Method,
    pub status: DescentStatus,
    pub final_f_rad: f64,
    pub iters: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRates {
    pub family: ShapeFamily,
    pub trials: usize,
    pub pgd_converged: usize,
    pub cfgd_converged: usize,
    pub pgd_rate: f64,
    pub cfgd_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Summary {
    pub schema: u32,
    pub seed: u64,
    pub families: Vec<FamilyRates>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Report {
    pub trials: Vec<Table1Trial>,
    pub summary: Table1Summary,
}

impl Table1Report {
    pub fn rows(&self) -> Vec<Table1Row> {
        self.trials
            .iter()
            .flat_map(|t| {
                [Method::Pgd, Method::Cfgd].map(|m| {
                    let o = t.outcome(m);
                    Table1Row {
                        shape_kind: t.surface.shape().kind().to_string(),
                        shape_params: t.surface.shape().params_string(),
                        method: m,
                        status: o.status,
                        final_f_rad: o.final_eval.f,
                        iters: o.iters,
                        seed: t.seed,
                    }
                })
            })
            .collect()
    }

    pub fn rates(&self, family: ShapeFamily) -> Option<&FamilyRates> {
        self.summary.families.iter().find(|r| r.family == family)
    }
}

/// Per-family rates recomputed from CSV rows.
pub fn summarize_rows(rows: &[Table1Row], seed: u64) -> Table1Summary {
    let mut families = Vec::new();
    for family in ShapeFamily::ALL {
        let of_family: Vec<&Table1Row> =
            rows.iter().filter(|r| r.shape_kind == family.as_str()).collect();
        if of_family.is_empty() {
            continue;
        }
        let converged = |m: Method| {
            of_family
                .iter()
                .filter(|r| r.method == m && r.status == DescentStatus::Converged)
                .count()
        };
        let trials = of_family.iter().filter(|r| r.method == Method::Cfgd).count();
        let (pgd, cfgd) = (converged(Method::Pgd), converged(Method::Cfgd));
        families.push(FamilyRates {
            family,
            trials,
            pgd_converged: pgd,
            cfgd_converged: cfgd,
            pgd_rate: pgd as f64 / trials as f64,
            cfgd_rate: cfgd as f64 / trials as f64,
        });
    }
    Table1Summary {
        schema: 1,
        seed,
        families,
    }
}

fn run_trial(cfg: &Table1Config, family: ShapeFamily, trial: usize) -> Result<Table1Trial, DescentError> {
    let seed = trial_seed(cfg.seed, family, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = sample_shape(family, &cfg.ranges, &mut rng)?;
    let (a, b) = sample_initial_pair(&surface, &mut rng)?;
    let size = surface.characteristic_size();
    let pgd = run_descent(&surface, &a, &b, &cfg.descent_config(Method::Pgd, size, seed))?;
    let cfgd = run_descent(&surface, &a, &b, &cfg.descent_config(Method::Cfgd, size, seed))?;
    Ok(Table1Trial {
        family,
        trial,
        seed,
        surface,
        init: (a, b),
        pgd,
        cfgd,
    })
}

/// Runs PGD and CFGD on identical random shapes and initial contacts.
/// Trials run on the current rayon pool; results do not depend on its size.
pub fn run_table1(cfg: &Table1Config) -> Result<Table1Report, DescentError> {
    cfg.validate()?;
    let jobs: Vec<(ShapeFamily, usize)> = cfg
        .families
        .iter()
        .flat_map(|f| (0..cfg.trials).map(move |t| (*f, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|(family, trial)| run_trial(cfg, *family, *trial))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = Table1Report {
        trials,
        summary: summarize_rows(&[], cfg.seed),
    };
    report.summary = summarize_rows(&report.rows(), cfg.seed);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn point(s: &Surface, p: Vector3<f64>) -> SurfacePoint {
        s.project(&p).unwrap()
    }

    /// Roughly even points on the unit sphere.
    fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * i as f64;
                Vector3::new(r * t.cos(), r * t.sin(), z)
            })
            .collect()
    }

    #[test]
    fn cfgd_converges_from_every_sphere_pair() {
        let s = Surface::sphere(1.0).unwrap();
        let cfg = DescentConfig::for_surface(Method::Cfgd, &s);
        let seeds = fibonacci_sphere(20);
        for a in &seeds {
            for b in &seeds {
                if (a - b).norm() < 1e-9 || (a + b).norm() < 1e-9 {
                    continue;
                }
                let out = run_descent(&s, &point(&s, *a), &point(&s, *b), &cfg).unwrap();
                assert_eq!(out.status, DescentStatus::Converged, "{a:?} {b:?}");
                assert!(out.final_eval.f < cfg.converge_tol);
            }
        }
    }

    #[test]
    fn pgd_stalls_on_sphere() {
        let s = Surface::sphere(1.0).unwrap();
        let cfg = DescentConfig::for_surface(Method::Pgd, &s);
        let a = point(&s, Vector3::new(1.0, 0.0, 0.0));
        let b = point(&s, Vector3::new(0.0, 1.0, 0.2));
        let out = run_descent(&s, &a, &b, &cfg).unwrap();
        assert_eq!(out.status, DescentStatus::LocalMinimum);
        assert_eq!(out.iters, 1);
        assert!(out.diagnostics.tangential_grad_f < 1e-10);
        assert!(out.diagnostics.tangential_grad_phi1 > 0.1);
    }

    #[test]
    fn same_face_pair_is_right_angle_failure() {
        let s = Surface::cuboid(1.0, 1.0, 1.0).unwrap();
        let a = point(&s, Vector3::new(1.5, 0.3, 0.1));
        let b = point(&s, Vector3::new(1.5, -0.3, 0.1));
        for method in [Method::Pgd, Method::Cfgd] {
            let out = run_descent(&s, &a, &b, &DescentConfig::for_surface(method, &s)).unwrap();
            assert_eq!(out.status, DescentStatus::RightAngleFailure);
            assert!((out.final_eval.phi1 - FRAC_PI_2).abs() < 1e-12);
            assert!((out.final_eval.phi2 - FRAC_PI_2).abs() < 1e-12);
        }
    }

    #[test]
    fn iteration_budget_is_respected() {
        let s = Surface::ellipsoid(2.0, 1.0, 0.7).unwrap();
        let mut cfg = DescentConfig::for_surface(Method::Cfgd, &s);
        cfg.max_iters = 3;
        let a = point(&s, Vector3::new(1.0, 1.0, 1.0));
        let b = point(&s, Vector3::new(1.0, -1.0, 0.5));
        let out = run_descent(&s, &a, &b, &cfg).unwrap();
        assert_eq!(out.status, DescentStatus::IterLimit);
        assert_eq!(out.iters, 3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = Surface::sphere(1.0).unwrap();
        let mut cfg = DescentConfig::for_surface(Method::Cfgd, &s);
        let a = point(&s, Vector3::x());
        let off = SurfacePoint {
            position: Vector3::new(0.0, 2.0, 0.0),
            outward_normal: Vector3::y(),
        };
        assert!(matches!(run_descent(&s, &a, &off, &cfg), Err(DescentError::OffBoundary(_))));
        assert!(matches!(
            run_descent(&s, &a, &a, &cfg),
            Err(DescentError::Stability(StabilityError::CoincidentContacts { .. }))
        ));
        cfg.step_size = 0.0;
        assert!(matches!(run_descent(&s, &a, &a, &cfg), Err(DescentError::InvalidConfig(_))));
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for family in ShapeFamily::ALL {
            for t in 0..100 {
                assert!(seen.insert(trial_seed(7, family, t)));
            }
        }
    }

    #[test]
    fn config_json_defaults_and_validation() {
        let cfg: Table1Config = serde_json::from_str(r#"{"trials": 5}"#).unwrap();
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.ranges, ShapeRanges::default());
        let mut bad = cfg.clone();
        bad.ranges.superquadric_exponents = Range(0.05, 1.0);
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<Table1Config>(r#"{"trails": 5}"#).is_err());
    }
}
