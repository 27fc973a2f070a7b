//! Acceptance suite. Every criterion carries its own oracle; none of them
//! reuses the code path it checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflexgrasp::controller::{step_mode, ContactState, ControllerParams, ControllerState, Mode};
use reflexgrasp::descent::{run_table1, DescentStatus, Table1Config, Table1Report};
use reflexgrasp::kinematics::RobotModel;
use reflexgrasp::qp::{QpProblem, QpSolver, QpStatus};
use reflexgrasp::sim::{run_scenario, run_with_scenario, ObjectKind, Scenario, ScenarioConfig};
use reflexgrasp::stability::{evaluate, grad_phi, Angle, Contact, ContactPair};
use reflexgrasp::surface::Surface;
use serde::Serialize;

use crate::campaign::{run_campaign, CampaignConfig, FamilySpec};
use crate::commands::{cmd_sim, cmd_table1, write_json, SimArgs, Table1Args};
use crate::error::CliError;

pub struct AcceptOptions {
    /// Scratch space for criteria that write files.
    pub out: PathBuf,
    /// Criterion name, group or number.
    pub filter: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub group: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} [{}] {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceReport {
    pub schema: u32,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

struct Criterion {
    id: u32,
    name: &'static str,
    group: &'static str,
}

const CRITERIA: [Criterion; 8] = [
    Criterion { id: 1, name: "table1_rates", group: "table1" },
    Criterion { id: 2, name: "cancellation_witness", group: "table1" },
    Criterion { id: 3, name: "gradient_oracles", group: "gradients" },
    Criterion { id: 4, name: "qp_oracle", group: "qp" },
    Criterion { id: 5, name: "reflexive_runs", group: "sim" },
    Criterion { id: 6, name: "state_machine", group: "controller" },
    Criterion { id: 7, name: "determinism", group: "determinism" },
    Criterion { id: 8, name: "rate_contract", group: "sim" },
];

fn selected(filter: Option<&str>) -> Result<Vec<&'static Criterion>, CliError> {
    let picked: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|c| filter.is_none_or(|f| f == c.name || f == c.group || f == c.id.to_string()))
        .collect();
    if picked.is_empty() {
        let names: Vec<&str> = CRITERIA.iter().map(|c| c.name).collect();
        return Err(CliError::Config(format!(
            "--filter: no criterion matches {:?}; names are {}",
            filter.unwrap_or_default(),
            names.join(", ")
        )));
    }
    Ok(picked)
}

/// Check outcome: pass flag and a one-line detail.
type Check = Result<(bool, String), CliError>;

pub fn run_acceptance(opts: &AcceptOptions, model: &RobotModel) -> Result<AcceptanceReport, CliError> {
    let picked = selected(opts.filter.as_deref())?;
    let mut table1: Option<Table1Report> = None;
    let mut criteria = Vec::new();
    for c in picked {
        let start = Instant::now();
        let (passed, detail) = match c.id {
            1 | 2 => {
                if table1.is_none() {
                    table1 = Some(run_table1(&Table1Config::default()).map_err(|e| CliError::Runtime(e.to_string()))?);
                }
                let report = table1.as_ref().expect("computed above");
                if c.id == 1 {
                    table1_rates(report)
                } else {
                    cancellation_witness(report)
                }
            }
            3 => gradient_oracles(model),
            4 => qp_oracle(),
            5 => reflexive_runs(model)?,
            6 => state_machine(model)?,
            7 => determinism(&opts.out.join("determinism"))?,
            8 => rate_contract(model)?,
            _ => unreachable!("criterion ids are fixed"),
        };
        criteria.push(CriterionResult {
            id: c.id,
            name: c.name,
            group: c.group,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(AcceptanceReport {
        schema: 1,
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    })
}

fn table1_rates(report: &Table1Report) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for f in &report.summary.families {
        ok &= f.cfgd_rate >= 0.95 && f.pgd_rate <= 0.20;
        parts.push(format!(
            "{} cfgd {:.0}% pgd {:.0}%",
            f.family.as_str(),
            100.0 * f.cfgd_rate,
            100.0 * f.pgd_rate
        ));
    }
    ok &= report.summary.families.len() == 3;
    (ok, parts.join(", "))
}

fn cancellation_witness(report: &Table1Report) -> (bool, String) {
    let witnesses = report
        .trials
        .iter()
        .filter(|t| {
            let d = &t.pgd.diagnostics;
            t.pgd.status == DescentStatus::LocalMinimum && d.tangential_grad_f < 1e-4 && d.tangential_grad_phi1 > 1e-2
        })
        .count();
    (witnesses >= 10, format!("{witnesses} PGD stalls with cancelled total gradient (need 10)"))
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_pair(rng: &mut ChaCha8Rng) -> ContactPair {
    loop {
        let c1 = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let c2 = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if (c2 - c1).norm() < 0.1 {
            continue;
        }
        let Ok(cp) = ContactPair::new(c1, c2, unit(rng), unit(rng)) else { continue };
        let Ok(e) = evaluate(&cp) else { continue };
        let away_from_poles = |a: f64| a > 0.1 && a < std::f64::consts::PI - 0.1;
        if away_from_poles(e.phi1) && away_from_poles(e.phi2) {
            return cp;
        }
    }
}

fn angle_value(cp: &ContactPair, angle: Angle) -> f64 {
    let e = evaluate(cp).expect("perturbed pair stays regular");
    match angle {
        Angle::Phi1 => e.phi1,
        Angle::Phi2 => e.phi2,
    }
}

fn central_difference(cp: &ContactPair, angle: Angle, wrt: Contact, h: f64) -> Vector3<f64> {
    Vector3::from_fn(|k, _| {
        let shifted = |sign: f64| {
            let (mut c1, mut c2) = (*cp.c1(), *cp.c2());
            let target = if wrt == Contact::C1 { &mut c1 } else { &mut c2 };
            target[k] += sign * h;
            ContactPair::new(c1, c2, *cp.n1(), *cp.n2()).expect("perturbed pair is valid")
        };
        (angle_value(&shifted(1.0), angle) - angle_value(&shifted(-1.0), angle)) / (2.0 * h)
    })
}

fn random_q(m: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(
        m.dof(),
        m.joints().iter().zip(m.home().iter()).map(|(j, h)| {
            let lo = j.q_min.max(h - std::f64::consts::PI);
            let hi = j.q_max.min(h + std::f64::consts::PI);
            if lo < hi {
                rng.random_range(lo..hi)
            } else {
                *h
            }
        }),
    )
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize()
}

/// Rotation vector of a near-identity rotation from its skew part.
fn log_small(r: &Rotation3<f64>) -> Vector3<f64> {
    let m = r.matrix();
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) / 2.0
}

fn relative(a: f64, reference: f64) -> f64 {
    if reference > 1e-12 {
        a / reference
    } else {
        a
    }
}

fn gradient_oracles(model: &RobotModel) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_phi: f64 = 0.0;
    for _ in 0..1000 {
        let cp = random_pair(&mut rng);
        for angle in [Angle::Phi1, Angle::Phi2] {
            for wrt in [Contact::C1, Contact::C2] {
                let Ok(g) = grad_phi(&cp, angle, wrt) else {
                    worst_phi = f64::INFINITY;
                    continue;
                };
                let fd = central_difference(&cp, angle, wrt, 1e-6);
                worst_phi = worst_phi.max(relative((g - fd).norm(), g.norm()));
            }
        }
    }
    let h = 1e-6;
    let (mut worst_j, mut worst_gamma): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let q = random_q(model, &mut rng);
        let dir = random_unit(model.dof(), &mut rng);
        let s = model.forward_kinematics(&q);
        let plus = model.forward_kinematics(&(&q + &dir * h));
        let minus = model.forward_kinematics(&(&q - &dir * h));
        for k in 0..s.tips.len() {
            let v_fd = (plus.tips[k].position - minus.tips[k].position) / (2.0 * h);
            let v = &s.tips[k].jx * &dir;
            worst_j = worst_j.max(relative((v - v_fd).norm(), v.norm()));
            let delta = plus.tips[k].rotation * minus.tips[k].rotation.transpose();
            let w_fd = log_small(&delta) / (2.0 * h);
            let w = &s.tips[k].jr * &dir;
            worst_j = worst_j.max(relative((w - w_fd).norm(), w.norm()));
        }
        let c = model.collision_values(&q);
        if c.gamma.is_empty() {
            continue;
        }
        let fd = (model.collision_values(&(&q + &dir * h)).gamma - model.collision_values(&(&q - &dir * h)).gamma)
            / (2.0 * h);
        let analytic = &c.jacobian * &dir;
        worst_gamma = worst_gamma.max(relative((&analytic - &fd).norm(), analytic.norm()));
    }
    (
        worst_phi < 1e-5 && worst_j < 1e-5 && worst_gamma < 1e-4,
        format!("worst relative error: angles {worst_phi:.1e}, Jacobians {worst_j:.1e}, collision {worst_gamma:.1e}"),
    )
}

fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(1..=6);
    let p = rng.random_range(0..=8);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let a = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
    // Bounds around a known point keep every problem feasible.
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let ax0 = &a * &x0;
    let mut lb = DVector::zeros(p);
    let mut ub = DVector::zeros(p);
    for i in 0..p {
        let lo = ax0[i] - rng.random_range(0.0..1.0);
        let hi = ax0[i] + rng.random_range(0.0..1.0);
        (lb[i], ub[i]) = match rng.random_range(0..10) {
            0..=4 => (lo, hi),
            5..=6 => (lo, f64::INFINITY),
            7..=8 => (f64::NEG_INFINITY, hi),
            _ => (ax0[i], ax0[i]),
        };
    }
    QpProblem::new(h, g, a, lb, ub).expect("generated problem is well formed")
}

/// Best objective over all active-set guesses whose KKT point is feasible.
fn enumerate_active_sets(p: &QpProblem) -> f64 {
    let (n, m) = (p.n(), p.p());
    let mut best = f64::INFINITY;
    'sets: for code in 0..3usize.pow(m as u32) {
        let mut c = code;
        let mut rows = Vec::new();
        for i in 0..m {
            match c % 3 {
                0 => {}
                1 if p.lb[i].is_finite() => rows.push((i, p.lb[i])),
                2 if p.ub[i].is_finite() => rows.push((i, p.ub[i])),
                _ => continue 'sets,
            }
            c /= 3;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&p.g));
        for (r, (i, b)) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = p.a[(*i, j)];
                kkt[(j, n + r)] = p.a[(*i, j)];
            }
            rhs[n + r] = *b;
        }
        let lu = kkt.clone().full_piv_lu();
        if !lu.is_invertible() {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        if p.max_violation(&x) <= 1e-9 {
            best = best.min(p.objective(&x));
        }
    }
    best
}

fn qp_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let solver = QpSolver::default();
    let (mut worst_obj, mut worst_viol): (f64, f64) = (0.0, 0.0);
    let mut unsolved = 0;
    for _ in 0..50 {
        let p = random_qp(&mut rng);
        let s = solver.solve(&p, None);
        if s.status != QpStatus::Solved {
            unsolved += 1;
        }
        worst_obj = worst_obj.max((s.objective - enumerate_active_sets(&p)).abs());
        worst_viol = worst_viol.max(p.max_violation(&s.x));
    }
    (
        unsolved == 0 && worst_obj < 1e-6 && worst_viol <= 1e-5,
        format!("50 problems, {unsolved} unsolved, objective gap {worst_obj:.1e}, violation {worst_viol:.1e}"),
    )
}

fn reflexive_runs(model: &RobotModel) -> Check {
    let cfg = CampaignConfig {
        name: "acceptance".into(),
        methods: vec![reflexgrasp::stability::Method::Cfgd],
        ..Default::default()
    };
    let out = run_campaign(&cfg, model)?;
    if let Some(e) = out.failure {
        return Ok((false, e));
    }
    let cfgd = out
        .summary
        .variant("cfgd")
        .ok_or_else(|| CliError::Runtime("campaign produced no reflex runs".into()))?;
    let paired = cfgd.at_or_below_vanilla.unwrap_or(0);
    let need = (0.9 * cfgd.runs as f64).ceil() as usize;
    let within_budget = out.runs.iter().all(|r| r.row.grasp_time_s <= cfg.sim.max_time + 1e-9);
    Ok((
        cfgd.runs == 60 && cfgd.success >= need && paired >= need && within_budget,
        format!(
            "{}/{} stable below 10 deg, {}/{} at or below vanilla (need {need})",
            cfgd.success, cfgd.runs, paired, cfgd.runs
        ),
    ))
}

/// The mode table written out case by case.
fn expected_mode(mode: Mode, all: bool, below: bool, held: bool) -> Mode {
    match (mode, all, below, held) {
        (Mode::Stable, ..) => Mode::Stable,
        (_, true, true, true) => Mode::Stable,
        (Mode::Closing, true, false, _) => Mode::Adjusting,
        (Mode::Closing, ..) => Mode::Closing,
        (Mode::Adjusting, false, ..) => Mode::Closing,
        (Mode::Adjusting, true, ..) => Mode::Adjusting,
    }
}

/// Contacts across the y axis with both normals tilted by `half`, so each
/// contact angle equals `half`.
fn pair_with_mean_angle(half: f64) -> [ContactState; 2] {
    let (s, c) = half.sin_cos();
    [
        ContactState::touching(Vector3::new(0.0, 0.05, 0.0), Vector3::new(s, -c, 0.0)),
        ContactState::touching(Vector3::new(0.0, -0.05, 0.0), Vector3::new(s, c, 0.0)),
    ]
}

fn state_machine(model: &RobotModel) -> Check {
    let p = ControllerParams::default();
    let half_threshold = p.stable_threshold / 2.0;
    let mut cases = 0;
    let mut mismatches = 0;
    for mode in Mode::ALL {
        for pattern in 0..4usize {
            for half in [0.2 * half_threshold, 0.99 * half_threshold, 1.01 * half_threshold, 3.0 * half_threshold] {
                for count in 0..=p.hold_samples + 1 {
                    let mut s = ControllerState::new(2);
                    s.mode = mode;
                    s.stable_count = count;
                    let pair = pair_with_mean_angle(half);
                    let sensor: Vec<ContactState> = (0..2)
                        .map(|i| if pattern >> i & 1 == 1 { pair[i] } else { ContactState::none() })
                        .collect();
                    let all = pattern == 3;
                    let below = all && half < half_threshold;
                    let held = count + 1 >= p.hold_samples;
                    cases += 1;
                    if step_mode(&s, &sensor, &p).mode != expected_mode(mode, all, below, held) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let (mut injected, mut reverted) = (0, 0);
    for seed in 0..6 {
        let mut cfg = ScenarioConfig::new(ObjectKind::Cylinder, 0.025, 0.016, seed);
        cfg.sim.dropout_rate = 0.05;
        let r = run_scenario(&cfg, model).map_err(|e| CliError::Runtime(e.to_string()))?;
        for w in r.trace.windows(2) {
            if w[0].mode == "adjusting" && !(w[1].tip1_contact && w[1].tip2_contact) {
                injected += 1;
                if w[1].mode == "closing" {
                    reverted += 1;
                }
            }
        }
    }
    Ok((
        mismatches == 0 && injected > 0 && reverted == injected,
        format!("{cases} table cases, {mismatches} mismatches; {reverted}/{injected} dropouts reverted to closing"),
    ))
}

/// Relative paths of all files below `dir`, sorted.
fn files_below(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let path = entry.map_err(|e| CliError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(rel) = path.strip_prefix(dir) {
                out.push(rel.to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Whether both directories hold the same CSV files byte for byte.
fn same_csvs(a: &Path, b: &Path) -> Result<(bool, usize), CliError> {
    let (fa, fb) = (files_below(a)?, files_below(b)?);
    if fa != fb {
        return Ok((false, 0));
    }
    let mut compared = 0;
    for rel in fa.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
        let read = |root: &Path| fs::read(root.join(rel)).map_err(|e| CliError::io(&root.join(rel), e));
        if read(a)? != read(b)? {
            return Ok((false, compared));
        }
        compared += 1;
    }
    Ok((compared > 0, compared))
}

fn determinism(dir: &Path) -> Check {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let campaign = CampaignConfig {
        name: "determinism".into(),
        families: ObjectKind::ALL
            .iter()
            .map(|k| FamilySpec {
                object: *k,
                sizes: Some(vec![0.03]),
                magnitudes: Some(vec![k.default_magnitudes()[3]]),
            })
            .collect(),
        seeds: vec![11],
        ..Default::default()
    };
    let config_path = dir.join("campaign.json");
    write_json(&config_path, &campaign)?;
    for run in ["a", "b"] {
        let table1 = Table1Args {
            config: None,
            out: dir.join(run).join("table1"),
            seed: Some(7),
            trials: Some(20),
            threads: None,
        };
        cmd_table1(&table1)?;
        let sim = SimArgs {
            config: Some(config_path.clone()),
            out: dir.join(run).join("sim"),
            seed: None,
            method: None,
            threads: None,
            robot: None,
        };
        cmd_sim(&sim)?;
    }
    let (t_same, t_n) = same_csvs(&dir.join("a/table1"), &dir.join("b/table1"))?;
    let (s_same, s_n) = same_csvs(&dir.join("a/sim"), &dir.join("b/sim"))?;
    Ok((
        t_same && s_same,
        format!("table1 {t_n} CSV files identical: {t_same}; sim {s_n} CSV files identical: {s_same}"),
    ))
}

fn rate_contract(model: &RobotModel) -> Check {
    let mut cfg = ScenarioConfig::new(ObjectKind::Box, 0.03, 0.0, 0);
    cfg.sim.reach_max_time = 0.0;
    cfg.sim.max_time = 1.0;
    // Out of reach, so the run lasts the full second.
    let scenario = Scenario {
        object: Surface::sphere(0.03)
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .with_pose(nalgebra::Isometry3::translation(3.0, 0.0, 0.0)),
        target: Vector3::new(reflexgrasp::sim::OBJECT_X, 0.0, 0.05),
    };
    let r = run_with_scenario(&cfg, &scenario, model).map_err(|e| CliError::Runtime(e.to_string()))?;
    let samples = r.trace.len();
    let solves = r.trace.iter().filter(|row| row.qp_status != "none").count();
    // Rows are 5 ms apart starting at zero.
    let spaced = r
        .trace
        .iter()
        .enumerate()
        .all(|(i, row)| (row.time_s - i as f64 * 0.005).abs() < 1e-9);
    let steps = r.stats.integration_steps;
    Ok((
        steps == 1000 && samples == 200 && solves <= 200 && spaced,
        format!("{steps} integration steps, {samples} sensor samples, {solves} QP solves"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_selects_by_group_name_or_number() {
        let ids = |f: &str| selected(Some(f)).unwrap().iter().map(|c| c.id).collect::<Vec<_>>();
        assert_eq!(ids("table1"), vec![1, 2]);
        assert_eq!(ids("qp_oracle"), vec![4]);
        assert_eq!(ids("8"), vec![8]);
        assert_eq!(selected(None).unwrap().len(), 8);
        assert!(selected(Some("nope")).is_err());
    }

    #[test]
    fn enumeration_finds_a_box_corner() {
        // min 0.5|x|^2 - 2 x0 - 2 x1 subject to x <= 1: the corner (1, 1).
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-2.0, -2.0]),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![f64::NEG_INFINITY; 2]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        assert!((enumerate_active_sets(&p) - (-3.0)).abs() < 1e-12);
    }

    #[test]
    fn mode_table_oracle_covers_every_mode() {
        assert_eq!(expected_mode(Mode::Closing, true, false, false), Mode::Adjusting);
        assert_eq!(expected_mode(Mode::Adjusting, false, false, false), Mode::Closing);
        assert_eq!(expected_mode(Mode::Adjusting, true, true, true), Mode::Stable);
        assert_eq!(expected_mode(Mode::Stable, false, false, false), Mode::Stable);
    }
}
