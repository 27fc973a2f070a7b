//! Dense convex QP: minimize `½ xᵀHx + gᵀx` subject to `lb ≤ Ax ≤ ub`.
//!
//! Operator splitting (ADMM) on a Ruiz-equilibrated copy of the problem with
//! adaptive penalty, a primal infeasibility certificate, and polishing: once
//! the iterates settle, the KKT system of the guessed active set is solved
//! directly and accepted if it checks out. Infinite bounds are allowed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{CollisionValues, KinematicState, RobotModel};

/// Added to the diagonal of `H` before solving.
pub const HESSIAN_REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("H is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("lower bound exceeds upper bound in row {0}")]
    InvertedBounds(usize),
    #[error("non-finite data in {0}")]
    NonFinite(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a: DMatrix<f64>,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> Result<Self, QpError> {
        let p = Self { h, g, a, lb, ub };
        p.validate()?;
        Ok(p)
    }

    /// No constraints.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Result<Self, QpError> {
        let n = g.len();
        Self::new(h, g, DMatrix::zeros(0, n), DVector::zeros(0), DVector::zeros(0))
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let (n, p) = (self.g.len(), self.a.nrows());
        if self.h.shape() != (n, n) {
            return Err(QpError::Dimension(format!("H is {:?}, expected ({n}, {n})", self.h.shape())));
        }
        if self.a.ncols() != n && p > 0 {
            return Err(QpError::Dimension(format!("A has {} columns, expected {n}", self.a.ncols())));
        }
        if self.lb.len() != p || self.ub.len() != p {
            return Err(QpError::Dimension("bounds must have one entry per row of A".into()));
        }
        if self.h.iter().chain(self.g.iter()).chain(self.a.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("H, g or A"));
        }
        if self.lb.iter().chain(self.ub.iter()).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("bounds"));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 * (1.0 + self.h.amax()) {
            return Err(QpError::NotSymmetric(asym));
        }
        if let Some(i) = (0..p).find(|&i| self.lb[i] > self.ub[i]) {
            return Err(QpError::InvertedBounds(i));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest bound violation of `Ax`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        (0..self.p())
            .map(|i| (self.lb[i] - ax[i]).max(ax[i] - self.ub[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// JSON dump for offline reproduction; infinite bounds become `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&QpProblemRepr::from(self)).expect("QP serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let r: QpProblemRepr = serde_json::from_str(s).map_err(|e| e.to_string())?;
        r.try_into().map_err(|e: QpError| e.to_string())
    }
}

#[derive(Serialize, Deserialize)]
struct QpProblemRepr {
    h: Vec<Vec<f64>>,
    g: Vec<f64>,
    a: Vec<Vec<f64>>,
    lb: Vec<Option<f64>>,
    ub: Vec<Option<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl From<&QpProblem> for QpProblemRepr {
    fn from(p: &QpProblem) -> Self {
        let finite = |v: &DVector<f64>| v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        Self {
            h: rows(&p.h),
            g: p.g.iter().copied().collect(),
            a: rows(&p.a),
            lb: finite(&p.lb),
            ub: finite(&p.ub),
        }
    }
}

impl TryFrom<QpProblemRepr> for QpProblem {
    type Error = QpError;

    fn try_from(r: QpProblemRepr) -> Result<Self, QpError> {
        let n = r.g.len();
        let matrix = |m: &Vec<Vec<f64>>, cols: usize, what: &str| {
            if m.iter().any(|row| row.len() != cols) {
                return Err(QpError::Dimension(format!("{what} rows must have {cols} entries")));
            }
            Ok(DMatrix::from_row_iterator(m.len(), cols, m.iter().flatten().copied()))
        };
        let bound = |v: &[Option<f64>], missing: f64| {
            DVector::from_iterator(v.len(), v.iter().map(|x| x.unwrap_or(missing)))
        };
        QpProblem::new(
            matrix(&r.h, n, "H")?,
            DVector::from_vec(r.g),
            matrix(&r.a, n, "A")?,
            bound(&r.lb, f64::NEG_INFINITY),
            bound(&r.ub, f64::INFINITY),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    MaxIters,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIters => "max_iters",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers: negative on active lower bounds, positive on active upper.
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub polished: bool,
}

impl QpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.x.clone(),
            y: Some(self.y.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: Option<DVector<f64>>,
}

impl WarmStart {
    pub fn primal(x: DVector<f64>) -> Self {
        Self { x, y: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    /// Absolute tolerance on primal and dual residuals.
    pub tol: f64,
    pub max_iters: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub scaling_iters: usize,
    pub adapt_rho_every: usize,
    pub polish: bool,
    /// Residual level at which polishing is first attempted.
    pub polish_trigger: f64,
    pub infeasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 4000,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            scaling_iters: 10,
            adapt_rho_every: 25,
            polish: true,
            polish_trigger: 1e-2,
            infeasibility_tol: 1e-5,
        }
    }
}

/// Reusable solver; holds settings only, so one instance per thread is cheap.
#[derive(Clone, Debug, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

/// Equilibrated copy of a problem: `H̄ = c D H D`, `ḡ = c D g`, `Ā = E A D`.
struct Scaled {
    h: DMatrix<f64>,
    g: DVector<f64>,
    a: DMatrix<f64>,
    lb: DVector<f64>,
    ub: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn clip_scale(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

fn equilibrate(h: &DMatrix<f64>, g: &DVector<f64>, p: &QpProblem, iters: usize) -> Scaled {
    let (n, m) = (p.n(), p.p());
    let mut hs = h.clone();
    let mut gs = g.clone();
    let mut a = p.a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;
    for _ in 0..iters {
        let dd = DVector::from_iterator(
            n,
            (0..n).map(|j| {
                let col = hs.column(j).amax().max(if m > 0 { a.column(j).amax() } else { 0.0 });
                1.0 / clip_scale(col).sqrt()
            }),
        );
        let de = DVector::from_iterator(m, (0..m).map(|i| 1.0 / clip_scale(a.row(i).amax()).sqrt()));
        for j in 0..n {
            for i in 0..n {
                hs[(i, j)] *= dd[i] * dd[j];
            }
            for i in 0..m {
                a[(i, j)] *= de[i] * dd[j];
            }
        }
        gs.component_mul_assign(&dd);
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);
        let mean_col = (0..n).map(|j| hs.column(j).amax()).sum::<f64>() / n.max(1) as f64;
        let gamma = 1.0 / clip_scale(mean_col.max(gs.amax()));
        hs *= gamma;
        gs *= gamma;
        c *= gamma;
    }
    let lb = p.lb.component_mul(&e);
    let ub = p.ub.component_mul(&e);
    Scaled {
        h: hs,
        g: gs,
        a,
        lb,
        ub,
        d,
        e,
        c,
    }
}

struct Residuals {
    primal: f64,
    dual: f64,
    /// Normalizers for the adaptive penalty.
    primal_scale: f64,
    dual_scale: f64,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&self, problem: &QpProblem, warm: Option<&WarmStart>) -> QpSolution {
        let s = &self.settings;
        let (n, m) = (problem.n(), problem.p());
        let mut h = problem.h.clone();
        for i in 0..n {
            h[(i, i)] += HESSIAN_REGULARIZATION;
        }
        let reg = QpProblem {
            h,
            ..problem.clone()
        };
        let sc = equilibrate(&reg.h, &reg.g, problem, s.scaling_iters);

        let is_eq: Vec<bool> = (0..m).map(|i| problem.lb[i] == problem.ub[i]).collect();
        let is_free: Vec<bool> = (0..m)
            .map(|i| problem.lb[i] == f64::NEG_INFINITY && problem.ub[i] == f64::INFINITY)
            .collect();
        let rho_vec = |rho: f64| {
            DVector::from_iterator(
                m,
                (0..m).map(|i| {
                    if is_free[i] {
                        1e-6
                    } else if is_eq[i] {
                        1e3 * rho
                    } else {
                        rho
                    }
                }),
            )
        };

        let project = |v: &DVector<f64>| {
            DVector::from_iterator(m, (0..m).map(|i| v[i].clamp(sc.lb[i], sc.ub[i])))
        };

        // Scaled iterates.
        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(m);
        if let Some(w) = warm {
            if w.x.len() == n {
                x = w.x.component_div(&sc.d);
            }
            if let Some(wy) = w.y.as_ref().filter(|wy| wy.len() == m) {
                y = wy.component_div(&sc.e) * sc.c;
            }
        }
        let mut z = project(&(&sc.a * &x));

        let unscale_x = |x: &DVector<f64>| x.component_mul(&sc.d);
        let unscale_y = |y: &DVector<f64>| y.component_mul(&sc.e) / sc.c;

        let residuals = |x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>| {
            let ax = &sc.a * x;
            let hx = &sc.h * x;
            let aty = sc.a.transpose() * y;
            let primal = (&ax - z).component_div(&sc.e).amax_or_zero();
            let dual = (&hx + &sc.g + &aty).component_div(&sc.d).amax() / sc.c;
            Residuals {
                primal,
                dual,
                primal_scale: ax.amax_or_zero().max(z.amax_or_zero()).max(1e-12),
                dual_scale: hx.amax().max(aty.amax()).max(sc.g.amax()).max(1e-12),
            }
        };

        let finish = |x: DVector<f64>, y: DVector<f64>, status, iterations, polished| {
            let primal_residual = reg.max_violation(&x);
            let dual_residual = (&reg.h * &x + &reg.g + reg.a.transpose() * &y).amax();
            QpSolution {
                objective: problem.objective(&x),
                x,
                y,
                status,
                iterations,
                primal_residual,
                dual_residual,
                polished,
            }
        };

        // A warm start may already be optimal: try its active set first.
        if let Some(w) = warm {
            if s.polish && w.x.len() == n {
                let guess = match &w.y {
                    Some(wy) if wy.len() == m => active_from_duals(&reg, &w.x, wy, s.tol),
                    _ => active_from_primal(&reg, &w.x, s.tol),
                };
                if let Some((px, py)) = polish(&reg, &guess, s.tol) {
                    return finish(px, py, QpStatus::Solved, 0, true);
                }
            }
        }

        let mut rho = s.rho;
        let mut rhos = rho_vec(rho);
        let factor = |rhos: &DVector<f64>| {
            let mut k = sc.h.clone();
            for i in 0..n {
                k[(i, i)] += s.sigma;
            }
            let mut weighted = sc.a.clone();
            for i in 0..m {
                weighted.row_mut(i).scale_mut(rhos[i]);
            }
            k += sc.a.transpose() * weighted;
            k.cholesky().expect("ADMM system is positive definite")
        };
        let mut chol = factor(&rhos);

        let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
        let mut last_polish_at: Option<usize> = None;
        let alpha = s.relaxation;

        for iter in 1..=s.max_iters {
            let y_prev = y.clone();
            let rhs = &x * s.sigma - &sc.g + sc.a.transpose() * (rhos.component_mul(&z) - &y);
            let x_tilde = chol.solve(&rhs);
            let z_tilde = &sc.a * &x_tilde;
            x = &x_tilde * alpha + &x * (1.0 - alpha);
            let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
            let z_new = project(&(&z_relaxed + y.component_div(&rhos)));
            y += rhos.component_mul(&(&z_relaxed - &z_new));
            z = z_new;

            let r = residuals(&x, &z, &y);
            let merit = r.primal.max(r.dual);
            if best.as_ref().is_none_or(|(b, _, _)| merit < *b) {
                best = Some((merit, x.clone(), y.clone()));
            }
            if r.primal <= s.tol && r.dual <= s.tol {
                let (ux, uy) = (unscale_x(&x), unscale_y(&y));
                if s.polish {
                    let guess = active_from_duals(&reg, &ux, &uy, s.tol);
                    if let Some((px, py)) = polish(&reg, &guess, s.tol) {
                        return finish(px, py, QpStatus::Solved, iter, true);
                    }
                }
                return finish(ux, uy, QpStatus::Solved, iter, false);
            }
            let due = last_polish_at.is_none_or(|at| iter - at >= s.adapt_rho_every);
            if s.polish && merit <= s.polish_trigger && due {
                last_polish_at = Some(iter);
                let (ux, uy) = (unscale_x(&x), unscale_y(&y));
                let guess = active_from_duals(&reg, &ux, &uy, s.tol);
                if let Some((px, py)) = polish(&reg, &guess, s.tol) {
                    return finish(px, py, QpStatus::Solved, iter, true);
                }
            }

            if m > 0 && primal_infeasible(problem, &unscale_y(&(&y - &y_prev)), s.infeasibility_tol) {
                return finish(unscale_x(&x), unscale_y(&y), QpStatus::Infeasible, iter, false);
            }

            if iter % s.adapt_rho_every == 0 && m > 0 {
                let ratio = (r.primal / r.primal_scale) / (r.dual / r.dual_scale).max(1e-30);
                let new_rho = (rho * ratio.sqrt()).clamp(1e-6, 1e6);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    rho = new_rho;
                    rhos = rho_vec(rho);
                    chol = factor(&rhos);
                }
            }
        }
        let (_, bx, by) = best.unwrap_or((0.0, x, y));
        finish(unscale_x(&bx), unscale_y(&by), QpStatus::MaxIters, s.max_iters, false)
    }
}

trait AmaxOrZero {
    fn amax_or_zero(&self) -> f64;
}

impl AmaxOrZero for DVector<f64> {
    fn amax_or_zero(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.amax()
        }
    }
}

/// Per-row activity: `-1` at the lower bound, `1` at the upper, `0` free.
/// Rows with `lb == ub` are always active.
type ActiveSet = Vec<i8>;

fn active_from_duals(p: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, tol: f64) -> ActiveSet {
    let ax = &p.a * x;
    (0..p.p())
        .map(|i| {
            if p.lb[i] == p.ub[i] {
                return 1;
            }
            let lower = p.lb[i].is_finite() && (y[i] < -tol || (y[i] <= 0.0 && ax[i] <= p.lb[i] + tol));
            let upper = p.ub[i].is_finite() && (y[i] > tol || (y[i] >= 0.0 && ax[i] >= p.ub[i] - tol));
            match (lower, upper) {
                (true, true) => if y[i] < 0.0 { -1 } else { 1 },
                (true, false) => -1,
                (false, true) => 1,
                (false, false) => 0,
            }
        })
        .collect()
}

fn active_from_primal(p: &QpProblem, x: &DVector<f64>, tol: f64) -> ActiveSet {
    let ax = &p.a * x;
    let band = |b: f64| tol * (1.0 + b.abs());
    (0..p.p())
        .map(|i| {
            if p.lb[i] == p.ub[i] || (p.ub[i].is_finite() && ax[i] >= p.ub[i] - band(p.ub[i])) {
                1
            } else if p.lb[i].is_finite() && ax[i] <= p.lb[i] + band(p.lb[i]) {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// Solves the equality-constrained KKT system of an active set and accepts
/// the result only if it is primal feasible, dual feasible and stationary.
fn polish(p: &QpProblem, active: &ActiveSet, tol: f64) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = p.n();
    let rows: Vec<usize> = (0..p.p()).filter(|&i| active[i] != 0).collect();
    let k = rows.len();
    let delta = 1e-10;
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&p.g));
    for (r, &i) in rows.iter().enumerate() {
        let row = p.a.row(i);
        kkt.view_mut((n + r, 0), (1, n)).copy_from(&row);
        kkt.view_mut((0, n + r), (n, 1)).copy_from(&row.transpose());
        rhs[n + r] = if active[i] < 0 { p.lb[i] } else { p.ub[i] };
    }
    let mut reg = kkt.clone();
    for i in 0..n {
        reg[(i, i)] += delta;
    }
    for i in n..n + k {
        reg[(i, i)] -= delta;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..3 {
        let res = &rhs - &kkt * &sol;
        sol += lu.solve(&res)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y = DVector::zeros(p.p());
    for (r, &i) in rows.iter().enumerate() {
        y[i] = sol[n + r];
    }
    for &i in &rows {
        if p.lb[i] == p.ub[i] {
            continue;
        }
        let sign_ok = if active[i] < 0 { y[i] <= tol } else { y[i] >= -tol };
        if !sign_ok {
            return None;
        }
    }
    let stationarity = (&p.h * &x + &p.g + p.a.transpose() * &y).amax();
    if p.max_violation(&x) > tol || stationarity > tol {
        return None;
    }
    Some((x, y))
}

/// `δy` certifies an empty feasible set when `Aᵀδy ≈ 0` while the support of
/// the bound box along `δy` is negative.
fn primal_infeasible(p: &QpProblem, dy: &DVector<f64>, eps: f64) -> bool {
    let norm = dy.amax();
    if !(norm > 1e-12) {
        return false;
    }
    if (p.a.transpose() * dy).amax() > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..p.p() {
        let v = dy[i];
        if v.abs() <= eps * norm {
            continue;
        }
        let bound = if v > 0.0 { p.ub[i] } else { p.lb[i] };
        if !bound.is_finite() {
            return false;
        }
        support += bound * v;
    }
    support < -eps * norm
}

/// Desired motion of one fingertip for the tracking QP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TipTarget {
    pub linear: nalgebra::Vector3<f64>,
    pub angular: nalgebra::Vector3<f64>,
    /// Weight of the angular term; the controller uses 0 or 1.
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingParams {
    /// Look-ahead horizon `H` (s) used to linearize limits and collisions.
    pub horizon: f64,
    /// Minimum signed distance to keep over the horizon (m).
    pub collision_margin: f64,
    /// Optional `λ‖q̇‖²` term; 0 reproduces the plain tracking objective.
    pub damping: f64,
}

/// Builds the tracking QP over joint velocities:
/// `Σ ‖ẋ_i − J^x_i q̇‖² + α_i ‖ω_i − J^R_i q̇‖² (+ λ‖q̇‖²)` with rows
/// `Γ + dΓ q̇ H ≥ ε`, `q_min ≤ q + q̇ H ≤ q_max` and `q̇_min ≤ q̇ ≤ q̇_max`.
pub fn assemble_tracking_qp(
    state: &KinematicState,
    targets: &[TipTarget],
    model: &RobotModel,
    collisions: &CollisionValues,
    params: &TrackingParams,
) -> Result<QpProblem, QpError> {
    let n = model.dof();
    if targets.len() != state.tips.len() {
        return Err(QpError::Dimension(format!(
            "{} targets for {} fingertips",
            targets.len(),
            state.tips.len()
        )));
    }
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for (tip, t) in state.tips.iter().zip(targets) {
        h += tip.jx.transpose() * &tip.jx * 2.0;
        g -= tip.jx.transpose() * t.linear * 2.0;
        if t.alpha != 0.0 {
            h += tip.jr.transpose() * &tip.jr * (2.0 * t.alpha);
            g -= tip.jr.transpose() * t.angular * (2.0 * t.alpha);
        }
    }
    for i in 0..n {
        h[(i, i)] += 2.0 * params.damping;
    }
    // Exact symmetry for the validator.
    let h = (&h + h.transpose()) * 0.5;

    let k = collisions.gamma.len();
    let rows = k + 2 * n;
    let mut a = DMatrix::zeros(rows, n);
    let mut lb = DVector::zeros(rows);
    let mut ub = DVector::zeros(rows);
    let horizon = params.horizon;
    for j in 0..k {
        a.set_row(j, &(collisions.jacobian.row(j) * horizon));
        lb[j] = params.collision_margin - collisions.gamma[j];
        ub[j] = f64::INFINITY;
    }
    let (q_min, q_max) = (model.q_min(), model.q_max());
    let (qd_min, qd_max) = (model.qd_min(), model.qd_max());
    for i in 0..n {
        a[(k + i, i)] = horizon;
        lb[k + i] = q_min[i] - state.q[i];
        ub[k + i] = q_max[i] - state.q[i];
        a[(k + n + i, i)] = 1.0;
        lb[k + n + i] = qd_min[i];
        ub[k + n + i] = qd_max[i];
    }
    QpProblem::new(h, g, a, lb, ub)
}
