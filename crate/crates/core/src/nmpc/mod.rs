//! Nonlinear MPC by direct multiple shooting and sequential quadratic
//! programming.
//!
//! The per-tick problem stacks every horizon state and input into one
//! decision vector `z = [X[0..=Np], U[0..Np]]` and imposes
//! - equalities: the initial-state pin `X[0] = x0` and the one-step dynamics
//!   `X[k+1] = X[k] + Ts f(X[k], U[k])`,
//! - inequalities: the learned-barrier condition
//!   `h(p_{k+1}) - h(p_k) + γ h(p_k) >= 0` (with `h` shifted down by an
//!   optional conservatism margin) at every step, plus state and input boxes.
//!
//! The objective is quadratic, so SQP with the exact (Gauss-Newton) Hessian
//! reduces to solving one dense QP per iteration: constant Hessian, fresh
//! linearizations of dynamics and barrier rows. Steps are globalized with an
//! l1 exact-penalty merit function and Armijo backtracking. When a QP's
//! linearized constraints are inconsistent, a relaxed ("elastic") QP with
//! slack on the barrier rows recovers a restoration direction; if even the
//! true violation cannot be pushed below a coarse threshold the solve is
//! declared infeasible and the caller falls back to a safety stop.

pub mod qp;

use crate::kinematics::{
    input_matrix, step_raw, velocity_state_jacobian, ControlInput, KinematicsParams,
};
use crate::lbf::BarrierNet;
use crate::world::{Pose, Position2};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

/// Levenberg-style diagonal regularization added to the Gauss-Newton
/// Hessian; keeps the pinned initial-state block positive definite without
/// visibly perturbing the minimizer.
pub const HESSIAN_REG: f64 = 1e-7;
/// Feasibility tolerance on equality and barrier rows for convergence.
pub const TOL_FEASIBILITY: f64 = 1e-4;
/// Stationarity tolerance (infinity norm of the KKT residual).
pub const TOL_STATIONARITY: f64 = 1e-4;
/// SQP iteration cap.
pub const MAX_SQP_ITERS: usize = 50;
/// A solve whose best iterate still violates constraints beyond this is
/// reported as infeasible.
pub const INFEASIBLE_THRESHOLD: f64 = 1e-2;
/// Linear penalty weight on barrier slack in the elastic QP.
const ELASTIC_PENALTY: f64 = 1e4;
/// Small quadratic slack weight keeping the elastic Hessian positive
/// definite.
const ELASTIC_QUAD: f64 = 1e-2;
/// Armijo sufficient-decrease coefficient.
const ARMIJO_C1: f64 = 0.1;
/// Smallest accepted line-search step.
const ALPHA_MIN: f64 = 1e-10;

/// Horizon weights, bounds and barrier parameters of the controller.
#[derive(Debug, Clone)]
pub struct NmpcConfig {
    /// Horizon length in steps.
    pub horizon: usize,
    /// State weight (positive semidefinite).
    pub q: Matrix3<f64>,
    /// Input weight (positive definite).
    pub r: Matrix2<f64>,
    /// Componentwise state bounds; use infinities for unbounded components.
    pub x_min: Vector3<f64>,
    pub x_max: Vector3<f64>,
    /// Componentwise input bounds.
    pub u_min: Vector2<f64>,
    pub u_max: Vector2<f64>,
    /// Barrier decay rate in (0, 1].
    pub gamma: f64,
    /// Conservatism margin subtracted from the learned barrier inside the
    /// constraint (meters, >= 0).
    pub barrier_margin: f64,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            q: Matrix3::from_diagonal(&Vector3::new(5.0, 5.0, 0.05)),
            r: Matrix2::from_diagonal(&Vector2::new(2.0, 0.5)),
            x_min: Vector3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            x_max: Vector3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            u_min: Vector2::new(-0.22, -2.84),
            u_max: Vector2::new(0.22, 2.84),
            gamma: 0.1,
            barrier_margin: 0.0,
        }
    }
}

/// Solver outcome classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Feasible to tolerance and first-order stationary.
    Converged,
    /// Iteration cap hit; the best iterate found is returned.
    MaxIterations,
    /// Constraint violation could not be reduced below the infeasibility
    /// threshold; the returned inputs must not be applied.
    Infeasible,
}

/// Result of one horizon solve.
#[derive(Debug, Clone)]
pub struct HorizonSolution {
    pub status: SolveStatus,
    /// Optimal inputs, `horizon` entries.
    pub u: Vec<ControlInput>,
    /// Predicted states including the pinned initial state, `horizon + 1`
    /// entries (headings unwrapped).
    pub x: Vec<Pose>,
    pub objective: f64,
    pub iterations: usize,
    pub max_eq_violation: f64,
    pub max_cbc_violation: f64,
}

/// Initial guess for the decision variables.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: Vec<Pose>,
    pub u: Vec<ControlInput>,
}

impl WarmStart {
    /// Cold start: zero inputs, every state at the current pose.
    pub fn cold(x0: Pose, horizon: usize) -> Self {
        Self {
            x: vec![x0; horizon + 1],
            u: vec![ControlInput::ZERO; horizon],
        }
    }
}

/// Receding-horizon shift: drop the consumed first input, hold the last one,
/// and restart the state chain from the fresh odometry `x_c`.
pub fn shift_warm_start(prev: &HorizonSolution, x_c: Pose) -> WarmStart {
    let np = prev.u.len();
    let mut u = Vec::with_capacity(np);
    u.extend_from_slice(&prev.u[1..]);
    u.push(prev.u[np - 1]);
    let mut x = Vec::with_capacity(np + 1);
    x.push(x_c);
    x.extend_from_slice(&prev.x[2..]);
    x.push(prev.x[np]);
    WarmStart { x, u }
}

/// One stage of the tracking objective:
/// `(x - x_ref)' Q (x - x_ref) + u' R u`, with the heading difference taken
/// raw (unwrapped) so the cost stays smooth across the horizon.
pub fn stage_cost(
    x: &Pose,
    u: &ControlInput,
    x_ref: &Pose,
    q: &Matrix3<f64>,
    r: &Matrix2<f64>,
) -> f64 {
    let e = Vector3::new(x.x - x_ref.x, x.y - x_ref.y, x.theta - x_ref.theta);
    let uv = Vector2::new(u.v, u.omega);
    (q * e).dot(&e) + (r * uv).dot(&uv)
}

/// Static shape of the transcribed NLP for one tick.
#[derive(Debug, Clone)]
pub struct Transcription {
    /// Decision vector length: 3 (Np + 1) + 2 Np.
    pub num_vars: usize,
    /// Equality rows: the initial-state pin plus the dynamics defects,
    /// 3 (Np + 1).
    pub num_eq: usize,
    /// Barrier-condition rows: one per horizon step.
    pub num_cbc: usize,
    /// Initial decision vector from the warm start (initial state forced to
    /// x0, remaining entries clamped into their boxes).
    pub z0: DVector<f64>,
}

/// The per-tick NLP: current state, goal, barrier network and parameters.
pub struct NmpcProblem<'a> {
    pub x0: Pose,
    pub x_ref: Pose,
    pub net: &'a BarrierNet,
    pub config: NmpcConfig,
    pub kinematics: KinematicsParams,
}

/// One variable's box, kept only for finite sides.
#[derive(Debug, Clone, Copy)]
struct BoxBound {
    var: usize,
    lower: Option<f64>,
    upper: Option<f64>,
}

impl<'a> NmpcProblem<'a> {
    fn np(&self) -> usize {
        self.config.horizon
    }

    fn num_vars(&self) -> usize {
        3 * (self.np() + 1) + 2 * self.np()
    }

    /// Index of state k's first component in z.
    fn xi(&self, k: usize) -> usize {
        3 * k
    }

    /// Index of input k's first component in z.
    fn ui(&self, k: usize) -> usize {
        3 * (self.np() + 1) + 2 * k
    }

    /// Builds the stacked NLP for a warm start: decision layout, constraint
    /// counts and the initial point.
    pub fn build_problem(&self, warm: &WarmStart) -> Transcription {
        let np = self.np();
        assert_eq!(warm.x.len(), np + 1, "warm start states must cover Np+1");
        assert_eq!(warm.u.len(), np, "warm start inputs must cover Np");
        let mut z0 = DVector::zeros(self.num_vars());
        // The pin constraint holds exactly from the start: overwrite the
        // warm start's first state with the measured one, so the equality
        // keeps every SQP step at d[X0] = 0 and X*[0] == x0 bit-for-bit.
        z0[0] = self.x0.x;
        z0[1] = self.x0.y;
        z0[2] = self.x0.theta;
        for k in 1..=np {
            z0[self.xi(k)] = warm.x[k].x;
            z0[self.xi(k) + 1] = warm.x[k].y;
            z0[self.xi(k) + 2] = warm.x[k].theta;
        }
        for k in 0..np {
            z0[self.ui(k)] = warm.u[k].v;
            z0[self.ui(k) + 1] = warm.u[k].omega;
        }
        for b in self.box_bounds() {
            if let Some(lo) = b.lower {
                z0[b.var] = z0[b.var].max(lo);
            }
            if let Some(hi) = b.upper {
                z0[b.var] = z0[b.var].min(hi);
            }
        }
        Transcription {
            num_vars: self.num_vars(),
            num_eq: 3 * (np + 1),
            num_cbc: np,
            z0,
        }
    }

    /// Box constraints on the free variables. The pinned initial state
    /// carries no box (the equality supersedes it); predicted states use the
    /// workspace bounds, inputs the actuator bounds.
    fn box_bounds(&self) -> Vec<BoxBound> {
        let np = self.np();
        let finite = |v: f64| v.is_finite().then_some(v);
        let mut out = Vec::new();
        for k in 1..=np {
            for c in 0..3 {
                let b = BoxBound {
                    var: self.xi(k) + c,
                    lower: finite(self.config.x_min[c]),
                    upper: finite(self.config.x_max[c]),
                };
                if b.lower.is_some() || b.upper.is_some() {
                    out.push(b);
                }
            }
        }
        for k in 0..np {
            for c in 0..2 {
                let b = BoxBound {
                    var: self.ui(k) + c,
                    lower: finite(self.config.u_min[c]),
                    upper: finite(self.config.u_max[c]),
                };
                if b.lower.is_some() || b.upper.is_some() {
                    out.push(b);
                }
            }
        }
        out
    }

    fn pose_at(&self, z: &DVector<f64>, k: usize) -> Pose {
        Pose {
            x: z[self.xi(k)],
            y: z[self.xi(k) + 1],
            theta: z[self.xi(k) + 2],
        }
    }

    fn input_at(&self, z: &DVector<f64>, k: usize) -> ControlInput {
        ControlInput {
            v: z[self.ui(k)],
            omega: z[self.ui(k) + 1],
        }
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let np = self.np();
        let mut f = 0.0;
        for k in 0..np {
            let x = self.pose_at(z, k + 1);
            let u = self.input_at(z, k);
            f += stage_cost(&x, &u, &self.x_ref, &self.config.q, &self.config.r);
        }
        f
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let np = self.np();
        let mut g = DVector::zeros(self.num_vars());
        for k in 0..np {
            let x = self.pose_at(z, k + 1);
            let e = Vector3::new(
                x.x - self.x_ref.x,
                x.y - self.x_ref.y,
                x.theta - self.x_ref.theta,
            );
            let ge = 2.0 * self.config.q * e;
            let xi = self.xi(k + 1);
            g[xi] += ge[0];
            g[xi + 1] += ge[1];
            g[xi + 2] += ge[2];
            let u = self.input_at(z, k);
            let gu = 2.0 * self.config.r * Vector2::new(u.v, u.omega);
            let ui = self.ui(k);
            g[ui] += gu[0];
            g[ui + 1] += gu[1];
        }
        g
    }

    /// Constant Gauss-Newton Hessian (the objective is exactly quadratic),
    /// plus diagonal regularization.
    fn hessian(&self) -> DMatrix<f64> {
        let np = self.np();
        let n = self.num_vars();
        let mut h = DMatrix::zeros(n, n);
        for k in 1..=np {
            let xi = self.xi(k);
            for r in 0..3 {
                for c in 0..3 {
                    h[(xi + r, xi + c)] = 2.0 * self.config.q[(r, c)];
                }
            }
        }
        for k in 0..np {
            let ui = self.ui(k);
            for r in 0..2 {
                for c in 0..2 {
                    h[(ui + r, ui + c)] = 2.0 * self.config.r[(r, c)];
                }
            }
        }
        for i in 0..n {
            h[(i, i)] += HESSIAN_REG;
        }
        h
    }

    /// Equality residuals: pin rows then dynamics defects, `3 (Np+1)` total.
    fn eq_residuals(&self, z: &DVector<f64>) -> DVector<f64> {
        let np = self.np();
        let mut r = DVector::zeros(3 * (np + 1));
        r[0] = z[0] - self.x0.x;
        r[1] = z[1] - self.x0.y;
        r[2] = z[2] - self.x0.theta;
        for k in 0..np {
            let xk = self.pose_at(z, k);
            let uk = self.input_at(z, k);
            let pred = step_raw(&xk, &uk, &self.kinematics);
            let xn = self.pose_at(z, k + 1);
            let row = 3 * (k + 1);
            r[row] = xn.x - pred.x;
            r[row + 1] = xn.y - pred.y;
            r[row + 2] = xn.theta - pred.theta;
        }
        r
    }

    /// Barrier-condition values; row k must be >= 0.
    fn cbc_values(&self, z: &DVector<f64>) -> DVector<f64> {
        let np = self.np();
        let gamma = self.config.gamma;
        let margin = self.config.barrier_margin;
        // h(p_{k+1}) - (1-γ) h(p_k) - γ margin, reusing each forward pass.
        let h: Vec<f64> = (0..=np)
            .map(|k| {
                let p = self.pose_at(z, k);
                self.net.forward(Position2::new(p.x, p.y))
            })
            .collect();
        DVector::from_fn(np, |k, _| h[k + 1] - (1.0 - gamma) * h[k] - gamma * margin)
    }

    /// Dense Jacobian of the equality rows.
    fn eq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let np = self.np();
        let n = self.num_vars();
        let ts = self.kinematics.ts;
        let mut a = DMatrix::zeros(3 * (np + 1), n);
        for c in 0..3 {
            a[(c, c)] = 1.0;
        }
        for k in 0..np {
            let xk = self.pose_at(z, k);
            let uk = self.input_at(z, k);
            let row = 3 * (k + 1);
            // d r / d X[k+1] = I
            for c in 0..3 {
                a[(row + c, self.xi(k + 1) + c)] = 1.0;
            }
            // d r / d X[k] = -(I + Ts df/dx)
            let jx = velocity_state_jacobian(&xk, &uk, &self.kinematics);
            for rr in 0..3 {
                for cc in 0..3 {
                    let eye = if rr == cc { 1.0 } else { 0.0 };
                    a[(row + rr, self.xi(k) + cc)] = -(eye + ts * jx[(rr, cc)]);
                }
            }
            // d r / d U[k] = -Ts B(θ)
            let b = input_matrix(xk.theta, self.kinematics.a);
            for rr in 0..3 {
                for cc in 0..2 {
                    a[(row + rr, self.ui(k) + cc)] = -ts * b[(rr, cc)];
                }
            }
        }
        a
    }

    /// Dense Jacobian of the barrier rows: each touches only the positions
    /// of the two adjacent states, through the network's input gradient.
    fn cbc_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let np = self.np();
        let gamma = self.config.gamma;
        let grads: Vec<Vector2<f64>> = (0..=np)
            .map(|k| {
                let p = self.pose_at(z, k);
                self.net.input_gradient(Position2::new(p.x, p.y))
            })
            .collect();
        let mut a = DMatrix::zeros(np, self.num_vars());
        for k in 0..np {
            let gi = self.xi(k);
            let gn = self.xi(k + 1);
            a[(k, gn)] = grads[k + 1][0];
            a[(k, gn + 1)] = grads[k + 1][1];
            a[(k, gi)] = -(1.0 - gamma) * grads[k][0];
            a[(k, gi + 1)] = -(1.0 - gamma) * grads[k][1];
        }
        a
    }

    /// Worst constraint violation (equalities and barrier rows; boxes are
    /// maintained exactly by the QP steps).
    fn violation(&self, z: &DVector<f64>) -> f64 {
        let eq = self.eq_residuals(z).amax();
        let cbc = self
            .cbc_values(z)
            .iter()
            .fold(0.0f64, |acc, &c| acc.max(-c));
        eq.max(cbc)
    }

    /// l1 violation for the merit function.
    fn violation_l1(&self, z: &DVector<f64>) -> f64 {
        let eq: f64 = self.eq_residuals(z).iter().map(|r| r.abs()).sum();
        let cbc: f64 = self.cbc_values(z).iter().map(|c| c.min(0.0).abs()).sum();
        eq + cbc
    }

    /// Solves the tick's NLP. Always returns a solution object; `status`
    /// says whether it is trustworthy (`Converged`), best-effort
    /// (`MaxIterations`) or must be discarded (`Infeasible`).
    pub fn solve(&self, warm: &WarmStart) -> HorizonSolution {
        let n = self.num_vars();
        let t = self.build_problem(warm);
        let h = self.hessian();
        let boxes = self.box_bounds();
        let qp_iter_cap = 200 + 10 * (t.num_cbc + 2 * boxes.len() + n);

        let mut z = t.z0.clone();
        let mut mu = 10.0f64;
        let mut converged = false;
        let mut iterations = 0usize;

        // Best iterate seen: prefer feasible-to-tolerance with lowest
        // objective, otherwise lowest violation.
        let mut best_z = z.clone();
        let mut best_viol = self.violation(&z);
        let mut best_f = self.objective(&z);
        let mut stalled = 0usize;

        for _ in 0..MAX_SQP_ITERS {
            iterations += 1;
            let viol = self.violation(&z);
            let f = self.objective(&z);
            let improved = track_best(
                &mut best_z, &mut best_viol, &mut best_f, &z, viol, f,
            );
            stalled = if improved { 0 } else { stalled + 1 };
            if stalled > 10 && viol > TOL_FEASIBILITY {
                // Persistent violation with no progress: stop burning
                // iterations; the status logic below classifies the outcome.
                break;
            }

            let grad = self.gradient(&z);
            let a_eq = self.eq_jacobian(&z);
            let b_eq = -self.eq_residuals(&z);
            let a_cbc = self.cbc_jacobian(&z);
            let cbc = self.cbc_values(&z);
            let (a_in, b_in) = self.inequality_rows(&a_cbc, &cbc, &boxes, &z);

            let step = match qp::solve(&h, &grad, &a_eq, &b_eq, &a_in, &b_in, qp_iter_cap) {
                Ok(sol) => Some((
                    sol.x,
                    sol.lambda_eq.amax().max(sol.lambda_in.amax()),
                )),
                Err(_) => self.elastic_step(&h, &grad, &a_eq, &b_eq, &a_cbc, &cbc, &boxes, &z, qp_iter_cap),
            };
            let Some((d, lambda_inf)) = step else {
                break;
            };

            // KKT residual of the NLP at z equals (H + reg) d by the QP's
            // stationarity condition.
            let stationarity = (&h * &d).amax();
            if viol <= TOL_FEASIBILITY && stationarity <= TOL_STATIONARITY {
                converged = true;
                break;
            }

            // l1 exact-penalty line search.
            mu = mu.max(1.2 * lambda_inf + 1.0);
            let viol_l1 = self.violation_l1(&z);
            let phi0 = f + mu * viol_l1;
            let descent = grad.dot(&d) - mu * viol_l1;
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha >= ALPHA_MIN {
                let z_try = &z + &d * alpha;
                let phi = self.objective(&z_try) + mu * self.violation_l1(&z_try);
                if phi <= phi0 + ARMIJO_C1 * alpha * descent {
                    z = z_try;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }

        let (z_out, status) = if converged {
            (z, SolveStatus::Converged)
        } else {
            // One last look at the current iterate before falling back.
            let viol = self.violation(&z);
            let f = self.objective(&z);
            track_best(&mut best_z, &mut best_viol, &mut best_f, &z, viol, f);
            if best_viol > INFEASIBLE_THRESHOLD {
                (best_z, SolveStatus::Infeasible)
            } else {
                (best_z, SolveStatus::MaxIterations)
            }
        };
        self.assemble(z_out, status, iterations)
    }

    /// Stacks barrier rows and box rows into one inequality system
    /// (d-space): `A (z + d) >= b` becomes `A d >= b - A z`.
    fn inequality_rows(
        &self,
        a_cbc: &DMatrix<f64>,
        cbc: &DVector<f64>,
        boxes: &[BoxBound],
        z: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_vars();
        let mut rows = a_cbc.nrows();
        for b in boxes {
            rows += b.lower.is_some() as usize + b.upper.is_some() as usize;
        }
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        a.view_mut((0, 0), (a_cbc.nrows(), n)).copy_from(a_cbc);
        for k in 0..cbc.len() {
            b[k] = -cbc[k];
        }
        let mut row = a_cbc.nrows();
        for bb in boxes {
            if let Some(lo) = bb.lower {
                a[(row, bb.var)] = 1.0;
                b[row] = lo - z[bb.var];
                row += 1;
            }
            if let Some(hi) = bb.upper {
                a[(row, bb.var)] = -1.0;
                b[row] = z[bb.var] - hi;
                row += 1;
            }
        }
        (a, b)
    }

    /// Restoration direction when the linearized constraints are
    /// inconsistent: barrier rows receive nonnegative slack penalized
    /// linearly (plus a small quadratic term), everything else stays hard.
    #[allow(clippy::too_many_arguments)]
    fn elastic_step(
        &self,
        h: &DMatrix<f64>,
        grad: &DVector<f64>,
        a_eq: &DMatrix<f64>,
        b_eq: &DVector<f64>,
        a_cbc: &DMatrix<f64>,
        cbc: &DVector<f64>,
        boxes: &[BoxBound],
        z: &DVector<f64>,
        qp_iter_cap: usize,
    ) -> Option<(DVector<f64>, f64)> {
        let n = self.num_vars();
        let m = a_cbc.nrows();
        let ne = n + m;

        let mut he = DMatrix::zeros(ne, ne);
        he.view_mut((0, 0), (n, n)).copy_from(h);
        for i in 0..m {
            he[(n + i, n + i)] = ELASTIC_QUAD;
        }
        let mut ge = DVector::zeros(ne);
        ge.rows_mut(0, n).copy_from(grad);
        for i in 0..m {
            ge[n + i] = ELASTIC_PENALTY;
        }
        let mut ae = DMatrix::zeros(a_eq.nrows(), ne);
        ae.view_mut((0, 0), (a_eq.nrows(), n)).copy_from(a_eq);

        // Rows: [A_cbc | I] (d, s) >= -cbc ; s >= 0 ; boxes on d.
        let mut box_rows = 0;
        for b in boxes {
            box_rows += b.lower.is_some() as usize + b.upper.is_some() as usize;
        }
        let rows = m + m + box_rows;
        let mut ai = DMatrix::zeros(rows, ne);
        let mut bi = DVector::zeros(rows);
        for k in 0..m {
            for c in 0..n {
                ai[(k, c)] = a_cbc[(k, c)];
            }
            ai[(k, n + k)] = 1.0;
            bi[k] = -cbc[k];
            ai[(m + k, n + k)] = 1.0; // slack nonnegativity
        }
        let mut row = 2 * m;
        for bb in boxes {
            if let Some(lo) = bb.lower {
                ai[(row, bb.var)] = 1.0;
                bi[row] = lo - z[bb.var];
                row += 1;
            }
            if let Some(hi) = bb.upper {
                ai[(row, bb.var)] = -1.0;
                bi[row] = z[bb.var] - hi;
                row += 1;
            }
        }

        let sol = qp::solve(&he, &ge, &ae, b_eq, &ai, &bi, qp_iter_cap + 10 * m).ok()?;
        let lambda_inf = sol.lambda_eq.amax().max(
            sol.lambda_in
                .rows(0, m)
                .amax()
                .max(if rows > 2 * m {
                    sol.lambda_in.rows(2 * m, box_rows).amax()
                } else {
                    0.0
                }),
        );
        Some((sol.x.rows(0, self.num_vars()).into_owned(), lambda_inf))
    }

    fn assemble(&self, z: DVector<f64>, status: SolveStatus, iterations: usize) -> HorizonSolution {
        let np = self.np();
        let mut u = Vec::with_capacity(np);
        for k in 0..np {
            let raw = self.input_at(&z, k);
            // The QP keeps iterates inside the boxes; clamp away any
            // last-bit numerical overshoot so the bound invariant is exact.
            u.push(ControlInput {
                v: raw.v.clamp(self.config.u_min[0], self.config.u_max[0]),
                omega: raw.omega.clamp(self.config.u_min[1], self.config.u_max[1]),
            });
        }
        let x: Vec<Pose> = (0..=np).map(|k| self.pose_at(&z, k)).collect();
        let max_eq_violation = self.eq_residuals(&z).amax();
        let max_cbc_violation = self
            .cbc_values(&z)
            .iter()
            .fold(0.0f64, |acc, &c| acc.max(-c));
        HorizonSolution {
            status,
            u,
            x,
            objective: self.objective(&z),
            iterations,
            max_eq_violation,
            max_cbc_violation,
        }
    }
}

/// Updates the tracked best iterate; returns whether it improved.
fn track_best(
    best_z: &mut DVector<f64>,
    best_viol: &mut f64,
    best_f: &mut f64,
    z: &DVector<f64>,
    viol: f64,
    f: f64,
) -> bool {
    let new_feasible = viol <= TOL_FEASIBILITY;
    let cur_feasible = *best_viol <= TOL_FEASIBILITY;
    let better = match (new_feasible, cur_feasible) {
        (true, true) => f < *best_f,
        (true, false) => true,
        (false, true) => false,
        (false, false) => viol < *best_viol - 1e-12,
    };
    if better {
        best_z.copy_from(z);
        *best_viol = viol;
        *best_f = f;
    }
    better
}
