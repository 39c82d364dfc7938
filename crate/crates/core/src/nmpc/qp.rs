//! Dense convex QP solver: dual active-set method of Goldfarb and Idnani.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x' H x + g' x
//! subject to  A x  = b      (equalities)
//!             C x >= d      (inequalities)
//! ```
//!
//! with `H` symmetric positive definite. The dual method starts from the
//! unconstrained minimizer (always available thanks to positive
//! definiteness), so no phase-1 problem is needed, and it detects
//! inconsistent constraints as dual unboundedness, which callers receive as
//! [`QpError::Infeasible`].
//!
//! Internally the active set is tracked through the factorization
//! `J' N = [R; 0]` with `J = L^{-T}` from the Cholesky factor of `H` and `N`
//! the matrix of active constraint normals; `R` is kept upper triangular by
//! Givens rotations as constraints enter and leave.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QpError {
    #[error("quadratic term is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("active-set iteration limit reached (degenerate constraint set)")]
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// 1/2 x'Hx + g'x at the solution.
    pub objective: f64,
    /// Multipliers of the equality rows (sign-free).
    pub lambda_eq: DVector<f64>,
    /// Multipliers of the inequality rows (nonnegative; zero when inactive).
    pub lambda_in: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConstraintId {
    Eq(usize),
    In(usize),
}

/// Solves the QP. Constraint matrices are row-per-constraint; pass matrices
/// with zero rows for absent constraint classes. `max_iters` bounds active-set
/// changes and guards against cycling on degenerate data.
pub fn solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    max_iters: usize,
) -> Result<QpSolution, QpError> {
    let n = h.nrows();
    assert_eq!(h.ncols(), n, "H must be square");
    assert_eq!(g.len(), n);
    assert_eq!(a_eq.ncols().max(n), n);
    assert_eq!(a_in.ncols().max(n), n);
    let m_eq = a_eq.nrows();
    let m_in = a_in.nrows();

    let chol = Cholesky::new(h.clone()).ok_or(QpError::NotPositiveDefinite)?;
    // J = L^{-T}: triangular solve against the identity.
    let mut j = DMatrix::identity(n, n);
    chol.l().transpose().solve_upper_triangular_mut(&mut j);

    // Unconstrained minimizer.
    let mut x = chol.solve(&(-g));

    let mut r = DMatrix::zeros(n, n); // upper-triangular workspace
    let mut active: Vec<ConstraintId> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n); // multipliers, aligned with `active`
    let mut iterations = 0usize;

    // --- Phase 1: install the equality constraints one by one. ---
    for i in 0..m_eq {
        let np = a_eq.row(i).transpose();
        let (d, z, rr) = project(&j, &r, active.len(), &np);
        let ztnp = z.dot(&np);
        let denom = d.norm_squared().max(f64::MIN_POSITIVE);
        let residual = np.dot(&x) - b_eq[i];
        if ztnp <= f64::EPSILON * denom {
            // Normal is dependent on the active set: consistent (skip with a
            // zero multiplier) or contradictory (infeasible).
            if residual.abs() > 1e-9 * (1.0 + b_eq[i].abs()) {
                return Err(QpError::Infeasible);
            }
            continue;
        }
        let t = -residual / ztnp;
        for (k, uk) in u.iter_mut().enumerate() {
            *uk -= t * rr[k];
        }
        x.axpy(t, &z, 1.0);
        add_constraint(&mut r, &mut j, d, active.len());
        active.push(ConstraintId::Eq(i));
        u.push(t);
    }

    // --- Phase 2: dual active-set iteration over the inequalities. ---
    'outer: loop {
        iterations += 1;
        if iterations > max_iters {
            return Err(QpError::IterationLimit);
        }

        // Most violated inactive inequality.
        let mut chosen = None;
        let mut worst = -1e-10;
        for jrow in 0..m_in {
            if active.contains(&ConstraintId::In(jrow)) {
                continue;
            }
            let s = a_in.row(jrow).transpose().dot(&x) - b_in[jrow];
            let tol = 1e-10 * (1.0 + b_in[jrow].abs());
            if s < -tol && s < worst {
                worst = s;
                chosen = Some(jrow);
            }
        }
        let Some(jrow) = chosen else {
            break 'outer;
        };

        let np = a_in.row(jrow).transpose();
        let mut u_plus = 0.0;
        let mut s = np.dot(&x) - b_in[jrow];

        loop {
            iterations += 1;
            if iterations > max_iters {
                return Err(QpError::IterationLimit);
            }
            let q = active.len();
            let (d, z, rr) = project(&j, &r, q, &np);
            let ztnp = z.dot(&np);
            let denom = d.norm_squared().max(f64::MIN_POSITIVE);

            // Partial step bound: first active inequality whose multiplier
            // would cross zero.
            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for (k, id) in active.iter().enumerate() {
                if matches!(id, ConstraintId::In(_)) && rr[k] > 0.0 {
                    let bound = u[k] / rr[k];
                    if bound < t1 {
                        t1 = bound;
                        drop_idx = Some(k);
                    }
                }
            }
            // Full step: reaches the boundary of the chosen constraint.
            let t2 = if ztnp > f64::EPSILON * denom {
                -s / ztnp
            } else {
                f64::INFINITY
            };

            let t = t1.min(t2);
            if t.is_infinite() {
                // Can neither move nor relax anything: the linearized set is
                // empty.
                return Err(QpError::Infeasible);
            }

            if t2.is_infinite() {
                // Dual-only step: relax the blocking constraint and retry.
                for (k, uk) in u.iter_mut().enumerate() {
                    *uk -= t * rr[k];
                }
                u_plus += t;
                let k = drop_idx.expect("finite t1 implies a blocking index");
                delete_constraint(&mut r, &mut j, &mut active, &mut u, k);
                continue;
            }

            x.axpy(t, &z, 1.0);
            for (k, uk) in u.iter_mut().enumerate() {
                *uk -= t * rr[k];
            }
            u_plus += t;

            if t2 <= t1 {
                // Constraint reaches its boundary: activate it.
                add_constraint(&mut r, &mut j, d, active.len());
                active.push(ConstraintId::In(jrow));
                u.push(u_plus);
                continue 'outer;
            }

            // Partial step: drop the blocking constraint, then keep moving
            // toward the chosen one.
            let k = drop_idx.expect("t1 < t2 implies a blocking index");
            delete_constraint(&mut r, &mut j, &mut active, &mut u, k);
            s = np.dot(&x) - b_in[jrow];
        }
    }

    let mut lambda_eq = DVector::zeros(m_eq);
    let mut lambda_in = DVector::zeros(m_in);
    for (id, &uk) in active.iter().zip(&u) {
        match *id {
            ConstraintId::Eq(i) => lambda_eq[i] = uk,
            ConstraintId::In(i) => lambda_in[i] = uk,
        }
    }
    let objective = 0.5 * (h * &x).dot(&x) + g.dot(&x);
    Ok(QpSolution {
        x,
        objective,
        lambda_eq,
        lambda_in,
        iterations,
    })
}

/// Computes the projections used by every dual step:
/// `d = J' np`, the step direction `z = J2 d2` (components `q..n`), and
/// `r = R1^{-1} d1` (multiplier sensitivities of the active set).
fn project(
    j: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q: usize,
    np: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, Vec<f64>) {
    let n = j.nrows();
    let d = j.tr_mul(np);
    let mut z = DVector::zeros(n);
    for col in q..n {
        z.axpy(d[col], &j.column(col), 1.0);
    }
    // Back-substitution on the leading q-by-q block of R.
    let mut rr = vec![0.0; q];
    for row in (0..q).rev() {
        let mut acc = d[row];
        for col in row + 1..q {
            acc -= r[(row, col)] * rr[col];
        }
        rr[row] = acc / r[(row, row)];
    }
    (d, z, rr)
}

/// Appends a constraint whose projected normal is `d`: rotates the tail of
/// `d` to zero (updating `J` to match) and writes the result as column `q`
/// of `R`.
fn add_constraint(r: &mut DMatrix<f64>, j: &mut DMatrix<f64>, mut d: DVector<f64>, q: usize) {
    let n = j.nrows();
    for col in (q + 1..n).rev() {
        let a = d[col - 1];
        let b = d[col];
        let h = a.hypot(b);
        if h == 0.0 {
            continue;
        }
        let (c, s) = (a / h, b / h);
        d[col - 1] = h;
        d[col] = 0.0;
        for k in 0..n {
            let t1 = j[(k, col - 1)];
            let t2 = j[(k, col)];
            j[(k, col - 1)] = c * t1 + s * t2;
            j[(k, col)] = -s * t1 + c * t2;
        }
    }
    for row in 0..=q.min(n - 1) {
        r[(row, q)] = d[row];
    }
}

/// Removes the active constraint at position `k`, restoring the triangular
/// structure of `R` with Givens rotations mirrored into `J`.
fn delete_constraint(
    r: &mut DMatrix<f64>,
    j: &mut DMatrix<f64>,
    active: &mut Vec<ConstraintId>,
    u: &mut Vec<f64>,
    k: usize,
) {
    let n = j.nrows();
    let q = active.len();
    active.remove(k);
    u.remove(k);
    // Shift the trailing columns of R left over the removed one.
    for col in k + 1..q {
        for row in 0..=col {
            r[(row, col - 1)] = r[(row, col)];
        }
    }
    let q = q - 1;
    // Chase the subdiagonal entries introduced by the shift.
    for i in k..q {
        let a = r[(i, i)];
        let b = r[(i + 1, i)];
        let h = a.hypot(b);
        if h == 0.0 {
            continue;
        }
        let (c, s) = (a / h, b / h);
        r[(i, i)] = h;
        r[(i + 1, i)] = 0.0;
        for col in i + 1..q {
            let t1 = r[(i, col)];
            let t2 = r[(i + 1, col)];
            r[(i, col)] = c * t1 + s * t2;
            r[(i + 1, col)] = -s * t1 + c * t2;
        }
        for row in 0..n {
            let t1 = j[(row, i)];
            let t2 = j[(row, i + 1)];
            j[(row, i)] = c * t1 + s * t2;
            j[(row, i + 1)] = -s * t1 + c * t2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty_rows(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    }

    #[test]
    fn unconstrained_matches_closed_form() {
        // min 1/2 x'Hx + g'x with H = diag(2, 4), g = (-2, -8): x = (1, 2).
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let g = DVector::from_vec(vec![-2.0, -8.0]);
        let (ae, be) = empty_rows(2);
        let (ai, bi) = empty_rows(2);
        let sol = solve(&h, &g, &ae, &be, &ai, &bi, 100).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(sol.objective, -9.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_constrained_matches_lagrangian_solution() {
        // min 1/2 |x|^2 s.t. x1 + x2 = 2 -> x = (1, 1), lambda = 1 against
        // the KKT sign convention H x + g = A' lambda.
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        let ae = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let be = DVector::from_vec(vec![2.0]);
        let (ai, bi) = empty_rows(2);
        let sol = solve(&h, &g, &ae, &be, &ai, &bi, 100).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-12);
        // Stationarity: Hx + g - A' lambda = 0.
        let resid = &h * &sol.x + &g - ae.transpose() * &sol.lambda_eq;
        assert!(resid.amax() < 1e-10);
    }

    #[test]
    fn active_inequality_is_respected_with_nonnegative_multiplier() {
        // min 1/2 (x-3)^2 s.t. x <= 1 (written as -x >= -1): x = 1.
        let h = DMatrix::from_element(1, 1, 1.0);
        let g = DVector::from_vec(vec![-3.0]);
        let (ae, be) = empty_rows(1);
        let ai = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let bi = DVector::from_vec(vec![-1.0]);
        let sol = solve(&h, &g, &ae, &be, &ai, &bi, 100).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert!(sol.lambda_in[0] > 0.0);
    }

    #[test]
    fn inactive_inequality_is_ignored() {
        let h = DMatrix::from_element(1, 1, 1.0);
        let g = DVector::from_vec(vec![-3.0]);
        let (ae, be) = empty_rows(1);
        let ai = DMatrix::from_row_slice(1, 1, &[1.0]); // x >= -5
        let bi = DVector::from_vec(vec![-5.0]);
        let sol = solve(&h, &g, &ae, &be, &ai, &bi, 100).unwrap();
        assert_relative_eq!(sol.x[0], 3.0, epsilon = 1e-12);
        assert_eq!(sol.lambda_in[0], 0.0);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // x >= 1 and -x >= 0 cannot hold together.
        let h = DMatrix::from_element(1, 1, 1.0);
        let g = DVector::zeros(1);
        let (ae, be) = empty_rows(1);
        let ai = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let bi = DVector::from_vec(vec![1.0, 0.0]);
        let err = solve(&h, &g, &ae, &be, &ai, &bi, 100).unwrap_err();
        assert_eq!(err, QpError::Infeasible);
    }

    #[test]
    fn contradictory_equalities_are_infeasible() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        let ae = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let be = DVector::from_vec(vec![1.0, 3.0]); // x1+x2 = 1 and = 1.5
        let (ai, bi) = empty_rows(2);
        let err = solve(&h, &g, &ae, &be, &ai, &bi, 100).unwrap_err();
        assert_eq!(err, QpError::Infeasible);
    }

    #[test]
    fn redundant_consistent_equality_is_tolerated() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        let ae = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let be = DVector::from_vec(vec![2.0, 4.0]); // same plane twice
        let (ai, bi) = empty_rows(2);
        let sol = solve(&h, &g, &ae, &be, &ai, &bi, 100).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn indefinite_hessian_is_rejected() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let g = DVector::zeros(2);
        let (ae, be) = empty_rows(2);
        let (ai, bi) = empty_rows(2);
        let err = solve(&h, &g, &ae, &be, &ai, &bi, 100).unwrap_err();
        assert_eq!(err, QpError::NotPositiveDefinite);
    }

    #[test]
    fn box_projection_in_five_dimensions() {
        // min 1/2 |x - y|^2 with -1 <= x_i <= 1 is coordinate clamping.
        let n = 5;
        let y = [2.0, -3.0, 0.25, 1.0, -0.75];
        let h = DMatrix::identity(n, n);
        let g = DVector::from_iterator(n, y.iter().map(|v| -v));
        let (ae, be) = empty_rows(n);
        let mut ai = DMatrix::zeros(2 * n, n);
        let mut bi = DVector::zeros(2 * n);
        for i in 0..n {
            ai[(2 * i, i)] = 1.0; // x_i >= -1
            bi[2 * i] = -1.0;
            ai[(2 * i + 1, i)] = -1.0; // -x_i >= -1  (x_i <= 1)
            bi[2 * i + 1] = -1.0;
        }
        let sol = solve(&h, &g, &ae, &be, &ai, &bi, 1000).unwrap();
        let expect = [1.0, -1.0, 0.25, 1.0, -0.75];
        for i in 0..n {
            assert_relative_eq!(sol.x[i], expect[i], epsilon = 1e-10);
        }
    }

    /// Brute-force reference: enumerate every active subset of the
    /// inequalities, solve the equality-constrained KKT system, and keep the
    /// unique candidate that is primal feasible with nonnegative multipliers.
    fn brute_force(
        h: &DMatrix<f64>,
        g: &DVector<f64>,
        a_eq: &DMatrix<f64>,
        b_eq: &DVector<f64>,
        a_in: &DMatrix<f64>,
        b_in: &DVector<f64>,
    ) -> Option<(DVector<f64>, f64)> {
        let n = h.nrows();
        let m_in = a_in.nrows();
        let m_eq = a_eq.nrows();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mask in 0u32..(1 << m_in) {
            let subset: Vec<usize> = (0..m_in).filter(|i| mask & (1 << i) != 0).collect();
            let m = m_eq + subset.len();
            // Stationarity is H x + g = A' lambda, so the unsymmetric system
            // [H -A'; A 0] [x; lambda] = [-g; b] yields lambda directly in
            // the usual sign convention.
            let mut kkt = DMatrix::zeros(n + m, n + m);
            kkt.view_mut((0, 0), (n, n)).copy_from(h);
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(&(-g));
            for (row, i) in (0..m_eq).enumerate() {
                for col in 0..n {
                    kkt[(n + row, col)] = a_eq[(i, col)];
                    kkt[(col, n + row)] = -a_eq[(i, col)];
                }
                rhs[n + row] = b_eq[i];
            }
            for (pos, &i) in subset.iter().enumerate() {
                let row = m_eq + pos;
                for col in 0..n {
                    kkt[(n + row, col)] = a_in[(i, col)];
                    kkt[(col, n + row)] = -a_in[(i, col)];
                }
                rhs[n + row] = b_in[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            if !sol.iter().all(|v| v.is_finite()) {
                continue;
            }
            let x = sol.rows(0, n).into_owned();
            // Reject if the KKT solve was numerically bogus (singular LU in
            // nalgebra can return garbage instead of None).
            if (h * &x + g
                - a_eq.transpose() * sol.rows(n, m_eq)
                - {
                    let mut acc = DVector::zeros(n);
                    for (pos, &i) in subset.iter().enumerate() {
                        acc += a_in.row(i).transpose() * sol[n + m_eq + pos];
                    }
                    acc
                })
            .amax()
                > 1e-7
            {
                continue;
            }
            // Multiplier nonnegativity on the chosen active set.
            if subset
                .iter()
                .enumerate()
                .any(|(pos, _)| sol[n + m_eq + pos] < -1e-9)
            {
                continue;
            }
            // Primal feasibility of everything else.
            let feasible = (0..m_in).all(|i| {
                a_in.row(i).transpose().dot(&x) - b_in[i] >= -1e-8
            }) && (0..m_eq)
                .all(|i| (a_eq.row(i).transpose().dot(&x) - b_eq[i]).abs() <= 1e-8);
            if !feasible {
                continue;
            }
            let obj = 0.5 * (h * &x).dot(&x) + g.dot(&x);
            match &best {
                Some((_, cur)) if *cur <= obj + 1e-12 => {}
                _ => best = Some((x, obj)),
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_enumeration_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut solved = 0;
        for case in 0..60 {
            let n = rng.gen_range(2..=4usize);
            let m_in = rng.gen_range(1..=7usize);
            let m_eq = rng.gen_range(0..=1usize);
            // PD Hessian: A A' + n I.
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let h = &a * a.transpose() + DMatrix::identity(n, n) * (n as f64);
            let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let a_eq = DMatrix::from_fn(m_eq, n, |_, _| rng.gen_range(-1.0..1.0));
            let b_eq = DVector::from_fn(m_eq, |_, _| rng.gen_range(-0.5..0.5));
            let a_in = DMatrix::from_fn(m_in, n, |_, _| rng.gen_range(-1.0..1.0));
            let b_in = DVector::from_fn(m_in, |_, _| rng.gen_range(-1.5..0.5));

            let reference = brute_force(&h, &g, &a_eq, &b_eq, &a_in, &b_in);
            let ours = solve(&h, &g, &a_eq, &b_eq, &a_in, &b_in, 10_000);
            match (reference, ours) {
                (Some((x_ref, obj_ref)), Ok(sol)) => {
                    assert_relative_eq!(sol.objective, obj_ref, epsilon = 1e-7);
                    for i in 0..n {
                        assert_relative_eq!(sol.x[i], x_ref[i], epsilon = 1e-6);
                    }
                    // KKT stationarity with the reported multipliers.
                    let resid = &h * &sol.x + &g
                        - a_eq.transpose() * &sol.lambda_eq
                        - a_in.transpose() * &sol.lambda_in;
                    assert!(resid.amax() < 1e-7, "case {case}: KKT residual");
                    assert!(sol.lambda_in.iter().all(|&l| l >= -1e-9));
                    solved += 1;
                }
                (None, Err(QpError::Infeasible)) => {}
                (r, o) => panic!(
                    "case {case}: reference {:?} vs solver {:?}",
                    r.map(|p| p.1),
                    o.map(|s| s.objective)
                ),
            }
        }
        // The generator must produce a healthy mix of solvable problems.
        assert!(solved >= 30, "only {solved} of 60 cases were feasible");
    }
}
