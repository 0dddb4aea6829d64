//! DCA baseline: linearize the concave parts of the objective and of every
//! constraint at the current point and solve the resulting convex program.
//!
//! The convex programs are solved with the iMBA driver itself; with convex
//! constraints the ball model is a global majorizer, so the inner run is a
//! plain feasible descent method.

use std::time::Instant;

use nalgebra::DVector;

use crate::dual::PglsParams;
use crate::driver::{solve, IterateRecord, SolveReport, SolveStatus, SolverParams};
use crate::error::{ImbaError, Result};
use crate::linalg::pos_inf_norm;
use crate::problem::{active_tolerance, constraint_scale, fitted_multipliers, QdccProblem, Regularizer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcaParams {
    pub eps_step: f64,
    pub k_max: usize,
    /// Settings of the convex-subproblem solver.
    pub inner: SolverParams,
}

impl Default for DcaParams {
    fn default() -> Self {
        Self {
            eps_step: 1e-5,
            k_max: 1000,
            inner: SolverParams {
                eps_step: 1e-8,
                k_min_compl: usize::MAX,
                // tight complementarity keeps L small, so steps along an active
                // constraint are not throttled
                beta_c: 1.0,
                pgls: PglsParams {
                    l_max: 20_000,
                    ..PglsParams::default()
                },
                ..SolverParams::default()
            },
        }
    }
}

/// `∂(c_h0‖·‖)(x)` element used by DCA: `c_h0 x/‖x‖`, and `0` at the origin.
pub fn dca_subgradient(prob: &QdccProblem, x: &DVector<f64>) -> DVector<f64> {
    let nx = x.norm();
    if nx > 0.0 {
        x * (prob.reg.c_h0 / nx)
    } else {
        DVector::zeros(prob.n)
    }
}

/// Convex program solved by one DCA step at `x_k`:
///
/// ```text
/// min  f0(x) - ⟨ξ_k, x⟩ + φ(x)
/// s.t. ‖B_i x + h_i‖² + 2⟨a_i - p_i x_k, x⟩ - (d_i² - p_i‖x_k‖²) ≤ 0
/// ```
///
/// Its objective equals `F(x_k)` at `x_k` and majorizes `F`; its feasible set is
/// contained in the original one.
pub fn dca_subproblem(prob: &QdccProblem, x_k: &DVector<f64>) -> Result<QdccProblem> {
    prob.check_point(x_k)?;
    let xi = dca_subgradient(prob, x_k);
    let tilt = match &prob.tilt {
        Some(t) => t - &xi,
        None => -xi,
    };
    let xk_sq = x_k.norm_squared();
    let constraints = prob
        .constraints
        .iter()
        .map(|c| {
            let mut sub = c.clone();
            let mut lin = c.lin.clone().unwrap_or_else(|| DVector::zeros(prob.n));
            lin.axpy(-c.p_coef, x_k, 1.0);
            sub.lin = Some(lin);
            sub.d_sq = c.d_sq - c.p_coef * xk_sq;
            sub.p_coef = 0.0;
            sub
        })
        .collect();
    let mut meta = prob.meta.clone();
    meta.note = Some("dca subproblem".to_string());
    let reg = Regularizer::new(0.0, prob.reg.c_phi)?;
    QdccProblem::new(prob.objective.clone(), reg, constraints, meta)?.with_tilt(tilt)
}

/// Runs DCA from the feasible point `x0`; the report is expressed in terms of
/// the original problem.
pub fn dca_solve(prob: &QdccProblem, x0: &DVector<f64>, params: &DcaParams) -> Result<SolveReport> {
    dca_solve_with_observer(prob, x0, params, |_, _| {})
}

/// [`dca_solve`] calling `observe` on every committed record and its iterate.
pub fn dca_solve_with_observer<O>(
    prob: &QdccProblem,
    x0: &DVector<f64>,
    params: &DcaParams,
    mut observe: O,
) -> Result<SolveReport>
where
    O: FnMut(&IterateRecord, &DVector<f64>),
{
    if !(params.eps_step > 0.0) || params.k_max == 0 {
        return Err(ImbaError::invalid("DCA needs eps_step > 0 and k_max >= 1"));
    }
    params.inner.validate()?;
    prob.check_point(x0)?;
    let viol = prob.feasibility_violation(x0);
    if viol > 0.0 || viol.is_nan() {
        return Err(ImbaError::invalid(format!(
            "starting point is infeasible (max g = {viol:e})"
        )));
    }
    let start = Instant::now();
    let f_initial = prob.objective_value(x0);
    let mut x = x0.clone();
    let mut v = DVector::zeros(prob.n);
    let mut lambda = DVector::zeros(prob.m);
    let mut records: Vec<IterateRecord> = Vec::new();

    let finish = |records, status, x, v, lambda, message| SolveReport {
        records,
        status,
        x0: x0.clone(),
        f_initial,
        x_final: x,
        v_final: v,
        lambda_final: lambda,
        total_time: start.elapsed().as_secs_f64(),
        message,
    };

    for k in 1..=params.k_max {
        let sub = dca_subproblem(prob, &x)?;
        let inner = solve(&sub, &x, &params.inner)?;
        // a failed inner run that already committed steps still ends at a feasible
        // point with a lower subproblem value, which is all a DCA step needs
        if inner.status == SolveStatus::SubproblemFailure && inner.records.is_empty() {
            // the subproblem solver cannot improve on x_k: treat it as a DCA fixed point
            let (v, lambda) = fitted_multipliers(prob, &x, active_tolerance(prob, &x))?;
            let msg = format!("DCA step {k}: subproblem solver made no progress; stopping at x_k");
            return Ok(finish(records, SolveStatus::StepTol, x, v, lambda, Some(msg)));
        }
        let y = inner.x_final.clone();
        let gy = prob.g(&y);
        let viol = pos_inf_norm(&gy);
        if viol > 0.0 || viol.is_nan() {
            // g(y) ≤ g_sub(y) ≤ 0 in exact arithmetic, so a tiny violation is roundoff
            // and y cannot be told apart from x_k
            if viol <= 1e-12 * (1.0 + constraint_scale(prob, &y)) {
                let (v, lambda) = fitted_multipliers(prob, &x, active_tolerance(prob, &x))?;
                let msg = format!("DCA step {k}: next point infeasible by roundoff ({viol:e}); stopping at x_k");
                return Ok(finish(records, SolveStatus::StepTol, x, v, lambda, Some(msg)));
            }
            let msg = format!("DCA step {k} left the feasible set by {viol:e}");
            return Ok(finish(records, SolveStatus::SubproblemFailure, x, v, lambda, Some(msg)));
        }
        let step_norm = (&y - &x).norm();
        x = y;
        v = inner.v_final.clone();
        lambda = inner.lambda_final.clone();
        let last = inner.records.last();
        let record = IterateRecord {
            k,
            f: prob.objective_value(&x),
            step_norm,
            inner_steps: inner.records.len(),
            mu_k: last.map_or(0.0, |r| r.mu_k),
            l_k_max: last.map_or(0.0, |r| r.l_k_max),
            compl: (-lambda.dot(&gy)).max(0.0),
            feas: viol.max(0.0),
            phi_potential: None,
            pg_iters: inner.records.iter().map(|r| r.pg_iters).sum(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        observe(&record, &x);
        records.push(record);
        if step_norm <= params.eps_step {
            let (v, lambda) = fitted_multipliers(prob, &x, active_tolerance(prob, &x))?;
            return Ok(finish(records, SolveStatus::StepTol, x, v, lambda, None));
        }
    }
    Ok(finish(records, SolveStatus::IterLimit, x, v, lambda, None))
}
