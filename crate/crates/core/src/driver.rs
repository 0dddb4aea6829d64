//! Outer iMBA loop: curvature initialization, the inner curvature search,
//! stopping rules and per-iteration telemetry.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dual::{pgls_solve, DualPoint, DualSolveResult, DualStatus, PglsParams};
use crate::error::{ImbaError, Result};
use crate::generator::stream_rng;
use crate::linalg::pos_inf_norm;
use crate::model::{
    accept_step, potential_phi, Extended, InexactParams, Linearization, ModelData, PotentialPoint,
    StepVerdict,
};
use crate::problem::{best_kkt_residual, KktResidual, QdccProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub mu_min: f64,
    pub mu_max: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub beta_c: f64,
    pub beta_s: f64,
    /// Sufficient-decrease constant of the outer acceptance test.
    pub alpha: f64,
    /// Growth factor for `μ` and `L` in the inner loop.
    pub tau: f64,
    pub eps_step: f64,
    pub eps_compl: f64,
    pub k_max: usize,
    /// The complementarity rule is only checked from this iteration on.
    pub k_min_compl: usize,
    pub pgls: PglsParams,
    /// Seed for the random directions of the curvature estimate.
    pub curvature_seed: u64,
    /// Evaluate the potential `Φ` at every committed iteration.
    pub track_potential: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            mu_min: 1e-16,
            mu_max: 1e16,
            l_min: 1e-16,
            l_max: 1e16,
            beta_c: 1e10,
            beta_s: 1e6,
            alpha: 1e-6,
            tau: 2.0,
            eps_step: 1e-5,
            eps_compl: 1e-7,
            k_max: 10_000,
            k_min_compl: 500,
            pgls: PglsParams::default(),
            curvature_seed: 0,
            track_potential: true,
        }
    }
}

impl SolverParams {
    pub fn inexact(&self) -> InexactParams {
        InexactParams {
            beta_c: self.beta_c,
            beta_s: self.beta_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.mu_min) && pos(self.mu_max) && self.mu_min <= self.mu_max) {
            return Err(ImbaError::invalid("need 0 < mu_min <= mu_max"));
        }
        if !(pos(self.l_min) && pos(self.l_max) && self.l_min <= self.l_max) {
            return Err(ImbaError::invalid("need 0 < L_min <= L_max"));
        }
        if !(pos(self.beta_c) && pos(self.beta_s) && pos(self.alpha)) {
            return Err(ImbaError::invalid("beta_C, beta_S and alpha must be positive"));
        }
        if !(self.tau > 1.0 && self.tau.is_finite()) {
            return Err(ImbaError::invalid("tau must exceed 1"));
        }
        if !(self.eps_step >= 0.0 && self.eps_compl >= 0.0) {
            return Err(ImbaError::invalid("tolerances must be nonnegative"));
        }
        if self.k_max == 0 {
            return Err(ImbaError::invalid("k_max must be positive"));
        }
        self.pgls.validate()
    }
}

/// Telemetry of one committed outer iteration `x_k → x_{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    /// 1-based count of committed iterations.
    pub k: usize,
    #[serde(rename = "F")]
    pub f: f64,
    pub step_norm: f64,
    pub inner_steps: usize,
    pub mu_k: f64,
    #[serde(rename = "L_k_max")]
    pub l_k_max: f64,
    pub compl: f64,
    pub feas: f64,
    /// `Φ` at the accepted subproblem point; `None` means `+∞` or not tracked.
    pub phi_potential: Option<f64>,
    pub pg_iters: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    StepTol,
    ComplTol,
    IterLimit,
    SubproblemFailure,
}

impl SolveStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, SolveStatus::StepTol | SolveStatus::ComplTol)
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub records: Vec<IterateRecord>,
    pub status: SolveStatus,
    pub x0: DVector<f64>,
    pub f_initial: f64,
    pub x_final: DVector<f64>,
    /// Last `η`, the `∂φ` element paired with `x_final`.
    pub v_final: DVector<f64>,
    pub lambda_final: DVector<f64>,
    pub total_time: f64,
    /// Why the run failed, for `SubproblemFailure`.
    pub message: Option<String>,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn f_final(&self) -> f64 {
        self.records.last().map_or(self.f_initial, |r| r.f)
    }

    pub fn compl_final(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.compl)
    }
}

/// What the observer of [`solve_with_observer`] sees.
#[derive(Debug)]
pub enum SolveEvent<'a> {
    /// One inner trial: the model, the dual solve and the acceptance verdict
    /// (`None` when the dual solve failed).
    Trial {
        k: usize,
        j: usize,
        model: &'a ModelData,
        dual: Option<&'a DualSolveResult>,
        verdict: Option<StepVerdict>,
    },
    Committed(&'a IterateRecord),
}

fn lip_estimate<G>(x0: &DVector<f64>, grad: G, dirs: &[DVector<f64>]) -> f64
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let t = 1e-4;
    let g0 = grad(x0);
    dirs.iter()
        .map(|d| (grad(&(x0 + d * t)) - &g0).norm() / t)
        .fold(0.0, f64::max)
}

/// Initial curvatures: `μ` from a finite-difference Lipschitz estimate of `∇f0`
/// over 5 random unit directions, and `L_i` as 0.05 times the same estimate for
/// the convex part of `g_i`.
pub fn estimate_curvature_init(
    prob: &QdccProblem,
    x0: &DVector<f64>,
    params: &SolverParams,
) -> Result<(f64, DVector<f64>)> {
    prob.check_point(x0)?;
    let mut rng = stream_rng(params.curvature_seed, u64::MAX);
    let dirs: Vec<DVector<f64>> = (0..5)
        .map(|_| loop {
            let d = DVector::<f64>::from_fn(prob.n, |_, _| rng.sample(StandardNormal));
            let nd = d.norm();
            if nd > 0.0 {
                break d / nd;
            }
        })
        .collect();
    let mu = lip_estimate(x0, |x| prob.grad_f0(x), &dirs).clamp(params.mu_min, params.mu_max);
    let l = DVector::from_iterator(
        prob.m,
        prob.constraints.iter().map(|c| {
            (0.05 * lip_estimate(x0, |x| c.grad_f_smooth(x), &dirs)).clamp(params.l_min, params.l_max)
        }),
    );
    Ok((mu, l))
}

/// Runs iMBA from the feasible point `x0`.
pub fn solve(prob: &QdccProblem, x0: &DVector<f64>, params: &SolverParams) -> Result<SolveReport> {
    solve_with_observer(prob, x0, params, |_| {})
}

pub fn solve_with_observer<O>(
    prob: &QdccProblem,
    x0: &DVector<f64>,
    params: &SolverParams,
    mut observer: O,
) -> Result<SolveReport>
where
    O: FnMut(SolveEvent<'_>),
{
    params.validate()?;
    prob.check_point(x0)?;
    let viol = prob.feasibility_violation(x0);
    if viol > 0.0 || viol.is_nan() {
        return Err(ImbaError::invalid(format!(
            "starting point is infeasible (max g = {viol:e})"
        )));
    }
    let start = Instant::now();
    let inexact = params.inexact();
    let (mut mu, mut l) = estimate_curvature_init(prob, x0, params)?;

    let mut x = x0.clone();
    let f_initial = prob.objective_value(&x);
    let mut lambda: DVector<f64> = DVector::zeros(prob.m);
    let mut eta: DVector<f64> = DVector::zeros(prob.n);
    let mut records = Vec::new();

    let report = |records: Vec<IterateRecord>,
                      status: SolveStatus,
                      x: DVector<f64>,
                      eta: DVector<f64>,
                      lambda: DVector<f64>,
                      message: Option<String>| SolveReport {
        records,
        status,
        x0: x0.clone(),
        f_initial,
        x_final: x,
        v_final: eta,
        lambda_final: lambda,
        total_time: start.elapsed().as_secs_f64(),
        message,
    };

    for k in 0..params.k_max {
        let lin = Arc::new(Linearization::at(prob, &x)?);
        if k > 0 {
            mu = (mu / params.tau).clamp(params.mu_min, params.mu_max);
            l = l.map(|li| (li / params.tau).clamp(params.l_min, params.l_max));
        }
        let c_phi = prob.reg.c_phi;
        let w_start = DualPoint {
            lambda: lambda.clone(),
            eta: eta.map(|e| e.clamp(-c_phi, c_phi)),
            zeta: DVector::zeros(lin.a_op.rows()),
        };

        let mut pg_iters = 0usize;
        let mut failures = 0usize;
        let mut j = 0usize;
        let accepted = loop {
            let model = ModelData::new(lin.clone(), mu, l.clone())?;
            let outcome = pgls_solve(&model, prob, &w_start, &params.pgls, &inexact);
            let dual = match outcome {
                Ok(res) if res.status == DualStatus::InexactAccepted => Some(res),
                Ok(res) => {
                    pg_iters += res.inner_pg_iters;
                    observer(SolveEvent::Trial {
                        k,
                        j,
                        model: &model,
                        dual: Some(&res),
                        verdict: None,
                    });
                    None
                }
                Err(ImbaError::Numerical { .. }) => {
                    observer(SolveEvent::Trial {
                        k,
                        j,
                        model: &model,
                        dual: None,
                        verdict: None,
                    });
                    None
                }
                Err(e) => return Err(e),
            };
            j += 1;

            let Some(res) = dual else {
                failures += 1;
                if failures >= 2 {
                    let msg = format!("dual solver failed twice in a row at iteration {}", k + 1);
                    return Ok(report(records, SolveStatus::SubproblemFailure, x, eta, lambda, Some(msg)));
                }
                mu *= params.tau;
                if mu > params.mu_max * params.tau {
                    let msg = format!("mu exceeded its cap at iteration {}", k + 1);
                    return Ok(report(records, SolveStatus::SubproblemFailure, x, eta, lambda, Some(msg)));
                }
                continue;
            };
            failures = 0;
            pg_iters += res.inner_pg_iters;

            let verdict = accept_step(&res.x_candidate, &model, prob, params.alpha);
            observer(SolveEvent::Trial {
                k,
                j: j - 1,
                model: &model,
                dual: Some(&res),
                verdict: Some(verdict),
            });
            match verdict {
                StepVerdict::Accepted => break (model, res),
                StepVerdict::Infeasible { .. } => {
                    l *= params.tau;
                    if l.iter().any(|&li| li > params.l_max * params.tau) {
                        let msg = format!("L exceeded its cap at iteration {}", k + 1);
                        return Ok(report(records, SolveStatus::SubproblemFailure, x, eta, lambda, Some(msg)));
                    }
                }
                StepVerdict::InsufficientDecrease => {
                    mu *= params.tau;
                    if mu > params.mu_max * params.tau {
                        let msg = format!("mu exceeded its cap at iteration {}", k + 1);
                        return Ok(report(records, SolveStatus::SubproblemFailure, x, eta, lambda, Some(msg)));
                    }
                }
            }
        };

        let (model, res) = accepted;
        let y = res.x_candidate;
        let phi_potential = if params.track_potential {
            let z = PotentialPoint {
                x: y.clone(),
                s: lin.x_k.clone(),
                v: lin.v_k.clone(),
                l: model.l.clone(),
                xi: lin.xi_k.clone(),
            };
            match potential_phi(&z, prob) {
                Extended::Finite(v) => Some(v),
                Extended::PlusInfinity => None,
            }
        } else {
            None
        };
        let step_norm = (&y - &x).norm();
        x = y;
        lambda = res.lambda_candidate;
        eta = res.v_candidate;
        let gx = prob.g(&x);
        let record = IterateRecord {
            k: k + 1,
            f: prob.objective_value(&x),
            step_norm,
            inner_steps: j,
            mu_k: mu,
            l_k_max: l.iter().copied().fold(0.0, f64::max),
            compl: (-lambda.dot(&gx)).max(0.0),
            feas: pos_inf_norm(&gx),
            phi_potential,
            pg_iters,
            wall_time: start.elapsed().as_secs_f64(),
        };
        observer(SolveEvent::Committed(&record));
        let stop = if record.step_norm <= params.eps_step {
            Some(SolveStatus::StepTol)
        } else if record.compl <= params.eps_compl && record.k >= params.k_min_compl {
            Some(SolveStatus::ComplTol)
        } else if record.k >= params.k_max {
            Some(SolveStatus::IterLimit)
        } else {
            None
        };
        records.push(record);
        if let Some(status) = stop {
            return Ok(report(records, status, x, eta, lambda, None));
        }
    }
    Ok(report(records, SolveStatus::IterLimit, x, eta, lambda, None))
}

/// KKT residual of the original problem at the final iterate and multipliers,
/// using the best element of `∂φ(x_final)`.
pub fn check_stationarity(prob: &QdccProblem, report: &SolveReport) -> Result<KktResidual> {
    best_kkt_residual(prob, &report.x_final, &report.lambda_final)
}
