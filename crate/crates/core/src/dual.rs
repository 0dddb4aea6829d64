//! Dual proximal-gradient solver for the strongly convex subproblem.
//!
//! With `Q = μI + AᵀA` the subproblem dual is the composite problem
//!
//! ```text
//! min_w  Θ(w) + δ_{ℝ₊ᵐ}(λ) + φ*(η),    w = (λ, η, ζ)
//! Θ(w) = ‖r‖² / (2 s(λ)) - ⟨η, x_k⟩ - ⟨λ, g(x_k)⟩ + ½‖ζ‖² - g0(x_k)
//! r    = V_k λ + η + Aᵀζ + ξ_k,    s(λ) = μ + ⟨λ, L⟩
//! ```
//!
//! For `φ = c‖·‖₁`, `φ*` is the indicator of the ℓ∞ ball of radius `c`, so the
//! proximal step is a pair of projections. Each iterate maps back to the primal
//! candidate `x = x_k - r/s`, which is tested against the inexactness criterion.

use nalgebra::{DMatrix, DVector};

use crate::error::{ImbaError, Result};
use crate::linalg::inf_norm;
use crate::model::{inexact_check, InexactCheck, InexactParams, ModelData};
use crate::problem::QdccProblem;

/// Dual variable `w = (λ, η, ζ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub lambda: DVector<f64>,
    pub eta: DVector<f64>,
    pub zeta: DVector<f64>,
}

impl DualPoint {
    pub fn zeros(m: usize, n: usize, p: usize) -> Self {
        Self {
            lambda: DVector::zeros(m),
            eta: DVector::zeros(n),
            zeta: DVector::zeros(p),
        }
    }

    /// Zero point sized for `model`.
    pub fn zeros_for(model: &ModelData) -> Self {
        Self::zeros(model.lin.m(), model.lin.n(), model.lin.a_op.rows())
    }

    pub fn norm_squared(&self) -> f64 {
        self.lambda.norm_squared() + self.eta.norm_squared() + self.zeta.norm_squared()
    }

    pub fn dist_squared(&self, other: &DualPoint) -> f64 {
        (&self.lambda - &other.lambda).norm_squared()
            + (&self.eta - &other.eta).norm_squared()
            + (&self.zeta - &other.zeta).norm_squared()
    }

    /// `self + t·dir`.
    pub fn add_scaled(&self, t: f64, dir: &DualPoint) -> DualPoint {
        DualPoint {
            lambda: &self.lambda + &dir.lambda * t,
            eta: &self.eta + &dir.eta * t,
            zeta: &self.zeta + &dir.zeta * t,
        }
    }

    pub fn in_domain(&self, c_phi: f64) -> bool {
        self.lambda.iter().all(|&l| l >= 0.0) && self.eta.iter().all(|&e| e.abs() <= c_phi)
    }

    /// Flattened `(λ, η, ζ)`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.lambda
            .iter()
            .chain(self.eta.iter())
            .chain(self.zeta.iter())
            .copied()
            .collect()
    }
}

fn check_dual(w: &DualPoint, model: &ModelData, prob: &QdccProblem) -> Result<()> {
    let lin = &*model.lin;
    if w.lambda.len() != lin.m() || w.eta.len() != lin.n() || w.zeta.len() != lin.a_op.rows() {
        return Err(ImbaError::invalid("dual point has wrong block sizes"));
    }
    if !w.in_domain(prob.reg.c_phi) {
        return Err(ImbaError::invalid(
            "dual point outside the domain (need λ ≥ 0 and ‖η‖∞ ≤ c_phi)",
        ));
    }
    Ok(())
}

/// `r = Vλ + η + Aᵀζ + ξ` and `s = μ + ⟨λ, L⟩`.
fn residual_and_scale(w: &DualPoint, model: &ModelData) -> (DVector<f64>, f64) {
    let lin = &*model.lin;
    let mut r = &lin.v_k * &w.lambda + &w.eta + &lin.xi_k;
    if let Some(a) = lin.a_op.matrix() {
        r += a.tr_mul(&w.zeta);
    }
    (r, model.mu + w.lambda.dot(&model.l))
}

fn theta_unchecked(w: &DualPoint, model: &ModelData) -> f64 {
    let lin = &*model.lin;
    let (r, s) = residual_and_scale(w, model);
    r.norm_squared() / (2.0 * s) - w.eta.dot(&lin.x_k) - w.lambda.dot(&lin.g_xk)
        + 0.5 * w.zeta.norm_squared()
        - lin.g0_xk
}

/// `Θ(to) - Θ(from)` evaluated from the increments, so the result stays
/// accurate when both values are large and nearly equal.
pub fn theta_difference(from: &DualPoint, to: &DualPoint, model: &ModelData) -> f64 {
    let lin = &*model.lin;
    let dl = &to.lambda - &from.lambda;
    let de = &to.eta - &from.eta;
    let dz = &to.zeta - &from.zeta;
    let mut dr = &lin.v_k * &dl + &de;
    if let Some(a) = lin.a_op.matrix() {
        dr += a.tr_mul(&dz);
    }
    let (r_from, s_from) = residual_and_scale(from, model);
    let ds = dl.dot(&model.l);
    let s_to = s_from + ds;
    let r_to = &r_from + &dr;
    // ‖r⁺‖²/(2s⁺) - ‖r‖²/(2s) = (s ⟨Δr, r⁺ + r⟩ - ‖r‖² Δs) / (2 s s⁺)
    let quad = (s_from * dr.dot(&(&r_to + &r_from)) - r_from.norm_squared() * ds) / (2.0 * s_from * s_to);
    quad - de.dot(&lin.x_k) - dl.dot(&lin.g_xk) + 0.5 * dz.dot(&(&to.zeta + &from.zeta))
}

/// Smooth part `Θ` of the dual objective.
pub fn dual_theta(w: &DualPoint, model: &ModelData, prob: &QdccProblem) -> Result<f64> {
    check_dual(w, model, prob)?;
    Ok(theta_unchecked(w, model))
}

/// Full dual objective `Ξ`; equals `Θ` on the domain, which every iterate stays in.
pub fn dual_xi(w: &DualPoint, model: &ModelData, prob: &QdccProblem) -> Result<f64> {
    dual_theta(w, model, prob)
}

fn grad_unchecked(w: &DualPoint, model: &ModelData) -> DualPoint {
    let lin = &*model.lin;
    let (r, s) = residual_and_scale(w, model);
    let r_over_s = r / s;
    let mut g_lambda = lin.v_k.tr_mul(&r_over_s);
    g_lambda.axpy(-0.5 * r_over_s.norm_squared(), &model.l, 1.0);
    g_lambda -= &lin.g_xk;
    let g_eta = &r_over_s - &lin.x_k;
    let g_zeta = lin.a_op.apply(&r_over_s) + &w.zeta;
    DualPoint {
        lambda: g_lambda,
        eta: g_eta,
        zeta: g_zeta,
    }
}

/// `∇Θ(w)` as a dual-shaped triple.
pub fn dual_grad(w: &DualPoint, model: &ModelData, prob: &QdccProblem) -> Result<DualPoint> {
    check_dual(w, model, prob)?;
    Ok(grad_unchecked(w, model))
}

/// Proximal map of `δ_{ℝ₊ᵐ}(λ) + φ*(η)`: clip `λ` at zero, clamp `η` to `[-c_phi, c_phi]`,
/// leave `ζ` unchanged. Independent of the step size `tau`.
pub fn prox_map(point: &DualPoint, _tau: f64, c_phi: f64) -> DualPoint {
    DualPoint {
        lambda: point.lambda.map(|l| l.max(0.0)),
        eta: point.eta.map(|e| e.clamp(-c_phi, c_phi)),
        zeta: point.zeta.clone(),
    }
}

/// Primal candidate `x = x_k - r/s` and `v = η`.
pub fn recover_primal(w: &DualPoint, model: &ModelData) -> (DVector<f64>, DVector<f64>) {
    let (r, s) = residual_and_scale(w, model);
    let x = &model.lin.x_k - r / s;
    (x, w.eta.clone())
}

/// Exact minimizer of `Θ` over `ζ` for fixed `(λ, η)`: `(sI + AAᵀ)ζ = -A u`
/// with `u = Vλ + η + ξ`, solved through one eigendecomposition of `AAᵀ`.
struct ZetaSolver {
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl ZetaSolver {
    fn new(model: &ModelData) -> Option<Self> {
        let a = model.lin.a_op.matrix()?;
        if a.nrows() == 0 {
            return None;
        }
        let eig = (a * a.transpose()).symmetric_eigen();
        Some(Self {
            basis: eig.eigenvectors,
            eigenvalues: eig.eigenvalues.map(|v| v.max(0.0)),
        })
    }

    fn minimize(&self, w: &mut DualPoint, model: &ModelData) {
        let lin = &*model.lin;
        let a = lin.a_op.matrix().expect("solver exists only with an operator");
        let u = &lin.v_k * &w.lambda + &w.eta + &lin.xi_k;
        let s = model.mu + w.lambda.dot(&model.l);
        let mut coef = self.basis.tr_mul(&(a * u));
        for (c, &sigma) in coef.iter_mut().zip(self.eigenvalues.iter()) {
            *c = -*c / (s + sigma);
        }
        w.zeta = &self.basis * coef;
    }
}

/// Optional accuracy demand on top of the inexactness criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTarget {
    pub stationarity: f64,
    pub complementarity: f64,
}

/// How the first trial `τ_{l,0}` of each line search is picked for `l ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauRule {
    /// Last accepted `τ` divided by `ϱ`.
    Shrink,
    /// Barzilai-Borwein curvature `⟨Δw, Δ∇Θ⟩/‖Δw‖²`, falling back to `Shrink`.
    BarzilaiBorwein,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PglsParams {
    /// Sufficient-decrease constant `δ ∈ (0, 1)`.
    pub delta: f64,
    /// Backtracking factor `ϱ > 1` applied to `τ`.
    pub rho_ls: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub l_max: usize,
    /// `τ_{0,0} = tau00_scale · ‖V_k‖²`.
    pub tau00_scale: f64,
    pub max_backtracks: usize,
    pub tau_rule: TauRule,
    pub residual_target: Option<ResidualTarget>,
    /// After every accepted step, replace `ζ` by its exact minimizer given `(λ, η)`.
    pub exact_zeta: bool,
    /// Keep per-step line-search data in the result.
    pub record_trace: bool,
}

impl Default for PglsParams {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            rho_ls: 10.0,
            tau_min: 1e-30,
            tau_max: 1e30,
            l_max: 2000,
            tau00_scale: 1e-8,
            max_backtracks: 200,
            tau_rule: TauRule::BarzilaiBorwein,
            residual_target: None,
            exact_zeta: true,
            record_trace: false,
        }
    }
}

impl PglsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ImbaError::invalid("delta must lie in (0, 1)"));
        }
        if !(self.rho_ls > 1.0) {
            return Err(ImbaError::invalid("rho_ls must exceed 1"));
        }
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max) {
            return Err(ImbaError::invalid("need 0 < tau_min <= tau_max"));
        }
        if self.l_max == 0 || !(self.tau00_scale > 0.0) {
            return Err(ImbaError::invalid("l_max and tau00_scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualStatus {
    InexactAccepted,
    IterLimit,
    Stalled,
}

/// One accepted proximal-gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct PglsStep {
    pub from: DualPoint,
    /// The prox-gradient point, before any exact `ζ` update.
    pub to: DualPoint,
    pub xi_before: f64,
    /// `Ξ(w⁺) - Ξ(w)` from [`theta_difference`].
    pub xi_change: f64,
    pub tau: f64,
    pub step_sq: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone)]
pub struct DualSolveResult {
    pub w: DualPoint,
    pub x_candidate: DVector<f64>,
    pub v_candidate: DVector<f64>,
    pub lambda_candidate: DVector<f64>,
    pub status: DualStatus,
    pub inner_pg_iters: usize,
    pub linesearch_evals: usize,
    /// Inexactness test at the returned candidate.
    pub check: InexactCheck,
    pub trace: Vec<PglsStep>,
}

fn meets(check: &InexactCheck, target: Option<ResidualTarget>) -> bool {
    check.passed
        && target.is_none_or(|t| {
            check.residual_s <= t.stationarity && check.residual_c <= t.complementarity
        })
}

/// True when each block of `w` moved by at most roundoff relative to its own size.
fn no_block_moved(from: &DualPoint, to: &DualPoint) -> bool {
    let still = |a: &DVector<f64>, b: &DVector<f64>| (b - a).norm() <= 1e-15 * a.norm();
    still(&from.lambda, &to.lambda) && still(&from.eta, &to.eta) && still(&from.zeta, &to.zeta)
}

/// Proximal gradient with backtracking on the dual; stops at the first iterate
/// whose primal candidate passes the inexactness test.
pub fn pgls_solve(
    model: &ModelData,
    prob: &QdccProblem,
    w0: &DualPoint,
    params: &PglsParams,
    inexact: &InexactParams,
) -> Result<DualSolveResult> {
    params.validate()?;
    check_dual(w0, model, prob)?;
    let c_phi = prob.reg.c_phi;

    let zeta_solver = if params.exact_zeta { ZetaSolver::new(model) } else { None };
    let mut w = w0.clone();
    if let Some(zs) = &zeta_solver {
        zs.minimize(&mut w, model);
    }
    if !theta_unchecked(&w, model).is_finite() {
        return Err(ImbaError::numerical("dual objective is not finite at the start point", Some(w.to_vec())));
    }
    let mut evals = 1usize;
    let mut trace = Vec::new();

    let finish = |w: DualPoint, status: DualStatus, iters: usize, evals: usize, trace: Vec<PglsStep>| {
        let (x, v) = recover_primal(&w, model);
        let check = inexact_check(&x, &v, &w.lambda, model, prob, inexact);
        DualSolveResult {
            lambda_candidate: w.lambda.clone(),
            x_candidate: x,
            v_candidate: v,
            w,
            status,
            inner_pg_iters: iters,
            linesearch_evals: evals,
            check,
            trace,
        }
    };

    let mut tau_last: Option<f64> = None;
    let mut prev: Option<(DualPoint, DualPoint)> = None;
    for l in 0..params.l_max {
        let grad = grad_unchecked(&w, model);
        let bb = match (&prev, params.tau_rule) {
            (Some((w_old, g_old)), TauRule::BarzilaiBorwein) => {
                let dw = w.add_scaled(-1.0, w_old);
                let dg = grad.add_scaled(-1.0, g_old);
                let num = dw.lambda.dot(&dg.lambda) + dw.eta.dot(&dg.eta) + dw.zeta.dot(&dg.zeta);
                let den = dw.norm_squared();
                (num > 0.0 && den > 0.0).then(|| num / den)
            }
            _ => None,
        };
        let mut tau = match (bb, tau_last) {
            (Some(t), _) => t,
            (None, None) => params.tau00_scale * model.lin.v_norm_sq,
            (None, Some(t)) => t / params.rho_ls,
        }
        .clamp(params.tau_min, params.tau_max);
        if params.tau_rule == TauRule::BarzilaiBorwein {
            prev = Some((w.clone(), grad.clone()));
        }

        let mut accepted = None;
        for nu in 0..=params.max_backtracks {
            let trial = prox_map(&w.add_scaled(-1.0 / tau, &grad), tau, c_phi);
            let change = theta_difference(&w, &trial, model);
            evals += 1;
            let step_sq = trial.dist_squared(&w);
            if change.is_finite() && change <= -0.5 * params.delta * tau * step_sq {
                accepted = Some((trial, change, step_sq, nu));
                break;
            }
            tau *= params.rho_ls;
        }
        let Some((trial, change, step_sq, nu)) = accepted else {
            return Err(ImbaError::numerical(
                format!("line search did not terminate within {} backtracks", params.max_backtracks),
                Some(w.to_vec()),
            ));
        };
        if params.record_trace {
            trace.push(PglsStep {
                from: w.clone(),
                to: trial.clone(),
                xi_before: theta_unchecked(&w, model),
                xi_change: change,
                tau,
                step_sq,
                backtracks: nu,
            });
        }
        let stalled = no_block_moved(&w, &trial);
        w = trial;
        if let Some(zs) = &zeta_solver {
            let mut w_zeta = w.clone();
            zs.minimize(&mut w_zeta, model);
            let change = theta_difference(&w, &w_zeta, model);
            evals += 1;
            // keep the block step only when roundoff did not make it worse
            if change <= 0.0 {
                w = w_zeta;
            }
        }
        tau_last = Some(tau);

        let (x, v) = recover_primal(&w, model);
        let check = inexact_check(&x, &v, &w.lambda, model, prob, inexact);
        if meets(&check, params.residual_target) {
            return Ok(finish(w, DualStatus::InexactAccepted, l + 1, evals, trace));
        }
        if stalled {
            return Ok(finish(w, DualStatus::Stalled, l + 1, evals, trace));
        }
    }
    Ok(finish(w, DualStatus::IterLimit, params.l_max, evals, trace))
}

/// Largest violation of the dual domain (zero for every PGls iterate).
pub fn domain_violation(w: &DualPoint, c_phi: f64) -> f64 {
    let lam = w.lambda.iter().fold(0.0_f64, |a, &l| a.max(-l));
    let eta = (inf_norm(&w.eta) - c_phi).max(0.0);
    lam.max(eta)
}
