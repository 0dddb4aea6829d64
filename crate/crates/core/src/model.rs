//! Per-iteration convex model: ball-majorized constraints, the strongly convex
//! model objective, subproblem residuals, the inexactness and acceptance tests,
//! and the potential-function diagnostics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ImbaError, Result};
use crate::linalg::{pos_inf_norm, spectral_norm};
use crate::problem::{ObjectiveSmooth, QdccProblem};

/// Linear map `A: ℝⁿ → ℝᵖ` carrying second-order information of `f0`, so the
/// model Hessian is `μI + AᵀA`.
#[derive(Debug, Clone)]
pub enum CurvatureOp {
    Zero { n: usize },
    /// `A = Y0` for the quadratic objective.
    FixedY0(Arc<DMatrix<f64>>),
    /// `A = diag(w) A_data` with `w = [ω]₊^{1/2}` for the Student-t objective.
    ScaledRows {
        weights: DVector<f64>,
        scaled: Arc<DMatrix<f64>>,
    },
}

impl CurvatureOp {
    /// The operator used for `prob` at the current iterate `x`.
    pub fn for_problem(prob: &QdccProblem, x: &DVector<f64>) -> Self {
        match &prob.objective {
            ObjectiveSmooth::Quadratic { y0, .. } => CurvatureOp::FixedY0(Arc::new(y0.clone())),
            ObjectiveSmooth::StudentT { a, .. } => {
                let omega = prob
                    .student_t_curvature(x)
                    .expect("student-t objective has a curvature diagonal");
                let weights = omega.map(|w| w.max(0.0).sqrt());
                let mut scaled = a.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= weights[i];
                }
                CurvatureOp::ScaledRows {
                    weights,
                    scaled: Arc::new(scaled),
                }
            }
        }
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            CurvatureOp::Zero { .. } => None,
            CurvatureOp::FixedY0(m) => Some(m),
            CurvatureOp::ScaledRows { scaled, .. } => Some(scaled),
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix().map_or(0, |m| m.nrows())
    }

    pub fn cols(&self) -> usize {
        match self {
            CurvatureOp::Zero { n } => *n,
            _ => self.matrix().map_or(0, |m| m.ncols()),
        }
    }

    pub fn apply(&self, d: &DVector<f64>) -> DVector<f64> {
        match self.matrix() {
            Some(m) => m * d,
            None => DVector::zeros(0),
        }
    }

    pub fn apply_t(&self, z: &DVector<f64>) -> DVector<f64> {
        match self.matrix() {
            Some(m) => m.tr_mul(z),
            None => DVector::zeros(self.cols()),
        }
    }

    /// `‖AᵀA‖` by power iteration; the `M` in `μI ⪯ Q ⪯ (μ + M)I`.
    pub fn gram_norm_estimate(&self) -> f64 {
        self.matrix().map_or(0.0, |m| {
            let s = spectral_norm(m, 100);
            s * s
        })
    }
}

/// Data frozen for one outer iteration: the iterate and its first-order information.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub x_k: DVector<f64>,
    pub g0_xk: f64,
    /// `F(x_k) = g0(x_k) + φ(x_k)`.
    pub f_xk: f64,
    pub g_xk: DVector<f64>,
    pub xi_k: DVector<f64>,
    pub v_k: DMatrix<f64>,
    /// `‖V_k‖²` (spectral norm, 50 power iterations).
    pub v_norm_sq: f64,
    pub a_op: CurvatureOp,
}

impl Linearization {
    /// Builds the linearization at a feasible `x_k`.
    pub fn at(prob: &QdccProblem, x_k: &DVector<f64>) -> Result<Self> {
        Self::with_operator(prob, x_k, CurvatureOp::for_problem(prob, x_k))
    }

    pub fn with_operator(prob: &QdccProblem, x_k: &DVector<f64>, a_op: CurvatureOp) -> Result<Self> {
        prob.check_point(x_k)?;
        let g_xk = prob.g(x_k);
        if g_xk.iter().any(|&gi| gi > 0.0) {
            return Err(ImbaError::invalid(format!(
                "model requires a feasible iterate (max g = {:e})",
                pos_inf_norm(&g_xk)
            )));
        }
        if a_op.cols() != prob.n {
            return Err(ImbaError::invalid("curvature operator has wrong column count"));
        }
        let g0_xk = prob.g0(x_k);
        let v_k = prob.jac_g(x_k);
        let v_norm = spectral_norm(&v_k, 50);
        Ok(Self {
            x_k: x_k.clone(),
            g0_xk,
            f_xk: g0_xk + prob.phi(x_k),
            g_xk,
            xi_k: prob.subgrad_g0(x_k),
            v_k,
            v_norm_sq: v_norm * v_norm,
            a_op,
        })
    }

    pub fn n(&self) -> usize {
        self.x_k.len()
    }

    pub fn m(&self) -> usize {
        self.g_xk.len()
    }
}

/// Subproblem data for trial `(k, j)`: shared linearization plus trial curvatures.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub lin: Arc<Linearization>,
    pub mu: f64,
    pub l: DVector<f64>,
}

impl ModelData {
    pub fn new(lin: Arc<Linearization>, mu: f64, l: DVector<f64>) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(ImbaError::invalid("mu must be positive and finite"));
        }
        if l.len() != lin.m() || l.iter().any(|&li| !(li >= 0.0) || !li.is_finite()) {
            return Err(ImbaError::invalid("L must be a finite nonnegative m-vector"));
        }
        Ok(Self { lin, mu, l })
    }
}

/// Tolerances of the inexactness criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InexactParams {
    pub beta_c: f64,
    pub beta_s: f64,
}

impl Default for InexactParams {
    fn default() -> Self {
        Self {
            beta_c: 1e10,
            beta_s: 1e6,
        }
    }
}

fn check_lambda(lambda: &DVector<f64>, m: usize) -> Result<()> {
    if lambda.len() != m {
        return Err(ImbaError::invalid("lambda has wrong length"));
    }
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(ImbaError::invalid("multipliers must be nonnegative"));
    }
    Ok(())
}

/// `G_i(x) = g_i(x_k) + ⟨V_i, x - x_k⟩ + (L_i/2)‖x - x_k‖²`.
pub fn big_g(x: &DVector<f64>, model: &ModelData) -> DVector<f64> {
    let lin = &*model.lin;
    let d = x - &lin.x_k;
    let half_sq = 0.5 * d.norm_squared();
    let mut out = lin.v_k.tr_mul(&d);
    out += &lin.g_xk;
    out.axpy(half_sq, &model.l, 1.0);
    out
}

/// `F_{k,j}(x) = g0(x_k) + ⟨ξ, d⟩ + (μ/2)‖d‖² + ½‖A d‖² + φ(x)` with `d = x - x_k`.
pub fn model_objective(x: &DVector<f64>, model: &ModelData, prob: &QdccProblem) -> f64 {
    let lin = &*model.lin;
    let d = x - &lin.x_k;
    lin.g0_xk
        + lin.xi_k.dot(&d)
        + 0.5 * model.mu * d.norm_squared()
        + 0.5 * lin.a_op.apply(&d).norm_squared()
        + prob.phi(x)
}

/// Stationarity residual of the subproblem at `(x, v, λ)`.
pub fn residual_s(
    x: &DVector<f64>,
    v: &DVector<f64>,
    lambda: &DVector<f64>,
    model: &ModelData,
) -> Result<f64> {
    let lin = &*model.lin;
    check_lambda(lambda, lin.m())?;
    Ok(residual_s_unchecked(x, v, lambda, model))
}

pub(crate) fn residual_s_unchecked(
    x: &DVector<f64>,
    v: &DVector<f64>,
    lambda: &DVector<f64>,
    model: &ModelData,
) -> f64 {
    let lin = &*model.lin;
    let d = x - &lin.x_k;
    let mut r = &lin.xi_k + v + &lin.v_k * lambda;
    r.axpy(model.mu + model.l.dot(lambda), &d, 1.0);
    if let Some(a) = lin.a_op.matrix() {
        r += a.tr_mul(&(a * &d));
    }
    r.norm()
}

/// Joint complementarity and feasibility violation `(-⟨λ, G(x)⟩)₊ + ‖[G(x)]₊‖_∞`.
pub fn residual_c(x: &DVector<f64>, lambda: &DVector<f64>, model: &ModelData) -> Result<f64> {
    check_lambda(lambda, model.lin.m())?;
    Ok(residual_c_unchecked(x, lambda, model))
}

pub(crate) fn residual_c_unchecked(x: &DVector<f64>, lambda: &DVector<f64>, model: &ModelData) -> f64 {
    let g = big_g(x, model);
    (-lambda.dot(&g)).max(0.0) + pos_inf_norm(&g)
}

/// Outcome of the inexactness test with the individual quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InexactCheck {
    pub model_value: f64,
    pub model_value_at_xk: f64,
    pub residual_c: f64,
    pub residual_s: f64,
    pub step_norm: f64,
    pub passed: bool,
}

pub fn inexact_check(
    y: &DVector<f64>,
    v: &DVector<f64>,
    lambda: &DVector<f64>,
    model: &ModelData,
    prob: &QdccProblem,
    params: &InexactParams,
) -> InexactCheck {
    let model_value = model_objective(y, model, prob);
    let model_value_at_xk = model.lin.f_xk;
    let c = residual_c_unchecked(y, lambda, model);
    let s = residual_s_unchecked(y, v, lambda, model);
    let step_norm = (y - &model.lin.x_k).norm();
    let passed = model_value <= model_value_at_xk
        && c <= 0.5 * params.beta_c * step_norm * step_norm
        && s <= params.beta_s * step_norm;
    InexactCheck {
        model_value,
        model_value_at_xk,
        residual_c: c,
        residual_s: s,
        step_norm,
        passed,
    }
}

/// True iff `(y, v, λ)` is an acceptable inexact subproblem solution.
pub fn check_inexact(
    y: &DVector<f64>,
    v: &DVector<f64>,
    lambda: &DVector<f64>,
    model: &ModelData,
    prob: &QdccProblem,
    params: &InexactParams,
) -> bool {
    inexact_check(y, v, lambda, model, prob, params).passed
}

/// Result of the outer acceptance test on a trial point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepVerdict {
    Accepted,
    /// Some `g_i(y) > 0`: enlarge the constraint curvature `L`.
    Infeasible {
        /// Every violation is below `1e-12·(1 + ‖g(x_k)‖_∞)`.
        near_boundary: bool,
    },
    /// Feasible but not enough decrease: enlarge `μ`.
    InsufficientDecrease,
}

impl StepVerdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, StepVerdict::Accepted)
    }
}

/// Acceptance test: `g(y) ≤ 0` and `F(y) ≤ F(x_k) - (α/2)‖y - x_k‖²`.
pub fn accept_step(y: &DVector<f64>, model: &ModelData, prob: &QdccProblem, alpha: f64) -> StepVerdict {
    let lin = &*model.lin;
    let gy = prob.g(y);
    let worst = pos_inf_norm(&gy);
    if worst > 0.0 || gy.iter().any(|v| v.is_nan()) {
        let scale = 1.0 + lin.g_xk.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        return StepVerdict::Infeasible {
            near_boundary: worst <= 1e-12 * scale,
        };
    }
    let d = y - &lin.x_k;
    if prob.objective_value(y) <= lin.f_xk - 0.5 * alpha * d.norm_squared() {
        StepVerdict::Accepted
    } else {
        StepVerdict::InsufficientDecrease
    }
}

/// Extended real value used by the potential diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    Finite(f64),
    PlusInfinity,
}

impl Extended {
    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(*v),
            Extended::PlusInfinity => None,
        }
    }

    fn add(self, v: f64) -> Self {
        match self {
            Extended::Finite(a) => Extended::Finite(a + v),
            Extended::PlusInfinity => Extended::PlusInfinity,
        }
    }
}

/// Argument `z = (x, s, V, L, ξ)` of the potential function.
#[derive(Debug, Clone)]
pub struct PotentialPoint {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    pub l: DVector<f64>,
    pub xi: DVector<f64>,
}

fn conjugate_tol(reference: &DVector<f64>) -> f64 {
    1e-10 * (1.0 + reference.norm())
}

/// `T0(x, s, ξ) = ⟨ξ, x⟩ + f0(s) - ⟨∇f0(s), s⟩ + h0*(∇f0(s) - ξ)` with
/// `h0*` the indicator of the ball of radius `c_h0`.
pub fn potential_t0(z: &PotentialPoint, prob: &QdccProblem) -> Extended {
    let grad = prob.grad_f0(&z.s);
    let u = &grad - &z.xi;
    if u.norm() > prob.reg.c_h0 + conjugate_tol(&grad) {
        return Extended::PlusInfinity;
    }
    Extended::Finite(z.xi.dot(&z.x) + prob.f0(&z.s) - grad.dot(&z.s))
}

/// `T_i(x, s, V, L) = ⟨V_i, x⟩ + f_i(s) - ⟨∇f_i(s), s⟩ + h_i*(∇f_i(s) - V_i) + (L_i/2)‖x - s‖²`
/// with `h_i = p‖·‖²`, so `h_i*(u) = ‖u‖²/(4p)` (the indicator of `{0}` when `p = 0`).
pub fn potential_t(z: &PotentialPoint, prob: &QdccProblem) -> Vec<Extended> {
    let half_sq = 0.5 * (&z.x - &z.s).norm_squared();
    prob.constraints
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let grad = c.grad_f_smooth(&z.s);
            let vi = z.v.column(i);
            let u = &grad - vi;
            let conj = if c.p_coef > 0.0 {
                u.norm_squared() / (4.0 * c.p_coef)
            } else if u.norm() <= conjugate_tol(&grad) {
                0.0
            } else {
                return Extended::PlusInfinity;
            };
            Extended::Finite(
                vi.dot(&z.x) + c.f_smooth(&z.s) - grad.dot(&z.s) + conj + z.l[i] * half_sq,
            )
        })
        .collect()
}

/// `Φ(z) = φ(x) + T0 + δ(T ≤ 0)`; `T ≤ 0` is tested up to `1e-10·(1 + ‖g(s)‖_∞)`.
pub fn potential_phi(z: &PotentialPoint, prob: &QdccProblem) -> Extended {
    let t0 = potential_t0(z, prob);
    if !t0.is_finite() {
        return Extended::PlusInfinity;
    }
    let gs = prob.g(&z.s);
    let tol = 1e-10 * (1.0 + gs.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
    for t in potential_t(z, prob) {
        match t {
            Extended::Finite(v) if v <= tol => {}
            _ => return Extended::PlusInfinity,
        }
    }
    t0.add(prob.phi(&z.x))
}
