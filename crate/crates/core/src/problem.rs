//! QDCC problem instances: objective, DC regularizers and quadratic DC constraints.
//!
//! An instance describes
//!
//! ```text
//! minimize   F(x) = f0(x) - c_h0 ‖x‖₂ + c_phi ‖x‖₁
//! subject to g_i(x) = ‖B_i x + h_i‖² - p_i ‖x‖² + 2⟨a_i, x⟩ - d_i² ≤ 0,   i = 1..m
//! ```
//!
//! where `f0` is either a quadratic `‖Y0 x‖² + 2 ω0 ⟨b0, x⟩` or the Student-t loss
//! `Σ log(1 + 4 (Ax - b)_j²)`, optionally tilted by a linear term. The linear
//! constraint term `a_i` is zero for generated instances; it only appears in the
//! convexified instances built by the DCA baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ImbaError, Result};
use crate::linalg::{l1_norm, pos_inf_norm};

/// Coefficients of the DC regularizer `-c_h0 ‖x‖₂ + c_phi ‖x‖₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub c_h0: f64,
    pub c_phi: f64,
}

impl Regularizer {
    pub fn new(c_h0: f64, c_phi: f64) -> Result<Self> {
        if !(c_h0 >= 0.0 && c_phi >= 0.0) {
            return Err(ImbaError::invalid("regularizer coefficients must be nonnegative"));
        }
        Ok(Self { c_h0, c_phi })
    }
}

impl Default for Regularizer {
    fn default() -> Self {
        Self {
            c_h0: 0.01,
            c_phi: 0.01,
        }
    }
}

/// Smooth part `f0` of the objective.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSmooth {
    /// `‖Y0 x‖² + 2 ω0 ⟨b0_unit, x⟩`.
    Quadratic {
        y0: DMatrix<f64>,
        b0_unit: DVector<f64>,
        omega0: f64,
    },
    /// `Σ_j log(1 + 4 (Ax - b)_j²)`.
    StudentT { a: DMatrix<f64>, b: DVector<f64> },
}

impl ObjectiveSmooth {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ObjectiveSmooth::Quadratic { .. } => "quadratic",
            ObjectiveSmooth::StudentT { .. } => "student_t",
        }
    }
}

/// One quadratic DC constraint kept in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub b: DMatrix<f64>,
    pub h: DVector<f64>,
    pub d_sq: f64,
    pub p_coef: f64,
    /// Optional linear term `2⟨lin, x⟩`; `None` for generated instances.
    pub lin: Option<DVector<f64>>,
}

impl QuadConstraint {
    pub fn new(b: DMatrix<f64>, h: DVector<f64>, d_sq: f64, p_coef: f64) -> Result<Self> {
        let c = Self {
            b,
            h,
            d_sq,
            p_coef,
            lin: None,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let n = self.b.ncols();
        if self.b.nrows() != n {
            return Err(ImbaError::invalid("constraint matrix B must be square"));
        }
        if self.h.len() != n {
            return Err(ImbaError::invalid("constraint vector h has wrong length"));
        }
        if let Some(lin) = &self.lin {
            if lin.len() != n {
                return Err(ImbaError::invalid("constraint linear term has wrong length"));
            }
        }
        if !(self.p_coef >= 0.0) || !self.d_sq.is_finite() {
            return Err(ImbaError::invalid("constraint needs p_coef >= 0 and finite d_sq"));
        }
        if self.b.iter().chain(self.h.iter()).any(|v| !v.is_finite()) {
            return Err(ImbaError::invalid("constraint data must be finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    /// `Q = BᵀB`.
    pub fn q(&self) -> DMatrix<f64> {
        self.b.tr_mul(&self.b)
    }

    /// `b_lin = Bᵀh` (plus the optional linear term).
    pub fn b_lin(&self) -> DVector<f64> {
        let mut v = self.b.tr_mul(&self.h);
        if let Some(lin) = &self.lin {
            v += lin;
        }
        v
    }

    /// `c = ‖h‖² - d²`.
    pub fn c_const(&self) -> f64 {
        self.h.norm_squared() - self.d_sq
    }

    /// Residual `B x + h`.
    fn affine(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b * x + &self.h
    }

    /// Convex smooth part `f_i(x) = ‖Bx + h‖² + 2⟨lin, x⟩ - d²`.
    pub fn f_smooth(&self, x: &DVector<f64>) -> f64 {
        let mut v = self.affine(x).norm_squared() - self.d_sq;
        if let Some(lin) = &self.lin {
            v += 2.0 * lin.dot(x);
        }
        v
    }

    /// `∇f_i(x) = 2Bᵀ(Bx + h) + 2 lin`.
    pub fn grad_f_smooth(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.b.tr_mul(&self.affine(x)) * 2.0;
        if let Some(lin) = &self.lin {
            g.axpy(2.0, lin, 1.0);
        }
        g
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.f_smooth(x) - self.p_coef * x.norm_squared()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.grad_f_smooth(x);
        g.axpy(-2.0 * self.p_coef, x, 1.0);
        g
    }

    /// Same value through the expanded form `xᵀQx - p‖x‖² + 2⟨b_lin, x⟩ + c`.
    pub fn value_expanded(&self, x: &DVector<f64>) -> f64 {
        let q = self.q();
        x.dot(&(&q * x)) - self.p_coef * x.norm_squared() + 2.0 * self.b_lin().dot(x) + self.c_const()
    }
}

/// Provenance of a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InstanceMeta {
    pub seed: u64,
    pub cond_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A full QDCC problem instance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct QdccProblem {
    pub n: usize,
    pub m: usize,
    pub objective: ObjectiveSmooth,
    pub reg: Regularizer,
    pub constraints: Vec<QuadConstraint>,
    pub meta: InstanceMeta,
    /// Linear tilt added to `f0`; `None` for generated instances.
    pub tilt: Option<DVector<f64>>,
}

/// Stationarity, complementarity and feasibility violations at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub complementarity: f64,
    pub feasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.feasibility)
    }
}

impl QdccProblem {
    pub fn new(
        objective: ObjectiveSmooth,
        reg: Regularizer,
        constraints: Vec<QuadConstraint>,
        meta: InstanceMeta,
    ) -> Result<Self> {
        let n = match &objective {
            ObjectiveSmooth::Quadratic { y0, b0_unit, .. } => {
                if y0.ncols() != b0_unit.len() {
                    return Err(ImbaError::invalid("Y0 and b0 dimensions disagree"));
                }
                if (b0_unit.norm() - 1.0).abs() > 1e-12 {
                    return Err(ImbaError::invalid("b0_unit must have unit norm"));
                }
                b0_unit.len()
            }
            ObjectiveSmooth::StudentT { a, b } => {
                if a.nrows() == 0 || a.nrows() != b.len() {
                    return Err(ImbaError::invalid("Student-t data needs N >= 1 rows matching b"));
                }
                a.ncols()
            }
        };
        if constraints.is_empty() {
            return Err(ImbaError::invalid("at least one constraint is required"));
        }
        for c in &constraints {
            c.validate()?;
            if c.dim() != n {
                return Err(ImbaError::invalid("constraint dimension differs from objective"));
            }
        }
        let m = constraints.len();
        Ok(Self {
            n,
            m,
            objective,
            reg,
            constraints,
            meta,
            tilt: None,
        })
    }

    /// Returns a copy with an added linear tilt `⟨t, x⟩` on the smooth objective.
    pub fn with_tilt(mut self, tilt: DVector<f64>) -> Result<Self> {
        if tilt.len() != self.n {
            return Err(ImbaError::invalid("tilt has wrong length"));
        }
        self.tilt = Some(tilt);
        Ok(self)
    }

    pub fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(ImbaError::invalid(format!(
                "point has length {}, expected {}",
                x.len(),
                self.n
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ImbaError::invalid("point has non-finite entries"));
        }
        Ok(())
    }

    /// Number of rows `p` of the objective curvature operator.
    pub fn curvature_rows(&self) -> usize {
        match &self.objective {
            ObjectiveSmooth::Quadratic { y0, .. } => y0.nrows(),
            ObjectiveSmooth::StudentT { a, .. } => a.nrows(),
        }
    }

    pub fn f0(&self, x: &DVector<f64>) -> f64 {
        let base = match &self.objective {
            ObjectiveSmooth::Quadratic { y0, b0_unit, omega0 } => {
                (y0 * x).norm_squared() + 2.0 * omega0 * b0_unit.dot(x)
            }
            ObjectiveSmooth::StudentT { a, b } => {
                let u = a * x - b;
                u.iter().map(|ui| (4.0 * ui * ui).ln_1p()).sum()
            }
        };
        match &self.tilt {
            Some(t) => base + t.dot(x),
            None => base,
        }
    }

    pub fn grad_f0(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = match &self.objective {
            ObjectiveSmooth::Quadratic { y0, b0_unit, omega0 } => {
                let mut g = y0.tr_mul(&(y0 * x)) * 2.0;
                g.axpy(2.0 * omega0, b0_unit, 1.0);
                g
            }
            ObjectiveSmooth::StudentT { a, b } => {
                let u = a * x - b;
                let dtheta = u.map(|ui| 8.0 * ui / (1.0 + 4.0 * ui * ui));
                a.tr_mul(&dtheta)
            }
        };
        if let Some(t) = &self.tilt {
            g += t;
        }
        g
    }

    /// Diagonal of `∇²θ(Ax - b)` for the Student-t objective; `None` otherwise.
    pub fn student_t_curvature(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        match &self.objective {
            ObjectiveSmooth::StudentT { a, b } => {
                let u = a * x - b;
                Some(u.map(|ui| {
                    let s = 1.0 + 4.0 * ui * ui;
                    (8.0 - 32.0 * ui * ui) / (s * s)
                }))
            }
            ObjectiveSmooth::Quadratic { .. } => None,
        }
    }

    pub fn h0(&self, x: &DVector<f64>) -> f64 {
        self.reg.c_h0 * x.norm()
    }

    pub fn g0(&self, x: &DVector<f64>) -> f64 {
        self.f0(x) - self.h0(x)
    }

    /// Selection `ξ ∈ ∂g0(x)`: `∇f0(x) - c_h0 x/‖x‖`, and `∇f0(0) - c_h0 e₁` at the origin.
    pub fn subgrad_g0(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.grad_f0(x);
        let nx = x.norm();
        if nx > 0.0 {
            g.axpy(-self.reg.c_h0 / nx, x, 1.0);
        } else if self.n > 0 {
            g[0] -= self.reg.c_h0;
        }
        g
    }

    pub fn phi(&self, x: &DVector<f64>) -> f64 {
        self.reg.c_phi * l1_norm(x)
    }

    /// `F(x) = g0(x) + φ(x)` without the constraint indicator.
    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.g0(x) + self.phi(x)
    }

    pub fn g(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m, self.constraints.iter().map(|c| c.value(x)))
    }

    /// `V = [∇g_1(x) … ∇g_m(x)]`, an `n × m` matrix.
    pub fn jac_g(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.n, self.m);
        for (i, c) in self.constraints.iter().enumerate() {
            v.set_column(i, &c.gradient(x));
        }
        v
    }

    pub fn feasibility_violation(&self, x: &DVector<f64>) -> f64 {
        pos_inf_norm(&self.g(x))
    }

    /// The element of `∂φ(x)` closest to `target`.
    pub fn phi_subgradient_near(&self, x: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
        let c = self.reg.c_phi;
        DVector::from_iterator(
            self.n,
            x.iter().zip(target.iter()).map(|(&xi, &ti)| {
                if xi > 0.0 {
                    c
                } else if xi < 0.0 {
                    -c
                } else {
                    ti.clamp(-c, c)
                }
            }),
        )
    }
}

/// `f0(x)`; rejects non-finite or wrongly sized input.
pub fn eval_f0(prob: &QdccProblem, x: &DVector<f64>) -> Result<f64> {
    prob.check_point(x)?;
    Ok(prob.f0(x))
}

pub fn grad_f0(prob: &QdccProblem, x: &DVector<f64>) -> Result<DVector<f64>> {
    prob.check_point(x)?;
    Ok(prob.grad_f0(x))
}

pub fn subgrad_g0(prob: &QdccProblem, x: &DVector<f64>) -> Result<DVector<f64>> {
    prob.check_point(x)?;
    Ok(prob.subgrad_g0(x))
}

pub fn eval_g(prob: &QdccProblem, x: &DVector<f64>) -> Result<DVector<f64>> {
    prob.check_point(x)?;
    Ok(prob.g(x))
}

pub fn jac_g(prob: &QdccProblem, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    prob.check_point(x)?;
    Ok(prob.jac_g(x))
}

#[allow(non_snake_case)]
pub fn eval_F(prob: &QdccProblem, x: &DVector<f64>) -> Result<f64> {
    prob.check_point(x)?;
    Ok(prob.objective_value(x))
}

pub fn eval_phi(prob: &QdccProblem, x: &DVector<f64>) -> Result<f64> {
    prob.check_point(x)?;
    Ok(prob.phi(x))
}

pub fn feasibility_violation(prob: &QdccProblem, x: &DVector<f64>) -> Result<f64> {
    prob.check_point(x)?;
    Ok(prob.feasibility_violation(x))
}

/// Largest magnitude of the convex and concave parts of the constraints at `x`.
pub fn constraint_scale(prob: &QdccProblem, x: &DVector<f64>) -> f64 {
    prob.constraints
        .iter()
        .map(|c| c.f_smooth(x).abs().max(c.p_coef * x.norm_squared()))
        .fold(0.0, f64::max)
}

/// Constraints with `g_i(x) ≥ -active_tolerance(x)` count as active.
pub fn active_tolerance(prob: &QdccProblem, x: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + constraint_scale(prob, x))
}

/// Multipliers fitted to `x` alone: minimizes `‖ξ + v + Vλ‖` over `v ∈ ∂φ(x)` and
/// `λ ≥ 0` supported on the constraints with `g_i(x) ≥ -active_tol`, by an
/// accelerated projected gradient method. Returns `(v, λ)`.
pub fn fitted_multipliers(
    prob: &QdccProblem,
    x: &DVector<f64>,
    active_tol: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    prob.check_point(x)?;
    let c = prob.reg.c_phi;
    let gx = prob.g(x);
    let jac = prob.jac_g(x);
    let active: Vec<bool> = gx.iter().map(|&gi| gi >= -active_tol).collect();
    // fixed part of v on the nonzero coordinates, box [-c, c] on the zero ones
    let fixed_v = x.map(|xi| if xi > 0.0 { c } else if xi < 0.0 { -c } else { 0.0 });
    let base = prob.subgrad_g0(x) + &fixed_v;
    let residual = |lam: &DVector<f64>, w: &DVector<f64>| &base + &jac * lam + w;
    let project = |lam: &mut DVector<f64>, w: &mut DVector<f64>| {
        for (i, l) in lam.iter_mut().enumerate() {
            *l = if active[i] { l.max(0.0) } else { 0.0 };
        }
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = if x[j] == 0.0 { wj.clamp(-c, c) } else { 0.0 };
        }
    };
    let lip = jac.norm_squared() + 1.0;
    let mut lam = DVector::zeros(prob.m);
    let mut w = DVector::zeros(prob.n);
    let (mut lam_y, mut w_y) = (lam.clone(), w.clone());
    let mut t = 1.0_f64;
    let mut best = (residual(&lam, &w).norm(), lam.clone(), w.clone());
    for _ in 0..20_000 {
        let r = residual(&lam_y, &w_y);
        let mut lam_next = &lam_y - jac.tr_mul(&r) / lip;
        let mut w_next = &w_y - &r / lip;
        project(&mut lam_next, &mut w_next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        lam_y = &lam_next + (&lam_next - &lam) * beta;
        w_y = &w_next + (&w_next - &w) * beta;
        lam = lam_next;
        w = w_next;
        t = t_next;
        let norm = residual(&lam, &w).norm();
        if norm < best.0 {
            best = (norm, lam.clone(), w.clone());
        }
        if norm <= 1e-14 * (1.0 + base.norm()) {
            break;
        }
    }
    let (_, lam, w) = best;
    Ok((fixed_v + w, lam))
}

/// KKT residual at `x` with the element of `∂φ(x)` that minimizes the stationarity residual.
pub fn best_kkt_residual(prob: &QdccProblem, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<KktResidual> {
    prob.check_point(x)?;
    if lambda.len() != prob.m {
        return Err(ImbaError::invalid("lambda has wrong length"));
    }
    let rest = prob.subgrad_g0(x) + prob.jac_g(x) * lambda;
    let v = prob.phi_subgradient_near(x, &(-&rest));
    kkt_residual(prob, x, &v, lambda)
}

/// KKT residual of the original problem at `x` for a caller-supplied `v ∈ ∂φ(x)`
/// and multipliers `lambda ≥ 0`.
pub fn kkt_residual(
    prob: &QdccProblem,
    x: &DVector<f64>,
    v: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<KktResidual> {
    prob.check_point(x)?;
    if v.len() != prob.n {
        return Err(ImbaError::invalid("v has wrong length"));
    }
    if lambda.len() != prob.m {
        return Err(ImbaError::invalid("lambda has wrong length"));
    }
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(ImbaError::invalid("multipliers must be nonnegative"));
    }
    let xi = prob.subgrad_g0(x);
    let jac = prob.jac_g(x);
    let gx = prob.g(x);
    let stat = xi + v + jac * lambda;
    Ok(KktResidual {
        stationarity: stat.norm(),
        complementarity: (-lambda.dot(&gx)).max(0.0),
        feasibility: pos_inf_norm(&gx),
    })
}
