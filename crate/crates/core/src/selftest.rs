//! Built-in numerical checks: finite-difference gradient suites, the
//! potential-function identities, the dual proximal map and a small
//! duality-gap certificate.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dual::{dual_grad, dual_theta, pgls_solve, prox_map, recover_primal, DualPoint, PglsParams, ResidualTarget};
use crate::generator::{gen_feasible_instance, stream_rng, GenConfig};
use crate::model::{
    model_objective, potential_t, potential_t0, residual_c, residual_s, Extended, InexactParams, Linearization,
    ModelData, PotentialPoint,
};
use crate::problem::QdccProblem;

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-6;
/// Largest accepted relative gradient error.
pub const FD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error against the suite's tolerance.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<18} cases={:<4} worst={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )
    }
}

fn outcome(name: &'static str, worst: f64, tolerance: f64, cases: usize) -> SuiteOutcome {
    SuiteOutcome {
        name,
        passed: worst <= tolerance,
        worst,
        tolerance,
        cases,
    }
}

/// `count` points with i.i.d. `N(0, 1)` entries, scaled by `radius`.
pub fn random_points(n: usize, count: usize, seed: u64, radius: f64) -> Vec<DVector<f64>> {
    let mut rng = stream_rng(seed, 0xF00D);
    (0..count)
        .map(|_| DVector::from_iterator(n, (0..n).map(|_| radius * rng.sample::<f64, _>(rand_distr::StandardNormal))))
        .collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut probe = x.clone();
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|j| {
            let xj = x[j];
            probe[j] = xj + h;
            let up = f(&probe);
            probe[j] = xj - h;
            let down = f(&probe);
            probe[j] = xj;
            (up - down) / (2.0 * h)
        }),
    )
}

/// `‖fd - g‖ / max(‖g‖, ‖fd‖, 1e-12)`.
pub fn relative_error(fd: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let denom = g.norm().max(fd.norm()).max(1e-12);
    (fd - g).norm() / denom
}

/// Largest relative error of `grad` against central differences of `f` over `points`.
pub fn max_gradient_error<F, G>(f: F, grad: G, points: &[DVector<f64>], h: f64) -> f64
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    points
        .iter()
        .map(|x| relative_error(&central_difference(&f, x, h), &grad(x)))
        .fold(0.0, f64::max)
}

pub fn suite_grad_f0(prob: &QdccProblem, points: &[DVector<f64>]) -> SuiteOutcome {
    let worst = max_gradient_error(|x| prob.f0(x), |x| prob.grad_f0(x), points, FD_STEP);
    outcome("grad_f0", worst, FD_TOL, points.len())
}

/// Checks every column of `jac` against the matching constraint value;
/// `jac` is passed in so corrupted variants can be tested.
pub fn suite_jacobian<J>(prob: &QdccProblem, points: &[DVector<f64>], jac: J) -> SuiteOutcome
where
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut worst = 0.0_f64;
    for i in 0..prob.m {
        let e = max_gradient_error(
            |x| prob.constraints[i].value(x),
            |x| jac(x).column(i).into_owned(),
            points,
            FD_STEP,
        );
        worst = worst.max(e);
    }
    outcome("jac_g", worst, FD_TOL, points.len() * prob.m)
}

/// Splits a flat vector into `(λ, η, ζ)` blocks shaped like `like`.
pub fn dual_from_slice(v: &[f64], like: &DualPoint) -> DualPoint {
    let (m, n) = (like.lambda.len(), like.eta.len());
    DualPoint {
        lambda: DVector::from_column_slice(&v[..m]),
        eta: DVector::from_column_slice(&v[m..m + n]),
        zeta: DVector::from_column_slice(&v[m + n..]),
    }
}

/// Finite differences of `Θ` against `grad` at interior dual points.
pub fn suite_dual_grad<G>(model: &ModelData, prob: &QdccProblem, points: &[DualPoint], grad: G) -> SuiteOutcome
where
    G: Fn(&DualPoint) -> DualPoint,
{
    let worst = points
        .iter()
        .map(|w| {
            let flat = DVector::from_vec(w.to_vec());
            let theta = |v: &DVector<f64>| dual_theta(&dual_from_slice(v.as_slice(), w), model, prob).unwrap_or(f64::NAN);
            let fd = central_difference(theta, &flat, FD_STEP);
            relative_error(&fd, &DVector::from_vec(grad(w).to_vec()))
        })
        .fold(0.0, f64::max);
    outcome("dual_grad", worst, FD_TOL, points.len())
}

/// Dual points with `λ ∈ [0.1, 1]`, `|η| ≤ c_phi/2` and `ζ ~ N(0, 1)`, away from the domain boundary.
pub fn interior_dual_points(model: &ModelData, c_phi: f64, count: usize, seed: u64) -> Vec<DualPoint> {
    let mut rng = stream_rng(seed, 0xD0A1);
    let (m, n, p) = (model.lin.m(), model.lin.n(), model.lin.a_op.rows());
    (0..count)
        .map(|_| DualPoint {
            lambda: DVector::from_iterator(m, (0..m).map(|_| rng.random_range(0.1..1.0))),
            eta: DVector::from_iterator(n, (0..n).map(|_| 0.5 * c_phi * rng.random_range(-1.0..1.0))),
            zeta: DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))),
        })
        .collect()
}

/// Model at a feasible `x_k` with `μ = 1` and `L_i = 2 p_i + 1`.
pub fn reference_model(prob: &QdccProblem, x_k: &DVector<f64>) -> crate::Result<ModelData> {
    let lin = Linearization::at(prob, x_k)?;
    let l = DVector::from_iterator(prob.m, prob.constraints.iter().map(|c| 2.0 * c.p_coef + 1.0));
    ModelData::new(Arc::new(lin), 1.0, l)
}

/// Worst `T0` and `T` identity errors at `s = x_k`, `ξ = ξ_k`, `V = V_k`, each
/// relative to `1 +` the magnitude of the terms involved.
pub fn identity_errors(prob: &QdccProblem, x: &DVector<f64>, x_k: &DVector<f64>, l: &DVector<f64>) -> (f64, f64) {
    let xi = prob.subgrad_g0(x_k);
    let v = prob.jac_g(x_k);
    let d = x - x_k;
    let z = PotentialPoint {
        x: x.clone(),
        s: x_k.clone(),
        v: v.clone(),
        l: l.clone(),
        xi: xi.clone(),
    };
    let expect0 = prob.g0(x_k) + xi.dot(&d);
    let scale0 = prob.f0(x_k).abs() + xi.norm() * (x.norm() + x_k.norm()) + prob.grad_f0(x_k).norm() * x_k.norm();
    let err0 = match potential_t0(&z, prob) {
        Extended::Finite(t0) => (t0 - expect0).abs() / (1.0 + scale0),
        Extended::PlusInfinity => f64::INFINITY,
    };
    let g_k = prob.g(x_k);
    let mut err = 0.0_f64;
    for (i, t) in potential_t(&z, prob).into_iter().enumerate() {
        let c = &prob.constraints[i];
        let vi = v.column(i);
        let expect = g_k[i] + vi.dot(&d) + 0.5 * l[i] * d.norm_squared();
        let scale = c.f_smooth(x_k).abs()
            + c.grad_f_smooth(x_k).norm() * x_k.norm()
            + c.p_coef * x_k.norm_squared()
            + vi.norm() * x.norm()
            + l[i] * d.norm_squared();
        let e = match t {
            Extended::Finite(t) => (t - expect).abs() / (1.0 + scale),
            Extended::PlusInfinity => f64::INFINITY,
        };
        err = err.max(e);
    }
    (err0, err)
}

pub fn suite_identities(prob: &QdccProblem, pairs: usize, seed: u64) -> Vec<SuiteOutcome> {
    let xs = random_points(prob.n, pairs, seed, 1.0);
    let xks = random_points(prob.n, pairs, seed.wrapping_add(1), 1.0);
    let mut rng = stream_rng(seed, 0x1D);
    let (mut w0, mut w) = (0.0_f64, 0.0_f64);
    for (x, xk) in xs.iter().zip(&xks) {
        let l = DVector::from_iterator(prob.m, (0..prob.m).map(|_| rng.random_range(0.0..10.0)));
        let (e0, e) = identity_errors(prob, x, xk, &l);
        w0 = w0.max(e0);
        w = w.max(e);
    }
    vec![outcome("identity_T0", w0, 1e-8, pairs), outcome("identity_T", w, 1e-8, pairs)]
}

/// Domain membership, idempotence and the projection inequality
/// `⟨p - P(p), z - P(p)⟩ ≤ 0` for random domain points `z`.
pub fn suite_prox(seed: u64) -> SuiteOutcome {
    let mut rng = stream_rng(seed, 0x9F0);
    let c_phi = 0.01;
    let mut worst = 0.0_f64;
    let mut cases = 0;
    let draw = |len: usize, scale: f64, rng: &mut rand_chacha::ChaCha20Rng| {
        DVector::from_iterator(len, (0..len).map(|_| scale * rng.random_range(-1.0..1.0)))
    };
    for _ in 0..50 {
        let p = DualPoint {
            lambda: draw(4, 2.0, &mut rng),
            eta: draw(6, 0.03, &mut rng),
            zeta: draw(3, 5.0, &mut rng),
        };
        let q = prox_map(&p, rng.random_range(0.1..10.0), c_phi);
        if !q.in_domain(c_phi) || prox_map(&q, 1.0, c_phi) != q || q.zeta != p.zeta {
            worst = f64::INFINITY;
        }
        for _ in 0..10 {
            let z = DualPoint {
                lambda: draw(4, 2.0, &mut rng).map(f64::abs),
                eta: draw(6, c_phi, &mut rng),
                zeta: draw(3, 5.0, &mut rng),
            };
            let pq = p.add_scaled(-1.0, &q);
            let zq = z.add_scaled(-1.0, &q);
            let inner = pq.lambda.dot(&zq.lambda) + pq.eta.dot(&zq.eta) + pq.zeta.dot(&zq.zeta);
            worst = worst.max(inner.max(0.0));
            cases += 1;
        }
    }
    outcome("prox", worst, 1e-14, cases)
}

/// Solves one small subproblem dual to high accuracy and measures the
/// relative duality gap and the primal residuals of the recovered point.
pub fn duality_certificate(prob: &QdccProblem, x_k: &DVector<f64>) -> crate::Result<(f64, f64, f64)> {
    let model = reference_model(prob, x_k)?;
    let params = PglsParams {
        residual_target: Some(ResidualTarget {
            stationarity: 1e-11,
            complementarity: 1e-11,
        }),
        l_max: 200_000,
        ..PglsParams::default()
    };
    let loose = InexactParams {
        beta_c: f64::MAX,
        beta_s: f64::MAX,
    };
    let res = pgls_solve(&model, prob, &DualPoint::zeros_for(&model), &params, &loose)?;
    let theta = dual_theta(&res.w, &model, prob)?;
    let (x, v) = recover_primal(&res.w, &model);
    let primal = model_objective(&x, &model, prob);
    let gap = (primal + theta).abs() / (1.0 + primal.abs());
    let s = residual_s(&x, &v, &res.w.lambda, &model)?;
    let c = residual_c(&x, &res.w.lambda, &model)?;
    Ok((gap, s, c))
}

/// Generated instance with `n = 2`, `m = 1` and mild curvature.
pub fn tiny_instance(seed: u64) -> crate::Result<crate::generator::GeneratedInstance> {
    let mut cfg = GenConfig::new(2, 1, seed);
    cfg.cond_exponent = 1.0;
    cfg.p_coef = 1.0;
    cfg.objective_kind = crate::generator::ObjectiveKind::Quadratic { omega0: 1.0 };
    gen_feasible_instance(&cfg)
}

pub fn suite_duality(seeds: &[u64]) -> SuiteOutcome {
    let mut worst = 0.0_f64;
    for &seed in seeds {
        let e = tiny_instance(seed)
            .and_then(|inst| duality_certificate(&inst.problem, &inst.x0))
            .map(|(gap, s, c)| gap.max(s).max(c))
            .unwrap_or(f64::INFINITY);
        worst = worst.max(e);
    }
    outcome("tiny_duality", worst, 1e-6, seeds.len())
}

/// Every suite on instances derived from `seed`.
pub fn run_all(seed: u64) -> crate::Result<Vec<SuiteOutcome>> {
    let inst = gen_feasible_instance(&GenConfig::new(20, 5, seed))?;
    let prob = &inst.problem;
    let points = random_points(prob.n, 20, seed, 1.0);
    let mut out = vec![
        suite_grad_f0(prob, &points),
        suite_jacobian(prob, &points, |x| prob.jac_g(x)),
    ];
    let mut student = GenConfig::new(20, 5, seed);
    student.objective_kind = crate::generator::ObjectiveKind::StudentT { rows: 40 };
    let st = gen_feasible_instance(&student)?;
    let mut s = suite_grad_f0(&st.problem, &points);
    s.name = "grad_f0_student";
    out.push(s);

    let model = reference_model(prob, &inst.x0)?;
    let duals = interior_dual_points(&model, prob.reg.c_phi, 20, seed);
    out.push(suite_dual_grad(&model, prob, &duals, |w| {
        dual_grad(w, &model, prob).expect("interior point")
    }));
    out.extend(suite_identities(prob, 100, seed));
    out.push(suite_prox(seed));
    out.push(suite_duality(&[seed, seed + 1, seed + 2]));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for s in run_all(7).unwrap() {
            println!("{s}");
            assert!(s.passed, "{s}");
        }
    }

    #[test]
    fn corrupted_jacobian_is_caught() {
        let inst = gen_feasible_instance(&GenConfig::new(20, 5, 3)).unwrap();
        let prob = &inst.problem;
        let points = random_points(prob.n, 20, 3, 1.0);
        let bad = suite_jacobian(prob, &points, |x| {
            let mut j = prob.jac_g(x);
            let g = j.column(2).norm();
            j[(4, 2)] += 1e-3 * g;
            j
        });
        assert!(!bad.passed, "{bad}");
    }

    #[test]
    fn corrupted_dual_gradient_is_caught() {
        let inst = gen_feasible_instance(&GenConfig::new(20, 5, 3)).unwrap();
        let prob = &inst.problem;
        let model = reference_model(prob, &inst.x0).unwrap();
        let duals = interior_dual_points(&model, prob.reg.c_phi, 5, 3);
        let bad = suite_dual_grad(&model, prob, &duals, |w| {
            let mut g = dual_grad(w, &model, prob).unwrap();
            g.lambda[0] *= 1.0 + 1e-3;
            g
        });
        assert!(!bad.passed, "{bad}");
    }
}
