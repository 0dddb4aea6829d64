//! Acceptance gate. Every criterion prints one PASS/FAIL line; the process
//! exits non-zero when any of them fails.
//!
//! The reference values used here (finite differences, the brute-force
//! subproblem optimum, KKT residuals, spectra) are computed in this file and
//! do not go through the solver code paths they check.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use imba_core::dca::{dca_solve_with_observer, DcaParams};
use imba_core::driver::{solve_with_observer, SolveEvent, SolveReport, SolveStatus, SolverParams};
use imba_core::dual::{
    dual_grad, dual_theta, pgls_solve, recover_primal, DualPoint, PglsParams, ResidualTarget,
};
use imba_core::generator::{gen_feasible_instance, GenConfig, GeneratedInstance, ObjectiveKind};
use imba_core::io::{instance_to_json, to_json_string, StartPoint};
use imba_core::model::{
    big_g, potential_t, potential_t0, residual_c, residual_s, Extended, InexactParams, Linearization,
    ModelData, PotentialPoint,
};
use imba_core::problem::{ObjectiveSmooth, QdccProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn instance(n: usize, m: usize, seed: u64, cond: f64, p_coef: f64, kind: ObjectiveKind) -> GeneratedInstance {
    let mut cfg = GenConfig::new(n, m, seed);
    cfg.cond_exponent = cond;
    cfg.p_coef = p_coef;
    cfg.objective_kind = kind;
    gen_feasible_instance(&cfg).expect("generator")
}

/// Tiny instances: two variables, one constraint, mild curvature.
fn tiny_quadratic(seed: u64) -> GeneratedInstance {
    instance(2, 1, seed, 1.0, 0.5, ObjectiveKind::Quadratic { omega0: 1.0 })
}

/// Tiny Student-t instances with a nonconvex constraint.
fn tiny_student(seed: u64) -> GeneratedInstance {
    instance(2, 1, seed, 1.0, 5.0, ObjectiveKind::StudentT { rows: 4 })
}

fn randn(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_iterator(
        len,
        (0..len).map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal)),
    )
}

fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|j| {
            let mut up = x.clone();
            let mut down = x.clone();
            up[j] += h;
            down[j] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        }),
    )
}

fn rel_err(fd: &DVector<f64>, exact: &DVector<f64>) -> f64 {
    (fd - exact).norm() / exact.norm().max(fd.norm()).max(1e-12)
}

fn flat(w: &DualPoint) -> DVector<f64> {
    DVector::from_vec(w.to_vec())
}

fn unflat(v: &DVector<f64>, like: &DualPoint) -> DualPoint {
    let (m, n) = (like.lambda.len(), like.eta.len());
    DualPoint {
        lambda: v.rows(0, m).into_owned(),
        eta: v.rows(m, n).into_owned(),
        zeta: v.rows(m + n, v.len() - m - n).into_owned(),
    }
}

fn model_at(prob: &QdccProblem, x_k: &DVector<f64>, mu: f64, l: DVector<f64>) -> ModelData {
    ModelData::new(Arc::new(Linearization::at(prob, x_k).expect("feasible")), mu, l).expect("model")
}

/// KKT residual at `x` minimized over multipliers supported on the active
/// constraints and over `v ∈ ∂(c‖·‖₁)(x)`. Written for a single constraint.
fn kkt_oracle(prob: &QdccProblem, x: &DVector<f64>) -> f64 {
    assert_eq!(prob.m, 1);
    let c = prob.reg.c_phi;
    let c_h0 = prob.reg.c_h0;
    let nx = x.norm();
    let mut xi = prob.grad_f0(x);
    if nx > 0.0 {
        xi -= x * (c_h0 / nx);
    }
    let con = &prob.constraints[0];
    let u = &con.b * x + &con.h;
    let gval = u.norm_squared() - con.d_sq - con.p_coef * x.norm_squared();
    let grad = con.b.tr_mul(&u) * 2.0 - x * (2.0 * con.p_coef);
    let feas = gval.max(0.0);
    // distance from -(ξ + λ∇g) to ∂φ(x)
    let dist = |lam: f64| -> f64 {
        let r = &xi + &grad * lam;
        let mut s = 0.0;
        for j in 0..x.len() {
            let e = if x[j] > 0.0 {
                r[j] + c
            } else if x[j] < 0.0 {
                r[j] - c
            } else {
                (r[j].abs() - c).max(0.0)
            };
            s += e * e;
        }
        s.sqrt()
    };
    let active = gval >= -1e-6;
    let mut best = (dist(0.0), 0.0);
    if active && grad.norm() > 0.0 {
        let mut hi = 2.0 * (xi.norm() + c * (x.len() as f64).sqrt()) / grad.norm() + 1.0;
        let mut lo = 0.0;
        for _ in 0..300 {
            let a = lo + (hi - lo) / 3.0;
            let b = hi - (hi - lo) / 3.0;
            if dist(a) <= dist(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let lam = 0.5 * (lo + hi);
        let d = dist(lam);
        if d < best.0 {
            best = (d, lam);
        }
    }
    let (stat, lam) = best;
    stat.max(lam * gval.abs()).max(feas)
}

/// Central differences of the dual gradient, the objective gradient and the
/// constraint Jacobian.
fn gradient_oracles() -> Verdict {
    let h = 1e-6;
    let tol = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = [0.0_f64; 3];
    let mut counts = [0usize; 3];
    let instances = [
        instance(20, 5, 3, 4.0, 1e5, ObjectiveKind::Quadratic { omega0: 10.0 }),
        instance(20, 5, 4, 2.0, 1e2, ObjectiveKind::StudentT { rows: 40 }),
    ];
    for inst in &instances {
        let prob = &inst.problem;
        for _ in 0..20 {
            let x = randn(&mut rng, prob.n, 1.0);
            let e = rel_err(&fd_gradient(&|y| prob.f0(y), &x, h), &prob.grad_f0(&x));
            worst[1] = worst[1].max(e);
            counts[1] += 1;
            let jac = prob.jac_g(&x);
            for i in 0..prob.m {
                let gi = |y: &DVector<f64>| prob.g(y)[i];
                let e = rel_err(&fd_gradient(&gi, &x, h), &jac.column(i).into_owned());
                worst[2] = worst[2].max(e);
            }
            counts[2] += 1;
        }
        let l = DVector::from_iterator(prob.m, prob.constraints.iter().map(|c| 2.0 * c.p_coef + 1.0));
        let model = model_at(prob, &inst.x0, 1.0, l);
        let p = model.lin.a_op.rows();
        for _ in 0..20 {
            let w = DualPoint {
                lambda: DVector::from_iterator(prob.m, (0..prob.m).map(|_| rng.random_range(0.1..1.0))),
                eta: DVector::from_iterator(prob.n, (0..prob.n).map(|_| rng.random_range(-0.5..0.5) * prob.reg.c_phi)),
                zeta: randn(&mut rng, p, 1.0),
            };
            let theta = |v: &DVector<f64>| dual_theta(&unflat(v, &w), &model, prob).expect("interior");
            let fd = fd_gradient(&theta, &flat(&w), h);
            let e = rel_err(&fd, &flat(&dual_grad(&w, &model, prob).expect("domain")));
            worst[0] = worst[0].max(e);
            counts[0] += 1;
        }
    }
    Verdict::new(
        worst.iter().all(|&e| e <= tol),
        format!(
            "dual_grad {:.2e} ({}), grad_f0 {:.2e} ({}), jac_g {:.2e} ({}) vs tol {tol:.0e}",
            worst[0], counts[0], worst[1], counts[1], worst[2], counts[2]
        ),
    )
}

/// `T0` and `T` against their closed forms at `s = x_k`, `ξ = ξ_k`, `V = V_k`.
fn potential_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst0 = 0.0_f64;
    let mut worst = 0.0_f64;
    let mut pairs = 0;
    let instances = [
        instance(20, 5, 5, 4.0, 1e5, ObjectiveKind::Quadratic { omega0: 10.0 }),
        instance(20, 5, 6, 2.0, 1e2, ObjectiveKind::StudentT { rows: 40 }),
    ];
    for inst in &instances {
        let prob = &inst.problem;
        for _ in 0..50 {
            let x = randn(&mut rng, prob.n, 1.0);
            let x_k = randn(&mut rng, prob.n, 1.0);
            let l = DVector::from_iterator(prob.m, (0..prob.m).map(|_| rng.random_range(0.0..10.0)));
            let d = &x - &x_k;
            let nk = x_k.norm();
            let xi = prob.grad_f0(&x_k) - &x_k * (prob.reg.c_h0 / nk);
            let v = prob.jac_g(&x_k);
            let z = PotentialPoint {
                x: x.clone(),
                s: x_k.clone(),
                v: v.clone(),
                l: l.clone(),
                xi: xi.clone(),
            };
            let g0 = prob.f0(&x_k) - prob.reg.c_h0 * nk;
            let expect0 = g0 + xi.dot(&d);
            let scale0 = prob.f0(&x_k).abs() + xi.norm() * (x.norm() + nk) + prob.grad_f0(&x_k).norm() * nk;
            let e0 = match potential_t0(&z, prob) {
                Extended::Finite(t0) => (t0 - expect0).abs() / (1.0 + scale0),
                Extended::PlusInfinity => f64::INFINITY,
            };
            worst0 = worst0.max(e0);

            let g_k = prob.g(&x_k);
            let model_g = big_g(&x, &model_at_unchecked(prob, &x_k, l.clone()));
            for (i, t) in potential_t(&z, prob).into_iter().enumerate() {
                let c = &prob.constraints[i];
                let u = &c.b * &x_k + &c.h;
                let scale = (u.norm_squared() - c.d_sq).abs()
                    + 2.0 * c.b.tr_mul(&u).norm() * nk
                    + c.p_coef * nk * nk
                    + v.column(i).norm() * x.norm()
                    + l[i] * d.norm_squared();
                let expect = g_k[i] + v.column(i).dot(&d) + 0.5 * l[i] * d.norm_squared();
                let e = match t {
                    Extended::Finite(t) => (t - expect).abs().max((t - model_g[i]).abs()) / (1.0 + scale),
                    Extended::PlusInfinity => f64::INFINITY,
                };
                worst = worst.max(e);
            }
            pairs += 1;
        }
    }
    Verdict::new(
        worst0 <= 1e-8 && worst <= 1e-8,
        format!("{pairs} pairs: T0 {worst0:.2e}, T {worst:.2e} (relative to 1 + scale) vs 1e-8"),
    )
}

/// `G` at a point that need not be feasible for the original problem, built
/// by hand so `big_g` can be compared on random pairs.
fn model_at_unchecked(prob: &QdccProblem, x_k: &DVector<f64>, l: DVector<f64>) -> ModelData {
    let g0 = prob.g0(x_k);
    let lin = Linearization {
        x_k: x_k.clone(),
        g0_xk: g0,
        f_xk: g0 + prob.phi(x_k),
        g_xk: prob.g(x_k),
        xi_k: prob.subgrad_g0(x_k),
        v_k: prob.jac_g(x_k),
        v_norm_sq: 1.0,
        a_op: imba_core::model::CurvatureOp::Zero { n: prob.n },
    };
    ModelData::new(Arc::new(lin), 1.0, l).expect("model")
}

/// Brute-force minimum of the subproblem of a tiny quadratic instance: grid of
/// step 1e-3 over the feasible disk, then repeated local zooms.
fn subproblem_oracle(prob: &QdccProblem, x_k: &DVector<f64>, mu: f64, l: f64) -> f64 {
    let ObjectiveSmooth::Quadratic { y0, .. } = &prob.objective else {
        panic!("oracle expects a quadratic objective");
    };
    let nk = x_k.norm();
    let xi = prob.grad_f0(x_k) - x_k * (prob.reg.c_h0 / nk);
    let g0 = prob.f0(x_k) - prob.reg.c_h0 * nk;
    let gk = prob.g(x_k)[0];
    let v = prob.jac_g(x_k).column(0).into_owned();
    let h = y0.tr_mul(y0) + DMatrix::identity(2, 2) * mu;
    let c = prob.reg.c_phi;
    let obj = |d0: f64, d1: f64| {
        let x0 = x_k[0] + d0;
        let x1 = x_k[1] + d1;
        g0 + xi[0] * d0
            + xi[1] * d1
            + 0.5 * (h[(0, 0)] * d0 * d0 + 2.0 * h[(0, 1)] * d0 * d1 + h[(1, 1)] * d1 * d1)
            + c * (x0.abs() + x1.abs())
    };
    let cons = |d0: f64, d1: f64| gk + v[0] * d0 + v[1] * d1 + 0.5 * l * (d0 * d0 + d1 * d1);
    // feasible set is the disk ‖d + v/L‖² ≤ ‖v‖²/L² - 2g/L
    let center = (-v[0] / l, -v[1] / l);
    let radius = (v.norm_squared() / (l * l) - 2.0 * gk / l).max(0.0).sqrt();
    let mut best = (obj(0.0, 0.0), 0.0, 0.0);
    let scan = |c0: f64, c1: f64, half: usize, step: f64, best: &mut (f64, f64, f64)| {
        let half = half as i64;
        for a in -half..=half {
            for b in -half..=half {
                let d0 = c0 + a as f64 * step;
                let d1 = c1 + b as f64 * step;
                if cons(d0, d1) <= 0.0 {
                    let f = obj(d0, d1);
                    if f < best.0 {
                        *best = (f, d0, d1);
                    }
                }
            }
        }
    };
    let step = 1e-3;
    scan(center.0, center.1, (radius / step).ceil() as usize + 1, step, &mut best);
    let mut step = step;
    for _ in 0..10 {
        let (_, b0, b1) = best;
        scan(b0, b1, 50, step / 10.0, &mut best);
        step /= 10.0;
    }
    best.0
}

fn tiny_duality() -> Verdict {
    let mut worst_gap = 0.0_f64;
    let mut worst_res = 0.0_f64;
    for seed in 0..5 {
        let inst = tiny_quadratic(seed);
        let prob = &inst.problem;
        let (mu, l) = (1.0, 2.0 * prob.constraints[0].p_coef + 1.0);
        let model = model_at(prob, &inst.x0, mu, DVector::from_element(1, l));
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
        let res = pgls_solve(&model, prob, &DualPoint::zeros_for(&model), &params, &loose).expect("pgls");
        let dual_opt = dual_theta(&res.w, &model, prob).expect("domain");
        let primal_opt = subproblem_oracle(prob, &inst.x0, mu, l);
        worst_gap = worst_gap.max((primal_opt + dual_opt).abs() / (1.0 + primal_opt.abs()));
        let (x, v) = recover_primal(&res.w, &model);
        let s = residual_s(&x, &v, &res.w.lambda, &model).expect("residual");
        let c = residual_c(&x, &res.w.lambda, &model).expect("residual");
        worst_res = worst_res.max(s).max(c);
    }
    Verdict::new(
        worst_gap <= 1e-5 && worst_res <= 1e-6,
        format!("5 instances: relative gap {worst_gap:.2e} (tol 1e-5), S/C {worst_res:.2e} (tol 1e-6)"),
    )
}

/// Everything the descent family of criteria needs from one iMBA run.
struct RunTrace {
    report: SolveReport,
    iterates: Vec<DVector<f64>>,
    pg_steps: usize,
    pg_decrease_violations: usize,
    pg_change_mismatch: f64,
    domain_violations: usize,
}

fn traced_run(prob: &QdccProblem, x0: &DVector<f64>, params: &SolverParams) -> RunTrace {
    let mut params = *params;
    params.pgls.record_trace = true;
    let delta = params.pgls.delta;
    let c_phi = prob.reg.c_phi;
    let mut iterates = vec![x0.clone()];
    let mut pg_steps = 0;
    let mut pg_decrease_violations = 0;
    let mut pg_change_mismatch = 0.0_f64;
    let mut domain_violations = 0;
    let report = solve_with_observer(prob, x0, &params, |ev| {
        if let SolveEvent::Trial { model, dual: Some(res), verdict, .. } = ev {
            for st in &res.trace {
                pg_steps += 1;
                if !(st.xi_change <= -0.5 * delta * st.tau * st.step_sq) {
                    pg_decrease_violations += 1;
                }
                let in_domain = |w: &DualPoint| {
                    w.lambda.iter().all(|&l| l >= 0.0) && w.eta.iter().all(|&e| e.abs() <= c_phi)
                };
                if !in_domain(&st.to) || !in_domain(&st.from) {
                    domain_violations += 1;
                }
                let before = theta_by_hand(&st.from, model);
                let after = theta_by_hand(&st.to, model);
                let scale = 1.0 + before.abs() + after.abs();
                pg_change_mismatch = pg_change_mismatch.max((after - before - st.xi_change).abs() / scale);
            }
            if verdict.is_some_and(|v| v.is_accepted()) {
                iterates.push(res.x_candidate.clone());
            }
        }
    })
    .expect("solve");
    RunTrace {
        report,
        iterates,
        pg_steps,
        pg_decrease_violations,
        pg_change_mismatch,
        domain_violations,
    }
}

/// `Θ(w) = ‖r‖²/(2s) - ⟨η, x_k⟩ - ⟨λ, g(x_k)⟩ + ½‖ζ‖² - g0(x_k)` with
/// `r = Vλ + η + Aᵀζ + ξ` and `s = μ + ⟨λ, L⟩`.
fn theta_by_hand(w: &DualPoint, model: &ModelData) -> f64 {
    let lin = &*model.lin;
    let mut r = &lin.v_k * &w.lambda + &w.eta + &lin.xi_k;
    if let Some(a) = lin.a_op.matrix() {
        r += a.transpose() * &w.zeta;
    }
    let s = model.mu + w.lambda.dot(&model.l);
    r.norm_squared() / (2.0 * s) - w.eta.dot(&lin.x_k) - w.lambda.dot(&lin.g_xk) + 0.5 * w.zeta.norm_squared()
        - lin.g0_xk
}

/// Worst violation of feasibility and of the sufficient-decrease inequality
/// along the committed iterates, recomputed from the iterates themselves.
fn descent_violations(prob: &QdccProblem, run: &RunTrace, alpha: f64) -> (usize, usize) {
    let mut infeasible = 0;
    let mut no_decrease = 0;
    for pair in run.iterates.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if prob.g(b).iter().any(|&gi| !(gi <= 0.0)) {
            infeasible += 1;
        }
        let fa = prob.objective_value(a);
        let fb = prob.objective_value(b);
        if !(fb <= fa - 0.5 * alpha * (b - a).norm_squared() + 1e-12 * (1.0 + fa.abs())) {
            no_decrease += 1;
        }
    }
    (infeasible, no_decrease)
}

fn square_sum_ok(report: &SolveReport, alpha: f64) -> (bool, f64) {
    let sum: f64 = report.records.iter().map(|r| r.step_norm * r.step_norm).sum();
    let bound = 2.0 * (report.f_initial - report.f_final()) / alpha * (1.0 + 1e-10);
    (sum <= bound, sum / bound.max(f64::MIN_POSITIVE))
}

struct Shared {
    desk_runs: Vec<(QdccProblem, RunTrace)>,
    desk_time: f64,
    tiny_runs: Vec<(QdccProblem, RunTrace)>,
    scale_run: Option<(QdccProblem, RunTrace, f64)>,
}

fn feasible_descent(shared: &Shared) -> Verdict {
    let alpha = SolverParams::default().alpha;
    let mut infeasible = 0;
    let mut no_decrease = 0;
    let mut steps = 0;
    let mut record_mismatch = 0;
    for (prob, run) in &shared.desk_runs {
        let (a, b) = descent_violations(prob, run, alpha);
        infeasible += a;
        no_decrease += b;
        steps += run.iterates.len() - 1;
        if run.iterates.len() != run.report.records.len() + 1 {
            record_mismatch += 1;
        }
    }
    let statuses: Vec<String> = shared
        .desk_runs
        .iter()
        .map(|(_, r)| format!("{:?}/{}", r.report.status, r.report.iterations()))
        .collect();
    Verdict::new(
        infeasible == 0 && no_decrease == 0 && record_mismatch == 0 && shared.desk_time < 300.0,
        format!(
            "10 runs, {steps} steps: infeasible {infeasible}, insufficient decrease {no_decrease}, {:.1}s; {}",
            shared.desk_time,
            statuses.join(" ")
        ),
    )
}

fn inner_finiteness(shared: &Shared) -> Verdict {
    let mut counts: Vec<usize> = shared
        .desk_runs
        .iter()
        .flat_map(|(_, r)| r.report.records.iter().map(|rec| rec.inner_steps))
        .collect();
    counts.sort_unstable();
    let max = counts.last().copied().unwrap_or(0);
    let median = if counts.is_empty() {
        0.0
    } else if counts.len() % 2 == 1 {
        counts[counts.len() / 2] as f64
    } else {
        0.5 * (counts[counts.len() / 2 - 1] + counts[counts.len() / 2]) as f64
    };
    Verdict::new(
        !counts.is_empty() && max <= 30 && median <= 5.0,
        format!("{} outer iterations: max inner steps {max}, median {median}", counts.len()),
    )
}

fn upper_potential() -> Verdict {
    let params = SolverParams {
        k_max: 300,
        pgls: PglsParams {
            l_max: 20_000,
            residual_target: Some(ResidualTarget {
                stationarity: 1e-9,
                complementarity: 1e-11,
            }),
            ..PglsParams::default()
        },
        ..SolverParams::default()
    };
    let mut iters = 0;
    let mut infinite = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut statuses = Vec::new();
    for seed in 0..3 {
        for inst in [
            instance(10, 3, seed, 1.0, 0.5, ObjectiveKind::Quadratic { omega0: 10.0 }),
            instance(10, 3, seed, 1.0, 5.0, ObjectiveKind::StudentT { rows: 20 }),
        ] {
            let rep = imba_core::driver::solve(&inst.problem, &inst.x0, &params).expect("solve");
            let mut f_prev = rep.f_initial;
            for r in &rep.records {
                iters += 1;
                match r.phi_potential {
                    Some(phi) => worst = worst.max(phi - f_prev),
                    None => infinite += 1,
                }
                f_prev = r.f;
            }
            statuses.push(format!("{:?}/{}", rep.status, rep.iterations()));
        }
    }
    Verdict::new(
        iters > 0 && infinite == 0 && worst <= 1e-6,
        format!(
            "{iters} iterations: infinite Phi {infinite}, max Phi - F(x_k) {worst:.2e} (tol 1e-6); {}",
            statuses.join(" ")
        ),
    )
}

fn termination_quality(shared: &Shared) -> Verdict {
    let mut compl_runs = 0;
    let mut worst_compl = 0.0_f64;
    let mut step_runs = 0;
    let mut worst_kkt = 0.0_f64;
    let mut other = Vec::new();
    let mut compl_check = |prob: &QdccProblem, rep: &SolveReport| {
        let logged = rep.compl_final();
        let recomputed = (-rep.lambda_final.dot(&prob.g(&rep.x_final))).max(0.0);
        compl_runs += 1;
        worst_compl = worst_compl.max(logged).max(recomputed);
    };
    for (prob, run) in &shared.desk_runs {
        if run.report.status == SolveStatus::ComplTol {
            compl_check(prob, &run.report);
        }
    }
    if let Some((prob, run, _)) = &shared.scale_run {
        if run.report.status == SolveStatus::ComplTol {
            compl_check(prob, &run.report);
        }
    }
    for (prob, run) in &shared.tiny_runs {
        match run.report.status {
            SolveStatus::StepTol => {
                step_runs += 1;
                worst_kkt = worst_kkt.max(kkt_oracle(prob, &run.report.x_final));
            }
            SolveStatus::ComplTol => compl_check(prob, &run.report),
            s => other.push(format!("{s:?}")),
        }
    }
    Verdict::new(
        compl_runs + step_runs > 0 && worst_compl <= 1e-7 && worst_kkt <= 1e-4,
        format!(
            "ComplTol runs {compl_runs}: max compl {worst_compl:.2e} (tol 1e-7); tiny StepTol runs {step_runs}: max KKT {worst_kkt:.2e} (tol 1e-4); other tiny stops {:?}",
            other
        ),
    )
}

fn generator_fidelity() -> Verdict {
    let mut worst_norm = 0.0_f64;
    let mut worst_slack = 0.0_f64;
    let mut worst_slack_rel = 0.0_f64;
    let mut abs_cases = 0;
    let mut not_pd = 0;
    let mut asym = 0.0_f64;
    let mut not_identical = 0;
    // (n, m, cond_exponent, p_coef)
    let configs = [
        (50, 10, 4.0, 1e5),
        (20, 5, 6.0, 1e5),
        (100, 100, 6.0, 1e5),
        (10, 3, 1.0, 0.5),
        (100, 20, 10.0, 1e5),
    ];
    for (k, &(n, m, cond, p)) in configs.iter().enumerate() {
        let kind = if k % 2 == 0 {
            ObjectiveKind::Quadratic { omega0: 10.0 }
        } else {
            ObjectiveKind::StudentT { rows: 2 * n }
        };
        let a = instance(n, m, 100 + k as u64, cond, p, kind);
        for c in &a.problem.constraints {
            let q = c.b.transpose() * &c.b;
            asym = asym.max((&q - q.transpose()).amax());
            let eig = q.clone().symmetric_eigen();
            if !(eig.eigenvalues.min() > 0.0) {
                not_pd += 1;
            }
            let target = 10f64.powf(cond);
            worst_norm = worst_norm.max((eig.eigenvalues.max() - target).abs() / target);
        }
        for (i, c) in a.problem.constraints.iter().enumerate() {
            let u = &c.b * &a.x0 + &c.h;
            let px = c.p_coef * a.x0.norm_squared();
            let g = u.norm_squared() - c.d_sq - px;
            let err = (g + a.slacks[i]).abs();
            let scale = u.norm_squared().max(c.d_sq.abs()).max(px);
            // one ulp of d² alone exceeds 1e-9 once the terms pass about 8e6
            if scale < 8e6 {
                abs_cases += 1;
                worst_slack = worst_slack.max(err);
            }
            worst_slack_rel = worst_slack_rel.max(err / (1.0 + scale));
        }
        let b = instance(n, m, 100 + k as u64, cond, p, kind);
        let text = |g: &GeneratedInstance| {
            let start = StartPoint {
                x0: g.x0.iter().copied().collect(),
                slacks: g.slacks.iter().copied().collect(),
            };
            (instance_to_json(&g.problem).expect("json"), to_json_string(&start).expect("json"))
        };
        if text(&a) != text(&b) {
            not_identical += 1;
        }
    }
    Verdict::new(
        not_pd == 0
            && asym == 0.0
            && worst_norm <= 1e-3
            && abs_cases > 0
            && worst_slack <= 1e-9
            && worst_slack_rel <= 1e-9
            && not_identical == 0,
        format!(
            "{} configs: not PD {not_pd}, asymmetry {asym:.1e}, spectral norm rel err {worst_norm:.2e} (tol 1e-3), |g(x0)+s| {worst_slack:.2e} over {abs_cases} constraints with terms < 8e6 (tol 1e-9), relative to term size {worst_slack_rel:.2e} at all conds, differing regenerations {not_identical}",
            configs.len()
        ),
    )
}

fn pgls_contract(shared: &Shared) -> Verdict {
    let runs = shared.desk_runs.iter().chain(shared.tiny_runs.iter());
    let (mut steps, mut decrease, mut domain, mut mismatch) = (0, 0, 0, 0.0_f64);
    for (_, r) in runs {
        steps += r.pg_steps;
        decrease += r.pg_decrease_violations;
        domain += r.domain_violations;
        mismatch = mismatch.max(r.pg_change_mismatch);
    }
    Verdict::new(
        steps > 0 && decrease == 0 && domain == 0 && mismatch <= 1e-10,
        format!(
            "{steps} accepted steps: decrease violations {decrease}, domain violations {domain}, reported vs recomputed change {mismatch:.1e}"
        ),
    )
}

fn square_summability(shared: &Shared) -> Verdict {
    let alpha = SolverParams::default().alpha;
    let mut runs = 0;
    let mut failures = 0;
    let mut worst_ratio = 0.0_f64;
    let reports = shared
        .desk_runs
        .iter()
        .map(|(_, r)| &r.report)
        .chain(shared.tiny_runs.iter().map(|(_, r)| &r.report))
        .chain(shared.scale_run.iter().map(|(_, r, _)| &r.report));
    for rep in reports {
        let (ok, ratio) = square_sum_ok(rep, alpha);
        runs += 1;
        worst_ratio = worst_ratio.max(ratio);
        if !ok {
            failures += 1;
        }
    }
    Verdict::new(
        runs > 0 && failures == 0,
        format!("{runs} runs: violations {failures}, max sum/bound {worst_ratio:.3e}"),
    )
}

fn dca_baseline() -> Verdict {
    let params = DcaParams {
        eps_step: 1e-9,
        ..DcaParams::default()
    };
    let mut iters = 0;
    let mut infeasible = 0;
    let mut increases = 0;
    let mut worst_kkt = 0.0_f64;
    let mut statuses = Vec::new();
    let mut cases: Vec<(GeneratedInstance, bool)> = (0..5).map(|s| (tiny_quadratic(s), true)).collect();
    cases.extend((0..5).map(|s| (tiny_student(s), true)));
    cases.push((instance(10, 3, 0, 1.0, 0.5, ObjectiveKind::Quadratic { omega0: 10.0 }), false));
    for (inst, tiny) in &cases {
        let prob = &inst.problem;
        let mut f_prev = prob.objective_value(&inst.x0);
        let rep = dca_solve_with_observer(prob, &inst.x0, &params, |_, x| {
            iters += 1;
            if prob.g(x).iter().any(|&gi| !(gi <= 0.0)) {
                infeasible += 1;
            }
            let f = prob.objective_value(x);
            if !(f <= f_prev) {
                increases += 1;
            }
            f_prev = f;
        })
        .expect("dca");
        if *tiny {
            worst_kkt = worst_kkt.max(kkt_oracle(prob, &rep.x_final));
        }
        statuses.push(format!("{:?}/{}", rep.status, rep.iterations()));
    }
    Verdict::new(
        iters > 0 && infeasible == 0 && increases == 0 && worst_kkt <= 1e-3,
        format!(
            "{} runs, {iters} steps: infeasible {infeasible}, increases {increases}, tiny max KKT {worst_kkt:.2e} (tol 1e-3); {}",
            cases.len(),
            statuses.join(" ")
        ),
    )
}

fn scale_smoke(shared: &Shared) -> Verdict {
    let Some((_, run, secs)) = &shared.scale_run else {
        return Verdict::new(false, "run missing");
    };
    let rep = &run.report;
    let last_step = rep.records.last().map_or(f64::INFINITY, |r| r.step_norm);
    let converged = rep.iterations() <= 10_000 && (rep.compl_final() <= 1e-7 || last_step <= 1e-5);
    Verdict::new(
        converged && rep.status.is_converged() && *secs < 600.0,
        format!(
            "{:?} after {} iterations, compl {:.2e}, last step {:.2e}, {:.1}s",
            rep.status,
            rep.iterations(),
            rep.compl_final(),
            last_step,
            secs
        ),
    )
}

fn main() -> ExitCode {
    let defaults = SolverParams::default();

    let t = Instant::now();
    let gradients = gradient_oracles();
    let grad_secs = t.elapsed().as_secs_f64();
    let gradients = Verdict::new(
        gradients.passed && grad_secs < 5.0,
        format!("{}; {grad_secs:.2}s", gradients.detail),
    );

    let t = Instant::now();
    let desk_runs: Vec<(QdccProblem, RunTrace)> = (0..10)
        .map(|seed| {
            let inst = instance(50, 10, seed, 4.0, 1e5, ObjectiveKind::Quadratic { omega0: 10.0 });
            let run = traced_run(&inst.problem, &inst.x0, &defaults);
            (inst.problem, run)
        })
        .collect();
    let desk_time = t.elapsed().as_secs_f64();

    let tiny_params = SolverParams {
        eps_step: 1e-9,
        ..defaults
    };
    let tiny_runs = (0..5)
        .map(tiny_quadratic)
        .chain((0..5).map(tiny_student))
        .map(|inst| {
            let run = traced_run(&inst.problem, &inst.x0, &tiny_params);
            (inst.problem, run)
        })
        .collect();

    let t = Instant::now();
    let big = instance(100, 100, 1, 6.0, 1e5, ObjectiveKind::Quadratic { omega0: 10.0 });
    let run = traced_run(&big.problem, &big.x0, &defaults);
    let scale_run = Some((big.problem, run, t.elapsed().as_secs_f64()));

    let shared = Shared {
        desk_runs,
        desk_time,
        tiny_runs,
        scale_run,
    };

    let results = [
        ("gradient oracles", gradients),
        ("potential identities", potential_identities()),
        ("strong duality", tiny_duality()),
        ("feasible descent", feasible_descent(&shared)),
        ("inner loop finiteness", inner_finiteness(&shared)),
        ("upper potential bound", upper_potential()),
        ("termination quality", termination_quality(&shared)),
        ("generator fidelity", generator_fidelity()),
        ("dual line search contract", pgls_contract(&shared)),
        ("square summability", square_summability(&shared)),
        ("dca baseline", dca_baseline()),
        ("scale smoke", scale_smoke(&shared)),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!("{} {:>2} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, i + 1, v.detail);
        if !v.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
