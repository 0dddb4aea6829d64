//! Seeded construction of QDCC test instances with a known feasible start.
//!
//! Constraint matrices are `Q_i = Y_i D_i Y_i` with a random Householder
//! reflection `Y_i` and a shuffled log-spaced diagonal `D_i` whose largest entry is
//! `10^cond_exponent`. The offsets `d_i²` are set so that a random `x0` satisfies
//! `g_i(x0) = -s_i` with slacks `s_i ∈ [0, 1)`.
//!
//! Randomness comes from ChaCha20 seeded with `seed`; the objective, the start
//! point and every constraint draw from their own stream, so changing `m` leaves
//! earlier constraints untouched.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{ImbaError, Result};
use crate::problem::{InstanceMeta, ObjectiveSmooth, QdccProblem, QuadConstraint, Regularizer};

pub const GENERATOR_TAG: &str = "imba-gen-v1/chacha20";

const STREAM_OBJECTIVE: u64 = 0;
const STREAM_START: u64 = 1;
const STREAM_CONSTRAINT_BASE: u64 = 2;

/// Degrees of freedom and scale of the Student-t regression noise.
pub const STUDENT_T_DOF: f64 = 4.0;
pub const STUDENT_T_NOISE_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    Quadratic { omega0: f64 },
    StudentT { rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub n: usize,
    pub m: usize,
    pub cond_exponent: f64,
    pub objective_kind: ObjectiveKind,
    pub seed: u64,
    pub p_coef: f64,
    pub reg: Regularizer,
}

impl GenConfig {
    /// Desk-scale defaults: `cond_exponent = 4`, `p_coef = 1e5`, `ω0 = 10`.
    pub fn new(n: usize, m: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            cond_exponent: 4.0,
            objective_kind: ObjectiveKind::Quadratic { omega0: 10.0 },
            seed,
            p_coef: 1e5,
            reg: Regularizer::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(ImbaError::invalid("generator needs n >= 2"));
        }
        if self.m < 1 {
            return Err(ImbaError::invalid("generator needs m >= 1"));
        }
        if !(self.cond_exponent >= 0.0) || !self.cond_exponent.is_finite() {
            return Err(ImbaError::invalid("cond_exponent must be finite and nonnegative"));
        }
        if !(self.p_coef >= 0.0) || !self.p_coef.is_finite() {
            return Err(ImbaError::invalid("p_coef must be finite and nonnegative"));
        }
        if let ObjectiveKind::StudentT { rows } = self.objective_kind {
            if rows == 0 {
                return Err(ImbaError::invalid("Student-t objective needs N >= 1"));
            }
        }
        Ok(())
    }
}

/// Generated instance with its feasible start and the slacks `s_i = -g_i(x0)`.
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub problem: QdccProblem,
    pub x0: DVector<f64>,
    pub slacks: DVector<f64>,
}

/// Factors of one generated constraint matrix.
#[derive(Debug, Clone)]
pub struct ConstraintFactors {
    /// `B = D^{1/2} Y`.
    pub b: DMatrix<f64>,
    /// `Q = Y D Y`.
    pub q: DMatrix<f64>,
    /// Diagonal of `D` in its shuffled order.
    pub diag: DVector<f64>,
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw from the open interval `(-1, 1)`.
fn open_symmetric<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random_range(-1.0..1.0);
        if v != -1.0 {
            return v;
        }
    }
}

fn normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // row-major draw order so the stream layout matches the file layout
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Random Householder reflection `I - 2yyᵀ/‖y‖²` with `y_j ~ U(-1, 1)`.
pub fn gen_householder<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let y = loop {
        let y = DVector::from_iterator(n, (0..n).map(|_| open_symmetric(rng)));
        if y.norm_squared() > 0.0 {
            break y;
        }
    };
    let scale = 2.0 / y.norm_squared();
    // fill one triangle and mirror it so the result is exactly symmetric
    DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let delta = if a == b { 1.0 } else { 0.0 };
        delta - scale * y[a] * y[b]
    })
}

/// Builds `Q = YDY` and `B = D^{1/2}Y` with `D` a shuffled copy of
/// `{10^(c (j-1)/(n-1)) : j = 1..n}`.
pub fn gen_constraint<R: Rng + ?Sized>(
    n: usize,
    cond_exponent: f64,
    rng: &mut R,
) -> Result<ConstraintFactors> {
    if n < 2 {
        return Err(ImbaError::invalid("constraint generation needs n >= 2"));
    }
    let y = gen_householder(n, rng);
    let mut diag: Vec<f64> = (0..n)
        .map(|j| 10f64.powf(cond_exponent * j as f64 / (n - 1) as f64))
        .collect();
    diag.shuffle(rng);
    let diag = DVector::from_vec(diag);
    let sqrt_d = diag.map(f64::sqrt);

    let mut b = y.clone();
    for (i, mut row) in b.row_iter_mut().enumerate() {
        row *= sqrt_d[i];
    }
    // Y D Y = Bᵀ B with Y symmetric
    let q = b.tr_mul(&b);
    Ok(ConstraintFactors { b, q, diag })
}

fn gen_objective(cfg: &GenConfig) -> (ObjectiveSmooth, Option<String>) {
    let mut rng = stream_rng(cfg.seed, STREAM_OBJECTIVE);
    let n = cfg.n;
    match cfg.objective_kind {
        ObjectiveKind::Quadratic { omega0 } => {
            let p = n / 2;
            let y0 = normal_matrix(&mut rng, p, n);
            let b0 = loop {
                let b0 = normal_vector(&mut rng, n);
                if b0.norm() > 0.0 {
                    break b0;
                }
            };
            let b0_unit = &b0 / b0.norm();
            (ObjectiveSmooth::Quadratic { y0, b0_unit, omega0 }, None)
        }
        ObjectiveKind::StudentT { rows } => {
            let a = normal_matrix(&mut rng, rows, n);
            let x_true = normal_vector(&mut rng, n);
            let t = StudentT::new(STUDENT_T_DOF).expect("positive degrees of freedom");
            let noise = DVector::from_iterator(
                rows,
                (0..rows).map(|_| STUDENT_T_NOISE_SCALE * t.sample(&mut rng)),
            );
            let b = &a * x_true + noise;
            let note = format!(
                "student-t data: A, x_true ~ N(0,1); b = A x_true + {STUDENT_T_NOISE_SCALE}·t({STUDENT_T_DOF})"
            );
            (ObjectiveSmooth::StudentT { a, b }, Some(note))
        }
    }
}

/// Generates an instance together with a start point that is feasible by construction.
pub fn gen_feasible_instance(cfg: &GenConfig) -> Result<GeneratedInstance> {
    cfg.validate()?;
    let n = cfg.n;
    let (objective, note) = gen_objective(cfg);

    let mut start_rng = stream_rng(cfg.seed, STREAM_START);
    let x0 = normal_vector(&mut start_rng, n);
    let x0_sq = x0.norm_squared();

    let mut constraints = Vec::with_capacity(cfg.m);
    let mut slacks = DVector::zeros(cfg.m);
    for i in 0..cfg.m {
        let mut rng = stream_rng(cfg.seed, STREAM_CONSTRAINT_BASE + i as u64);
        let factors = gen_constraint(n, cfg.cond_exponent, &mut rng)?;
        let h = DVector::from_iterator(n, (0..n).map(|_| open_symmetric(&mut rng)));
        let s: f64 = rng.random_range(0.0..1.0);
        let d_sq = (&factors.b * &x0 + &h).norm_squared() - cfg.p_coef * x0_sq + s;
        slacks[i] = s;
        constraints.push(QuadConstraint::new(factors.b, h, d_sq, cfg.p_coef)?);
    }

    let meta = InstanceMeta {
        seed: cfg.seed,
        cond_exponent: cfg.cond_exponent,
        generator: Some(GENERATOR_TAG.to_string()),
        note,
    };
    let problem = QdccProblem::new(objective, cfg.reg, constraints, meta)?;
    Ok(GeneratedInstance { problem, x0, slacks })
}
