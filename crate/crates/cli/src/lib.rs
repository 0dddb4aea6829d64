//! Command-line front end: instance generation, iMBA and DCA runs, the
//! side-by-side comparison, KKT checks of stored points and the self-test.

use std::error::Error;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use imba_core::dca::{dca_solve_with_observer, DcaParams};
use imba_core::driver::{check_stationarity, solve_with_observer, IterateRecord, SolveEvent, SolveReport, SolveStatus, SolverParams};
use imba_core::generator::{gen_feasible_instance, GenConfig, GeneratedInstance, ObjectiveKind};
use imba_core::io::{fmt_f64, read_instance, read_start, to_json_string, write_instance, write_start, StartPoint};
use imba_core::problem::best_kkt_residual;
use imba_core::selftest;
use imba_core::QdccProblem;

pub type CliResult<T> = Result<T, Box<dyn Error + Send + Sync>>;

/// Exit code for runs stopped by the step or complementarity rule.
pub const EXIT_CONVERGED: i32 = 0;
/// Malformed input, I/O failure or a failed check.
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ITER_LIMIT: i32 = 2;
pub const EXIT_SUBPROBLEM_FAILURE: i32 = 3;

pub const HISTORY_HEADER: &str = "k,F,step_norm,inner_steps,mu_k,L_k_max,compl,feas,phi_potential,pg_iters,wall_time";

#[derive(Debug, Parser)]
#[command(name = "imba", version, about = "Inexact moving balls approximation for DC-constrained problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded instance and its feasible start point.
    Generate(GenerateArgs),
    /// Run iMBA; writes history.csv, summary.json and solution.json.
    Solve(RunArgs),
    /// Run the DCA baseline; same outputs as `solve`.
    Dca(RunArgs),
    /// Run iMBA and DCA from the same start and tabulate both.
    Compare(RunArgs),
    /// Report KKT residuals of a stored point.
    Check(CheckArgs),
    /// Run the built-in numerical checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Quad,
    Student,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Constraint curvature is 10^cond-exp [default: 4, or 10 with --paper-profile].
    #[arg(long = "cond-exp")]
    pub cond_exp: Option<f64>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Quad)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 10.0)]
    pub omega0: f64,
    /// Rows of the Student-t data matrix [default: n].
    #[arg(long = "N")]
    pub rows: Option<usize>,
    /// Concave curvature coefficient of every constraint [default: 1e5].
    #[arg(long = "p-coef")]
    pub p_coef: Option<f64>,
    /// Use the published experiment settings (cond-exp 10, p-coef 1e5).
    #[arg(long = "paper-profile")]
    pub paper_profile: bool,
}

impl GenArgs {
    pub fn config(&self) -> GenConfig {
        let mut cfg = GenConfig::new(self.n, self.m, self.seed);
        cfg.cond_exponent = self.cond_exp.unwrap_or(if self.paper_profile { 10.0 } else { 4.0 });
        cfg.p_coef = self.p_coef.unwrap_or(1e5);
        cfg.objective_kind = match self.objective {
            ObjectiveArg::Quad => ObjectiveKind::Quadratic { omega0: self.omega0 },
            ObjectiveArg::Student => ObjectiveKind::StudentT {
                rows: self.rows.unwrap_or(self.n),
            },
        };
        cfg
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    /// Instance file, or a directory that receives instance.json.
    #[arg(long, default_value = "instance.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Instance file; without it an instance is generated from the generator flags.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Start point file [default: the instance's .start.json sidecar].
    #[arg(long)]
    pub start: Option<PathBuf>,
    #[command(flatten)]
    pub gen: GenArgs,
    /// Step tolerance.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Complementarity tolerance.
    #[arg(long = "eps-compl")]
    pub eps_compl: Option<f64>,
    /// Outer iteration limit.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

impl RunArgs {
    pub fn solver_params(&self) -> SolverParams {
        let mut p = SolverParams::default();
        if let Some(e) = self.eps {
            p.eps_step = e;
        }
        if let Some(e) = self.eps_compl {
            p.eps_compl = e;
        }
        if let Some(k) = self.kmax {
            p.k_max = k;
        }
        p
    }

    pub fn dca_params(&self) -> DcaParams {
        let mut p = DcaParams::default();
        if let Some(e) = self.eps {
            p.eps_step = e;
        }
        if let Some(k) = self.kmax {
            p.k_max = k;
        }
        p
    }
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// JSON array, or an object with an `x` or `x0` field.
    #[arg(long)]
    pub point: PathBuf,
    /// JSON array, or an object with a `lambda` field [default: zeros].
    #[arg(long)]
    pub multipliers: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// `<stem>.start.json` next to `instance`.
pub fn sidecar_path(instance: &Path) -> PathBuf {
    let name = instance.file_name().and_then(|s| s.to_str()).unwrap_or("instance.json");
    let stem = name.strip_suffix(".json").unwrap_or(name);
    instance.with_file_name(format!("{stem}.start.json"))
}

pub fn exit_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::StepTol | SolveStatus::ComplTol => EXIT_CONVERGED,
        SolveStatus::IterLimit => EXIT_ITER_LIMIT,
        SolveStatus::SubproblemFailure => EXIT_SUBPROBLEM_FAILURE,
    }
}

fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::StepTol => "StepTol",
        SolveStatus::ComplTol => "ComplTol",
        SolveStatus::IterLimit => "IterLimit",
        SolveStatus::SubproblemFailure => "SubproblemFailure",
    }
}

pub fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Dca(a) => cmd_dca(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Check(a) => cmd_check(&a),
        Command::Selftest(a) => cmd_selftest(&a),
    }
}

fn write_generated(path: &Path, inst: &GeneratedInstance) -> CliResult<PathBuf> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_instance(path, &inst.problem)?;
    let side = sidecar_path(path);
    write_start(
        &side,
        &StartPoint {
            x0: inst.x0.iter().copied().collect(),
            slacks: inst.slacks.iter().copied().collect(),
        },
    )?;
    Ok(side)
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<i32> {
    let inst = gen_feasible_instance(&args.gen.config())?;
    let path = if args.out.is_dir() || args.out.as_os_str().to_string_lossy().ends_with('/') {
        args.out.join("instance.json")
    } else {
        args.out.clone()
    };
    let side = write_generated(&path, &inst)?;
    println!("{}", path.display());
    println!("{}", side.display());
    Ok(EXIT_CONVERGED)
}

/// Problem and start point of a run; generated instances are also saved under `out`.
pub fn load_run_input(args: &RunArgs) -> CliResult<(QdccProblem, DVector<f64>)> {
    match &args.instance {
        Some(path) => {
            let prob = read_instance(path)?;
            let start_path = args.start.clone().unwrap_or_else(|| sidecar_path(path));
            if !start_path.exists() {
                return Err(format!("no start point: {} does not exist (use --start)", start_path.display()).into());
            }
            let x0 = read_point(&start_path)?;
            if x0.len() != prob.n {
                return Err(format!("start point has {} entries, instance has n = {}", x0.len(), prob.n).into());
            }
            Ok((prob, x0))
        }
        None => {
            let inst = gen_feasible_instance(&args.gen.config())?;
            std::fs::create_dir_all(&args.out)?;
            write_generated(&args.out.join("instance.json"), &inst)?;
            let x0 = match &args.start {
                Some(p) => read_point(p)?,
                None => inst.x0,
            };
            Ok((inst.problem, x0))
        }
    }
}

/// Per-iteration CSV; each row is flushed as soon as it is written.
pub struct HistoryWriter {
    out: BufWriter<File>,
    potential_tracked: bool,
}

impl HistoryWriter {
    pub fn create(path: &Path, potential_tracked: bool) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{HISTORY_HEADER}")?;
        out.flush()?;
        Ok(Self { out, potential_tracked })
    }

    pub fn append(&mut self, r: &IterateRecord) -> std::io::Result<()> {
        let phi = match r.phi_potential {
            Some(v) => fmt_f64(v),
            None if self.potential_tracked => "inf".to_string(),
            None => String::new(),
        };
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.f),
            fmt_f64(r.step_norm),
            r.inner_steps,
            fmt_f64(r.mu_k),
            fmt_f64(r.l_k_max),
            fmt_f64(r.compl),
            fmt_f64(r.feas),
            phi,
            r.pg_iters,
            fmt_f64(r.wall_time)
        )?;
        self.out.flush()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub status: &'static str,
    pub iters: usize,
    #[serde(rename = "Fval")]
    pub fval: f64,
    pub time_s: f64,
    pub compl: f64,
}

impl Summary {
    pub fn of(report: &SolveReport) -> Self {
        Self {
            status: status_name(report.status),
            iters: report.iterations(),
            fval: report.f_final(),
            time_s: report.total_time,
            compl: report.compl_final(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct Solution {
    x: Vec<f64>,
    v: Vec<f64>,
    lambda: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Imba,
    Dca,
}

impl Solver {
    fn name(self) -> &'static str {
        match self {
            Solver::Imba => "iMBA",
            Solver::Dca => "DCA",
        }
    }
}

/// Runs one solver, streaming the history to `dir/history.csv` and writing
/// `summary.json` and `solution.json` at the end.
pub fn run_solver(
    solver: Solver,
    prob: &QdccProblem,
    x0: &DVector<f64>,
    args: &RunArgs,
    dir: &Path,
) -> CliResult<SolveReport> {
    std::fs::create_dir_all(dir)?;
    let params = args.solver_params();
    let mut history = HistoryWriter::create(&dir.join("history.csv"), solver == Solver::Imba && params.track_potential)?;
    let mut write_err: Option<std::io::Error> = None;
    let mut on_record = |r: &IterateRecord| {
        if write_err.is_none() {
            write_err = history.append(r).err();
        }
    };
    let report = match solver {
        Solver::Imba => solve_with_observer(prob, x0, &params, |ev| {
            if let SolveEvent::Committed(r) = ev {
                on_record(r);
            }
        })?,
        Solver::Dca => dca_solve_with_observer(prob, x0, &args.dca_params(), |r, _| on_record(r))?,
    };
    if let Some(e) = write_err {
        return Err(e.into());
    }
    std::fs::write(dir.join("summary.json"), to_json_string(&Summary::of(&report))?)?;
    let solution = Solution {
        x: report.x_final.iter().copied().collect(),
        v: report.v_final.iter().copied().collect(),
        lambda: report.lambda_final.iter().copied().collect(),
    };
    std::fs::write(dir.join("solution.json"), to_json_string(&solution)?)?;
    if let Some(msg) = &report.message {
        eprintln!("{}: {msg}", solver.name());
    }
    Ok(report)
}

fn cmd_single(solver: Solver, args: &RunArgs) -> CliResult<i32> {
    let (prob, x0) = load_run_input(args)?;
    let report = run_solver(solver, &prob, &x0, args, &args.out)?;
    println!("{}", to_json_string(&Summary::of(&report))?);
    Ok(exit_code(report.status))
}

pub fn cmd_solve(args: &RunArgs) -> CliResult<i32> {
    cmd_single(Solver::Imba, args)
}

pub fn cmd_dca(args: &RunArgs) -> CliResult<i32> {
    cmd_single(Solver::Dca, args)
}

/// One row of the comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub solver: &'static str,
    pub status: &'static str,
    pub iter: usize,
    #[serde(rename = "Fval")]
    pub fval: f64,
    pub time_s: f64,
    pub compl: f64,
    /// `max_i [g_i(x_final)]₊`.
    pub feas: f64,
    /// Stationarity part of the KKT residual at the final point.
    pub kkt: f64,
}

fn compare_row(solver: Solver, prob: &QdccProblem, report: &SolveReport) -> CliResult<CompareRow> {
    Ok(CompareRow {
        solver: solver.name(),
        status: status_name(report.status),
        iter: report.iterations(),
        fval: report.f_final(),
        time_s: report.total_time,
        compl: report.compl_final(),
        feas: prob.feasibility_violation(&report.x_final),
        kkt: check_stationarity(prob, report)?.stationarity,
    })
}

pub fn cmd_compare(args: &RunArgs) -> CliResult<i32> {
    let (prob, x0) = load_run_input(args)?;
    let (imba, dca) = std::thread::scope(|s| {
        let a = s.spawn(|| run_solver(Solver::Imba, &prob, &x0, args, &args.out.join("imba")));
        let b = s.spawn(|| run_solver(Solver::Dca, &prob, &x0, args, &args.out.join("dca")));
        (a.join().expect("iMBA leg panicked"), b.join().expect("DCA leg panicked"))
    });
    let (imba, dca) = (imba?, dca?);
    let rows = vec![compare_row(Solver::Imba, &prob, &imba)?, compare_row(Solver::Dca, &prob, &dca)?];
    let mut csv = String::from("solver,status,iter,Fval,time_s,compl,feas,kkt\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.solver,
            r.status,
            r.iter,
            fmt_f64(r.fval),
            fmt_f64(r.time_s),
            fmt_f64(r.compl),
            fmt_f64(r.feas),
            fmt_f64(r.kkt)
        ));
    }
    std::fs::write(args.out.join("compare.csv"), &csv)?;
    let json = to_json_string(&rows)?;
    std::fs::write(args.out.join("compare.json"), &json)?;
    print!("{csv}");
    Ok(exit_code(imba.status).max(exit_code(dca.status)))
}

fn vector_field(text: &str, keys: &[&str], what: &str) -> CliResult<DVector<f64>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let arr = match &value {
        serde_json::Value::Array(_) => &value,
        serde_json::Value::Object(map) => keys
            .iter()
            .find_map(|k| map.get(*k))
            .ok_or_else(|| format!("{what}: expected an array or an object with one of {keys:?}"))?,
        _ => return Err(format!("{what}: expected a JSON array or object").into()),
    };
    let v: Vec<f64> = serde_json::from_value(arr.clone()).map_err(|e| format!("{what}: {e}"))?;
    Ok(DVector::from_vec(v))
}

/// Reads a point from a bare JSON array, a solution file or a start sidecar.
pub fn read_point(path: &Path) -> CliResult<DVector<f64>> {
    if let Ok(start) = read_start(path) {
        return Ok(DVector::from_vec(start.x0));
    }
    vector_field(&std::fs::read_to_string(path)?, &["x", "x0"], "point")
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub stationarity: f64,
    pub complementarity: f64,
    pub feasibility: f64,
    pub feasibility_violation: f64,
}

pub fn check_point(prob: &QdccProblem, x: &DVector<f64>, lambda: &DVector<f64>) -> CliResult<CheckReport> {
    if x.len() != prob.n {
        return Err(format!("point has {} entries, instance has n = {}", x.len(), prob.n).into());
    }
    if lambda.len() != prob.m {
        return Err(format!("multipliers have {} entries, instance has m = {}", lambda.len(), prob.m).into());
    }
    let kkt = best_kkt_residual(prob, x, lambda)?;
    Ok(CheckReport {
        stationarity: kkt.stationarity,
        complementarity: kkt.complementarity,
        feasibility: kkt.feasibility,
        feasibility_violation: prob.feasibility_violation(x),
    })
}

pub fn cmd_check(args: &CheckArgs) -> CliResult<i32> {
    let prob = read_instance(&args.instance)?;
    let x = read_point(&args.point)?;
    let lambda = match &args.multipliers {
        Some(p) => vector_field(&std::fs::read_to_string(p)?, &["lambda"], "multipliers")?,
        None => DVector::zeros(prob.m),
    };
    let report = check_point(&prob, &x, &lambda)?;
    println!("{}", to_json_string(&report)?);
    Ok(EXIT_CONVERGED)
}

pub fn cmd_selftest(args: &SelftestArgs) -> CliResult<i32> {
    let outcomes = selftest::run_all(args.seed)?;
    let mut all = true;
    for o in &outcomes {
        println!("{o}");
        all &= o.passed;
    }
    println!("selftest: {}", if all { "all suites passed" } else { "FAILED" });
    Ok(if all { EXIT_CONVERGED } else { EXIT_ERROR })
}
