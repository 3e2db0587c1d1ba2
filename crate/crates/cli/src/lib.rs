//! The `etaquot` command line.
//!
//! Every run ends with one of four exit codes: [`EXIT_OK`], [`EXIT_FAILED`]
//! (nonconvergence or a failed verification), [`EXIT_VIOLATION`]
//! (admissibility, positivity or barrier violation) and [`EXIT_INPUT`].

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use etaquot::gridpde::{
    continuation_solve_report, monitor_estimates_with, newton_solve_report, Grid, GridField, NodeKind, ProblemConfig,
};
use etaquot::harness::{probe_csv, probe_kn, sweep, SweepSpec};
use etaquot::hypersurf::{
    barrier_check_with, graph_geometry, radial_geometry, radial_solve_report, verify_commutator,
    verify_suw_identity, verify_support_identities, RadialGraph, SphereMesh, SurfaceGeometry,
};
use etaquot::expr::Bindings;
use etaquot::{Error, Expr, QuotientOp, Result};

pub mod config;

use config::{from_json, BarrierSpec, GeometryConfig, ProbeSpec, RadialSolveSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "etaquot", version, about = "Hessian quotient operators: sweeps, solvers and geometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunConfig,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// JSON configuration file.
    #[arg(short, long, global = true)]
    pub spec: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(short, long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Seed for randomized sweeps; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Solver tolerance; overrides the configuration.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Grid size: points per axis, or latitude and longitude counts.
    #[arg(long, global = true, num_args = 1.., value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Weight exponent of the Pogorelov monitor.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Progress messages on standard error; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Randomized inequality sweep over the Gårding cones.
    Verify,
    /// Finite-difference Dirichlet problem.
    Solve,
    /// Curvature of a graph or radial graph, with identity residuals.
    Geometry,
    /// Barrier conditions for a prescribed-curvature radial problem.
    Barrier,
    /// Prescribed-curvature radial graph over the sphere.
    RadialSolve,
    /// Key-lemma ratios along the k = n degeneration family.
    ProbeKn,
}

/// A run that finished without a hard error.
enum Outcome {
    Done,
    /// Completed, but the result fails its own check.
    Failed(String),
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonConvergence(_) | Error::LinearSolve(_) | Error::Initialization(_) => EXIT_FAILED,
        Error::Admissibility { .. } | Error::Positivity(_) | Error::Barrier(_) => EXIT_VIOLATION,
        Error::IndexDomain(_)
        | Error::Domain(_)
        | Error::Stencil(_)
        | Error::Capability(_)
        | Error::Expr(_)
        | Error::Input(_)
        | Error::Io(_) => EXIT_INPUT,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command, &cli.run) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Failed(why)) => {
            eprintln!("etaquot: {why}");
            EXIT_FAILED
        }
        Err(e) => {
            eprintln!("etaquot: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: &Command, run: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&run.out)?;
    match cmd {
        Command::Verify => verify(run),
        Command::Solve => solve(run),
        Command::Geometry => geometry(run),
        Command::Barrier => barrier(run),
        Command::RadialSolve => radial(run),
        Command::ProbeKn => probe(run),
    }
}

fn read_spec(run: &RunConfig) -> Result<Option<String>> {
    run.spec.as_ref().map(fs::read_to_string).transpose().map_err(Error::from)
}

fn require_spec(run: &RunConfig, what: &str) -> Result<String> {
    read_spec(run)?.ok_or_else(|| Error::Input(format!("{what} needs --spec")))
}

fn write(run: &RunConfig, name: &str, contents: &str) -> Result<()> {
    let path = run.out.join(name);
    fs::write(&path, contents)?;
    if run.verbose > 0 {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn verify(run: &RunConfig) -> Result<Outcome> {
    let mut spec = match read_spec(run)? {
        Some(text) => SweepSpec::from_json(&text)?,
        None => SweepSpec::default(),
    };
    if let Some(seed) = run.seed {
        spec.seed = seed;
    }
    if run.verbose > 0 {
        eprintln!("sweeping {} configurations, {} samples each", spec.configs.len(), spec.samples);
    }
    let report = sweep(&spec)?;
    write(run, "sweep.csv", &report.to_csv())?;
    println!("{} rows, {} failures", report.rows.len(), report.total_failures());
    if report.is_clean() {
        Ok(Outcome::Done)
    } else {
        Ok(Outcome::Failed(format!("{} inequality failures", report.total_failures())))
    }
}

fn solve(run: &RunConfig) -> Result<Outcome> {
    let mut cfg = ProblemConfig::from_json(&require_spec(run, "solve")?)?;
    if let Some(g) = &run.grid {
        cfg.points = single(g)?;
    }
    if let Some(tol) = run.tol {
        cfg.solver.tol = tol;
    }
    if let Some(beta) = run.beta {
        cfg.solver.beta = beta;
    }
    let problem = cfg.to_problem()?;
    let sol = if cfg.continuation {
        continuation_solve_report(&problem, cfg.points, &cfg.solver, None)?
    } else {
        newton_solve_report(&problem, cfg.points, &cfg.solver, None)?
    };
    write(run, "iterations.csv", &sol.diagnostics.to_csv())?;
    write(run, "solution.csv", &sol.field.to_csv())?;
    let m = monitor_estimates_with(&sol.field, cfg.solver.beta, cfg.solver.norm, cfg.solver.exec)?;
    write(
        run,
        "monitors.csv",
        &format!(
            "beta,global_sup,interior_sup,pogorelov_sup\n{:?},{:?},{:?},{:?}\n",
            cfg.solver.beta, m.global_sup, m.interior_sup, m.pogorelov_sup
        ),
    )?;
    let d = &sol.diagnostics;
    println!("{} iterations, sup residual {:e}", d.iterations(), d.final_residual());
    match sol.into_result() {
        Ok(_) => Ok(Outcome::Done),
        Err(e) => Ok(Outcome::Failed(e.to_string())),
    }
}

fn single(grid: &[usize]) -> Result<usize> {
    match grid {
        [p] => Ok(*p),
        _ => Err(Error::Input(format!("--grid takes one value here, got {}", grid.len()))),
    }
}

fn mesh_of(grid: &[usize]) -> Result<SphereMesh> {
    match grid {
        [a, b] => SphereMesh::new(*a, *b),
        _ => Err(Error::Input(format!("--grid takes two values here, got {}", grid.len()))),
    }
}

fn op_of(n: usize, k: Option<usize>, l: Option<usize>) -> Result<Option<QuotientOp>> {
    match (k, l) {
        (None, None) => Ok(None),
        (k, l) => QuotientOp::new(n, k.unwrap_or(1), l.unwrap_or(0)).map(Some),
    }
}

fn quotient_csv(geo: &SurfaceGeometry, op: QuotientOp) -> Result<String> {
    let mut out = String::from("node,quotient\n");
    for (node, q) in geo.nodes.iter().zip(geo.quotient_values(op)?) {
        match q {
            Some(v) => out.push_str(&format!("{},{v:?}\n", node.node)),
            None => out.push_str(&format!("{},\n", node.node)),
        }
    }
    Ok(out)
}

fn graph_field(grid: Grid, u: &Expr) -> Result<GridField> {
    let mut values = vec![0.0; grid.len()];
    for (p, v) in values.iter_mut().enumerate() {
        if grid.kind(p) != NodeKind::Inactive {
            *v = u.eval(&Bindings::point(&grid.coords(p)))?;
        }
    }
    Ok(GridField { grid, values })
}

fn geometry(run: &RunConfig) -> Result<Outcome> {
    let cfg: GeometryConfig = from_json("geometry", &require_spec(run, "geometry")?)?;
    match cfg {
        GeometryConfig::Radial { warp, r, grid, k, l } => {
            let mesh = mesh_of(run.grid.as_deref().unwrap_or(&grid))?;
            let graph = RadialGraph::from_expr(warp.model()?, mesh, &Expr::parse(&r)?)?;
            let geo = radial_geometry(&graph)?;
            write(run, "geometry.csv", &geo.to_csv())?;
            write(run, "identities.csv", &verify_support_identities(&graph)?.to_csv())?;
            if let Some(op) = op_of(2, k, l)? {
                write(run, "quotient.csv", &quotient_csv(&geo, op)?)?;
            }
            println!("{} nodes", geo.nodes.len());
        }
        GeometryConfig::Graph { domain, u, points, k, l } => {
            let points = match &run.grid {
                Some(g) => single(g)?,
                None => points,
            };
            let n = domain.dim();
            let field = graph_field(Grid::new(domain, points)?, &Expr::parse(&u)?)?;
            let geo = graph_geometry(&field)?;
            write(run, "geometry.csv", &geo.to_csv())?;
            let mut ids = verify_commutator(&field)?;
            if let Some(op) = op_of(n, k, l)? {
                write(run, "quotient.csv", &quotient_csv(&geo, op)?)?;
                let suw = verify_suw_identity(&field, op)?;
                ids.residuals.extend(suw.residuals);
            }
            write(run, "identities.csv", &ids.to_csv())?;
            println!("{} nodes", geo.nodes.len());
        }
    }
    Ok(Outcome::Done)
}

fn barrier(run: &RunConfig) -> Result<Outcome> {
    let spec: BarrierSpec = from_json("barrier", &require_spec(run, "barrier")?)?;
    let op = QuotientOp::new(spec.n, spec.k, spec.l)?;
    let report = barrier_check_with(&spec.warp.model()?, &Expr::parse(&spec.psi)?, spec.r1, spec.r2, op, &spec.check)?;
    write(run, "barrier_samples.csv", &report.to_csv())?;
    write(run, "barrier.csv", &report.summary_csv())?;
    for c in &report.conditions {
        println!("{}: margin {:e}", c.name, c.margin);
    }
    if report.passed() {
        Ok(Outcome::Done)
    } else {
        Err(Error::Barrier("see barrier.csv".into()))
    }
}

fn radial(run: &RunConfig) -> Result<Outcome> {
    let mut spec: RadialSolveSpec = from_json("radial-solve", &require_spec(run, "radial-solve")?)?;
    if let Some(g) = &run.grid {
        let mesh = mesh_of(g)?;
        spec.solver.n_lat = mesh.n_lat;
        spec.solver.n_lon = mesh.n_lon;
    }
    if let Some(tol) = run.tol {
        spec.solver.tol = tol;
    }
    let warp = spec.warp.model()?;
    let start = match &spec.start {
        Some(text) => {
            let mesh = SphereMesh::new(spec.solver.n_lat, spec.solver.n_lon)?;
            Some(RadialGraph::from_expr(warp.clone(), mesh, &Expr::parse(text)?)?)
        }
        None => None,
    };
    let sol = radial_solve_report(&warp, &Expr::parse(&spec.psi)?, spec.r1, spec.r2, &spec.solver, start)?;
    if let Some(b) = &sol.barrier {
        write(run, "barrier.csv", &b.summary_csv())?;
    }
    write(run, "history.csv", &sol.history_csv())?;
    write(run, "radial.csv", &sol.graph.to_csv())?;
    println!("{} iterations, sup residual {:e}", sol.history.len().saturating_sub(1), sol.residual_sup());
    if sol.left_band {
        eprintln!("etaquot: warning: an iterate left [{}, {}]", spec.r1, spec.r2);
    }
    match sol.into_result() {
        Ok(_) => Ok(Outcome::Done),
        Err(e) => Ok(Outcome::Failed(e.to_string())),
    }
}

fn probe(run: &RunConfig) -> Result<Outcome> {
    let spec = match read_spec(run)? {
        Some(text) => from_json("probe-kn", &text)?,
        None => ProbeSpec::default(),
    };
    let op = QuotientOp::new(spec.n, spec.k, spec.l)?;
    let rows = probe_kn(op, spec.theta, spec.mu, &spec.eps)?;
    write(run, "probe.csv", &probe_csv(op, &rows))?;
    for r in &rows {
        println!("eps {:e}: ratio {:e}, second {:e}", r.eps, r.min_ratio, r.second_ratio);
    }
    Ok(Outcome::Done)
}
