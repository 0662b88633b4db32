use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use matchopt::bvn::sample_assignment;
use matchopt::cost_model::calibrate_logistic;
use matchopt::experiments::{run_feasible_sweep, write_outputs, ExperimentConfig};
use matchopt::io;
use matchopt::ot::{CostMatrix, SquareMatrix, DEFAULT_MAX_ITER, DEFAULT_TOL};
use matchopt::plan::solve_with_summary;
use matchopt::Error;

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_FAILURE: u8 = 1;

/// Welfare-optimal one-to-one matching with entropy-regularized optimal transport.
///
/// Exit codes: 0 success, 1 internal or output failure, 2 malformed input or
/// config, 3 solver did not converge (outputs are still written).
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "MATCHOPT_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one cost matrix and write the plan, potentials and permutation mixture.
    Solve(SolveArgs),
    /// Run a simulation sweep described by a TOML config.
    Experiment(ExperimentArgs),
    /// Render a coupling as long-format CSV and optionally SVG.
    Heatmap(HeatmapArgs),
    /// Print the calibrated logistic cost model for a complementarity gap.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct SolverFlags {
    /// Convergence tolerance on the marginal residual.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
}

#[derive(Args)]
struct SolveArgs {
    /// Square cost matrix as CSV, header optional.
    cost: PathBuf,
    /// Regularization `1/eta`; 0 gives the exact assignment.
    #[arg(long, default_value_t = 0.0)]
    eta_inverse: f64,
    /// Rescale entries affinely onto [0, 1] first.
    #[arg(long)]
    normalize: bool,
    /// Also draw one assignment from the permutation mixture.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long, default_value = "solve_out")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// Override the repetition count.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the regularization grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    eta_inverse: Option<Vec<f64>>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, default_value = "experiment_out")]
    out: PathBuf,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Long-format coupling CSV (`x_index,w_index,mass`, extra columns allowed).
    plan: PathBuf,
    /// Select rows with this `inv_eta`, for files holding several plans.
    #[arg(long)]
    eta_inverse: Option<f64>,
    /// Select rows with this `gamma`.
    #[arg(long)]
    gamma: Option<f64>,
    /// Also write `heatmap.svg`.
    #[arg(long)]
    svg: bool,
    #[arg(long, default_value_t = 6)]
    cell_px: usize,
    #[arg(long, default_value = "heatmap_out")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    gamma: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) | Error::Config { .. } | Error::Csv(_) | Error::Json(_) | Error::Refused(_) => {
                EXIT_BAD_INPUT
            }
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn bad_input(e: Error) -> Failure {
    Failure { code: EXIT_BAD_INPUT, message: e.to_string() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.workers {
        if k == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_BAD_INPUT);
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Experiment(a) => experiment(a, cli.workers),
        Command::Heatmap(a) => heatmap(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_cost(path: &Path, normalize: bool) -> Result<CostMatrix, Failure> {
    let m = io::read_matrix_file(path).map_err(bad_input)?;
    let m = if normalize {
        let (lo, hi) = (m.min(), m.max());
        let span = if hi > lo { hi - lo } else { 1.0 };
        SquareMatrix::from_fn(m.n(), |i, j| (m.get(i, j) - lo) / span).map_err(bad_input)?
    } else {
        m
    };
    if m.min() < 0.0 {
        return Err(bad_input(Error::InvalidInput("costs must be nonnegative; pass --normalize to rescale".into())));
    }
    CostMatrix::with_tight_bound(m).map_err(bad_input)
}

fn solve(a: SolveArgs) -> Result<u8, Failure> {
    let c = load_cost(&a.cost, a.normalize)?;
    let art = solve_with_summary(&c, a.eta_inverse, a.solver.tol, a.solver.max_iter)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    io::write_coupling_csv(&a.out.join("coupling.csv"), &art.plan.coupling)?;
    let pot = matchopt::ot::DualPotentials { f: art.f.clone(), g: art.g.clone(), eta: art.plan.eta().unwrap_or(0.0) };
    io::write_potentials_csv(&a.out.join("potentials.csv"), &pot)?;
    if let Some(mix) = &art.mixture {
        io::write_mixture_csv(&a.out.join("mixture.csv"), mix)?;
    }
    let mut json = serde_json::to_value(&art.summary).map_err(Error::from)?;
    json["normalized"] = a.normalize.into();
    if let (Some(seed), Some(mix)) = (a.seed, &art.mixture) {
        json["seed"] = seed.into();
        json["sampled_assignment"] = serde_json::to_value(sample_assignment(mix, seed)).map_err(Error::from)?;
    }
    let text = serde_json::to_string_pretty(&json).map_err(Error::from)?;
    fs::write(a.out.join("summary.json"), text + "\n").map_err(Error::from)?;

    let s = &art.summary;
    println!(
        "n={} 1/eta={} welfare={:.10} kl={:.6e} gap={:.3e} converged={}",
        s.n, s.inv_eta, s.welfare, s.kl, s.duality_gap, s.converged
    );
    if let Some(e) = &s.bvn_error {
        eprintln!("warning: permutation mixture not written: {e}");
    }
    Ok(if s.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn experiment(a: ExperimentArgs, workers: Option<usize>) -> Result<u8, Failure> {
    let text = fs::read_to_string(&a.config).map_err(|e| bad_input(e.into()))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(bad_input)?;
    if a.reps.is_some() {
        cfg.repetitions = a.reps;
    }
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    if let Some(grid) = a.eta_inverse {
        cfg.eta_inverse_grid = grid;
    }
    if let Some(t) = a.tol {
        cfg.sinkhorn_tol = t;
    }
    if let Some(m) = a.max_iter {
        cfg.sinkhorn_max_iter = m;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    cfg.validate().map_err(bad_input)?;

    let started = chrono::Utc::now();
    let summary = run_feasible_sweep(&cfg)?;
    let manifest = write_outputs(&summary, &cfg, &a.out, started)?;
    println!("{} runs in {} cells written to {}", manifest.total_runs, manifest.cells.len(), a.out.display());
    if manifest.nonconverged_runs > 0 {
        eprintln!("warning: {} runs did not converge and are excluded from summaries", manifest.nonconverged_runs);
    }
    Ok(0)
}

fn heatmap(a: HeatmapArgs) -> Result<u8, Failure> {
    let mut filter = Vec::new();
    if let Some(v) = a.eta_inverse {
        filter.push(("inv_eta", v));
    }
    if let Some(g) = a.gamma {
        filter.push(("gamma", g));
    }
    let pi = io::read_coupling_file(&a.plan, &filter).map_err(bad_input)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    io::write_coupling_csv(&a.out.join("heatmap.csv"), &pi)?;
    if a.svg {
        fs::write(a.out.join("heatmap.svg"), io::heatmap_svg(&pi, a.cell_px.max(1))).map_err(Error::from)?;
    }
    println!("{0}x{0} heatmap written to {1}", pi.n(), a.out.display());
    Ok(0)
}

fn calibrate(a: CalibrateArgs) -> Result<u8, Failure> {
    let d = calibrate_logistic(a.gamma).map_err(bad_input)?;
    println!("gamma = {}", d.gamma);
    println!("a = {}", io::format_float(d.a));
    println!("b = {}", io::format_float(d.b));
    println!("c = {}", io::format_float(d.c_coef));
    println!("d = {}", io::format_float(d.d));
    println!("beta_alpha = {}", d.beta_alpha);
    println!("beta_beta = {}", d.beta_beta);
    println!("max_anchor_residual = {:e}", d.max_anchor_residual());
    Ok(0)
}
