//! Command-line front end and file formats.
//!
//! Subcommands: `generate`, `solve`, `benchmark`, `inpaint`, `eval-nmae`.
//! Exit codes: 0 success, 2 invalid input, 3 solver abort.

pub mod grid;
pub mod inpaint;
pub mod logging;
pub mod matrix_io;
pub mod pgm;
pub mod ratings;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use log::{info, LevelFilter};
use serde_json::json;

use crate::error::{Error, Result};
use crate::operators::{EntryMask, MeasurementMap, MeasurementVector};
use crate::problems::{freedom_stats, gen_instance, rel_error, rows_to_csv, run_benchmark_detailed, solver_seed, GridCell};
use crate::solvers::{solve, Profile, SolverConfig, SvdMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_SOLVER_ABORT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nucnorm", version, about = "Nuclear-norm minimization and matrix completion")]
pub struct Cli {
    /// Write JSON-lines log records to this file.
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: LevelFilter,
    /// Worker threads for parallel trials.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random low-rank matrix completion instance.
    Generate(GenerateArgs),
    /// Solve a matrix completion or affine problem from files.
    Solve(SolveArgs),
    /// Recovery table over a grid of problem sizes.
    Benchmark(BenchmarkArgs),
    /// Fill in missing pixels of a grayscale image.
    Inpaint(InpaintArgs),
    /// Held-out NMAE on a ratings file.
    EvalNmae(EvalNmaeArgs),
}

/// Solver parameters; omitted values come from the profile.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// fpc1, fpc2, fpc3, fpca, bregman or fpca-easy.
    #[arg(long)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub mu_bar: Option<f64>,
    #[arg(long)]
    pub eta_mu: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub xtol: Option<f64>,
    #[arg(long)]
    pub gtol: Option<f64>,
    #[arg(long)]
    pub inner_max: Option<usize>,
    /// Approximate SVD rank threshold (approximate profiles only).
    #[arg(long)]
    pub eps_ks: Option<f64>,
    /// Approximate SVD column samples (approximate profiles only).
    #[arg(long)]
    pub cs: Option<usize>,
    #[arg(long)]
    pub bregman_outer: Option<usize>,
}

impl SolverArgs {
    pub fn profile_or(&self, default: Profile) -> Profile {
        self.profile.unwrap_or(default)
    }

    pub fn config(&self, default: Profile, seed: u64) -> Result<SolverConfig> {
        let mut cfg = self.profile_or(default).config();
        cfg.seed = seed;
        if let Some(v) = self.mu_bar {
            cfg.mu_bar = v;
        }
        if let Some(v) = self.eta_mu {
            cfg.eta_mu = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.xtol {
            cfg.xtol = v;
        }
        if let Some(v) = self.gtol {
            cfg.gtol = v;
        }
        if let Some(v) = self.inner_max {
            cfg.inner_max = v;
        }
        if let Some(v) = self.bregman_outer {
            cfg.bregman_outer = v;
        }
        match &mut cfg.svd_mode {
            SvdMode::Approximate(a) => {
                if let Some(v) = self.eps_ks {
                    a.epsilon_ks = v;
                }
                if self.cs.is_some() {
                    a.c_s = self.cs;
                }
            }
            SvdMode::Exact if self.eps_ks.is_some() || self.cs.is_some() => {
                return Err(Error::invalid("--eps-ks and --cs need an approximate-SVD profile"));
            }
            SvdMode::Exact => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long)]
    pub rank: usize,
    /// Number of observed entries.
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Measurements in coordinate format.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth matrix in coordinate format.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("problem").required(true).args(["input", "operator"])))]
pub struct SolveArgs {
    /// Observed entries in coordinate format.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Coefficient matrix (p × rows·cols, column-major vec) as CSV or coordinate text.
    #[arg(long, requires_all = ["rhs", "rows", "cols"])]
    pub operator: Option<PathBuf>,
    /// Right-hand side, one value per line.
    #[arg(long)]
    pub rhs: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Ground truth for a rel.err report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Solution in coordinate format.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Seed for the approximate SVD sampler.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("cells").required(true).args(["grid", "rows"])))]
pub struct BenchmarkArgs {
    /// TOML grid file.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, requires_all = ["cols", "samples", "ranks"])]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Comma-separated ranks.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed of the trial seed rule.
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-trial outcomes as JSON.
    #[arg(long)]
    pub details: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mask").required(true).args(["mask_fraction", "mask_file"])))]
pub struct InpaintArgs {
    /// Grayscale PGM (P2 or P5).
    #[arg(long)]
    pub image: PathBuf,
    /// Fraction of pixels hidden uniformly at random.
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    /// PGM of the same size; nonzero pixels are observed.
    #[arg(long)]
    pub mask_file: Option<PathBuf>,
    /// Reference image for rel.err; defaults to the input under a random mask.
    #[arg(long)]
    pub original: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reconstructed image (P5).
    #[arg(long)]
    pub out: PathBuf,
    /// Text report; always printed to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EvalNmaeArgs {
    /// CSV rows `user,item,rating`.
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
    pub r_min: f64,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub r_max: f64,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_input_error() {
        EXIT_INVALID_INPUT
    } else {
        EXIT_SOLVER_ABORT
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    logging::init(cli.log.as_deref(), cli.log_level)?;
    let result = match cli.jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(|| execute(cli.command))
        }
        None => execute(cli.command),
    };
    log::logger().flush();
    result
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve_cmd(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Inpaint(a) => inpaint_cmd(a),
        Command::EvalNmae(a) => eval_nmae_cmd(a),
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => matrix_io::write_text(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|()| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn to_json(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn generate(a: GenerateArgs) -> Result<()> {
    let inst = gen_instance(a.rows, a.cols, a.rank, a.samples, a.seed)?;
    let mask = EntryMask::new(a.rows, a.cols, inst.omega.clone())?;
    matrix_io::write_measurements(&a.out, &mask, &inst.b)?;
    if let Some(t) = &a.truth {
        matrix_io::write_matrix(t, &inst.m)?;
    }
    let stats = freedom_stats(a.rows, a.cols, a.samples, a.rank)?;
    emit(
        None,
        &to_json(&json!({
            "rows": a.rows, "cols": a.cols, "rank": a.rank, "samples": a.samples,
            "seed": a.seed, "sr": stats.sr, "fr": stats.fr, "r_m": stats.r_m,
        })),
    )
}

fn solve_cmd(a: SolveArgs) -> Result<()> {
    let (map, b): (MeasurementMap, MeasurementVector) = match (&a.input, &a.operator) {
        (Some(input), None) => {
            let (mask, b) = matrix_io::read_measurements(input)?;
            (mask.into(), b)
        }
        (None, Some(op)) => {
            let (rows, cols) = (a.rows.expect("required by clap"), a.cols.expect("required by clap"));
            let affine = matrix_io::read_affine(op, rows, cols)?;
            let b = matrix_io::read_vector(a.rhs.as_deref().expect("required by clap"))?;
            (affine.into(), b)
        }
        _ => return Err(Error::invalid("give exactly one of --input or --operator")),
    };
    let profile = a.solver.profile_or(Profile::Fpc1);
    let cfg = a.solver.config(Profile::Fpc1, a.seed)?;
    let report = solve(&map, &b, &cfg)?;
    info!(
        "{profile}: rank {} residual {:.3e} in {:.3}s",
        report.final_rank, report.residual_norm, report.elapsed_seconds
    );
    let rel_err = match &a.truth {
        Some(t) => Some(rel_error(&report.x_opt, &matrix_io::read_matrix(t)?)?),
        None => None,
    };
    if let Some(out) = &a.out {
        matrix_io::write_matrix(out, &report.x_opt)?;
    }
    let mut value = serde_json::to_value(&report).expect("serializable");
    value["profile"] = json!(profile.name());
    value["rel_err"] = json!(rel_err);
    emit(a.report.as_deref(), &to_json(&value))
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let file = a.grid.as_deref().map(grid::read_grid).transpose()?;
    let cells = match (&file, a.rows) {
        (Some(f), _) => f.cells.clone(),
        (None, Some(rows)) => {
            let (cols, p) = (a.cols.expect("required by clap"), a.samples.expect("required by clap"));
            a.ranks
                .as_deref()
                .unwrap_or_default()
                .iter()
                .map(|&r| GridCell { m: rows, n: cols, r, p })
                .collect()
        }
        (None, None) => return Err(Error::invalid("give --grid or --rows/--cols/--samples/--ranks")),
    };
    let trials = a.trials.or(file.as_ref().and_then(|f| f.trials)).unwrap_or(10);
    let base_seed = a.seed.or(file.as_ref().and_then(|f| f.base_seed)).unwrap_or(0);
    let default_profile = file.as_ref().and_then(|f| f.profile).unwrap_or(Profile::Fpc1);
    let cfg = a.solver.config(default_profile, 0)?;
    info!(
        "benchmark: {} cells, {trials} trials, profile {}, base seed {base_seed}",
        cells.len(),
        a.solver.profile_or(default_profile)
    );
    let detailed = run_benchmark_detailed(&cells, trials, &cfg, base_seed)?;
    if let Some(path) = &a.details {
        let cells_json: Vec<_> = cells
            .iter()
            .zip(&detailed)
            .map(|(cell, (_, outcomes))| json!({ "cell": cell, "trials": outcomes }))
            .collect();
        matrix_io::write_text(path, &to_json(&json!(cells_json)))?;
    }
    let rows: Vec<_> = detailed.into_iter().map(|(row, _)| row).collect();
    emit(a.out.as_deref(), &rows_to_csv(&rows))
}

fn inpaint_cmd(a: InpaintArgs) -> Result<()> {
    let image = pgm::read_pgm(&a.image)?;
    let masked = match (a.mask_fraction, &a.mask_file) {
        (Some(rho), None) => inpaint::MaskedImage::random(&image, rho, a.seed)?,
        (None, Some(path)) => inpaint::MaskedImage::with_mask_image(&image, &pgm::read_pgm(path)?)?,
        _ => return Err(Error::invalid("give exactly one of --mask-fraction or --mask-file")),
    };
    let reference = match (&a.original, a.mask_fraction) {
        (Some(path), _) => {
            let orig = pgm::read_pgm(path)?;
            if (orig.width, orig.height) != (image.width, image.height) {
                return Err(Error::shape(
                    format!("{}x{} original", image.width, image.height),
                    format!("{}x{}", orig.width, orig.height),
                ));
            }
            Some(orig.to_unit_matrix())
        }
        (None, Some(_)) => Some(image.to_unit_matrix()),
        (None, None) => None,
    };
    let profile = a.solver.profile_or(Profile::Fpca);
    let cfg = a.solver.config(Profile::Fpca, solver_seed(a.seed))?;
    let result = inpaint::inpaint(&masked, &cfg)?;
    pgm::write_pgm(&a.out, &pgm::GrayImage::from_unit_matrix(&result.composite, image.maxval)?)?;

    let mut text = format!(
        "width: {}\nheight: {}\nobserved_fraction: {:.6}\nprofile: {profile}\n",
        image.width,
        image.height,
        masked.observed_fraction()
    );
    if let Some(rep) = &result.report {
        text.push_str(&format!(
            "final_rank: {}\nsolve_seconds: {:.3}\nsvd_calls: {}\n",
            rep.final_rank, rep.elapsed_seconds, rep.svd_calls
        ));
    }
    if let Some(orig) = &reference {
        let (low, comp) = result.errors(orig)?;
        text.push_str(&format!("rel_err_low_rank: {low:.6e}\nrel_err_composite: {comp:.6e}\n"));
    }
    if let Some(path) = &a.report {
        matrix_io::write_text(path, &text)?;
    }
    emit(None, &text)
}

fn eval_nmae_cmd(a: EvalNmaeArgs) -> Result<()> {
    let data = ratings::Ratings::read(&a.ratings)?;
    let cfg = a.solver.config(Profile::Fpca, solver_seed(a.seed))?;
    let report = ratings::eval_nmae(&data, a.seed, a.r_min, a.r_max, &cfg)?;
    info!("NMAE {:.4} over {} users", report.nmae, report.users_evaluated);
    emit(a.out.as_deref(), &to_json(&serde_json::to_value(&report).expect("serializable")))
}
