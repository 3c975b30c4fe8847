//! Fixed-point continuation for `min μ‖X‖_* + ½‖A(X) − b‖²`.
//!
//! Each inner step is a proximal gradient step
//! `Y = X − τ A*(A(X) − b)`, `X ← S_{τμ}(Y)`, run until the iterates settle,
//! and `μ` is driven geometrically from `η_μ ‖A*b‖₂` down to `μ̄`.
//! The same loop runs with an exact SVD or with the Monte Carlo SVD of
//! [`crate::approx_svd`]; [`bregman_solve`] wraps it in the Bregman outer
//! iteration that re-adds the residual to `b`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::approx_svd::{
    linear_time_svd, record_step, ApproxSvdConfig, ColumnSampling, RankController,
};
use crate::error::{Error, Result};
use crate::linalg::{full_svd, shrink_factors, spectral_norm, DenseMatrix, SvdFactors};
use crate::operators::{MeasurementMap, MeasurementVector};
use crate::problems::max_identifiable_rank;

/// Relative slack used when comparing consecutive shrinkage outputs against
/// their inputs.
const NONEXPANSIVE_SLACK: f64 = 1e-10;
/// Exact-mode steps with a rising objective tolerated before aborting.
const MAX_OBJECTIVE_INCREASES: usize = 50;
const GTOL_SPECTRAL_TOL: f64 = 1e-8;
const MU_SPECTRAL_TOL: f64 = 1e-6;
/// `stopping_g` is only evaluated for matrices up to this size.
pub const GTOL_MAX_DIM: usize = 200;

const DEBIAS_MAX_ITERS: usize = 500;
const DEBIAS_TOL: f64 = 1e-10;

/// Settings for the Monte Carlo SVD path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ApproxSettings {
    pub epsilon_ks: f64,
    /// Sampled column count; `2 r_m − 2` when unset.
    pub c_s: Option<usize>,
    #[serde(skip)]
    pub sampling: ColumnSampling,
}

impl Default for ApproxSettings {
    fn default() -> Self {
        ApproxSettings {
            epsilon_ks: 1e-2,
            c_s: None,
            sampling: ColumnSampling::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SvdMode {
    Exact,
    Approximate(ApproxSettings),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverConfig {
    pub mu_bar: f64,
    pub eta_mu: f64,
    pub tau: f64,
    pub xtol: f64,
    pub gtol: f64,
    /// Iteration cap per `μ` stage.
    pub inner_max: usize,
    pub svd_mode: SvdMode,
    /// Also require the subgradient test before leaving a stage.
    pub use_gtol: bool,
    pub debias: bool,
    pub debias_trigger: f64,
    /// Bregman outer iterations; zero runs plain continuation.
    pub bregman_outer: usize,
    /// Accept `τ = 2/λ_max` exactly instead of requiring `τ < 2/λ_max`.
    pub allow_boundary_tau: bool,
    /// Seed for the column sampler of the approximate SVD.
    pub seed: u64,
    /// Record per-iteration diagnostics and end-of-stage fixed-point residuals.
    pub track_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mu_bar: 1e-8,
            eta_mu: 0.25,
            tau: 1.0,
            xtol: 1e-10,
            gtol: 1e-4,
            inner_max: 500,
            svd_mode: SvdMode::Exact,
            use_gtol: false,
            debias: false,
            debias_trigger: 10.0,
            bregman_outer: 0,
            allow_boundary_tau: false,
            seed: 0,
            track_history: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_bar > 0.0) {
            return Err(Error::invalid("mu_bar must be positive"));
        }
        if !(self.eta_mu > 0.0 && self.eta_mu < 1.0) {
            return Err(Error::invalid("eta_mu must lie in (0, 1)"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(self.xtol > 0.0) || !(self.gtol > 0.0) {
            return Err(Error::invalid("xtol and gtol must be positive"));
        }
        if self.inner_max == 0 {
            return Err(Error::invalid("inner_max must be at least 1"));
        }
        if !(self.debias_trigger > 0.0) {
            return Err(Error::invalid("debias trigger must be positive"));
        }
        if let SvdMode::Approximate(a) = self.svd_mode {
            if !(a.epsilon_ks > 0.0) {
                return Err(Error::invalid("epsilon_ks must be positive"));
            }
            if a.c_s == Some(0) {
                return Err(Error::invalid("c_s must be positive"));
            }
        }
        Ok(())
    }
}

/// Named solver presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Profile {
    /// Exact SVD, `xtol` rule only.
    Fpc1,
    /// Exact SVD, `xtol` and subgradient rules.
    Fpc2,
    /// Exact SVD with debiasing.
    Fpc3,
    /// Approximate SVD, `xtol` rule only.
    Fpca,
    /// Three Bregman outer iterations over FPC2.
    Bregman,
    /// FPCA with loose settings for easy, very low-rank problems.
    FpcaEasy,
}

impl Profile {
    pub const ALL: [Profile; 6] = [
        Profile::Fpc1,
        Profile::Fpc2,
        Profile::Fpc3,
        Profile::Fpca,
        Profile::Bregman,
        Profile::FpcaEasy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Fpc1 => "fpc1",
            Profile::Fpc2 => "fpc2",
            Profile::Fpc3 => "fpc3",
            Profile::Fpca => "fpca",
            Profile::Bregman => "bregman",
            Profile::FpcaEasy => "fpca-easy",
        }
    }

    pub fn config(self) -> SolverConfig {
        let base = SolverConfig::default();
        match self {
            Profile::Fpc1 => base,
            Profile::Fpc2 => SolverConfig {
                use_gtol: true,
                ..base
            },
            Profile::Fpc3 => SolverConfig {
                debias: true,
                ..base
            },
            Profile::Fpca => SolverConfig {
                svd_mode: SvdMode::Approximate(ApproxSettings::default()),
                xtol: 1e-6,
                ..base
            },
            Profile::Bregman => SolverConfig {
                use_gtol: true,
                bregman_outer: 3,
                ..base
            },
            Profile::FpcaEasy => SolverConfig {
                svd_mode: SvdMode::Approximate(ApproxSettings::default()),
                mu_bar: 1e-4,
                xtol: 1e-4,
                tau: 2.0,
                inner_max: 10,
                allow_boundary_tau: true,
                ..base
            },
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown profile '{s}'")))
    }
}

/// One inner iteration, recorded when `track_history` is set.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IterationRecord {
    pub stage: usize,
    pub mu: f64,
    /// `‖X^{k+1} − X^k‖_F`.
    pub step_norm: f64,
    /// `μ‖X‖_* + ½‖A(X) − b‖²` after the step.
    pub objective: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub x_opt: DenseMatrix,
    pub final_rank: usize,
    pub mu_path: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    pub residual_norm: f64,
    pub elapsed_seconds: f64,
    pub svd_calls: usize,
    /// Target rank used at each approximate-SVD step.
    pub ks_history: Vec<usize>,
    /// Stages that ended by hitting `inner_max`.
    pub stages_at_inner_max: usize,
    pub debias_count: usize,
    /// `‖X − S_{τμ}(X − τ g(X))‖_F / max(1, ‖X‖_F)` at the end of each stage.
    pub stage_fixed_point_residuals: Vec<f64>,
    pub history: Vec<IterationRecord>,
    /// `‖A(X^k) − b‖₂` after each Bregman outer iteration.
    pub bregman_residuals: Vec<f64>,
}

/// Result of one proximal step.
#[derive(Clone, Debug)]
pub struct ProxStep {
    pub x_next: DenseMatrix,
    pub y: DenseMatrix,
    pub factors: SvdFactors,
}

/// Computes the shrinkage `S_ν(Y)` in factored form.
pub trait SvdBackend {
    fn shrink(&mut self, y: &DenseMatrix, nu: f64) -> Result<SvdFactors>;
}

/// Shrinkage through the exact SVD.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactSvd;

impl SvdBackend for ExactSvd {
    fn shrink(&mut self, y: &DenseMatrix, nu: f64) -> Result<SvdFactors> {
        shrink_factors(full_svd(y)?, nu)
    }
}

/// Shrinkage through the Monte Carlo SVD with an adaptive target rank.
#[derive(Clone, Debug)]
pub struct ApproxSvd {
    rng: ChaCha8Rng,
    c_s: usize,
    sampling: ColumnSampling,
    pub controller: RankController,
}

impl ApproxSvd {
    /// Starts at the full sampled rank `c_s`.
    pub fn new(c_s: usize, epsilon_ks: f64, sampling: ColumnSampling, seed: u64) -> Self {
        ApproxSvd {
            rng: ChaCha8Rng::seed_from_u64(seed),
            c_s,
            sampling,
            controller: RankController::new(c_s, epsilon_ks, c_s),
        }
    }

    pub fn current_ks(&self) -> usize {
        self.controller.current_ks
    }

    /// Adapts the target rank to the new shrunk spectrum, then books the
    /// non-expansiveness check.
    pub fn after_step(&mut self, shrunk_sigma: &[f64], violated: bool) {
        self.controller = record_step(self.controller.adapt(shrunk_sigma), violated);
    }
}

impl SvdBackend for ApproxSvd {
    fn shrink(&mut self, y: &DenseMatrix, nu: f64) -> Result<SvdFactors> {
        if y.max_abs() == 0.0 {
            return Ok(SvdFactors::empty(y.rows(), y.cols(), true));
        }
        let seed = self.rng.next_u64();
        let c_s = self.c_s.min(y.cols());
        let k_s = self.controller.current_ks.min(c_s);
        let cfg = ApproxSvdConfig::for_matrix(y, self.sampling, c_s, k_s, seed)?;
        shrink_factors(linear_time_svd(y, &cfg)?, nu)
    }
}

/// One fixed-point step `X ← S_{τμ}(X − τ g(X))`.
pub fn prox_step(
    x: &DenseMatrix,
    map: &MeasurementMap,
    b: &[f64],
    tau: f64,
    mu: f64,
    backend: &mut dyn SvdBackend,
) -> Result<ProxStep> {
    if !(tau * mu > 0.0) {
        return Err(Error::invalid("tau * mu must be positive"));
    }
    let g = map.gradient(x, b)?;
    let mut y = x.clone();
    y.axpy(-tau, &g);
    let factors = backend.shrink(&y, tau * mu)?;
    Ok(ProxStep {
        x_next: factors.reconstruct(),
        y,
        factors,
    })
}

/// `‖X_next − X_prev‖_F / max(1, ‖X_prev‖_F)`.
pub fn relative_change(x_prev: &DenseMatrix, x_next: &DenseMatrix) -> f64 {
    (x_next - x_prev).frobenius_norm() / x_prev.frobenius_norm().max(1.0)
}

pub fn stopping_x(x_prev: &DenseMatrix, x_next: &DenseMatrix, xtol: f64) -> bool {
    relative_change(x_prev, x_next) < xtol
}

/// Subgradient test `‖U Vᵀ + g/μ‖₂ − 1 < gtol`.
pub fn stopping_g(factors: &SvdFactors, g: &DenseMatrix, mu: f64, gtol: f64) -> Result<bool> {
    let mut certificate = factors.polar_factor();
    certificate.axpy(1.0 / mu, g);
    Ok(spectral_norm(&certificate, GTOL_SPECTRAL_TOL)? - 1.0 < gtol)
}

/// `‖X − S_{τμ}(X − τ g(X))‖_F / max(1, ‖X‖_F)` with the exact SVD.
pub fn fixed_point_residual(
    map: &MeasurementMap,
    b: &[f64],
    x: &DenseMatrix,
    tau: f64,
    mu: f64,
) -> Result<f64> {
    let step = prox_step(x, map, b, tau, mu, &mut ExactSvd)?;
    Ok(relative_change(x, &step.x_next))
}

/// Refits the singular values with `U` and `V` frozen:
/// `argmin_{σ ≥ 0} ‖A(U Diag(σ) Vᵀ) − b‖₂`, by projected gradient.
pub fn debias(factors: &SvdFactors, map: &MeasurementMap, b: &[f64]) -> Result<Vec<f64>> {
    map.check_vector(b)?;
    let r = factors.rank();
    if r == 0 {
        return Ok(Vec::new());
    }
    let p = map.len();
    // Columns a_k = A(u_k v_kᵀ).
    let mut design = DMatrix::<f64>::zeros(p, r);
    for k in 0..r {
        let column: Vec<f64> = match map {
            MeasurementMap::EntryMask(mask) => mask
                .omega()
                .iter()
                .map(|&(i, j)| factors.u.get(i, k) * factors.v.get(j, k))
                .collect(),
            MeasurementMap::ExplicitAffine(_) => {
                let u = DenseMatrix::from_vec_column_major(factors.u.rows(), 1, &factors.u.column(k));
                let v = DenseMatrix::from_vec_column_major(factors.v.rows(), 1, &factors.v.column(k));
                map.apply(&u.matmul(&v.transpose()))?.into_inner()
            }
        };
        design.set_column(k, &DVector::from_vec(column));
    }
    let gram = design.tr_mul(&design);
    let rhs = design.tr_mul(&DVector::from_column_slice(b));
    let lipschitz = gram.clone().symmetric_eigen().eigenvalues.max();
    if !(lipschitz > 0.0) {
        return Ok(vec![0.0; r]);
    }
    Ok(nnls_projected_gradient(&gram, &rhs, &factors.sigma, lipschitz))
}

fn nnls_projected_gradient(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    start: &[f64],
    lipschitz: f64,
) -> Vec<f64> {
    let step = 1.0 / lipschitz;
    let mut sigma = DVector::from_iterator(start.len(), start.iter().map(|s| s.max(0.0)));
    for _ in 0..DEBIAS_MAX_ITERS {
        let grad = gram * &sigma - rhs;
        let next = (&sigma - grad * step).map(|s| s.max(0.0));
        let change = (&next - &sigma).norm();
        sigma = next;
        if change <= DEBIAS_TOL * sigma.norm().max(1.0) {
            break;
        }
    }
    sigma.iter().copied().collect()
}

/// Continuation solve from `X = 0`.
pub fn fpc_solve(map: &MeasurementMap, b: &[f64], config: &SolverConfig) -> Result<SolveReport> {
    let (m, n) = map.shape();
    fpc_solve_from(map, b, &DenseMatrix::zeros(m, n), config)
}

/// Continuation solve warm-started at `x0`.
pub fn fpc_solve_from(
    map: &MeasurementMap,
    b: &[f64],
    x0: &DenseMatrix,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let start = Instant::now();
    Continuation::new(map, b, config)?.run(x0, start)
}

/// Dispatches to [`bregman_solve`] when `bregman_outer > 0`.
pub fn solve(map: &MeasurementMap, b: &[f64], config: &SolverConfig) -> Result<SolveReport> {
    if config.bregman_outer > 0 {
        bregman_solve(map, b, config)
    } else {
        fpc_solve(map, b, config)
    }
}

/// Bregman iteration: `b^{k+1} = b + (b^k − A(X^k))`, then a warm-started
/// continuation solve against `b^{k+1}`.
pub fn bregman_solve(map: &MeasurementMap, b: &[f64], config: &SolverConfig) -> Result<SolveReport> {
    if config.bregman_outer == 0 {
        return Err(Error::invalid("bregman_outer must be at least 1"));
    }
    map.check_vector(b)?;
    let b = MeasurementVector::new(b.to_vec())?;
    let start = Instant::now();
    let (m, n) = map.shape();
    let mut x = DenseMatrix::zeros(m, n);
    let mut b_k = MeasurementVector::zeros(b.len());
    let mut residuals = Vec::with_capacity(config.bregman_outer);
    let mut svd_calls = 0;
    let mut stages_at_inner_max = 0;
    let mut debias_count = 0;
    let mut last: Option<SolveReport> = None;

    for outer in 0..config.bregman_outer {
        let fitted = map.apply(&x)?;
        b_k = b.add(&b_k.sub(&fitted));
        let report = Continuation::new(map, &b_k, config)?.run(&x, Instant::now())?;
        x = report.x_opt.clone();
        let resid = map.residual(&x, &b)?.norm();
        debug!("bregman outer {} residual {:.3e}", outer + 1, resid);
        residuals.push(resid);
        svd_calls += report.svd_calls;
        stages_at_inner_max += report.stages_at_inner_max;
        debias_count += report.debias_count;
        last = Some(report);
    }

    let mut report = last.expect("at least one outer iteration");
    report.residual_norm = *residuals.last().expect("nonempty");
    report.bregman_residuals = residuals;
    report.svd_calls = svd_calls;
    report.stages_at_inner_max = stages_at_inner_max;
    report.debias_count = debias_count;
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

enum Backend {
    Exact(ExactSvd),
    Approx(ApproxSvd),
}

impl Backend {
    fn as_dyn(&mut self) -> &mut dyn SvdBackend {
        match self {
            Backend::Exact(b) => b,
            Backend::Approx(b) => b,
        }
    }
}

/// Per-solve state of the continuation loop.
struct Continuation<'a> {
    map: &'a MeasurementMap,
    b: &'a [f64],
    cfg: &'a SolverConfig,
    backend: Backend,
    use_gtol: bool,
    report: SolveReport,
}

/// Current iterate with its factors, residual and gradient.
struct Iterate {
    x: DenseMatrix,
    factors: SvdFactors,
    residual: MeasurementVector,
    grad: DenseMatrix,
}

impl<'a> Continuation<'a> {
    fn new(map: &'a MeasurementMap, b: &'a [f64], cfg: &'a SolverConfig) -> Result<Self> {
        cfg.validate()?;
        map.check_vector(b)?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement vector"));
        }
        let lipschitz = map.lipschitz_bound()?;
        let limit = 2.0 / lipschitz;
        if cfg.tau >= limit {
            if cfg.allow_boundary_tau && cfg.tau <= limit * (1.0 + 1e-12) {
                warn!(
                    "tau = {} sits on the convergence boundary 2/lambda_max = {}",
                    cfg.tau, limit
                );
            } else {
                return Err(Error::invalid(format!(
                    "tau = {} must be below 2/lambda_max = {}",
                    cfg.tau, limit
                )));
            }
        }

        let (m, n) = map.shape();
        let backend = match cfg.svd_mode {
            SvdMode::Exact => Backend::Exact(ExactSvd),
            SvdMode::Approximate(a) => {
                let c_s = a
                    .c_s
                    .unwrap_or_else(|| default_sample_count(m, n, map.len()))
                    .clamp(1, n);
                Backend::Approx(ApproxSvd::new(c_s, a.epsilon_ks, a.sampling, cfg.seed))
            }
        };
        let use_gtol =
            cfg.use_gtol && matches!(cfg.svd_mode, SvdMode::Exact) && m.max(n) <= GTOL_MAX_DIM;
        Ok(Continuation {
            map,
            b,
            cfg,
            backend,
            use_gtol,
            report: SolveReport {
                x_opt: DenseMatrix::zeros(m, n),
                final_rank: 0,
                mu_path: Vec::new(),
                inner_iterations: Vec::new(),
                residual_norm: 0.0,
                elapsed_seconds: 0.0,
                svd_calls: 0,
                ks_history: Vec::new(),
                stages_at_inner_max: 0,
                debias_count: 0,
                stage_fixed_point_residuals: Vec::new(),
                history: Vec::new(),
                bregman_residuals: Vec::new(),
            },
        })
    }

    fn iterate_at(&self, x: DenseMatrix, factors: SvdFactors) -> Result<Iterate> {
        let residual = self.map.residual(&x, self.b)?;
        let grad = self.map.adjoint(&residual)?;
        Ok(Iterate {
            x,
            factors,
            residual,
            grad,
        })
    }

    fn objective(&self, mu: f64, it: &Iterate) -> f64 {
        let fit = it.residual.norm();
        mu * it.factors.nuclear_norm() + 0.5 * fit * fit
    }

    fn run(mut self, x0: &DenseMatrix, start: Instant) -> Result<SolveReport> {
        if x0.shape() != self.map.shape() {
            return Err(Error::shape(
                format!("{:?}", self.map.shape()),
                format!("{:?}", x0.shape()),
            ));
        }
        x0.ensure_finite("initial iterate")?;
        let cfg = self.cfg;

        if self.b.iter().all(|&v| v == 0.0) {
            // X = 0 is optimal for every μ > 0.
            let (m, n) = self.map.shape();
            self.report.mu_path.push(cfg.mu_bar);
            self.report.inner_iterations.push(0);
            self.report.x_opt = DenseMatrix::zeros(m, n);
            self.report.elapsed_seconds = start.elapsed().as_secs_f64();
            return Ok(self.report);
        }

        let atb = self.map.adjoint(self.b)?;
        let mu_first = (cfg.eta_mu * spectral_norm(&atb, MU_SPECTRAL_TOL)?).max(cfg.mu_bar);
        let factors0 = if x0.max_abs() == 0.0 {
            SvdFactors::empty(x0.rows(), x0.cols(), false)
        } else {
            full_svd(x0)?
        };
        let mut current = self.iterate_at(x0.clone(), factors0)?;

        let mut mu = mu_first;
        let mut stage = 0;
        loop {
            current = self.run_stage(stage, mu, current)?;
            if mu <= cfg.mu_bar {
                break;
            }
            mu = (mu * cfg.eta_mu).max(cfg.mu_bar);
            stage += 1;
        }

        self.report.final_rank = current.factors.rank();
        self.report.residual_norm = current.residual.norm();
        self.report.x_opt = current.x;
        self.report.elapsed_seconds = start.elapsed().as_secs_f64();
        Ok(self.report)
    }

    fn run_stage(&mut self, stage: usize, mu: f64, mut current: Iterate) -> Result<Iterate> {
        let cfg = self.cfg;
        let nu = cfg.tau * mu;
        let exact = matches!(self.backend, Backend::Exact(_));
        let mut prev_y: Option<DenseMatrix> = None;
        let mut debiased = false;
        let mut rising = 0usize;
        let mut prev_objective = self.objective(mu, &current);
        let mut iterations = 0;
        let mut converged = false;

        while iterations < cfg.inner_max {
            iterations += 1;
            let mut y = current.x.clone();
            y.axpy(-cfg.tau, &current.grad);

            let ks_used = match &self.backend {
                Backend::Approx(a) => Some(a.current_ks()),
                Backend::Exact(_) => None,
            };
            let factors = self.backend.as_dyn().shrink(&y, nu).map_err(|e| match e {
                Error::SvdFailed(msg) => Error::SolverAbort(format!("SVD failed in stage {stage}: {msg}")),
                other => other,
            })?;
            self.report.svd_calls += 1;
            let x_next = factors.reconstruct();
            let step_norm = (&x_next - &current.x).frobenius_norm();

            if let (Backend::Approx(approx), Some(ks)) = (&mut self.backend, ks_used) {
                let violated = prev_y.as_ref().is_some_and(|py| {
                    step_norm > (&y - py).frobenius_norm() * (1.0 + NONEXPANSIVE_SLACK)
                });
                approx.after_step(&factors.sigma, violated);
                self.report.ks_history.push(ks);
            }

            let mut stop = step_norm / current.x.frobenius_norm().max(1.0) < cfg.xtol;
            let mut next = self.iterate_at(x_next, factors)?;
            prev_y = Some(y);

            if cfg.debias && !debiased && next.factors.rank() > 0 && self.debias_triggered(&next, step_norm)? {
                let sigma = debias(&next.factors, self.map, self.b)?;
                let mut factors = next.factors;
                factors.set_singular_values(&sigma);
                let x = factors.reconstruct();
                next = self.iterate_at(x, factors)?;
                debiased = true;
                stop = false;
                prev_y = None;
                self.report.debias_count += 1;
                prev_objective = self.objective(mu, &next);
            }

            if stop && self.use_gtol {
                stop = stopping_g(&next.factors, &next.grad, mu, cfg.gtol)?;
            }

            let objective = self.objective(mu, &next);
            if exact {
                if objective > prev_objective + 1e-12 * prev_objective.abs().max(1.0) {
                    rising += 1;
                    if rising > MAX_OBJECTIVE_INCREASES {
                        return Err(Error::SolverAbort(format!(
                            "objective increased for {rising} consecutive steps at mu = {mu:e}"
                        )));
                    }
                } else {
                    rising = 0;
                }
            }
            prev_objective = objective;

            if cfg.track_history {
                self.report.history.push(IterationRecord {
                    stage,
                    mu,
                    step_norm,
                    objective,
                    rank: next.factors.rank(),
                });
            }
            current = next;
            if stop {
                converged = true;
                break;
            }
        }

        if !converged {
            self.report.stages_at_inner_max += 1;
        }
        if cfg.track_history {
            let resid = fixed_point_residual(self.map, self.b, &current.x, cfg.tau, mu)?;
            self.report.stage_fixed_point_residuals.push(resid);
        }
        debug!(
            "stage {stage}: mu={mu:.3e} iterations={iterations} rank={} converged={converged}",
            current.factors.rank()
        );
        self.report.mu_path.push(mu);
        self.report.inner_iterations.push(iterations);
        Ok(current)
    }

    /// `‖g‖₂ / ‖X^{k+1} − X^k‖_F > trigger`; `‖g‖_F` bounds `‖g‖₂` and screens
    /// out most steps without a power iteration.
    fn debias_triggered(&self, it: &Iterate, step_norm: f64) -> Result<bool> {
        let threshold = self.cfg.debias_trigger * step_norm;
        if it.grad.frobenius_norm() <= threshold {
            return Ok(false);
        }
        Ok(spectral_norm(&it.grad, GTOL_SPECTRAL_TOL)? > threshold)
    }
}

/// `c_s = 2 r_m − 2`, at least one.
pub fn default_sample_count(m: usize, n: usize, p: usize) -> usize {
    let r_m = max_identifiable_rank(m, n, p);
    (2 * r_m).saturating_sub(2).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{EntryMask, ExplicitAffine};
    use rand::{Rng, SeedableRng};

    fn low_rank(m: usize, n: usize, r: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = DenseMatrix::from_fn(m, r, |_, _| rng.random_range(-1.0..1.0));
        let rr = DenseMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
        l.matmul(&rr.transpose())
    }

    #[test]
    fn profiles_round_trip_by_name() {
        for p in Profile::ALL {
            assert_eq!(p.name().parse::<Profile>().unwrap(), p);
            p.config().validate().unwrap();
        }
        assert!("fpc9".parse::<Profile>().is_err());
    }

    #[test]
    fn table_one_defaults() {
        let c = SolverConfig::default();
        assert_eq!(
            (c.mu_bar, c.eta_mu, c.tau, c.xtol, c.gtol, c.inner_max),
            (1e-8, 0.25, 1.0, 1e-10, 1e-4, 500)
        );
        let easy = Profile::FpcaEasy.config();
        assert_eq!((easy.mu_bar, easy.xtol, easy.tau, easy.inner_max), (1e-4, 1e-4, 2.0, 10));
    }

    #[test]
    fn prox_step_at_exact_data_only_shrinks() {
        let m = low_rank(5, 5, 5, 1);
        let map: MeasurementMap = EntryMask::full(5, 5).unwrap().into();
        let b = map.apply(&m).unwrap();
        let sv = full_svd(&m).unwrap().sigma;
        let mu = 0.5 * sv[sv.len() - 1];
        let step = prox_step(&m, &map, &b, 1.0, mu, &mut ExactSvd).unwrap();
        let got = full_svd(&step.x_next).unwrap().sigma;
        for (g, s) in got.iter().zip(&sv) {
            assert!((g - (s - mu)).abs() < 1e-10);
        }
    }

    #[test]
    fn prox_step_full_shrinkage() {
        let m = low_rank(4, 3, 2, 2);
        let map: MeasurementMap = EntryMask::full(4, 3).unwrap().into();
        let b = map.apply(&m).unwrap();
        let x = DenseMatrix::zeros(4, 3);
        let y_norm = full_svd(&m).unwrap().sigma[0];
        let step = prox_step(&x, &map, &b, 1.0, y_norm * 1.01, &mut ExactSvd).unwrap();
        assert_eq!(step.x_next, DenseMatrix::zeros(4, 3));
        assert_eq!(step.factors.rank(), 0);
    }

    #[test]
    fn scalar_problem_is_soft_threshold() {
        let map: MeasurementMap = EntryMask::full(1, 1).unwrap().into();
        for &(beta, mu) in &[(3.0, 0.5), (-2.0, 0.25), (0.1, 0.3)] {
            let b = [beta];
            // Analytic minimizer of μ|x| + ½(x − β)².
            let expect = f64::signum(beta) * (f64::abs(beta) - mu).max(0.0);
            let mut x = DenseMatrix::zeros(1, 1);
            for _ in 0..5 {
                x = prox_step(&x, &map, &b, 1.0, mu, &mut ExactSvd).unwrap().x_next;
            }
            assert!((x.get(0, 0) - expect).abs() < 1e-14, "{} vs {expect}", x.get(0, 0));
        }
    }

    #[test]
    fn stopping_x_examples() {
        let a = DenseMatrix::from_row_major(1, 2, &[0.3, 0.4]).unwrap();
        assert!(stopping_x(&a, &a, 1e-300));
        let b = DenseMatrix::from_row_major(1, 2, &[0.3, 1.4]).unwrap();
        // ‖ΔX‖ = 1, ‖X_prev‖ = 0.5, floored denominator.
        assert!((relative_change(&a, &b) - 1.0).abs() < 1e-15);
        let big = DenseMatrix::from_row_major(1, 2, &[6.0, 8.0]).unwrap();
        let near = DenseMatrix::from_row_major(1, 2, &[6.0, 8.0 + 1e-7]).unwrap();
        assert!((relative_change(&big, &near) - 1e-8).abs() < 1e-15);
        assert!(stopping_x(&big, &near, 1e-6));
        assert!(!stopping_x(&a, &b, 0.5));
    }

    #[test]
    fn stopping_g_examples() {
        let zero = SvdFactors::empty(3, 3, false);
        assert!(stopping_g(&zero, &DenseMatrix::zeros(3, 3), 1.0, 1e-4).unwrap());

        let f = full_svd(&low_rank(4, 4, 2, 3)).unwrap();
        let mu = 0.7;
        let g = f.polar_factor().scale(-mu);
        assert!(stopping_g(&f, &g, mu, 1e-4).unwrap());
        // With g = +μ U Vᵀ the certificate has norm 2.
        assert!(!stopping_g(&f, &g.scale(-1.0), mu, 1e-4).unwrap());
    }

    #[test]
    fn stopping_g_after_tight_solve() {
        let m = low_rank(8, 8, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let omega: Vec<_> = (0..8)
            .flat_map(|i| (0..8).map(move |j| (i, j)))
            .filter(|_| rng.random_bool(0.8))
            .collect();
        let map: MeasurementMap = EntryMask::new(8, 8, omega).unwrap().into();
        let b = map.apply(&m).unwrap();
        let mu = 1e-2;
        let mut x = DenseMatrix::zeros(8, 8);
        let mut factors = SvdFactors::empty(8, 8, false);
        for _ in 0..20000 {
            let step = prox_step(&x, &map, &b, 1.0, mu, &mut ExactSvd).unwrap();
            let done = stopping_x(&x, &step.x_next, 1e-12);
            x = step.x_next;
            factors = step.factors;
            if done {
                break;
            }
        }
        let g = map.gradient(&x, &b).unwrap();
        assert!(stopping_g(&factors, &g, mu, 1e-4).unwrap());
    }

    #[test]
    fn debias_recovers_true_singular_values() {
        let m = low_rank(6, 5, 2, 5);
        let f = full_svd(&m).unwrap();
        let map: MeasurementMap = EntryMask::full(6, 5).unwrap().into();
        let b = map.apply(&m).unwrap();
        let mut shrunk = f.clone();
        shrunk.sigma = f.sigma.iter().map(|s| s * 0.5).collect();
        let sigma = debias(&shrunk, &map, &b).unwrap();
        for (got, want) in sigma.iter().zip(&f.sigma) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        let zero = debias(&shrunk, &map, &vec![0.0; b.len()]).unwrap();
        assert!(zero.iter().all(|s| s.abs() < 1e-12), "{zero:?}");
        assert!(debias(&SvdFactors::empty(6, 5, false), &map, &b).unwrap().is_empty());
    }

    #[test]
    fn debias_rank_one_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = DenseMatrix::from_fn(5, 1, |_, _| rng.random_range(-1.0..1.0));
        let v = DenseMatrix::from_fn(4, 1, |_, _| rng.random_range(-1.0..1.0));
        let f = SvdFactors {
            u: u.scale(1.0 / u.frobenius_norm()),
            sigma: vec![1.0],
            v: v.scale(1.0 / v.frobenius_norm()),
            approximate: false,
        };
        let map: MeasurementMap =
            EntryMask::new(5, 4, vec![(0, 0), (1, 2), (3, 3), (4, 1), (2, 0)]).unwrap().into();
        for sign in [1.0, -1.0] {
            let b: Vec<f64> = (0..5).map(|_| sign * rng.random_range(0.5..2.0)).collect();
            let a = map.apply(&f.reconstruct()).unwrap();
            let expect = (a.dot(&b) / a.dot(&a)).max(0.0);
            let got = debias(&f, &map, &b).unwrap()[0];
            assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        }
    }

    #[test]
    fn full_mask_solve_recovers() {
        let m = low_rank(10, 10, 2, 7);
        let map: MeasurementMap = EntryMask::full(10, 10).unwrap().into();
        let b = map.apply(&m).unwrap();
        let report = fpc_solve(&map, &b, &Profile::Fpc1.config()).unwrap();
        let rel = (&report.x_opt - &m).frobenius_norm() / m.frobenius_norm();
        assert!(rel <= 1e-4, "rel.err {rel}");
        assert_eq!(*report.mu_path.last().unwrap(), 1e-8);
        assert!(report.mu_path.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(report.inner_iterations.len(), report.mu_path.len());
    }

    #[test]
    fn zero_measurements_return_zero() {
        let map: MeasurementMap = EntryMask::full(3, 3).unwrap().into();
        let report = fpc_solve(&map, &[0.0; 9], &SolverConfig::default()).unwrap();
        assert_eq!(report.x_opt, DenseMatrix::zeros(3, 3));
        assert_eq!(report.mu_path, vec![1e-8]);
        assert_eq!(report.svd_calls, 0);
    }

    #[test]
    fn tau_outside_interval_rejected() {
        let map: MeasurementMap = EntryMask::full(3, 3).unwrap().into();
        let b = vec![1.0; 9];
        let cfg = SolverConfig {
            tau: 2.0,
            ..SolverConfig::default()
        };
        assert!(matches!(fpc_solve(&map, &b, &cfg), Err(Error::InvalidArgument(_))));
        let boundary = SolverConfig {
            allow_boundary_tau: true,
            inner_max: 3,
            ..cfg
        };
        fpc_solve(&map, &b, &boundary).unwrap();
        let beyond = SolverConfig { tau: 2.5, ..boundary };
        assert!(fpc_solve(&map, &b, &beyond).is_err());
    }

    #[test]
    fn explicit_affine_solve_runs() {
        let m = low_rank(4, 4, 1, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let coeffs = DenseMatrix::from_fn(12, 16, |_, _| rng.random_range(-1.0..1.0) / 4.0);
        let map: MeasurementMap = ExplicitAffine::new(4, 4, coeffs).unwrap().into();
        let b = map.apply(&m).unwrap();
        let tau = 1.0 / map.lipschitz_bound().unwrap();
        let cfg = SolverConfig {
            tau,
            inner_max: 2000,
            ..SolverConfig::default()
        };
        let report = fpc_solve(&map, &b, &cfg).unwrap();
        assert!(report.residual_norm < 1e-4 * b.norm(), "residual {}", report.residual_norm);
    }

    #[test]
    fn single_bregman_iteration_matches_fpc() {
        let m = low_rank(8, 8, 1, 11);
        let mask = EntryMask::new(8, 8, (0..8).flat_map(|i| (0..8).filter(move |j| (i + j) % 3 != 0).map(move |j| (i, j))).collect()).unwrap();
        let map: MeasurementMap = mask.into();
        let b = map.apply(&m).unwrap();
        let cfg = SolverConfig {
            bregman_outer: 1,
            ..Profile::Fpc2.config()
        };
        let one = bregman_solve(&map, &b, &cfg).unwrap();
        let plain = fpc_solve(&map, &b, &cfg).unwrap();
        assert_eq!(one.x_opt, plain.x_opt);
        assert!(bregman_solve(&map, &b, &SolverConfig { bregman_outer: 0, ..cfg }).is_err());
    }

    #[test]
    fn bregman_is_stationary_on_exact_fit() {
        // Full mask and tiny μ̄: the inner solve interpolates b, so b² = b.
        let m = low_rank(5, 5, 5, 12);
        let map: MeasurementMap = EntryMask::full(5, 5).unwrap().into();
        let b = map.apply(&m).unwrap();
        let cfg = SolverConfig {
            bregman_outer: 3,
            ..Profile::Fpc1.config()
        };
        let report = bregman_solve(&map, &b, &cfg).unwrap();
        let first = report.bregman_residuals[0];
        assert!(first < 1e-6);
        for w in report.bregman_residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn approximate_mode_records_ranks() {
        let m = low_rank(20, 20, 2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let omega: Vec<_> = (0..20)
            .flat_map(|i| (0..20).map(move |j| (i, j)))
            .filter(|_| rng.random_bool(0.6))
            .collect();
        let map: MeasurementMap = EntryMask::new(20, 20, omega).unwrap().into();
        let b = map.apply(&m).unwrap();
        let report = fpc_solve(&map, &b, &Profile::Fpca.config()).unwrap();
        assert_eq!(report.ks_history.len(), report.svd_calls);
        let again = fpc_solve(&map, &b, &Profile::Fpca.config()).unwrap();
        assert_eq!(report.x_opt, again.x_opt);
        let rel = (&report.x_opt - &m).frobenius_norm() / m.frobenius_norm();
        assert!(rel < 1e-3, "rel.err {rel}");
    }

    #[test]
    fn default_sample_count_formula() {
        // r_m = 11 for m = n = 40, p = 800.
        assert_eq!(default_sample_count(40, 40, 800), 20);
        assert_eq!(default_sample_count(3, 3, 1), 1);
    }
}
