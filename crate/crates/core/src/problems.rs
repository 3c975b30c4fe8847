//! Random matrix completion instances, recovery metrics and the benchmark
//! harness.
//!
//! Seeds: a trial's instance seed is `base_seed ^ (cell << 32) ^ trial`, fed
//! to ChaCha20 through `seed_from_u64`. The solver's column sampler is seeded
//! with the instance seed mixed by [`solver_seed`]. Tables are reproducible
//! across machines for a given build; regenerating the same matrices in
//! another implementation is not a goal.

use std::time::Instant;

use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{full_svd, DenseMatrix};
use crate::operators::{EntryMask, MeasurementMap, MeasurementVector};
use crate::solvers::{solve, SolverConfig};

/// Relative error below which an instance counts as recovered.
pub const RECOVERY_THRESHOLD: f64 = 1e-3;
/// Relative singular value threshold for the generated-rank check.
const RANK_CHECK: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub m: DenseMatrix,
    pub omega: Vec<(usize, usize)>,
    pub b: MeasurementVector,
    pub rank: usize,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn map(&self) -> Result<MeasurementMap> {
        Ok(EntryMask::new(self.m.rows(), self.m.cols(), self.omega.clone())?.into())
    }
}

/// `M = M_L M_Rᵀ` with i.i.d. standard normal factors and `p` entries sampled
/// uniformly without replacement.
pub fn gen_instance(m: usize, n: usize, r: usize, p: usize, seed: u64) -> Result<ProblemInstance> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("matrix dimensions must be positive"));
    }
    if r == 0 || r > m.min(n) {
        return Err(Error::invalid(format!("rank {r} out of range for {m}x{n}")));
    }
    if p == 0 || p > m * n {
        return Err(Error::invalid(format!("sample count {p} out of range for {m}x{n}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let left = DenseMatrix::from_fn(m, r, |_, _| normal());
    let right = DenseMatrix::from_fn(n, r, |_, _| normal());
    let truth = left.matmul(&right.transpose());

    let sigma = full_svd(&truth)?.sigma;
    let numerical_rank = sigma.iter().filter(|&&s| s > RANK_CHECK * sigma[0]).count();
    if numerical_rank != r {
        return Err(Error::invalid(format!(
            "generated matrix has rank {numerical_rank}, expected {r}"
        )));
    }

    let mut linear: Vec<usize> = sample(&mut rng, m * n, p).into_vec();
    linear.sort_unstable();
    let omega: Vec<(usize, usize)> = linear.into_iter().map(|k| (k / n, k % n)).collect();
    let b = MeasurementVector::new(omega.iter().map(|&(i, j)| truth.get(i, j)).collect())?;
    Ok(ProblemInstance {
        m: truth,
        omega,
        b,
        rank: r,
        seed,
    })
}

/// `‖X − M‖_F / ‖M‖_F`.
pub fn rel_error(x: &DenseMatrix, m: &DenseMatrix) -> Result<f64> {
    if x.shape() != m.shape() {
        return Err(Error::shape(format!("{:?}", m.shape()), format!("{:?}", x.shape())));
    }
    let denom = m.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::invalid("relative error against a zero matrix"));
    }
    Ok((x - m).frobenius_norm() / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FreedomStats {
    /// Sampling ratio `p / (mn)`.
    pub sr: f64,
    /// Freedom ratio `r (m + n − r) / p`.
    pub fr: f64,
    /// Largest rank with `FR ≤ 1`.
    pub r_m: usize,
}

pub fn freedom_stats(m: usize, n: usize, p: usize, r: usize) -> Result<FreedomStats> {
    if p == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let (mf, nf, pf, rf) = (m as f64, n as f64, p as f64, r as f64);
    Ok(FreedomStats {
        sr: pf / (mf * nf),
        fr: rf * (mf + nf - rf) / pf,
        r_m: max_identifiable_rank(m, n, p),
    })
}

/// `r_m = ⌊(m + n − sqrt((m + n)² − 4p)) / 2⌋`.
pub fn max_identifiable_rank(m: usize, n: usize, p: usize) -> usize {
    let s = (m + n) as f64;
    let disc = (s * s - 4.0 * p as f64).max(0.0);
    ((s - disc.sqrt()) / 2.0).floor() as usize
}

/// Normalized mean absolute error over two withheld ratings per user:
/// `MAE = (1/2N) Σ |Δ₁| + |Δ₂|`, `NMAE = MAE / (r_max − r_min)`.
pub fn nmae(
    predicted: &[(f64, f64)],
    withheld: &[(f64, f64)],
    r_min: f64,
    r_max: f64,
) -> Result<f64> {
    if !(r_max > r_min) {
        return Err(Error::invalid("rating range must satisfy r_max > r_min"));
    }
    if predicted.len() != withheld.len() {
        return Err(Error::shape(
            format!("{} withheld pairs", withheld.len()),
            format!("{} predicted pairs", predicted.len()),
        ));
    }
    if withheld.is_empty() {
        return Err(Error::invalid("no withheld ratings"));
    }
    let total: f64 = predicted
        .iter()
        .zip(withheld)
        .map(|(p, w)| (p.0 - w.0).abs() + (p.1 - w.1).abs())
        .sum();
    let mae = total / (2.0 * withheld.len() as f64);
    Ok(mae / (r_max - r_min))
}

/// One benchmark cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub p: usize,
}

/// Outcome of one benchmark trial.
#[derive(Clone, Debug, Serialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub rel_err: Option<f64>,
    pub seconds: f64,
    pub recovered: bool,
    pub aborted: Option<String>,
    pub stages_at_inner_max: usize,
}

/// Aggregated results for one cell. The timing and error columns are absent
/// when nothing was recovered.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub r: usize,
    pub fr: f64,
    pub ns: usize,
    pub at: Option<f64>,
    pub ra: Option<f64>,
    pub ru: Option<f64>,
    pub rl: Option<f64>,
}

impl BenchmarkRow {
    pub const CSV_HEADER: &'static str = "r,FR,NS,AT,RA,RU,RL";

    pub fn from_outcomes(cell: &GridCell, outcomes: &[TrialOutcome]) -> Result<Self> {
        let fr = freedom_stats(cell.m, cell.n, cell.p, cell.r)?.fr;
        let recovered: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.recovered).collect();
        let ns = recovered.len();
        let errs: Vec<f64> = recovered.iter().filter_map(|o| o.rel_err).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (at, ra, ru, rl) = if ns == 0 {
            (None, None, None, None)
        } else {
            let times: Vec<f64> = recovered.iter().map(|o| o.seconds).collect();
            (
                Some(mean(&times)),
                Some(mean(&errs)),
                errs.iter().copied().reduce(f64::max),
                errs.iter().copied().reduce(f64::min),
            )
        };
        Ok(BenchmarkRow { r: cell.r, fr, ns, at, ra, ru, rl })
    }

    /// Fields in [`Self::CSV_HEADER`] order; missing values are empty.
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.r,
            self.fr,
            self.ns,
            opt(self.at),
            opt(self.ra),
            opt(self.ru),
            opt(self.rl)
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 7 {
            return Err(Error::invalid(format!("expected 7 fields, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad number '{s}': {e}")))
        };
        let int = |s: &str| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad integer '{s}': {e}")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        Ok(BenchmarkRow {
            r: int(fields[0])?,
            fr: num(fields[1])?,
            ns: int(fields[2])?,
            at: opt(fields[3])?,
            ra: opt(fields[4])?,
            ru: opt(fields[5])?,
            rl: opt(fields[6])?,
        })
    }

    /// Equality ignoring the timing column.
    pub fn same_statistics(&self, other: &BenchmarkRow) -> bool {
        (self.r, self.fr, self.ns, self.ra, self.ru, self.rl)
            == (other.r, other.fr, other.ns, other.ra, other.ru, other.rl)
    }
}

pub fn rows_to_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from(BenchmarkRow::CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<BenchmarkRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == BenchmarkRow::CSV_HEADER => {}
        _ => return Err(Error::invalid("missing benchmark CSV header")),
    }
    lines.map(BenchmarkRow::parse_csv_line).collect()
}

/// Instance seed of trial `trial` in grid cell `cell`.
pub fn trial_seed(base_seed: u64, cell: usize, trial: usize) -> u64 {
    base_seed ^ ((cell as u64) << 32) ^ trial as u64
}

/// Sampler seed for the solver run on an instance.
pub fn solver_seed(instance_seed: u64) -> u64 {
    instance_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17) ^ 0xD1B5_4A32_D192_ED03
}

/// Generates and solves one trial.
pub fn run_trial(cell: &GridCell, config: &SolverConfig, seed: u64) -> Result<TrialOutcome> {
    let instance = gen_instance(cell.m, cell.n, cell.r, cell.p, seed)?;
    let map = instance.map()?;
    let cfg = SolverConfig {
        seed: solver_seed(seed),
        ..config.clone()
    };
    let start = Instant::now();
    match solve(&map, &instance.b, &cfg) {
        Ok(report) => {
            let seconds = start.elapsed().as_secs_f64();
            let err = rel_error(&report.x_opt, &instance.m)?;
            Ok(TrialOutcome {
                seed,
                rel_err: Some(err),
                seconds,
                recovered: err < RECOVERY_THRESHOLD,
                aborted: None,
                stages_at_inner_max: report.stages_at_inner_max,
            })
        }
        Err(e @ (Error::SolverAbort(_) | Error::SvdFailed(_))) => {
            warn!("trial seed {seed} aborted: {e}");
            Ok(TrialOutcome {
                seed,
                rel_err: None,
                seconds: start.elapsed().as_secs_f64(),
                recovered: false,
                aborted: Some(e.to_string()),
                stages_at_inner_max: 0,
            })
        }
        Err(e) => Err(e),
    }
}

/// Runs every cell of `grid` for `trials` seeded instances. Trials run in
/// parallel on the current rayon pool; results are folded in trial order.
pub fn run_benchmark(
    grid: &[GridCell],
    trials: usize,
    config: &SolverConfig,
    base_seed: u64,
) -> Result<Vec<BenchmarkRow>> {
    Ok(run_benchmark_detailed(grid, trials, config, base_seed)?
        .into_iter()
        .map(|(row, _)| row)
        .collect())
}

/// Like [`run_benchmark`] but also returns each cell's trial outcomes.
pub fn run_benchmark_detailed(
    grid: &[GridCell],
    trials: usize,
    config: &SolverConfig,
    base_seed: u64,
) -> Result<Vec<(BenchmarkRow, Vec<TrialOutcome>)>> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (idx, cell) in grid.iter().enumerate() {
        let outcomes: Vec<TrialOutcome> = (0..trials)
            .into_par_iter()
            .map(|t| run_trial(cell, config, trial_seed(base_seed, idx, t)))
            .collect::<Result<_>>()?;
        let row = BenchmarkRow::from_outcomes(cell, &outcomes)?;
        let capped = outcomes.iter().filter(|o| o.stages_at_inner_max > 0).count();
        let aborted = outcomes.iter().filter(|o| o.aborted.is_some()).count();
        info!(
            "cell m={} n={} r={} p={}: NS={}/{} aborted={} hit_inner_max={}",
            cell.m, cell.n, cell.r, cell.p, row.ns, trials, aborted, capped
        );
        rows.push((row, outcomes));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::Profile;

    #[test]
    fn instance_is_consistent() {
        let inst = gen_instance(12, 9, 3, 60, 5).unwrap();
        assert_eq!(inst.omega.len(), 60);
        assert_eq!(inst.b.len(), 60);
        let mut sorted = inst.omega.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 60);
        for (t, &(i, j)) in inst.omega.iter().enumerate() {
            assert_eq!(inst.b[t], inst.m.get(i, j));
        }
        let again = gen_instance(12, 9, 3, 60, 5).unwrap();
        assert_eq!(again.m, inst.m);
        assert_eq!(again.omega, inst.omega);
    }

    #[test]
    fn full_rank_and_full_sampling() {
        let inst = gen_instance(5, 4, 4, 20, 1).unwrap();
        assert_eq!(full_svd(&inst.m).unwrap().rank(), 4);
        assert_eq!(inst.b.to_vec(), inst.m.to_row_major());
    }

    #[test]
    fn instance_errors() {
        assert!(gen_instance(4, 4, 5, 8, 0).is_err());
        assert!(gen_instance(4, 4, 2, 17, 0).is_err());
        assert!(gen_instance(4, 4, 0, 8, 0).is_err());
    }

    #[test]
    fn rel_error_examples() {
        let m = DenseMatrix::from_row_major(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(rel_error(&m, &m).unwrap(), 0.0);
        assert_eq!(rel_error(&DenseMatrix::zeros(2, 2), &m).unwrap(), 1.0);
        assert!((rel_error(&m.scale(1.001), &m).unwrap() - 1e-3).abs() < 1e-12);
        assert!(rel_error(&m, &DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn freedom_stats_examples() {
        let s = freedom_stats(40, 40, 800, 3).unwrap();
        assert_eq!(s.sr, 0.5);
        assert_eq!(format!("{:.4}", s.fr), "0.2888");
        assert_eq!(s.r_m, 11);
        let t = freedom_stats(100, 100, 2000, 1).unwrap();
        assert_eq!(t.sr, 0.2);
        assert_eq!(format!("{:.4}", t.fr), "0.0995");
        assert!(freedom_stats(4, 4, 0, 1).is_err());
    }

    #[test]
    fn nmae_examples() {
        let w = [(1.0, 2.0), (-3.0, 4.0)];
        assert_eq!(nmae(&w, &w, -10.0, 10.0).unwrap(), 0.0);
        let off: Vec<_> = w.iter().map(|&(a, b)| (a + 2.0, b - 2.0)).collect();
        assert!((nmae(&off, &w, -10.0, 10.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((nmae(&[(5.0, -4.0)], &[(3.0, -4.0)], -10.0, 10.0).unwrap() - 0.05).abs() < 1e-15);
        assert!(nmae(&w, &w, 1.0, 1.0).is_err());
        assert!(nmae(&w[..1], &w, -1.0, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            BenchmarkRow { r: 1, fr: 0.0987_5, ns: 3, at: Some(0.125), ra: Some(1.5e-9), ru: Some(3e-9), rl: Some(1e-10) },
            BenchmarkRow { r: 11, fr: 0.94875, ns: 0, at: None, ra: None, ru: None, rl: None },
        ];
        let text = rows_to_csv(&rows);
        assert!(text.starts_with("r,FR,NS,AT,RA,RU,RL\n"));
        assert_eq!(rows_from_csv(&text).unwrap(), rows);
    }

    #[test]
    fn fully_observed_single_trial() {
        let cell = GridCell { m: 8, n: 8, r: 2, p: 64 };
        let rows = run_benchmark_detailed(&[cell], 1, &Profile::Fpc1.config(), 3).unwrap();
        let (row, outcomes) = &rows[0];
        assert_eq!(row.ns, 1);
        let err = outcomes[0].rel_err.unwrap();
        assert_eq!((row.ra, row.ru, row.rl), (Some(err), Some(err), Some(err)));
        assert!(row.rl <= row.ra && row.ra <= row.ru);
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for cell in 0..10 {
            for trial in 0..50 {
                assert!(seen.insert(trial_seed(7, cell, trial)));
            }
        }
    }
}
