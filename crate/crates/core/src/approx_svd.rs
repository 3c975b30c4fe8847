//! Linear-time Monte Carlo SVD by column sampling, plus the adaptive rank
//! policy used by the approximate-SVD solver.
//!
//! `c_s` columns of `A` are drawn with replacement according to `p`, each
//! rescaled by `1/sqrt(c_s p_i)` to form `C`. The top `k_s` right singular
//! vectors `y_t` of `C` give `h_t = C y_t / σ_t(C)`, and
//! `A ≈ H Diag(σ) (Aᵀ H Diag(1/σ))ᵀ`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{thin_svd, DenseMatrix, SvdFactors, RANK_THRESHOLD};

/// Consecutive violations tolerated before the target rank is bumped.
pub const VIOLATION_LIMIT: usize = 10;

/// How column sampling probabilities are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ColumnSampling {
    /// `p_i = 1/n`.
    #[default]
    Uniform,
    /// `p_i ∝ ‖A^{(i)}‖²`.
    ColumnNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxSvdConfig {
    pub c_s: usize,
    pub k_s: usize,
    pub probabilities: Vec<f64>,
    pub seed: u64,
}

impl ApproxSvdConfig {
    pub fn uniform(n: usize, c_s: usize, k_s: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix has no columns"));
        }
        ApproxSvdConfig {
            c_s,
            k_s,
            probabilities: vec![1.0 / n as f64; n],
            seed,
        }
        .validated()
    }

    /// Probabilities proportional to squared column norms of `a`.
    pub fn column_norm(a: &DenseMatrix, c_s: usize, k_s: usize, seed: u64) -> Result<Self> {
        let norms: Vec<f64> = (0..a.cols())
            .map(|j| a.as_nalgebra().column(j).norm_squared())
            .collect();
        let total: f64 = norms.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("column-norm sampling of a zero matrix"));
        }
        ApproxSvdConfig {
            c_s,
            k_s,
            probabilities: norms.iter().map(|v| v / total).collect(),
            seed,
        }
        .validated()
    }

    pub fn for_matrix(
        a: &DenseMatrix,
        sampling: ColumnSampling,
        c_s: usize,
        k_s: usize,
        seed: u64,
    ) -> Result<Self> {
        match sampling {
            ColumnSampling::Uniform => ApproxSvdConfig::uniform(a.cols(), c_s, k_s, seed),
            ColumnSampling::ColumnNorm => ApproxSvdConfig::column_norm(a, c_s, k_s, seed),
        }
    }

    pub fn validated(self) -> Result<Self> {
        let n = self.probabilities.len();
        if !(1 <= self.k_s && self.k_s <= self.c_s && self.c_s <= n) {
            return Err(Error::invalid(format!(
                "need 1 <= k_s <= c_s <= n, got k_s={}, c_s={}, n={n}",
                self.k_s, self.c_s
            )));
        }
        if self.probabilities.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("sampling probabilities must be nonnegative"));
        }
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("sampling probabilities sum to {sum}")));
        }
        Ok(self)
    }
}

/// Draws the `c_s` column indices for `cfg`, with replacement.
pub fn sample_columns(cfg: &ApproxSvdConfig) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.probabilities.len();
    let first = cfg.probabilities[0];
    if cfg.probabilities.iter().all(|&p| p == first) {
        return Ok((0..cfg.c_s).map(|_| rng.random_range(0..n)).collect());
    }
    let dist = WeightedIndex::new(&cfg.probabilities)
        .map_err(|e| Error::invalid(format!("sampling probabilities: {e}")))?;
    Ok((0..cfg.c_s).map(|_| dist.sample(&mut rng)).collect())
}

/// Monte Carlo approximate SVD. Returns `approximate = true` factors with at
/// most `k_s` triplets; the factorization is empty when every sampled column
/// is zero.
pub fn linear_time_svd(a: &DenseMatrix, cfg: &ApproxSvdConfig) -> Result<SvdFactors> {
    if cfg.probabilities.len() != a.cols() {
        return Err(Error::shape(
            format!("{} sampling probabilities", a.cols()),
            format!("{}", cfg.probabilities.len()),
        ));
    }
    a.ensure_finite("approximate SVD input")?;
    let indices = sample_columns(cfg)?;
    linear_time_svd_from_indices(a, &indices, &cfg.probabilities, cfg.k_s)
}

/// The deterministic part of [`linear_time_svd`], given the sampled columns.
pub fn linear_time_svd_from_indices(
    a: &DenseMatrix,
    indices: &[usize],
    probabilities: &[f64],
    k_s: usize,
) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    let c_s = indices.len();
    if c_s == 0 || k_s == 0 || k_s > c_s {
        return Err(Error::invalid("need 1 <= k_s <= number of sampled columns"));
    }
    for &i in indices {
        if i >= n || !(probabilities[i] > 0.0) {
            return Err(Error::invalid(format!("sampled column {i} has zero probability")));
        }
    }
    // A column drawn t times contributes t copies of A⁽ⁱ⁾/sqrt(c p_i) to C;
    // one copy scaled by sqrt(t) leaves CCᵀ, and so H and σ, unchanged.
    // Exact duplicates also trip up the SVD, so they are merged.
    let mut distinct: Vec<(usize, usize)> = Vec::new();
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    for i in sorted {
        match distinct.last_mut() {
            Some((j, t)) if *j == i => *t += 1,
            _ => distinct.push((i, 1)),
        }
    }
    let src = a.as_nalgebra();
    let mut c = nalgebra::DMatrix::<f64>::zeros(m, distinct.len());
    for (col, &(i, t)) in distinct.iter().enumerate() {
        let scale = (t as f64 / (c_s as f64 * probabilities[i])).sqrt();
        c.column_mut(col).copy_from(&(src.column(i) * scale));
    }

    // Right singular vectors of C are the eigenvectors of CᵀC; taking them
    // from the SVD of C avoids squaring the condition number.
    let (_, sigma_c, v_c) = thin_svd(&c)?;
    let top = sigma_c.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Ok(SvdFactors::empty(m, n, true));
    }
    let k_eff = sigma_c
        .iter()
        .take(k_s)
        .take_while(|&&s| s >= RANK_THRESHOLD * top)
        .count();

    let mut h = nalgebra::DMatrix::<f64>::zeros(m, k_eff);
    for t in 0..k_eff {
        h.column_mut(t).copy_from(&((&c * v_c.column(t)) / sigma_c[t]));
    }
    // V = Aᵀ H Diag(1/σ).
    let mut v = src.tr_mul(&h);
    for t in 0..k_eff {
        v.column_mut(t).scale_mut(1.0 / sigma_c[t]);
    }
    Ok(SvdFactors {
        u: DenseMatrix::from_nalgebra(h),
        sigma: sigma_c[..k_eff].to_vec(),
        v: DenseMatrix::from_nalgebra(v),
        approximate: true,
    })
}

/// Number of entries of `prev_shrunk_sigma` that are at least
/// `epsilon_ks · max`; one when the sequence is empty or all zero.
pub fn adaptive_rank(prev_shrunk_sigma: &[f64], epsilon_ks: f64) -> usize {
    let top = prev_shrunk_sigma.iter().copied().fold(0.0_f64, f64::max);
    if !(top > 0.0) {
        return 1;
    }
    let threshold = epsilon_ks * top;
    prev_shrunk_sigma.iter().filter(|&&s| s >= threshold).count().max(1)
}

/// Target rank state for the approximate solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankController {
    pub current_ks: usize,
    pub epsilon_ks: f64,
    pub violation_count: usize,
    pub violation_limit: usize,
    /// Upper clamp on `current_ks` (the number of sampled columns).
    pub max_ks: usize,
}

impl RankController {
    pub fn new(initial_ks: usize, epsilon_ks: f64, max_ks: usize) -> Self {
        let max_ks = max_ks.max(1);
        RankController {
            current_ks: initial_ks.clamp(1, max_ks),
            epsilon_ks,
            violation_count: 0,
            violation_limit: VIOLATION_LIMIT,
            max_ks,
        }
    }

    /// Resets the target rank from the latest shrunk spectrum.
    pub fn adapt(mut self, shrunk_sigma: &[f64]) -> Self {
        self.current_ks = adaptive_rank(shrunk_sigma, self.epsilon_ks).clamp(1, self.max_ks);
        self
    }
}

/// Counts a non-expansiveness violation; every `violation_limit`-th one
/// raises the target rank by one and clears the counter.
pub fn record_step(mut ctrl: RankController, expansion_violated: bool) -> RankController {
    if !expansion_violated {
        return ctrl;
    }
    ctrl.violation_count += 1;
    if ctrl.violation_count >= ctrl.violation_limit {
        ctrl.current_ks = (ctrl.current_ks + 1).min(ctrl.max_ks);
        ctrl.violation_count = 0;
    }
    ctrl
}
