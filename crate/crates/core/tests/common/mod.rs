#![allow(dead_code)]

use nalgebra::DMatrix;
use nucnorm::DenseMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m, n, |_, _| StandardNormal.sample(rng))
}

pub fn low_rank(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize) -> DenseMatrix {
    gaussian(rng, m, r).matmul(&gaussian(rng, n, r).transpose())
}

/// All `min(m, n)` singular values, descending, from nalgebra's values-only
/// SVD (no singular vectors are accumulated on this path).
pub fn singular_values(x: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = x.as_nalgebra().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub fn nuclear_norm(x: &DenseMatrix) -> f64 {
    singular_values(x).iter().sum()
}

/// `S_ν(Y)` as `Y V Diag(max(1 − ν/σ, 0)) Vᵀ` from the eigendecomposition of
/// `YᵀY`. Independent of any SVD routine.
pub fn soft_threshold_oracle(y: &DenseMatrix, nu: f64) -> DenseMatrix {
    let a = y.as_nalgebra();
    let eig = (a.transpose() * a).symmetric_eigen();
    let gain = eig.eigenvalues.map(|l| {
        let s = l.max(0.0).sqrt();
        if s > nu {
            1.0 - nu / s
        } else {
            0.0
        }
    });
    let v = &eig.eigenvectors;
    DenseMatrix::from_nalgebra(a * v * DMatrix::from_diagonal(&gain) * v.transpose())
}

pub fn random_dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> (usize, usize) {
    (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Rank-`r` image with entries in `[0, 1]`: an average of `r` separable
/// products of sinusoids (or, for larger `r`, geometrically decaying ones).
pub fn smooth_low_rank_image(height: usize, width: usize, r: usize) -> DenseMatrix {
    let mut total = DenseMatrix::zeros(height, width);
    let mut weight_sum = 0.0;
    for k in 0..r {
        let w = 0.85_f64.powi(k as i32);
        weight_sum += w;
        let fk = 1.0 + k as f64;
        let a = |i: usize| 0.5 + 0.5 * (std::f64::consts::TAU * fk * i as f64 / height as f64 + 0.7 * fk).sin();
        let b = |j: usize| 0.5 + 0.5 * (std::f64::consts::TAU * (fk + 0.5) * j as f64 / width as f64 + 1.3 * fk).cos();
        let term = DenseMatrix::from_fn(height, width, |i, j| w * a(i) * b(j));
        total = &total + &term;
    }
    total.scale(1.0 / weight_sum)
}
