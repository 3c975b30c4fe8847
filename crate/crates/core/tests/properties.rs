mod common;

use common::*;
use nucnorm::cli::matrix_io::{parse_coordinate, CoordinateData};
use nucnorm::linalg::{shrink_matrix, shrink_vector};
use nucnorm::operators::{EntryMask, ExplicitAffine, MeasurementMap};
use nucnorm::problems::{freedom_stats, max_identifiable_rank, rows_from_csv, rows_to_csv, BenchmarkRow};
use nucnorm::solvers::{prox_step, ExactSvd};
use nucnorm::DenseMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mask(rng: &mut ChaCha8Rng, m: usize, n: usize) -> EntryMask {
    let p = rng.random_range(1..=m * n);
    let omega = rand::seq::index::sample(rng, m * n, p)
        .iter()
        .map(|k| (k / n, k % n))
        .collect();
    EntryMask::new(m, n, omega).unwrap()
}

fn random_map(rng: &mut ChaCha8Rng, m: usize, n: usize, affine: bool) -> MeasurementMap {
    if affine {
        let p = rng.random_range(1..=2 * m * n);
        ExplicitAffine::new(m, n, gaussian(rng, p, m * n)).unwrap().into()
    } else {
        random_mask(rng, m, n).into()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shrink_vector_is_soft_threshold(x in prop::collection::vec(0.0..5.0f64, 0..20), nu in 0.0..3.0f64) {
        let out = shrink_vector(&x, nu).unwrap();
        prop_assert_eq!(out.len(), x.len());
        for (a, b) in x.iter().zip(&out) {
            prop_assert!((*b - (a - nu).max(0.0)).abs() <= 1e-15);
        }
        prop_assert!(shrink_vector(&[-1.0], nu).is_err());
    }

    #[test]
    fn shrinkage_is_nonexpansive(seed in any::<u64>(), m in 1usize..7, n in 1usize..7, nu in 0.01..2.0f64, scale in 1e-4..3.0f64) {
        let mut r = rng(seed);
        let y1 = gaussian(&mut r, m, n);
        let y2 = &y1 + &gaussian(&mut r, m, n).scale(scale);
        let (x1, _) = shrink_matrix(&y1, nu).unwrap();
        let (x2, _) = shrink_matrix(&y2, nu).unwrap();
        prop_assert!((&x1 - &x2).frobenius_norm() <= (&y1 - &y2).frobenius_norm() + 1e-10);
    }

    #[test]
    fn shrinkage_spectrum_rule(seed in any::<u64>(), m in 1usize..8, n in 1usize..8, frac in 0.0..1.2f64) {
        let mut r = rng(seed);
        let y = gaussian(&mut r, m, n);
        let sv = singular_values(&y);
        let nu = frac * sv[0] + 1e-6;
        let (x, factors) = shrink_matrix(&y, nu).unwrap();
        let got = singular_values(&x);
        for (s, g) in sv.iter().zip(&got) {
            prop_assert!(((s - nu).max(0.0) - g).abs() <= 1e-10 * sv[0].max(1.0));
        }
        prop_assert!(factors.sigma.iter().all(|&s| s > 0.0));
        prop_assert_eq!(factors.rank(), sv.iter().filter(|&&s| s > nu).count());
    }

    #[test]
    fn adjoint_identity(seed in any::<u64>(), m in 1usize..7, n in 1usize..7, affine in any::<bool>()) {
        let mut r = rng(seed);
        let map = random_map(&mut r, m, n, affine);
        let x = gaussian(&mut r, m, n);
        let y: Vec<f64> = (0..map.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let ax = map.apply(&x).unwrap();
        let aty = map.adjoint(&y).unwrap();
        let scale = ax.norm() * y.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((ax.dot(&y) - x.dot(&aty)).abs() <= 1e-10 * scale.max(1e-300));
    }

    #[test]
    fn mask_is_coisometry(seed in any::<u64>(), m in 1usize..9, n in 1usize..9) {
        let mut r = rng(seed);
        let map: MeasurementMap = random_mask(&mut r, m, n).into();
        let y: Vec<f64> = (0..map.len()).map(|_| r.random_range(-3.0..3.0)).collect();
        let back = map.apply(&map.adjoint(&y).unwrap()).unwrap();
        prop_assert_eq!(&back[..], &y[..]);
    }

    #[test]
    fn gradient_step_nonexpansive(seed in any::<u64>(), m in 1usize..6, n in 1usize..6, affine in any::<bool>(), frac in 0.05..1.0f64) {
        let mut r = rng(seed);
        let map = random_map(&mut r, m, n, affine);
        let tau = frac * 2.0 / map.lipschitz_bound().unwrap();
        let b: Vec<f64> = (0..map.len()).map(|_| r.random_range(-2.0..2.0)).collect();
        let x1 = gaussian(&mut r, m, n);
        let x2 = gaussian(&mut r, m, n);
        let h = |x: &DenseMatrix| {
            let mut y = x.clone();
            y.axpy(-tau, &map.gradient(x, &b).unwrap());
            y
        };
        prop_assert!((&h(&x1) - &h(&x2)).frobenius_norm() <= (&x1 - &x2).frobenius_norm() * (1.0 + 1e-9));
    }

    #[test]
    fn prox_step_nonexpansive(seed in any::<u64>(), m in 1usize..6, n in 1usize..6, mu in 0.01..1.0f64) {
        let mut r = rng(seed);
        let map: MeasurementMap = random_mask(&mut r, m, n).into();
        let b: Vec<f64> = (0..map.len()).map(|_| r.random_range(-2.0..2.0)).collect();
        let x1 = gaussian(&mut r, m, n);
        let x2 = gaussian(&mut r, m, n);
        let s1 = prox_step(&x1, &map, &b, 1.0, mu, &mut ExactSvd).unwrap();
        let s2 = prox_step(&x2, &map, &b, 1.0, mu, &mut ExactSvd).unwrap();
        prop_assert!((&s1.x_next - &s2.x_next).frobenius_norm() <= (&x1 - &x2).frobenius_norm() + 1e-10);
    }

    #[test]
    fn freedom_ratio_matches_identifiable_rank(m in 1usize..60, n in 1usize..60, r in 1usize..30, pfrac in 0.01..1.0f64) {
        let p = ((pfrac * (m * n) as f64).ceil() as usize).max(1);
        let stats = freedom_stats(m, n, p, r).unwrap();
        let r_m = max_identifiable_rank(m, n, p);
        prop_assert_eq!(stats.r_m, r_m);
        if r <= m.min(n) {
            // Away from exact ties the two statements agree.
            if (stats.fr - 1.0).abs() > 1e-9 {
                prop_assert_eq!(stats.fr <= 1.0, r <= r_m, "m={} n={} p={} r={} fr={}", m, n, p, r, stats.fr);
            }
        }
    }

    #[test]
    fn benchmark_csv_round_trip(
        r in 1usize..50,
        fr in 0.0..2.0f64,
        ns in 0usize..100,
        vals in prop::collection::vec(prop::option::of(1e-16..1e3f64), 4),
    ) {
        let row = BenchmarkRow { r, fr, ns, at: vals[0], ra: vals[1], ru: vals[2], rl: vals[3] };
        let back = rows_from_csv(&rows_to_csv(std::slice::from_ref(&row))).unwrap();
        prop_assert_eq!(back, vec![row]);
    }

    #[test]
    fn coordinate_text_round_trip(seed in any::<u64>(), m in 1usize..8, n in 1usize..8) {
        let mut r = rng(seed);
        let mask = random_mask(&mut r, m, n);
        let b: Vec<f64> = (0..mask.omega().len()).map(|_| r.random_range(-1e6..1e6) * 10f64.powi(r.random_range(-300..300))).collect();
        let data = CoordinateData::from_measurements(&mask, &b).unwrap();
        let back = parse_coordinate(&data.to_text(), Path::new("<memory>")).unwrap();
        prop_assert_eq!(back, data);
    }
}
