mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdtr::numopt::{minimize, solve_wls, MinimizeOptions, WlsProblem};
use sdtr::Error;

fn random_problem(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let z = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let w = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
    let u = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    (z, w, u)
}

#[test]
fn wls_matches_extended_precision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..5 {
        let (z, w, u) = random_problem(&mut rng, 20, 3);
        let oracle = common::normal_equations_oracle(&z, &w, &u);
        let fit = solve_wls(&WlsProblem::new(z, w, u).unwrap()).unwrap();
        let err = common::max_abs_diff(&fit, &oracle);
        assert!(err < 1e-10, "{fit:?} vs {oracle:?}");
    }
}

#[test]
fn wls_small_examples() {
    let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let fit = solve_wls(&WlsProblem::new(id, vec![1.0, 1.0], vec![4.0, -2.0]).unwrap()).unwrap();
    assert_eq!(fit, [4.0, -2.0]);

    let z = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    let fit = solve_wls(&WlsProblem::new(z, vec![1.0, 1.0, 0.0], vec![2.0, 3.0, 100.0]).unwrap()).unwrap();
    assert!(common::max_abs_diff(&fit, &[2.0, 3.0]) < 1e-14);
}

#[test]
fn wls_residuals_are_weight_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (z, w, u) = random_problem(&mut rng, 200, 6);
    let fit = solve_wls(&WlsProblem::new(z.clone(), w.clone(), u.clone()).unwrap()).unwrap();
    let scale = u.iter().map(|x| x.abs()).fold(0.0, f64::max) * z.len() as f64;
    for c in 0..6 {
        let s: f64 = (0..z.len())
            .map(|i| {
                let r = u[i] - z[i].iter().zip(&fit).map(|(a, b)| a * b).sum::<f64>();
                z[i][c] * w[i] * r
            })
            .sum();
        assert!(s.abs() < 1e-8 * scale, "column {c}: {s}");
    }
}

#[test]
fn wls_reports_rank_deficiency() {
    let z = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
    let err = solve_wls(&WlsProblem::new(z, vec![1.0; 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap_err();
    match err {
        Error::RankDeficient { null_direction } => {
            let ratio = null_direction[0] / null_direction[1];
            assert!((ratio + 2.0).abs() < 1e-8, "{null_direction:?}");
        }
        other => panic!("unexpected {other}"),
    }
    assert!(WlsProblem::new(vec![vec![1.0]], vec![-1.0], vec![1.0]).is_err());
    assert!(WlsProblem::new(vec![vec![1.0]], vec![1.0, 1.0], vec![1.0]).is_err());
}

#[test]
fn quadratic_minimum() {
    let c = [1.5, -2.0, 0.25];
    let f = |x: &[f64], g: &mut [f64]| {
        let mut v = 0.0;
        for i in 0..3 {
            g[i] = 2.0 * (x[i] - c[i]);
            v += (x[i] - c[i]).powi(2);
        }
        v
    };
    for start in [[0.0; 3], [10.0, 10.0, -10.0]] {
        let r = minimize(&f, &start, &MinimizeOptions::default()).unwrap();
        assert!(r.converged());
        assert!(common::max_abs_diff(&r.x, &c) < 1e-6);
    }
}

#[test]
fn l1_soft_threshold() {
    let c = [3.0, -0.5];
    let f = |x: &[f64], g: &mut [f64]| {
        g[0] = x[0] - c[0];
        g[1] = x[1] - c[1];
        0.5 * ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2))
    };
    let opts = MinimizeOptions {
        l1_weight: 1.0,
        ..Default::default()
    };
    let r = minimize(&f, &[0.0, 0.0], &opts).unwrap();
    assert!(common::max_abs_diff(&r.x, &[2.0, 0.0]) < 1e-6, "{:?}", r.x);
    assert_eq!(r.x[1], 0.0);
}

#[test]
fn rosenbrock() {
    let f = |x: &[f64], g: &mut [f64]| {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    };
    let opts = MinimizeOptions {
        gradient_tolerance: 1e-9,
        ..Default::default()
    };
    let r = minimize(&f, &[-1.2, 1.0], &opts).unwrap();
    assert!(common::max_abs_diff(&r.x, &[1.0, 1.0]) < 1e-5, "{:?}", r.x);
    assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn non_finite_start_is_an_error() {
    let f = |x: &[f64], g: &mut [f64]| {
        g[0] = 1.0;
        x[0].ln()
    };
    assert!(matches!(
        minimize(&f, &[-1.0], &MinimizeOptions::default()),
        Err(Error::NonFinite { .. })
    ));
}
