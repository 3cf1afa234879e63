#![allow(dead_code)]

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use sdtr::trajectories::{Action, CohortDataset, FeatureSpec, RawStage, RawTrajectory};

pub fn stage(covariates: &[f64], action: Action, reward: f64) -> RawStage {
    RawStage {
        covariates: covariates.to_vec(),
        action,
        reward: Some(reward),
    }
}

pub fn raw(id: &str, stages: Vec<RawStage>, censor_time: Option<f64>) -> RawTrajectory {
    RawTrajectory {
        id: id.to_string(),
        stages,
        censor_time,
    }
}

pub fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Cohort whose main and decision features are all covariates plus an intercept.
pub fn cohort(raw: &[RawTrajectory], horizon: usize, tau: f64, covariates: &[&str]) -> CohortDataset {
    let spec = FeatureSpec::uniform(horizon, covariates, covariates, true).unwrap();
    CohortDataset::from_raw(raw, horizon, tau, names(covariates), spec, 11).unwrap()
}

/// Linear Q-functions `Q_j = beta_j' (1, x1, x2) + (psi_j' (1, x1)) A_j`.
#[derive(Debug, Clone)]
pub struct LinearTruth {
    pub main: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
}

impl LinearTruth {
    pub fn horizon(&self) -> usize {
        self.main.len()
    }

    /// Intercepts grow backwards so every stage reward stays positive.
    pub fn new(horizon: usize, shared: bool) -> Self {
        let main = (1..=horizon)
            .map(|j| vec![5.0 + 10.0 * (horizon - j) as f64, 1.0 - 0.1 * j as f64, -0.5])
            .collect();
        let psi = (1..=horizon)
            .map(|j| {
                if shared {
                    vec![0.4, -1.2]
                } else {
                    vec![0.3 * j as f64 - 0.5, 1.0 - 0.2 * j as f64]
                }
            })
            .collect();
        LinearTruth { main, psi }
    }

    fn h0(x: &[f64]) -> [f64; 3] {
        [1.0, x[0], x[1]]
    }

    fn h1(x: &[f64]) -> [f64; 2] {
        [1.0, x[0]]
    }

    fn q(&self, j: usize, x: &[f64], a: Action) -> f64 {
        let b = &self.main[j - 1];
        let p = &self.psi[j - 1];
        let h0 = Self::h0(x);
        let h1 = Self::h1(x);
        b.iter().zip(h0).map(|(u, v)| u * v).sum::<f64>()
            + p.iter().zip(h1).map(|(u, v)| u * v).sum::<f64>() * a.sign()
    }

    fn v(&self, j: usize, x: &[f64]) -> f64 {
        self.q(j, x, Action::Plus).max(self.q(j, x, Action::Minus))
    }

    /// Noiseless cohort without censoring whose rewards reproduce the Q-functions exactly.
    pub fn cohort<R: Rng>(&self, n: usize, rng: &mut R) -> CohortDataset {
        let t = self.horizon();
        let raws: Vec<RawTrajectory> = (0..n)
            .map(|i| {
                let xs: Vec<[f64; 2]> = (0..t)
                    .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                    .collect();
                let acts: Vec<Action> = (0..t).map(|_| Action::random(rng)).collect();
                let stages = (1..=t)
                    .map(|j| {
                        let x = &xs[j - 1];
                        let next = if j < t { self.v(j + 1, &xs[j]) } else { 0.0 };
                        let y = self.q(j, x, acts[j - 1]) - next;
                        assert!(y > 0.0);
                        stage(x, acts[j - 1], y)
                    })
                    .collect();
                raw(&i.to_string(), stages, None)
            })
            .collect();
        let spec = FeatureSpec::uniform(t, &["x1", "x2"], &["x1"], true).unwrap();
        CohortDataset::from_raw(&raws, t, 1e4, names(&["x1", "x2"]), spec, 3).unwrap()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Exact solution of `Z'VZ b = Z'V u` in rational arithmetic.
pub fn normal_equations_oracle(z: &[Vec<f64>], w: &[f64], u: &[f64]) -> Vec<f64> {
    let q = |x: f64| BigRational::from_float(x).unwrap();
    let p = z[0].len();
    let mut a = vec![vec![BigRational::zero(); p + 1]; p];
    for ((row, wi), ui) in z.iter().zip(w).zip(u) {
        let wi = q(*wi);
        for r in 0..p {
            let wr = &wi * q(row[r]);
            for c in 0..p {
                a[r][c] += &wr * q(row[c]);
            }
            a[r][p] += &wr * q(*ui);
        }
    }
    for col in 0..p {
        let pivot = (col..p).find(|&r| !a[r][col].is_zero()).unwrap();
        a.swap(col, pivot);
        for r in 0..p {
            if r != col && !a[r][col].is_zero() {
                let factor = &a[r][col] / &a[col][col];
                for c in col..=p {
                    let delta = &factor * &a[col][c];
                    a[r][c] -= delta;
                }
            }
        }
    }
    (0..p).map(|r| (&a[r][p] / &a[r][r]).to_f64().unwrap()).collect()
}
