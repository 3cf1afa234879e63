//! Censored shared-Q-learning.
//!
//! All stages share one decision vector `psi` while keeping their own main
//! effects `beta_j`. The parameters solve a stacked weighted least squares
//! problem whose responses (the pseudo-outcomes) depend on the parameters
//! themselves, so the fit alternates between rebuilding the responses and
//! re-solving until the parameters stop moving.

use serde::{Deserialize, Serialize};

use crate::censored_q::{dot, fit_censored_q, next_stage_value, stage_rows, StageRow, StagewiseQModel};
use crate::error::{Error, Result};
use crate::numopt::WlsFactorization;
use crate::regime::{linear_action, LinearRegime};
use crate::survival::CensoringModel;
use crate::trajectories::{Action, CohortDataset, FeatureSpec};

/// Stacked parameter `theta = (beta_1, ..., beta_T, psi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedTheta {
    pub main: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
}

impl SharedTheta {
    pub fn zeros(cohort: &CohortDataset) -> Self {
        let f = cohort.features();
        SharedTheta {
            main: (1..=cohort.horizon).map(|j| vec![0.0; f.main_dim(j)]).collect(),
            psi: vec![0.0; f.decision_dim()],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.main.iter().flatten().chain(&self.psi).copied().collect()
    }

    fn from_flat(flat: &[f64], template: &SharedTheta) -> Self {
        let mut at = 0;
        let main = template
            .main
            .iter()
            .map(|b| {
                let v = flat[at..at + b.len()].to_vec();
                at += b.len();
                v
            })
            .collect();
        SharedTheta {
            main,
            psi: flat[at..].to_vec(),
        }
    }

    fn distance(&self, other: &SharedTheta) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// `beta_j` from the stagewise fit and the average of its `psi_j`.
pub fn initialize_theta(baseline: &StagewiseQModel) -> SharedTheta {
    let t = baseline.decision_coefs.len();
    let dim = baseline.decision_coefs.first().map(Vec::len).unwrap_or(0);
    let mut psi = vec![0.0; dim];
    for p in &baseline.decision_coefs {
        for (a, b) in psi.iter_mut().zip(p) {
            *a += b / t as f64;
        }
    }
    SharedTheta {
        main: baseline.main_coefs.clone(),
        psi,
    }
}

/// Stacked regression: stage-`j` rows carry `H_j0` in the `j`-th column block
/// and `H_j1 A_j` in the shared last block.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub design: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub response: Vec<f64>,
    /// Stage (1-based) of each row.
    pub row_stage: Vec<usize>,
    /// First column of each stage's main-effect block, then of the shared block.
    pub block_offsets: Vec<usize>,
}

impl StackedSystem {
    pub fn columns(&self) -> usize {
        self.design.first().map(Vec::len).unwrap_or(0)
    }

    /// `sum_i w_i (u_i - z_i' theta)^2`.
    pub fn objective(&self, theta: &SharedTheta) -> f64 {
        let flat = theta.flatten();
        self.design
            .iter()
            .zip(&self.weights)
            .zip(&self.response)
            .map(|((z, w), u)| w * (u - dot(z, &flat)).powi(2))
            .sum()
    }
}

/// Per-stage regression rows, fixed across iterations.
struct StackedRows {
    stages: Vec<Vec<StageRow>>,
    offsets: Vec<usize>,
    columns: usize,
}

impl StackedRows {
    fn new(cohort: &CohortDataset, censoring: &CensoringModel) -> Result<Self> {
        let bound = censoring.bind(cohort)?;
        let f = cohort.features();
        let mut offsets = Vec::with_capacity(cohort.horizon + 1);
        let mut at = 0;
        for j in 1..=cohort.horizon {
            offsets.push(at);
            at += f.main_dim(j);
        }
        offsets.push(at);
        let columns = at + f.decision_dim();
        let stages = (1..=cohort.horizon)
            .map(|j| stage_rows(cohort, &bound, j))
            .collect();
        Ok(StackedRows {
            stages,
            offsets,
            columns,
        })
    }

    fn design(&self) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
        let shared = self.offsets[self.offsets.len() - 1];
        let mut design = Vec::new();
        let mut weights = Vec::new();
        let mut row_stage = Vec::new();
        for (k, rows) in self.stages.iter().enumerate() {
            for r in rows {
                let mut z = vec![0.0; self.columns];
                z[self.offsets[k]..self.offsets[k] + r.h0.len()].copy_from_slice(&r.h0);
                z[shared..].copy_from_slice(&r.h1a);
                design.push(z);
                weights.push(r.weight);
                row_stage.push(k + 1);
            }
        }
        (design, weights, row_stage)
    }

    /// Pseudo-outcomes `U_j + beta_{j+1}' H_{j+1,0} + |psi' H_{j+1,1}|`.
    fn response(&self, theta: &SharedTheta) -> Vec<f64> {
        let t = self.stages.len();
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(k, rows)| {
                rows.iter().map(move |r| {
                    if k + 1 == t {
                        r.reward
                    } else {
                        r.reward + next_stage_value(&theta.main[k + 1], &theta.psi, &r.next)
                    }
                })
            })
            .collect()
    }
}

pub fn build_stacked_system(
    cohort: &CohortDataset,
    theta: &SharedTheta,
    censoring: &CensoringModel,
) -> Result<StackedSystem> {
    let f = cohort.features();
    let dims_ok = theta.main.len() == cohort.horizon
        && theta.psi.len() == f.decision_dim()
        && theta
            .main
            .iter()
            .enumerate()
            .all(|(k, b)| b.len() == f.main_dim(k + 1));
    if !dims_ok {
        return Err(Error::DimensionMismatch {
            expected: SharedTheta::zeros(cohort).flatten().len(),
            actual: theta.flatten().len(),
        });
    }
    let rows = StackedRows::new(cohort, censoring)?;
    let (design, weights, row_stage) = rows.design();
    Ok(StackedSystem {
        response: rows.response(theta),
        design,
        weights,
        row_stage,
        block_offsets: rows.offsets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedQOptions {
    /// Stop once the Euclidean parameter change is at most this.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Start from zero instead of the stagewise fit.
    pub zero_init: bool,
}

impl Default for SharedQOptions {
    fn default() -> Self {
        SharedQOptions {
            epsilon: 1e-6,
            max_iter: 200,
            zero_init: false,
        }
    }
}

/// Consecutive increases of the parameter change that switch on damping.
const DAMPING_TRIGGER: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedQModel {
    pub main_coefs: Vec<Vec<f64>>,
    pub shared_psi: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub epsilon: f64,
    /// Parameter change at the last iteration.
    pub last_change: f64,
    pub damped: bool,
    pub feature_spec: FeatureSpec,
    pub covariate_names: Vec<String>,
}

impl SharedQModel {
    pub fn theta(&self) -> SharedTheta {
        SharedTheta {
            main: self.main_coefs.clone(),
            psi: self.shared_psi.clone(),
        }
    }

    pub fn regime_for(&self, covariate_names: &[String]) -> Result<LinearRegime> {
        Ok(LinearRegime {
            psi: self.shared_psi.clone(),
            features: self.feature_spec.resolve(covariate_names)?,
        })
    }

    pub fn regime(&self) -> Result<LinearRegime> {
        self.regime_for(&self.covariate_names)
    }
}

/// Iterates stacked weighted least squares to a fixed point.
///
/// Failure to converge within `max_iter` is not an error: the last iterate is
/// returned with `converged = false`.
pub fn fit_censored_shared_q(
    cohort: &CohortDataset,
    censoring: &CensoringModel,
    opts: &SharedQOptions,
) -> Result<SharedQModel> {
    if !(opts.epsilon > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidInput(
            "epsilon must be positive and max_iter at least 1".into(),
        ));
    }
    let start = if opts.zero_init {
        SharedTheta::zeros(cohort)
    } else {
        initialize_theta(&fit_censored_q(cohort, censoring)?)
    };
    fit_from(cohort, censoring, start, opts)
}

/// Same iteration from a caller-supplied starting point.
pub fn fit_from(
    cohort: &CohortDataset,
    censoring: &CensoringModel,
    start: SharedTheta,
    opts: &SharedQOptions,
) -> Result<SharedQModel> {
    let rows = StackedRows::new(cohort, censoring)?;
    for (k, r) in rows.stages.iter().enumerate() {
        if r.is_empty() {
            return Err(Error::EmptyStage { stage: k + 1 });
        }
    }
    let (design, weights, _) = rows.design();
    let factor = WlsFactorization::new(&design, &weights, true)?;
    drop(design);

    let mut theta = start;
    let mut prev_change = f64::INFINITY;
    let mut increases = 0;
    let mut damped = false;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let solved = factor.solve(&rows.response(&theta));
        let mut next = SharedTheta::from_flat(&solved, &theta);
        if damped {
            let old = theta.flatten();
            let avg: Vec<f64> = solved.iter().zip(&old).map(|(a, b)| 0.5 * (a + b)).collect();
            next = SharedTheta::from_flat(&avg, &theta);
        }
        change = next.distance(&theta);
        theta = next;
        if change <= opts.epsilon {
            break;
        }
        if change > prev_change {
            increases += 1;
            if increases >= DAMPING_TRIGGER && !damped {
                log::warn!("parameter change grew {increases} times in a row; damping updates");
                damped = true;
            }
        } else {
            increases = 0;
        }
        prev_change = change;
    }
    let converged = change <= opts.epsilon;
    if !converged {
        log::warn!(
            "shared-Q iteration stopped after {iterations} iterations, last change {change:e}"
        );
    }
    Ok(SharedQModel {
        main_coefs: theta.main,
        shared_psi: theta.psi,
        iterations,
        converged,
        epsilon: opts.epsilon,
        last_change: change,
        damped,
        feature_spec: cohort.feature_spec.clone(),
        covariate_names: cohort.covariate_names.clone(),
    })
}

/// `sign(psi' h)`, `sign(0) = +1`.
pub fn recommend_shared(psi: &[f64], h_decision: &[f64]) -> Result<Action> {
    linear_action(psi, h_decision)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stagewise(psi: Vec<Vec<f64>>) -> StagewiseQModel {
        StagewiseQModel {
            main_coefs: psi.iter().map(|_| vec![0.0]).collect(),
            feature_spec: FeatureSpec::uniform(psi.len(), &["x"], &["x"], false).unwrap(),
            covariate_names: vec!["x".into()],
            decision_coefs: psi,
        }
    }

    #[test]
    fn initialization_averages() {
        let t = initialize_theta(&stagewise(vec![vec![1.0, 0.0], vec![0.0, 1.0]]));
        assert_eq!(t.psi, vec![0.5, 0.5]);
        let t = initialize_theta(&stagewise(vec![vec![0.3, -2.0]]));
        assert_eq!(t.psi, vec![0.3, -2.0]);
        let t = initialize_theta(&stagewise(vec![vec![0.25, 4.0]; 3]));
        assert_eq!(t.psi, vec![0.25, 4.0]);
    }

    #[test]
    fn recommendations() {
        assert_eq!(recommend_shared(&[0.0, 1.0], &[1.0, -2.0]).unwrap(), Action::Minus);
        assert_eq!(recommend_shared(&[2.0, 1.0], &[1.0, -2.0]).unwrap(), Action::Plus);
        assert_eq!(recommend_shared(&[0.0, 5.0], &[1.0, -2.0]).unwrap(), Action::Minus);
        assert!(recommend_shared(&[1.0], &[1.0, 2.0]).is_err());
    }
}
