//! Censored Q-learning with separate coefficients at every stage.
//!
//! The stage-`j` Q-function is the linear working model
//! `beta_j' H_j0 + (psi_j' H_j1) A_j`, fitted backwards from the last stage
//! by weighted least squares with inverse-probability-of-censoring weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numopt::WlsFactorization;
use crate::regime::{linear_action, StagewiseRegime};
use crate::survival::{stage_weights, BoundCensoring, CensoringModel};
use crate::trajectories::{Action, CohortDataset, FeatureSpec, ResolvedFeatures};

/// One regression row: an informative, at-risk subject at a stage.
#[derive(Debug, Clone)]
pub(crate) struct StageRow {
    pub h0: Vec<f64>,
    /// `H_j1 * A_j`.
    pub h1a: Vec<f64>,
    pub reward: f64,
    pub weight: f64,
    /// `(H_{j+1,0}, H_{j+1,1})` when the next stage is informative.
    pub next: Option<(Vec<f64>, Vec<f64>)>,
}

pub(crate) fn stage_rows(
    cohort: &CohortDataset,
    bound: &BoundCensoring<'_>,
    stage: usize,
) -> Vec<StageRow> {
    let feats = cohort.features();
    let weights = stage_weights(cohort, bound, stage);
    cohort
        .trajectories
        .iter()
        .zip(weights)
        .filter(|(_, w)| *w > 0.0)
        .map(|(t, weight)| {
            let s = t.stage(stage);
            let a = s.action.sign();
            let next = (stage < cohort.horizon && t.is_informative(stage + 1)).then(|| {
                let c = &t.stage(stage + 1).covariates;
                (
                    feats.main_vector(stage + 1, c),
                    feats.decision_vector(stage + 1, c),
                )
            });
            StageRow {
                h0: feats.main_vector(stage, &s.covariates),
                h1a: feats
                    .decision_vector(stage, &s.covariates)
                    .into_iter()
                    .map(|v| v * a)
                    .collect(),
                reward: s.reward,
                weight,
                next,
            }
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `beta' H0 + |psi' H1|`, the estimated optimal value of the next stage.
pub(crate) fn next_stage_value(beta: &[f64], psi: &[f64], next: &Option<(Vec<f64>, Vec<f64>)>) -> f64 {
    match next {
        Some((h0, h1)) => dot(beta, h0) + dot(psi, h1).abs(),
        None => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagewiseQModel {
    /// `beta_j`, one vector per stage.
    pub main_coefs: Vec<Vec<f64>>,
    /// `psi_j`, one vector per stage.
    pub decision_coefs: Vec<Vec<f64>>,
    pub feature_spec: FeatureSpec,
    pub covariate_names: Vec<String>,
}

impl StagewiseQModel {
    pub fn horizon(&self) -> usize {
        self.decision_coefs.len()
    }

    /// Decision rule with features resolved against `covariate_names`.
    pub fn regime_for(&self, covariate_names: &[String]) -> Result<StagewiseRegime> {
        Ok(StagewiseRegime {
            psi: self.decision_coefs.clone(),
            features: self.feature_spec.resolve(covariate_names)?,
        })
    }

    pub fn regime(&self) -> Result<StagewiseRegime> {
        self.regime_for(&self.covariate_names)
    }

    /// Q-value of `action` at `stage` (1-based).
    pub fn q_value(
        &self,
        features: &ResolvedFeatures,
        stage: usize,
        covariates: &[f64],
        action: Action,
    ) -> f64 {
        dot(&self.main_coefs[stage - 1], &features.main_vector(stage, covariates))
            + dot(
                &self.decision_coefs[stage - 1],
                &features.decision_vector(stage, covariates),
            ) * action.sign()
    }
}

/// Fits one stage: WLS of `response` on `(H_j0, H_j1 A_j)`. Columns that are
/// identically zero among the usable rows get a zero coefficient.
fn fit_stage(rows: &[StageRow], response: &[f64], stage: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::EmptyStage { stage });
    }
    let p0 = rows[0].h0.len();
    let design: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.h0.iter().chain(&r.h1a).copied().collect())
        .collect();
    let weights: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    let f = WlsFactorization::new(&design, &weights, true).map_err(|e| e.at_stage(stage))?;
    let mut coef = f.solve(response);
    let psi = coef.split_off(p0);
    Ok((coef, psi))
}

/// Backward stagewise fit.
pub fn fit_censored_q(cohort: &CohortDataset, censoring: &CensoringModel) -> Result<StagewiseQModel> {
    let bound = censoring.bind(cohort)?;
    let t_max = cohort.horizon;
    let mut main = vec![Vec::new(); t_max];
    let mut decision = vec![Vec::new(); t_max];
    for stage in (1..=t_max).rev() {
        let rows = stage_rows(cohort, &bound, stage);
        let response: Vec<f64> = rows
            .iter()
            .map(|r| {
                if stage == t_max {
                    r.reward
                } else {
                    r.reward + next_stage_value(&main[stage], &decision[stage], &r.next)
                }
            })
            .collect();
        let (beta, psi) = fit_stage(&rows, &response, stage)?;
        log::debug!("stage {stage}: {} rows, psi = {psi:?}", rows.len());
        main[stage - 1] = beta;
        decision[stage - 1] = psi;
    }
    Ok(StagewiseQModel {
        main_coefs: main,
        decision_coefs: decision,
        feature_spec: cohort.feature_spec.clone(),
        covariate_names: cohort.covariate_names.clone(),
    })
}

/// `sign(psi_j' h)`, `sign(0) = +1`.
pub fn recommend_stagewise(model: &StagewiseQModel, h_decision: &[f64], stage: usize) -> Result<Action> {
    if stage == 0 || stage > model.horizon() {
        return Err(Error::InvalidInput(format!(
            "stage {stage} outside 1..={}",
            model.horizon()
        )));
    }
    linear_action(&model.decision_coefs[stage - 1], h_decision)
}
