//! Censored shared-O-learning.
//!
//! A shared linear rule `sign(psi' H_j1)` is chosen to maximize an inverse
//! probability weighted estimate of its value. The indicator that a subject
//! followed the rule at every stage is relaxed through a soft minimum of the
//! stage margins `A_j psi' H_j1`, giving the smooth convex loss
//!
//! `Phi(psi) = mean_i w_i log[1 + K^-1 sum_j exp(-K A_ij psi' H_ij1)]`
//!
//! with `w_i = U_T Delta_T / (prod_j pi(A_j) S_C(U_T))`, which is minimized.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censored_q::dot;
use crate::error::{Error, Result};
use crate::numopt::{minimize, MinimizeOptions, Termination};
use crate::regime::{DecisionContext, LinearRegime, Regime};
use crate::survival::{CensoringChoice, CensoringModel};
use crate::trajectories::{Action, CohortDataset, FeatureSpec, ResolvedFeatures};

pub const PROPENSITY_MIN: f64 = 0.01;
pub const PROPENSITY_MAX: f64 = 0.99;

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityVariant {
    StageProportion,
    Logistic,
}

/// `pi_j(+1 | H_j)` per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PropensityModel {
    StageProportion { plus: Vec<f64> },
    /// Per-stage logistic regression of the action on the decision features.
    Logistic { coefs: Vec<Vec<f64>> },
}

impl PropensityModel {
    /// Clamped probability of `action` at `stage` (1-based).
    pub fn prob(
        &self,
        features: &ResolvedFeatures,
        stage: usize,
        covariates: &[f64],
        action: Action,
    ) -> f64 {
        let plus = match self {
            PropensityModel::StageProportion { plus } => plus[stage - 1],
            PropensityModel::Logistic { coefs } => {
                let h = features.decision_vector(stage, covariates);
                expit(dot(&coefs[stage - 1], &h))
            }
        };
        let plus = plus.clamp(PROPENSITY_MIN, PROPENSITY_MAX);
        match action {
            Action::Plus => plus,
            Action::Minus => 1.0 - plus,
        }
    }
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn estimate_propensity(cohort: &CohortDataset, variant: PropensityVariant) -> Result<PropensityModel> {
    let feats = cohort.features();
    let mut plus = Vec::with_capacity(cohort.horizon);
    let mut coefs = Vec::with_capacity(cohort.horizon);
    for stage in 1..=cohort.horizon {
        let obs: Vec<_> = cohort
            .trajectories
            .iter()
            .map(|t| t.stage(stage))
            .filter(|s| s.informative && s.at_risk)
            .collect();
        if obs.is_empty() {
            return Err(Error::EmptyStage { stage });
        }
        match variant {
            PropensityVariant::StageProportion => {
                let k = obs.iter().filter(|s| s.action == Action::Plus).count();
                plus.push(k as f64 / obs.len() as f64);
            }
            PropensityVariant::Logistic => {
                let x: Vec<Vec<f64>> = obs
                    .iter()
                    .map(|s| feats.decision_vector(stage, &s.covariates))
                    .collect();
                let y: Vec<f64> = obs
                    .iter()
                    .map(|s| if s.action == Action::Plus { 1.0 } else { 0.0 })
                    .collect();
                coefs.push(fit_logistic(&x, &y).map_err(|e| e.at_stage(stage))?);
            }
        }
    }
    Ok(match variant {
        PropensityVariant::StageProportion => PropensityModel::StageProportion { plus },
        PropensityVariant::Logistic => PropensityModel::Logistic { coefs },
    })
}

/// Mean log-loss logistic regression with a bounded iteration budget, so
/// separable data yields large but finite coefficients.
fn fit_logistic(x: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = x.len() as f64;
    let p = x[0].len();
    let objective = |b: &[f64], g: &mut [f64]| -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut loss = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            let eta = dot(b, xi);
            loss += softplus(eta) - yi * eta;
            let r = expit(eta) - yi;
            for (gj, xj) in g.iter_mut().zip(xi) {
                *gj += r * xj / n;
            }
        }
        loss / n
    };
    let opts = MinimizeOptions {
        gradient_tolerance: 1e-8,
        max_iterations: 100,
        ..Default::default()
    };
    Ok(minimize(&objective, &vec![0.0; p], &opts)?.x)
}

/// IPCW value estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Per-subject terms `U_T Delta_T I{A = d(H)} / (prod pi * S_C(U_T))`.
pub fn value_contributions(
    cohort: &CohortDataset,
    regime: &dyn Regime,
    propensity: &PropensityModel,
    censoring: &CensoringModel,
) -> Result<Vec<f64>> {
    let bound = censoring.bind(cohort)?;
    let feats = cohort.features();
    Ok(cohort
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            if !t.final_at_risk() {
                return 0.0;
            }
            let mut prob = 1.0;
            for j in t.informative_stages() {
                let s = t.stage(j);
                let ctx = DecisionContext {
                    stage: j,
                    covariates: &s.covariates,
                    observed: Some(s.action),
                };
                if regime.decide(&ctx) != s.action {
                    return 0.0;
                }
                prob *= propensity.prob(feats, j, &s.covariates, s.action);
            }
            let u = t.total_reward();
            u / (prob * bound.survival(i, u))
        })
        .collect())
}

/// Mean and standard error of [`value_contributions`].
pub fn value_estimate_with_error(
    cohort: &CohortDataset,
    regime: &dyn Regime,
    propensity: &PropensityModel,
    censoring: &CensoringModel,
) -> Result<ValueEstimate> {
    summarize(&value_contributions(cohort, regime, propensity, censoring)?)
}

/// IPCW value of the policy that generated the data, `mean U_T Delta_T / S_C(U_T)`.
///
/// The importance ratio of a policy against itself is one, so no propensity
/// model enters, even when the policy is stochastic.
pub fn observed_policy_value(cohort: &CohortDataset, censoring: &CensoringModel) -> Result<ValueEstimate> {
    let bound = censoring.bind(cohort)?;
    let c: Vec<f64> = cohort
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.final_at_risk() {
                let u = t.total_reward();
                u / bound.survival(i, u)
            } else {
                0.0
            }
        })
        .collect();
    summarize(&c)
}

fn summarize(c: &[f64]) -> Result<ValueEstimate> {
    let n = c.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty cohort".into()));
    }
    let mean = c.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(ValueEstimate {
        value: mean,
        std_error: (var / n as f64).sqrt(),
        n,
    })
}

pub fn value_estimate(
    cohort: &CohortDataset,
    regime: &dyn Regime,
    propensity: &PropensityModel,
    censoring: &CensoringModel,
) -> Result<f64> {
    Ok(value_estimate_with_error(cohort, regime, propensity, censoring)?.value)
}

/// `-log(sum_j exp(-K u_j)) / K`.
pub fn softmin(u: &[f64], k: f64) -> f64 {
    let m = u.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let s: f64 = u.iter().map(|v| (-k * (v - m)).exp()).sum();
    m - s.ln() / k
}

/// Weights and stage margins' feature vectors `A_j H_j1` of subjects with
/// positive weight.
#[derive(Debug, Clone)]
pub struct SurrogateData {
    /// Number of subjects in the cohort, the divisor of the mean.
    pub n: usize,
    pub weights: Vec<f64>,
    /// Per weighted subject, one `A_j H_j1` per informative stage.
    pub margins: Vec<Vec<Vec<f64>>>,
    pub dim: usize,
}

impl SurrogateData {
    pub fn new(
        cohort: &CohortDataset,
        propensity: &PropensityModel,
        censoring: &CensoringModel,
    ) -> Result<Self> {
        let bound = censoring.bind(cohort)?;
        let feats = cohort.features();
        let mut weights = Vec::new();
        let mut margins = Vec::new();
        for (i, t) in cohort.trajectories.iter().enumerate() {
            if !t.final_at_risk() {
                continue;
            }
            let mut prob = 1.0;
            let mut rows = Vec::new();
            for j in t.informative_stages() {
                let s = t.stage(j);
                prob *= propensity.prob(feats, j, &s.covariates, s.action);
                let a = s.action.sign();
                rows.push(
                    feats
                        .decision_vector(j, &s.covariates)
                        .into_iter()
                        .map(|v| v * a)
                        .collect(),
                );
            }
            let u = t.total_reward();
            let w = u / (prob * bound.survival(i, u));
            if w > 0.0 && !rows.is_empty() {
                weights.push(w);
                margins.push(rows);
            }
        }
        Ok(SurrogateData {
            n: cohort.len(),
            weights,
            margins,
            dim: feats.decision_dim(),
        })
    }

    /// Objective and gradient; `L = logsumexp_j(-K m_j - ln K)` and each term
    /// is `w softplus(L)` with gradient `-K w sigmoid(L) softmax_j x_j`.
    pub fn evaluate(&self, psi: &[f64], k: f64, gradient: Option<&mut [f64]>) -> f64 {
        let dim = self.dim;
        let want_grad = gradient.is_some();
        let chunks: Vec<(f64, Vec<f64>)> = self
            .weights
            .par_chunks(CHUNK)
            .zip(self.margins.par_chunks(CHUNK))
            .map(|(ws, ms)| {
                let mut val = 0.0;
                let mut g = if want_grad { vec![0.0; dim] } else { Vec::new() };
                let mut a = Vec::new();
                for (w, rows) in ws.iter().zip(ms) {
                    a.clear();
                    a.extend(rows.iter().map(|x| -k * dot(psi, x) - k.ln()));
                    let amax = a.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let s: f64 = a.iter().map(|v| (v - amax).exp()).sum();
                    let lse = amax + s.ln();
                    val += w * softplus(lse);
                    if want_grad {
                        let scale = -k * w * expit(lse) / s;
                        for (x, av) in rows.iter().zip(&a) {
                            let c = scale * (av - amax).exp();
                            for (gj, xj) in g.iter_mut().zip(x) {
                                *gj += c * xj;
                            }
                        }
                    }
                }
                (val, g)
            })
            .collect();
        let n = self.n as f64;
        let mut total = 0.0;
        if let Some(out) = gradient {
            out.iter_mut().for_each(|v| *v = 0.0);
            for (v, g) in &chunks {
                total += v;
                for (o, gj) in out.iter_mut().zip(g) {
                    *o += gj / n;
                }
            }
        } else {
            total = chunks.iter().map(|c| c.0).sum();
        }
        total / n
    }
}

pub fn surrogate_objective(
    psi: &[f64],
    cohort: &CohortDataset,
    propensity: &PropensityModel,
    censoring: &CensoringModel,
    k: f64,
) -> Result<f64> {
    check_k(k)?;
    let data = SurrogateData::new(cohort, propensity, censoring)?;
    check_dim(&data, psi)?;
    Ok(data.evaluate(psi, k, None))
}

pub fn surrogate_gradient(
    psi: &[f64],
    cohort: &CohortDataset,
    propensity: &PropensityModel,
    censoring: &CensoringModel,
    k: f64,
) -> Result<Vec<f64>> {
    check_k(k)?;
    let data = SurrogateData::new(cohort, propensity, censoring)?;
    check_dim(&data, psi)?;
    let mut g = vec![0.0; psi.len()];
    data.evaluate(psi, k, Some(&mut g));
    Ok(g)
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("smoothing constant K must be positive, got {k}")))
    }
}

fn check_dim(data: &SurrogateData, psi: &[f64]) -> Result<()> {
    if psi.len() != data.dim {
        return Err(Error::DimensionMismatch {
            expected: data.dim,
            actual: psi.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedOOptions {
    /// Soft-minimum sharpness `K`.
    pub k: f64,
    /// L1 penalty weight; the intercept is never penalized.
    pub l1_weight: f64,
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SharedOOptions {
    fn default() -> Self {
        SharedOOptions {
            k: 1.0,
            l1_weight: 0.0,
            gradient_tolerance: 1e-6,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedOModel {
    pub psi: Vec<f64>,
    pub smoothing_k: f64,
    pub l1_weight: f64,
    /// Surrogate plus penalty at `psi`.
    pub objective_at_solution: f64,
    pub iterations: usize,
    pub converged: bool,
    pub feature_spec: FeatureSpec,
    pub covariate_names: Vec<String>,
}

impl SharedOModel {
    pub fn regime_for(&self, covariate_names: &[String]) -> Result<LinearRegime> {
        Ok(LinearRegime {
            psi: self.psi.clone(),
            features: self.feature_spec.resolve(covariate_names)?,
        })
    }

    pub fn regime(&self) -> Result<LinearRegime> {
        self.regime_for(&self.covariate_names)
    }
}

/// Centering and scaling of the decision features; the intercept, when
/// present, is column 0 and absorbs the centering.
#[derive(Debug, Clone)]
struct Standardization {
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardization {
    fn new(data: &SurrogateData, intercept: bool) -> Self {
        let dim = data.dim;
        let first = usize::from(intercept);
        let mut count = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for rows in &data.margins {
            for x in rows {
                // x = A H; with an intercept A = x[0], otherwise signs do not matter for scale
                let a = if intercept { x[0] } else { 1.0 };
                count += 1.0;
                for k in first..dim {
                    let h = a * x[k];
                    sum[k] += h;
                    sq[k] += h * h;
                }
            }
        }
        let mut center = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        if count > 0.0 {
            for k in first..dim {
                let mean = sum[k] / count;
                let sd = (sq[k] / count - mean * mean).max(0.0).sqrt();
                if intercept {
                    center[k] = mean;
                }
                let spread = if intercept { sd } else { (sq[k] / count).sqrt() };
                if spread > 1e-12 {
                    scale[k] = spread;
                }
            }
        }
        Standardization { center, scale }
    }

    fn apply(&self, data: &SurrogateData, intercept: bool) -> SurrogateData {
        let margins = data
            .margins
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|x| {
                        let a = if intercept { x[0] } else { 1.0 };
                        x.iter()
                            .enumerate()
                            .map(|(k, v)| {
                                if intercept && k == 0 {
                                    *v
                                } else {
                                    a * (a * v - self.center[k]) / self.scale[k]
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        SurrogateData {
            margins,
            ..data.clone()
        }
    }

    /// Coefficients on the original features.
    fn restore(&self, tilde: &[f64], intercept: bool) -> Vec<f64> {
        let mut psi: Vec<f64> = tilde.iter().zip(&self.scale).map(|(v, s)| v / s).collect();
        if intercept {
            psi[0] = tilde[0];
            for k in 1..psi.len() {
                psi[0] -= psi[k] * self.center[k];
            }
        }
        psi
    }
}

/// Minimizes the surrogate from `psi = 0`.
///
/// The optimizer works on centered and scaled decision features and on the
/// objective divided by the mean weight. Both are exact reparametrizations:
/// the intercept is unpenalized and the L1 weights are rescaled to match.
pub fn fit_censored_shared_o(
    cohort: &CohortDataset,
    propensity: &PropensityModel,
    censoring: &CensoringModel,
    opts: &SharedOOptions,
) -> Result<SharedOModel> {
    check_k(opts.k)?;
    if !(opts.l1_weight >= 0.0) {
        return Err(Error::InvalidInput("L1 weight must be nonnegative".into()));
    }
    let data = SurrogateData::new(cohort, propensity, censoring)?;
    let k = opts.k;
    let intercept = cohort.features().has_intercept();
    let mean_weight = data.weights.iter().sum::<f64>() / data.n.max(1) as f64;
    let model = |psi: Vec<f64>, objective: f64, iterations: usize, converged: bool| SharedOModel {
        psi,
        smoothing_k: k,
        l1_weight: opts.l1_weight,
        objective_at_solution: objective,
        iterations,
        converged,
        feature_spec: cohort.feature_spec.clone(),
        covariate_names: cohort.covariate_names.clone(),
    };
    if mean_weight == 0.0 {
        return Ok(model(vec![0.0; data.dim], 0.0, 0, true));
    }
    let std = Standardization::new(&data, intercept);
    let scaled = std.apply(&data, intercept);
    let objective = |psi: &[f64], g: &mut [f64]| {
        let v = scaled.evaluate(psi, k, Some(&mut *g));
        g.iter_mut().for_each(|x| *x /= mean_weight);
        v / mean_weight
    };
    let min_opts = MinimizeOptions {
        gradient_tolerance: opts.gradient_tolerance,
        max_iterations: opts.max_iterations,
        l1_weight: opts.l1_weight / mean_weight,
        unpenalized: if intercept { vec![0] } else { Vec::new() },
        l1_scales: std.scale.iter().map(|s| 1.0 / s).collect(),
        ..Default::default()
    };
    let result = minimize(&objective, &vec![0.0; data.dim], &min_opts)
        .map_err(|e| e.context("shared-O surrogate minimization"))?;
    if result.termination != Termination::Converged {
        log::info!(
            "surrogate minimization ended with {:?} after {} iterations (gradient {:e})",
            result.termination,
            result.iterations,
            result.gradient_norm
        );
    }
    let psi = std.restore(&result.x, intercept);
    Ok(model(
        psi,
        result.value * mean_weight,
        result.iterations,
        result.converged(),
    ))
}

/// Nuisance models refit on each training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub censoring: CensoringChoice,
    pub propensity: PropensityVariant,
    pub survival_floor: f64,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        NuisanceSpec {
            censoring: CensoringChoice::KaplanMeier,
            propensity: PropensityVariant::StageProportion,
            survival_floor: crate::survival::DEFAULT_SURVIVAL_FLOOR,
        }
    }
}

impl NuisanceSpec {
    pub fn fit(&self, cohort: &CohortDataset) -> Result<(CensoringModel, PropensityModel)> {
        Ok((
            self.censoring.fit(cohort, self.survival_floor)?,
            estimate_propensity(cohort, self.propensity)?,
        ))
    }
}

/// Random partition of `0..n` into `folds` nearly equal parts.
pub fn fold_assignment<R: Rng + ?Sized>(n: usize, folds: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out = vec![Vec::new(); folds];
    for (k, i) in idx.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// Mean holdout value of each grid element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen: f64,
}

/// Cross-validated choice of `K`: largest mean holdout value, ties to the
/// smaller `K`.
pub fn select_k<R: Rng + ?Sized>(
    cohort: &CohortDataset,
    k_grid: &[f64],
    folds: usize,
    nuisance: &NuisanceSpec,
    opts: &SharedOOptions,
    rng: &mut R,
) -> Result<KSelection> {
    if k_grid.is_empty() {
        return Err(Error::InvalidInput("K grid is empty".into()));
    }
    for &k in k_grid {
        check_k(k)?;
    }
    let mut grid = k_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    if grid.len() == 1 {
        return Ok(KSelection {
            chosen: grid[0],
            scores: vec![f64::NAN],
            grid,
        });
    }
    if folds < 2 || folds > cohort.len() {
        return Err(Error::InvalidInput(format!(
            "need 2..={} folds, got {folds}",
            cohort.len()
        )));
    }
    let parts = fold_assignment(cohort.len(), folds, rng);
    let mut scores = vec![0.0; grid.len()];
    for (f, holdout) in parts.iter().enumerate() {
        let train_idx: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        let train = cohort.subset(&train_idx);
        let test = cohort.subset(holdout);
        let (cens, prop) = nuisance.fit(&train)?;
        for (s, &k) in scores.iter_mut().zip(&grid) {
            let model = fit_censored_shared_o(&train, &prop, &cens, &SharedOOptions { k, ..opts.clone() })?;
            let regime = model.regime_for(&test.covariate_names)?;
            *s += value_estimate(&test, &regime, &prop, &cens)? / folds as f64;
        }
    }
    let mut best = 0;
    for i in 1..grid.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(KSelection {
        chosen: grid[best],
        grid,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmin_brackets_minimum() {
        let u = [0.3, -1.2, 2.0];
        for k in [0.5, 1.0, 10.0] {
            let s = softmin(&u, k);
            assert!(s <= -1.2 + 1e-12 && s >= -1.2 - (3f64).ln() / k - 1e-12);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }
}
