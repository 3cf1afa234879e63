//! Censoring survival estimation and inverse-probability-of-censoring weights.
//!
//! The censoring time plays the role of the "event" here: a subject whose
//! trajectory ends censored contributes a censoring event at its observed
//! time, and a subject whose outcome was observed is a censored observation
//! of the censoring process.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectories::CohortDataset;

/// Lower bound applied to survival probabilities used as weight denominators.
pub const DEFAULT_SURVIVAL_FLOOR: f64 = 0.05;

const COX_GRADIENT_TOLERANCE: f64 = 1e-8;
const COX_MAX_ITERATIONS: usize = 100;

/// Right-continuous step function `t -> P(C > t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub floor: f64,
}

impl SurvivalCurve {
    pub fn new(times: Vec<f64>, probabilities: Vec<f64>, floor: f64) -> Result<Self> {
        if times.len() != probabilities.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                actual: probabilities.len(),
            });
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("curve times must be increasing".into()));
        }
        let mut prev = 1.0;
        for &p in &probabilities {
            if !(0.0..=prev).contains(&p) {
                return Err(Error::InvalidInput(
                    "curve probabilities must be non-increasing within [0, 1]".into(),
                ));
            }
            prev = p;
        }
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(Error::InvalidInput(format!("floor {floor} outside (0, 1]")));
        }
        Ok(SurvivalCurve {
            times,
            probabilities,
            floor,
        })
    }

    /// `S(t) = 1` everywhere.
    pub fn constant_one() -> Self {
        SurvivalCurve {
            times: Vec::new(),
            probabilities: Vec::new(),
            floor: DEFAULT_SURVIVAL_FLOOR,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Unfloored step-function value.
    pub fn raw_at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            1.0
        } else {
            self.probabilities[idx - 1]
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.raw_at(t).max(self.floor)
    }
}

/// Product-limit estimate of `P(C > t)` where `is_event` marks censoring events.
///
/// Ties are grouped: every observation with time `>= t` is at risk at `t`.
pub fn fit_kaplan_meier(times: &[f64], is_event: &[bool]) -> Result<SurvivalCurve> {
    if times.is_empty() {
        return Err(Error::InvalidInput("Kaplan-Meier needs at least one observation".into()));
    }
    if times.len() != is_event.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            actual: is_event.len(),
        });
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidInput("times must be finite and nonnegative".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut out_t = Vec::new();
    let mut out_p = Vec::new();
    let mut surv = 1.0;
    let mut at_risk = times.len();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let mut events = 0usize;
        while j < order.len() && times[order[j]] == t {
            events += usize::from(is_event[order[j]]);
            j += 1;
        }
        if events > 0 {
            surv *= (at_risk - events) as f64 / at_risk as f64;
            out_t.push(t);
            out_p.push(surv);
        }
        at_risk -= j - i;
        i = j;
    }
    Ok(SurvivalCurve {
        times: out_t,
        probabilities: out_p,
        floor: DEFAULT_SURVIVAL_FLOOR,
    })
}

/// Proportional hazards fit of the censoring time with a Breslow baseline.
///
/// Regressors are centred at `centers`, so the baseline cumulative hazard
/// refers to a subject at the regressor means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxCensoringFit {
    pub coefficients: Vec<f64>,
    pub centers: Vec<f64>,
    pub regressor_names: Vec<String>,
    /// Distinct censoring-event times.
    pub baseline_times: Vec<f64>,
    /// Breslow cumulative baseline hazard at each of `baseline_times`.
    pub baseline_cum_hazard: Vec<f64>,
    pub floor: f64,
    pub iterations: usize,
}

impl CoxCensoringFit {
    pub fn cumulative_baseline_hazard(&self, t: f64) -> f64 {
        let idx = self.baseline_times.partition_point(|&x| x <= t);
        if idx == 0 {
            0.0
        } else {
            self.baseline_cum_hazard[idx - 1]
        }
    }

    pub fn linear_predictor(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                actual: z.len(),
            });
        }
        Ok(self
            .coefficients
            .iter()
            .zip(z.iter().zip(&self.centers))
            .map(|(b, (x, c))| b * (x - c))
            .sum())
    }

    /// `exp(-Lambda_0(t)) ^ exp(beta' (z - center))`, unfloored.
    pub fn raw_survival(&self, t: f64, z: &[f64]) -> Result<f64> {
        let eta = self.linear_predictor(z)?;
        Ok((-self.cumulative_baseline_hazard(t) * eta.exp()).exp())
    }
}

/// Observed censoring data for a proportional hazards fit.
#[derive(Debug, Clone)]
pub struct CoxData {
    times: Vec<f64>,
    events: Vec<bool>,
    z: Vec<Vec<f64>>,
    /// Indices sorted by decreasing time.
    order: Vec<usize>,
}

impl CoxData {
    pub fn new(times: Vec<f64>, events: Vec<bool>, z: Vec<Vec<f64>>) -> Result<Self> {
        let n = times.len();
        if events.len() != n || z.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: events.len().min(z.len()),
            });
        }
        if let Some(p) = z.first().map(Vec::len) {
            if z.iter().any(|r| r.len() != p) {
                return Err(Error::InvalidInput("ragged regressor rows".into()));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        Ok(CoxData {
            times,
            events,
            z,
            order,
        })
    }

    pub fn dim(&self) -> usize {
        self.z.first().map(Vec::len).unwrap_or(0)
    }

    /// Log partial likelihood with Breslow ties, its gradient and Hessian.
    pub fn evaluate(&self, beta: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let p = self.dim();
        let mut ll = 0.0;
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![vec![0.0; p]; p];
        let eta = |i: usize| -> f64 { self.z[i].iter().zip(beta).map(|(a, b)| a * b).sum() };

        let n = self.order.len();
        let mut k = 0;
        while k < n {
            let t = self.times[self.order[k]];
            let mut end = k;
            while end < n && self.times[self.order[end]] == t {
                let i = self.order[end];
                let w = eta(i).exp();
                s0 += w;
                for a in 0..p {
                    s1[a] += w * self.z[i][a];
                    for b in 0..p {
                        s2[a][b] += w * self.z[i][a] * self.z[i][b];
                    }
                }
                end += 1;
            }
            let mut d = 0.0;
            for &i in &self.order[k..end] {
                if self.events[i] {
                    d += 1.0;
                    ll += eta(i);
                    for a in 0..p {
                        grad[a] += self.z[i][a];
                    }
                }
            }
            if d > 0.0 {
                ll -= d * s0.ln();
                for a in 0..p {
                    let ma = s1[a] / s0;
                    grad[a] -= d * ma;
                    for b in 0..p {
                        hess[a][b] -= d * (s2[a][b] / s0 - ma * s1[b] / s0);
                    }
                }
            }
            k = end;
        }
        (ll, grad, hess)
    }

    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        self.evaluate(beta).0
    }

    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        self.evaluate(beta).1
    }

    /// Breslow increments `d_k / sum_{t_j >= t_k} exp(beta' z_j)` at distinct event times.
    fn breslow(&self, beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut times = Vec::new();
        let mut increments = Vec::new();
        let mut s0 = 0.0;
        let n = self.order.len();
        let mut k = 0;
        while k < n {
            let t = self.times[self.order[k]];
            let mut end = k;
            let mut d = 0.0;
            while end < n && self.times[self.order[end]] == t {
                let i = self.order[end];
                s0 += self.z[i].iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp();
                d += f64::from(u8::from(self.events[i]));
                end += 1;
            }
            if d > 0.0 {
                times.push(t);
                increments.push(d / s0);
            }
            k = end;
        }
        times.reverse();
        increments.reverse();
        let mut cum = 0.0;
        let cum_hazard = increments
            .into_iter()
            .map(|h| {
                cum += h;
                cum
            })
            .collect();
        (times, cum_hazard)
    }
}

/// Newton-Raphson maximisation of the partial likelihood, then Breslow.
///
/// Regressor columns without variation cannot be estimated; their
/// coefficients are fixed at zero.
pub fn fit_cox(
    times: &[f64],
    is_event: &[bool],
    regressors: &[Vec<f64>],
    regressor_names: Vec<String>,
) -> Result<CoxCensoringFit> {
    let n = times.len();
    if n == 0 {
        return Err(Error::InvalidInput("Cox fit needs at least one observation".into()));
    }
    if !is_event.iter().any(|&e| e) {
        return Err(Error::InvalidInput("Cox fit needs at least one censoring event".into()));
    }
    let p = regressor_names.len();
    if regressors.len() != n || regressors.iter().any(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: regressors.first().map(Vec::len).unwrap_or(0),
        });
    }

    let centers: Vec<f64> = (0..p)
        .map(|a| regressors.iter().map(|r| r[a]).sum::<f64>() / n as f64)
        .collect();
    let active: Vec<usize> = (0..p)
        .filter(|&a| {
            let (lo, hi) = regressors
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[a]), hi.max(r[a]))
                });
            let constant = hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0);
            if constant {
                log::warn!(
                    "censoring regressor `{}` is constant; coefficient fixed at 0",
                    regressor_names[a]
                );
            }
            !constant
        })
        .collect();
    let z: Vec<Vec<f64>> = regressors
        .iter()
        .map(|r| active.iter().map(|&a| r[a] - centers[a]).collect())
        .collect();
    let data = CoxData::new(times.to_vec(), is_event.to_vec(), z)?;

    let q = active.len();
    let mut beta = vec![0.0; q];
    let mut iterations = 0;
    let (mut ll, mut grad, mut hess) = data.evaluate(&beta);
    loop {
        let gnorm = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if !gnorm.is_finite() {
            return Err(Error::NonFinite { point: beta });
        }
        if gnorm < COX_GRADIENT_TOLERANCE {
            break;
        }
        if iterations >= COX_MAX_ITERATIONS {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: gnorm,
            });
        }
        iterations += 1;
        let neg_h = DMatrix::from_fn(q, q, |a, b| -hess[a][b]);
        let g = DVector::from_column_slice(&grad);
        let step = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => neg_h
                .lu()
                .solve(&g)
                .ok_or(Error::NonConvergence {
                    iterations,
                    gradient_norm: gnorm,
                })?,
        };
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let (tll, tg, th) = data.evaluate(&trial);
            if tll.is_finite() && tll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = trial;
                ll = tll;
                grad = tg;
                hess = th;
                break;
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return Err(Error::NonConvergence {
                    iterations,
                    gradient_norm: gnorm,
                });
            }
        }
    }

    let (baseline_times, baseline_cum_hazard) = data.breslow(&beta);
    let mut coefficients = vec![0.0; p];
    for (k, &a) in active.iter().enumerate() {
        coefficients[a] = beta[k];
    }
    Ok(CoxCensoringFit {
        coefficients,
        centers,
        regressor_names,
        baseline_times,
        baseline_cum_hazard,
        floor: DEFAULT_SURVIVAL_FLOOR,
        iterations,
    })
}

/// Observed censoring data of a cohort: `(U_T, 1 - Delta_T)` per subject.
pub fn censoring_observations(cohort: &CohortDataset) -> (Vec<f64>, Vec<bool>) {
    cohort
        .trajectories
        .iter()
        .map(|t| (t.total_reward(), t.censored))
        .unzip()
}

fn baseline_regressors(cohort: &CohortDataset, names: &[String]) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| cohort.covariate_index(n).ok_or_else(|| Error::UnknownFeature(n.clone())))
        .collect::<Result<_>>()?;
    Ok(cohort
        .trajectories
        .iter()
        .map(|t| idx.iter().map(|&i| t.baseline()[i]).collect())
        .collect())
}

/// Cox model for the censoring time on first-stage covariates.
pub fn fit_cox_censoring<S: AsRef<str>>(
    cohort: &CohortDataset,
    regressors: &[S],
) -> Result<CoxCensoringFit> {
    let names: Vec<String> = regressors.iter().map(|s| s.as_ref().to_string()).collect();
    let z = baseline_regressors(cohort, &names)?;
    let (times, events) = censoring_observations(cohort);
    fit_cox(&times, &events, &z, names)
}

pub fn fit_kaplan_meier_censoring(cohort: &CohortDataset) -> Result<SurvivalCurve> {
    let (times, events) = censoring_observations(cohort);
    fit_kaplan_meier(&times, &events)
}

/// Fitted (or known) censoring survival function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum CensoringModel {
    KaplanMeier(SurvivalCurve),
    Cox(CoxCensoringFit),
    /// Known `C ~ Uniform(0, upper)` censoring law.
    Uniform { upper: f64, floor: f64 },
}

impl CensoringModel {
    /// No censoring: `S_C = 1`.
    pub fn none() -> Self {
        CensoringModel::KaplanMeier(SurvivalCurve::constant_one())
    }

    pub fn floor(&self) -> f64 {
        match self {
            CensoringModel::KaplanMeier(c) => c.floor,
            CensoringModel::Cox(f) => f.floor,
            CensoringModel::Uniform { floor, .. } => *floor,
        }
    }

    pub fn with_floor(mut self, value: f64) -> Self {
        match &mut self {
            CensoringModel::KaplanMeier(c) => c.floor = value,
            CensoringModel::Cox(f) => f.floor = value,
            CensoringModel::Uniform { floor, .. } => *floor = value,
        }
        self
    }

    pub fn regressor_names(&self) -> &[String] {
        match self {
            CensoringModel::Cox(f) => &f.regressor_names,
            _ => &[],
        }
    }

    /// Unfloored `P(C > t | z)`.
    pub fn raw_survival_at(&self, t: f64, baseline_covariates: &[f64]) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!("time {t} must be nonnegative")));
        }
        match self {
            CensoringModel::KaplanMeier(c) => Ok(c.raw_at(t)),
            CensoringModel::Cox(f) => f.raw_survival(t, baseline_covariates),
            CensoringModel::Uniform { upper, .. } => Ok((1.0 - t / upper).clamp(0.0, 1.0)),
        }
    }

    /// `P(C > t | z)`, floored.
    pub fn survival_at(&self, t: f64, baseline_covariates: &[f64]) -> Result<f64> {
        Ok(self.raw_survival_at(t, baseline_covariates)?.max(self.floor()))
    }

    /// Resolves regressors against a cohort so subjects can be evaluated by index.
    pub fn bind<'a>(&'a self, cohort: &CohortDataset) -> Result<BoundCensoring<'a>> {
        let exp_eta = match self {
            CensoringModel::Cox(f) => {
                let z = baseline_regressors(cohort, &f.regressor_names)?;
                z.iter()
                    .map(|zi| f.linear_predictor(zi).map(f64::exp))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => Vec::new(),
        };
        Ok(BoundCensoring {
            model: self,
            exp_eta,
        })
    }
}

/// A [`CensoringModel`] with per-subject linear predictors precomputed.
#[derive(Debug, Clone)]
pub struct BoundCensoring<'a> {
    model: &'a CensoringModel,
    exp_eta: Vec<f64>,
}

impl BoundCensoring<'_> {
    /// Floored `P(C > t)` for subject `i`.
    pub fn survival(&self, i: usize, t: f64) -> f64 {
        let raw = match self.model {
            CensoringModel::KaplanMeier(c) => c.raw_at(t),
            CensoringModel::Cox(f) => (-f.cumulative_baseline_hazard(t) * self.exp_eta[i]).exp(),
            CensoringModel::Uniform { upper, .. } => (1.0 - t / upper).clamp(0.0, 1.0),
        };
        raw.max(self.model.floor())
    }
}

/// `V_j = Delta_j / S_C(sum_{k<=j} Y_k)` for each subject; zero on
/// non-informative stages and once censored.
pub fn ipcw_stage_weights(
    cohort: &CohortDataset,
    model: &CensoringModel,
    stage: usize,
) -> Result<Vec<f64>> {
    if stage == 0 || stage > cohort.horizon {
        return Err(Error::InvalidInput(format!(
            "stage {stage} outside 1..={}",
            cohort.horizon
        )));
    }
    let bound = model.bind(cohort)?;
    Ok(stage_weights(cohort, &bound, stage))
}

pub(crate) fn stage_weights(cohort: &CohortDataset, bound: &BoundCensoring<'_>, stage: usize) -> Vec<f64> {
    cohort
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let s = t.stage(stage);
            if s.informative && s.at_risk {
                1.0 / bound.survival(i, t.cumulative_reward(stage))
            } else {
                0.0
            }
        })
        .collect()
}

/// How to obtain a censoring model from a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensoringChoice {
    /// Assume no censoring.
    None,
    KaplanMeier,
    /// Cox model on the named first-stage covariates.
    Cox { regressors: Vec<String> },
    /// Known uniform censoring law on `[0, upper]`.
    Uniform { upper: f64 },
}

impl CensoringChoice {
    pub fn fit(&self, cohort: &CohortDataset, floor: f64) -> Result<CensoringModel> {
        let model = match self {
            CensoringChoice::None => CensoringModel::none(),
            CensoringChoice::KaplanMeier => {
                CensoringModel::KaplanMeier(fit_kaplan_meier_censoring(cohort)?)
            }
            CensoringChoice::Cox { regressors } => {
                CensoringModel::Cox(fit_cox_censoring(cohort, regressors)?)
            }
            CensoringChoice::Uniform { upper } => CensoringModel::Uniform {
                upper: *upper,
                floor,
            },
        };
        Ok(model.with_floor(floor))
    }
}
