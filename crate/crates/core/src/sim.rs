//! Synthetic diabetes cohorts.
//!
//! Patients are followed over `horizon` decision stages of unit length. At
//! each stage the A1c level drifts towards a treatment-dependent mean, the
//! clinician either continues the current therapy (-1) or augments it with
//! the next drug (+1), and the time to hospitalization within the stage is
//! log-normal with a location reduced by the regret of the action taken.
//! A patient whose stage survival time falls short of the stage length fails.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::regime::{DecisionContext, Regime};
use crate::trajectories::{Action, CohortDataset, FeatureSpec, RawStage, RawTrajectory};

/// Column order of simulated covariates.
pub const COVARIATE_NAMES: [&str; 5] = ["a1c", "bp", "weight", "discontinued", "n_prev"];

pub const DRUGS: [&str; 4] = ["metformin", "sulfonylurea", "glitazone", "insulin"];

/// Maximum number of augmentations.
pub const MAX_AUGMENTED: u8 = 4;

pub const BASELINE_MEAN_BP: f64 = 12.0;
pub const BASELINE_MEAN_WEIGHT: f64 = 140.0;
pub const BASELINE_MEAN_A1C: f64 = 7.7;
/// Standard deviation of the A1c, BP and weight innovations.
pub const INNOVATION_SD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Regret scaled by the distance of the contrast from zero.
    One,
    /// Regret scaled by the distance of A1c from 7.
    Two,
}

impl Scenario {
    pub fn number(self) -> u8 {
        match self {
            Scenario::One => 1,
            Scenario::Two => 2,
        }
    }
}

impl TryFrom<u8> for Scenario {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Scenario::One),
            2 => Ok(Scenario::Two),
            _ => Err(Error::InvalidInput(format!("scenario must be 1 or 2, got {v}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: usize,
    pub scenario: Scenario,
    /// Censoring time is uniform on `[0, censor_upper]`; infinite disables it.
    pub censor_upper: f64,
    pub stage_length: f64,
    /// Relative A1c reduction of each drug, in augmentation order.
    pub treatment_effects: [f64; 4],
    /// Discontinuation probability after augmenting with each drug.
    pub discontinuation_rates: [f64; 4],
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 10,
            scenario: Scenario::One,
            censor_upper: 25.0,
            stage_length: 1.0,
            treatment_effects: [0.14, 0.20, 0.12, 0.14],
            discontinuation_rates: [0.20, 0.20, 0.20, 0.35],
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn new(scenario: Scenario, horizon: usize) -> Self {
        SimConfig {
            scenario,
            horizon,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if !(self.censor_upper > 0.0) {
            return Err(Error::InvalidInput("censor_upper must be positive".into()));
        }
        if !(self.stage_length > 0.0 && self.stage_length.is_finite()) {
            return Err(Error::InvalidInput("stage_length must be positive".into()));
        }
        if self.treatment_effects.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(Error::InvalidInput("treatment effects must lie in (0, 1)".into()));
        }
        if self
            .discontinuation_rates
            .iter()
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(Error::InvalidInput(
                "discontinuation rates must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// `tau = horizon * stage_length`.
    pub fn tau(&self) -> f64 {
        self.horizon as f64 * self.stage_length
    }

    /// Applies `key = value` settings on top of `self`.
    ///
    /// Keys: `horizon` (or `T`), `scenario`, `censor_upper`, `stage_length`,
    /// `seed`, `effect_<drug>`, `rate_<drug>`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (key, value) in kv.iter() {
            let bad = || Error::InvalidInput(format!("invalid value `{value}` for `{key}`"));
            match key {
                "horizon" | "T" => self.horizon = parse(value).ok_or_else(bad)?,
                "scenario" => self.scenario = Scenario::try_from(parse::<u8>(value).ok_or_else(bad)?)?,
                "censor_upper" => self.censor_upper = parse(value).ok_or_else(bad)?,
                "stage_length" => self.stage_length = parse(value).ok_or_else(bad)?,
                "seed" => self.seed = parse(value).ok_or_else(bad)?,
                _ => {
                    let drug = |prefix: &str| {
                        key.strip_prefix(prefix)
                            .and_then(|d| DRUGS.iter().position(|x| *x == d))
                    };
                    if let Some(i) = drug("effect_") {
                        self.treatment_effects[i] = parse(value).ok_or_else(bad)?;
                    } else if let Some(i) = drug("rate_") {
                        self.discontinuation_rates[i] = parse(value).ok_or_else(bad)?;
                    } else {
                        return Err(Error::InvalidInput(format!("unknown simulation key `{key}`")));
                    }
                }
            }
        }
        self.validate()
    }
}

fn parse<T: FromStr>(s: &str) -> Option<T> {
    s.parse().ok()
}

/// State of a patient at the decision point of a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    /// A1c at this decision point.
    pub a1c: f64,
    /// A1c at the previous decision point.
    pub a1c_prev: f64,
    pub bp: f64,
    pub weight: f64,
    /// Augmentations so far, `N_{j-1}`.
    pub n_augmented: u8,
    /// Discontinuation of the last augmented drug at this stage, `L_j`.
    pub discontinued: bool,
    /// `L_{j-1}`.
    pub discontinued_prev: bool,
    /// Mean A1c level `mu_j`.
    pub mu: f64,
    pub alive: bool,
    pub elapsed: f64,
}

impl PatientState {
    /// Covariates in [`COVARIATE_NAMES`] order.
    pub fn covariates(&self) -> Vec<f64> {
        vec![
            self.a1c,
            self.bp,
            self.weight,
            f64::from(u8::from(self.discontinued)),
            f64::from(self.n_augmented),
        ]
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Baseline `(bp, weight, a1c)` with unit variances; no augmentation yet.
pub fn draw_baseline<R: Rng + ?Sized>(rng: &mut R) -> PatientState {
    let bp = BASELINE_MEAN_BP + normal(rng);
    let weight = BASELINE_MEAN_WEIGHT + normal(rng);
    let a1c = BASELINE_MEAN_A1C + normal(rng);
    PatientState {
        a1c,
        a1c_prev: a1c,
        bp,
        weight,
        n_augmented: 0,
        discontinued: false,
        discontinued_prev: false,
        mu: BASELINE_MEAN_A1C,
        alive: true,
        elapsed: 0.0,
    }
}

/// `P(continue)` inside the 7-8 band.
pub fn continue_probability(state: &PatientState) -> f64 {
    expit(
        -0.2 * state.a1c_prev
            + 0.5 * f64::from(state.n_augmented)
            + 0.5 * f64::from(u8::from(state.discontinued_prev)),
    )
}

/// The clinician's treatment choice generating the data.
pub fn behavior_action<R: Rng + ?Sized>(state: &PatientState, rng: &mut R) -> Action {
    if state.n_augmented >= MAX_AUGMENTED || state.a1c < 7.0 {
        Action::Minus
    } else if state.a1c > 8.0 {
        Action::Plus
    } else if rng.random::<f64>() < continue_probability(state) {
        Action::Minus
    } else {
        Action::Plus
    }
}

/// Augmentation is impossible once all drugs are in use.
pub fn feasible_action(state: &PatientState, action: Action) -> Action {
    if state.n_augmented >= MAX_AUGMENTED {
        Action::Minus
    } else {
        action
    }
}

/// Applies `action` at the current stage and moves to the next decision
/// point: discontinuation, mean update, then the A1c, BP and weight draws.
pub fn transition<R: Rng + ?Sized>(
    state: &PatientState,
    action: Action,
    config: &SimConfig,
    rng: &mut R,
) -> PatientState {
    let augment = action == Action::Plus && state.n_augmented < MAX_AUGMENTED;
    let n = state.n_augmented + u8::from(augment);
    let drug = usize::from(n.max(1) - 1);
    let discontinued = augment && rng.random::<f64>() < config.discontinuation_rates[drug];
    let mu = if augment && !discontinued && state.a1c > 7.0 {
        state.mu * (1.0 - config.treatment_effects[drug])
    } else {
        state.mu
    };
    let scale = (1.0 + INNOVATION_SD * INNOVATION_SD).sqrt();
    let a1c = (state.a1c - state.mu + INNOVATION_SD * normal(rng)) / scale + mu;
    let bp = (state.bp + INNOVATION_SD * normal(rng)) / scale;
    let weight = (state.weight + INNOVATION_SD * normal(rng)) / scale;
    PatientState {
        a1c,
        a1c_prev: state.a1c,
        bp,
        weight,
        n_augmented: n,
        discontinued,
        discontinued_prev: state.discontinued,
        mu,
        alive: state.alive,
        elapsed: state.elapsed,
    }
}

/// State at the first decision point: one step from baseline with no drug added.
pub fn first_stage<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> PatientState {
    let baseline = draw_baseline(rng);
    transition(&baseline, Action::Minus, config, rng)
}

/// `a1c + 0.5 N_{j-1} - 10`.
pub fn contrast(state: &PatientState) -> f64 {
    state.a1c + 0.5 * f64::from(state.n_augmented) - 10.0
}

/// Expected loss in log survival from `action` relative to the optimal one.
pub fn regret(state: &PatientState, action: Action, scenario: Scenario) -> f64 {
    let s = contrast(state);
    let took = f64::from(u8::from(action == Action::Plus));
    let best = f64::from(u8::from(s > 0.0));
    let scale = match scenario {
        Scenario::One => s.abs(),
        Scenario::Two => (state.a1c - 7.0).abs(),
    };
    0.5 * scale * (took - best).powi(2)
}

/// `+1` iff the contrast is nonnegative.
pub fn optimal_action(state: &PatientState) -> Action {
    Action::from_score(contrast(state))
}

/// `log Y = 2.5 - regret + N(0, 1)`; returns `(min(Y, stage_length), failed)`.
pub fn stage_survival<R: Rng + ?Sized>(
    state: &PatientState,
    action: Action,
    scenario: Scenario,
    stage_length: f64,
    rng: &mut R,
) -> (f64, bool) {
    let y = (2.5 - regret(state, action, scenario) + normal(rng)).exp();
    if y < stage_length {
        (y, true)
    } else {
        (stage_length, false)
    }
}

fn patient_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One patient followed until failure or the horizon.
#[derive(Debug, Clone)]
struct Path {
    stages: Vec<(Vec<f64>, Action, f64)>,
    total: f64,
}

fn run_patient<F>(config: &SimConfig, rng: &mut ChaCha8Rng, mut choose: F) -> Path
where
    F: FnMut(usize, &PatientState, &mut ChaCha8Rng) -> Action,
{
    let mut state = first_stage(config, rng);
    let mut stages = Vec::with_capacity(config.horizon);
    let mut total = 0.0;
    for j in 1..=config.horizon {
        let action = feasible_action(&state, choose(j, &state, rng));
        let (reward, failed) = stage_survival(&state, action, config.scenario, config.stage_length, rng);
        stages.push((state.covariates(), action, reward));
        total += reward;
        if failed {
            break;
        }
        state = transition(&state, action, config, rng);
        state.elapsed = total;
    }
    Path { stages, total }
}

/// A simulated cohort with the quantities censoring hides.
#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    pub dataset: CohortDataset,
    /// Total reward before censoring.
    pub true_totals: Vec<f64>,
    /// Stages reached before censoring.
    pub true_lengths: Vec<usize>,
    pub censor_times: Vec<Option<f64>>,
}

/// Intercept plus all covariates for both the main effects and the rule.
pub fn default_feature_spec(horizon: usize) -> FeatureSpec {
    FeatureSpec::uniform(horizon, &COVARIATE_NAMES, &COVARIATE_NAMES, true)
        .expect("non-empty decision features")
}

pub fn covariate_names() -> Vec<String> {
    COVARIATE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Simulates `n` patients under the behavior policy with uniform censoring.
pub fn simulate_cohort<R: Rng + ?Sized>(config: &SimConfig, n: usize, rng: &mut R) -> Result<SimulatedCohort> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("cohort size must be positive".into()));
    }
    let seed: u64 = rng.random();
    let pad_seed: u64 = rng.random();
    let upper = config.censor_upper;
    let sims: Vec<(Path, Option<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut prng = patient_rng(seed, i as u64);
            let path = run_patient(config, &mut prng, |_, s, r| behavior_action(s, r));
            let c = upper.is_finite().then(|| prng.random::<f64>() * upper);
            (path, c)
        })
        .collect();
    let raw: Vec<RawTrajectory> = sims
        .iter()
        .enumerate()
        .map(|(i, (p, c))| RawTrajectory {
            id: (i + 1).to_string(),
            stages: p
                .stages
                .iter()
                .map(|(cov, a, y)| RawStage {
                    covariates: cov.clone(),
                    action: *a,
                    reward: Some(*y),
                })
                .collect(),
            censor_time: *c,
        })
        .collect();
    let dataset = CohortDataset::from_raw(
        &raw,
        config.horizon,
        config.tau(),
        covariate_names(),
        default_feature_spec(config.horizon),
        pad_seed,
    )?;
    Ok(SimulatedCohort {
        dataset,
        true_totals: sims.iter().map(|(p, _)| p.total).collect(),
        true_lengths: sims.iter().map(|(p, _)| p.stages.len()).collect(),
        censor_times: sims.iter().map(|(_, c)| *c).collect(),
    })
}

/// Monte Carlo value of a regime with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueValue {
    pub value: f64,
    pub std_error: f64,
    pub m: usize,
}

/// Mean truncated survival of `m` fresh, uncensored patients following `regime`.
pub fn true_value_with_error<R: Rng + ?Sized>(
    regime: &dyn Regime,
    config: &SimConfig,
    m: usize,
    rng: &mut R,
) -> Result<TrueValue> {
    config.validate()?;
    if m == 0 {
        return Err(Error::InvalidInput("validation size must be positive".into()));
    }
    let seed: u64 = rng.random();
    let totals: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut prng = patient_rng(seed, i as u64);
            run_patient(config, &mut prng, |j, s, _| {
                let cov = s.covariates();
                regime.decide(&DecisionContext {
                    stage: j,
                    covariates: &cov,
                    observed: None,
                })
            })
            .total
        })
        .collect();
    let mean = totals.iter().sum::<f64>() / m as f64;
    let var = if m > 1 {
        totals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    Ok(TrueValue {
        value: mean,
        std_error: (var / m as f64).sqrt(),
        m,
    })
}

pub fn true_value<R: Rng + ?Sized>(regime: &dyn Regime, config: &SimConfig, m: usize, rng: &mut R) -> Result<f64> {
    Ok(true_value_with_error(regime, config, m, rng)?.value)
}

/// The zero-regret rule as a [`Regime`] over [`COVARIATE_NAMES`].
#[derive(Debug, Clone, Copy, Default)]
pub struct OptimalRegime;

impl Regime for OptimalRegime {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Action {
        Action::from_score(ctx.covariates[0] + 0.5 * ctx.covariates[4] - 10.0)
    }
}
