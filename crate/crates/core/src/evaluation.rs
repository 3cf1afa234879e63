//! Method comparison: cross-validated holdout values, concordance survival
//! curves, and simulation benchmarks against known ground truth.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censored_q::fit_censored_q;
use crate::error::{Error, Result};
use crate::model_io::FittedModel;
use crate::regime::{DecisionContext, Regime};
use crate::shared_o::{
    fit_censored_shared_o, fold_assignment, value_estimate, NuisanceSpec, PropensityModel,
    SharedOOptions,
};
use crate::shared_q::{fit_censored_shared_q, SharedQOptions};
use crate::sim::{simulate_cohort, true_value_with_error, OptimalRegime, SimConfig};
use crate::survival::{fit_kaplan_meier, CensoringModel, SurvivalCurve};
use crate::trajectories::CohortDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Censored Q-learning, unshared.
    Cq,
    /// Censored shared-Q-learning.
    Csql,
    /// Censored shared-O-learning.
    Csol,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cq, Method::Csql, Method::Csol];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cq => "cq",
            Method::Csql => "csql",
            Method::Csol => "csol",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Cq => "CQL",
            Method::Csql => "CSQL",
            Method::Csol => "CSOL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cq" => Ok(Method::Cq),
            "csql" => Ok(Method::Csql),
            "csol" => Ok(Method::Csol),
            _ => Err(Error::InvalidInput(format!(
                "unknown method `{s}` (valid: cq, csql, csol)"
            ))),
        }
    }
}

/// Estimator settings shared by all evaluation entry points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub shared_q: SharedQOptions,
    pub shared_o: SharedOOptions,
}

/// Fits one method with already-fitted nuisance models.
pub fn fit_method(
    method: Method,
    cohort: &CohortDataset,
    censoring: &CensoringModel,
    propensity: &PropensityModel,
    settings: &MethodSettings,
) -> Result<FittedModel> {
    Ok(match method {
        Method::Cq => FittedModel::Cq(fit_censored_q(cohort, censoring)?),
        Method::Csql => FittedModel::Csql(fit_censored_shared_q(cohort, censoring, &settings.shared_q)?),
        Method::Csol => FittedModel::Csol(fit_censored_shared_o(
            cohort,
            propensity,
            censoring,
            &settings.shared_o,
        )?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCv {
    pub method: Method,
    /// Mean over repeats in which the method could be fitted.
    pub mean_value: f64,
    /// Per-repeat value, `None` when fitting failed.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub methods: Vec<MethodCv>,
    pub chosen: Method,
    pub repeats: usize,
}

impl CvReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>12} {:>8}", "method", "cv_value", "repeats");
        for m in &self.methods {
            let ok = m.values.iter().flatten().count();
            let _ = writeln!(s, "{:<8} {:>12.4} {:>8}", m.method.label(), m.mean_value, ok);
        }
        let _ = writeln!(s, "chosen: {}", self.chosen.label());
        s
    }
}

/// Fits on `train`, scores on `test` with nuisance models from `train`.
fn holdout_value(
    method: Method,
    train: &CohortDataset,
    test: &CohortDataset,
    nuisance: &NuisanceSpec,
    settings: &MethodSettings,
) -> Result<f64> {
    let (cens, prop) = nuisance.fit(train)?;
    let model = fit_method(method, train, &cens, &prop, settings)?;
    let regime = model.regime_for(&test.covariate_names)?;
    value_estimate(test, regime.as_ref(), &prop, &cens)
}

/// Repeated two-fold cross-validation of `methods` by holdout IPCW value.
pub fn cross_validate_methods<R: Rng + ?Sized>(
    cohort: &CohortDataset,
    methods: &[Method],
    repeats: usize,
    nuisance: &NuisanceSpec,
    settings: &MethodSettings,
    rng: &mut R,
) -> Result<CvReport> {
    if methods.len() < 2 {
        return Err(Error::InvalidInput("cross-validation needs at least two methods".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be at least 1".into()));
    }
    if cohort.len() < 4 {
        return Err(Error::InvalidInput("cohort too small to split".into()));
    }
    let seeds: Vec<u64> = (0..repeats).map(|_| rng.random()).collect();
    let per_repeat: Vec<Vec<Option<f64>>> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
            let halves = fold_assignment(cohort.len(), 2, &mut split_rng);
            let a = cohort.subset(&halves[0]);
            let b = cohort.subset(&halves[1]);
            methods
                .iter()
                .map(|&m| {
                    let both = holdout_value(m, &a, &b, nuisance, settings).and_then(|v1| {
                        holdout_value(m, &b, &a, nuisance, settings).map(|v2| 0.5 * (v1 + v2))
                    });
                    match both {
                        Ok(v) => Some(v),
                        Err(e) => {
                            log::warn!("repeat {}: {} excluded: {e}", r + 1, m.name());
                            None
                        }
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(methods.len());
    for (k, &m) in methods.iter().enumerate() {
        let values: Vec<Option<f64>> = per_repeat.iter().map(|r| r[k]).collect();
        let ok: Vec<f64> = values.iter().flatten().copied().collect();
        let mean_value = if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        };
        out.push(MethodCv {
            method: m,
            mean_value,
            values,
        });
    }
    let best = out
        .iter()
        .enumerate()
        .filter(|(_, m)| m.mean_value.is_finite())
        .fold(None, |best: Option<usize>, (i, m)| match best {
            Some(b) if out[b].mean_value >= m.mean_value => Some(b),
            _ => Some(i),
        })
        .ok_or_else(|| Error::InvalidInput("no method could be fitted in any repeat".into()))?;
    Ok(CvReport {
        chosen: out[best].method,
        methods: out,
        repeats,
    })
}

/// Kaplan-Meier curves of total time for subjects whose observed actions
/// agree with a regime at every informative stage, and for the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceCurves {
    /// `None` when no subject falls in the group.
    pub consistent: Option<SurvivalCurve>,
    pub inconsistent: Option<SurvivalCurve>,
    pub n_consistent: usize,
    pub n_inconsistent: usize,
}

/// Whether a subject's observed actions agree with `regime` at every informative stage.
pub fn follows_regime(cohort: &CohortDataset, index: usize, regime: &dyn Regime) -> bool {
    let t = &cohort.trajectories[index];
    t.informative_stages().all(|j| {
        let s = t.stage(j);
        regime.decide(&DecisionContext {
            stage: j,
            covariates: &s.covariates,
            observed: Some(s.action),
        }) == s.action
    })
}

/// A failure counts as an event; censoring and reaching `tau` do not.
pub fn concordance_km(cohort: &CohortDataset, regime: &dyn Regime) -> Result<ConcordanceCurves> {
    let mut groups: [(Vec<f64>, Vec<bool>); 2] = Default::default();
    for (i, t) in cohort.trajectories.iter().enumerate() {
        let g = usize::from(!follows_regime(cohort, i, regime));
        let total = t.total_reward();
        groups[g].0.push(total);
        groups[g].1.push(!t.censored && total < cohort.tau);
    }
    let curve = |(times, events): &(Vec<f64>, Vec<bool>)| -> Result<Option<SurvivalCurve>> {
        if times.is_empty() {
            Ok(None)
        } else {
            fit_kaplan_meier(times, events).map(Some)
        }
    };
    Ok(ConcordanceCurves {
        consistent: curve(&groups[0])?,
        inconsistent: curve(&groups[1])?,
        n_consistent: groups[0].0.len(),
        n_inconsistent: groups[1].0.len(),
    })
}

/// Two-column `time,survival` text, starting at `(0, 1)`.
pub fn write_curve<W: std::io::Write>(curve: &SurvivalCurve, mut out: W) -> Result<()> {
    writeln!(out, "time,survival")?;
    writeln!(out, "0,1")?;
    for (t, p) in curve.times.iter().zip(&curve.probabilities) {
        writeln!(out, "{t},{p}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub label: String,
    pub mean: f64,
    /// Standard deviation of replicate values; absent with one replicate.
    pub sd: Option<f64>,
    /// Replicates in which the method produced a value.
    pub effective_replicates: usize,
    pub values: Vec<Option<f64>>,
}

impl MethodSummary {
    fn from_values(label: &str, values: Vec<Option<f64>>) -> Self {
        let ok: Vec<f64> = values.iter().flatten().copied().collect();
        let n = ok.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / n as f64
        };
        let sd = (n > 1).then(|| {
            (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        MethodSummary {
            label: label.into(),
            mean,
            sd,
            effective_replicates: n,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: SimConfig,
    pub n: usize,
    pub replicates: usize,
    pub validation_m: usize,
    pub seed: u64,
    pub methods: Vec<MethodSummary>,
    /// The zero-regret rule on the same validation patients.
    pub opt: MethodSummary,
}

impl BenchmarkReport {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.label == label)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario {}  T = {}  n = {}  replicates = {}  validation = {}",
            self.config.scenario.number(),
            self.config.horizon,
            self.n,
            self.replicates,
            self.validation_m
        );
        let _ = writeln!(s, "{:<8} {:>10} {:>10} {:>10}", "method", "mean", "sd", "effective");
        for m in self.methods.iter().chain(std::iter::once(&self.opt)) {
            let sd = m.sd.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{:<8} {:>10.4} {:>10} {:>10}",
                m.label, m.mean, sd, m.effective_replicates
            );
        }
        s
    }
}

/// Options of [`run_benchmark`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub n: usize,
    pub replicates: usize,
    pub validation_m: usize,
    pub methods: Vec<Method>,
    pub nuisance: NuisanceSpec,
    pub settings: MethodSettings,
    pub seed: u64,
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 + 1);
    rng
}

/// Simulates, fits every method, and scores each fitted rule by its
/// simulated value on fresh validation patients, over several replicates.
pub fn run_benchmark(config: &SimConfig, opts: &BenchmarkOptions) -> Result<BenchmarkReport> {
    config.validate()?;
    if opts.replicates == 0 || opts.n == 0 || opts.validation_m == 0 {
        return Err(Error::InvalidInput(
            "replicates, n and validation size must be positive".into(),
        ));
    }
    let rows: Vec<(Vec<Option<f64>>, Option<f64>)> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(opts.seed, r);
            let validation_seed: u64 = rng.random();
            let score = |regime: &dyn Regime| -> Result<f64> {
                let mut vrng = ChaCha8Rng::seed_from_u64(validation_seed);
                Ok(true_value_with_error(regime, config, opts.validation_m, &mut vrng)?.value)
            };
            let opt = score(&OptimalRegime).ok();
            let fitted = simulate_cohort(config, opts.n, &mut rng).and_then(|sim| {
                let (cens, prop) = opts.nuisance.fit(&sim.dataset)?;
                Ok((sim, cens, prop))
            });
            let values = match fitted {
                Err(e) => {
                    log::warn!("replicate {}: data or nuisance fit failed: {e}", r + 1);
                    vec![None; opts.methods.len()]
                }
                Ok((sim, cens, prop)) => opts
                    .methods
                    .iter()
                    .map(|&m| {
                        let v = fit_method(m, &sim.dataset, &cens, &prop, &opts.settings)
                            .and_then(|model| model.regime_for(&sim.dataset.covariate_names))
                            .and_then(|regime| score(regime.as_ref()));
                        match v {
                            Ok(v) => Some(v),
                            Err(e) => {
                                log::warn!("replicate {}: {} failed: {e}", r + 1, m.name());
                                None
                            }
                        }
                    })
                    .collect(),
            };
            log::debug!("replicate {} done: {values:?}", r + 1);
            (values, opt)
        })
        .collect();
    let methods = opts
        .methods
        .iter()
        .enumerate()
        .map(|(k, m)| MethodSummary::from_values(m.label(), rows.iter().map(|r| r.0[k]).collect()))
        .collect();
    let opt = MethodSummary::from_values("Opt", rows.iter().map(|r| r.1).collect());
    Ok(BenchmarkReport {
        config: config.clone(),
        n: opts.n,
        replicates: opts.replicates,
        validation_m: opts.validation_m,
        seed: opts.seed,
        methods,
        opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "ql".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("cq, csql, csol"));
    }

    #[test]
    fn single_replicate_has_no_sd() {
        let s = MethodSummary::from_values("x", vec![Some(2.0)]);
        assert_eq!(s.sd, None);
        let s = MethodSummary::from_values("x", vec![Some(1.0), None, Some(3.0)]);
        assert_eq!(s.effective_replicates, 2);
        assert!((s.sd.unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }
}
