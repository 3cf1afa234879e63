//! Multi-stage censored trajectories.
//!
//! A subject's history is a sequence of decision stages. Each stage carries
//! the covariates observed at the decision point, the binary action taken,
//! and the reward (time survived) accrued until the next decision point or
//! the failure. Trajectories of different lengths are brought to a common
//! horizon by [`pad_and_truncate`]: stages after a failure, a censoring, or
//! the truncation time `tau` become non-informative with zero reward, so the
//! total reward of every trajectory equals its `tau`-truncated survival.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary treatment action, encoded as -1 / +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Minus,
    Plus,
}

impl Action {
    pub fn sign(self) -> f64 {
        match self {
            Action::Minus => -1.0,
            Action::Plus => 1.0,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            Action::Minus => -1,
            Action::Plus => 1,
        }
    }

    /// `sgn` with the convention `sgn(0) = +1`.
    pub fn from_score(score: f64) -> Action {
        if score >= 0.0 {
            Action::Plus
        } else {
            Action::Minus
        }
    }

    pub fn from_code(code: i64) -> Option<Action> {
        match code {
            -1 => Some(Action::Minus),
            1 => Some(Action::Plus),
            _ => None,
        }
    }

    pub fn negate(self) -> Action {
        match self {
            Action::Minus => Action::Plus,
            Action::Plus => Action::Minus,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Action {
        if rng.random::<bool>() {
            Action::Plus
        } else {
            Action::Minus
        }
    }
}

/// Action a regime takes on a padded stage, where no covariates exist.
pub const PADDED_STAGE_ACTION: Action = Action::Plus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageObservation {
    /// Covariate values in the dataset's column order; empty when not informative.
    pub covariates: Vec<f64>,
    pub action: Action,
    /// Reward accrued during the stage (partial when censored in the stage).
    pub reward: f64,
    /// `Delta_j`: the cumulative reward through this stage is observed.
    pub at_risk: bool,
    pub informative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub stages: Vec<StageObservation>,
    pub observed_length: usize,
    pub censored: bool,
    pub censor_time: Option<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// Stage by 1-based index.
    pub fn stage(&self, stage: usize) -> &StageObservation {
        &self.stages[stage - 1]
    }

    pub fn is_informative(&self, stage: usize) -> bool {
        stage >= 1 && stage <= self.stages.len() && self.stages[stage - 1].informative
    }

    /// Sum of rewards through `stage` (1-based, inclusive).
    pub fn cumulative_reward(&self, stage: usize) -> f64 {
        self.stages[..stage].iter().map(|s| s.reward).sum()
    }

    /// `U_T = min(sum Y, C)`, truncated at tau.
    pub fn total_reward(&self) -> f64 {
        self.stages.iter().map(|s| s.reward).sum()
    }

    /// `Delta_T`.
    pub fn final_at_risk(&self) -> bool {
        self.stages.last().map(|s| s.at_risk).unwrap_or(false)
    }

    /// Covariates of the first stage, used as baseline regressors.
    pub fn baseline(&self) -> &[f64] {
        &self.stages[0].covariates
    }

    /// Informative stages as 1-based indices.
    pub fn informative_stages(&self) -> impl Iterator<Item = usize> + '_ {
        self.stages
            .iter()
            .enumerate()
            .filter(|(_, s)| s.informative)
            .map(|(i, _)| i + 1)
    }
}

/// One observed stage before padding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStage {
    pub covariates: Vec<f64>,
    pub action: Action,
    /// Full stage reward; `None` only for a stage cut short by censoring.
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub id: String,
    pub stages: Vec<RawStage>,
    pub censor_time: Option<f64>,
}

/// Extends a partial trajectory to `horizon` stages and truncates its rewards at `tau`.
///
/// Censoring is resolved against the truncated cumulative reward: stage `j`
/// is at risk iff the cumulative reward through `j` does not exceed the
/// censoring time, and the first stage that is not at risk keeps only the
/// partial reward `C - sum_{k<j} Y_k`. Actions on padded stages are drawn
/// uniformly from `rng`.
pub fn pad_and_truncate<R: Rng + ?Sized>(
    raw: &RawTrajectory,
    tau: f64,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let ctx = || format!("subject `{}`", raw.id);
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    if raw.stages.is_empty() {
        return Err(Error::data(ctx(), "trajectory has no stages"));
    }
    if raw.stages.len() > horizon {
        return Err(Error::data(
            ctx(),
            format!("{} stages exceed horizon {horizon}", raw.stages.len()),
        ));
    }
    if let Some(c) = raw.censor_time {
        if !(c >= 0.0) {
            return Err(Error::data(ctx(), format!("invalid censoring time {c}")));
        }
    }

    let mut stages = Vec::with_capacity(horizon);
    let mut cumulative = 0.0;
    let mut censored = false;
    for (k, stage) in raw.stages.iter().enumerate() {
        let reward = match stage.reward {
            Some(y) if y.is_finite() && y >= 0.0 => y,
            Some(y) => {
                return Err(Error::data(
                    ctx(),
                    format!("stage {}: negative or non-finite reward {y}", k + 1),
                ))
            }
            None if raw.censor_time.is_some() => f64::INFINITY,
            None => {
                return Err(Error::data(
                    ctx(),
                    format!("stage {}: missing reward without a censoring time", k + 1),
                ))
            }
        };
        let truncated = reward.min((tau - cumulative).max(0.0));
        let mut obs = StageObservation {
            covariates: stage.covariates.clone(),
            action: stage.action,
            reward: truncated,
            at_risk: true,
            informative: true,
        };
        if let Some(c) = raw.censor_time {
            if cumulative + truncated > c {
                obs.reward = (c - cumulative).max(0.0);
                obs.at_risk = false;
                stages.push(obs);
                censored = true;
                break;
            }
        }
        cumulative += truncated;
        stages.push(obs);
        if cumulative >= tau {
            break;
        }
    }

    let observed_length = stages.len();
    let trailing_at_risk = !censored;
    while stages.len() < horizon {
        stages.push(StageObservation {
            covariates: Vec::new(),
            action: Action::random(rng),
            reward: 0.0,
            at_risk: trailing_at_risk,
            informative: false,
        });
    }

    Ok(Trajectory {
        id: raw.id.clone(),
        stages,
        observed_length,
        censored,
        censor_time: raw.censor_time,
    })
}

/// Which covariates enter the main-effect (`H_j0`) and decision (`H_j1`)
/// vectors at each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub main_effect: Vec<Vec<String>>,
    pub decision: Vec<Vec<String>>,
    pub include_intercept: bool,
}

impl FeatureSpec {
    /// Same feature lists at every stage.
    pub fn uniform<S: AsRef<str>>(
        horizon: usize,
        main_effect: &[S],
        decision: &[S],
        include_intercept: bool,
    ) -> Result<Self> {
        let own = |xs: &[S]| xs.iter().map(|s| s.as_ref().to_string()).collect::<Vec<_>>();
        let spec = FeatureSpec {
            main_effect: vec![own(main_effect); horizon],
            decision: vec![own(decision); horizon],
            include_intercept,
        };
        spec.validate(horizon)?;
        Ok(spec)
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.main_effect.len() != horizon || self.decision.len() != horizon {
            return Err(Error::InvalidInput(format!(
                "feature spec covers {} / {} stages, horizon is {horizon}",
                self.main_effect.len(),
                self.decision.len()
            )));
        }
        let first = self.decision[0].len();
        if first == 0 {
            return Err(Error::InvalidInput("decision feature list is empty".into()));
        }
        if self.decision.iter().any(|d| d.len() != first) {
            return Err(Error::InvalidInput(
                "decision feature lists differ in length across stages".into(),
            ));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.decision.len()
    }

    pub fn decision_dim(&self) -> usize {
        self.decision[0].len() + usize::from(self.include_intercept)
    }

    pub fn main_dim(&self, stage: usize) -> usize {
        self.main_effect[stage - 1].len() + usize::from(self.include_intercept)
    }

    /// Maps feature names to column indices of `covariate_names`.
    pub fn resolve(&self, covariate_names: &[String]) -> Result<ResolvedFeatures> {
        self.validate(self.horizon())?;
        let lookup: HashMap<&str, usize> = covariate_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let map = |names: &Vec<String>| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|n| {
                    lookup
                        .get(n.as_str())
                        .copied()
                        .ok_or_else(|| Error::UnknownFeature(n.clone()))
                })
                .collect()
        };
        Ok(ResolvedFeatures {
            main: self.main_effect.iter().map(map).collect::<Result<_>>()?,
            decision: self.decision.iter().map(map).collect::<Result<_>>()?,
            intercept: self.include_intercept,
        })
    }
}

/// A [`FeatureSpec`] bound to a concrete covariate column order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedFeatures {
    main: Vec<Vec<usize>>,
    decision: Vec<Vec<usize>>,
    intercept: bool,
}

impl ResolvedFeatures {
    pub fn horizon(&self) -> usize {
        self.decision.len()
    }

    pub fn main_dim(&self, stage: usize) -> usize {
        self.main[stage - 1].len() + usize::from(self.intercept)
    }

    pub fn decision_dim(&self) -> usize {
        self.decision[0].len() + usize::from(self.intercept)
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    fn gather(&self, idx: &[usize], covariates: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() + 1);
        if self.intercept {
            out.push(1.0);
        }
        out.extend(idx.iter().map(|&i| covariates[i]));
        out
    }

    pub fn main_vector(&self, stage: usize, covariates: &[f64]) -> Vec<f64> {
        self.gather(&self.main[stage - 1], covariates)
    }

    pub fn decision_vector(&self, stage: usize, covariates: &[f64]) -> Vec<f64> {
        self.gather(&self.decision[stage - 1], covariates)
    }
}

/// `(H_j0, H_j1)` for an informative stage (1-based).
pub fn build_features(
    traj: &Trajectory,
    stage: usize,
    spec: &FeatureSpec,
    covariate_names: &[String],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if stage == 0 || stage > traj.horizon() || stage > spec.horizon() {
        return Err(Error::InvalidInput(format!(
            "stage {stage} outside 1..={}",
            traj.horizon()
        )));
    }
    if !traj.is_informative(stage) {
        return Err(Error::NonInformativeStage {
            subject: traj.id.clone(),
            stage,
        });
    }
    let resolved = spec.resolve(covariate_names)?;
    let cov = &traj.stage(stage).covariates;
    Ok((
        resolved.main_vector(stage, cov),
        resolved.decision_vector(stage, cov),
    ))
}

/// A set of padded trajectories sharing a horizon, `tau` and feature layout.
#[derive(Debug, Clone)]
pub struct CohortDataset {
    pub trajectories: Vec<Trajectory>,
    pub horizon: usize,
    pub tau: f64,
    pub covariate_names: Vec<String>,
    pub feature_spec: FeatureSpec,
    /// Seed of the stream that drew padded-stage actions.
    pub seed: u64,
    resolved: ResolvedFeatures,
}

impl CohortDataset {
    pub fn new(
        trajectories: Vec<Trajectory>,
        horizon: usize,
        tau: f64,
        covariate_names: Vec<String>,
        feature_spec: FeatureSpec,
        seed: u64,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        feature_spec.validate(horizon)?;
        let resolved = feature_spec.resolve(&covariate_names)?;
        let p = covariate_names.len();
        for t in &trajectories {
            if t.horizon() != horizon {
                return Err(Error::data(
                    format!("subject `{}`", t.id),
                    format!("has {} stages, horizon is {horizon}", t.horizon()),
                ));
            }
            if t.total_reward() > tau * (1.0 + 1e-12) {
                return Err(Error::data(
                    format!("subject `{}`", t.id),
                    format!("total reward {} exceeds tau {tau}", t.total_reward()),
                ));
            }
            for (k, s) in t.stages.iter().enumerate() {
                if s.informative && s.covariates.len() != p {
                    return Err(Error::data(
                        format!("subject `{}` stage {}", t.id, k + 1),
                        format!("{} covariates, expected {p}", s.covariates.len()),
                    ));
                }
            }
        }
        Ok(CohortDataset {
            trajectories,
            horizon,
            tau,
            covariate_names,
            feature_spec,
            seed,
            resolved,
        })
    }

    /// Pads and truncates raw trajectories with a stream seeded by `seed`.
    pub fn from_raw(
        raw: &[RawTrajectory],
        horizon: usize,
        tau: f64,
        covariate_names: Vec<String>,
        feature_spec: FeatureSpec,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajectories = raw
            .iter()
            .map(|r| pad_and_truncate(r, tau, horizon, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(trajectories, horizon, tau, covariate_names, feature_spec, seed)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn features(&self) -> &ResolvedFeatures {
        &self.resolved
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn with_feature_spec(&self, spec: FeatureSpec) -> Result<Self> {
        Self::new(
            self.trajectories.clone(),
            self.horizon,
            self.tau,
            self.covariate_names.clone(),
            spec,
            self.seed,
        )
    }

    pub fn subset(&self, indices: &[usize]) -> CohortDataset {
        CohortDataset {
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
            horizon: self.horizon,
            tau: self.tau,
            covariate_names: self.covariate_names.clone(),
            feature_spec: self.feature_spec.clone(),
            seed: self.seed,
            resolved: self.resolved.clone(),
        }
    }

    /// Writes the long-format table: one row per subject and stage.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id", "stage", "action", "reward", "at_risk"];
        header.extend(self.covariate_names.iter().map(String::as_str));
        w.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for t in &self.trajectories {
            for (k, s) in t.stages.iter().enumerate() {
                row.clear();
                row.push(t.id.clone());
                row.push((k + 1).to_string());
                row.push(s.action.code().to_string());
                row.push(s.reward.to_string());
                row.push(if s.at_risk { "1" } else { "0" }.to_string());
                if s.informative {
                    row.extend(s.covariates.iter().map(|v| v.to_string()));
                } else {
                    row.extend(std::iter::repeat_n(String::new(), self.covariate_names.len()));
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// Defaults to the largest stage index in the file.
    pub horizon: Option<usize>,
    /// Defaults to the largest total reward in the file.
    pub tau: Option<f64>,
    /// Defaults to every covariate as main-effect and decision feature, with intercept.
    pub feature_spec: Option<FeatureSpec>,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            horizon: None,
            tau: None,
            feature_spec: None,
            seed: 0,
        }
    }
}

const FIXED_COLUMNS: [&str; 5] = ["id", "stage", "action", "reward", "at_risk"];

struct Row {
    line: u64,
    stage: usize,
    action: Action,
    reward: f64,
    at_risk: bool,
    covariates: Option<Vec<f64>>,
}

pub fn load_cohort(path: impl AsRef<Path>, options: &LoadOptions) -> Result<CohortDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_cohort(file, options)
}

/// Reads the long-format table from any reader; see [`load_cohort`].
pub fn read_cohort<R: std::io::Read>(reader: R, options: &LoadOptions) -> Result<CohortDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < FIXED_COLUMNS.len()
        || header[..FIXED_COLUMNS.len()]
            .iter()
            .zip(FIXED_COLUMNS)
            .any(|(h, want)| !h.eq_ignore_ascii_case(want))
    {
        return Err(Error::data(
            "header",
            format!("expected leading columns {FIXED_COLUMNS:?}, got {header:?}"),
        ));
    }
    let covariate_names: Vec<String> = header[FIXED_COLUMNS.len()..].to_vec();

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Row>> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let at = |msg: String| Error::data(format!("line {line}"), msg);
        let field = |i: usize| record.get(i).unwrap_or("");

        let id = field(0).to_string();
        if id.is_empty() {
            return Err(at("empty subject id".into()));
        }
        let stage: usize = field(1)
            .parse()
            .map_err(|_| at(format!("invalid stage `{}`", field(1))))?;
        if stage == 0 {
            return Err(at("stage indices start at 1".into()));
        }
        let action = field(2)
            .parse::<i64>()
            .ok()
            .and_then(Action::from_code)
            .ok_or_else(|| at(format!("action `{}` is not -1 or +1", field(2))))?;
        let reward: f64 = field(3)
            .parse()
            .map_err(|_| at(format!("invalid reward `{}`", field(3))))?;
        if !(reward >= 0.0) || !reward.is_finite() {
            return Err(at(format!("reward {reward} must be nonnegative")));
        }
        let at_risk = match field(4) {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" => false,
            other => return Err(at(format!("invalid at_risk flag `{other}`"))),
        };
        let raw_cov: Vec<&str> = (FIXED_COLUMNS.len()..header.len()).map(field).collect();
        let covariates = if !raw_cov.is_empty() && raw_cov.iter().all(|s| s.is_empty()) {
            None
        } else {
            let parsed = raw_cov
                .iter()
                .zip(&covariate_names)
                .map(|(s, name)| {
                    s.parse::<f64>()
                        .map_err(|_| at(format!("covariate `{name}`: invalid value `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(parsed)
        };

        let rows = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if let Some(prev) = rows.last() {
            if stage == prev.stage {
                return Err(at(format!("duplicate row for subject `{id}` stage {stage}")));
            }
            if stage < prev.stage {
                return Err(at(format!(
                    "subject `{id}`: stage {stage} follows stage {}",
                    prev.stage
                )));
            }
        }
        rows.push(Row {
            line,
            stage,
            action,
            reward,
            at_risk,
            covariates,
        });
    }

    let mut raws = Vec::with_capacity(order.len());
    let mut max_stage = 0;
    let mut max_total: f64 = 0.0;
    for id in &order {
        let rows = &groups[id];
        let mut stages = Vec::new();
        let mut censor_time = None;
        let mut cumulative = 0.0;
        let mut closed = false;
        for row in rows {
            max_stage = max_stage.max(row.stage);
            let at = |msg: String| Error::data(format!("line {}", row.line), msg);
            match &row.covariates {
                None => closed = true,
                Some(cov) => {
                    if closed {
                        return Err(at(format!(
                            "subject `{id}`: informative stage {} after a non-informative one",
                            row.stage
                        )));
                    }
                    if censor_time.is_some() {
                        return Err(at(format!(
                            "subject `{id}`: stage {} observed after censoring",
                            row.stage
                        )));
                    }
                    if row.stage != stages.len() + 1 {
                        return Err(at(format!(
                            "subject `{id}`: stage {} follows stage {} (gap)",
                            row.stage,
                            stages.len()
                        )));
                    }
                    let reward = if row.at_risk {
                        Some(row.reward)
                    } else {
                        censor_time = Some(cumulative + row.reward);
                        None
                    };
                    cumulative += row.reward;
                    stages.push(RawStage {
                        covariates: cov.clone(),
                        action: row.action,
                        reward,
                    });
                }
            }
        }
        if stages.is_empty() {
            return Err(Error::data(
                format!("subject `{id}`"),
                "no informative stages",
            ));
        }
        max_total = max_total.max(cumulative);
        raws.push(RawTrajectory {
            id: id.clone(),
            stages,
            censor_time,
        });
    }

    let horizon = options.horizon.unwrap_or(max_stage);
    if max_stage > horizon {
        return Err(Error::data(
            "file",
            format!("stage index {max_stage} exceeds horizon {horizon}"),
        ));
    }
    let tau = options.tau.unwrap_or(max_total);
    let spec = match &options.feature_spec {
        Some(s) => s.clone(),
        None => FeatureSpec::uniform(horizon, &covariate_names, &covariate_names, true)?,
    };
    CohortDataset::from_raw(&raws, horizon, tau, covariate_names, spec, options.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage(reward: Option<f64>) -> RawStage {
        RawStage {
            covariates: vec![1.0],
            action: Action::Plus,
            reward,
        }
    }

    fn raw(rewards: &[Option<f64>], censor: Option<f64>) -> RawTrajectory {
        RawTrajectory {
            id: "s".into(),
            stages: rewards.iter().map(|&r| stage(r)).collect(),
            censor_time: censor,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn failure_pads_to_horizon() {
        let t = pad_and_truncate(&raw(&[Some(1.0); 3], None), 100.0, 5, &mut rng()).unwrap();
        let rewards: Vec<f64> = t.stages.iter().map(|s| s.reward).collect();
        let informative: Vec<bool> = t.stages.iter().map(|s| s.informative).collect();
        assert_eq!(rewards, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(informative, vec![true, true, true, false, false]);
        assert_eq!(t.observed_length, 3);
        assert!(!t.censored);
        assert!(t.stages.iter().all(|s| s.at_risk));
    }

    #[test]
    fn truncation_at_tau() {
        let t = pad_and_truncate(&raw(&[Some(4.0); 3], None), 10.0, 3, &mut rng()).unwrap();
        let rewards: Vec<f64> = t.stages.iter().map(|s| s.reward).collect();
        assert_eq!(rewards, vec![4.0, 4.0, 2.0]);
        assert_eq!(t.total_reward(), 10.0);
    }

    #[test]
    fn exact_tau_keeps_stage_and_stops() {
        let t = pad_and_truncate(&raw(&[Some(5.0); 3], None), 10.0, 3, &mut rng()).unwrap();
        assert_eq!(t.stages[1].reward, 5.0);
        assert!(t.stages[1].informative);
        assert!(!t.stages[2].informative);
        assert_eq!(t.stages[2].reward, 0.0);
    }

    #[test]
    fn censored_mid_stage() {
        let t = pad_and_truncate(
            &raw(&[Some(1.0), Some(1.0), None], Some(2.5)),
            100.0,
            4,
            &mut rng(),
        )
        .unwrap();
        let delta: Vec<bool> = t.stages[..3].iter().map(|s| s.at_risk).collect();
        assert_eq!(delta, vec![true, true, false]);
        assert!((t.stages[2].reward - 0.5).abs() < 1e-15);
        assert!(t.censored);
        assert!(!t.stages[3].at_risk && !t.stages[3].informative);
    }

    #[test]
    fn censoring_with_known_full_rewards() {
        // C falls inside stage 2 even though the full reward is known.
        let t = pad_and_truncate(&raw(&[Some(1.0), Some(1.0), Some(1.0)], Some(1.25)), 10.0, 3, &mut rng())
            .unwrap();
        assert!(t.censored);
        assert_eq!(t.observed_length, 2);
        assert!((t.stages[1].reward - 0.25).abs() < 1e-15);
        assert!(!t.stages[2].informative);
    }

    #[test]
    fn rejects_bad_raw() {
        assert!(pad_and_truncate(&raw(&[Some(-1.0)], None), 10.0, 3, &mut rng()).is_err());
        assert!(pad_and_truncate(&raw(&[Some(1.0); 4], None), 10.0, 3, &mut rng()).is_err());
        assert!(pad_and_truncate(&raw(&[None], None), 10.0, 3, &mut rng()).is_err());
        assert!(pad_and_truncate(&raw(&[Some(1.0)], None), 10.0, 0, &mut rng()).is_err());
    }

    fn names() -> Vec<String> {
        vec!["a1c".into(), "n".into()]
    }

    fn one_subject() -> Trajectory {
        let r = RawTrajectory {
            id: "p".into(),
            stages: vec![RawStage {
                covariates: vec![8.0, 2.0],
                action: Action::Minus,
                reward: Some(1.0),
            }],
            censor_time: None,
        };
        pad_and_truncate(&r, 10.0, 2, &mut rng()).unwrap()
    }

    #[test]
    fn features_with_intercept() {
        let spec = FeatureSpec::uniform(2, &["a1c"], &["a1c", "n"], true).unwrap();
        let (h0, h1) = build_features(&one_subject(), 1, &spec, &names()).unwrap();
        assert_eq!(h0, vec![1.0, 8.0]);
        assert_eq!(h1, vec![1.0, 8.0, 2.0]);
    }

    #[test]
    fn feature_errors() {
        let empty: [&str; 0] = [];
        assert!(FeatureSpec::uniform(2, &["a1c"], &empty, true).is_err());
        let spec = FeatureSpec::uniform(2, &["a1c"], &["a1c"], true).unwrap();
        assert!(matches!(
            build_features(&one_subject(), 2, &spec, &names()),
            Err(Error::NonInformativeStage { stage: 2, .. })
        ));
        let bad = FeatureSpec::uniform(2, &["bmi"], &["a1c"], true).unwrap();
        assert!(matches!(
            build_features(&one_subject(), 1, &bad, &names()),
            Err(Error::UnknownFeature(_))
        ));
    }

    const WELL_FORMED: &str = "\
id,stage,action,reward,at_risk,a1c,n
a,1,1,1,1,8.0,0
a,2,-1,1,1,7.5,1
a,3,1,0.5,0,7.0,1
b,1,-1,1,1,6.0,0
b,2,-1,0.3,1,6.5,0
b,3,1,0,1,,
";

    #[test]
    fn loads_well_formed_file() {
        let data = read_cohort(WELL_FORMED.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.horizon, 3);
        // tau defaults to the largest total, at which subject a is known to survive
        assert!(!data.trajectories[0].censored);
        assert!((data.tau - 2.5).abs() < 1e-12);
        let opts = LoadOptions {
            tau: Some(5.0),
            ..Default::default()
        };
        let data = read_cohort(WELL_FORMED.as_bytes(), &opts).unwrap();
        let a = &data.trajectories[0];
        assert!(a.censored);
        assert_eq!(a.censor_time, Some(2.5));
        assert!((a.total_reward() - 2.5).abs() < 1e-12);
        let b = &data.trajectories[1];
        assert!(!b.censored);
        assert_eq!(b.observed_length, 2);
    }

    #[test]
    fn csv_round_trip() {
        let opts = LoadOptions {
            tau: Some(5.0),
            ..Default::default()
        };
        let data = read_cohort(WELL_FORMED.as_bytes(), &opts).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let again = read_cohort(buf.as_slice(), &opts).unwrap();
        assert_eq!(data.trajectories, again.trajectories);
    }

    #[test]
    fn rejects_zero_action() {
        let text = "id,stage,action,reward,at_risk,x\na,1,0,1,1,2\n";
        let err = read_cohort(text.as_bytes(), &LoadOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("action"), "{msg}");
    }

    #[test]
    fn rejects_gap_and_duplicates() {
        let gap = "id,stage,action,reward,at_risk,x\na,1,1,1,1,2\na,3,1,1,1,2\n";
        assert!(read_cohort(gap.as_bytes(), &LoadOptions::default())
            .unwrap_err()
            .to_string()
            .contains("gap"));
        let dup = "id,stage,action,reward,at_risk,x\na,1,1,1,1,2\na,1,1,1,1,2\n";
        assert!(read_cohort(dup.as_bytes(), &LoadOptions::default())
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let back = "id,stage,action,reward,at_risk,x\na,2,1,1,1,2\na,1,1,1,1,2\n";
        assert!(read_cohort(back.as_bytes(), &LoadOptions::default()).is_err());
    }
}
