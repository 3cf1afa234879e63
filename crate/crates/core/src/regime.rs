//! Decision rules mapping a stage's covariates to an action.

use crate::error::{Error, Result};
use crate::trajectories::{Action, ResolvedFeatures};

/// What a regime sees at an informative stage.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    /// 1-based stage index.
    pub stage: usize,
    pub covariates: &'a [f64],
    /// Action actually taken, when known (observed data); `None` in simulation.
    pub observed: Option<Action>,
}

pub trait Regime: Sync {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Action;
}

impl<F> Regime for F
where
    F: Fn(&DecisionContext<'_>) -> Action + Sync,
{
    fn decide(&self, ctx: &DecisionContext<'_>) -> Action {
        self(ctx)
    }
}

/// `sign(psi' h)` with `sign(0) = +1`.
pub fn linear_action(psi: &[f64], h: &[f64]) -> Result<Action> {
    if psi.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: psi.len(),
            actual: h.len(),
        });
    }
    Ok(Action::from_score(psi.iter().zip(h).map(|(a, b)| a * b).sum()))
}

/// One decision vector used at every stage.
#[derive(Debug, Clone)]
pub struct LinearRegime {
    pub psi: Vec<f64>,
    pub features: ResolvedFeatures,
}

impl Regime for LinearRegime {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Action {
        let h = self.features.decision_vector(ctx.stage, ctx.covariates);
        Action::from_score(self.psi.iter().zip(&h).map(|(a, b)| a * b).sum())
    }
}

/// A separate decision vector per stage.
#[derive(Debug, Clone)]
pub struct StagewiseRegime {
    pub psi: Vec<Vec<f64>>,
    pub features: ResolvedFeatures,
}

impl Regime for StagewiseRegime {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Action {
        let h = self.features.decision_vector(ctx.stage, ctx.covariates);
        let psi = &self.psi[ctx.stage - 1];
        Action::from_score(psi.iter().zip(&h).map(|(a, b)| a * b).sum())
    }
}

/// Replays the observed action; `+1` where none was observed.
#[derive(Debug, Clone, Copy, Default)]
pub struct ObservedBehavior;

impl Regime for ObservedBehavior {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Action {
        ctx.observed.unwrap_or(Action::Plus)
    }
}

/// The same action at every stage.
#[derive(Debug, Clone, Copy)]
pub struct FixedRegime(pub Action);

impl Regime for FixedRegime {
    fn decide(&self, _ctx: &DecisionContext<'_>) -> Action {
        self.0
    }
}
