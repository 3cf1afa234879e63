//! Versioned JSON files for fitted models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::censored_q::StagewiseQModel;
use crate::error::{Error, Result};
use crate::regime::Regime;
use crate::shared_o::{NuisanceSpec, SharedOModel};
use crate::shared_q::SharedQModel;
use crate::trajectories::FeatureSpec;

pub const FORMAT_NAME: &str = "sdtr-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FittedModel {
    Cq(StagewiseQModel),
    Csql(SharedQModel),
    Csol(SharedOModel),
}

impl FittedModel {
    pub fn method_name(&self) -> &'static str {
        match self {
            FittedModel::Cq(_) => "cq",
            FittedModel::Csql(_) => "csql",
            FittedModel::Csol(_) => "csol",
        }
    }

    pub fn feature_spec(&self) -> &FeatureSpec {
        match self {
            FittedModel::Cq(m) => &m.feature_spec,
            FittedModel::Csql(m) => &m.feature_spec,
            FittedModel::Csol(m) => &m.feature_spec,
        }
    }

    /// Decision rule over covariates in the order `covariate_names`.
    pub fn regime_for(&self, covariate_names: &[String]) -> Result<Box<dyn Regime>> {
        Ok(match self {
            FittedModel::Cq(m) => Box::new(m.regime_for(covariate_names)?),
            FittedModel::Csql(m) => Box::new(m.regime_for(covariate_names)?),
            FittedModel::Csol(m) => Box::new(m.regime_for(covariate_names)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub model: FittedModel,
    /// How censoring and propensity models were obtained for the fit.
    pub nuisance: NuisanceSpec,
}

impl ModelFile {
    pub fn new(model: FittedModel, nuisance: NuisanceSpec) -> Self {
        ModelFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            model,
            nuisance,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != FORMAT_NAME {
            return Err(Error::data("model file", format!("unknown format `{}`", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::data(
                "model file",
                format!("unsupported version {} (expected {FORMAT_VERSION})", file.version),
            ));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text).map_err(|e| e.context(path.as_ref().display().to_string()))
    }
}
