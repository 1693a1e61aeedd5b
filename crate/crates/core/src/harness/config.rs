use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerKind;
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::network::{Architecture, NetworkConfig};
use crate::objectives::LossWeights;
use crate::style::{AugmenterKind, StyleAugmenter, MIXSTYLE_OMEGA, RDS_EPSILON, RDS_MAX_TRIES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Single-branch network trained on class cross-entropy only.
    Erm,
    /// Dual-branch parameters, no independence term, no augmentation.
    ErmPlus,
    #[default]
    Full,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Self::Erm),
            "erm_plus" => Ok(Self::ErmPlus),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Erm => "erm",
            Self::ErmPlus => "erm_plus",
            Self::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row label; derived from the method and flags when absent.
    pub name: Option<String>,
    pub method: Method,
    pub use_independence: bool,
    pub use_consistency: bool,
    pub augmenter: AugmenterKind,
    pub rds_epsilon: f64,
    pub rds_max_tries: usize,
    pub mixstyle_omega: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    /// Samples per forward pass during evaluation.
    pub eval_chunk: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub target_domain: usize,
    pub network: NetworkConfig,
    pub loss: LossWeights,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            method: Method::Full,
            use_independence: true,
            use_consistency: true,
            augmenter: AugmenterKind::Rds,
            rds_epsilon: RDS_EPSILON,
            rds_max_tries: RDS_MAX_TRIES,
            mixstyle_omega: MIXSTYLE_OMEGA,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            steps: 1000,
            eval_interval: 50,
            eval_chunk: 250,
            val_fraction: 0.2,
            seed: 0,
            target_domain: 0,
            network: NetworkConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

/// What a config actually trains once the method overrides are applied.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPlan {
    pub network: NetworkConfig,
    pub weights: LossWeights,
    pub augmenter: Option<StyleAugmenter>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be positive".into()));
        }
        if self.eval_chunk == 0 {
            return Err(Error::Config("eval_chunk must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.rds_epsilon > 0.0) || self.rds_max_tries == 0 || !(self.mixstyle_omega > 0.0) {
            return Err(Error::Config("rds_epsilon, rds_max_tries and mixstyle_omega must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        self.loss.validate()?;
        self.network.validate()
    }

    /// Row label such as `full`, `erm` or `full-mixstyle-noindp`.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let mut s = self.method.to_string();
        if self.method == Method::Full {
            match self.augmenter {
                AugmenterKind::Rds => {}
                AugmenterKind::None => s.push_str("-noaug"),
                other => s.push_str(&format!("-{other}")),
            }
            if !self.use_independence {
                s.push_str("-noindp");
            } else if self.loss.independence_kind != Default::default() {
                s.push_str(&format!("-{}", self.loss.independence_kind));
            }
            if !self.use_consistency && self.augmenter != AugmenterKind::None {
                s.push_str("-nocons");
            }
        }
        s
    }

    /// Resolves method overrides and adopts the dataset's label spaces.
    pub fn plan(&self, dataset: &DomainDataset) -> Result<TrainingPlan> {
        self.validate()?;
        let mut network = self.network.clone();
        network.num_classes = dataset.num_classes();
        network.num_domains = dataset.num_domains();
        network.input = dataset.image_shape();
        let mut weights = self.loss;
        let mut augmenter =
            StyleAugmenter::from_kind(self.augmenter, self.rds_epsilon, self.mixstyle_omega);
        if let Some(StyleAugmenter::Rds { max_tries, .. }) = augmenter.as_mut() {
            *max_tries = self.rds_max_tries;
        }
        match self.method {
            Method::Erm => {
                network.architecture = Architecture::SingleBranch;
                weights.alpha = 0.0;
                weights.beta = 0.0;
                augmenter = None;
            }
            Method::ErmPlus => {
                network.architecture = Architecture::DualBranch;
                weights.alpha = 0.0;
                weights.beta = 0.0;
                augmenter = None;
            }
            Method::Full => {
                network.architecture = Architecture::DualBranch;
                if !self.use_independence {
                    weights.alpha = 0.0;
                }
                if !self.use_consistency || augmenter.is_none() {
                    weights.beta = 0.0;
                }
            }
        }
        network.validate()?;
        Ok(TrainingPlan {
            network,
            weights,
            augmenter,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex sha256 of the TOML rendering.
    pub fn digest(&self) -> Result<String> {
        Ok(crate::data::sha256_hex(self.to_toml()?.as_bytes()))
    }
}
