//! Run configuration: everything a batch invocation needs, serializable to
//! and from TOML so a run can be reproduced from its manifest alone.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::ChainConfig;
use crate::model::Hyperparams;
use crate::partition::{PartitionLoss, DEFAULT_MERGE_KAPPA, DEFAULT_MERGE_MIN_FRACTION};

/// Which dataset columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatment: String,
    /// Covariate columns, in model order. Empty means: every column that is
    /// neither the outcome nor the treatment, in file order.
    pub covariates: Vec<String>,
    /// Covariate columns to additionally summarize by modal value.
    pub categorical: Vec<String>,
}

impl Default for ColumnRoles {
    fn default() -> Self {
        ColumnRoles {
            outcome: "y".to_string(),
            treatment: "t".to_string(),
            covariates: Vec::new(),
            categorical: Vec::new(),
        }
    }
}

/// Propensity-score matching options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub enabled: bool,
    /// Maximal |score difference| for a pair, in probability units.
    pub caliper: Option<f64>,
    /// Ridge penalty for the logistic propensity fit (0 = plain maximum
    /// likelihood).
    pub ridge: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig { enabled: false, caliper: None, ridge: 0.0 }
    }
}

/// Full batch-run configuration with documented defaults for every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input dataset (delimited text with a header row).
    pub input: PathBuf,
    /// Output directory; every artifact of a run lands beneath it.
    pub output_dir: PathBuf,
    pub columns: ColumnRoles,
    pub hyper: Hyperparams,
    pub chain: ChainConfig,
    /// Loss minimized for the partition point estimate.
    pub loss: PartitionLoss,
    pub matching: MatchingConfig,
    /// Scale multiplier for collapsing coinciding mixture components before
    /// partition summaries; non-positive disables the step.
    pub merge_kappa: f64,
    /// Fraction of the sample below which a component counts as a transient
    /// satellite during that collapse.
    pub merge_min_fraction: f64,
    /// Credible-interval level for posterior summaries.
    pub credible_level: f64,
    /// Worker threads for replicate-level parallelism; 0 = all available.
    /// One worker is the reproducibility reference (results do not depend
    /// on the count, only scheduling does).
    pub workers: usize,
}

/// Environment variable consulted for the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CDBMM_OUTPUT_DIR";

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: PathBuf::from("data.tsv"),
            output_dir: std::env::var_os(OUTPUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("cdbmm-out")),
            columns: ColumnRoles::default(),
            hyper: Hyperparams::default(),
            chain: ChainConfig::default(),
            loss: PartitionLoss::Vi,
            matching: MatchingConfig::default(),
            merge_kappa: DEFAULT_MERGE_KAPPA,
            merge_min_fraction: DEFAULT_MERGE_MIN_FRACTION,
            credible_level: 0.95,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.chain.validate()?;
        if !(0.0..1.0).contains(&self.credible_level) || self.credible_level <= 0.0 {
            return Err(Error::input(format!(
                "credible level must lie in (0, 1), got {}",
                self.credible_level
            )));
        }
        if !self.merge_min_fraction.is_finite() || !(0.0..=1.0).contains(&self.merge_min_fraction)
        {
            return Err(Error::input(format!(
                "merge_min_fraction must lie in [0, 1], got {}",
                self.merge_min_fraction
            )));
        }
        if let Some(c) = self.matching.caliper {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::input(format!("caliper must be positive, got {c}")));
            }
        }
        if self.matching.ridge < 0.0 || !self.matching.ridge.is_finite() {
            return Err(Error::input(format!(
                "ridge penalty must be non-negative, got {}",
                self.matching.ridge
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::input(format!("cannot serialize configuration: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::input(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::input(format!("cannot read configuration {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    /// Minor-component cutoff in units for a sample of size `n`.
    pub fn merge_min_size(&self, n: usize) -> usize {
        ((self.merge_min_fraction * n as f64).ceil() as usize).max(2)
    }
}
