use std::path::Path;

use kinmix_core::potts::{McConfig, DEFAULT_BETA_MAX, DEFAULT_GRID_STEP};
use kinmix_core::scf::FitConfig;
use kinmix_core::skms::SkmsConfig;
use kinmix_core::smm::{McmcConfig, Priors, ProposalScales, DEFAULT_PROPOSAL_MULTIPLIER};
use kinmix_core::{io, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Squared frame duration over the image's total counts in that frame.
    Counts,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScfSection {
    pub weighting: Weighting,
    pub fit: FitConfig,
}

impl Default for ScfSection {
    fn default() -> Self {
        Self {
            weighting: Weighting::Counts,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmmSection {
    pub priors: Priors,
    /// Unscaled proposal standard deviations.
    pub scales: ProposalScales,
    pub multiplier: f64,
    pub mcmc: McmcConfig,
    /// Iteration count used for MAP-only runs.
    pub map_iterations: usize,
}

impl Default for SmmSection {
    fn default() -> Self {
        Self {
            priors: Priors::simulation(),
            scales: ProposalScales::simulation(),
            multiplier: DEFAULT_PROPOSAL_MULTIPLIER,
            mcmc: McmcConfig::full_posterior(3, 0),
            map_iterations: McmcConfig::map_only(3, 0).iterations,
        }
    }
}

impl SmmSection {
    pub fn effective_scales(&self) -> ProposalScales {
        self.scales.scaled(self.multiplier)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub beta_max: f64,
    pub step: f64,
    pub mc: McConfig,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            beta_max: DEFAULT_BETA_MAX,
            step: DEFAULT_GRID_STEP,
            mc: McConfig::default(),
        }
    }
}

/// Everything a fit needs beyond its inputs; each section falls back to defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scf: ScfSection,
    pub skms: SkmsConfig,
    pub smm: SmmSection,
    pub partition: PartitionSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: Self = match path {
            Some(p) => io::load_json(p)?,
            None => Self::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scf.fit.validate()?;
        self.skms.validate()?;
        self.smm.priors.validate()?;
        if !(self.smm.multiplier > 0.0 && self.smm.multiplier.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smm.multiplier must be positive, got {}",
                self.smm.multiplier
            )));
        }
        if self.smm.map_iterations == 0 {
            return Err(Error::InvalidArgument("smm.map_iterations must be >= 1".into()));
        }
        Ok(())
    }
}
