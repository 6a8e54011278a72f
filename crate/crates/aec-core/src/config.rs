//! One configuration file for the whole toolkit, one section per module.
//!
//! Files are TOML. Every section and every key is optional: omitted keys
//! fall back to the module defaults, so a file only needs to name what it
//! overrides. Unknown keys are rejected rather than silently ignored.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agc::AgcConfig;
use crate::error::{Error, Result};
use crate::mdf::MdfConfig;
use crate::nn::TrainConfig;
use crate::omlsa::OmlsaConfig;
use crate::synth::DatasetSpec;
use crate::tde::BankGeometry;

/// Stage switches and model locations for the streaming chain.
///
/// The enhancement stages depend on each other: the statistical denoiser
/// consumes the suppressor's speech probability, and the suppressor's mask
/// is smoothed with the coherence gain. Enabling a later stage therefore
/// requires every earlier one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub classifier_model: Option<PathBuf>,
    pub suppressor_model: Option<PathBuf>,
    pub nlp: bool,
    pub nn: bool,
    pub omlsa: bool,
    pub agc: bool,
    pub delay_hold: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            classifier_model: None,
            suppressor_model: None,
            nlp: true,
            nn: true,
            omlsa: true,
            agc: true,
            delay_hold: 5,
        }
    }
}

impl PipelineSection {
    /// Delay estimation alone: the output is the selected filter's error
    /// signal, untouched.
    pub fn tde_only() -> Self {
        Self {
            nlp: false,
            nn: false,
            omlsa: false,
            agc: false,
            ..Self::default()
        }
    }

    /// Delay estimation plus the coherence suppressor.
    pub fn nlp_only() -> Self {
        Self {
            nn: false,
            omlsa: false,
            agc: false,
            ..Self::default()
        }
    }

    /// Coherence suppressor smoothed with the learned mask.
    pub fn with_nn() -> Self {
        Self {
            omlsa: false,
            agc: false,
            ..Self::default()
        }
    }

    /// The full enhancement chain through the statistical denoiser.
    pub fn with_omlsa() -> Self {
        Self {
            agc: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nn && !self.nlp {
            return Err(Error::InvalidConfig(
                "the learned mask is smoothed with the coherence gain; enable nlp or disable nn"
                    .into(),
            ));
        }
        if self.omlsa && !self.nn {
            return Err(Error::InvalidConfig(
                "the denoiser needs the suppressor's speech probability; enable nn or disable \
                 omlsa"
                    .into(),
            ));
        }
        if self.delay_hold == 0 {
            return Err(Error::InvalidConfig("delay hold must be at least 1".into()));
        }
        Ok(())
    }
}

/// Every tunable in one place.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub bank: BankGeometry,
    pub mdf: MdfConfig,
    pub omlsa: OmlsaConfig,
    pub agc: AgcConfig,
    pub train: TrainConfig,
    pub synth: DatasetSpec,
    pub pipeline: PipelineSection,
}

impl ToolkitConfig {
    pub fn validate(&self) -> Result<()> {
        self.bank.validate()?;
        self.mdf.validate()?;
        self.omlsa.validate()?;
        self.agc.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.pipeline.validate()
    }

    /// Read and validate a TOML config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }

    /// The complete default configuration as TOML, with every key spelled
    /// out so a dumped file doubles as documentation.
    pub fn dump_defaults() -> String {
        toml::to_string_pretty(&Self::default()).expect("default config serializes")
    }
}
