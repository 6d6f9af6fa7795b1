//! Every tunable of the pipeline in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beams::BeamOptions;
use crate::calib::CalibOptions;
use crate::error::{Error, Result};
use crate::prep::PrepOptions;
use crate::vitals::VitalOptions;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub calibration: CalibOptions,
    pub prep: PrepOptions,
    pub beams: BeamOptions,
    pub vitals: VitalOptions,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        self.prep.validate()?;
        self.beams.validate()?;
        self.vitals.validate()
    }

    /// Parse and validate. Missing keys take their defaults, unknown keys are
    /// rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
