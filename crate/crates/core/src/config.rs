//! Pipeline configuration: one JSON document covering every stage parameter.
//!
//! Unknown keys are rejected, and `validate` checks every module's bounds up
//! front so a bad config fails before any image work starts.

use serde::{Deserialize, Serialize};

use crate::coarse::CoarseParams;
use crate::error::{FusionError, Result};
use crate::flow::FlowParams;
use crate::fusion::FusionOperator;
use crate::masks::{DefocusParams, OcclusionParams, RejectionParams, UncertaintyParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub coarse: CoarseParams,
    pub flow: FlowParams,
    pub defocus: DefocusParams,
    pub occlusion: OcclusionParams,
    pub uncertainty: UncertaintyParams,
    pub rejection: RejectionParams,
    /// Fusion operator key; `"band_inject"` is the only built-in.
    pub fusion_operator: String,
    /// Feather sigma at the tele-FOV boundary, in wide pixels. `None` picks
    /// 1% of the crop's short side.
    pub boundary_sigma: Option<f64>,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
    /// Write intermediates (source, warped reference, masks, flow) next to
    /// the output even without an explicit dump directory request.
    pub dump_intermediates: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            coarse: CoarseParams::default(),
            flow: FlowParams::default(),
            defocus: DefocusParams::default(),
            occlusion: OcclusionParams::default(),
            uncertainty: UncertaintyParams::default(),
            rejection: RejectionParams::default(),
            fusion_operator: "band_inject".to_string(),
            boundary_sigma: None,
            threads: 0,
            dump_intermediates: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(json: &str) -> Result<PipelineConfig> {
        let config: PipelineConfig =
            serde_json::from_str(json).map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(FusionError::InvalidConfig(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.coarse.validate()?;
        self.flow.validate()?;
        self.defocus.validate()?;
        self.occlusion.validate()?;
        self.uncertainty.validate()?;
        self.rejection.validate()?;
        self.operator()?;
        if let Some(sigma) = self.boundary_sigma {
            if sigma < 0.0 {
                return Err(FusionError::InvalidConfig("boundary_sigma must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn operator(&self) -> Result<FusionOperator> {
        self.fusion_operator.parse()
    }
}
