//! Pipeline configuration: one JSON document bundling the per-stage
//! configs plus orchestration toggles. Every field has a default, so an
//! empty document `{}` (or no file at all) runs the standard pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use pouchreg::{EnergyConfig, RefineConfig, RigidConfig};

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Phase one: mask-guided rigid pre-alignment.
    pub rigid: RigidConfig,
    /// Phase two: multi-level deformable registration.
    pub nonrigid: EnergyConfig,
    /// Boundary refinement (used by `refine`, and by `register` when
    /// `refine_masks` is on).
    pub boundary: RefineConfig,
    /// Snap every ingested mask to image edges before using it.
    pub refine_masks: bool,
    /// Seed each frame's deformation lattices from the previous frame's
    /// solution instead of zeros (the rigid stage always warm-starts).
    pub warm_start_nonrigid: bool,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("config {}: {e}", path.display()))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| format!("config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.rigid.validate().map_err(|e| format!("config rigid: {e}"))?;
        self.nonrigid.validate().map_err(|e| format!("config nonrigid: {e}"))?;
        self.boundary.validate().map_err(|e| format!("config boundary: {e}"))?;
        Ok(())
    }
}
