use std::path::Path;

use anyhow::{bail, Context, Result};
use ruinscore::detector_backend::BackendConfig;
use ruinscore::fusion::FusionConfig;
use serde_json::Value;

/// A config file: fusion settings plus an optional `backend` section for the
/// external detector process.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub fusion: FusionConfig,
    pub backend: Option<BackendConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text)?;
        let Some(obj) = doc.as_object_mut() else {
            bail!("config must be a JSON object");
        };
        let backend = match obj.remove("backend") {
            Some(v) => Some(serde_json::from_value::<BackendConfig>(v).context("backend section")?),
            None => None,
        };
        let fusion = FusionConfig::from_json(&doc.to_string())?;
        Ok(Self { fusion, backend })
    }
}
