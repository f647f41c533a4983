//! Evidence sources for the detection cascade.
//!
//! A [`Backend`] answers three tasks per image: scene classification,
//! component detection and damage detection. [`run_cascade`] queries them in
//! that order and bundles the answers into a [`CascadeOutput`].

mod external;
mod file;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{
    ComponentDetection, DamageDetection, DatasetError, ImageEntry, SceneLabel,
};

pub use external::{BackendConfig, ExternalBackend, DEFAULT_TIMEOUT_SECS};
pub use file::FileBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Scene,
    Components,
    Damage,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Scene => "scene",
            Task::Components => "components",
            Task::Damage => "damage",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("no {0} evidence available")]
    MissingEvidence(Task),
    #[error("backend process exited (code {})", .0.map_or_else(|| "none".to_string(), |c| c.to_string()))]
    ProcessExited(Option<i32>),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("backend timed out after {}s", .0.as_secs_f64())]
    Timeout(Duration),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Everything the cascade learned about one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutput {
    pub image_id: String,
    pub scene: SceneLabel,
    pub components: Vec<ComponentDetection>,
    pub damages: Vec<DamageDetection>,
}

/// One wire request: which image, which task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendRequest {
    pub image: String,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendResponse {
    Scene(SceneLabel),
    Components(Vec<ComponentDetection>),
    Damage(Vec<DamageDetection>),
}

/// A source of per-image evidence. Each method is called at most once per image.
pub trait Backend {
    fn scene(&mut self, entry: &ImageEntry) -> Result<SceneLabel, BackendError>;
    fn components(&mut self, entry: &ImageEntry) -> Result<Vec<ComponentDetection>, BackendError>;
    fn damage(&mut self, entry: &ImageEntry) -> Result<Vec<DamageDetection>, BackendError>;
}

/// Runs scene, component and damage stages for one image, in that order.
///
/// A manifest scene override replaces the scene stage entirely, so the
/// backend is not asked for a scene it would not be allowed to decide.
pub fn run_cascade(
    entry: &ImageEntry,
    backend: &mut dyn Backend,
) -> Result<CascadeOutput, BackendError> {
    let scene = match entry.scene_override {
        Some(s) => s,
        None => backend.scene(entry)?,
    };
    let components = backend.components(entry)?;
    let damages = backend.damage(entry)?;
    Ok(CascadeOutput {
        image_id: entry.id.clone(),
        scene,
        components,
        damages,
    })
}
