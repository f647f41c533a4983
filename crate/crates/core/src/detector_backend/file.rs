use std::path::PathBuf;

use super::{Backend, BackendError, Task};
use crate::dataset_io::{
    read_detection_file, ClassMap, ClassMaps, ComponentDetection, DamageDetection, DatasetManifest,
    Detection, DetectionClass, ImageEntry, Scene, SceneLabel,
};

/// Serves evidence from the detection files a manifest points at.
///
/// Never reads image bytes. Files ending in `.json` are read as detection
/// JSON, anything else as box text.
#[derive(Debug, Clone)]
pub struct FileBackend {
    root: PathBuf,
    class_maps: ClassMaps,
}

impl FileBackend {
    pub fn new(manifest: &DatasetManifest) -> Self {
        Self {
            root: manifest.root.clone(),
            class_maps: manifest.class_maps.clone(),
        }
    }

    fn read<C: DetectionClass>(
        &self,
        rel: &std::path::Path,
        class_map: &ClassMap<C>,
    ) -> Result<Vec<Detection<C>>, BackendError> {
        let path = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.root.join(rel)
        };
        Ok(read_detection_file(&path, class_map)?)
    }
}

impl Backend for FileBackend {
    /// Without a manifest override there is no scene evidence on disk; answer
    /// Outside with zero confidence, which no filter treats specially.
    fn scene(&mut self, _entry: &ImageEntry) -> Result<SceneLabel, BackendError> {
        Ok(SceneLabel {
            class: Scene::Outside,
            confidence: 0.0,
        })
    }

    fn components(&mut self, entry: &ImageEntry) -> Result<Vec<ComponentDetection>, BackendError> {
        match &entry.components_file {
            Some(p) => self.read(p, &self.class_maps.component),
            None => Ok(Vec::new()),
        }
    }

    fn damage(&mut self, entry: &ImageEntry) -> Result<Vec<DamageDetection>, BackendError> {
        match &entry.damage_file {
            Some(p) => self.read(p, &self.class_maps.damage),
            None => Err(BackendError::MissingEvidence(Task::Damage)),
        }
    }
}
