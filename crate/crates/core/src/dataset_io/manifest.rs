use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::types::{ComponentClass, DamageClass, DamageLevel, DetectionClass, Scene, SceneLabel};
use super::{read_text, reject_unknown_keys, DatasetError};

/// Integer id → class mapping for box text files. Always a bijection onto `C`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap<C> {
    by_id: BTreeMap<u32, C>,
}

impl<C: DetectionClass> ClassMap<C> {
    pub fn new(by_id: BTreeMap<u32, C>) -> Result<Self, String> {
        let distinct: HashSet<_> = by_id.values().map(|c| c.name()).collect();
        if by_id.len() != C::ALL.len() || distinct.len() != C::ALL.len() {
            return Err(format!(
                "{} class map must assign each of {} classes exactly once",
                C::KIND,
                C::ALL.len()
            ));
        }
        Ok(Self { by_id })
    }

    pub fn get(&self, id: u32) -> Option<C> {
        self.by_id.get(&id).copied()
    }

    pub fn id_of(&self, class: C) -> Option<u32> {
        self.by_id
            .iter()
            .find_map(|(id, c)| (*c == class).then_some(*id))
    }

    fn to_value(&self) -> Value {
        Value::Object(
            self.by_id
                .iter()
                .map(|(id, c)| (id.to_string(), Value::from(c.name())))
                .collect(),
        )
    }
}

impl<C: DetectionClass> Default for ClassMap<C> {
    /// Classes numbered in declaration order from 0.
    fn default() -> Self {
        Self {
            by_id: C::ALL
                .iter()
                .enumerate()
                .map(|(i, c)| (i as u32, *c))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassMaps {
    pub damage: ClassMap<DamageClass>,
    pub component: ClassMap<ComponentClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub id: String,
    pub image_path: Option<PathBuf>,
    pub ground_truth_level: Option<DamageLevel>,
    pub scene_override: Option<SceneLabel>,
    pub damage_file: Option<PathBuf>,
    pub components_file: Option<PathBuf>,
}

impl ImageEntry {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image_path: None,
            ground_truth_level: None,
            scene_override: None,
            damage_file: None,
            components_file: None,
        }
    }
}

/// Ordered image list plus the class maps used to decode box text.
///
/// Relative paths inside entries are resolved against `root`, the directory
/// holding the manifest file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub class_maps: ClassMaps,
    pub images: Vec<ImageEntry>,
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn get(&self, id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|e| e.id == id)
    }

    /// Serializes to the manifest JSON schema (pretty-printed, stable key order).
    pub fn to_json_string(&self) -> String {
        let images: Vec<Value> = self
            .images
            .iter()
            .map(|e| {
                let mut m = Map::new();
                m.insert("id".into(), Value::from(e.id.clone()));
                let path_str = |p: &PathBuf| Value::from(p.to_string_lossy().into_owned());
                if let Some(p) = &e.image_path {
                    m.insert("image_path".into(), path_str(p));
                }
                if let Some(l) = e.ground_truth_level {
                    m.insert("ground_truth_level".into(), Value::from(l.ordinal()));
                }
                if let Some(s) = e.scene_override {
                    m.insert("scene".into(), Value::from(s.class.name()));
                }
                if let Some(p) = &e.damage_file {
                    m.insert("damage_file".into(), path_str(p));
                }
                if let Some(p) = &e.components_file {
                    m.insert("components_file".into(), path_str(p));
                }
                Value::Object(m)
            })
            .collect();
        let doc = json!({
            "class_maps": {
                "damage": self.class_maps.damage.to_value(),
                "component": self.class_maps.component.to_value(),
            },
            "images": images,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("manifest always serializes");
        s.push('\n');
        s
    }
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = read_text(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, root)
}

/// Parses manifest JSON; `root` is the base for relative paths.
pub fn parse_manifest(text: &str, root: PathBuf) -> Result<DatasetManifest, DatasetError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| DatasetError::schema("$", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| DatasetError::schema("$", "expected an object"))?;
    reject_unknown_keys(obj, &["class_maps", "images"], "")?;

    let class_maps = match obj.get("class_maps") {
        None => ClassMaps::default(),
        Some(v) => parse_class_maps(v)?,
    };

    let items = obj
        .get("images")
        .ok_or_else(|| DatasetError::schema("images", "missing field"))?
        .as_array()
        .ok_or_else(|| DatasetError::schema("images", "expected an array"))?;

    let mut seen = HashSet::new();
    let mut images = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let entry = parse_entry(item, &format!("images[{i}]"))?;
        if !seen.insert(entry.id.clone()) {
            return Err(DatasetError::DuplicateImageId(entry.id));
        }
        images.push(entry);
    }

    Ok(DatasetManifest {
        root,
        class_maps,
        images,
    })
}

fn parse_class_maps(v: &Value) -> Result<ClassMaps, DatasetError> {
    let obj = v
        .as_object()
        .ok_or_else(|| DatasetError::schema("class_maps", "expected an object"))?;
    reject_unknown_keys(obj, &["damage", "component"], "class_maps")?;
    let mut maps = ClassMaps::default();
    if let Some(d) = obj.get("damage") {
        maps.damage = parse_class_map(d, "class_maps.damage")?;
    }
    if let Some(c) = obj.get("component") {
        maps.component = parse_class_map(c, "class_maps.component")?;
    }
    Ok(maps)
}

fn parse_class_map<C: DetectionClass>(v: &Value, path: &str) -> Result<ClassMap<C>, DatasetError> {
    let obj = v
        .as_object()
        .ok_or_else(|| DatasetError::schema(path, "expected an object"))?;
    let mut by_id = BTreeMap::new();
    for (k, name) in obj {
        let key_path = format!("{path}.{k}");
        let id: u32 = k
            .parse()
            .map_err(|_| DatasetError::schema(&key_path, "keys must be non-negative integers"))?;
        let class: C = name
            .as_str()
            .ok_or_else(|| DatasetError::schema(&key_path, "expected a class name"))?
            .parse()?;
        by_id.insert(id, class);
    }
    ClassMap::new(by_id).map_err(|e| DatasetError::schema(path, e))
}

fn parse_entry(item: &Value, path: &str) -> Result<ImageEntry, DatasetError> {
    let obj = item
        .as_object()
        .ok_or_else(|| DatasetError::schema(path, "expected an object"))?;
    reject_unknown_keys(
        obj,
        &[
            "id",
            "image_path",
            "ground_truth_level",
            "scene",
            "damage_file",
            "components_file",
        ],
        path,
    )?;

    let field = |key: &str| {
        (
            format!("{path}.{key}"),
            obj.get(key).filter(|v| !v.is_null()),
        )
    };
    let opt_str = |key: &str| -> Result<Option<String>, DatasetError> {
        match field(key) {
            (_, None) => Ok(None),
            (p, Some(v)) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| DatasetError::schema(p, "expected a string")),
        }
    };

    let id = match opt_str("id")? {
        Some(id) if !id.is_empty() => id,
        Some(_) => {
            return Err(DatasetError::schema(
                format!("{path}.id"),
                "must be nonempty",
            ))
        }
        None => return Err(DatasetError::schema(format!("{path}.id"), "missing field")),
    };

    let ground_truth_level = match field("ground_truth_level") {
        (_, None) => None,
        (p, Some(v)) => Some(
            v.as_u64()
                .and_then(DamageLevel::from_ordinal)
                .ok_or_else(|| DatasetError::schema(p, "expected an integer in 0..=3"))?,
        ),
    };

    let scene_override = match opt_str("scene")? {
        None => None,
        Some(s) => Some(SceneLabel::certain(s.parse::<Scene>().map_err(|_| {
            DatasetError::schema(
                format!("{path}.scene"),
                "expected \"inside\" or \"outside\"",
            )
        })?)),
    };

    Ok(ImageEntry {
        id,
        image_path: opt_str("image_path")?.map(PathBuf::from),
        ground_truth_level,
        scene_override,
        damage_file: opt_str("damage_file")?.map(PathBuf::from),
        components_file: opt_str("components_file")?.map(PathBuf::from),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetManifest, DatasetError> {
        parse_manifest(text, PathBuf::from("/data"))
    }

    #[test]
    fn empty_manifest() {
        let m = parse(r#"{"images": []}"#).unwrap();
        assert!(m.images.is_empty());
        assert_eq!(m.class_maps, ClassMaps::default());
        assert_eq!(m.class_maps.damage.get(2), Some(DamageClass::ExposedRebar));
        assert_eq!(m.class_maps.component.get(1), Some(ComponentClass::Column));
    }

    #[test]
    fn missing_id_names_the_field() {
        let err = parse(r#"{"images": [{"id": "a"}, {"damage_file": "x.txt"}]}"#).unwrap_err();
        match err {
            DatasetError::SchemaViolation { path, .. } => assert_eq!(path, "images[1].id"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse(r#"{"images": [{"id": "a"}, {"id": "a"}]}"#).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateImageId(id) if id == "a"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse(r#"{"images": [{"id": "a", "colour": "red"}]}"#).unwrap_err();
        assert!(
            matches!(err, DatasetError::SchemaViolation { ref path, .. } if path == "images[0].colour")
        );
        let err = parse(r#"{"images": [], "version": 2}"#).unwrap_err();
        assert!(matches!(err, DatasetError::SchemaViolation { ref path, .. } if path == "version"));
    }

    #[test]
    fn bad_level_and_scene() {
        let err = parse(r#"{"images": [{"id": "a", "ground_truth_level": 4}]}"#).unwrap_err();
        assert!(
            matches!(err, DatasetError::SchemaViolation { ref path, .. } if path == "images[0].ground_truth_level")
        );
        let err = parse(r#"{"images": [{"id": "a", "scene": "attic"}]}"#).unwrap_err();
        assert!(
            matches!(err, DatasetError::SchemaViolation { ref path, .. } if path == "images[0].scene")
        );
    }

    #[test]
    fn custom_class_map_must_be_bijective() {
        let ok = parse(
            r#"{"class_maps": {"damage": {"5": "rebar", "6": "crack", "7": "spalling"}}, "images": []}"#,
        )
        .unwrap();
        assert_eq!(ok.class_maps.damage.get(5), Some(DamageClass::ExposedRebar));
        assert_eq!(ok.class_maps.damage.id_of(DamageClass::Crack), Some(6));

        let err = parse(
            r#"{"class_maps": {"damage": {"0": "crack", "1": "crack", "2": "spalling"}}, "images": []}"#,
        )
        .unwrap_err();
        assert!(
            matches!(err, DatasetError::SchemaViolation { ref path, .. } if path == "class_maps.damage")
        );
    }

    #[test]
    fn serialization_reparses_identically() {
        let text = r#"{"images": [
            {"id": "a", "ground_truth_level": 2, "scene": "inside", "damage_file": "d/a.txt"},
            {"id": "b", "image_path": "img/b.jpg", "components_file": "c/b.txt"}
        ]}"#;
        let m = parse(text).unwrap();
        let again = parse(&m.to_json_string()).unwrap();
        assert_eq!(m, again);
        assert_eq!(
            m.resolve(Path::new("d/a.txt")),
            PathBuf::from("/data/d/a.txt")
        );
    }

    #[test]
    fn missing_manifest_file() {
        let err = load_manifest(Path::new("/definitely/not/here.json")).unwrap_err();
        assert!(matches!(err, DatasetError::MissingFile(_)));
    }
}
