//! Dataset manifests and detection/annotation file parsing.
//!
//! Two detection encodings are supported:
//!
//! * box text: one `class_id cx cy w h [conf]` line per detection, `#` comments,
//!   center-format normalized coordinates, confidence defaulting to 1.0;
//! * detection JSON: `{"detections": [{"class": name, "box": [cx,cy,w,h], "confidence": c}]}`.

mod manifest;
mod types;

use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{
    load_manifest, parse_manifest, ClassMap, ClassMaps, DatasetManifest, ImageEntry,
};
pub use types::{
    BoundingBox, ComponentClass, ComponentDetection, DamageClass, DamageDetection, DamageLevel,
    Detection, DetectionClass, Scene, SceneLabel,
};

use serde_json::{Map, Value};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("failed to read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at {path}: {detail}")]
    SchemaViolation { path: String, detail: String },
    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
}

impl DatasetError {
    pub(crate) fn schema(path: impl Into<String>, detail: impl Into<String>) -> Self {
        DatasetError::SchemaViolation {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

/// Reads a file to a string, distinguishing "not there" from other I/O failures.
pub fn read_text(path: &std::path::Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

/// Parses box text: one detection per nonempty, non-comment line.
pub fn parse_box_text<C: DetectionClass>(
    text: &str,
    class_map: &ClassMap<C>,
) -> Result<Vec<Detection<C>>, DatasetError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |reason: String| DatasetError::BadLine { line, reason };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(bad(format!(
                "expected 5 or 6 fields, found {}",
                fields.len()
            )));
        }
        let class_id: u32 = fields[0].parse().map_err(|_| {
            bad(format!(
                "class id {:?} is not a non-negative integer",
                fields[0]
            ))
        })?;
        let class = class_map
            .get(class_id)
            .ok_or_else(|| bad(format!("class id {class_id} not in {} class map", C::KIND)))?;
        let mut nums = [0.0f64; 5];
        nums[4] = 1.0;
        for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|_| bad(format!("{field:?} is not a number")))?;
        }
        let [cx, cy, w, h, conf] = nums;
        let bbox = BoundingBox::new(cx, cy, w, h).map_err(bad)?;
        out.push(Detection::new(class, bbox, conf).map_err(bad)?);
    }
    Ok(out)
}

/// Renders detections back to box text, inverse of [`parse_box_text`].
pub fn format_box_text<C: DetectionClass>(
    dets: &[Detection<C>],
    class_map: &ClassMap<C>,
) -> String {
    let mut s = String::new();
    for d in dets {
        let id = class_map
            .id_of(d.class)
            .expect("class maps are bijections onto their enums");
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            id,
            d.bbox.cx(),
            d.bbox.cy(),
            d.bbox.w(),
            d.bbox.h(),
            d.confidence
        ));
    }
    s
}

/// Reads a detection file: detection JSON if the name ends in `.json`,
/// box text otherwise.
pub fn read_detection_file<C: DetectionClass>(
    path: &std::path::Path,
    class_map: &ClassMap<C>,
) -> Result<Vec<Detection<C>>, DatasetError> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        parse_json_detections(&text)
    } else {
        parse_box_text(&text, class_map)
    }
}

/// Parses the detection JSON document.
pub fn parse_json_detections<C: DetectionClass>(
    text: &str,
) -> Result<Vec<Detection<C>>, DatasetError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| DatasetError::schema("$", format!("invalid JSON: {e}")))?;
    detections_from_value(&value)
}

pub(crate) fn detections_from_value<C: DetectionClass>(
    value: &Value,
) -> Result<Vec<Detection<C>>, DatasetError> {
    let obj = value
        .as_object()
        .ok_or_else(|| DatasetError::schema("$", "expected an object"))?;
    reject_unknown_keys(obj, &["detections"], "")?;
    let items = obj
        .get("detections")
        .ok_or_else(|| DatasetError::schema("detections", "missing field"))?
        .as_array()
        .ok_or_else(|| DatasetError::schema("detections", "expected an array"))?;

    items
        .iter()
        .enumerate()
        .map(|(i, item)| detection_from_value(item, &format!("detections[{i}]")))
        .collect()
}

fn detection_from_value<C: DetectionClass>(
    item: &Value,
    path: &str,
) -> Result<Detection<C>, DatasetError> {
    let obj = item
        .as_object()
        .ok_or_else(|| DatasetError::schema(path, "expected an object"))?;
    reject_unknown_keys(obj, &["class", "box", "confidence"], path)?;

    let class_path = format!("{path}.class");
    let class: C = obj
        .get("class")
        .ok_or_else(|| DatasetError::schema(&class_path, "missing field"))?
        .as_str()
        .ok_or_else(|| DatasetError::schema(&class_path, "expected a string"))?
        .parse()?;

    let box_path = format!("{path}.box");
    let coords = obj
        .get("box")
        .ok_or_else(|| DatasetError::schema(&box_path, "missing field"))?
        .as_array()
        .filter(|a| a.len() == 4)
        .ok_or_else(|| DatasetError::schema(&box_path, "expected [cx, cy, w, h]"))?;
    let mut c = [0.0; 4];
    for (slot, v) in c.iter_mut().zip(coords) {
        *slot = v
            .as_f64()
            .ok_or_else(|| DatasetError::schema(&box_path, "coordinates must be numbers"))?;
    }
    let bbox =
        BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(|e| DatasetError::schema(&box_path, e))?;

    let conf_path = format!("{path}.confidence");
    let confidence = match obj.get("confidence") {
        None => 1.0,
        Some(v) => v
            .as_f64()
            .ok_or_else(|| DatasetError::schema(&conf_path, "expected a number"))?,
    };
    Detection::new(class, bbox, confidence).map_err(|e| DatasetError::schema(conf_path, e))
}

/// Serializes detections to the detection JSON document.
pub fn to_json_detections<C: DetectionClass>(dets: &[Detection<C>]) -> String {
    #[derive(serde::Serialize)]
    struct Doc<'a, C: DetectionClass> {
        detections: &'a [Detection<C>],
    }
    serde_json::to_string(&Doc { detections: dets }).expect("detections always serialize")
}

pub(crate) fn reject_unknown_keys(
    obj: &Map<String, Value>,
    allowed: &[&str],
    path: &str,
) -> Result<(), DatasetError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => {
            let full = if path.is_empty() {
                k.clone()
            } else {
                format!("{path}.{k}")
            };
            Err(DatasetError::schema(full, "unknown key"))
        }
        None => Ok(()),
    }
}
