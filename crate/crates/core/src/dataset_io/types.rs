//! Core evidence types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DatasetError;

/// Normalized, center-format bounding box.
///
/// All coordinates are fractions of the image frame. Degenerate boxes are
/// rejected at construction rather than clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, String> {
        for (name, v) in [("cx", cx), ("cy", cy), ("w", w), ("h", h)] {
            if !v.is_finite() {
                return Err(format!("{name} must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&cx) {
            return Err("cx must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&cy) {
            return Err("cy must be in [0, 1]".into());
        }
        if w <= 0.0 {
            return Err("w must be > 0".into());
        }
        if w > 1.0 {
            return Err("w must be <= 1".into());
        }
        if h <= 0.0 {
            return Err("h must be > 0".into());
        }
        if h > 1.0 {
            return Err("h must be <= 1".into());
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    /// Area of the overlap between two boxes; 0 when interiors are disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        iw * ih
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.cx, self.cy, self.w, self.h].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [cx, cy, w, h] = <[f64; 4]>::deserialize(d)?;
        BoundingBox::new(cx, cy, w, h).map_err(serde::de::Error::custom)
    }
}

/// A class vocabulary that detections can carry.
pub trait DetectionClass:
    Copy
    + Eq
    + Ord
    + fmt::Debug
    + fmt::Display
    + FromStr<Err = DatasetError>
    + Serialize
    + serde::de::DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Every variant, in canonical integer order.
    const ALL: &'static [Self];
    /// Human-readable name of the vocabulary, used in error messages.
    const KIND: &'static str;

    fn name(self) -> &'static str;
}

macro_rules! class_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $kind:literal { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl DetectionClass for $name {
            const ALL: &'static [Self] = &[$($name::$variant),+];
            const KIND: &'static str = $kind;

            fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = DatasetError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text $(| $alias)* => Ok($name::$variant),)+
                    other => Err(DatasetError::UnknownClass(other.to_string())),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

class_enum! {
    /// Damage types found by the damage detector.
    DamageClass, "damage" {
        Crack => "crack",
        Spalling => "spalling" | "spall",
        ExposedRebar => "rebar" | "exposed_rebar",
    }
}

class_enum! {
    /// Structural members found by the component detector.
    ComponentClass, "component" {
        Beam => "beam",
        Column => "column",
        Wall => "wall",
    }
}

class_enum! {
    /// Inside/outside scene classes.
    Scene, "scene" {
        Inside => "inside",
        Outside => "outside",
    }
}

/// One detector hit: class, normalized box and confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection<C> {
    pub class: C,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl<C: DetectionClass> Detection<C> {
    pub fn new(class: C, bbox: BoundingBox, confidence: f64) -> Result<Self, String> {
        check_confidence(confidence)?;
        Ok(Self {
            class,
            bbox,
            confidence,
        })
    }
}

pub type DamageDetection = Detection<DamageClass>;
pub type ComponentDetection = Detection<ComponentClass>;

pub(crate) fn check_confidence(c: f64) -> Result<(), String> {
    if c.is_finite() && (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err("confidence must be in [0, 1]".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneLabel {
    pub class: Scene,
    pub confidence: f64,
}

impl SceneLabel {
    pub fn new(class: Scene, confidence: f64) -> Result<Self, String> {
        check_confidence(confidence)?;
        Ok(Self { class, confidence })
    }

    /// A label known with full certainty, e.g. from the manifest.
    pub fn certain(class: Scene) -> Self {
        Self {
            class,
            confidence: 1.0,
        }
    }
}

/// Ordinal damage severity, 0 through 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DamageLevel {
    Zero = 0,
    Slight = 1,
    Medium = 2,
    Heavy = 3,
}

impl DamageLevel {
    pub const ALL: [DamageLevel; 4] = [
        DamageLevel::Zero,
        DamageLevel::Slight,
        DamageLevel::Medium,
        DamageLevel::Heavy,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: u64) -> Option<Self> {
        Self::ALL.get(usize::try_from(i).ok()?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DamageLevel::Zero => "zero",
            DamageLevel::Slight => "slight",
            DamageLevel::Medium => "medium",
            DamageLevel::Heavy => "heavy",
        }
    }

    /// Capitalized form used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            DamageLevel::Zero => "Zero",
            DamageLevel::Slight => "Slight",
            DamageLevel::Medium => "Medium",
            DamageLevel::Heavy => "Heavy",
        }
    }
}

impl fmt::Display for DamageLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DamageLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DamageLevel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown damage level {s:?}"))
    }
}

impl Serialize for DamageLevel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DamageLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Ordinal(u64),
        }
        match Repr::deserialize(d)? {
            Repr::Name(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Ordinal(i) => DamageLevel::from_ordinal(i)
                .ok_or_else(|| serde::de::Error::custom(format!("damage level {i} out of range"))),
        }
    }
}
