use crate::dataset_io::{ComponentClass, DamageClass, Scene};
use crate::detector_backend::CascadeOutput;
use crate::fusion::{filter_detections, FusionConfig, RuleDecision};

pub const FEATURE_DIM: usize = 18;
/// Version tag of the layout below, stored in every model file.
pub const FEATURE_LAYOUT: &str = "ruinscore-features-v1";

/// Per-image meta-model input.
///
/// | idx | meaning |
/// |-----|---------|
/// | 0–3 | crack, spalling, raw rebar, validated rebar counts |
/// | 4–6 | confidence sums (crack, spalling, rebar) |
/// | 7–9 | max confidence per class, 0 if absent |
/// | 10  | total damage box area, clamped to 1 |
/// | 11  | 1 if inside, else 0 |
/// | 12–14 | beam, column, wall present |
/// | 15  | component count |
/// | 16  | rule score |
/// | 17  | rule level ordinal / 3 |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

/// Builds the feature vector from the same post-filter evidence the rule saw.
pub fn extract_features(
    out: &CascadeOutput,
    rule: &RuleDecision,
    config: &FusionConfig,
) -> FeatureVector {
    let mut f = [0.0; FEATURE_DIM];
    f[0] = rule.counts.n_crack as f64;
    f[1] = rule.counts.n_spall as f64;
    f[2] = rule.counts.n_rebar_raw as f64;
    f[3] = rule.counts.n_rebar_valid as f64;

    let kept = filter_detections(&out.damages, &out.scene, config);
    let mut area = 0.0;
    for d in &kept {
        let k = match d.class {
            DamageClass::Crack => 0,
            DamageClass::Spalling => 1,
            DamageClass::ExposedRebar => 2,
        };
        f[4 + k] += d.confidence;
        f[7 + k] = f64::max(f[7 + k], d.confidence);
        area += d.bbox.area();
    }
    f[10] = area.min(1.0);
    f[11] = if out.scene.class == Scene::Inside {
        1.0
    } else {
        0.0
    };
    for c in &out.components {
        let k = match c.class {
            ComponentClass::Beam => 0,
            ComponentClass::Column => 1,
            ComponentClass::Wall => 2,
        };
        f[12 + k] = 1.0;
    }
    f[15] = out.components.len() as f64;
    f[16] = rule.score;
    f[17] = rule.level.ordinal() as f64 / 3.0;
    FeatureVector(f)
}
