//! Rule-based fusion of cascade evidence into a damage level.
//!
//! Exposed rebar that survives filtering and validation forces `Heavy`.
//! Otherwise the remaining detections are counted, weighted, and thresholded
//! into `Zero`, `Slight` or `Medium`. Version 2 of the rules adds a scene-aware
//! confidence floor, a minimum box area, co-evidence checks for rebar, and a
//! score discount when no structural component was found.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{
    read_text, BoundingBox, ComponentDetection, DamageClass, DamageDetection, DamageLevel, Scene,
    SceneLabel,
};
use crate::detector_backend::CascadeOutput;
use crate::meta::ClassProbs;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("decision mode {0} requires meta-model probabilities")]
    MissingMeta(DecisionMode),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVersion {
    #[default]
    V1,
    V2,
}

impl fmt::Display for FusionVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionVersion::V1 => "v1",
            FusionVersion::V2 => "v2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    #[default]
    RuleOnly,
    MetaOnly,
    Hybrid,
}

impl DecisionMode {
    pub fn needs_meta(self) -> bool {
        !matches!(self, DecisionMode::RuleOnly)
    }
}

impl fmt::Display for DecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecisionMode::RuleOnly => "rule_only",
            DecisionMode::MetaOnly => "meta_only",
            DecisionMode::Hybrid => "hybrid",
        })
    }
}

/// Score contributed by one detection of each class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub w_crack: f64,
    pub w_spall: f64,
    pub w_rebar: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            w_crack: 1.0,
            w_spall: 2.0,
            w_rebar: 3.0,
        }
    }
}

/// Scores below `t_slight` are Zero, below `t_medium` Slight, otherwise Medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub t_slight: f64,
    pub t_medium: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            t_slight: 1.0,
            t_medium: 4.0,
        }
    }
}

/// Version 2 parameters. Each of the three refinements can be switched off
/// on its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct V2Params {
    /// Confidence floor applied to every damage detection in indoor scenes.
    pub inside_conf_floor: f64,
    /// Detections with a smaller normalized box area are dropped.
    pub min_box_area: f64,
    pub rebar_conf_min: f64,
    /// IoU with some spalling box needed to accept a rebar detection...
    pub rebar_iou_min: f64,
    /// ...or the fraction of the rebar box covered by a component box.
    pub rebar_containment_min: f64,
    /// A component at or above this confidence counts as present.
    pub component_conf_min: f64,
    /// Score multiplier when no component is present.
    pub no_component_score_factor: f64,
    pub noise_filter: bool,
    pub rebar_validation: bool,
    pub component_bias: bool,
}

impl Default for V2Params {
    fn default() -> Self {
        Self {
            inside_conf_floor: 0.40,
            min_box_area: 0.0004,
            rebar_conf_min: 0.5,
            rebar_iou_min: 0.1,
            rebar_containment_min: 0.5,
            component_conf_min: 0.3,
            no_component_score_factor: 0.5,
            noise_filter: true,
            rebar_validation: true,
            component_bias: true,
        }
    }
}

/// Every tunable of the rule stage and the final decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub version: FusionVersion,
    pub weights: Weights,
    pub thresholds: Thresholds,
    pub conf_floor: f64,
    pub v2: V2Params,
    pub decision_mode: DecisionMode,
    /// Minimum top meta probability for Hybrid mode to follow the meta-model.
    /// Values above 1 make Hybrid behave like RuleOnly.
    pub hybrid_prob_gate: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            version: FusionVersion::V1,
            weights: Weights::default(),
            thresholds: Thresholds::default(),
            conf_floor: 0.25,
            v2: V2Params::default(),
            decision_mode: DecisionMode::RuleOnly,
            hybrid_prob_gate: 0.6,
        }
    }
}

impl FusionConfig {
    pub fn v2() -> Self {
        Self {
            version: FusionVersion::V2,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, FusionError> {
        let cfg: FusionConfig =
            serde_json::from_str(text).map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let text = read_text(path).map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |msg: String| Err(FusionError::InvalidConfig(msg));
        let w = &self.weights;
        for (name, v) in [
            ("weights.w_crack", w.w_crack),
            ("weights.w_spall", w.w_spall),
            ("weights.w_rebar", w.w_rebar),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        let t = &self.thresholds;
        if !(t.t_slight.is_finite()
            && t.t_medium.is_finite()
            && 0.0 <= t.t_slight
            && t.t_slight <= t.t_medium)
        {
            return bad("thresholds must satisfy 0 <= t_slight <= t_medium".into());
        }
        let v2 = &self.v2;
        for (name, v) in [
            ("conf_floor", self.conf_floor),
            ("v2.inside_conf_floor", v2.inside_conf_floor),
            ("v2.min_box_area", v2.min_box_area),
            ("v2.rebar_conf_min", v2.rebar_conf_min),
            ("v2.rebar_iou_min", v2.rebar_iou_min),
            ("v2.rebar_containment_min", v2.rebar_containment_min),
            ("v2.component_conf_min", v2.component_conf_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1]"));
            }
        }
        let beta = v2.no_component_score_factor;
        if !(beta > 0.0 && beta <= 1.0) {
            return bad("v2.no_component_score_factor must be in (0, 1]".into());
        }
        if !(self.hybrid_prob_gate.is_finite() && self.hybrid_prob_gate >= 0.0) {
            return bad("hybrid_prob_gate must be finite and >= 0".into());
        }
        Ok(())
    }

    fn noise_filter_on(&self) -> bool {
        self.version == FusionVersion::V2 && self.v2.noise_filter
    }

    fn rebar_validation_on(&self) -> bool {
        self.version == FusionVersion::V2 && self.v2.rebar_validation
    }

    fn component_bias_on(&self) -> bool {
        self.version == FusionVersion::V2 && self.v2.component_bias
    }
}

/// Records which rule steps changed the outcome for an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterTag {
    /// At least one detection fell below the base confidence floor.
    ConfFloor,
    /// At least one detection fell below the indoor confidence floor.
    SceneFloor,
    /// At least one detection had a box smaller than `min_box_area`.
    MinArea,
    /// At least one surviving rebar detection failed validation.
    RebarDemoted,
    /// The no-component score factor was applied.
    AmbiguityBias,
}

impl fmt::Display for FilterTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterTag::ConfFloor => "conf-floor",
            FilterTag::SceneFloor => "scene-floor",
            FilterTag::MinArea => "min-area",
            FilterTag::RebarDemoted => "rebar-demoted",
            FilterTag::AmbiguityBias => "ambiguity-bias",
        })
    }
}

/// Per-class counts over the detections that survived filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceCounts {
    pub n_crack: usize,
    pub n_spall: usize,
    pub n_rebar_raw: usize,
    pub n_rebar_valid: usize,
}

impl EvidenceCounts {
    pub fn n_rebar_unvalidated(&self) -> usize {
        self.n_rebar_raw - self.n_rebar_valid
    }
}

/// Outcome of the rule stage together with what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDecision {
    pub level: DamageLevel,
    /// Weighted score after the no-component factor, if that was applied.
    pub score: f64,
    pub counts: EvidenceCounts,
    pub rebar_forced: bool,
    pub applied_filters: Vec<FilterTag>,
}

impl RuleDecision {
    /// Recomputes the stored score from the counts alone.
    pub fn recompute_score(&self, config: &FusionConfig) -> f64 {
        let raw = weighted_score(
            self.counts.n_crack,
            self.counts.n_spall,
            self.counts.n_rebar_unvalidated(),
            config,
        );
        if self.applied_filters.contains(&FilterTag::AmbiguityBias) {
            raw * config.v2.no_component_score_factor
        } else {
            raw
        }
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Drops low-confidence (and in V2, scene-dependent and tiny) detections.
pub fn filter_detections(
    damages: &[DamageDetection],
    scene: &SceneLabel,
    config: &FusionConfig,
) -> Vec<DamageDetection> {
    filter_tagged(damages, scene, config).0
}

fn filter_tagged(
    damages: &[DamageDetection],
    scene: &SceneLabel,
    config: &FusionConfig,
) -> (Vec<DamageDetection>, Vec<FilterTag>) {
    let env = config.noise_filter_on();
    let indoor_floor = if env && scene.class == Scene::Inside {
        config.v2.inside_conf_floor
    } else {
        0.0
    };
    let min_area = if env { config.v2.min_box_area } else { 0.0 };

    let mut tags = Vec::new();
    let mut tag = |t: FilterTag| {
        if !tags.contains(&t) {
            tags.push(t);
        }
    };
    let kept = damages
        .iter()
        .filter(|d| {
            if d.confidence < config.conf_floor {
                tag(FilterTag::ConfFloor);
                false
            } else if d.confidence < indoor_floor {
                tag(FilterTag::SceneFloor);
                false
            } else if d.bbox.area() < min_area {
                tag(FilterTag::MinArea);
                false
            } else {
                true
            }
        })
        .copied()
        .collect();
    (kept, tags)
}

/// Decides whether a rebar detection is trustworthy enough to force Heavy.
pub fn validate_rebar(
    rebar: &DamageDetection,
    spalls: &[DamageDetection],
    components: &[ComponentDetection],
    config: &FusionConfig,
) -> bool {
    debug_assert_eq!(rebar.class, DamageClass::ExposedRebar);
    if !config.rebar_validation_on() {
        return rebar.confidence >= config.conf_floor;
    }
    let v2 = &config.v2;
    if rebar.confidence < v2.rebar_conf_min {
        return false;
    }
    let near_spall = spalls
        .iter()
        .filter(|s| s.class == DamageClass::Spalling)
        .any(|s| iou(&rebar.bbox, &s.bbox) >= v2.rebar_iou_min);
    let inside_component = components.iter().any(|c| {
        rebar.bbox.intersection_area(&c.bbox) / rebar.bbox.area() >= v2.rebar_containment_min
    });
    near_spall || inside_component
}

pub fn weighted_score(
    n_crack: usize,
    n_spall: usize,
    n_rebar_unvalidated: usize,
    config: &FusionConfig,
) -> f64 {
    let w = &config.weights;
    w.w_crack * n_crack as f64 + w.w_spall * n_spall as f64 + w.w_rebar * n_rebar_unvalidated as f64
}

/// Maps a score onto Zero/Slight/Medium.
pub fn level_for_score(score: f64, config: &FusionConfig) -> DamageLevel {
    let t = &config.thresholds;
    if score < t.t_slight {
        DamageLevel::Zero
    } else if score < t.t_medium {
        DamageLevel::Slight
    } else {
        DamageLevel::Medium
    }
}

pub fn rule_fusion(out: &CascadeOutput, config: &FusionConfig) -> RuleDecision {
    let (kept, mut tags) = filter_tagged(&out.damages, &out.scene, config);

    let spalls: Vec<DamageDetection> = kept
        .iter()
        .filter(|d| d.class == DamageClass::Spalling)
        .copied()
        .collect();
    let mut counts = EvidenceCounts {
        n_spall: spalls.len(),
        ..EvidenceCounts::default()
    };
    for d in &kept {
        match d.class {
            DamageClass::Crack => counts.n_crack += 1,
            DamageClass::Spalling => {}
            DamageClass::ExposedRebar => {
                counts.n_rebar_raw += 1;
                if validate_rebar(d, &spalls, &out.components, config) {
                    counts.n_rebar_valid += 1;
                }
            }
        }
    }
    if counts.n_rebar_valid < counts.n_rebar_raw {
        tags.push(FilterTag::RebarDemoted);
    }

    let mut score = weighted_score(
        counts.n_crack,
        counts.n_spall,
        counts.n_rebar_unvalidated(),
        config,
    );
    if config.component_bias_on()
        && !out
            .components
            .iter()
            .any(|c| c.confidence >= config.v2.component_conf_min)
    {
        score *= config.v2.no_component_score_factor;
        tags.push(FilterTag::AmbiguityBias);
    }

    let rebar_forced = counts.n_rebar_valid > 0;
    let level = if rebar_forced {
        DamageLevel::Heavy
    } else {
        level_for_score(score, config)
    };
    RuleDecision {
        level,
        score,
        counts,
        rebar_forced,
        applied_filters: tags,
    }
}

/// Combines the rule outcome with optional meta-model probabilities.
pub fn final_decision(
    rule: &RuleDecision,
    meta: Option<&ClassProbs>,
    config: &FusionConfig,
) -> Result<DamageLevel, FusionError> {
    let mode = config.decision_mode;
    match (mode, meta) {
        (DecisionMode::RuleOnly, _) => Ok(rule.level),
        (_, None) => Err(FusionError::MissingMeta(mode)),
        (DecisionMode::MetaOnly, Some(p)) => Ok(p.argmax()),
        (DecisionMode::Hybrid, Some(p)) => {
            let level = if p.max_prob() >= config.hybrid_prob_gate {
                p.argmax()
            } else {
                rule.level
            };
            if rule.rebar_forced {
                Ok(level.max(DamageLevel::Heavy))
            } else {
                Ok(level)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::{ComponentClass, Detection};
    use proptest::prelude::*;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    fn dmg(class: DamageClass, conf: f64) -> DamageDetection {
        Detection::new(class, bx(0.5, 0.5, 0.1, 0.1), conf).unwrap()
    }

    fn out(scene: Scene, damages: Vec<DamageDetection>) -> CascadeOutput {
        CascadeOutput {
            image_id: "t".into(),
            scene: SceneLabel::certain(scene),
            components: vec![],
            damages,
        }
    }

    #[test]
    fn iou_cases() {
        let b = bx(0.5, 0.5, 0.5, 0.5);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&bx(0.25, 0.5, 0.5, 0.5), &bx(0.75, 0.5, 0.5, 0.5)), 0.0);
        assert!((iou(&b, &bx(0.5, 0.5, 0.25, 0.25)) - 0.25).abs() < 1e-12);
        assert_eq!(iou(&bx(0.1, 0.1, 0.1, 0.1), &bx(0.9, 0.9, 0.1, 0.1)), 0.0);
    }

    #[test]
    fn filter_examples() {
        let v1 = FusionConfig::default();
        let scene = SceneLabel::certain(Scene::Outside);
        assert!(filter_detections(&[], &scene, &v1).is_empty());

        let kept = filter_detections(
            &[dmg(DamageClass::Crack, 0.2), dmg(DamageClass::Crack, 0.3)],
            &scene,
            &v1,
        );
        assert_eq!(kept, vec![dmg(DamageClass::Crack, 0.3)]);

        let v2 = FusionConfig::v2();
        let inside = SceneLabel::certain(Scene::Inside);
        let kept = filter_detections(
            &[
                dmg(DamageClass::Spalling, 0.3),
                dmg(DamageClass::Spalling, 0.5),
            ],
            &inside,
            &v2,
        );
        assert_eq!(kept, vec![dmg(DamageClass::Spalling, 0.5)]);
        // outdoors the indoor floor does not apply
        assert_eq!(
            filter_detections(&[dmg(DamageClass::Spalling, 0.3)], &scene, &v2).len(),
            1
        );
    }

    #[test]
    fn v2_drops_tiny_boxes() {
        let v2 = FusionConfig::v2();
        let tiny = Detection::new(DamageClass::Crack, bx(0.5, 0.5, 0.01, 0.01), 0.9).unwrap();
        let scene = SceneLabel::certain(Scene::Outside);
        assert!(filter_detections(&[tiny], &scene, &v2).is_empty());
        assert_eq!(
            filter_detections(&[tiny], &scene, &FusionConfig::default()).len(),
            1
        );
    }

    #[test]
    fn rebar_validation_examples() {
        let v2 = FusionConfig::v2();
        let rebar = Detection::new(DamageClass::ExposedRebar, bx(0.5, 0.5, 0.2, 0.2), 0.9).unwrap();
        // 0.2x0.2 vs 0.2x0.2 shifted by 0.1 horizontally: inter 0.1*0.2=0.02, union 0.06 → 1/3
        let spall = Detection::new(DamageClass::Spalling, bx(0.6, 0.5, 0.2, 0.2), 0.8).unwrap();
        assert!(iou(&rebar.bbox, &spall.bbox) >= 0.1);
        assert!(validate_rebar(&rebar, &[spall], &[], &v2));
        assert!(!validate_rebar(&rebar, &[], &[], &v2));

        let column = Detection::new(ComponentClass::Column, bx(0.5, 0.5, 0.4, 0.8), 0.9).unwrap();
        assert!(validate_rebar(&rebar, &[], &[column], &v2));

        let weak = Detection::new(DamageClass::ExposedRebar, bx(0.5, 0.5, 0.2, 0.2), 0.45).unwrap();
        assert!(!validate_rebar(&weak, &[spall], &[column], &v2));

        let v1 = FusionConfig::default();
        let r = dmg(DamageClass::ExposedRebar, 0.3);
        assert!(validate_rebar(&r, &[], &[], &v1));
    }

    #[test]
    fn weighted_score_examples() {
        let c = FusionConfig::default();
        assert_eq!(weighted_score(0, 0, 0, &c), 0.0);
        assert_eq!(weighted_score(2, 1, 0, &c), 4.0);
        assert_eq!(weighted_score(0, 0, 1, &c), 3.0);
    }

    #[test]
    fn rule_fusion_examples() {
        let v1 = FusionConfig::default();
        let d = rule_fusion(&out(Scene::Outside, vec![]), &v1);
        assert_eq!(d.level, DamageLevel::Zero);
        assert_eq!(d.score, 0.0);

        let d = rule_fusion(
            &out(Scene::Outside, vec![dmg(DamageClass::ExposedRebar, 0.9)]),
            &v1,
        );
        assert_eq!(d.level, DamageLevel::Heavy);
        assert!(d.rebar_forced);

        let d = rule_fusion(
            &out(Scene::Outside, vec![dmg(DamageClass::Crack, 0.8); 2]),
            &v1,
        );
        assert_eq!((d.level, d.score), (DamageLevel::Slight, 2.0));

        let d = rule_fusion(
            &out(
                Scene::Outside,
                vec![
                    dmg(DamageClass::Crack, 0.8),
                    dmg(DamageClass::Spalling, 0.8),
                    dmg(DamageClass::Spalling, 0.8),
                ],
            ),
            &v1,
        );
        assert_eq!((d.level, d.score), (DamageLevel::Medium, 5.0));
    }

    #[test]
    fn threshold_boundaries_are_inclusive_from_above() {
        let c = FusionConfig::default();
        assert_eq!(level_for_score(0.999, &c), DamageLevel::Zero);
        assert_eq!(level_for_score(1.0, &c), DamageLevel::Slight);
        assert_eq!(level_for_score(3.999, &c), DamageLevel::Slight);
        assert_eq!(level_for_score(4.0, &c), DamageLevel::Medium);
    }

    #[test]
    fn v2_demoted_rebar_still_scores_and_bias_applies() {
        let v2 = FusionConfig::v2();
        let d = rule_fusion(
            &out(Scene::Outside, vec![dmg(DamageClass::ExposedRebar, 0.9)]),
            &v2,
        );
        assert!(!d.rebar_forced);
        assert_eq!(d.counts.n_rebar_raw, 1);
        assert_eq!(d.counts.n_rebar_valid, 0);
        // 3.0 * β(0.5), no components present
        assert_eq!(d.score, 1.5);
        assert_eq!(d.level, DamageLevel::Slight);
        assert!(d.applied_filters.contains(&FilterTag::RebarDemoted));
        assert!(d.applied_filters.contains(&FilterTag::AmbiguityBias));
        assert_eq!(d.recompute_score(&v2), d.score);
    }

    #[test]
    fn v2_toggles_disable_refinements() {
        let mut cfg = FusionConfig::v2();
        cfg.v2.rebar_validation = false;
        cfg.v2.component_bias = false;
        let d = rule_fusion(
            &out(Scene::Outside, vec![dmg(DamageClass::ExposedRebar, 0.9)]),
            &cfg,
        );
        assert!(d.rebar_forced);
        assert!(d.applied_filters.is_empty());

        cfg.v2.noise_filter = false;
        let d = rule_fusion(
            &out(Scene::Inside, vec![dmg(DamageClass::Crack, 0.3)]),
            &cfg,
        );
        assert_eq!(d.counts.n_crack, 1);
    }

    fn probs(p: [f64; 4]) -> ClassProbs {
        ClassProbs::new(p).unwrap()
    }

    #[test]
    fn final_decision_examples() {
        let mut cfg = FusionConfig::default();
        let mut rule = rule_fusion(&out(Scene::Outside, vec![]), &cfg);
        rule.level = DamageLevel::Medium;
        assert_eq!(
            final_decision(&rule, None, &cfg).unwrap(),
            DamageLevel::Medium
        );

        cfg.decision_mode = DecisionMode::Hybrid;
        cfg.hybrid_prob_gate = 0.6;
        rule.level = DamageLevel::Slight;
        let p = probs([0.1, 0.1, 0.7, 0.1]);
        assert_eq!(
            final_decision(&rule, Some(&p), &cfg).unwrap(),
            DamageLevel::Medium
        );

        rule.level = DamageLevel::Heavy;
        rule.rebar_forced = true;
        let p = probs([0.7, 0.1, 0.1, 0.1]);
        assert_eq!(
            final_decision(&rule, Some(&p), &cfg).unwrap(),
            DamageLevel::Heavy
        );

        assert!(matches!(
            final_decision(&rule, None, &cfg),
            Err(FusionError::MissingMeta(DecisionMode::Hybrid))
        ));
    }

    #[test]
    fn meta_ties_prefer_higher_severity() {
        let cfg = FusionConfig {
            decision_mode: DecisionMode::MetaOnly,
            ..FusionConfig::default()
        };
        let rule = rule_fusion(&out(Scene::Outside, vec![]), &cfg);
        let p = probs([0.4, 0.4, 0.1, 0.1]);
        assert_eq!(
            final_decision(&rule, Some(&p), &cfg).unwrap(),
            DamageLevel::Slight
        );
        let p = probs([0.25; 4]);
        assert_eq!(
            final_decision(&rule, Some(&p), &cfg).unwrap(),
            DamageLevel::Heavy
        );
    }

    #[test]
    fn config_json_defaults_and_unknown_keys() {
        let cfg =
            FusionConfig::from_json(r#"{"version": "v2", "weights": {"w_crack": 0.5}}"#).unwrap();
        assert_eq!(cfg.version, FusionVersion::V2);
        assert_eq!(cfg.weights.w_crack, 0.5);
        assert_eq!(cfg.weights.w_spall, 2.0);
        assert_eq!(cfg.v2.no_component_score_factor, 0.5);

        assert!(FusionConfig::from_json(r#"{"weight": {}}"#).is_err());
        assert!(FusionConfig::from_json(r#"{"v2": {"beta": 0.3}}"#).is_err());
        assert!(
            FusionConfig::from_json(r#"{"thresholds": {"t_slight": 5, "t_medium": 4}}"#).is_err()
        );
        assert!(FusionConfig::from_json(r#"{"conf_floor": 1.5}"#).is_err());

        let round = FusionConfig::from_json(&cfg.to_json_string()).unwrap();
        assert_eq!(round, cfg);
    }

    fn arb_damage() -> impl Strategy<Value = DamageDetection> {
        (
            0usize..3,
            0.05f64..0.95,
            0.05f64..0.95,
            0.005f64..0.4,
            0.005f64..0.4,
            0.0f64..=1.0,
        )
            .prop_map(|(c, cx, cy, w, h, conf)| {
                Detection::new(
                    [
                        DamageClass::Crack,
                        DamageClass::Spalling,
                        DamageClass::ExposedRebar,
                    ][c],
                    bx(cx, cy, w, h),
                    conf,
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn explanation_is_self_consistent(
            dets in proptest::collection::vec(arb_damage(), 0..10),
            v2 in any::<bool>(),
            inside in any::<bool>(),
        ) {
            let cfg = if v2 { FusionConfig::v2() } else { FusionConfig::default() };
            let scene = if inside { Scene::Inside } else { Scene::Outside };
            let d = rule_fusion(&out(scene, dets), &cfg);
            prop_assert_eq!(d.recompute_score(&cfg), d.score);
            prop_assert!(d.score >= 0.0);
            prop_assert!(!d.rebar_forced || d.level == DamageLevel::Heavy);
        }
    }
}
