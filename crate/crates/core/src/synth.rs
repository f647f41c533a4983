//! Deterministic synthetic datasets with known damage levels.
//!
//! Evidence is built by inverting the default V1 rule configuration
//! (weights 1/2/3, thresholds 1 and 4), so with noise switched off the rule
//! stage recovers every ground-truth level exactly. Heavy images get exposed
//! rebar framed by a larger spalling box and a containing column, which also
//! passes the V2 rebar checks.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64
//! (`rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64`). Two independent
//! streams are derived from the seed: one for clean evidence and one for
//! noise. The noise stream consumes the same draws whatever the noise rates
//! are, so raising a rate only ever adds corruption on top of what a lower
//! rate produced.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{
    format_box_text, BoundingBox, ClassMaps, ComponentClass, ComponentDetection, DamageClass,
    DamageDetection, DamageLevel, DatasetManifest, Detection, DetectionClass, ImageEntry, Scene,
    SceneLabel,
};

/// Mixed into the seed to derive the noise stream.
const NOISE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("failed to write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-image probability of one spurious damage detection.
    pub false_positive_rate: f64,
    /// Standard deviation of additive confidence noise.
    pub confidence_jitter_sd: f64,
    /// Per-detection probability that a true damage detection is lost.
    pub drop_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_images: usize,
    pub noise: NoiseSpec,
    pub level_priors: [f64; 4],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_images: 100,
            noise: NoiseSpec::default(),
            level_priors: [0.25; 4],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        let p = &self.level_priors;
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("level priors must be non-negative");
        }
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("level priors must sum to 1");
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.false_positive_rate) || !(0.0..=1.0).contains(&n.drop_rate) {
            return bad("noise rates must be in [0, 1]");
        }
        if !(n.confidence_jitter_sd.is_finite() && n.confidence_jitter_sd >= 0.0) {
            return bad("confidence_jitter_sd must be >= 0");
        }
        Ok(())
    }
}

/// One generated image, before serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub id: String,
    pub level: DamageLevel,
    pub scene: Scene,
    pub damages: Vec<DamageDetection>,
    pub components: Vec<ComponentDetection>,
}

fn round_to(v: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (v * f).round() / f
}

fn rand_box(rng: &mut impl Rng, size: (f64, f64)) -> BoundingBox {
    let cx = round_to(rng.gen_range(0.2..0.8), 4);
    let cy = round_to(rng.gen_range(0.2..0.8), 4);
    let w = round_to(rng.gen_range(size.0..size.1), 4);
    let h = round_to(rng.gen_range(size.0..size.1), 4);
    BoundingBox::new(cx, cy, w, h).expect("generated boxes are in range")
}

fn rand_conf(rng: &mut impl Rng) -> f64 {
    round_to(rng.gen_range(0.55..0.95), 3)
}

fn damage(rng: &mut impl Rng, class: DamageClass) -> DamageDetection {
    let b = rand_box(rng, (0.05, 0.3));
    Detection::new(class, b, rand_conf(rng)).expect("valid confidence")
}

/// Exposed rebar with a surrounding spall and a column containing both.
fn rebar_cluster(rng: &mut impl Rng) -> (DamageDetection, DamageDetection, ComponentDetection) {
    let r = rand_box(rng, (0.05, 0.15));
    let grow = |v: f64, k: f64| round_to((v * k).min(1.0), 4);
    let spall_box = BoundingBox::new(r.cx(), r.cy(), grow(r.w(), 1.25), grow(r.h(), 1.25))
        .expect("scaled box in range");
    let column_box = BoundingBox::new(r.cx(), r.cy(), grow(r.w(), 2.0), grow(r.h(), 4.0))
        .expect("scaled box in range");
    (
        Detection::new(DamageClass::ExposedRebar, r, rand_conf(rng)).unwrap(),
        Detection::new(DamageClass::Spalling, spall_box, rand_conf(rng)).unwrap(),
        Detection::new(ComponentClass::Column, column_box, rand_conf(rng)).unwrap(),
    )
}

fn draw_level(rng: &mut impl Rng, priors: &[f64; 4]) -> DamageLevel {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (level, p) in DamageLevel::ALL.iter().zip(priors) {
        acc += p;
        if u < acc {
            return *level;
        }
    }
    // rounding left a sliver above the last cumulative sum
    *DamageLevel::ALL
        .iter()
        .zip(priors)
        .rev()
        .find(|(_, p)| **p > 0.0)
        .map(|(l, _)| l)
        .unwrap_or(&DamageLevel::Zero)
}

/// Crack/spall counts whose default V1 score lands in the level's band.
fn counts_for(rng: &mut impl Rng, level: DamageLevel) -> (usize, usize) {
    match level {
        DamageLevel::Zero => (0, 0),
        DamageLevel::Slight => match rng.gen_range(0..2) {
            0 => (rng.gen_range(1..=3), 0),
            _ => (rng.gen_range(0..=1), 1),
        },
        DamageLevel::Medium => match rng.gen_range(0..3) {
            0 => (rng.gen_range(4..=5), 0),
            1 => (rng.gen_range(2..=3), 1),
            _ => (rng.gen_range(0..=2), rng.gen_range(2..=3)),
        },
        DamageLevel::Heavy => (rng.gen_range(0..=2), 0),
    }
}

fn clean_image(rng: &mut impl Rng, index: usize, priors: &[f64; 4]) -> SynthImage {
    let level = draw_level(rng, priors);
    let scene = if rng.gen_bool(0.5) {
        Scene::Inside
    } else {
        Scene::Outside
    };

    let mut components = Vec::new();
    for _ in 0..rng.gen_range(1..=2) {
        let class = ComponentClass::ALL[rng.gen_range(0..3)];
        let b = rand_box(rng, (0.2, 0.6));
        components.push(Detection::new(class, b, rand_conf(rng)).unwrap());
    }

    let (n_crack, n_spall) = counts_for(rng, level);
    let mut damages = Vec::new();
    for _ in 0..n_crack {
        damages.push(damage(rng, DamageClass::Crack));
    }
    for _ in 0..n_spall {
        damages.push(damage(rng, DamageClass::Spalling));
    }
    if level == DamageLevel::Heavy {
        for _ in 0..rng.gen_range(1..=2) {
            let (rebar, spall, column) = rebar_cluster(rng);
            damages.push(rebar);
            damages.push(spall);
            components.push(column);
        }
    }

    SynthImage {
        id: format!("img_{index:05}"),
        level,
        scene,
        damages,
        components,
    }
}

fn apply_noise(rng: &mut impl Rng, img: &mut SynthImage, noise: &NoiseSpec) {
    // every draw happens regardless of the rates
    let fp_u: f64 = rng.gen();
    let fp_class = DamageClass::ALL[rng.gen_range(0..3)];
    let fp_box = rand_box(rng, (0.05, 0.3));
    let fp_conf = round_to(rng.gen_range(0.3..0.9), 3);

    let mut kept = Vec::with_capacity(img.damages.len() + 1);
    for d in &img.damages {
        let drop_u: f64 = rng.gen();
        let z: f64 = rng.sample(StandardNormal);
        if drop_u < noise.drop_rate {
            continue;
        }
        let mut d = *d;
        if noise.confidence_jitter_sd > 0.0 {
            d.confidence = round_to(
                (d.confidence + noise.confidence_jitter_sd * z).clamp(0.0, 1.0),
                3,
            );
        }
        kept.push(d);
    }
    if fp_u < noise.false_positive_rate {
        kept.push(Detection::new(fp_class, fp_box, fp_conf).unwrap());
    }
    img.damages = kept;
}

/// Generates images in memory. Fully determined by `spec`.
pub fn synthesize(spec: &SynthSpec) -> Result<Vec<SynthImage>, SynthError> {
    spec.validate()?;
    let mut clean_rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut noise_rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed ^ NOISE_STREAM);
    Ok((0..spec.n_images)
        .map(|i| {
            let mut img = clean_image(&mut clean_rng, i, &spec.level_priors);
            apply_noise(&mut noise_rng, &mut img, &spec.noise);
            img
        })
        .collect())
}

fn write(path: &Path, contents: &str) -> Result<(), SynthError> {
    fs::write(path, contents).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `manifest.json`, `damage/<id>.txt` and `components/<id>.txt`
/// under `out_dir` and returns the manifest.
pub fn gen_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    let images = synthesize(spec)?;
    for sub in ["damage", "components"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|source| SynthError::Io { path: dir, source })?;
    }

    let class_maps = ClassMaps::default();
    let mut entries = Vec::with_capacity(images.len());
    for img in &images {
        let damage_rel = PathBuf::from(format!("damage/{}.txt", img.id));
        let comp_rel = PathBuf::from(format!("components/{}.txt", img.id));
        write(
            &out_dir.join(&damage_rel),
            &format_box_text(&img.damages, &class_maps.damage),
        )?;
        write(
            &out_dir.join(&comp_rel),
            &format_box_text(&img.components, &class_maps.component),
        )?;
        entries.push(ImageEntry {
            id: img.id.clone(),
            image_path: None,
            ground_truth_level: Some(img.level),
            scene_override: Some(SceneLabel::certain(img.scene)),
            damage_file: Some(damage_rel),
            components_file: Some(comp_rel),
        });
    }

    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        class_maps,
        images: entries,
    };
    write(&out_dir.join("manifest.json"), &manifest.to_json_string())?;
    Ok(manifest)
}
