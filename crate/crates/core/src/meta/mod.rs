//! Meta-models trained on per-image fused evidence.
//!
//! [`extract_features`] turns a cascade output and its rule decision into a
//! fixed 18-entry vector; [`train_logreg`] and [`train_gbdt`] fit the two
//! supported model families on such vectors. Both trainers are deterministic.

mod features;
mod gbdt;
mod logreg;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset_io::{read_text, DamageLevel};

pub use features::{extract_features, FeatureVector, FEATURE_DIM, FEATURE_LAYOUT};
pub use gbdt::{predict_gbdt, train_gbdt, GbdtHyper, GbdtModel, Node, Tree};
pub use logreg::{
    logreg_loss_and_gradient, predict_logreg, train_logreg, LogRegHyper, LogRegModel,
};

pub const LOGREG_FORMAT: &str = "ruinscore-logreg-v1";
pub const GBDT_FORMAT: &str = "ruinscore-gbdt-v1";

const NUM_CLASSES: usize = 4;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no training data")]
    EmptyData,
    #[error("need at least {needed} samples, got {n}")]
    InsufficientData { n: usize, needed: usize },
    #[error("all training labels are {0}; only class priors can be learned")]
    DegenerateData(DamageLevel),
    #[error("loss became non-finite at iteration {0}; learning rate too large?")]
    NonFiniteLoss(usize),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("invalid model file: {0}")]
    Format(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Probability for each damage level, indexed by ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct ClassProbs([f64; NUM_CLASSES]);

impl ClassProbs {
    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self, String> {
        if p.iter()
            .any(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
        {
            return Err(format!("probabilities must lie in [0, 1]: {p:?}"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("probabilities sum to {sum}, not 1"));
        }
        Ok(Self(p))
    }

    /// Softmax of raw scores, stabilized by subtracting the maximum.
    pub fn softmax(logits: &[f64; NUM_CLASSES]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = logits.map(|l| (l - max).exp());
        let sum: f64 = p.iter().sum();
        for v in &mut p {
            *v /= sum;
        }
        Self(p)
    }

    pub fn uniform() -> Self {
        Self([0.25; NUM_CLASSES])
    }

    pub fn get(&self, level: DamageLevel) -> f64 {
        self.0[level.ordinal()]
    }

    pub fn as_array(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    /// Most probable level; ties go to the more severe level.
    pub fn argmax(&self) -> DamageLevel {
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if self.0[k] >= self.0[best] {
                best = k;
            }
        }
        DamageLevel::ALL[best]
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

impl TryFrom<[f64; NUM_CLASSES]> for ClassProbs {
    type Error = String;

    fn try_from(p: [f64; NUM_CLASSES]) -> Result<Self, Self::Error> {
        ClassProbs::new(p)
    }
}

impl From<ClassProbs> for [f64; NUM_CLASSES] {
    fn from(p: ClassProbs) -> Self {
        p.0
    }
}

/// Hyperparameters for both trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub logreg: LogRegHyper,
    pub gbdt: GbdtHyper,
    /// Unused by the current deterministic trainers; kept in the model file
    /// so that any future stochastic variant stays reproducible.
    pub seed: u64,
    /// Per-class loss weights, indexed by level ordinal.
    pub class_weights: [f64; NUM_CLASSES],
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            logreg: LogRegHyper::default(),
            gbdt: GbdtHyper::default(),
            seed: 0,
            class_weights: [1.0; NUM_CLASSES],
        }
    }
}

impl TrainHyper {
    fn check_class_weights(&self) -> Result<(), MetaError> {
        if self
            .class_weights
            .iter()
            .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(MetaError::InvalidHyper(
                "class weights must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A trained model together with the loss recorded during training.
///
/// For logistic regression the trace holds the loss before every step plus
/// the final loss; for boosting, the loss before the first round and after
/// each round.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub loss_trace: Vec<f64>,
}

impl<M> Trained<M> {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Either model family, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum MetaModel {
    LogReg(LogRegModel),
    Gbdt(GbdtModel),
}

impl MetaModel {
    pub fn predict(&self, x: &[f64]) -> Result<ClassProbs, MetaError> {
        match self {
            MetaModel::LogReg(m) => predict_logreg(m, x),
            MetaModel::Gbdt(m) => predict_gbdt(m, x),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MetaModel::LogReg(_) => "logreg",
            MetaModel::Gbdt(_) => "gbdt",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MetaModel::LogReg(m) => m.mean.len(),
            MetaModel::Gbdt(m) => m.dim,
        }
    }

    pub fn to_json_string(&self) -> String {
        let (format, model) = match self {
            MetaModel::LogReg(m) => (LOGREG_FORMAT, serde_json::to_value(m)),
            MetaModel::Gbdt(m) => (GBDT_FORMAT, serde_json::to_value(m)),
        };
        let doc = json!({
            "format": format,
            "feature_layout": FEATURE_LAYOUT,
            "model": model.expect("models always serialize"),
        });
        let mut s = serde_json::to_string(&doc).expect("models always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, MetaError> {
        let doc: Value =
            serde_json::from_str(text).map_err(|e| MetaError::Format(e.to_string()))?;
        let layout = doc.get("feature_layout").and_then(Value::as_str);
        if layout != Some(FEATURE_LAYOUT) {
            return Err(MetaError::Format(format!(
                "feature layout {layout:?} does not match {FEATURE_LAYOUT:?}"
            )));
        }
        let model = doc
            .get("model")
            .cloned()
            .ok_or_else(|| MetaError::Format("missing \"model\"".into()))?;
        let de = |e: serde_json::Error| MetaError::Format(e.to_string());
        match doc.get("format").and_then(Value::as_str) {
            Some(LOGREG_FORMAT) => {
                let m: LogRegModel = serde_json::from_value(model).map_err(de)?;
                m.check()?;
                Ok(MetaModel::LogReg(m))
            }
            Some(GBDT_FORMAT) => {
                let m: GbdtModel = serde_json::from_value(model).map_err(de)?;
                m.check()?;
                Ok(MetaModel::Gbdt(m))
            }
            other => Err(MetaError::Format(format!("unknown format {other:?}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), MetaError> {
        std::fs::write(path, self.to_json_string()).map_err(|e| MetaError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, MetaError> {
        let text = read_text(path).map_err(|e| MetaError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}

/// Fails with [`MetaError::DegenerateData`] when every label is the same.
///
/// The trainers themselves accept such data and fall back to priors; callers
/// that want a usable classifier check first.
pub fn require_label_variety(y: &[DamageLevel]) -> Result<(), MetaError> {
    match y.first() {
        None => Err(MetaError::EmptyData),
        Some(&first) if y.iter().all(|l| *l == first) => Err(MetaError::DegenerateData(first)),
        Some(_) => Ok(()),
    }
}

/// Checks a design matrix and label vector; returns the feature dimension.
fn check_data(x: &[Vec<f64>], y: &[DamageLevel]) -> Result<usize, MetaError> {
    let first = x.first().ok_or(MetaError::EmptyData)?;
    let d = first.len();
    if d == 0 {
        return Err(MetaError::DimensionMismatch {
            expected: FEATURE_DIM,
            found: 0,
        });
    }
    if y.len() != x.len() {
        return Err(MetaError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return Err(MetaError::DimensionMismatch {
            expected: d,
            found: row.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetaError::InvalidHyper("features must be finite".into()));
    }
    Ok(d)
}

fn check_input(x: &[f64], d: usize) -> Result<(), MetaError> {
    if x.len() != d {
        return Err(MetaError::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    Ok(())
}
