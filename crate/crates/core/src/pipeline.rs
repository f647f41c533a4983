//! End-to-end assessment: cascade, rule fusion, optional meta-model, final
//! decision, and scoring against manifest ground truth.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{DamageLevel, DatasetManifest, ImageEntry, SceneLabel};
use crate::detector_backend::{run_cascade, Backend, BackendError};
use crate::evaluate::{compute_metrics, confusion_matrix, EvalError, EvalReport};
use crate::fusion::{
    final_decision, rule_fusion, DecisionMode, EvidenceCounts, FilterTag, FusionConfig,
    FusionError, FusionVersion,
};
use crate::meta::{extract_features, ClassProbs, MetaError, MetaModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("image {id}: {source}")]
    Backend {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error("image {id}: {source}")]
    Fusion {
        id: String,
        #[source]
        source: FusionError,
    },
    #[error("image {id}: {source}")]
    Meta {
        id: String,
        #[source]
        source: MetaError,
    },
    #[error("no assessed image has a ground-truth level in the manifest")]
    NoGroundTruth,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    pub fn image_id(&self) -> Option<&str> {
        match self {
            PipelineError::Backend { id, .. }
            | PipelineError::Fusion { id, .. }
            | PipelineError::Meta { id, .. } => Some(id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSummary {
    pub level: DamageLevel,
    pub score: f64,
    pub rebar_forced: bool,
    pub filters: Vec<FilterTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSummary {
    pub kind: String,
    pub probs: ClassProbs,
    pub level: DamageLevel,
}

/// Which decision path produced a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub version: FusionVersion,
    pub mode: DecisionMode,
    pub hybrid_prob_gate: f64,
}

/// One line of assessment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentRecord {
    pub image_id: String,
    pub scene: SceneLabel,
    pub counts: EvidenceCounts,
    pub rule: RuleSummary,
    pub meta: Option<MetaSummary>,
    #[serde(rename = "final")]
    pub final_level: DamageLevel,
    pub setup: Setup,
}

impl AssessmentRecord {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("records always serialize");
        s.push('\n');
        s
    }

    /// Labels used in report tables for this record's decision path.
    pub fn report_labels(&self) -> (String, String, String) {
        let rule = format!("Rule Fusion {}", self.setup.version);
        let meta = match self.meta.as_ref().map(|m| m.kind.as_str()) {
            Some("logreg") => "Logistic Regression",
            Some("gbdt") => "Gradient Boosted Trees",
            _ => "Meta-Model",
        };
        let (method, model_type) = match self.setup.mode {
            DecisionMode::RuleOnly => ("Final Decision", rule),
            DecisionMode::MetaOnly => ("Meta-Model Decision", meta.to_string()),
            DecisionMode::Hybrid => ("Hybrid Decision", format!("{rule}+{meta}")),
        };
        let mut tag = format!("{}/{}", self.setup.version, self.setup.mode);
        if let Some(m) = &self.meta {
            tag.push('/');
            tag.push_str(&m.kind);
        }
        (tag, method.to_string(), model_type)
    }
}

/// Assesses one image.
pub fn assess_entry(
    entry: &ImageEntry,
    backend: &mut dyn Backend,
    config: &FusionConfig,
    meta: Option<&MetaModel>,
) -> Result<AssessmentRecord, PipelineError> {
    let id = || entry.id.clone();
    let out = run_cascade(entry, backend)
        .map_err(|source| PipelineError::Backend { id: id(), source })?;
    let rule = rule_fusion(&out, config);

    let meta_summary = match meta {
        Some(model) => {
            let x = extract_features(&out, &rule, config);
            let probs = model
                .predict(x.as_slice())
                .map_err(|source| PipelineError::Meta { id: id(), source })?;
            Some(MetaSummary {
                kind: model.kind().to_string(),
                probs,
                level: probs.argmax(),
            })
        }
        None => None,
    };
    let final_level = final_decision(&rule, meta_summary.as_ref().map(|m| &m.probs), config)
        .map_err(|source| PipelineError::Fusion { id: id(), source })?;

    Ok(AssessmentRecord {
        image_id: out.image_id,
        scene: out.scene,
        counts: rule.counts,
        rule: RuleSummary {
            level: rule.level,
            score: rule.score,
            rebar_forced: rule.rebar_forced,
            filters: rule.applied_filters,
        },
        meta: meta_summary,
        final_level,
        setup: Setup {
            version: config.version,
            mode: config.decision_mode,
            hybrid_prob_gate: config.hybrid_prob_gate,
        },
    })
}

/// Builds one backend per worker.
pub type BackendFactory<'a> = dyn Fn() -> Result<Box<dyn Backend>, BackendError> + Sync + 'a;

/// Assesses every manifest entry and hands results to `emit` in manifest
/// order, whatever order the workers finish in.
///
/// `emit` returns `false` to stop early; no further results are delivered
/// after that. With `jobs <= 1` everything runs on the calling thread.
pub fn assess_manifest(
    manifest: &DatasetManifest,
    make_backend: &BackendFactory<'_>,
    config: &FusionConfig,
    meta: Option<&MetaModel>,
    jobs: usize,
    mut emit: impl FnMut(&ImageEntry, Result<AssessmentRecord, PipelineError>) -> bool,
) {
    let images = &manifest.images;
    if images.is_empty() {
        return;
    }
    let spawn_error = |entry: &ImageEntry, source| PipelineError::Backend {
        id: entry.id.clone(),
        source,
    };

    if jobs <= 1 {
        let mut backend = match make_backend() {
            Ok(b) => b,
            Err(e) => {
                emit(&images[0], Err(spawn_error(&images[0], e)));
                return;
            }
        };
        for entry in images {
            if !emit(entry, assess_entry(entry, backend.as_mut(), config, meta)) {
                return;
            }
        }
        return;
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<AssessmentRecord, PipelineError>)>();
    thread::scope(|scope| {
        for _ in 0..jobs.min(images.len()) {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || {
                let mut backend = None;
                loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(entry) = images.get(i) else { break };
                    if backend.is_none() {
                        match make_backend() {
                            Ok(b) => backend = Some(b),
                            Err(e) => {
                                let _ = tx.send((i, Err(spawn_error(entry, e))));
                                break;
                            }
                        }
                    }
                    let b = backend.as_mut().expect("backend initialised above");
                    let res = assess_entry(entry, b.as_mut(), config, meta);
                    if tx.send((i, res)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut cursor = 0;
        'recv: for (i, res) in rx.iter() {
            pending.insert(i, res);
            while let Some(res) = pending.remove(&cursor) {
                let keep_going = emit(&images[cursor], res);
                cursor += 1;
                if !keep_going {
                    stop.store(true, Ordering::Relaxed);
                    break 'recv;
                }
            }
        }
    });
}

/// Scores records against manifest ground truth.
///
/// Records whose image is absent from the manifest or lacks a ground-truth
/// level are skipped.
pub fn score_records(
    records: &[AssessmentRecord],
    manifest: &DatasetManifest,
) -> Result<EvalReport, PipelineError> {
    let pairs: Vec<(DamageLevel, DamageLevel)> = records
        .iter()
        .filter_map(|r| {
            let gt = manifest.get(&r.image_id)?.ground_truth_level?;
            Some((gt, r.final_level))
        })
        .collect();
    if pairs.is_empty() {
        return Err(PipelineError::NoGroundTruth);
    }
    let report = compute_metrics(&confusion_matrix(pairs))?;
    let (tag, method, model_type) = records[0].report_labels();
    Ok(report.with_labels(tag, method, model_type))
}

/// Runs cascade and rules over every entry with ground truth and returns the
/// meta-model design matrix and labels.
pub fn build_training_set(
    manifest: &DatasetManifest,
    backend: &mut dyn Backend,
    config: &FusionConfig,
) -> Result<(Vec<Vec<f64>>, Vec<DamageLevel>), PipelineError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for entry in &manifest.images {
        let Some(level) = entry.ground_truth_level else {
            continue;
        };
        let out = run_cascade(entry, backend).map_err(|source| PipelineError::Backend {
            id: entry.id.clone(),
            source,
        })?;
        let rule = rule_fusion(&out, config);
        x.push(extract_features(&out, &rule, config).to_vec());
        y.push(level);
    }
    if y.is_empty() {
        return Err(PipelineError::NoGroundTruth);
    }
    Ok((x, y))
}
