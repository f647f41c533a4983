//! Multinomial logistic regression trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::{check_data, check_input, ClassProbs, MetaError, TrainHyper, Trained, NUM_CLASSES};
use crate::dataset_io::DamageLevel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegHyper {
    pub learning_rate: f64,
    /// Coefficient of `(l2 / 2) * ||W||²`, bias column excluded.
    pub l2: f64,
    pub iterations: usize,
}

impl Default for LogRegHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-3,
            iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRegModel {
    /// One row per class; `d` feature weights followed by the bias.
    pub weights: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviations; 1.0 for constant features.
    pub std: Vec<f64>,
    pub iterations: usize,
    pub final_loss: f64,
    pub hyper: LogRegHyper,
    pub class_weights: [f64; NUM_CLASSES],
}

impl LogRegModel {
    pub(super) fn check(&self) -> Result<(), MetaError> {
        let d = self.mean.len();
        let bad = |msg: &str| Err(MetaError::Format(msg.to_string()));
        if self.std.len() != d
            || self.weights.len() != NUM_CLASSES
            || self.weights.iter().any(|r| r.len() != d + 1)
        {
            return bad("logreg weight shapes are inconsistent");
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("logreg std entries must be positive");
        }
        if self.weights.iter().flatten().any(|w| !w.is_finite()) {
            return bad("logreg weights must be finite");
        }
        Ok(())
    }

    fn standardized(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = x
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        z.push(1.0);
        z
    }
}

fn logits(weights: &[Vec<f64>], z: &[f64]) -> [f64; NUM_CLASSES] {
    let mut out = [0.0; NUM_CLASSES];
    for (o, row) in out.iter_mut().zip(weights) {
        *o = row.iter().zip(z).map(|(w, v)| w * v).sum();
    }
    out
}

/// Weighted mean cross-entropy plus the L2 penalty, and its gradient.
///
/// `z` rows are already standardized and end with the constant 1 that
/// multiplies the bias column of `weights`.
pub fn logreg_loss_and_gradient(
    weights: &[Vec<f64>],
    z: &[Vec<f64>],
    y: &[DamageLevel],
    l2: f64,
    class_weights: &[f64; NUM_CLASSES],
) -> (f64, Vec<Vec<f64>>) {
    let cols = weights[0].len();
    let mut grad = vec![vec![0.0; cols]; NUM_CLASSES];
    let mut total_weight = 0.0;
    let mut data_loss = 0.0;

    for (row, label) in z.iter().zip(y) {
        let k_true = label.ordinal();
        let sw = class_weights[k_true];
        total_weight += sw;
        let l = logits(weights, row);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        data_loss += sw * (log_norm - l[k_true]);
        for (k, g_row) in grad.iter_mut().enumerate() {
            let p = (l[k] - log_norm).exp();
            let coeff = sw * (p - if k == k_true { 1.0 } else { 0.0 });
            for (g, v) in g_row.iter_mut().zip(row) {
                *g += coeff * v;
            }
        }
    }

    let mut penalty = 0.0;
    for (g_row, w_row) in grad.iter_mut().zip(weights) {
        for g in g_row.iter_mut() {
            *g /= total_weight;
        }
        for j in 0..cols - 1 {
            penalty += w_row[j] * w_row[j];
            g_row[j] += l2 * w_row[j];
        }
    }
    (data_loss / total_weight + 0.5 * l2 * penalty, grad)
}

pub fn train_logreg(
    x: &[Vec<f64>],
    y: &[DamageLevel],
    hyper: &TrainHyper,
) -> Result<Trained<LogRegModel>, MetaError> {
    let d = check_data(x, y)?;
    hyper.check_class_weights()?;
    let h = hyper.logreg;
    if !(h.learning_rate.is_finite() && h.learning_rate > 0.0) || !(h.l2.is_finite() && h.l2 >= 0.0)
    {
        return Err(MetaError::InvalidHyper(
            "logreg learning_rate must be > 0 and l2 >= 0".into(),
        ));
    }

    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 1e-12 * mean[j].abs().max(1.0) {
                s
            } else {
                1.0
            }
        })
        .collect();

    let mut model = LogRegModel {
        weights: vec![vec![0.0; d + 1]; NUM_CLASSES],
        mean,
        std,
        iterations: h.iterations,
        final_loss: f64::NAN,
        hyper: h,
        class_weights: hyper.class_weights,
    };
    let z: Vec<Vec<f64>> = x.iter().map(|r| model.standardized(r)).collect();

    let mut trace = Vec::with_capacity(h.iterations + 1);
    for it in 0..h.iterations {
        let (loss, grad) =
            logreg_loss_and_gradient(&model.weights, &z, y, h.l2, &hyper.class_weights);
        if !loss.is_finite() {
            return Err(MetaError::NonFiniteLoss(it));
        }
        trace.push(loss);
        for (w_row, g_row) in model.weights.iter_mut().zip(&grad) {
            for (w, g) in w_row.iter_mut().zip(g_row) {
                *w -= h.learning_rate * g;
            }
        }
    }
    let (loss, _) = logreg_loss_and_gradient(&model.weights, &z, y, h.l2, &hyper.class_weights);
    if !loss.is_finite() || model.weights.iter().flatten().any(|w| !w.is_finite()) {
        return Err(MetaError::NonFiniteLoss(h.iterations));
    }
    trace.push(loss);
    model.final_loss = loss;
    Ok(Trained {
        model,
        loss_trace: trace,
    })
}

pub fn predict_logreg(model: &LogRegModel, x: &[f64]) -> Result<ClassProbs, MetaError> {
    check_input(x, model.mean.len())?;
    Ok(ClassProbs::softmax(&logits(
        &model.weights,
        &model.standardized(x),
    )))
}
