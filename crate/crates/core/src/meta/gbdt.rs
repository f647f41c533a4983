//! Gradient-boosted regression trees with a softmax objective.
//!
//! Each round computes class probabilities from the current raw scores, then
//! fits one tree per class to the gradient `p - y` with hessian `p(1 - p)`.
//! Splits are exact and greedy over the sorted unique values of each feature;
//! a split sends `x[feature] <= threshold` left. Leaves hold the Newton value
//! `-G / (H + lambda)`, scaled by the learning rate at prediction time.

use serde::{Deserialize, Serialize};

use super::{check_data, check_input, ClassProbs, MetaError, TrainHyper, Trained, NUM_CLASSES};
use crate::dataset_io::DamageLevel;

/// Lower bound on a class prior so absent classes keep a finite base score.
const PRIOR_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtHyper {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub lambda: f64,
}

impl Default for GbdtHyper {
    fn default() -> Self {
        Self {
            rounds: 50,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 5,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Nodes in an arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    fn check(&self, dim: usize, max_depth: usize) -> Result<(), MetaError> {
        let n = self.nodes.len();
        for node in &self.nodes {
            match *node {
                Node::Leaf { value } if !value.is_finite() => {
                    return Err(MetaError::Format("non-finite leaf value".into()))
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } if feature >= dim || !threshold.is_finite() || left >= n || right >= n => {
                    return Err(MetaError::Format("malformed split node".into()))
                }
                _ => {}
            }
        }
        if n == 0 || self.depth() > max_depth {
            return Err(MetaError::Format("tree is empty or too deep".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtModel {
    pub dim: usize,
    /// Log class priors.
    pub base_scores: [f64; NUM_CLASSES],
    pub learning_rate: f64,
    /// `rounds[r][k]` is the class-`k` tree of round `r`.
    pub rounds: Vec<Vec<Tree>>,
    /// Set when all training labels were identical and only priors were fit.
    pub degenerate: bool,
    pub hyper: GbdtHyper,
    pub class_weights: [f64; NUM_CLASSES],
}

impl GbdtModel {
    pub(super) fn check(&self) -> Result<(), MetaError> {
        if self.base_scores.iter().any(|b| !b.is_finite()) {
            return Err(MetaError::Format("non-finite base score".into()));
        }
        for round in &self.rounds {
            if round.len() != NUM_CLASSES {
                return Err(MetaError::Format(
                    "each round needs one tree per class".into(),
                ));
            }
            for t in round {
                t.check(self.dim, self.hyper.max_depth)?;
            }
        }
        Ok(())
    }

    fn raw_scores(&self, x: &[f64]) -> [f64; NUM_CLASSES] {
        let mut f = [0.0; NUM_CLASSES];
        for round in &self.rounds {
            for (fk, tree) in f.iter_mut().zip(round) {
                *fk += tree.predict(x);
            }
        }
        let mut out = self.base_scores;
        for (o, fk) in out.iter_mut().zip(f) {
            *o += self.learning_rate * fk;
        }
        out
    }
}

pub fn predict_gbdt(model: &GbdtModel, x: &[f64]) -> Result<ClassProbs, MetaError> {
    check_input(x, model.dim)?;
    Ok(ClassProbs::softmax(&model.raw_scores(x)))
}

/// Log priors from class counts; absent classes get [`PRIOR_FLOOR`].
pub(crate) fn log_priors(
    y: &[DamageLevel],
    class_weights: &[f64; NUM_CLASSES],
) -> [f64; NUM_CLASSES] {
    let mut mass = [0.0; NUM_CLASSES];
    for l in y {
        mass[l.ordinal()] += class_weights[l.ordinal()];
    }
    let total: f64 = mass.iter().sum();
    mass.map(|m| (m / total).max(PRIOR_FLOOR).ln())
}

fn multiclass_log_loss(
    scores: &[[f64; NUM_CLASSES]],
    y: &[DamageLevel],
    class_weights: &[f64; NUM_CLASSES],
) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    for (s, l) in scores.iter().zip(y) {
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let w = class_weights[l.ordinal()];
        total += w * (log_norm - s[l.ordinal()]);
        weight += w;
    }
    total / weight
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    hyper: &'a GbdtHyper,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl TreeBuilder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        -g / (h + self.hyper.lambda)
    }

    fn best_split(&self, rows: &[usize]) -> Option<BestSplit> {
        let lambda = self.hyper.lambda;
        let min_leaf = self.hyper.min_leaf.max(1);
        let g_total: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h_total: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let parent = g_total * g_total / (h_total + lambda);

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        let d = self.x[rows[0]].len();
        for feature in 0..d {
            sorted.sort_by(|&a, &b| {
                self.x[a][feature]
                    .total_cmp(&self.x[b][feature])
                    .then(a.cmp(&b))
            });
            let (mut gl, mut hl) = (0.0, 0.0);
            for pos in 0..sorted.len() - 1 {
                let i = sorted[pos];
                gl += self.grad[i];
                hl += self.hess[i];
                let here = self.x[i][feature];
                let next = self.x[sorted[pos + 1]][feature];
                if here == next {
                    continue;
                }
                let n_left = pos + 1;
                if n_left < min_leaf || sorted.len() - n_left < min_leaf {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                // strict comparison keeps the lowest feature, then lowest threshold, on ties
                if gain > MIN_GAIN && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, here));
                }
            }
        }

        best.map(|(gain, feature, threshold)| {
            let (left, right) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
            BestSplit {
                gain,
                feature,
                threshold,
                left,
                right,
            }
        })
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(rows),
        });
        if depth >= self.hyper.max_depth || rows.len() < 2 * self.hyper.min_leaf.max(1) {
            return id;
        }
        if let Some(split) = self.best_split(rows) {
            debug_assert!(split.gain > 0.0);
            let left = self.build(&split.left, depth + 1);
            let right = self.build(&split.right, depth + 1);
            self.nodes[id] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
        }
        id
    }
}

pub fn train_gbdt(
    x: &[Vec<f64>],
    y: &[DamageLevel],
    hyper: &TrainHyper,
) -> Result<Trained<GbdtModel>, MetaError> {
    let d = check_data(x, y)?;
    hyper.check_class_weights()?;
    let h = hyper.gbdt;
    if !(h.learning_rate.is_finite() && h.learning_rate > 0.0)
        || !(h.lambda.is_finite() && h.lambda >= 0.0)
        || h.min_leaf == 0
    {
        return Err(MetaError::InvalidHyper(
            "gbdt needs learning_rate > 0, lambda >= 0, min_leaf >= 1".into(),
        ));
    }
    let needed = 2 * h.min_leaf;
    if x.len() < needed {
        return Err(MetaError::InsufficientData { n: x.len(), needed });
    }

    let cw = &hyper.class_weights;
    let base = log_priors(y, cw);
    let mut model = GbdtModel {
        dim: d,
        base_scores: base,
        learning_rate: h.learning_rate,
        rounds: Vec::new(),
        degenerate: false,
        hyper: h,
        class_weights: *cw,
    };

    let mut scores = vec![base; x.len()];
    let mut trace = vec![multiclass_log_loss(&scores, y, cw)];
    if y.iter().all(|l| *l == y[0]) {
        model.degenerate = true;
        return Ok(Trained {
            model,
            loss_trace: trace,
        });
    }

    let rows: Vec<usize> = (0..x.len()).collect();
    let mut grad = vec![0.0; x.len()];
    let mut hess = vec![0.0; x.len()];
    for _ in 0..h.rounds {
        let probs: Vec<ClassProbs> = scores.iter().map(ClassProbs::softmax).collect();
        let mut round = Vec::with_capacity(NUM_CLASSES);
        for k in 0..NUM_CLASSES {
            for (i, (p, l)) in probs.iter().zip(y).enumerate() {
                let pk = p.as_array()[k];
                let target = if l.ordinal() == k { 1.0 } else { 0.0 };
                let w = cw[l.ordinal()];
                grad[i] = w * (pk - target);
                hess[i] = w * (pk * (1.0 - pk)).max(1e-16);
            }
            let mut builder = TreeBuilder {
                x,
                grad: &grad,
                hess: &hess,
                hyper: &h,
                nodes: Vec::new(),
            };
            builder.build(&rows, 0);
            round.push(Tree {
                nodes: builder.nodes,
            });
        }
        for (s, xi) in scores.iter_mut().zip(x) {
            for (sk, tree) in s.iter_mut().zip(&round) {
                *sk += h.learning_rate * tree.predict(xi);
            }
        }
        model.rounds.push(round);
        trace.push(multiclass_log_loss(&scores, y, cw));
    }

    Ok(Trained {
        model,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn priors_model(base: [f64; 4]) -> GbdtModel {
        GbdtModel {
            dim: 2,
            base_scores: base,
            learning_rate: 0.1,
            rounds: vec![],
            degenerate: false,
            hyper: GbdtHyper::default(),
            class_weights: [1.0; 4],
        }
    }

    #[test]
    fn zero_round_uniform_model() {
        let m = priors_model([0.0; 4]);
        assert_eq!(
            predict_gbdt(&m, &[1.0, 2.0]).unwrap().as_array(),
            &[0.25; 4]
        );
    }

    #[test]
    fn priors_reproduce_class_frequencies() {
        let mut y = Vec::new();
        for (k, n) in [10, 20, 30, 40].into_iter().enumerate() {
            y.extend(std::iter::repeat_n(DamageLevel::ALL[k], n));
        }
        let m = priors_model(log_priors(&y, &[1.0; 4]));
        let p = predict_gbdt(&m, &[0.0, 0.0]).unwrap();
        for (got, want) in p.as_array().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn single_leaf_pushes_heavy() {
        let mut m = priors_model([0.0; 4]);
        m.learning_rate = 1.0;
        m.rounds.push(vec![
            Tree::leaf(0.0),
            Tree::leaf(0.0),
            Tree::leaf(0.0),
            Tree::leaf(5.0),
        ]);
        assert_eq!(
            predict_gbdt(&m, &[0.0, 0.0]).unwrap().argmax(),
            DamageLevel::Heavy
        );
    }

    #[test]
    fn all_same_label_is_degenerate() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 1.0]).collect();
        let y = vec![DamageLevel::Medium; 20];
        let t = train_gbdt(&x, &y, &TrainHyper::default()).unwrap();
        assert!(t.model.degenerate);
        assert!(t.model.rounds.is_empty());
        for probe in [[0.0, 0.0], [100.0, -3.0]] {
            let p = predict_gbdt(&t.model, &probe).unwrap();
            assert!(p.get(DamageLevel::Medium) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn too_few_samples() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let y: Vec<DamageLevel> = (0..9).map(|i| DamageLevel::ALL[i % 2]).collect();
        assert!(matches!(
            train_gbdt(&x, &y, &TrainHyper::default()),
            Err(MetaError::InsufficientData { n: 9, needed: 10 })
        ));
    }

    #[test]
    fn split_ties_prefer_lowest_feature_and_threshold() {
        // features 0 and 1 are identical copies; the split must use feature 0
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<DamageLevel> = (0..20)
            .map(|i| {
                if i < 10 {
                    DamageLevel::Zero
                } else {
                    DamageLevel::Heavy
                }
            })
            .collect();
        let mut hyper = TrainHyper::default();
        hyper.gbdt.rounds = 1;
        hyper.gbdt.max_depth = 1;
        let t = train_gbdt(&x, &y, &hyper).unwrap();
        for tree in &t.model.rounds[0] {
            if let Node::Split {
                feature, threshold, ..
            } = tree.nodes[0]
            {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 9.0);
            }
        }
    }

    #[test]
    fn trees_respect_depth_and_min_leaf() {
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64])
            .collect();
        let y: Vec<DamageLevel> = (0..60).map(|i| DamageLevel::ALL[(i * 3) % 4]).collect();
        let t = train_gbdt(&x, &y, &TrainHyper::default()).unwrap();
        for round in &t.model.rounds {
            for tree in round {
                assert!(tree.depth() <= 3);
            }
        }
    }
}
