//! Ensemble members for the supervised triage baselines.
//!
//! Five small classifiers over the ternary state encoding: per-sample and
//! full-batch multinomial logistic regression, a two-hidden-layer softmax
//! MLP, a depth-capped decision tree, and a random forest with one random
//! feature per split. Probabilistic members train against the soft
//! per-class targets; the tree-based ones fall back to modal hard labels.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const N_CLASSES: usize = 4;

/// Hyperparameters for the ensemble members.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MemberConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub n_iter_no_change: usize,
    pub sgd_lr: f64,
    pub batch_lr: f64,
    pub mlp_hidden: (usize, usize),
    pub mlp_alpha: f64,
    pub mlp_lr: f64,
    pub tree_depth: usize,
    pub forest_trees: usize,
    pub forest_depth: usize,
}

impl Default for MemberConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-3,
            n_iter_no_change: 5,
            sgd_lr: 0.05,
            batch_lr: 0.5,
            mlp_hidden: (512, 512),
            mlp_alpha: 1.0,
            mlp_lr: 1e-2,
            tree_depth: 5,
            forest_trees: 10,
            forest_depth: 5,
        }
    }
}

fn softmax(z: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_CLASSES];
    let mut sum = 0.0;
    for (o, zi) in out.iter_mut().zip(z) {
        *o = (zi - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

/// Multinomial logistic regression; `per_sample` picks stochastic updates
/// over full-batch gradient descent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Logistic {
    // One weight row per class, bias last.
    weights: Vec<Vec<f64>>,
    per_sample: bool,
}

impl Logistic {
    pub fn new(per_sample: bool) -> Self {
        Self {
            weights: Vec::new(),
            per_sample,
        }
    }

    fn logits(&self, x: &[f64]) -> [f64; N_CLASSES] {
        let mut z = [0.0; N_CLASSES];
        for (c, row) in self.weights.iter().enumerate() {
            let mut acc = row[x.len()];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            z[c] = acc;
        }
        z
    }

    pub fn fit(
        &mut self,
        features: &[Vec<f64>],
        soft_targets: &[[f64; N_CLASSES]],
        config: &MemberConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let dim = features[0].len();
        self.weights = vec![vec![0.0; dim + 1]; N_CLASSES];
        let n = features.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut best_loss = f64::INFINITY;
        let mut stalled = 0;
        for _ in 0..config.max_iter {
            let mut loss = 0.0;
            if self.per_sample {
                order.shuffle(rng);
                for &i in &order {
                    let p = softmax(&self.logits(&features[i]));
                    for c in 0..N_CLASSES {
                        loss -= soft_targets[i][c] * p[c].max(1e-12).ln();
                        let g = p[c] - soft_targets[i][c];
                        let row = &mut self.weights[c];
                        for (w, xi) in row.iter_mut().zip(&features[i]) {
                            *w -= config.sgd_lr * g * xi;
                        }
                        row[dim] -= config.sgd_lr * g;
                    }
                }
            } else {
                let mut grads = vec![vec![0.0; dim + 1]; N_CLASSES];
                for i in 0..n {
                    let p = softmax(&self.logits(&features[i]));
                    for c in 0..N_CLASSES {
                        loss -= soft_targets[i][c] * p[c].max(1e-12).ln();
                        let g = (p[c] - soft_targets[i][c]) / n as f64;
                        for (gw, xi) in grads[c].iter_mut().zip(&features[i]) {
                            *gw += g * xi;
                        }
                        grads[c][dim] += g;
                    }
                }
                for (row, grad) in self.weights.iter_mut().zip(&grads) {
                    for (w, g) in row.iter_mut().zip(grad) {
                        *w -= config.batch_lr * g;
                    }
                }
            }
            loss /= n as f64;
            if best_loss - loss < config.tol {
                stalled += 1;
                if stalled >= config.n_iter_no_change {
                    break;
                }
            } else {
                stalled = 0;
            }
            best_loss = best_loss.min(loss);
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<[f64; N_CLASSES]> {
        if self.weights.is_empty() {
            return Err(Error::NotFitted);
        }
        Ok(softmax(&self.logits(x)))
    }
}

/// Two-hidden-layer relu network with softmax output and L2 penalty,
/// trained full-batch with adaptive-moment steps and plateau early stopping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpClassifier {
    layers: Vec<(Vec<f64>, Vec<f64>)>, // (row-major weights, biases)
    dims: Vec<usize>,
}

impl MlpClassifier {
    pub fn new() -> Self {
        Self {
            layers: Vec::new(),
            dims: Vec::new(),
        }
    }

    fn forward(&self, x: &[f64]) -> (Vec<Vec<f64>>, [f64; N_CLASSES]) {
        let mut activations = vec![x.to_vec()];
        for (l, (weights, biases)) in self.layers.iter().enumerate() {
            let input = activations.last().unwrap();
            let in_dim = self.dims[l];
            let out_dim = self.dims[l + 1];
            let mut out = vec![0.0; out_dim];
            for o in 0..out_dim {
                let row = &weights[o * in_dim..(o + 1) * in_dim];
                let mut acc = biases[o];
                for (w, xi) in row.iter().zip(input) {
                    acc += w * xi;
                }
                out[o] = if l + 1 < self.layers.len() { acc.max(0.0) } else { acc };
            }
            activations.push(out);
        }
        let logits = activations.last().unwrap();
        let z: [f64; N_CLASSES] = std::array::from_fn(|c| logits[c]);
        (activations, softmax(&z))
    }

    pub fn fit(
        &mut self,
        features: &[Vec<f64>],
        soft_targets: &[[f64; N_CLASSES]],
        config: &MemberConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let dim = features[0].len();
        let (h1, h2) = config.mlp_hidden;
        self.dims = vec![dim, h1, h2, N_CLASSES];
        self.layers = (0..3)
            .map(|l| {
                let (in_dim, out_dim) = (self.dims[l], self.dims[l + 1]);
                let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
                let weights = (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                (weights, vec![0.0; out_dim])
            })
            .collect();

        let n = features.len();
        let param_count: usize = self
            .layers
            .iter()
            .map(|(w, b)| w.len() + b.len())
            .sum();
        let mut m = vec![0.0; param_count];
        let mut v = vec![0.0; param_count];
        let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let mut best_loss = f64::INFINITY;
        let mut stalled = 0;

        for t in 1..=config.max_iter {
            let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
                .layers
                .iter()
                .map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()]))
                .collect();
            let mut loss = 0.0;
            for i in 0..n {
                let (activations, probs) = self.forward(&features[i]);
                let mut delta: Vec<f64> = (0..N_CLASSES)
                    .map(|c| {
                        loss -= soft_targets[i][c] * probs[c].max(1e-12).ln();
                        (probs[c] - soft_targets[i][c]) / n as f64
                    })
                    .collect();
                for l in (0..3).rev() {
                    let in_dim = self.dims[l];
                    let input = &activations[l];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &mut grads[l].0[o * in_dim..(o + 1) * in_dim];
                        for (gw, xi) in row.iter_mut().zip(input) {
                            *gw += d * xi;
                        }
                        grads[l].1[o] += d;
                    }
                    if l > 0 {
                        let mut next = vec![0.0; in_dim];
                        for (h, nd) in next.iter_mut().enumerate() {
                            if input[h] <= 0.0 {
                                continue; // relu gate
                            }
                            let mut acc = 0.0;
                            for (o, d) in delta.iter().enumerate() {
                                acc += d * self.layers[l].0[o * in_dim + h];
                            }
                            *nd = acc;
                        }
                        delta = next;
                    }
                }
            }
            loss /= n as f64;
            // L2 penalty on weights only.
            let l2_scale = config.mlp_alpha / n as f64;
            for (layer, grad) in self.layers.iter().zip(grads.iter_mut()) {
                for (gw, w) in grad.0.iter_mut().zip(&layer.0) {
                    *gw += l2_scale * w;
                }
            }

            let bc1 = 1.0 - beta1.powi(t as i32);
            let bc2 = 1.0 - beta2.powi(t as i32);
            let mut k = 0;
            for (layer, grad) in self.layers.iter_mut().zip(&grads) {
                for (p, g) in layer
                    .0
                    .iter_mut()
                    .chain(layer.1.iter_mut())
                    .zip(grad.0.iter().chain(grad.1.iter()))
                {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                    *p -= config.mlp_lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                    k += 1;
                }
            }

            if best_loss - loss < config.tol {
                stalled += 1;
                if stalled >= config.n_iter_no_change {
                    break;
                }
            } else {
                stalled = 0;
            }
            best_loss = best_loss.min(loss);
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<[f64; N_CLASSES]> {
        if self.layers.is_empty() {
            return Err(Error::NotFitted);
        }
        Ok(self.forward(x).1)
    }
}

impl Default for MlpClassifier {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum TreeNode {
    Leaf {
        distribution: [f64; N_CLASSES],
    },
    Split {
        feature: usize,
        /// Goes left when `x[feature] <= threshold`.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

fn gini(counts: &[f64; N_CLASSES]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

fn class_counts(labels: &[usize], rows: &[usize]) -> [f64; N_CLASSES] {
    let mut counts = [0.0; N_CLASSES];
    for &row in rows {
        counts[labels[row]] += 1.0;
    }
    counts
}

fn leaf(labels: &[usize], rows: &[usize]) -> TreeNode {
    let counts = class_counts(labels, rows);
    let total: f64 = counts.iter().sum();
    TreeNode::Leaf {
        distribution: std::array::from_fn(|c| {
            if total == 0.0 {
                1.0 / N_CLASSES as f64
            } else {
                counts[c] / total
            }
        }),
    }
}

/// Best `x[f] <= t` split for a candidate feature; ternary features only
/// need the two thresholds -1 and 0.
fn best_threshold(
    features: &[Vec<f64>],
    labels: &[usize],
    rows: &[usize],
    feature: usize,
) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for threshold in [-1.0, 0.0] {
        let mut left = [0.0; N_CLASSES];
        let mut right = [0.0; N_CLASSES];
        for &row in rows {
            if features[row][feature] <= threshold {
                left[labels[row]] += 1.0;
            } else {
                right[labels[row]] += 1.0;
            }
        }
        let (nl, nr): (f64, f64) = (left.iter().sum(), right.iter().sum());
        if nl == 0.0 || nr == 0.0 {
            continue;
        }
        let impurity = (nl * gini(&left) + nr * gini(&right)) / (nl + nr);
        if best.is_none_or(|(_, b)| impurity < b) {
            best = Some((threshold, impurity));
        }
    }
    best
}

fn grow_tree(
    features: &[Vec<f64>],
    labels: &[usize],
    rows: &[usize],
    depth: usize,
    max_depth: usize,
) -> TreeNode {
    let counts = class_counts(labels, rows);
    if depth >= max_depth || rows.len() < 2 || gini(&counts) == 0.0 {
        return leaf(labels, rows);
    }
    let n_features = features[0].len();
    let mut chosen: Option<(usize, f64, f64)> = None;
    for feature in 0..n_features {
        if let Some((t, g)) = best_threshold(features, labels, rows, feature) {
            if chosen.is_none_or(|(_, _, bg)| g < bg) {
                chosen = Some((feature, t, g));
            }
        }
    }
    let Some((feature, threshold, split_gini)) = chosen else {
        return leaf(labels, rows);
    };
    if split_gini >= gini(&counts) {
        return leaf(labels, rows);
    }
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&row| features[row][feature] <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(grow_tree(features, labels, &left_rows, depth + 1, max_depth)),
        right: Box::new(grow_tree(features, labels, &right_rows, depth + 1, max_depth)),
    }
}

fn grow_forest_tree(
    features: &[Vec<f64>],
    labels: &[usize],
    rows: &[usize],
    depth: usize,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let counts = class_counts(labels, rows);
    if depth >= max_depth || rows.len() < 2 || gini(&counts) == 0.0 {
        return leaf(labels, rows);
    }
    let n_features = features[0].len();
    let feature = rng.random_range(0..n_features);
    let Some((threshold, _)) = best_threshold(features, labels, rows, feature) else {
        return leaf(labels, rows);
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&row| features[row][feature] <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(grow_forest_tree(features, labels, &left_rows, depth + 1, max_depth, rng)),
        right: Box::new(grow_forest_tree(features, labels, &right_rows, depth + 1, max_depth, rng)),
    }
}

fn tree_predict(node: &TreeNode, x: &[f64]) -> [f64; N_CLASSES] {
    match node {
        TreeNode::Leaf { distribution } => *distribution,
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if x[*feature] <= *threshold {
                tree_predict(left, x)
            } else {
                tree_predict(right, x)
            }
        }
    }
}

/// Depth-capped CART classifier on hard labels; leaves predict their class
/// frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTree {
    root: Option<TreeNode>,
}

impl DecisionTree {
    pub fn new() -> Self {
        Self { root: None }
    }

    pub fn fit(&mut self, features: &[Vec<f64>], labels: &[usize], config: &MemberConfig) {
        let rows: Vec<usize> = (0..features.len()).collect();
        self.root = Some(grow_tree(features, labels, &rows, 0, config.tree_depth));
    }

    pub fn predict(&self, x: &[f64]) -> Result<[f64; N_CLASSES]> {
        let root = self.root.as_ref().ok_or(Error::NotFitted)?;
        Ok(tree_predict(root, x))
    }
}

impl Default for DecisionTree {
    fn default() -> Self {
        Self::new()
    }
}

/// Bootstrap ensemble of shallow trees with one random feature per split;
/// prediction averages the member leaf distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<TreeNode>,
}

impl RandomForest {
    pub fn new() -> Self {
        Self { trees: Vec::new() }
    }

    pub fn fit(
        &mut self,
        features: &[Vec<f64>],
        labels: &[usize],
        config: &MemberConfig,
        rng: &mut ChaCha8Rng,
    ) {
        let n = features.len();
        self.trees = (0..config.forest_trees)
            .map(|_| {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow_forest_tree(features, labels, &rows, 0, config.forest_depth, rng)
            })
            .collect();
    }

    pub fn predict(&self, x: &[f64]) -> Result<[f64; N_CLASSES]> {
        if self.trees.is_empty() {
            return Err(Error::NotFitted);
        }
        let mut acc = [0.0; N_CLASSES];
        for tree in &self.trees {
            let p = tree_predict(tree, x);
            for (a, pi) in acc.iter_mut().zip(&p) {
                *a += pi;
            }
        }
        for a in acc.iter_mut() {
            *a /= self.trees.len() as f64;
        }
        Ok(acc)
    }
}

impl Default for RandomForest {
    fn default() -> Self {
        Self::new()
    }
}
