use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForestParams, TrainingExample};
use crate::camera::Ray;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub mean_descriptor: Vec<f64>,
    pub mean_ray: Ray,
    pub count: usize,
    /// Examples routed here, kept so the leaf can be split later.
    #[serde(default)]
    pub examples: Vec<TrainingExample>,
}

impl Leaf {
    pub(crate) fn from_examples(examples: Vec<TrainingExample>) -> Self {
        let n = examples.len().max(1) as f64;
        let d = examples.first().map_or(0, |e| e.descriptor.len());
        let mut mean_descriptor = vec![0.0; d];
        let (mut theta, mut phi) = (0.0, 0.0);
        for e in &examples {
            for (m, v) in mean_descriptor.iter_mut().zip(&e.descriptor) {
                *m += v;
            }
            theta += e.ray.theta;
            phi += e.ray.phi;
        }
        mean_descriptor.iter_mut().for_each(|m| *m /= n);
        Self {
            mean_descriptor,
            mean_ray: Ray {
                theta: theta / n,
                phi: phi / n,
            },
            count: examples.len(),
            examples,
        }
    }

    /// Adds one example, updating the means incrementally.
    pub(crate) fn push(&mut self, example: TrainingExample) {
        self.count += 1;
        let w = 1.0 / self.count as f64;
        if self.mean_descriptor.len() != example.descriptor.len() {
            self.mean_descriptor = vec![0.0; example.descriptor.len()];
        }
        for (m, v) in self.mean_descriptor.iter_mut().zip(&example.descriptor) {
            *m += (v - *m) * w;
        }
        self.mean_ray.theta += (example.ray.theta - self.mean_ray.theta) * w;
        self.mean_ray.phi += (example.ray.phi - self.mean_ray.phi) * w;
        self.examples.push(example);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        split_dim: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf(Leaf),
}

impl TreeNode {
    pub fn leaf(&self, descriptor: &[f64]) -> &Leaf {
        let mut node = self;
        loop {
            match node {
                TreeNode::Internal {
                    split_dim,
                    threshold,
                    left,
                    right,
                } => {
                    node = if descriptor[*split_dim] < *threshold {
                        left
                    } else {
                        right
                    };
                }
                TreeNode::Leaf(leaf) => return leaf,
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf(_) => 0,
        }
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
                TreeNode::Leaf(leaf) => out.push(leaf),
            }
        }
        out
    }
}

/// Sum over theta and phi of the population variance, degrees squared.
fn ray_variance(examples: &[&TrainingExample]) -> f64 {
    let n = examples.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mt = examples.iter().map(|e| e.ray.theta).sum::<f64>() / n;
    let mp = examples.iter().map(|e| e.ray.phi).sum::<f64>() / n;
    examples
        .iter()
        .map(|e| (e.ray.theta - mt).powi(2) + (e.ray.phi - mp).powi(2))
        .sum::<f64>()
        / n
}

/// Variance reduction of splitting `examples` at `descriptor[dim] < threshold`.
pub(crate) fn split_gain(
    examples: &[TrainingExample],
    dim: usize,
    threshold: f64,
    min_leaf: usize,
) -> Option<f64> {
    let (left, right): (Vec<&TrainingExample>, Vec<&TrainingExample>) =
        examples.iter().partition(|e| e.descriptor[dim] < threshold);
    if left.len() < min_leaf || right.len() < min_leaf {
        return None;
    }
    let all: Vec<&TrainingExample> = examples.iter().collect();
    let n = examples.len() as f64;
    let parent = ray_variance(&all);
    Some(
        parent
            - left.len() as f64 / n * ray_variance(&left)
            - right.len() as f64 / n * ray_variance(&right),
    )
}

const MIN_GAIN: f64 = 1e-12;

/// Trains a subtree rooted at `depth`.
pub(crate) fn build(
    examples: Vec<TrainingExample>,
    depth: usize,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let min_leaf = params.min_samples_leaf.max(1);
    if depth >= params.max_depth || examples.len() < 2 * min_leaf {
        return TreeNode::Leaf(Leaf::from_examples(examples));
    }
    let d = examples[0].descriptor.len();
    if d == 0 {
        return TreeNode::Leaf(Leaf::from_examples(examples));
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for _ in 0..params.candidate_splits_per_node {
        let dim = rng.random_range(0..d);
        let (lo, hi) = examples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                (lo.min(e.descriptor[dim]), hi.max(e.descriptor[dim]))
            });
        if !(hi > lo) {
            continue;
        }
        let threshold = rng.random_range(lo..hi);
        if let Some(gain) = split_gain(&examples, dim, threshold, min_leaf) {
            if best.is_none_or(|b| gain > b.0) {
                best = Some((gain, dim, threshold));
            }
        }
    }
    match best {
        Some((gain, split_dim, threshold)) if gain > MIN_GAIN => {
            let (l, r): (Vec<TrainingExample>, Vec<TrainingExample>) = examples
                .into_iter()
                .partition(|e| e.descriptor[split_dim] < threshold);
            TreeNode::Internal {
                split_dim,
                threshold,
                left: Box::new(build(l, depth + 1, params, rng)),
                right: Box::new(build(r, depth + 1, params, rng)),
            }
        }
        _ => TreeNode::Leaf(Leaf::from_examples(examples)),
    }
}

/// Routes examples to their leaves, then splits leaves that overflowed.
pub(crate) fn insert(
    node: &mut TreeNode,
    examples: Vec<TrainingExample>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) {
    insert_at(node, 0, examples, params, rng);
}

fn insert_at(
    node: &mut TreeNode,
    depth: usize,
    examples: Vec<TrainingExample>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) {
    if examples.is_empty() {
        return;
    }
    match node {
        TreeNode::Internal {
            split_dim,
            threshold,
            left,
            right,
        } => {
            let (l, r): (Vec<TrainingExample>, Vec<TrainingExample>) = examples
                .into_iter()
                .partition(|e| e.descriptor[*split_dim] < *threshold);
            insert_at(left, depth + 1, l, params, rng);
            insert_at(right, depth + 1, r, params, rng);
        }
        TreeNode::Leaf(leaf) => {
            for e in examples {
                leaf.push(e);
            }
            let overflow =
                leaf.count >= 2 * params.min_samples_leaf.max(1) && depth < params.max_depth;
            // Leaves loaded without their examples keep growing in place.
            if !overflow || leaf.examples.len() != leaf.count {
                return;
            }
            if let sub @ TreeNode::Internal { .. } =
                build(leaf.examples.clone(), depth, params, rng)
            {
                *node = sub;
            }
        }
    }
}
