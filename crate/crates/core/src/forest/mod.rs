//! Online pan-tilt regression forest mapping descriptors to rays, plus the
//! relocalizers built on it and on the keyframe and nearest-neighbour baselines.

mod reloc;
mod tree;

pub use reloc::{relocalize_forest, relocalize_keyframe, relocalize_nns, Keyframe};
pub use tree::{Leaf, TreeNode};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Ray;
use crate::error::{PtzError, Result};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub descriptor: Vec<f64>,
    pub ray: Ray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub num_trees_initial: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub candidate_splits_per_node: usize,
    pub correctness_angle_deg: f64,
    pub correctness_ratio: f64,
    pub max_trees: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees_initial: 5,
            max_depth: 20,
            min_samples_leaf: 1,
            candidate_splits_per_node: 32,
            correctness_angle_deg: 0.1,
            correctness_ratio: 0.5,
            max_trees: 20,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_trees_initial,
            self.max_depth,
            self.min_samples_leaf,
            self.candidate_splits_per_node,
            self.max_trees,
        ];
        if counts.contains(&0) {
            return Err(PtzError::InvalidInput(
                "forest counts must be at least 1".into(),
            ));
        }
        if !(self.correctness_ratio > 0.0 && self.correctness_ratio < 1.0) {
            return Err(PtzError::InvalidInput(
                "correctness_ratio must lie in (0, 1)".into(),
            ));
        }
        if !(self.correctness_angle_deg > 0.0) {
            return Err(PtzError::InvalidInput(
                "correctness_angle_deg must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Training examples from accepted keyframes, tagged by keyframe id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleReservoir {
    pub entries: Vec<(u64, TrainingExample)>,
}

impl ExampleReservoir {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, keyframe: u64, examples: &[TrainingExample]) {
        self.entries
            .extend(examples.iter().map(|e| (keyframe, e.clone())));
    }

    /// Uniform sample without replacement, in reservoir order.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<TrainingExample> {
        let n = n.min(self.entries.len());
        let mut idx = sample(rng, self.entries.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.entries[i].1.clone()).collect()
    }

    /// Nearest example by Euclidean descriptor distance; ties keep the earliest.
    pub fn nearest(&self, descriptor: &[f64]) -> Option<&TrainingExample> {
        let mut best: Option<(f64, &TrainingExample)> = None;
        for (_, e) in &self.entries {
            let d: f64 = e
                .descriptor
                .iter()
                .zip(descriptor)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, e));
            }
        }
        best.map(|b| b.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Creation sequence number; also selects the tree's random stream.
    pub serial: u64,
    pub root: TreeNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UpdateDecision {
    Bootstrapped {
        trees: usize,
    },
    UpdatedTree {
        tree: usize,
        correctness: f64,
    },
    AddedTree {
        correctness: f64,
        dropped_oldest: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanTiltForest {
    pub format_version: u32,
    pub params: ForestParams,
    pub trees: Vec<Tree>,
    next_serial: u64,
    updates: u64,
}

const UPDATE_STREAM_BASE: u64 = 1 << 32;

impl PanTiltForest {
    pub fn new(params: ForestParams) -> Self {
        Self {
            format_version: FOREST_FORMAT_VERSION,
            params,
            trees: Vec::new(),
            next_serial: 0,
            updates: 0,
        }
    }

    /// Forest of `num_trees_initial` trees trained on the same examples.
    pub fn train(examples: &[TrainingExample], params: ForestParams) -> Self {
        let mut forest = Self::new(params);
        for _ in 0..forest.params.num_trees_initial {
            let tree = forest.train_tree(examples.to_vec());
            forest.trees.push(tree);
        }
        forest
    }

    fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(stream);
        rng
    }

    fn train_tree(&mut self, examples: Vec<TrainingExample>) -> Tree {
        let serial = self.next_serial;
        self.next_serial += 1;
        let mut rng = self.stream(serial);
        Tree {
            serial,
            root: tree::build(examples, 0, &self.params, &mut rng),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// One ray per tree, in tree order.
    pub fn predict(&self, descriptor: &[f64]) -> Vec<Ray> {
        self.trees
            .iter()
            .map(|t| t.root.leaf(descriptor).mean_ray)
            .collect()
    }

    /// Fraction of examples for which some tree lands within the correctness angle.
    pub fn correctness(&self, examples: &[TrainingExample]) -> f64 {
        if examples.is_empty() || self.trees.is_empty() {
            return 0.0;
        }
        let hits = examples
            .iter()
            .filter(|e| {
                self.predict(&e.descriptor)
                    .iter()
                    .any(|r| r.angle_to(&e.ray) <= self.params.correctness_angle_deg)
            })
            .count();
        hits as f64 / examples.len() as f64
    }

    /// Adds a keyframe's examples: grows one random tree when the forest
    /// already predicts them well, otherwise trains a new tree on them plus
    /// an equal-size sample of older examples.
    pub fn online_update(
        &mut self,
        reservoir: &mut ExampleReservoir,
        keyframe: u64,
        new_examples: &[TrainingExample],
    ) -> Result<UpdateDecision> {
        if new_examples.is_empty() {
            return Err(PtzError::InvalidInput(
                "online update needs at least one example".into(),
            ));
        }
        let mut rng = self.stream(UPDATE_STREAM_BASE + self.updates);
        self.updates += 1;
        let decision = if self.trees.is_empty() {
            for _ in 0..self.params.num_trees_initial {
                let mut pool = new_examples.to_vec();
                pool.extend(reservoir.sample(new_examples.len(), &mut rng));
                let tree = self.train_tree(pool);
                self.trees.push(tree);
            }
            UpdateDecision::Bootstrapped {
                trees: self.trees.len(),
            }
        } else {
            let correctness = self.correctness(new_examples);
            if correctness >= self.params.correctness_ratio {
                let tree = rng.random_range(0..self.trees.len());
                let params = self.params.clone();
                tree::insert(
                    &mut self.trees[tree].root,
                    new_examples.to_vec(),
                    &params,
                    &mut rng,
                );
                UpdateDecision::UpdatedTree { tree, correctness }
            } else {
                let mut pool = new_examples.to_vec();
                pool.extend(reservoir.sample(new_examples.len(), &mut rng));
                let tree = self.train_tree(pool);
                self.trees.push(tree);
                let dropped_oldest = self.trees.len() > self.params.max_trees;
                if dropped_oldest {
                    self.trees.remove(0);
                }
                UpdateDecision::AddedTree {
                    correctness,
                    dropped_oldest,
                }
            }
        };
        reservoir.extend(keyframe, new_examples);
        Ok(decision)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let forest: Self = serde_json::from_str(text)?;
        if forest.format_version != FOREST_FORMAT_VERSION {
            return Err(PtzError::UnsupportedSchema(forest.format_version));
        }
        Ok(forest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(n: usize, pan0: f64, seed: u64) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| TrainingExample {
                descriptor: (0..8).map(|_| rng.random_range(-3.0..3.0)).collect(),
                ray: Ray {
                    theta: pan0 + (i % 20) as f64,
                    phi: -10.0 + (i / 20) as f64,
                },
            })
            .collect()
    }

    #[test]
    fn training_examples_are_recalled() {
        let data = examples(200, 0.0, 1);
        let forest = PanTiltForest::train(&data, ForestParams::default());
        assert_eq!(forest.predict(&data[0].descriptor).len(), 5);
        assert_eq!(forest.correctness(&data), 1.0);
    }

    #[test]
    fn seen_data_updates_and_novel_data_adds_a_tree() {
        let data = examples(200, 0.0, 1);
        let mut forest = PanTiltForest::new(ForestParams::default());
        let mut reservoir = ExampleReservoir::default();
        let d = forest.online_update(&mut reservoir, 0, &data).unwrap();
        assert!(matches!(d, UpdateDecision::Bootstrapped { trees: 5 }));
        let d = forest
            .online_update(&mut reservoir, 1, &data[..50])
            .unwrap();
        assert!(matches!(d, UpdateDecision::UpdatedTree { .. }), "{d:?}");
        let novel = examples(100, 60.0, 2);
        let d = forest.online_update(&mut reservoir, 2, &novel).unwrap();
        assert!(
            matches!(
                d,
                UpdateDecision::AddedTree {
                    dropped_oldest: false,
                    ..
                }
            ),
            "{d:?}"
        );
        assert_eq!(forest.trees.len(), 6);
        assert_eq!(reservoir.len(), 350);
    }

    #[test]
    fn oldest_tree_is_dropped_at_capacity() {
        let params = ForestParams {
            num_trees_initial: 2,
            max_trees: 2,
            ..Default::default()
        };
        let mut forest = PanTiltForest::new(params);
        let mut reservoir = ExampleReservoir::default();
        forest
            .online_update(&mut reservoir, 0, &examples(50, 0.0, 1))
            .unwrap();
        let d = forest
            .online_update(&mut reservoir, 1, &examples(50, 90.0, 2))
            .unwrap();
        assert!(matches!(
            d,
            UpdateDecision::AddedTree {
                dropped_oldest: true,
                ..
            }
        ));
        assert_eq!(
            forest.trees.iter().map(|t| t.serial).collect::<Vec<_>>(),
            vec![1, 2]
        );
    }

    #[test]
    fn json_round_trip() {
        let forest = PanTiltForest::train(&examples(60, 0.0, 4), ForestParams::default());
        let back = PanTiltForest::from_json(&forest.to_json().unwrap()).unwrap();
        assert_eq!(back, forest);
    }

    #[test]
    fn same_seed_same_forest() {
        let data = examples(120, 0.0, 9);
        let a = PanTiltForest::train(&data, ForestParams::default());
        let b = PanTiltForest::train(&data, ForestParams::default());
        assert_eq!(a, b);
    }
}
