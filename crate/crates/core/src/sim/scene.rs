use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SceneConfig;
use crate::camera::{world_point_to_ray, PtzBase, Ray};
use crate::error::{PtzError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLandmark {
    pub id: u64,
    pub ray: Ray,
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub landmarks: Vec<SceneLandmark>,
    /// Landmark ids sharing one latent descriptor.
    pub pattern_groups: Vec<Vec<u64>>,
}

impl SceneModel {
    /// Rebuilds pattern groups from landmarks whose latents are identical.
    pub(crate) fn regroup(&mut self) {
        let mut groups: Vec<Vec<u64>> = Vec::new();
        let mut seen = vec![false; self.landmarks.len()];
        for i in 0..self.landmarks.len() {
            if seen[i] {
                continue;
            }
            let mut group = vec![self.landmarks[i].id];
            for (j, other) in self.landmarks.iter().enumerate().skip(i + 1) {
                if !seen[j] && other.latent == self.landmarks[i].latent {
                    seen[j] = true;
                    group.push(other.id);
                }
            }
            if group.len() > 1 {
                groups.push(group);
            }
        }
        self.pattern_groups = groups;
    }

    pub fn landmark(&self, id: u64) -> Option<&SceneLandmark> {
        self.landmarks
            .binary_search_by_key(&id, |l| l.id)
            .ok()
            .map(|i| &self.landmarks[i])
    }
}

fn in_extent(ray: &Ray, config: &SceneConfig) -> bool {
    (config.pan_range[0]..=config.pan_range[1]).contains(&ray.theta)
        && (config.tilt_range[0]..=config.tilt_range[1]).contains(&ray.phi)
}

const COURT_ATTEMPTS: usize = 1000;

pub fn generate_scene(
    config: &SceneConfig,
    base: &PtzBase,
    rng: &mut ChaCha8Rng,
) -> Result<SceneModel> {
    if config.num_landmarks == 0 {
        return Err(PtzError::InvalidInput(
            "scene needs at least one landmark".into(),
        ));
    }
    let num_court = (config.court_fraction * config.num_landmarks as f64).round() as usize;
    let [len, wid] = config.court_size;
    let mut landmarks = Vec::with_capacity(config.num_landmarks);
    for id in 0..config.num_landmarks as u64 {
        let mut ray = None;
        if (id as usize) < num_court {
            for _ in 0..COURT_ATTEMPTS {
                let p = Vector3::new(
                    rng.random_range(-len / 2.0..=len / 2.0),
                    rng.random_range(-wid / 2.0..=wid / 2.0),
                    0.0,
                );
                if let Ok(r) = world_point_to_ray(base, &p) {
                    if in_extent(&r, config) {
                        ray = Some(r);
                        break;
                    }
                }
            }
        }
        let ray = ray.unwrap_or_else(|| Ray {
            theta: rng.random_range(config.pan_range[0]..=config.pan_range[1]),
            phi: rng.random_range(config.tilt_range[0]..=config.tilt_range[1]),
        });
        let latent = (0..config.descriptor_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        landmarks.push(SceneLandmark { id, ray, latent });
    }

    let grouped =
        (config.pattern_group_count * config.pattern_group_size.max(2)).min(landmarks.len());
    let mut pattern_groups = Vec::new();
    if config.pattern_group_count > 0 {
        let members = sample(rng, landmarks.len(), grouped).into_vec();
        for chunk in members.chunks(config.pattern_group_size.max(2)) {
            let latent = landmarks[chunk[0]].latent.clone();
            let mut ids: Vec<u64> = chunk.iter().map(|&i| landmarks[i].id).collect();
            for &i in chunk {
                landmarks[i].latent = latent.clone();
            }
            ids.sort_unstable();
            pattern_groups.push(ids);
        }
        pattern_groups.sort();
    }
    Ok(SceneModel {
        landmarks,
        pattern_groups,
    })
}
