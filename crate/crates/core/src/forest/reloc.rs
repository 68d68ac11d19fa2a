use serde::{Deserialize, Serialize};

use super::{ExampleReservoir, PanTiltForest};
use crate::camera::{back_project, CameraPose, ImageSize};
use crate::ekf::{descriptor_distance, Observation};
use crate::error::{PtzError, Result};
use crate::solvers::{ransac_pose, Correspondence, PoseEstimate, RansacParams};

/// A tracked frame kept for the keyframe relocalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub id: u64,
    pub frame: usize,
    pub pose: CameraPose,
    pub observations: Vec<Observation>,
}

fn not_enough(found: usize, params: &RansacParams) -> PtzError {
    PtzError::NotEnoughInliers {
        found,
        required: params.min_inliers,
    }
}

/// Pose from forest ray candidates for every observation.
pub fn relocalize_forest(
    forest: &PanTiltForest,
    observations: &[Observation],
    size: ImageSize,
    ransac: &RansacParams,
) -> Result<PoseEstimate> {
    if forest.is_empty() {
        return Err(not_enough(0, ransac));
    }
    let corrs: Vec<Correspondence> = observations
        .iter()
        .map(|o| {
            let mut candidates = forest.predict(&o.descriptor);
            candidates.dedup_by(|a, b| a.theta == b.theta && a.phi == b.phi);
            Correspondence {
                pixel: o.pixel,
                candidates,
            }
        })
        .collect();
    if corrs.len() < 2 {
        return Err(not_enough(corrs.len(), ransac));
    }
    ransac_pose(&corrs, size, ransac)
}

/// Pose from the keyframe sharing the most descriptor matches with the query.
pub fn relocalize_keyframe(
    keyframes: &[Keyframe],
    query: &[Observation],
    size: ImageSize,
    ransac: &RansacParams,
    max_descriptor_distance: f64,
) -> Result<PoseEstimate> {
    let mut best: Option<(usize, Vec<Correspondence>)> = None;
    for kf in keyframes {
        let mut corrs = Vec::new();
        for q in query {
            let nearest = kf
                .observations
                .iter()
                .map(|o| (descriptor_distance(&o.descriptor, &q.descriptor), o))
                .filter(|(d, _)| *d <= max_descriptor_distance)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, o)) = nearest {
                if let Ok(ray) = back_project(&kf.pose, size, &o.pixel) {
                    corrs.push(Correspondence::single(q.pixel, ray));
                }
            }
        }
        if best.as_ref().is_none_or(|b| corrs.len() > b.0) {
            best = Some((corrs.len(), corrs));
        }
    }
    match best {
        Some((n, corrs)) if n >= 2 => ransac_pose(&corrs, size, ransac),
        Some((n, _)) => Err(not_enough(n, ransac)),
        None => Err(not_enough(0, ransac)),
    }
}

/// Pose from the single nearest stored example of every query descriptor.
pub fn relocalize_nns(
    reservoir: &ExampleReservoir,
    query: &[Observation],
    size: ImageSize,
    ransac: &RansacParams,
) -> Result<PoseEstimate> {
    let corrs: Vec<Correspondence> = query
        .iter()
        .filter_map(|q| {
            reservoir
                .nearest(&q.descriptor)
                .map(|e| Correspondence::single(q.pixel, e.ray))
        })
        .collect();
    if corrs.len() < 2 {
        return Err(not_enough(corrs.len(), ransac));
    }
    ransac_pose(&corrs, size, ransac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project_ray, Ray};
    use crate::forest::{ForestParams, TrainingExample};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const HD: ImageSize = ImageSize {
        width: 1280,
        height: 720,
    };

    fn scene(n: usize) -> Vec<(Ray, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..n)
            .map(|_| {
                let ray = Ray {
                    theta: rng.random_range(-20.0..20.0),
                    phi: rng.random_range(-15.0..5.0),
                };
                (ray, (0..16).map(|_| rng.random_range(-2.0..2.0)).collect())
            })
            .collect()
    }

    fn observe(pose: &CameraPose, scene: &[(Ray, Vec<f64>)]) -> Vec<Observation> {
        scene
            .iter()
            .filter_map(|(r, d)| {
                let p = project_ray(pose, HD, r).ok()?;
                HD.contains(&p).then(|| Observation::new(p, d.clone()))
            })
            .collect()
    }

    #[test]
    fn forest_recovers_pose_without_outliers() {
        let s = scene(400);
        let data: Vec<TrainingExample> = s
            .iter()
            .map(|(r, d)| TrainingExample {
                descriptor: d.clone(),
                ray: *r,
            })
            .collect();
        let forest = PanTiltForest::train(&data, ForestParams::default());
        let truth = CameraPose {
            pan: 3.0,
            tilt: -6.0,
            focal: 2200.0,
        };
        let est =
            relocalize_forest(&forest, &observe(&truth, &s), HD, &RansacParams::default()).unwrap();
        assert!((est.pose.pan - 3.0).abs() < 0.1 && (est.pose.tilt + 6.0).abs() < 0.1);
    }

    #[test]
    fn keyframe_copy_is_recovered_exactly() {
        let s = scene(400);
        let pose = CameraPose {
            pan: -4.0,
            tilt: -3.0,
            focal: 1900.0,
        };
        let other = CameraPose {
            pan: 10.0,
            tilt: -3.0,
            focal: 1900.0,
        };
        let kfs = vec![
            Keyframe {
                id: 0,
                frame: 0,
                pose: other,
                observations: observe(&other, &s),
            },
            Keyframe {
                id: 1,
                frame: 5,
                pose,
                observations: observe(&pose, &s),
            },
        ];
        let est = relocalize_keyframe(
            &kfs,
            &kfs[1].observations,
            HD,
            &RansacParams::default(),
            1.0,
        )
        .unwrap();
        assert!((est.pose.pan + 4.0).abs() < 1e-6 && (est.pose.focal - 1900.0).abs() < 1e-3);
    }

    #[test]
    fn empty_inputs_fail() {
        let forest = PanTiltForest::new(ForestParams::default());
        let q = observe(
            &CameraPose {
                pan: 0.0,
                tilt: 0.0,
                focal: 2000.0,
            },
            &scene(50),
        );
        assert!(matches!(
            relocalize_forest(&forest, &q, HD, &RansacParams::default()),
            Err(PtzError::NotEnoughInliers { .. })
        ));
        assert!(matches!(
            relocalize_nns(
                &ExampleReservoir::default(),
                &[],
                HD,
                &RansacParams::default()
            ),
            Err(PtzError::NotEnoughInliers { .. })
        ));
    }
}
