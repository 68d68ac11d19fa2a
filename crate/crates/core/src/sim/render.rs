use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FrameObservations, NoiseConfig, Rect, SceneModel};
use crate::camera::{project_ray, CameraPose, ImageSize, Pixel};
use crate::ekf::Observation;

const PIXEL_TRUNCATION: f64 = 3.5;

fn clamp_to(size: ImageSize, p: Pixel) -> Pixel {
    Pixel::new(
        p.x.clamp(0.0, size.width as f64),
        p.y.clamp(0.0, size.height as f64),
    )
}

/// Observes every visible scene ray from `pose`, then applies dropout,
/// pixel and descriptor noise, outliers and player boxes.
pub fn render_frame(
    scene: &SceneModel,
    index: usize,
    pose: &CameraPose,
    size: ImageSize,
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> FrameObservations {
    let (w, h) = (size.width as f64, size.height as f64);
    let mut observations = Vec::new();
    for lm in &scene.landmarks {
        let Ok(exact) = project_ray(pose, size, &lm.ray) else {
            continue;
        };
        if !size.contains(&exact) {
            continue;
        }
        if noise.dropout_ratio > 0.0 && rng.random::<f64>() < noise.dropout_ratio {
            continue;
        }
        // Truncated at 3.5 sigma per axis so no inlier strays past 5 sigma.
        let dx = rng
            .sample::<f64, _>(StandardNormal)
            .clamp(-PIXEL_TRUNCATION, PIXEL_TRUNCATION);
        let dy = rng
            .sample::<f64, _>(StandardNormal)
            .clamp(-PIXEL_TRUNCATION, PIXEL_TRUNCATION);
        let pixel = clamp_to(
            size,
            Pixel::new(
                exact.x + dx * noise.pixel_sigma,
                exact.y + dy * noise.pixel_sigma,
            ),
        );
        let descriptor: Vec<f64> = lm
            .latent
            .iter()
            .map(|v| v + noise.descriptor_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let outlier = noise.outlier_ratio > 0.0 && rng.random::<f64>() < noise.outlier_ratio;
        observations.push(if outlier {
            Observation {
                pixel: Pixel::new(rng.random_range(0.0..=w), rng.random_range(0.0..=h)),
                descriptor: (0..descriptor.len())
                    .map(|_| rng.sample(StandardNormal))
                    .collect(),
                true_landmark_id: None,
            }
        } else {
            Observation {
                pixel,
                descriptor,
                true_landmark_id: Some(lm.id),
            }
        });
    }

    let [bw, bh] = noise.box_size;
    let boxes: Vec<Rect> = (0..noise.player_boxes_per_frame)
        .map(|_| {
            let x0 = rng.random_range(0.0..=(w - bw).max(0.0));
            let y0 = rng.random_range(0.0..=(h - bh).max(0.0));
            Rect {
                x0,
                y0,
                x1: (x0 + bw).min(w),
                y1: (y0 + bh).min(h),
            }
        })
        .collect();

    if noise.box_shift_px > 0.0 {
        let s = noise.box_shift_px;
        for obs in observations.iter_mut() {
            if let Some(b) = boxes.iter().find(|b| b.contains(&obs.pixel)) {
                // Keypoints on a player stay on the player.
                let shifted = Pixel::new(
                    (obs.pixel.x + rng.random_range(-s..=s)).clamp(b.x0, b.x1),
                    (obs.pixel.y + rng.random_range(-s..=s)).clamp(b.y0, b.y1),
                );
                obs.pixel = clamp_to(size, shifted);
                obs.true_landmark_id = None;
            }
        }
    }

    FrameObservations {
        index,
        observations,
        player_boxes: boxes,
        ground_truth_pose: *pose,
    }
}
