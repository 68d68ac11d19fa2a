//! Pose, reprojection and relocalization metrics.

use serde::{Deserialize, Serialize};

use crate::camera::{
    angle_between, back_project, project_ray, wrap_degrees, CameraPose, ImageSize, Pixel, Ray,
};
use crate::error::{PtzError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStat {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl ErrorStat {
    pub fn from_abs(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            max: values.iter().cloned().fold(0.0, f64::max),
        }
    }
}

/// Mean absolute error, standard deviation and max per pose component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorStats {
    pub pan: ErrorStat,
    pub tilt: ErrorStat,
    pub focal: ErrorStat,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(PtzError::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(PtzError::EmptyEvaluation);
    }
    Ok(())
}

pub fn pose_errors(estimated: &[CameraPose], truth: &[CameraPose]) -> Result<PoseErrorStats> {
    check_lengths(estimated.len(), truth.len())?;
    let pan: Vec<f64> = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| wrap_degrees(e.pan - t.pan).abs())
        .collect();
    let tilt: Vec<f64> = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.tilt - t.tilt).abs())
        .collect();
    let focal: Vec<f64> = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.focal - t.focal).abs())
        .collect();
    Ok(PoseErrorStats {
        pan: ErrorStat::from_abs(&pan),
        tilt: ErrorStat::from_abs(&tilt),
        focal: ErrorStat::from_abs(&focal),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub count: usize,
    pub ray_set: String,
}

pub const GRID_RAY_SET: &str = "grid9x9_first_gt";

/// 9 x 9 grid of rays through the image of `first_truth`, borders included.
pub fn evaluation_rays(first_truth: &CameraPose, size: ImageSize) -> Vec<Ray> {
    let (w, h) = (size.width as f64, size.height as f64);
    let mut rays = Vec::with_capacity(81);
    for j in 0..9 {
        for i in 0..9 {
            let p = Pixel::new(w * i as f64 / 8.0, h * j as f64 / 8.0);
            if let Ok(r) = back_project(first_truth, size, &p) {
                rays.push(r);
            }
        }
    }
    rays
}

/// Pixel distance between each ray projected by the estimated and true
/// cameras, over rays visible in the true image.
pub fn reprojection_errors(
    estimated: &[CameraPose],
    truth: &[CameraPose],
    rays: &[Ray],
    size: ImageSize,
) -> Result<ReprojStats> {
    check_lengths(estimated.len(), truth.len())?;
    let mut errors = Vec::new();
    for (e, t) in estimated.iter().zip(truth) {
        for r in rays {
            let Ok(pt) = project_ray(t, size, r) else {
                continue;
            };
            if !size.contains(&pt) {
                continue;
            }
            let err = project_ray(e, size, r).map_or(f64::INFINITY, |pe| pe.distance(&pt));
            errors.push(err);
        }
    }
    if errors.is_empty() {
        return Err(PtzError::EmptyEvaluation);
    }
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    let median = if n % 2 == 1 {
        errors[n / 2]
    } else {
        0.5 * (errors[n / 2 - 1] + errors[n / 2])
    };
    Ok(ReprojStats {
        mean: errors.iter().sum::<f64>() / n as f64,
        median,
        max: errors[n - 1],
        count: n,
        ray_set: GRID_RAY_SET.into(),
    })
}

/// Angle between the two optical axes, degrees; focal is ignored.
pub fn angular_pose_error(a: &CameraPose, b: &CameraPose) -> f64 {
    angle_between(&a.optical_axis(), &b.optical_axis())
}

/// Fraction of estimates within `threshold_deg` of the truth. With
/// `max_focal_ratio`, the relative focal error must also stay within it.
pub fn relocalization_correctness(
    estimates: &[Option<CameraPose>],
    truth: &[CameraPose],
    threshold_deg: f64,
    max_focal_ratio: Option<f64>,
) -> Result<f64> {
    check_lengths(estimates.len(), truth.len())?;
    let correct = estimates
        .iter()
        .zip(truth)
        .filter(|(e, t)| {
            e.is_some_and(|e| {
                angular_pose_error(&e, t) <= threshold_deg
                    && max_focal_ratio.is_none_or(|r| (e.focal - t.focal).abs() / t.focal <= r)
            })
        })
        .count();
    Ok(correct as f64 / truth.len() as f64)
}
