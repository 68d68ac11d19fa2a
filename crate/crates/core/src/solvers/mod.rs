//! Pose estimation from pixel-ray correspondences.

mod homography;
mod ransac;
mod refine;
mod two_point;

pub use homography::{dlt_homography, ransac_homography, HomographyEstimate};
pub use ransac::{ransac_pose, PoseEstimate, RansacParams};
pub use refine::{refine_pose, refine_pose_traced, RefineTrace};
pub use two_point::{
    solve_two_point, two_point_hypothesis, FOCAL_SEARCH_MAX, FOCAL_SEARCH_MIN, FOCAL_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::camera::{Pixel, Ray};

/// A pixel paired with exactly one ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRay {
    pub pixel: Pixel,
    pub ray: Ray,
}

impl PixelRay {
    pub fn new(pixel: Pixel, ray: Ray) -> Self {
        Self { pixel, ray }
    }
}

/// A pixel with one or more candidate rays (e.g. one per forest tree).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub pixel: Pixel,
    pub candidates: Vec<Ray>,
}

impl Correspondence {
    pub fn single(pixel: Pixel, ray: Ray) -> Self {
        Self {
            pixel,
            candidates: vec![ray],
        }
    }
}
