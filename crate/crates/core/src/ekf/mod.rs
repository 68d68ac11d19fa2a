//! Frame-to-frame tracking filters.
//!
//! [`CameraStatePtz`] tracks (pan, tilt, focal) and their velocities jointly
//! with ray landmarks. [`EkfHState`] is the homography baseline that keeps
//! planar landmarks on the first frame's extended image plane.

mod homography_ekf;
mod ptz;

pub use homography_ekf::{
    homography_to_pose, homography_to_pose_from, EkfHDiagnostics, EkfHState, PlaneLandmark,
};
pub use ptz::{CameraStatePtz, LandmarkEntry, LandmarkMatch, UpdateDiagnostics};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::camera::Pixel;

/// A keypoint with its descriptor.
///
/// `true_landmark_id` is ground truth for evaluation and is never read by
/// the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pixel: Pixel,
    pub descriptor: Vec<f64>,
    pub true_landmark_id: Option<u64>,
}

impl Observation {
    pub fn new(pixel: Pixel, descriptor: Vec<f64>) -> Self {
        Self {
            pixel,
            descriptor,
            true_landmark_id: None,
        }
    }
}

pub fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfParams {
    /// Keypoint location standard deviation, pixels.
    pub meas_noise_px: f64,
    /// Pan/tilt velocity process noise, degrees per frame.
    pub process_noise_angle: f64,
    /// Focal velocity process noise, pixels per frame.
    pub process_noise_focal: f64,
    pub init_landmark_angle_std: f64,
    pub gate_px: f64,
    pub descriptor_match_max_dist: f64,
    pub init_angle_std: f64,
    pub init_focal_std: f64,
    pub init_velocity_angle_std: f64,
    pub init_velocity_focal_std: f64,
    /// Post-update residual below which a match counts as an inlier.
    pub inlier_px: f64,
    /// Landmarks missed more often than this are dropped from the state.
    pub max_misses: u32,
    /// Cap on landmarks held in the joint state; new ones are skipped beyond it.
    pub max_landmarks: usize,
    pub ekfh: EkfHNoise,
}

impl Default for EkfParams {
    fn default() -> Self {
        Self {
            meas_noise_px: 0.5,
            process_noise_angle: 0.001,
            process_noise_focal: 1.0,
            init_landmark_angle_std: 0.05,
            gate_px: 20.0,
            descriptor_match_max_dist: 1.5,
            init_angle_std: 0.001,
            init_focal_std: 0.1,
            init_velocity_angle_std: 0.05,
            init_velocity_focal_std: 5.0,
            inlier_px: 3.0,
            max_misses: 10,
            max_landmarks: 160,
            ekfh: EkfHNoise::default(),
        }
    }
}

/// Noise settings of the homography baseline, in image coordinates
/// normalized by half the image width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfHNoise {
    pub process_translation: f64,
    pub process_linear: f64,
    pub process_perspective: f64,
    pub init_velocity_std: f64,
    pub init_landmark_std_px: f64,
}

impl Default for EkfHNoise {
    fn default() -> Self {
        Self {
            process_translation: 1e-4,
            process_linear: 5e-4,
            process_perspective: 1e-5,
            init_velocity_std: 1e-3,
            init_landmark_std_px: 0.5,
        }
    }
}

/// Largest asymmetry and smallest eigenvalue of a covariance matrix.
pub fn covariance_health(cov: &DMatrix<f64>) -> (f64, f64) {
    let asym = (cov - cov.transpose()).abs().max();
    let sym = (cov + cov.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
    (asym, min_eig)
}

pub(crate) fn symmetrize(cov: &mut DMatrix<f64>) {
    let n = cov.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
}

/// Greedy one-to-one assignment over `(cost, row, col)` triples, cheapest first.
pub(crate) fn greedy_assign(mut candidates: Vec<(f64, usize, usize)>) -> Vec<(f64, usize, usize)> {
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_rows = std::collections::HashSet::new();
    let mut used_cols = std::collections::HashSet::new();
    candidates
        .into_iter()
        .filter(|(_, r, c)| {
            if used_rows.contains(r) || used_cols.contains(c) {
                return false;
            }
            used_rows.insert(*r);
            used_cols.insert(*c);
            true
        })
        .collect()
}

/// Joseph-form measurement update of a mean/covariance pair.
///
/// `jac` lists, for each of the `m` measurement rows, its nonzero
/// `(state index, value)` entries. Returns `false` if the innovation
/// covariance could not be factored.
pub(crate) fn sparse_kalman_update(
    mean: &mut nalgebra::DVector<f64>,
    cov: &mut DMatrix<f64>,
    innovation: &nalgebra::DVector<f64>,
    jac: &[Vec<(usize, f64)>],
    meas_var: f64,
) -> bool {
    let n = cov.nrows();
    let m = jac.len();
    // B = P H^T  (n x m)
    let mut b = DMatrix::<f64>::zeros(n, m);
    for (k, row) in jac.iter().enumerate() {
        for &(c, v) in row {
            let col = cov.column(c);
            let mut bk = b.column_mut(k);
            bk.axpy(v, &col, 1.0);
        }
    }
    // S = H B + R
    let mut s = DMatrix::<f64>::zeros(m, m);
    for (k, row) in jac.iter().enumerate() {
        for &(c, v) in row {
            for j in 0..m {
                s[(k, j)] += v * b[(c, j)];
            }
        }
        s[(k, k)] += meas_var;
    }
    symmetrize(&mut s);
    let Some(chol) = s.clone().cholesky() else {
        return false;
    };
    // K = B S^-1
    let gain = chol.solve(&b.transpose()).transpose();
    *mean += &gain * innovation;
    // Joseph form (I-KH)P(I-KH)^T + KRK^T = P - K B^T - B K^T + K S K^T
    let kbt = &gain * b.transpose();
    let ksk = (&gain * &s) * gain.transpose();
    *cov += ksk - &kbt - kbt.transpose();
    symmetrize(cov);
    true
}
