use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{refine_pose, two_point_hypothesis, Correspondence, PixelRay};
use crate::camera::{camera_rotation, CameraPose, ImageSize, DEPTH_EPS};
use crate::error::{PtzError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    pub max_iterations: usize,
    /// Reprojection threshold in pixels.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    /// Early-exit confidence; values >= 1 disable early exit.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            inlier_threshold: 3.0,
            min_inliers: 8,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.inlier_threshold > 0.0) || self.min_inliers < 2 {
            return Err(PtzError::InvalidInput(format!(
                "invalid RANSAC parameters {self:?}"
            )));
        }
        Ok(())
    }

    /// Iterations needed to draw one all-good sample of `sample_size` with
    /// the configured confidence, given a per-draw success probability.
    pub(crate) fn required_iterations(&self, good_fraction: f64, sample_size: i32) -> usize {
        if !(self.confidence < 1.0) || self.confidence <= 0.0 {
            return self.max_iterations;
        }
        let p = good_fraction.clamp(0.0, 1.0).powi(sample_size);
        if p >= 1.0 - 1e-12 {
            return 1;
        }
        if p <= 1e-12 {
            return self.max_iterations;
        }
        let n = (1.0 - self.confidence).ln() / (1.0 - p).ln();
        (n.ceil() as usize).clamp(1, self.max_iterations)
    }
}

/// Robust pose with its inlier mask and the candidate chosen per correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: CameraPose,
    pub inliers: Vec<bool>,
    pub chosen: Vec<usize>,
}

impl PoseEstimate {
    pub fn num_inliers(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

/// Projection with the rotation precomputed for one hypothesis.
pub(crate) struct Projector {
    rot: Matrix3<f64>,
    focal: f64,
    cx: f64,
    cy: f64,
}

impl Projector {
    pub(crate) fn new(pose: &CameraPose, size: ImageSize) -> Self {
        let (cx, cy) = size.principal_point();
        Self {
            rot: camera_rotation(pose),
            focal: pose.focal,
            cx,
            cy,
        }
    }

    #[inline]
    pub(crate) fn squared_error(&self, dir: &Vector3<f64>, x: f64, y: f64) -> f64 {
        let q = self.rot * dir;
        if q.z <= DEPTH_EPS {
            return f64::INFINITY;
        }
        let dx = self.focal * q.x / q.z + self.cx - x;
        let dy = self.focal * q.y / q.z + self.cy - y;
        dx * dx + dy * dy
    }
}

struct Score {
    inliers: Vec<bool>,
    chosen: Vec<usize>,
    count: usize,
    good_fraction: f64,
}

fn score(
    pose: &CameraPose,
    corrs: &[Correspondence],
    dirs: &[Vec<Vector3<f64>>],
    size: ImageSize,
    threshold: f64,
) -> Score {
    let proj = Projector::new(pose, size);
    let t2 = threshold * threshold;
    let mut inliers = vec![false; corrs.len()];
    let mut chosen = vec![0; corrs.len()];
    let mut count = 0;
    let mut good = 0.0;
    for (i, (c, ds)) in corrs.iter().zip(dirs).enumerate() {
        let mut best = f64::INFINITY;
        let mut hits = 0usize;
        for (k, d) in ds.iter().enumerate() {
            let e = proj.squared_error(d, c.pixel.x, c.pixel.y);
            if e < t2 {
                hits += 1;
            }
            if e < best {
                best = e;
                chosen[i] = k;
            }
        }
        if best < t2 {
            inliers[i] = true;
            count += 1;
            good += hits as f64 / ds.len() as f64;
        }
    }
    Score {
        inliers,
        chosen,
        count,
        good_fraction: good / corrs.len().max(1) as f64,
    }
}

fn selected_pairs(corrs: &[Correspondence], s: &Score) -> Vec<PixelRay> {
    corrs
        .iter()
        .zip(s.inliers.iter().zip(&s.chosen))
        .filter(|(_, (inl, _))| **inl)
        .map(|(c, (_, k))| PixelRay::new(c.pixel, c.candidates[*k]))
        .collect()
}

/// Robust (pan, tilt, focal) from pixels with candidate rays.
///
/// Each hypothesis draws two correspondences and one candidate ray from each
/// uniformly; scoring uses every correspondence's best candidate. Sample
/// indices come from a seeded stream, so results are reproducible, and ties
/// keep the earliest hypothesis.
pub fn ransac_pose(
    corrs: &[Correspondence],
    size: ImageSize,
    params: &RansacParams,
) -> Result<PoseEstimate> {
    params.validate()?;
    let n = corrs.len();
    if n < 2 {
        return Err(PtzError::NotEnoughInliers {
            found: 0,
            required: params.min_inliers,
        });
    }
    if corrs.iter().any(|c| c.candidates.is_empty()) {
        return Err(PtzError::InvalidInput(
            "correspondence without candidates".into(),
        ));
    }
    let dirs: Vec<Vec<Vector3<f64>>> = corrs
        .iter()
        .map(|c| c.candidates.iter().map(|r| r.plane_point()).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(CameraPose, Score)> = None;
    let mut needed = params.max_iterations;
    let mut iter = 0;
    while iter < needed {
        iter += 1;
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let ci = rng.random_range(0..corrs[i].candidates.len());
        let cj = rng.random_range(0..corrs[j].candidates.len());
        let a = PixelRay::new(corrs[i].pixel, corrs[i].candidates[ci]);
        let b = PixelRay::new(corrs[j].pixel, corrs[j].candidates[cj]);
        let Ok((pose, _)) = two_point_hypothesis(&a, &b, size) else {
            continue;
        };
        if !pose.is_valid() {
            continue;
        }
        let s = score(&pose, corrs, &dirs, size, params.inlier_threshold);
        if best.as_ref().is_none_or(|(_, b)| s.count > b.count) {
            needed = params.required_iterations(s.good_fraction, 2).max(iter);
            best = Some((pose, s));
        }
    }

    let Some((mut pose, mut s)) = best else {
        return Err(PtzError::NotEnoughInliers {
            found: 0,
            required: params.min_inliers,
        });
    };
    if s.count < params.min_inliers {
        return Err(PtzError::NotEnoughInliers {
            found: s.count,
            required: params.min_inliers,
        });
    }

    // refine on inliers, then re-score; a second pass absorbs mask changes
    for _ in 0..2 {
        let pairs = selected_pairs(corrs, &s);
        let Ok(refined) = refine_pose(&pose, &pairs, size) else {
            break;
        };
        let rs = score(&refined, corrs, &dirs, size, params.inlier_threshold);
        if rs.count < s.count {
            break;
        }
        let unchanged = rs.inliers == s.inliers;
        pose = refined;
        s = rs;
        if unchanged {
            break;
        }
    }

    Ok(PoseEstimate {
        pose,
        inliers: s.inliers,
        chosen: s.chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project_ray, Pixel, Ray};

    const HD: ImageSize = ImageSize {
        width: 1280,
        height: 720,
    };

    fn scene(truth: &CameraPose, n: usize, seed: u64) -> Vec<Correspondence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let ray = Ray {
                    theta: truth.pan + rng.random_range(-14.0..14.0),
                    phi: truth.tilt + rng.random_range(-8.0..8.0),
                };
                Correspondence::single(project_ray(truth, HD, &ray).unwrap(), ray)
            })
            .collect()
    }

    #[test]
    fn exact_data_gives_exact_pose() {
        let truth = CameraPose {
            pan: 3.0,
            tilt: -11.0,
            focal: 2300.0,
        };
        let corrs = scene(&truth, 100, 1);
        let est = ransac_pose(&corrs, HD, &RansacParams::default()).unwrap();
        assert_eq!(est.num_inliers(), 100);
        assert!((est.pose.pan - truth.pan).abs() < 1e-6);
        assert!((est.pose.tilt - truth.tilt).abs() < 1e-6);
        assert!((est.pose.focal - truth.focal).abs() < 1e-3);
    }

    #[test]
    fn all_outliers_fail() {
        let corrs = vec![
            Correspondence::single(
                Pixel::new(10.0, 10.0),
                Ray {
                    theta: 40.0,
                    phi: 3.0,
                },
            ),
            Correspondence::single(
                Pixel::new(900.0, 50.0),
                Ray {
                    theta: -20.0,
                    phi: 30.0,
                },
            ),
            Correspondence::single(
                Pixel::new(400.0, 700.0),
                Ray {
                    theta: 5.0,
                    phi: -45.0,
                },
            ),
        ];
        let err = ransac_pose(&corrs, HD, &RansacParams::default()).unwrap_err();
        assert!(matches!(err, PtzError::NotEnoughInliers { .. }));
    }

    #[test]
    fn deterministic_for_seed() {
        let truth = CameraPose {
            pan: -7.0,
            tilt: -4.0,
            focal: 1800.0,
        };
        let mut corrs = scene(&truth, 60, 9);
        for c in corrs.iter_mut().step_by(2) {
            c.pixel = Pixel::new(c.pixel.y, c.pixel.x);
        }
        let p = RansacParams {
            seed: 42,
            ..Default::default()
        };
        let a = ransac_pose(&corrs, HD, &p).unwrap();
        let b = ransac_pose(&corrs, HD, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn required_iterations_formula() {
        let p = RansacParams::default();
        assert_eq!(p.required_iterations(1.0, 2), 1);
        assert_eq!(p.required_iterations(0.0, 2), 500);
        // log(0.001) / log(1 - 0.25) = 24.01
        assert_eq!(p.required_iterations(0.5, 2), 25);
    }
}
