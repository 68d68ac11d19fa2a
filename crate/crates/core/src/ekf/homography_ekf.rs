use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SMatrix, Vector3};

use super::{
    descriptor_distance, greedy_assign, sparse_kalman_update, symmetrize, EkfParams, Observation,
};
use crate::camera::{apply_homography, back_project, CameraPose, ImageSize, Pixel};
use crate::error::{PtzError, Result};
use crate::solvers::{ransac_homography, refine_pose, PixelRay, RansacParams};

const H_PARAMS: usize = 8;
const H_DIM: usize = 2 * H_PARAMS;

/// Predicted point with its Jacobians for the homography and the point.
type Measurement = ((f64, f64), SMatrix<f64, 2, 8>, Matrix2<f64>);

/// A landmark on the mosaic plane, in first-frame pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneLandmark {
    pub id: u64,
    pub point: Pixel,
    pub descriptor: Vec<f64>,
    pub observation_count: u32,
    pub miss_count: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EkfHDiagnostics {
    pub matches: usize,
    pub inliers: usize,
    pub mean_innovation: f64,
    pub rms: f64,
    /// Indices of the observations accepted as homography inliers.
    pub inlier_observations: Vec<usize>,
}

/// Homography-baseline EKF state.
///
/// The mean holds the 8 free entries of the mosaic-to-frame homography
/// (with `H[2][2] = 1`), their velocities, then the plane landmarks. All of
/// it lives in image coordinates centred on the principal point and scaled
/// by half the image width so the parameters share one order of magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfHState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub landmarks: Vec<PlaneLandmark>,
    size: ImageSize,
    next_id: u64,
}

impl EkfHState {
    pub fn new(size: ImageSize, params: &EkfParams) -> Self {
        let mut mean = DVector::zeros(H_DIM);
        mean[0] = 1.0;
        mean[4] = 1.0;
        let mut var = vec![1e-12; H_PARAMS];
        var.extend(std::iter::repeat_n(
            params.ekfh.init_velocity_std.powi(2),
            H_PARAMS,
        ));
        Self {
            mean,
            covariance: DMatrix::from_diagonal(&DVector::from_vec(var)),
            landmarks: Vec::new(),
            size,
            next_id: 0,
        }
    }

    fn scale(&self) -> f64 {
        self.size.width as f64 / 2.0
    }

    fn to_norm(&self, p: &Pixel) -> (f64, f64) {
        let (cx, cy) = self.size.principal_point();
        let s = self.scale();
        ((p.x - cx) / s, (p.y - cy) / s)
    }

    fn denormalize(&self, x: f64, y: f64) -> Pixel {
        let (cx, cy) = self.size.principal_point();
        let s = self.scale();
        Pixel::new(x * s + cx, y * s + cy)
    }

    fn normalized_h(&self) -> Matrix3<f64> {
        let m = &self.mean;
        Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], 1.0)
    }

    /// Mosaic-plane (first-frame pixel) to current-frame pixel homography.
    pub fn homography(&self) -> Matrix3<f64> {
        let (cx, cy) = self.size.principal_point();
        let s = self.scale();
        let n = Matrix3::new(1.0 / s, 0.0, -cx / s, 0.0, 1.0 / s, -cy / s, 0.0, 0.0, 1.0);
        let n_inv = Matrix3::new(s, 0.0, cx, 0.0, s, cy, 0.0, 0.0, 1.0);
        n_inv * self.normalized_h() * n
    }

    /// Restarts the motion block at the pixel homography `h`: zero
    /// velocity, prior covariance scaled by `inflation`, cross terms cleared.
    pub fn reset(&mut self, h: &Matrix3<f64>, params: &EkfParams, inflation: f64) -> Result<()> {
        let (cx, cy) = self.size.principal_point();
        let s = self.scale();
        let n = Matrix3::new(1.0 / s, 0.0, -cx / s, 0.0, 1.0 / s, -cy / s, 0.0, 0.0, 1.0);
        let n_inv = Matrix3::new(s, 0.0, cx, 0.0, s, cy, 0.0, 0.0, 1.0);
        let hn = n * h * n_inv;
        if hn[(2, 2)].abs() < 1e-12 {
            return Err(PtzError::Degenerate(
                "homography has a vanishing corner entry".into(),
            ));
        }
        let hn = hn / hn[(2, 2)];
        let dim = self.dim();
        for i in 0..H_DIM {
            for j in 0..dim {
                self.covariance[(i, j)] = 0.0;
                self.covariance[(j, i)] = 0.0;
            }
        }
        for i in 0..H_PARAMS {
            self.mean[i] = hn[(i / 3, i % 3)];
            self.mean[H_PARAMS + i] = 0.0;
            let std = params.ekfh.init_velocity_std;
            self.covariance[(i, i)] = inflation * std * std;
            self.covariance[(H_PARAMS + i, H_PARAMS + i)] = inflation * std * std;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn landmark_norm(&self, i: usize) -> (f64, f64) {
        let k = H_DIM + 2 * i;
        (self.mean[k], self.mean[k + 1])
    }

    fn sync_landmarks(&mut self) {
        for i in 0..self.landmarks.len() {
            let (x, y) = self.landmark_norm(i);
            self.landmarks[i].point = self.denormalize(x, y);
        }
    }

    /// Projection of a normalized plane point and its Jacobians with respect
    /// to the 8 homography entries and to the point.
    fn measure(&self, mx: f64, my: f64) -> Option<Measurement> {
        let h = self.normalized_h();
        let q = h * Vector3::new(mx, my, 1.0);
        if q.z.abs() < 1e-9 {
            return None;
        }
        let (a, b, c) = (q.x, q.y, q.z);
        let u = a / c;
        let v = b / c;
        let ic = 1.0 / c;
        let mut jh = SMatrix::<f64, 2, 8>::zeros();
        jh[(0, 0)] = mx * ic;
        jh[(0, 1)] = my * ic;
        jh[(0, 2)] = ic;
        jh[(0, 6)] = -u * mx * ic;
        jh[(0, 7)] = -u * my * ic;
        jh[(1, 3)] = mx * ic;
        jh[(1, 4)] = my * ic;
        jh[(1, 5)] = ic;
        jh[(1, 6)] = -v * mx * ic;
        jh[(1, 7)] = -v * my * ic;
        let jm = Matrix2::new(
            (h[(0, 0)] - u * h[(2, 0)]) * ic,
            (h[(0, 1)] - u * h[(2, 1)]) * ic,
            (h[(1, 0)] - v * h[(2, 0)]) * ic,
            (h[(1, 1)] - v * h[(2, 1)]) * ic,
        );
        Some(((u, v), jh, jm))
    }

    pub fn predict(&mut self, params: &EkfParams) {
        let n = self.dim();
        for i in 0..H_PARAMS {
            self.mean[i] += self.mean[i + H_PARAMS];
        }
        for i in 0..H_PARAMS {
            for j in 0..n {
                let v = self.covariance[(i + H_PARAMS, j)];
                self.covariance[(i, j)] += v;
            }
        }
        for j in 0..H_PARAMS {
            for i in 0..n {
                let v = self.covariance[(i, j + H_PARAMS)];
                self.covariance[(i, j)] += v;
            }
        }
        let e = &params.ekfh;
        let sigma = [
            e.process_linear,
            e.process_linear,
            e.process_translation,
            e.process_linear,
            e.process_linear,
            e.process_translation,
            e.process_perspective,
            e.process_perspective,
        ];
        for (i, s) in sigma.iter().enumerate() {
            self.covariance[(H_PARAMS + i, H_PARAMS + i)] += s * s;
        }
    }

    /// Adds observations as plane landmarks mapped through the current inverse homography.
    pub fn add_landmarks(&mut self, observations: &[&Observation], params: &EkfParams) -> usize {
        let Some(h_inv) = self.normalized_h().try_inverse() else {
            return 0;
        };
        let room = params.max_landmarks.saturating_sub(self.landmarks.len());
        let mut new = Vec::new();
        for obs in observations.iter().take(room) {
            let (px, py) = self.to_norm(&obs.pixel);
            let q = h_inv * Vector3::new(px, py, 1.0);
            if q.z.abs() < 1e-9 {
                continue;
            }
            let (mx, my) = (q.x / q.z, q.y / q.z);
            let Some((_, jh, jm)) = self.measure(mx, my) else {
                continue;
            };
            let Some(jm_inv) = jm.try_inverse() else {
                continue;
            };
            new.push((obs, mx, my, -jm_inv * jh, jm_inv));
        }
        if new.is_empty() {
            return 0;
        }
        let s = self.scale();
        let meas_var = (params.meas_noise_px / s).powi(2);
        let init_var = (params.ekfh.init_landmark_std_px / s).powi(2);
        let n_old = self.dim();
        let n = n_old + 2 * new.len();
        let mut cov = DMatrix::<f64>::zeros(n, n);
        cov.view_mut((0, 0), (n_old, n_old))
            .copy_from(&self.covariance);
        let mut mean = DVector::<f64>::zeros(n);
        mean.rows_mut(0, n_old).copy_from(&self.mean);
        let p_h_all = self.covariance.rows(0, H_PARAMS).into_owned();
        let p_hh = self.covariance.fixed_view::<8, 8>(0, 0).into_owned();
        for (a, (obs, mx, my, d_h, jm_inv)) in new.iter().enumerate() {
            let ra = n_old + 2 * a;
            mean[ra] = *mx;
            mean[ra + 1] = *my;
            let cross = d_h * &p_h_all;
            cov.view_mut((ra, 0), (2, n_old)).copy_from(&cross);
            cov.view_mut((0, ra), (n_old, 2))
                .copy_from(&cross.transpose());
            for (b, (_, _, _, d_h_b, _)) in new.iter().enumerate() {
                let rb = n_old + 2 * b;
                let mut block = d_h * p_hh * d_h_b.transpose();
                if a == b {
                    block +=
                        jm_inv * jm_inv.transpose() * meas_var + Matrix2::identity() * init_var;
                }
                cov.view_mut((ra, rb), (2, 2)).copy_from(&block);
            }
            self.landmarks.push(PlaneLandmark {
                id: self.next_id,
                point: self.denormalize(*mx, *my),
                descriptor: obs.descriptor.clone(),
                observation_count: 1,
                miss_count: 0,
            });
            self.next_id += 1;
        }
        symmetrize(&mut cov);
        self.mean = mean;
        self.covariance = cov;
        new.len()
    }

    fn prune(&mut self, max_misses: u32) {
        let keep: Vec<usize> = (0..self.landmarks.len())
            .filter(|&i| self.landmarks[i].miss_count <= max_misses)
            .collect();
        if keep.len() == self.landmarks.len() {
            return;
        }
        let idx: Vec<usize> = (0..H_DIM)
            .chain(
                keep.iter()
                    .flat_map(|&i| [H_DIM + 2 * i, H_DIM + 2 * i + 1]),
            )
            .collect();
        self.mean = self.mean.select_rows(idx.iter());
        self.covariance = self
            .covariance
            .select_rows(idx.iter())
            .select_columns(idx.iter());
        let old = std::mem::take(&mut self.landmarks);
        self.landmarks = old
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep.binary_search(i).is_ok())
            .map(|(_, l)| l)
            .collect();
    }

    /// One tracking step: predict, match, reject outliers with a RANSAC
    /// homography, update, then grow and prune the plane map.
    pub fn step(
        &mut self,
        observations: &[Observation],
        params: &EkfParams,
        ransac: &RansacParams,
    ) -> Result<EkfHDiagnostics> {
        self.predict(params);
        let h = self.homography();
        let size = self.size;

        let mut candidates = Vec::new();
        for (li, lm) in self.landmarks.iter().enumerate() {
            let Ok(pred) = apply_homography(&h, &lm.point) else {
                continue;
            };
            if !size.contains(&pred) {
                continue;
            }
            for (oi, obs) in observations.iter().enumerate() {
                if obs.pixel.distance(&pred) > params.gate_px {
                    continue;
                }
                let d = descriptor_distance(&lm.descriptor, &obs.descriptor);
                if d <= params.descriptor_match_max_dist {
                    candidates.push((d, li, oi));
                }
            }
        }
        let matches = greedy_assign(candidates);
        let mut matched_lm = vec![false; self.landmarks.len()];
        let mut matched_obs = vec![false; observations.len()];
        for &(_, l, o) in &matches {
            matched_lm[l] = true;
            matched_obs[o] = true;
        }
        for (lm, hit) in self.landmarks.iter_mut().zip(&matched_lm) {
            if *hit {
                lm.miss_count = 0;
                lm.observation_count += 1;
            } else {
                lm.miss_count += 1;
            }
        }
        if matches.len() < 4 {
            return Err(PtzError::TrackingLost(format!(
                "{} plane matches",
                matches.len()
            )));
        }

        let pairs: Vec<(Pixel, Pixel)> = matches
            .iter()
            .map(|&(_, l, o)| (self.landmarks[l].point, observations[o].pixel))
            .collect();
        let robust = RansacParams {
            min_inliers: ransac.min_inliers.max(4),
            ..ransac.clone()
        };
        let est = ransac_homography(&pairs, &robust)
            .map_err(|e| PtzError::TrackingLost(format!("homography RANSAC failed: {e}")))?;

        let mut rows = Vec::new();
        let mut innovation = Vec::new();
        let mut innovation_px = 0.0;
        let mut used = Vec::new();
        let s = self.scale();
        for (&(_, l, o), inlier) in matches.iter().zip(&est.inliers) {
            if !inlier {
                continue;
            }
            let (mx, my) = self.landmark_norm(l);
            let Some(((u, v), jh, jm)) = self.measure(mx, my) else {
                continue;
            };
            let (zx, zy) = self.to_norm(&observations[o].pixel);
            let k = H_DIM + 2 * l;
            for r in 0..2 {
                let mut row: Vec<(usize, f64)> = (0..H_PARAMS)
                    .map(|c| (c, jh[(r, c)]))
                    .filter(|e| e.1 != 0.0)
                    .collect();
                row.push((k, jm[(r, 0)]));
                row.push((k + 1, jm[(r, 1)]));
                rows.push(row);
            }
            innovation.push(zx - u);
            innovation.push(zy - v);
            innovation_px += (zx - u).hypot(zy - v) * s;
            used.push((l, o));
        }
        if used.len() < 4 {
            return Err(PtzError::TrackingLost(format!(
                "{} homography inliers",
                used.len()
            )));
        }
        let var = (params.meas_noise_px / s).powi(2);
        if !sparse_kalman_update(
            &mut self.mean,
            &mut self.covariance,
            &DVector::from_vec(innovation),
            &rows,
            var,
        ) {
            return Err(PtzError::TrackingLost(
                "innovation covariance is not positive definite".into(),
            ));
        }
        self.sync_landmarks();

        let h = self.homography();
        let sq: f64 = used
            .iter()
            .map(|&(l, o)| {
                apply_homography(&h, &self.landmarks[l].point)
                    .map(|p| p.distance(&observations[o].pixel).powi(2))
                    .unwrap_or(f64::INFINITY)
            })
            .sum();
        let diag = EkfHDiagnostics {
            matches: matches.len(),
            inliers: used.len(),
            mean_innovation: innovation_px / used.len() as f64,
            rms: (sq / used.len() as f64).sqrt(),
            inlier_observations: used.iter().map(|&(_, o)| o).collect(),
        };

        let fresh: Vec<&Observation> = observations
            .iter()
            .zip(&matched_obs)
            .filter(|(_, m)| !**m)
            .map(|(o, _)| o)
            .collect();
        self.add_landmarks(&fresh, params);
        self.prune(params.max_misses);
        Ok(diag)
    }
}

/// Pan/tilt/focal explaining a mosaic-to-frame homography, starting the
/// refinement from `first_pose`.
pub fn homography_to_pose(
    h: &Matrix3<f64>,
    first_pose: &CameraPose,
    size: ImageSize,
) -> Result<CameraPose> {
    homography_to_pose_from(h, first_pose, first_pose, size)
}

/// As [`homography_to_pose`], with an explicit starting pose for the refinement.
pub fn homography_to_pose_from(
    h: &Matrix3<f64>,
    first_pose: &CameraPose,
    initial: &CameraPose,
    size: ImageSize,
) -> Result<CameraPose> {
    if h.determinant().abs() < 1e-15 {
        return Err(PtzError::Degenerate("homography is not invertible".into()));
    }
    let (w, hgt) = (size.width as f64, size.height as f64);
    let mut pairs = Vec::with_capacity(25);
    for i in 0..5 {
        for j in 0..5 {
            let p = Pixel::new(w * (0.1 + 0.2 * i as f64), hgt * (0.1 + 0.2 * j as f64));
            let ray = back_project(first_pose, size, &p)?;
            let q = apply_homography(h, &p)?;
            pairs.push(PixelRay::new(q, ray));
        }
    }
    refine_pose(initial, &pairs, size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project_ray, relative_homography, Ray};

    const HD: ImageSize = ImageSize {
        width: 1280,
        height: 720,
    };

    #[test]
    fn identity_homography_gives_first_pose() {
        let first = CameraPose {
            pan: 2.0,
            tilt: -10.0,
            focal: 2100.0,
        };
        let p = homography_to_pose(&Matrix3::identity(), &first, HD).unwrap();
        assert!(
            (p.pan - 2.0).abs() < 1e-9
                && (p.tilt + 10.0).abs() < 1e-9
                && (p.focal - 2100.0).abs() < 1e-6
        );
    }

    #[test]
    fn relative_homography_inverts_exactly() {
        let first = CameraPose {
            pan: 2.0,
            tilt: -10.0,
            focal: 2100.0,
        };
        let target = CameraPose {
            pan: 5.5,
            tilt: -8.0,
            focal: 2400.0,
        };
        let h = relative_homography(&first, &target, HD).unwrap();
        let p = homography_to_pose(&h, &first, HD).unwrap();
        assert!((p.pan - target.pan).abs() < 1e-6, "{p:?}");
        assert!((p.tilt - target.tilt).abs() < 1e-6, "{p:?}");
        assert!((p.focal - target.focal).abs() < 1e-3, "{p:?}");
    }

    fn frame(pose: &CameraPose, rays: &[(Ray, Vec<f64>)]) -> Vec<Observation> {
        rays.iter()
            .filter_map(|(r, d)| {
                let p = project_ray(pose, HD, r).ok()?;
                HD.contains(&p).then(|| Observation::new(p, d.clone()))
            })
            .collect()
    }

    #[test]
    fn static_camera_keeps_identity() {
        let pose = CameraPose {
            pan: 0.0,
            tilt: -5.0,
            focal: 2000.0,
        };
        let rays: Vec<(Ray, Vec<f64>)> = (0..40)
            .map(|i| {
                let ray = Ray {
                    theta: -12.0 + (i % 8) as f64 * 3.0,
                    phi: -12.0 + (i / 8) as f64 * 3.0,
                };
                let mut d = vec![0.0; 8];
                d[i % 8] = 2.0 + (i / 8) as f64 * 2.0;
                (ray, d)
            })
            .collect();
        let params = EkfParams::default();
        let mut state = EkfHState::new(HD, &params);
        let obs = frame(&pose, &rays);
        let refs: Vec<&Observation> = obs.iter().collect();
        state.add_landmarks(&refs, &params);
        for _ in 0..5 {
            state.step(&obs, &params, &RansacParams::default()).unwrap();
        }
        assert!((state.homography() - Matrix3::identity()).abs().max() < 1e-6);
    }
}
