use nalgebra::{DMatrix, DVector, Matrix2, SMatrix};
use serde::{Deserialize, Serialize};

use super::{
    descriptor_distance, greedy_assign, sparse_kalman_update, symmetrize, EkfParams, Observation,
};
use crate::camera::{
    back_project, jacobian_projection, project_ray, wrap_degrees, CameraPose, ImageSize, Ray,
};
use crate::error::{PtzError, Result};

/// Camera block size: pose (pan, tilt, focal) followed by its velocities.
pub const CAMERA_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkEntry {
    pub id: u64,
    pub ray: Ray,
    pub descriptor: Vec<f64>,
    pub observation_count: u32,
    pub miss_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkMatch {
    /// Index into [`CameraStatePtz::landmarks`].
    pub landmark: usize,
    pub observation: usize,
    pub descriptor_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateDiagnostics {
    pub matches: usize,
    /// Mean innovation norm before the update, pixels.
    pub mean_innovation: f64,
    /// Per-match reprojection residual after the update, pixels.
    pub residuals: Vec<f64>,
    pub inliers: usize,
    pub rms: f64,
}

/// Joint EKF state `[pan, tilt, focal, d_pan, d_tilt, d_focal, theta_1, phi_1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraStatePtz {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub landmarks: Vec<LandmarkEntry>,
    next_id: u64,
}

impl CameraStatePtz {
    pub fn new(pose: &CameraPose, params: &EkfParams) -> Self {
        let mut mean = DVector::zeros(CAMERA_DIM);
        mean[0] = pose.pan;
        mean[1] = pose.tilt;
        mean[2] = pose.focal;
        let var = [
            params.init_angle_std.powi(2),
            params.init_angle_std.powi(2),
            params.init_focal_std.powi(2),
            params.init_velocity_angle_std.powi(2),
            params.init_velocity_angle_std.powi(2),
            params.init_velocity_focal_std.powi(2),
        ];
        Self {
            mean,
            covariance: DMatrix::from_diagonal(&DVector::from_row_slice(&var)),
            landmarks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn pose(&self) -> CameraPose {
        CameraPose {
            pan: self.mean[0],
            tilt: self.mean[1],
            focal: self.mean[2],
        }
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.mean[3], self.mean[4], self.mean[5]]
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn landmark_ray(&self, i: usize) -> Ray {
        let k = CAMERA_DIM + 2 * i;
        Ray {
            theta: self.mean[k],
            phi: self.mean[k + 1],
        }
    }

    fn sync_landmarks(&mut self) {
        for i in 0..self.landmarks.len() {
            self.landmarks[i].ray = self.landmark_ray(i);
        }
    }

    /// Restarts the camera block at `pose`: zero velocity, covariance
    /// `inflation` times the initial prior, camera/landmark cross terms cleared.
    pub fn reset_camera(&mut self, pose: &CameraPose, params: &EkfParams, inflation: f64) {
        let fresh = Self::new(pose, params);
        for i in 0..CAMERA_DIM {
            self.mean[i] = fresh.mean[i];
        }
        let n = self.dim();
        for i in 0..CAMERA_DIM {
            for j in 0..n {
                self.covariance[(i, j)] = 0.0;
                self.covariance[(j, i)] = 0.0;
            }
            self.covariance[(i, i)] = fresh.covariance[(i, i)] * inflation;
        }
    }

    /// Constant-velocity prediction over `dt` frames.
    pub fn predict(&mut self, dt: f64, params: &EkfParams) -> Result<()> {
        if !(dt > 0.0) {
            return Err(PtzError::InvalidInput(format!(
                "dt must be positive, got {dt}"
            )));
        }
        for i in 0..3 {
            self.mean[i] += dt * self.mean[i + 3];
        }
        self.mean[0] = wrap_degrees(self.mean[0]);
        // P <- F P F^T with F = [[I, dt I], [0, I]] on the camera block
        let n = self.dim();
        for i in 0..3 {
            for j in 0..n {
                let v = self.covariance[(i + 3, j)];
                self.covariance[(i, j)] += dt * v;
            }
        }
        for j in 0..3 {
            for i in 0..n {
                let v = self.covariance[(i, j + 3)];
                self.covariance[(i, j)] += dt * v;
            }
        }
        self.covariance[(3, 3)] += params.process_noise_angle.powi(2) * dt;
        self.covariance[(4, 4)] += params.process_noise_angle.powi(2) * dt;
        self.covariance[(5, 5)] += params.process_noise_focal.powi(2) * dt;
        Ok(())
    }

    /// Gated greedy descriptor matching of landmarks against observations.
    ///
    /// Candidates must lie within `gate_px` of the predicted projection and
    /// within `descriptor_match_max_dist` in descriptor space; pairs are then
    /// taken cheapest descriptor distance first. Matched landmarks have their
    /// miss counter reset, every other landmark has it incremented.
    pub fn associate(
        &mut self,
        size: ImageSize,
        observations: &[Observation],
        params: &EkfParams,
    ) -> Vec<LandmarkMatch> {
        let pose = self.pose();
        let mut candidates = Vec::new();
        for (li, lm) in self.landmarks.iter().enumerate() {
            let Ok(pred) = project_ray(&pose, size, &lm.ray) else {
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
        let matches: Vec<LandmarkMatch> = greedy_assign(candidates)
            .into_iter()
            .map(|(d, l, o)| LandmarkMatch {
                landmark: l,
                observation: o,
                descriptor_distance: d,
            })
            .collect();
        let mut matched = vec![false; self.landmarks.len()];
        for m in &matches {
            matched[m.landmark] = true;
        }
        for (lm, hit) in self.landmarks.iter_mut().zip(matched) {
            if hit {
                lm.miss_count = 0;
                lm.observation_count += 1;
            } else {
                lm.miss_count += 1;
            }
        }
        matches
    }

    /// EKF measurement update with each landmark projected through the camera.
    pub fn update(
        &mut self,
        size: ImageSize,
        matches: &[(usize, &Observation)],
        params: &EkfParams,
    ) -> Result<UpdateDiagnostics> {
        let pose = self.pose();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(2 * matches.len());
        let mut innovation = Vec::with_capacity(2 * matches.len());
        let mut innovation_norm = 0.0;
        let mut used = Vec::with_capacity(matches.len());
        for &(li, obs) in matches {
            let ray = self.landmark_ray(li);
            let (Ok(pred), Ok(j)) = (
                project_ray(&pose, size, &ray),
                jacobian_projection(&pose, size, &ray),
            ) else {
                continue;
            };
            let k = CAMERA_DIM + 2 * li;
            for r in 0..2 {
                rows.push(vec![
                    (0, j[(r, 0)]),
                    (1, j[(r, 1)]),
                    (2, j[(r, 2)]),
                    (k, j[(r, 3)]),
                    (k + 1, j[(r, 4)]),
                ]);
            }
            let (dx, dy) = (obs.pixel.x - pred.x, obs.pixel.y - pred.y);
            innovation.push(dx);
            innovation.push(dy);
            innovation_norm += dx.hypot(dy);
            used.push((li, obs));
        }
        if used.is_empty() {
            return Ok(UpdateDiagnostics::default());
        }
        let nu = DVector::from_vec(innovation);
        let var = params.meas_noise_px.powi(2);
        if !sparse_kalman_update(&mut self.mean, &mut self.covariance, &nu, &rows, var) {
            return Err(PtzError::Degenerate(
                "innovation covariance is not positive definite".into(),
            ));
        }
        self.mean[0] = wrap_degrees(self.mean[0]);
        self.sync_landmarks();

        let pose = self.pose();
        let residuals: Vec<f64> = used
            .iter()
            .map(|(li, obs)| {
                project_ray(&pose, size, &self.landmarks[*li].ray)
                    .map(|p| p.distance(&obs.pixel))
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        let inliers = residuals.iter().filter(|r| **r <= params.inlier_px).count();
        let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
        Ok(UpdateDiagnostics {
            matches: used.len(),
            mean_innovation: innovation_norm / used.len() as f64,
            residuals,
            inliers,
            rms,
        })
    }

    /// Augments the state with rays back-projected from `observations` at
    /// the current pose. Observations that cannot be back-projected are skipped.
    pub fn add_landmarks(
        &mut self,
        size: ImageSize,
        observations: &[&Observation],
        params: &EkfParams,
    ) -> usize {
        let pose = self.pose();
        let room = params.max_landmarks.saturating_sub(self.landmarks.len());
        let mut new = Vec::new();
        for obs in observations.iter().take(room) {
            let Ok(ray) = back_project(&pose, size, &obs.pixel) else {
                continue;
            };
            if !ray.is_valid() {
                continue;
            }
            let Ok(j) = jacobian_projection(&pose, size, &ray) else {
                continue;
            };
            let j_pose: SMatrix<f64, 2, 3> = j.fixed_columns::<3>(0).into();
            let j_ray: Matrix2<f64> = j.fixed_columns::<2>(3).into();
            let Some(j_ray_inv) = j_ray.try_inverse() else {
                continue;
            };
            // implicit differentiation of project(pose, ray) = pixel
            let d_pose = -j_ray_inv * j_pose;
            new.push((obs, ray, d_pose, j_ray_inv));
        }
        if new.is_empty() {
            return 0;
        }

        let n_old = self.dim();
        let k = new.len();
        let n = n_old + 2 * k;
        let mut cov = DMatrix::<f64>::zeros(n, n);
        cov.view_mut((0, 0), (n_old, n_old))
            .copy_from(&self.covariance);
        let p_pose_all = self.covariance.rows(0, 3).into_owned();
        let p_pp = self.covariance.fixed_view::<3, 3>(0, 0).into_owned();
        let meas_var = params.meas_noise_px.powi(2);
        let init_var = params.init_landmark_angle_std.powi(2);
        let mut mean = DVector::<f64>::zeros(n);
        mean.rows_mut(0, n_old).copy_from(&self.mean);

        for (a, (obs, ray, d_pose, j_inv)) in new.iter().enumerate() {
            let ra = n_old + 2 * a;
            mean[ra] = ray.theta;
            mean[ra + 1] = ray.phi;
            let cross = d_pose * &p_pose_all;
            cov.view_mut((ra, 0), (2, n_old)).copy_from(&cross);
            cov.view_mut((0, ra), (n_old, 2))
                .copy_from(&cross.transpose());
            for (b, (_, _, d_pose_b, _)) in new.iter().enumerate() {
                let rb = n_old + 2 * b;
                let mut block = d_pose * p_pp * d_pose_b.transpose();
                if a == b {
                    block += j_inv * j_inv.transpose() * meas_var + Matrix2::identity() * init_var;
                }
                cov.view_mut((ra, rb), (2, 2)).copy_from(&block);
            }
            self.landmarks.push(LandmarkEntry {
                id: self.next_id,
                ray: *ray,
                descriptor: obs.descriptor.clone(),
                observation_count: 1,
                miss_count: 0,
            });
            self.next_id += 1;
        }
        symmetrize(&mut cov);
        self.mean = mean;
        self.covariance = cov;
        k
    }

    /// Drops landmarks missed more than `max_misses` times in a row.
    pub fn prune_landmarks(&mut self, max_misses: u32) -> usize {
        let keep: Vec<usize> = (0..self.landmarks.len())
            .filter(|&i| self.landmarks[i].miss_count <= max_misses)
            .collect();
        let removed = self.landmarks.len() - keep.len();
        if removed == 0 {
            return 0;
        }
        let idx: Vec<usize> = (0..CAMERA_DIM)
            .chain(
                keep.iter()
                    .flat_map(|&i| [CAMERA_DIM + 2 * i, CAMERA_DIM + 2 * i + 1]),
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
        removed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pixel;
    use crate::ekf::covariance_health;

    const HD: ImageSize = ImageSize {
        width: 1280,
        height: 720,
    };

    fn assert_healthy(state: &CameraStatePtz) {
        let (asym, min_eig) = covariance_health(&state.covariance);
        assert!(asym < 1e-9, "asymmetry {asym}");
        assert!(min_eig > -1e-9, "min eigenvalue {min_eig}");
    }

    fn seeded_state() -> (CameraStatePtz, Vec<Observation>) {
        let pose = CameraPose {
            pan: 4.0,
            tilt: -8.0,
            focal: 2000.0,
        };
        let params = EkfParams::default();
        let mut state = CameraStatePtz::new(&pose, &params);
        let obs: Vec<Observation> = (0..12)
            .map(|i| {
                let ray = Ray {
                    theta: 4.0 + (i % 4) as f64 * 2.5 - 4.0,
                    phi: -8.0 + (i / 4) as f64 * 2.0 - 2.0,
                };
                let mut d = vec![0.0; 4];
                d[i % 4] = 3.0 * (1 + i / 4) as f64;
                Observation::new(project_ray(&pose, HD, &ray).unwrap(), d)
            })
            .collect();
        let refs: Vec<&Observation> = obs.iter().collect();
        state.add_landmarks(HD, &refs, &params);
        (state, obs)
    }

    #[test]
    fn predict_applies_velocity() {
        let params = EkfParams::default();
        let mut s = CameraStatePtz::new(
            &CameraPose {
                pan: 1.0,
                tilt: 0.0,
                focal: 1000.0,
            },
            &params,
        );
        let trace0 = s.covariance.trace();
        s.predict(1.0, &params).unwrap();
        assert_eq!(s.pose().pan, 1.0);
        assert!(s.covariance.trace() > trace0);
        s.mean[3] = 0.5;
        s.predict(2.0, &params).unwrap();
        assert!((s.pose().pan - 2.0).abs() < 1e-12);
        assert!(s.predict(0.0, &params).is_err());
    }

    #[test]
    fn augment_grows_state_and_keeps_psd() {
        let (state, _) = seeded_state();
        assert_eq!(state.dim(), CAMERA_DIM + 24);
        assert_eq!(state.landmarks.len(), 12);
        assert_healthy(&state);
    }

    #[test]
    fn principal_point_observation_gives_axis_ray() {
        let params = EkfParams::default();
        let pose = CameraPose {
            pan: -3.0,
            tilt: 6.0,
            focal: 1500.0,
        };
        let mut s = CameraStatePtz::new(&pose, &params);
        let obs = Observation::new(Pixel::new(640.0, 360.0), vec![0.0]);
        assert_eq!(s.add_landmarks(HD, &[&obs], &params), 1);
        assert!((s.landmarks[0].ray.theta + 3.0).abs() < 1e-12);
        assert!((s.landmarks[0].ray.phi - 6.0).abs() < 1e-12);
    }

    #[test]
    fn exact_update_keeps_mean_and_shrinks_covariance() {
        let (mut state, obs) = seeded_state();
        let params = EkfParams::default();
        let before = state.mean.clone();
        let trace = state.covariance.trace();
        let matches = state.associate(HD, &obs, &params);
        assert_eq!(matches.len(), 12);
        let pairs: Vec<(usize, &Observation)> = matches
            .iter()
            .map(|m| (m.landmark, &obs[m.observation]))
            .collect();
        let diag = state.update(HD, &pairs, &params).unwrap();
        assert!((&state.mean - before).abs().max() < 1e-9);
        assert!(state.covariance.trace() <= trace);
        assert!(diag.mean_innovation < 1e-9);
        assert_healthy(&state);
    }

    #[test]
    fn single_match_update_stays_psd() {
        let (mut state, obs) = seeded_state();
        let params = EkfParams::default();
        let mut shifted = obs[3].clone();
        shifted.pixel.x += 1.5;
        state.update(HD, &[(3, &shifted)], &params).unwrap();
        assert_healthy(&state);
    }

    #[test]
    fn far_descriptor_is_not_matched() {
        let (mut state, mut obs) = seeded_state();
        obs[5].descriptor = vec![50.0; 4];
        let matches = state.associate(HD, &obs, &EkfParams::default());
        assert_eq!(matches.len(), 11);
        assert!(matches.iter().all(|m| m.landmark != 5));
        assert_eq!(state.landmarks[5].miss_count, 1);
    }

    #[test]
    fn pruning_bookkeeping() {
        let (mut state, _) = seeded_state();
        for (i, lm) in state.landmarks.iter_mut().enumerate() {
            lm.miss_count = if i % 3 == 0 { 9 } else { 0 };
        }
        let kept_ids: Vec<u64> = state
            .landmarks
            .iter()
            .filter(|l| l.miss_count == 0)
            .map(|l| l.id)
            .collect();
        let expected = state.covariance.fixed_view::<6, 6>(0, 0).into_owned();
        assert_eq!(state.prune_landmarks(5), 4);
        assert_eq!(state.dim(), CAMERA_DIM + 16);
        assert_eq!(
            state.landmarks.iter().map(|l| l.id).collect::<Vec<_>>(),
            kept_ids
        );
        for (i, lm) in state.landmarks.iter().enumerate() {
            assert_eq!(state.landmark_ray(i), lm.ray);
        }
        assert_healthy(&state);

        for lm in state.landmarks.iter_mut() {
            lm.miss_count = 100;
        }
        state.prune_landmarks(5);
        assert_eq!(state.dim(), CAMERA_DIM);
        assert_eq!(
            state.covariance.fixed_view::<6, 6>(0, 0).into_owned(),
            expected
        );
        assert_eq!(state.prune_landmarks(5), 0);
    }
}
