use serde::{Deserialize, Serialize};

use crate::camera::{angle_between, CameraPose};
use crate::error::{PtzError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub frame: usize,
    pub pose: CameraPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    /// Cubic Hermite with finite-difference tangents, zero at the ends.
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub waypoints: Vec<Waypoint>,
    pub interpolation: Interpolation,
    pub fps: f64,
    pub num_frames: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            waypoints: vec![Waypoint {
                frame: 0,
                pose: CameraPose {
                    pan: 0.0,
                    tilt: -10.0,
                    focal: 2500.0,
                },
            }],
            interpolation: Interpolation::Linear,
            fps: 60.0,
            num_frames: 600,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let first = self.waypoints.first().ok_or_else(|| {
            PtzError::InvalidInput("trajectory needs at least one waypoint".into())
        })?;
        if first.frame != 0 {
            return Err(PtzError::InvalidInput(
                "first waypoint must be at frame 0".into(),
            ));
        }
        if self.waypoints.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return Err(PtzError::InvalidInput(
                "waypoint frames must be strictly increasing".into(),
            ));
        }
        if self.waypoints.iter().any(|w| !w.pose.is_valid()) {
            return Err(PtzError::InvalidInput("waypoint pose out of range".into()));
        }
        if !(self.fps > 0.0) || self.num_frames == 0 {
            return Err(PtzError::InvalidInput(
                "fps and num_frames must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn components(p: &CameraPose) -> [f64; 3] {
    [p.pan, p.tilt, p.focal]
}

/// One pose per frame; frames past the last waypoint hold its pose.
pub fn generate_trajectory(config: &TrajectoryConfig) -> Result<Vec<CameraPose>> {
    config.validate()?;
    let w = &config.waypoints;
    let t: Vec<f64> = w.iter().map(|p| p.frame as f64).collect();
    let v: Vec<[f64; 3]> = w.iter().map(|p| components(&p.pose)).collect();
    let n = w.len();
    // Tangents per unit frame.
    let tangents: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                return [0.0; 3];
            }
            let mut m = [0.0; 3];
            for k in 0..3 {
                m[k] = (v[i + 1][k] - v[i - 1][k]) / (t[i + 1] - t[i - 1]);
            }
            m
        })
        .collect();

    let mut out = Vec::with_capacity(config.num_frames);
    let mut seg = 0;
    for f in 0..config.num_frames {
        let x = f as f64;
        while seg + 1 < n && x >= t[seg + 1] {
            seg += 1;
        }
        if seg + 1 >= n {
            out.push(w[n - 1].pose);
            continue;
        }
        let h = t[seg + 1] - t[seg];
        let s = (x - t[seg]) / h;
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = match config.interpolation {
                Interpolation::Linear => v[seg][k] + s * (v[seg + 1][k] - v[seg][k]),
                Interpolation::Cubic => {
                    let (s2, s3) = (s * s, s * s * s);
                    (2.0 * s3 - 3.0 * s2 + 1.0) * v[seg][k]
                        + (s3 - 2.0 * s2 + s) * h * tangents[seg][k]
                        + (-2.0 * s3 + 3.0 * s2) * v[seg + 1][k]
                        + (s3 - s2) * h * tangents[seg + 1][k]
                }
            };
        }
        out.push(CameraPose {
            pan: c[0],
            tilt: c[1],
            focal: c[2],
        });
    }
    Ok(out)
}

/// Mean optical-axis angular speed in degrees per second.
pub fn mean_angular_velocity(poses: &[CameraPose], fps: f64) -> Result<f64> {
    if poses.len() < 2 {
        return Err(PtzError::InvalidInput("need at least two poses".into()));
    }
    let total: f64 = poses
        .windows(2)
        .map(|w| angle_between(&w[0].optical_axis(), &w[1].optical_axis()))
        .sum();
    Ok(total / (poses.len() - 1) as f64 * fps)
}
