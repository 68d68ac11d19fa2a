//! Deterministic synthetic PTZ sequences with ground truth.
//!
//! Every frame draws from its own ChaCha8 stream (stream id = frame index)
//! seeded by the noise seed, so any frame can be regenerated on its own.

mod bundle;
pub mod presets;
mod render;
mod scene;
mod trajectory;

pub use bundle::{FrameObservations, Rect, SequenceBundle, BUNDLE_SCHEMA_VERSION};
pub use render::render_frame;
pub use scene::{generate_scene, SceneLandmark, SceneModel};
pub use trajectory::{
    generate_trajectory, mean_angular_velocity, Interpolation, TrajectoryConfig, Waypoint,
};

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{ImageSize, PtzBase};
use crate::error::{PtzError, Result};

pub(crate) const SCENE_STREAM: u64 = 1 << 40;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub pan_range: [f64; 2],
    pub tilt_range: [f64; 2],
    pub num_landmarks: usize,
    pub descriptor_dim: usize,
    /// Number of repeated-pattern groups; zero gives every landmark its own latent.
    pub pattern_group_count: usize,
    pub pattern_group_size: usize,
    /// Share of landmarks placed on the ground plane Z = 0 inside the court.
    pub court_fraction: f64,
    /// Court length and width in metres, centred on the world origin.
    pub court_size: [f64; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            pan_range: [-40.0, 40.0],
            tilt_range: [-30.0, 10.0],
            num_landmarks: 400,
            descriptor_dim: 16,
            pattern_group_count: 0,
            pattern_group_size: 4,
            court_fraction: 0.3,
            court_size: [28.0, 15.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub pixel_sigma: f64,
    pub outlier_ratio: f64,
    pub descriptor_sigma: f64,
    pub player_boxes_per_frame: usize,
    /// Box width and height in pixels.
    pub box_size: [f64; 2],
    pub dropout_ratio: f64,
    /// Observations inside player boxes are displaced by up to this many
    /// pixels per axis, as keypoints on moving players would be, without
    /// leaving their box. Zero leaves them untouched.
    pub box_shift_px: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.5,
            outlier_ratio: 0.0,
            descriptor_sigma: 0.05,
            player_boxes_per_frame: 0,
            box_size: [40.0, 80.0],
            dropout_ratio: 0.0,
            box_shift_px: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("outlier_ratio", self.outlier_ratio),
            ("dropout_ratio", self.dropout_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(PtzError::InvalidInput(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.pixel_sigma < 0.0 || self.descriptor_sigma < 0.0 || self.box_shift_px < 0.0 {
            return Err(PtzError::InvalidInput(
                "noise magnitudes must be non-negative".into(),
            ));
        }
        if self.box_size.iter().any(|s| !(*s > 0.0)) {
            return Err(PtzError::InvalidInput("box_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub camera_center: [f64; 3],
    /// Row-major world-to-tripod rotation.
    pub rotation: [f64; 9],
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            camera_center: [0.0, -25.0, 8.0],
            rotation: [1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0],
        }
    }
}

impl BaseConfig {
    pub fn to_base(&self) -> Result<PtzBase> {
        let c = self.camera_center;
        PtzBase::new(
            Vector3::new(c[0], c[1], c[2]),
            Matrix3::from_row_slice(&self.rotation),
        )
    }
}

/// Everything needed to generate a [`SequenceBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub image: [u32; 2],
    pub base: BaseConfig,
    pub scene: SceneConfig,
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            image: [1280, 720],
            base: BaseConfig::default(),
            scene: SceneConfig::default(),
            trajectory: TrajectoryConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn size(&self) -> Result<ImageSize> {
        ImageSize::new(self.image[0], self.image[1])
    }

    pub fn validate(&self) -> Result<()> {
        self.size()?;
        self.base.to_base()?;
        self.noise.validate()?;
        self.trajectory.validate()?;
        let s = &self.scene;
        if s.num_landmarks == 0 || s.descriptor_dim == 0 {
            return Err(PtzError::InvalidInput(
                "scene needs landmarks and a descriptor dimension".into(),
            ));
        }
        if !(s.pan_range[0] < s.pan_range[1] && s.tilt_range[0] < s.tilt_range[1]) {
            return Err(PtzError::InvalidInput("scene extent is empty".into()));
        }
        if !(0.0..=1.0).contains(&s.court_fraction) {
            return Err(PtzError::InvalidInput(
                "court_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Generates a full sequence: scene, trajectory and one rendered frame per pose.
pub fn simulate(config: &SimConfig) -> Result<SequenceBundle> {
    config.validate()?;
    let size = config.size()?;
    let base = config.base.to_base()?;
    let mut scene_rng = stream_rng(config.noise.seed, SCENE_STREAM);
    let scene = generate_scene(&config.scene, &base, &mut scene_rng)?;
    let poses = generate_trajectory(&config.trajectory)?;
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut rng = stream_rng(config.noise.seed, i as u64);
            render_frame(&scene, i, pose, size, &config.noise, &mut rng)
        })
        .collect();
    Ok(SequenceBundle {
        base,
        size,
        fps: config.trajectory.fps,
        frames,
        scene,
    })
}
