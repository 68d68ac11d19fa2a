use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{SceneLandmark, SceneModel};
use crate::camera::{CameraPose, ImageSize, Pixel, PtzBase, Ray};
use crate::ekf::Observation;
use crate::error::{PtzError, Result};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// Axis-aligned pixel rectangle, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Self {
            x0: v[0],
            y0: v[1],
            x1: v[2],
            y1: v[3],
        }
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.y0, r.x1, r.y1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservations {
    pub index: usize,
    pub observations: Vec<Observation>,
    pub player_boxes: Vec<Rect>,
    pub ground_truth_pose: CameraPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle {
    pub base: PtzBase,
    pub size: ImageSize,
    pub fps: f64,
    pub frames: Vec<FrameObservations>,
    pub scene: SceneModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseJson {
    #[serde(rename = "C")]
    c: [f64; 3],
    #[serde(rename = "S")]
    s: [f64; 9],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageJson {
    w: u32,
    h: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObsJson {
    x: f64,
    y: f64,
    desc: Vec<f64>,
    gt_id: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameJson {
    idx: usize,
    gt_pose: CameraPose,
    boxes: Vec<Rect>,
    obs: Vec<ObsJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LandmarkJson {
    id: u64,
    theta: f64,
    phi: f64,
    latent: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneJson {
    landmarks: Vec<LandmarkJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleJson {
    schema_version: u32,
    base: BaseJson,
    image: ImageJson,
    fps: f64,
    frames: Vec<FrameJson>,
    scene: SceneJson,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

impl SequenceBundle {
    pub fn to_json(&self) -> Result<String> {
        let s = &self.base.base_rotation;
        let c = &self.base.camera_center;
        let json = BundleJson {
            schema_version: BUNDLE_SCHEMA_VERSION,
            base: BaseJson {
                c: [c.x, c.y, c.z],
                s: [
                    s[(0, 0)],
                    s[(0, 1)],
                    s[(0, 2)],
                    s[(1, 0)],
                    s[(1, 1)],
                    s[(1, 2)],
                    s[(2, 0)],
                    s[(2, 1)],
                    s[(2, 2)],
                ],
            },
            image: ImageJson {
                w: self.size.width,
                h: self.size.height,
            },
            fps: self.fps,
            frames: self
                .frames
                .iter()
                .map(|f| FrameJson {
                    idx: f.index,
                    gt_pose: f.ground_truth_pose,
                    boxes: f.player_boxes.clone(),
                    obs: f
                        .observations
                        .iter()
                        .map(|o| ObsJson {
                            x: o.pixel.x,
                            y: o.pixel.y,
                            desc: o.descriptor.clone(),
                            gt_id: o.true_landmark_id,
                        })
                        .collect(),
                })
                .collect(),
            scene: SceneJson {
                landmarks: self
                    .scene
                    .landmarks
                    .iter()
                    .map(|l| LandmarkJson {
                        id: l.id,
                        theta: l.ray.theta,
                        phi: l.ray.phi,
                        latent: l.latent.clone(),
                    })
                    .collect(),
            },
        };
        Ok(serde_json::to_string(&json)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(PtzError::UnsupportedSchema(probe.schema_version));
        }
        let json: BundleJson = serde_json::from_str(text)?;
        let base = PtzBase::new(
            Vector3::from(json.base.c),
            Matrix3::from_row_slice(&json.base.s),
        )?;
        let size = ImageSize::new(json.image.w, json.image.h)?;
        let frames: Vec<FrameObservations> = json
            .frames
            .into_iter()
            .map(|f| FrameObservations {
                index: f.idx,
                ground_truth_pose: f.gt_pose,
                player_boxes: f.boxes,
                observations: f
                    .obs
                    .into_iter()
                    .map(|o| Observation {
                        pixel: Pixel::new(o.x, o.y),
                        descriptor: o.desc,
                        true_landmark_id: o.gt_id,
                    })
                    .collect(),
            })
            .collect();
        if frames.iter().enumerate().any(|(i, f)| f.index != i) {
            return Err(PtzError::InvalidInput(
                "frames must be contiguous from 0".into(),
            ));
        }
        let mut scene = SceneModel {
            landmarks: json
                .scene
                .landmarks
                .into_iter()
                .map(|l| SceneLandmark {
                    id: l.id,
                    ray: Ray {
                        theta: l.theta,
                        phi: l.phi,
                    },
                    latent: l.latent,
                })
                .collect(),
            pattern_groups: Vec::new(),
        };
        scene.regroup();
        Ok(Self {
            base,
            size,
            fps: json.fps,
            frames,
            scene,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn ground_truth(&self) -> Vec<CameraPose> {
        self.frames.iter().map(|f| f.ground_truth_pose).collect()
    }
}
