//! Frame loop: player filtering, tracking, keyframes, mapping, lost
//! detection and relocalization.

use serde::{Deserialize, Serialize};

use crate::camera::{angle_between, back_project, relative_homography, CameraPose, ImageSize};
use crate::ekf::{homography_to_pose_from, CameraStatePtz, EkfHState, EkfParams, Observation};
use crate::error::{PtzError, Result};
use crate::forest::{
    relocalize_forest, relocalize_keyframe, relocalize_nns, ExampleReservoir, ForestParams,
    Keyframe, PanTiltForest, TrainingExample,
};
use crate::sim::{Rect, SequenceBundle};
use crate::solvers::{PoseEstimate, RansacParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerKind {
    EkfPtz,
    EkfH,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelocalizerKind {
    Forest,
    Keyframe,
    Nns,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tracker: TrackerKind,
    pub relocalizer: RelocalizerKind,
    /// Minimum optical-axis angle to every existing keyframe, degrees.
    pub keyframe_min_angle: f64,
    pub keyframe_min_inlier_ratio: f64,
    pub lost_min_matches: usize,
    /// Mean innovation above which a frame counts as lost, pixels.
    pub lost_max_innovation: f64,
    pub use_player_filter: bool,
    /// Pose covariance multiplier applied after a relocalization.
    pub reset_inflation: f64,
    pub ekf: EkfParams,
    pub forest: ForestParams,
    pub ransac: RansacParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerKind::EkfPtz,
            relocalizer: RelocalizerKind::Forest,
            keyframe_min_angle: 5.0,
            keyframe_min_inlier_ratio: 0.8,
            lost_min_matches: 5,
            lost_max_innovation: 20.0,
            use_player_filter: true,
            reset_inflation: 10.0,
            ekf: EkfParams::default(),
            forest: ForestParams::default(),
            ransac: RansacParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keyframe_min_angle > 0.0
            && self.lost_max_innovation > 0.0
            && self.reset_inflation > 0.0)
        {
            return Err(PtzError::InvalidInput(
                "pipeline thresholds must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.keyframe_min_inlier_ratio) {
            return Err(PtzError::InvalidInput(
                "keyframe_min_inlier_ratio must lie in [0, 1]".into(),
            ));
        }
        if self.lost_min_matches == 0 {
            return Err(PtzError::InvalidInput(
                "lost_min_matches must be at least 1".into(),
            ));
        }
        self.forest.validate()?;
        self.ransac.validate()
    }

    /// Points every random stream at `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.forest.seed = seed;
        self.ransac.seed = seed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tracked,
    Lost,
    Relocalized,
}

impl TrackStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackStatus::Tracked => "tracked",
            TrackStatus::Lost => "lost",
            TrackStatus::Relocalized => "relocalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub status: TrackStatus,
    /// Estimated pose; while lost, the last pose held by the tracker.
    pub pose: CameraPose,
    pub ground_truth: CameraPose,
    pub matches: usize,
    pub inliers: usize,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelocEvent {
    pub frame: usize,
    pub success: bool,
    pub inliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub tracker: TrackerKind,
    pub relocalizer: RelocalizerKind,
    pub frames: Vec<FrameRecord>,
    pub keyframes: Vec<usize>,
    pub relocalizations: Vec<RelocEvent>,
}

impl TrackResult {
    pub fn estimated(&self) -> Vec<CameraPose> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn ground_truth(&self) -> Vec<CameraPose> {
        self.frames.iter().map(|f| f.ground_truth).collect()
    }
}

/// Map built while tracking: forest, example reservoir and keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct RelocMap {
    pub forest: PanTiltForest,
    pub reservoir: ExampleReservoir,
    pub keyframes: Vec<Keyframe>,
}

impl RelocMap {
    pub fn new(params: ForestParams) -> Self {
        Self {
            forest: PanTiltForest::new(params),
            reservoir: ExampleReservoir::default(),
            keyframes: Vec::new(),
        }
    }

    pub fn relocalize(
        &self,
        method: RelocalizerKind,
        query: &[Observation],
        size: ImageSize,
        config: &PipelineConfig,
    ) -> Result<PoseEstimate> {
        match method {
            RelocalizerKind::Forest => relocalize_forest(&self.forest, query, size, &config.ransac),
            RelocalizerKind::Keyframe => relocalize_keyframe(
                &self.keyframes,
                query,
                size,
                &config.ransac,
                config.ekf.descriptor_match_max_dist,
            ),
            RelocalizerKind::Nns => relocalize_nns(&self.reservoir, query, size, &config.ransac),
            RelocalizerKind::None => {
                Err(PtzError::TrackingLost("no relocalizer configured".into()))
            }
        }
    }
}

/// Drops observations inside any player box; boxes are closed.
pub fn filter_player_keypoints(observations: &[Observation], boxes: &[Rect]) -> Vec<Observation> {
    observations
        .iter()
        .filter(|o| !boxes.iter().any(|b| b.contains(&o.pixel)))
        .cloned()
        .collect()
}

/// Tracking quality summary of one frame, shared by both trackers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameDiagnostics {
    pub matches: usize,
    pub inliers: usize,
    pub mean_innovation: f64,
    pub rms: f64,
}

impl FrameDiagnostics {
    pub fn inlier_ratio(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            self.inliers as f64 / self.matches as f64
        }
    }
}

pub fn select_keyframe(
    pose: &CameraPose,
    diagnostics: &FrameDiagnostics,
    keyframe_poses: &[CameraPose],
    config: &PipelineConfig,
) -> bool {
    if diagnostics.inlier_ratio() < config.keyframe_min_inlier_ratio {
        return false;
    }
    let axis = pose.optical_axis();
    keyframe_poses
        .iter()
        .all(|k| angle_between(&axis, &k.optical_axis()) >= config.keyframe_min_angle)
}

/// Lost when too few inliers remain or the mean innovation is strictly above the limit.
pub fn detect_lost(diagnostics: &FrameDiagnostics, config: &PipelineConfig) -> bool {
    diagnostics.inliers < config.lost_min_matches
        || diagnostics.mean_innovation > config.lost_max_innovation
}

#[derive(Clone)]
enum Tracker {
    Ptz(CameraStatePtz),
    H {
        state: EkfHState,
        first: CameraPose,
        pose: CameraPose,
    },
}

struct StepOutcome {
    diag: FrameDiagnostics,
    pose: CameraPose,
    /// Observation indices whose post-update residual is within the inlier threshold.
    inliers: Vec<usize>,
}

impl Tracker {
    fn pose(&self) -> CameraPose {
        match self {
            Tracker::Ptz(s) => s.pose(),
            Tracker::H { pose, .. } => *pose,
        }
    }

    /// One filter step. On `Ok`, the caller decides whether to keep the new state.
    fn step(
        &mut self,
        obs: &[Observation],
        size: ImageSize,
        config: &PipelineConfig,
        predict: bool,
    ) -> Result<StepOutcome> {
        let p = &config.ekf;
        match self {
            Tracker::Ptz(state) => {
                if predict {
                    state.predict(1.0, p)?;
                }
                let matches = state.associate(size, obs, p);
                let pairs: Vec<(usize, &Observation)> = matches
                    .iter()
                    .map(|m| (m.landmark, &obs[m.observation]))
                    .collect();
                let d = state.update(size, &pairs, p)?;
                let pose = state.pose();
                let inliers: Vec<usize> = matches
                    .iter()
                    .filter(|m| {
                        crate::camera::project_ray(&pose, size, &state.landmarks[m.landmark].ray)
                            .is_ok_and(|q| q.distance(&obs[m.observation].pixel) <= p.inlier_px)
                    })
                    .map(|m| m.observation)
                    .collect();
                let mut matched = vec![false; obs.len()];
                for m in &matches {
                    matched[m.observation] = true;
                }
                let fresh: Vec<&Observation> = obs
                    .iter()
                    .zip(&matched)
                    .filter(|(_, m)| !**m)
                    .map(|(o, _)| o)
                    .collect();
                let diag = FrameDiagnostics {
                    matches: d.matches,
                    inliers: d.inliers,
                    mean_innovation: d.mean_innovation,
                    rms: d.rms,
                };
                if !detect_lost(&diag, config) {
                    state.add_landmarks(size, &fresh, p);
                    state.prune_landmarks(p.max_misses);
                }
                Ok(StepOutcome {
                    diag,
                    pose,
                    inliers,
                })
            }
            Tracker::H { state, first, pose } => {
                let d = state.step(obs, p, &config.ransac)?;
                let est = homography_to_pose_from(&state.homography(), first, pose, size)?;
                *pose = est;
                Ok(StepOutcome {
                    diag: FrameDiagnostics {
                        matches: d.matches,
                        inliers: d.inliers,
                        mean_innovation: d.mean_innovation,
                        rms: d.rms,
                    },
                    pose: est,
                    inliers: d.inlier_observations,
                })
            }
        }
    }

    fn reset(
        &mut self,
        new_pose: &CameraPose,
        size: ImageSize,
        config: &PipelineConfig,
    ) -> Result<()> {
        match self {
            Tracker::Ptz(s) => {
                s.reset_camera(new_pose, &config.ekf, config.reset_inflation);
                Ok(())
            }
            Tracker::H { state, first, pose } => {
                let h = relative_homography(first, new_pose, size)?;
                state.reset(&h, &config.ekf, config.reset_inflation)?;
                *pose = *new_pose;
                Ok(())
            }
        }
    }
}

fn examples_at(pose: &CameraPose, size: ImageSize, obs: &[&Observation]) -> Vec<TrainingExample> {
    obs.iter()
        .filter_map(|o| {
            back_project(pose, size, &o.pixel)
                .ok()
                .map(|ray| TrainingExample {
                    descriptor: o.descriptor.clone(),
                    ray,
                })
        })
        .collect()
}

struct Mapper {
    map: RelocMap,
    use_forest: bool,
}

impl Mapper {
    fn add_keyframe(
        &mut self,
        frame: usize,
        pose: CameraPose,
        obs: Vec<Observation>,
        size: ImageSize,
    ) -> Result<()> {
        let id = self.map.keyframes.len() as u64;
        let refs: Vec<&Observation> = obs.iter().collect();
        let examples = examples_at(&pose, size, &refs);
        if examples.is_empty() {
            return Ok(());
        }
        if self.use_forest {
            let decision = self
                .map
                .forest
                .online_update(&mut self.map.reservoir, id, &examples)?;
            log::debug!("keyframe {id} at frame {frame}: {decision:?}");
        } else {
            self.map.reservoir.extend(id, &examples);
        }
        self.map.keyframes.push(Keyframe {
            id,
            frame,
            pose,
            observations: obs,
        });
        Ok(())
    }

    fn keyframe_poses(&self) -> Vec<CameraPose> {
        self.map.keyframes.iter().map(|k| k.pose).collect()
    }
}

/// Runs the full system over a sequence starting from the known first pose.
pub fn run_tracking(
    bundle: &SequenceBundle,
    config: &PipelineConfig,
    first_pose: &CameraPose,
) -> Result<TrackResult> {
    let use_forest = config.relocalizer == RelocalizerKind::Forest;
    track(bundle, config, first_pose, use_forest).map(|(r, _)| r)
}

/// Like [`run_tracking`], but always trains the forest and returns the map.
pub fn build_relocalization_map(
    bundle: &SequenceBundle,
    config: &PipelineConfig,
    first_pose: &CameraPose,
) -> Result<(TrackResult, RelocMap)> {
    track(bundle, config, first_pose, true)
}

fn track(
    bundle: &SequenceBundle,
    config: &PipelineConfig,
    first_pose: &CameraPose,
    use_forest: bool,
) -> Result<(TrackResult, RelocMap)> {
    config.validate()?;
    let size = bundle.size;
    let first_frame = bundle
        .frames
        .first()
        .ok_or_else(|| PtzError::InitializationFailed("sequence has no frames".into()))?;
    let prepare = |f: &crate::sim::FrameObservations| {
        if config.use_player_filter {
            filter_player_keypoints(&f.observations, &f.player_boxes)
        } else {
            f.observations.clone()
        }
    };
    let obs0 = prepare(first_frame);
    if obs0.len() < config.lost_min_matches {
        return Err(PtzError::InitializationFailed(format!(
            "first frame has {} usable observations, need {}",
            obs0.len(),
            config.lost_min_matches
        )));
    }

    let refs: Vec<&Observation> = obs0.iter().collect();
    let mut tracker = match config.tracker {
        TrackerKind::EkfPtz => {
            let mut s = CameraStatePtz::new(first_pose, &config.ekf);
            s.add_landmarks(size, &refs, &config.ekf);
            Tracker::Ptz(s)
        }
        TrackerKind::EkfH => {
            let mut s = EkfHState::new(size, &config.ekf);
            s.add_landmarks(&refs, &config.ekf);
            Tracker::H {
                state: s,
                first: *first_pose,
                pose: *first_pose,
            }
        }
    };
    let mut mapper = Mapper {
        map: RelocMap::new(config.forest.clone()),
        use_forest,
    };
    mapper.add_keyframe(0, *first_pose, obs0.clone(), size)?;

    let mut result = TrackResult {
        tracker: config.tracker,
        relocalizer: config.relocalizer,
        frames: vec![FrameRecord {
            index: 0,
            status: TrackStatus::Tracked,
            pose: *first_pose,
            ground_truth: first_frame.ground_truth_pose,
            matches: obs0.len(),
            inliers: obs0.len(),
            rms: 0.0,
        }],
        keyframes: vec![0],
        relocalizations: Vec::new(),
    };
    let mut lost = false;

    for frame in &bundle.frames[1..] {
        let obs = prepare(frame);
        let mut record = FrameRecord {
            index: frame.index,
            status: TrackStatus::Lost,
            pose: tracker.pose(),
            ground_truth: frame.ground_truth_pose,
            matches: 0,
            inliers: 0,
            rms: 0.0,
        };

        // While lost with a relocalizer, the tracker waits for it; without
        // one it keeps trying from the frozen pose.
        let try_tracking = !lost || config.relocalizer == RelocalizerKind::None;
        if try_tracking {
            let backup = tracker.clone();
            match tracker.step(&obs, size, config, !lost) {
                Ok(out) if !detect_lost(&out.diag, config) => {
                    lost = false;
                    record.status = TrackStatus::Tracked;
                    record.pose = out.pose;
                    record.matches = out.diag.matches;
                    record.inliers = out.diag.inliers;
                    record.rms = out.diag.rms;
                    if select_keyframe(&out.pose, &out.diag, &mapper.keyframe_poses(), config) {
                        let kept: Vec<Observation> =
                            out.inliers.iter().map(|&i| obs[i].clone()).collect();
                        mapper.add_keyframe(frame.index, out.pose, kept, size)?;
                        result.keyframes.push(frame.index);
                    }
                }
                outcome => {
                    if let Ok(out) = &outcome {
                        record.matches = out.diag.matches;
                        record.inliers = out.diag.inliers;
                        record.rms = out.diag.rms;
                    }
                    log::debug!("frame {}: tracking lost", frame.index);
                    tracker = backup;
                    lost = true;
                    record.pose = tracker.pose();
                }
            }
        }

        if lost && config.relocalizer != RelocalizerKind::None {
            let attempt = mapper
                .map
                .relocalize(config.relocalizer, &obs, size, config);
            let success = attempt.is_ok();
            let inliers = attempt.as_ref().map_or(0, |e| e.num_inliers());
            if let Ok(est) = attempt {
                tracker.reset(&est.pose, size, config)?;
                lost = false;
                record.status = TrackStatus::Relocalized;
                record.pose = est.pose;
                record.inliers = inliers;
            }
            result.relocalizations.push(RelocEvent {
                frame: frame.index,
                success,
                inliers,
            });
        }
        result.frames.push(record);
    }
    Ok((result, mapper.map))
}

/// Copy of `bundle` with observations removed from the given frames.
pub fn blank_frames(bundle: &SequenceBundle, frames: std::ops::Range<usize>) -> SequenceBundle {
    let mut out = bundle.clone();
    for f in out.frames.iter_mut().filter(|f| frames.contains(&f.index)) {
        f.observations.clear();
    }
    out
}
