//! Relocalization benchmark: corrupt held-out frames with outliers and score
//! each relocalizer with the optical-axis angle criterion.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, ImageSize, Pixel};
use crate::ekf::Observation;
use crate::error::{PtzError, Result};
use crate::metrics::relocalization_correctness;
use crate::pipeline::{PipelineConfig, RelocMap, RelocalizerKind};
use crate::report::{RelocTable, REPORT_SCHEMA_VERSION};
use crate::sim::SequenceBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelocBenchConfig {
    /// Outlier ratios, percent.
    pub outliers: Vec<f64>,
    pub methods: Vec<RelocalizerKind>,
    pub trials: usize,
    pub threshold_deg: f64,
    /// Also require |df| / f within this ratio when set.
    pub max_focal_ratio: Option<f64>,
    pub seed: u64,
}

impl Default for RelocBenchConfig {
    fn default() -> Self {
        Self {
            outliers: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            methods: vec![RelocalizerKind::Keyframe, RelocalizerKind::Forest],
            trials: 100,
            threshold_deg: 2.0,
            max_focal_ratio: None,
            seed: 0,
        }
    }
}

impl RelocBenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(PtzError::InvalidInput("trials must be at least 1".into()));
        }
        if self.outliers.iter().any(|o| !(0.0..=100.0).contains(o)) {
            return Err(PtzError::InvalidInput(
                "outlier ratios must lie in [0, 100] percent".into(),
            ));
        }
        if self.methods.is_empty() || self.methods.contains(&RelocalizerKind::None) {
            return Err(PtzError::InvalidInput(
                "methods must name at least one relocalizer".into(),
            ));
        }
        if !(self.threshold_deg > 0.0) {
            return Err(PtzError::InvalidInput(
                "threshold_deg must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Moves `round(ratio * n)` randomly chosen observations to uniformly random
/// pixels. Descriptors are kept, so the outliers still look like landmarks.
pub fn corrupt_observations(
    obs: &[Observation],
    ratio: f64,
    size: ImageSize,
    rng: &mut ChaCha8Rng,
) -> Vec<Observation> {
    let mut out = obs.to_vec();
    let n = ((ratio * obs.len() as f64).round() as usize).min(obs.len());
    for i in sample(rng, obs.len(), n) {
        out[i].pixel = Pixel::new(
            rng.random_range(0.0..size.width as f64),
            rng.random_range(0.0..size.height as f64),
        );
        out[i].true_landmark_id = None;
    }
    out
}

/// One row of trial outcomes per outlier ratio, one estimate per method.
#[derive(Debug, Clone, PartialEq)]
pub struct RelocTrial {
    pub frame: usize,
    pub truth: CameraPose,
    pub estimates: Vec<Option<CameraPose>>,
}

/// Frames that are not keyframes of the map.
pub fn held_out_frames(bundle: &SequenceBundle, map: &RelocMap) -> Vec<usize> {
    bundle
        .frames
        .iter()
        .map(|f| f.index)
        .filter(|i| !map.keyframes.iter().any(|k| k.frame == *i))
        .collect()
}

pub fn run_reloc_trials(
    bundle: &SequenceBundle,
    map: &RelocMap,
    pipeline: &PipelineConfig,
    bench: &RelocBenchConfig,
    ratio_index: usize,
) -> Result<Vec<RelocTrial>> {
    let candidates = held_out_frames(bundle, map);
    if candidates.is_empty() || map.keyframes.is_empty() {
        return Err(PtzError::InvalidInput(
            "map has no keyframes or no held-out frames".into(),
        ));
    }
    let ratio = bench.outliers[ratio_index] / 100.0;
    let mut config = pipeline.clone();
    (0..bench.trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(bench.seed);
            rng.set_stream(((ratio_index as u64) << 32) | t as u64);
            let frame = &bundle.frames[candidates[rng.random_range(0..candidates.len())]];
            let query = corrupt_observations(&frame.observations, ratio, bundle.size, &mut rng);
            config.ransac.seed = rng.random();
            let estimates = bench
                .methods
                .iter()
                .map(|m| {
                    map.relocalize(*m, &query, bundle.size, &config)
                        .ok()
                        .map(|e| e.pose)
                })
                .collect();
            Ok(RelocTrial {
                frame: frame.index,
                truth: frame.ground_truth_pose,
                estimates,
            })
        })
        .collect()
}

pub fn run_reloc_bench(
    bundle: &SequenceBundle,
    map: &RelocMap,
    pipeline: &PipelineConfig,
    bench: &RelocBenchConfig,
) -> Result<RelocTable> {
    bench.validate()?;
    let mut correctness = Vec::with_capacity(bench.outliers.len());
    for i in 0..bench.outliers.len() {
        let trials = run_reloc_trials(bundle, map, pipeline, bench, i)?;
        let truth: Vec<CameraPose> = trials.iter().map(|t| t.truth).collect();
        let row = (0..bench.methods.len())
            .map(|j| {
                let est: Vec<Option<CameraPose>> = trials.iter().map(|t| t.estimates[j]).collect();
                relocalization_correctness(&est, &truth, bench.threshold_deg, bench.max_focal_ratio)
            })
            .collect::<Result<Vec<f64>>>()?;
        correctness.push(row);
    }
    Ok(RelocTable {
        schema_version: REPORT_SCHEMA_VERSION,
        trials: bench.trials,
        threshold_deg: bench.threshold_deg,
        outliers: bench.outliers.clone(),
        methods: bench.methods.clone(),
        correctness,
    })
}
