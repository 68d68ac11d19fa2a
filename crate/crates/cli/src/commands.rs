use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use ptz_slam::pipeline::{
    build_relocalization_map, run_tracking, PipelineConfig, RelocalizerKind, TrackStatus,
};
use ptz_slam::reloc_eval::{held_out_frames, run_reloc_bench, RelocBenchConfig};
use ptz_slam::report::{
    emit_report, summarize, trajectory_csv, RelocTable, ReportEntry, ReportFormat, TrackSummary,
};
use ptz_slam::sim::{simulate as run_simulation, SequenceBundle, SimConfig};
use serde_json::json;

use crate::io::{load_config, usage, write_atomic, write_json, Failure, RunManifest};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RELOC_FILE: &str = "reloc.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn to_value(v: &impl serde::Serialize) -> Result<serde_json::Value, Failure> {
    serde_json::to_value(v).map_err(usage)
}

pub fn simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let start = Instant::now();
    let (mut config, _) = load_config::<SimConfig>(config_path, true)?;
    if let Some(s) = seed {
        config.noise.seed = s;
    }
    let bundle = run_simulation(&config)?;
    write_atomic(out, bundle.to_json()?.as_bytes())?;
    log::info!("wrote {} frames to {}", bundle.frames.len(), out.display());
    let manifest = RunManifest::new(
        "simulate",
        Some(config_path),
        to_value(&config)?,
        json!({ "noise": config.noise.seed }),
        out,
        start.elapsed(),
    );
    write_json(&out.with_extension("manifest.json"), &manifest)
}

fn load_pipeline(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig, Failure> {
    let mut config = match path {
        Some(p) => load_config::<PipelineConfig>(p, false)?.0,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        config.set_seed(s);
    }
    config.validate()?;
    Ok(config)
}

fn load_bundle(path: &Path) -> Result<SequenceBundle, Failure> {
    SequenceBundle::load(path).map_err(|e| usage(anyhow!("{}: {e}", path.display())))
}

pub fn track(
    bundle_path: &Path,
    pipeline: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let start = Instant::now();
    let bundle = load_bundle(bundle_path)?;
    let config = load_pipeline(pipeline, seed)?;
    let first = bundle
        .frames
        .first()
        .map(|f| f.ground_truth_pose)
        .ok_or_else(|| usage(anyhow!("{}: bundle has no frames", bundle_path.display())))?;
    let result = run_tracking(&bundle, &config, &first)?;
    let lost = result
        .frames
        .iter()
        .filter(|f| f.status == TrackStatus::Lost)
        .count();
    if lost > 0 {
        log::warn!("{lost} of {} frames lost", result.frames.len());
    }
    let summary = summarize(&bundle, &result)?;
    write_atomic(
        &out.join(TRAJECTORY_FILE),
        trajectory_csv(&result).as_bytes(),
    )?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    let manifest = RunManifest::new(
        "track",
        pipeline,
        json!({ "bundle": bundle_path.display().to_string(), "pipeline": to_value(&config)? }),
        json!({ "forest": config.forest.seed, "ransac": config.ransac.seed }),
        out,
        start.elapsed(),
    );
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

pub struct BenchArgs {
    pub outliers: Vec<f64>,
    pub methods: Vec<RelocalizerKind>,
    pub trials: usize,
    pub threshold: f64,
    pub max_focal_ratio: Option<f64>,
    pub seed: Option<u64>,
}

pub fn reloc_bench(
    bundle_path: &Path,
    pipeline: Option<&Path>,
    args: BenchArgs,
    out: &Path,
) -> Result<(), Failure> {
    let start = Instant::now();
    let bundle = load_bundle(bundle_path)?;
    let config = load_pipeline(pipeline, args.seed)?;
    let bench = RelocBenchConfig {
        outliers: args.outliers,
        methods: args.methods,
        trials: args.trials,
        threshold_deg: args.threshold,
        max_focal_ratio: args.max_focal_ratio,
        seed: args.seed.unwrap_or(config.ransac.seed),
    };
    bench.validate()?;
    let first = bundle
        .frames
        .first()
        .map(|f| f.ground_truth_pose)
        .ok_or_else(|| usage(anyhow!("{}: bundle has no frames", bundle_path.display())))?;
    let (_, map) = build_relocalization_map(&bundle, &config, &first)?;
    if map.keyframes.len() < 2 || held_out_frames(&bundle, &map).is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "insufficient keyframes: {} keyframes over {} frames",
            map.keyframes.len(),
            bundle.frames.len()
        )));
    }
    log::info!(
        "map: {} keyframes, {} trees",
        map.keyframes.len(),
        map.forest.trees.len()
    );
    let table = run_reloc_bench(&bundle, &map, &config, &bench)?;
    write_json(&out.join(RELOC_FILE), &table)?;
    let manifest = RunManifest::new(
        "reloc-bench",
        pipeline,
        json!({
            "bundle": bundle_path.display().to_string(),
            "pipeline": to_value(&config)?,
            "bench": to_value(&bench)?,
        }),
        json!({ "forest": config.forest.seed, "ransac": config.ransac.seed, "bench": bench.seed }),
        out,
        start.elapsed(),
    );
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(usage)
}

pub fn report(dirs: &[PathBuf], out: &Path, format: ReportFormat) -> Result<(), Failure> {
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let summary = dir.join(SUMMARY_FILE);
        let reloc = dir.join(RELOC_FILE);
        if !summary.is_file() && !reloc.is_file() {
            missing.push(format!("{} or {}", summary.display(), reloc.display()));
            continue;
        }
        if summary.is_file() {
            let summary: TrackSummary = read_json(&summary)?;
            entries.push(ReportEntry::Track {
                name: name.clone(),
                summary,
            });
        }
        if reloc.is_file() {
            let table: RelocTable = read_json(&reloc)?;
            entries.push(ReportEntry::Reloc { name, table });
        }
    }
    if !missing.is_empty() {
        return Err(usage(anyhow!("missing inputs: {}", missing.join(", "))));
    }
    write_atomic(out, emit_report(&entries, format).as_bytes())
}
