//! Per-frame CSV, run summaries and aggregated tables.
//!
//! Layouts are versioned by [`REPORT_SCHEMA_VERSION`]; columns are only
//! ever appended.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::camera::wrap_degrees;
use crate::error::{PtzError, Result};
use crate::metrics::{
    evaluation_rays, pose_errors, reprojection_errors, PoseErrorStats, ReprojStats,
};
use crate::pipeline::{RelocalizerKind, TrackResult, TrackStatus, TrackerKind};
use crate::sim::{mean_angular_velocity, SequenceBundle};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const TRAJECTORY_COLUMNS: &str =
    "idx,status,pan,tilt,focal,gt_pan,gt_tilt,gt_focal,err_pan,err_tilt,err_focal,inliers,rms";

pub fn trajectory_csv(result: &TrackResult) -> String {
    let mut out = String::from(TRAJECTORY_COLUMNS);
    out.push('\n');
    for f in &result.frames {
        let (p, g) = (f.pose, f.ground_truth);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f.index,
            f.status.as_str(),
            p.pan,
            p.tilt,
            p.focal,
            g.pan,
            g.tilt,
            g.focal,
            wrap_degrees(p.pan - g.pan),
            p.tilt - g.tilt,
            p.focal - g.focal,
            f.inliers,
            f.rms
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub schema_version: u32,
    pub tracker: TrackerKind,
    pub relocalizer: RelocalizerKind,
    pub frames: usize,
    pub tracked: usize,
    pub lost: usize,
    pub relocalized: usize,
    pub keyframes: usize,
    /// Mean ground-truth angular velocity, degrees per second.
    pub velocity: f64,
    pub pose_errors: PoseErrorStats,
    pub reprojection: ReprojStats,
}

pub fn summarize(bundle: &SequenceBundle, result: &TrackResult) -> Result<TrackSummary> {
    let truth = result.ground_truth();
    let est = result.estimated();
    let rays = evaluation_rays(&truth[0], bundle.size);
    let count = |s: TrackStatus| result.frames.iter().filter(|f| f.status == s).count();
    Ok(TrackSummary {
        schema_version: REPORT_SCHEMA_VERSION,
        tracker: result.tracker,
        relocalizer: result.relocalizer,
        frames: result.frames.len(),
        tracked: count(TrackStatus::Tracked),
        lost: count(TrackStatus::Lost),
        relocalized: count(TrackStatus::Relocalized),
        keyframes: result.keyframes.len(),
        velocity: if truth.len() >= 2 {
            mean_angular_velocity(&truth, bundle.fps)?
        } else {
            0.0
        },
        pose_errors: pose_errors(&est, &truth)?,
        reprojection: reprojection_errors(&est, &truth, &rays, bundle.size)?,
    })
}

/// Relocalization correctness per outlier ratio and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelocTable {
    pub schema_version: u32,
    pub trials: usize,
    pub threshold_deg: f64,
    /// Outlier ratios in percent.
    pub outliers: Vec<f64>,
    pub methods: Vec<RelocalizerKind>,
    /// `correctness[i][j]`: fraction correct at `outliers[i]` for `methods[j]`.
    pub correctness: Vec<Vec<f64>>,
}

impl RelocTable {
    pub fn get(&self, outlier: f64, method: RelocalizerKind) -> Option<f64> {
        let i = self.outliers.iter().position(|o| *o == outlier)?;
        let j = self.methods.iter().position(|m| *m == method)?;
        Some(self.correctness[i][j])
    }
}

pub fn method_name(m: RelocalizerKind) -> &'static str {
    match m {
        RelocalizerKind::Forest => "forest",
        RelocalizerKind::Keyframe => "keyframe",
        RelocalizerKind::Nns => "nns",
        RelocalizerKind::None => "none",
    }
}

fn tracker_name(t: TrackerKind) -> &'static str {
    match t {
        TrackerKind::EkfPtz => "ekf_ptz",
        TrackerKind::EkfH => "ekf_h",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = PtzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(PtzError::InvalidInput(format!(
                "unknown report format `{other}`"
            ))),
        }
    }
}

/// A named input to [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub enum ReportEntry {
    Track { name: String, summary: TrackSummary },
    Reloc { name: String, table: RelocTable },
}

fn push_row(out: &mut String, cells: &[String], format: ReportFormat) {
    match format {
        ReportFormat::Csv => {
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        ReportFormat::Markdown => {
            out.push_str("| ");
            out.push_str(&cells.join(" | "));
            out.push_str(" |\n");
        }
    }
}

fn header(out: &mut String, cells: &[&str], format: ReportFormat) {
    push_row(
        out,
        &cells.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        format,
    );
    if format == ReportFormat::Markdown {
        push_row(out, &vec!["---".to_string(); cells.len()], format);
    }
}

/// Renders a tracking table (velocity and reprojection statistics per run)
/// followed by a relocalization table (correctness per outlier ratio).
/// Entries are sorted by name so the output does not depend on input order.
pub fn emit_report(entries: &[ReportEntry], format: ReportFormat) -> String {
    let mut tracks: Vec<(&String, &TrackSummary)> = entries
        .iter()
        .filter_map(|e| match e {
            ReportEntry::Track { name, summary } => Some((name, summary)),
            _ => None,
        })
        .collect();
    tracks.sort_by(|a, b| a.0.cmp(b.0));
    let mut relocs: Vec<(&String, &RelocTable)> = entries
        .iter()
        .filter_map(|e| match e {
            ReportEntry::Reloc { name, table } => Some((name, table)),
            _ => None,
        })
        .collect();
    relocs.sort_by(|a, b| a.0.cmp(b.0));

    let f4 = |v: f64| format!("{v:.4}");
    let f2 = |v: f64| format!("{v:.2}");
    let mut out = String::new();
    if !tracks.is_empty() {
        if format == ReportFormat::Markdown {
            out.push_str("## Tracking\n\n");
        }
        header(
            &mut out,
            &[
                "run",
                "tracker",
                "velocity_deg_s",
                "reproj_mean",
                "reproj_median",
                "reproj_max",
                "pan_mae",
                "tilt_mae",
                "focal_mae",
                "lost",
            ],
            format,
        );
        for (name, s) in &tracks {
            push_row(
                &mut out,
                &[
                    name.to_string(),
                    tracker_name(s.tracker).into(),
                    f4(s.velocity),
                    f4(s.reprojection.mean),
                    f4(s.reprojection.median),
                    f4(s.reprojection.max),
                    f4(s.pose_errors.pan.mean),
                    f4(s.pose_errors.tilt.mean),
                    f2(s.pose_errors.focal.mean),
                    s.lost.to_string(),
                ],
                format,
            );
        }
    }
    for (name, t) in &relocs {
        if !out.is_empty() {
            out.push('\n');
        }
        if format == ReportFormat::Markdown {
            let _ = writeln!(
                out,
                "## Relocalization: {name} ({} trials, {} deg)\n",
                t.trials, t.threshold_deg
            );
        }
        let mut cols = vec!["outlier_pct".to_string()];
        cols.extend(t.methods.iter().map(|m| method_name(*m).to_string()));
        let refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
        header(&mut out, &refs, format);
        for (i, o) in t.outliers.iter().enumerate() {
            let mut row = vec![format!("{o}")];
            row.extend(t.correctness[i].iter().map(|c| f2(100.0 * c)));
            push_row(&mut out, &row, format);
        }
    }
    out
}
