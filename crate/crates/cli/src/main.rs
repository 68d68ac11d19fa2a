mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ptz_slam::pipeline::RelocalizerKind;
use ptz_slam::report::ReportFormat;

use crate::io::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "ptz-slam",
    version,
    about = "Pan-tilt-zoom camera SLAM on synthetic sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a sequence bundle from a simulation config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the noise seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track a bundle and write the per-frame trajectory and a summary.
    Track {
        #[arg(long)]
        bundle: PathBuf,
        /// Pipeline config; defaults apply when omitted.
        #[arg(long)]
        pipeline: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Relocalization correctness under outliers on held-out frames.
    RelocBench {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        pipeline: Option<PathBuf>,
        /// Outlier ratios in percent.
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50")]
        outliers: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "forest,keyframe", value_parser = parse_method)]
        methods: Vec<RelocalizerKind>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Correctness threshold on the optical-axis angle, degrees.
        #[arg(long, default_value_t = 2.0)]
        threshold: f64,
        /// Also require the relative focal error to stay within this ratio.
        #[arg(long)]
        max_focal_ratio: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate `track` and `reloc-bench` outputs into tables.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "md", value_parser = parse_format)]
        format: ReportFormat,
    },
}

fn parse_method(s: &str) -> Result<RelocalizerKind, String> {
    match s {
        "forest" => Ok(RelocalizerKind::Forest),
        "keyframe" => Ok(RelocalizerKind::Keyframe),
        "nns" => Ok(RelocalizerKind::Nns),
        other => Err(format!(
            "unknown method `{other}` (expected forest, keyframe or nns)"
        )),
    }
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: ptz_slam::PtzError| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PTZ_SLAM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate { config, out, seed } => commands::simulate(&config, &out, seed),
        Command::Track {
            bundle,
            pipeline,
            out,
            seed,
        } => commands::track(&bundle, pipeline.as_deref(), &out, seed),
        Command::RelocBench {
            bundle,
            pipeline,
            outliers,
            methods,
            trials,
            threshold,
            max_focal_ratio,
            out,
            seed,
        } => commands::reloc_bench(
            &bundle,
            pipeline.as_deref(),
            commands::BenchArgs {
                outliers,
                methods,
                trials,
                threshold,
                max_focal_ratio,
                seed,
            },
            &out,
        ),
        Command::Report { dirs, out, format } => commands::report(&dirs, &out, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
