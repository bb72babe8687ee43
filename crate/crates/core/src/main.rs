use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prominence::pipeline::{self, PipelineConfig, SalienceMethod, Scenario};

#[derive(Parser)]
#[command(name = "prominence", version, about = "Object prominence measurement for images and video")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Salience maps and region scores for a directory of images.
    Salience {
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, value_parser = parse_method)]
        method: Option<SalienceMethod>,
        /// MBD forward/backward pass pairs.
        #[arg(long)]
        passes: Option<usize>,
        /// Disable MBD smoothing and centre bias.
        #[arg(long)]
        raw: bool,
    },
    /// Visual bag of words and Wordfish positions for an image corpus.
    Scale {
        /// CSV with image_id,path,outlet,issue.
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        group_by: Option<String>,
        /// Scale images individually instead of grouping.
        #[arg(long, conflicts_with = "group_by")]
        per_image: bool,
        #[arg(long)]
        issue: Option<String>,
        #[arg(long, value_delimiter = ',')]
        scenarios: Option<Vec<String>>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Scenes, face prominence table and regression models for video frame directories.
    Video {
        #[arg(long)]
        videos: Option<PathBuf>,
        /// Scene-cut threshold in gray levels.
        #[arg(long)]
        tau: Option<f64>,
        /// Measure every annotated frame instead of scene keyframes.
        #[arg(long)]
        all_frames: bool,
    },
    /// Regression models on an existing observation CSV.
    Regress {
        #[arg(long)]
        observations: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> Result<SalienceMethod, String> {
    match s {
        "mbd" => Ok(SalienceMethod::Mbd),
        "depth" => Ok(SalienceMethod::Depth),
        "size-centeredness" | "size_centeredness" => Ok(SalienceMethod::SizeCenteredness),
        other => Err(format!("unknown method `{other}` (mbd, depth, size-centeredness)")),
    }
}

fn run(cli: Cli) -> prominence::Result<pipeline::Outcome> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    match cli.command {
        Command::Salience { images, method, passes, raw } => {
            if images.is_some() {
                config.salience.images = images;
            }
            if let Some(m) = method {
                config.salience.method = m;
            }
            if let Some(p) = passes {
                config.salience.mbd.passes = p;
            }
            if raw {
                config.salience.mbd.auto_smoothing = false;
                config.salience.mbd.smoothing_radius = None;
                config.salience.mbd.center_sigma = None;
            }
            pipeline::cmd_salience(&config)
        }
        Command::Scale { metadata, group_by, per_image, issue, scenarios, k, bootstrap } => {
            if metadata.is_some() {
                config.scale.metadata = metadata;
            }
            if group_by.is_some() {
                config.scale.group_by = group_by;
            }
            if per_image {
                config.scale.group_by = None;
            }
            if issue.is_some() {
                config.scale.issue = issue;
            }
            if let Some(names) = scenarios {
                config.scale.scenarios = names.iter().map(|n| Scenario::parse(n)).collect::<prominence::Result<_>>()?;
            }
            if let Some(k) = k {
                config.vocabulary.k = k;
            }
            if let Some(b) = bootstrap {
                config.wordfish.bootstrap_draws = b;
            }
            pipeline::cmd_scale(&config)
        }
        Command::Video { videos, tau, all_frames } => {
            if videos.is_some() {
                config.video.videos = videos;
            }
            if let Some(t) = tau {
                config.video.tau = t;
            }
            if all_frames {
                config.video.keyframes = false;
            }
            pipeline::cmd_video(&config)
        }
        Command::Regress { observations } => {
            if observations.is_some() {
                config.regression.observations = observations;
            }
            pipeline::cmd_regress(&config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("failed: {f}");
            }
            eprintln!("wrote {} file(s)", outcome.files.len());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
