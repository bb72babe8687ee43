//! Writes synthetic campaign videos to disk and runs the video command on
//! them: scene detection, keyframe face measurements and the two models.
//!
//! ```text
//! cargo run --example video_prominence -- /tmp/video-demo
//! ```

use std::path::PathBuf;

use prominence::pipeline::{cmd_video, PipelineConfig};
use prominence::synthetic::{campaign_videos, write_campaign_videos, CampaignSpec};

fn main() -> prominence::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("prominence-video-demo"));
    let spec = CampaignSpec { videos: 8, ..Default::default() };
    write_campaign_videos(root.join("videos"), &campaign_videos(4, &spec))?;

    let mut config = PipelineConfig::default();
    config.seed = 4;
    config.out = root.join("out");
    config.video.videos = Some(root.join("videos"));
    let outcome = cmd_video(&config)?;
    for failure in &outcome.failures {
        println!("failed: {failure}");
    }
    let report = std::fs::read_to_string(root.join("out/video/report.txt"))
        .map_err(|e| prominence::Error::InvalidInput(e.to_string()))?;
    println!("{report}");
    println!("{} files written under {}", outcome.files.len(), config.out.display());
    Ok(())
}
