//! Writes a synthetic two-outlet image corpus and a set of campaign videos
//! that the `prominence` binary can run on.
//!
//! ```text
//! cargo run --example generate_fixtures -- /tmp/fixtures
//! prominence scale --metadata /tmp/fixtures/corpus/corpus.csv --per-image --out /tmp/run
//! prominence video --videos /tmp/fixtures/videos --out /tmp/run
//! ```

use std::path::PathBuf;

use prominence::synthetic::{campaign_videos, outlet_corpus, write_campaign_videos, write_outlet_corpus, CampaignSpec, OutletCorpusSpec};

fn main() -> prominence::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("prominence-fixtures"));
    let seed = 7;

    let images = outlet_corpus(seed, &OutletCorpusSpec::default());
    let csv = write_outlet_corpus(root.join("corpus"), &images, "climate")?;
    println!("{} images, metadata at {}", images.len(), csv.display());

    let videos = campaign_videos(seed, &CampaignSpec::default());
    write_campaign_videos(root.join("videos"), &videos)?;
    println!("{} videos under {}", videos.len(), root.join("videos").display());
    Ok(())
}
