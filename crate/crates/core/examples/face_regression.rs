//! Fixed-effects OLS with frame-clustered errors on in-memory synthetic faces,
//! and the report formatting for regression tables.

use prominence::pipeline::{fit_models, RegressionSettings};
use prominence::stats::{format_coefficient, report_table};
use prominence::synthetic::{campaign_videos, CampaignSpec};
use prominence::video::build_observation_table;

fn main() -> prominence::Result<()> {
    let videos = campaign_videos(12, &CampaignSpec::default());
    let inputs: Vec<_> = videos.iter().map(|v| v.keyframe_input()).collect();
    let table = build_observation_table(&inputs)?;
    println!("{} face observations", table.rows.len());

    let (models, failures) = fit_models(&table.rows, &RegressionSettings::default())?;
    for f in failures {
        println!("model failed: {f}");
    }
    let refs: Vec<_> = models.iter().collect();
    println!("{}", report_table(&refs).to_text());

    if let Some(term) = models[0].coefficient("gender[female]:party[rep]") {
        println!(
            "interaction: estimate {:.4}, clustered se {:.4}, p {:.4}",
            term.estimate, term.se, term.p
        );
    }
    println!("cell formatting: {}", format_coefficient(-0.3712, 0.0998, 0.0004));
    Ok(())
}
