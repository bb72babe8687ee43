//! The image scaling application end to end on a synthetic two-outlet corpus:
//! each outlet plants its own shape among shared clutter, and the four
//! weighting scenarios place images on one dimension.

use prominence::features::BriefPattern;
use prominence::pipeline::{document_features, scale_scenario, DocumentFeatures, PipelineConfig, ScaleRun, Scenario};
use prominence::salience::{mbd_salience, MbdConfig};
use prominence::synthetic::{outlet_corpus, OutletCorpusSpec};
use prominence::vbow::DocumentMeta;

fn main() -> prominence::Result<()> {
    let mut config = PipelineConfig::default();
    config.seed = 21;
    config.vocabulary.k = 40;
    config.wordfish.bootstrap_draws = 0;
    config.wordfish.orientation = Some(("left_00".into(), "right_00".into()));
    config.scale.group_by = None;

    let images = outlet_corpus(config.seed, &OutletCorpusSpec::default());
    let pattern = BriefPattern::new(config.brief_seed());
    let docs = images
        .iter()
        .map(|img| {
            let salience = mbd_salience(&img.image, &MbdConfig::default())?;
            let meta = DocumentMeta::new(&img.id).with("outlet", &img.outlet);
            document_features(meta, &img.image, &salience, &config.features.config(), &pattern)
        })
        .collect::<prominence::Result<Vec<DocumentFeatures>>>()?;

    let run = ScaleRun::from_config(&config);
    for scenario in Scenario::ALL {
        let result = scale_scenario(&docs, scenario, &run)?;
        let side = |prefix: &str| {
            let v: Vec<f64> = result
                .fit
                .documents
                .iter()
                .zip(&result.fit.omega)
                .filter(|(d, _)| d.starts_with(prefix))
                .map(|(_, w)| *w)
                .collect();
            (
                v.iter().copied().fold(f64::INFINITY, f64::min),
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        let (left, right) = (side("left"), side("right"));
        println!(
            "{:<20} left [{:>6.2}, {:>6.2}]  right [{:>6.2}, {:>6.2}]  separated: {}",
            scenario.name(),
            left.0,
            left.1,
            right.0,
            right.1,
            left.1 < right.0
        );
    }
    Ok(())
}
