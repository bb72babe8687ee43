//! From pixels to a document-term matrix: FAST corners, BRIEF descriptors,
//! salience weights, a weighted k-means vocabulary and per-image term counts.

use prominence::features::{attach_salience, extract_features, BriefPattern, FeatureConfig, Weighting};
use prominence::salience::{mbd_salience, MbdConfig};
use prominence::synthetic::{outlet_corpus, OutletCorpusSpec};
use prominence::vbow::{build_vocabulary, quantize, DocumentMeta, DocumentTermMatrix, KMeansConfig, WeightingStages};

fn main() -> prominence::Result<()> {
    let images = outlet_corpus(3, &OutletCorpusSpec { images_per_outlet: 4, ..Default::default() });
    let pattern = BriefPattern::new(11);
    let features = FeatureConfig::default();

    let mut per_image = Vec::new();
    for img in &images {
        let raw = extract_features(&img.image, &features, &pattern)?;
        let salience = mbd_salience(&img.image, &MbdConfig::default())?;
        let weighted = attach_salience(&raw, img.image.dims(), Weighting::Salience(&salience))?;
        let mass: f64 = weighted.iter().map(|k| k.weight).sum();
        println!("{}: {} keypoints, salience mass {:.1}", img.id, weighted.len(), mass);
        per_image.push(weighted);
    }

    let all: Vec<_> = per_image.iter().flatten().copied().collect();
    let config = KMeansConfig { k: 16, seed: 5, ..Default::default() };
    let (vocab, fit) = build_vocabulary(&all, &config, pattern.seed(), WeightingStages::BOTH)?;
    println!(
        "vocabulary of {} words after {} Lloyd iterations, weighted objective {:.2}",
        vocab.k,
        fit.iterations,
        fit.objective()
    );

    let rows = per_image
        .iter()
        .map(|f| quantize(f, &vocab, true))
        .collect::<prominence::Result<Vec<_>>>()?;
    let docs = images.iter().map(|i| DocumentMeta::new(&i.id).with("outlet", &i.outlet)).collect();
    let dtm = DocumentTermMatrix::from_rows(docs, &rows)?;
    dtm.write_csv(std::io::stdout().lock())?;
    Ok(())
}
