//! Run configuration and the `salience`, `scale`, `video` and `regress`
//! commands. Every command writes into an output directory, records each file
//! with its SHA-256 in `manifest.json`, and reports per-item failures instead of
//! aborting the run.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{attach_salience, extract_features, BriefPattern, FastConfig, FeatureConfig, WeightedKeypoint, Weighting};
use crate::imagecore::{depth_path_for, load_annotations_for, load_depth_map, load_gray, RasterImage, Region};
use crate::salience::{
    centeredness_field, depth_salience, mbd_salience, score_region, Aggregation, MbdConfig, MbdPostprocess, SalienceMap,
};
use crate::scaling::{bootstrap_ci, fit_wordfish, write_idealpoints_csv, Interval, WordfishConfig, WordfishFit};
use crate::stats::{fit_fe_ols, report_table, write_plot_csv, DataFrame, ModelSpec, RegressionResult};
use crate::vbow::{
    aggregate_documents, build_vocabulary, quantize, DocumentMeta, DocumentTermMatrix, KMeansConfig, TermRow,
    Vocabulary, WeightingStages,
};
use crate::video::{
    build_observation_table, load_video_input, read_observations_csv, write_observations_csv, FaceObservation,
    FrameSelection, FrameSequence, ObservationTable, Scene,
};

/// Independent seed for one pipeline stage: the first 8 bytes of
/// `sha256(seed_le || stage)`.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SalienceMethod {
    /// Per-pixel centeredness; annotated regions also report their size.
    SizeCenteredness,
    /// Inverted, frame-normalized depth from `<stem>.depth.png|pgm`.
    Depth,
    #[default]
    Mbd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbdSettings {
    pub passes: usize,
    pub smoothing_radius: Option<u32>,
    pub auto_smoothing: bool,
    pub center_sigma: Option<f64>,
}

impl Default for MbdSettings {
    fn default() -> Self {
        let d = MbdConfig::default();
        MbdSettings {
            passes: d.passes,
            smoothing_radius: d.postprocess.smoothing_radius,
            auto_smoothing: d.postprocess.auto_smoothing,
            center_sigma: d.postprocess.center_sigma,
        }
    }
}

impl MbdSettings {
    pub fn config(&self) -> MbdConfig {
        MbdConfig {
            passes: self.passes,
            postprocess: MbdPostprocess {
                smoothing_radius: self.smoothing_radius,
                auto_smoothing: self.auto_smoothing,
                center_sigma: self.center_sigma,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SalienceSettings {
    pub images: Option<PathBuf>,
    pub method: SalienceMethod,
    pub mbd: MbdSettings,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub fast_threshold: u16,
    pub max_keypoints: usize,
    pub min_keypoints: usize,
    pub grid_stride: u32,
    /// Defaults to a seed derived from the global seed.
    pub brief_seed: Option<u64>,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        let d = FeatureConfig::default();
        FeatureSettings {
            fast_threshold: d.fast.threshold,
            max_keypoints: d.fast.max_keypoints,
            min_keypoints: d.min_keypoints,
            grid_stride: d.grid_stride,
            brief_seed: None,
        }
    }
}

impl FeatureSettings {
    pub fn config(&self) -> FeatureConfig {
        FeatureConfig {
            fast: FastConfig {
                threshold: self.fast_threshold,
                max_keypoints: self.max_keypoints,
                ..FastConfig::default()
            },
            min_keypoints: self.min_keypoints,
            grid_stride: self.grid_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabularySettings {
    pub k: usize,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for VocabularySettings {
    fn default() -> Self {
        let d = KMeansConfig::default();
        VocabularySettings {
            k: d.k,
            max_iters: d.max_iters,
            tolerance: d.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordfishSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Document ids `[left, right]`; defaults to the first and last document.
    pub orientation: Option<(String, String)>,
    pub bootstrap_draws: usize,
    /// Normal prior sd on term discriminations; `null` for plain maximum likelihood.
    pub beta_prior_sd: Option<f64>,
    /// Round weighted counts to integers before fitting.
    pub round_counts: bool,
}

impl Default for WordfishSettings {
    fn default() -> Self {
        let d = WordfishConfig::default();
        WordfishSettings {
            tol: d.tol,
            max_iters: d.max_iters,
            orientation: None,
            bootstrap_draws: 100,
            beta_prior_sd: Some(3.0),
            round_counts: false,
        }
    }
}

/// Weighting variants of the visual bag of words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DefaultVbow,
    ClusteringWeighted,
    CountsWeighted,
    SalienceVbow,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::DefaultVbow,
        Scenario::ClusteringWeighted,
        Scenario::CountsWeighted,
        Scenario::SalienceVbow,
    ];

    pub fn stages(self) -> WeightingStages {
        match self {
            Scenario::DefaultVbow => WeightingStages::NONE,
            Scenario::ClusteringWeighted => WeightingStages {
                clustering: true,
                counts: false,
            },
            Scenario::CountsWeighted => WeightingStages {
                clustering: false,
                counts: true,
            },
            Scenario::SalienceVbow => WeightingStages::BOTH,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::DefaultVbow => "default_vbow",
            Scenario::ClusteringWeighted => "clustering_weighted",
            Scenario::CountsWeighted => "counts_weighted",
            Scenario::SalienceVbow => "salience_vbow",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario `{name}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleSettings {
    /// CSV with `image_id,path,outlet,issue`; paths are relative to the CSV.
    pub metadata: Option<PathBuf>,
    /// Metadata column whose values become documents; `None` scales images.
    pub group_by: Option<String>,
    pub issue: Option<String>,
    pub scenarios: Vec<Scenario>,
}

impl Default for ScaleSettings {
    fn default() -> Self {
        ScaleSettings {
            metadata: None,
            group_by: Some("outlet".into()),
            issue: None,
            scenarios: Scenario::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoSettings {
    /// Directory with one sub-directory per video.
    pub videos: Option<PathBuf>,
    pub tau: f64,
    /// Measure scene keyframes only; otherwise every annotated frame.
    pub keyframes: bool,
}

impl Default for VideoSettings {
    fn default() -> Self {
        VideoSettings {
            videos: None,
            tau: crate::video::DEFAULT_SCENE_TAU,
            keyframes: true,
        }
    }
}

impl VideoSettings {
    pub fn selection(&self) -> FrameSelection {
        if self.keyframes {
            FrameSelection::Keyframes { tau: self.tau }
        } else {
            FrameSelection::AllAnnotated
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSettings {
    pub observations: Option<PathBuf>,
    pub fixed_effects: Vec<String>,
    pub cluster: String,
}

impl Default for RegressionSettings {
    fn default() -> Self {
        let spec = ModelSpec::prominence("", "");
        RegressionSettings {
            observations: None,
            fixed_effects: spec.fixed_effects,
            cluster: spec.cluster,
        }
    }
}

impl RegressionSettings {
    /// The depth and face-size models.
    pub fn specs(&self) -> [ModelSpec; 2] {
        let with = |name: &str, outcome: &str| ModelSpec {
            fixed_effects: self.fixed_effects.clone(),
            cluster: self.cluster.clone(),
            ..ModelSpec::prominence(name, outcome)
        };
        [with("Depth Model", "depth_position"), with("Face Size Model", "relative_size")]
    }
}

/// Everything a run needs. `out` and `jobs` are not recorded in the manifest,
/// so runs that differ only in where or how wide they ran stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub jobs: Option<usize>,
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub salience: SalienceSettings,
    pub features: FeatureSettings,
    pub vocabulary: VocabularySettings,
    pub wordfish: WordfishSettings,
    pub scale: ScaleSettings,
    pub video: VideoSettings,
    pub regression: RegressionSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            jobs: None,
            out: PathBuf::from("prominence-out"),
            salience: SalienceSettings::default(),
            features: FeatureSettings::default(),
            vocabulary: VocabularySettings::default(),
            wordfish: WordfishSettings::default(),
            scale: ScaleSettings::default(),
            video: VideoSettings::default(),
            regression: RegressionSettings::default(),
        }
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("config: {what}")))
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.jobs != Some(0), "jobs must be >= 1")?;
        check(self.salience.mbd.passes >= 1, "salience.mbd.passes must be >= 1")?;
        check(
            self.salience.mbd.center_sigma.map_or(true, |s| s > 0.0 && s.is_finite()),
            "salience.mbd.center_sigma must be positive",
        )?;
        check(self.features.fast_threshold >= 1, "features.fast_threshold must be >= 1")?;
        check(self.features.max_keypoints >= 1, "features.max_keypoints must be >= 1")?;
        check(self.features.grid_stride >= 1, "features.grid_stride must be >= 1")?;
        check(self.vocabulary.k >= 2, "vocabulary.k must be >= 2")?;
        check(self.vocabulary.max_iters >= 1, "vocabulary.max_iters must be >= 1")?;
        check(self.vocabulary.tolerance >= 0.0, "vocabulary.tolerance must be >= 0")?;
        check(self.wordfish.tol > 0.0, "wordfish.tol must be > 0")?;
        check(self.wordfish.max_iters >= 1, "wordfish.max_iters must be >= 1")?;
        check(!self.scale.scenarios.is_empty(), "scale.scenarios must not be empty")?;
        check(self.video.tau >= 0.0, "video.tau must be >= 0")?;
        check(!self.regression.cluster.is_empty(), "regression.cluster must be set")?;
        Ok(())
    }

    pub fn brief_seed(&self) -> u64 {
        self.features.brief_seed.unwrap_or_else(|| stage_seed(self.seed, "brief"))
    }
}

/// One emitted file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub command: String,
}

/// Result of a command that ran to completion, possibly with per-item failures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<ManifestEntry>,
    pub failures: Vec<String>,
}

impl Outcome {
    /// 0 on full success, 2 when some items failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

struct Emitter<'a> {
    out: &'a Path,
    command: &'static str,
    files: Vec<ManifestEntry>,
    failures: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl<'a> Emitter<'a> {
    fn new(out: &'a Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Emitter {
            out,
            command,
            files: Vec::new(),
            failures: Vec::new(),
        })
    }

    fn target(&self, rel: &str) -> Result<PathBuf> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(path)
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            command: self.command.to_string(),
        });
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.target(rel)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(rel, bytes);
        Ok(())
    }

    fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    fn save_image(&mut self, rel: &str, img: &RasterImage) -> Result<()> {
        let path = self.target(rel)?;
        img.save(&path)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.record(rel, &bytes);
        Ok(())
    }

    fn fail(&mut self, what: impl std::fmt::Display, err: &Error) {
        let msg = format!("{what}: {err}");
        log::error!("{msg}");
        self.failures.push(msg);
    }

    fn finish(mut self, config: &PipelineConfig) -> Result<Outcome> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = serde_json::json!({
            "command": self.command,
            "seed": config.seed,
            "config": config,
            "files": self.files,
            "failures": self.failures,
        });
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(Outcome {
            files: self.files,
            failures: self.failures,
        })
    }
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot build a {n}-thread pool: {e}")))?
            .install(f),
    }
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let path = path
        .as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("config: {what} is not set")))?;
    if !path.exists() {
        return Err(Error::InvalidInput(format!("{what} `{}` does not exist", path.display())));
    }
    Ok(path)
}

fn is_image_file(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    matches!(ext.as_str(), "png" | "pgm" | "ppm" | "bmp") && !name.contains(".depth.")
}

/// Image files in a directory, sorted by name; depth sidecars are skipped.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Salience map of one image under the configured method.
pub fn salience_for(path: &Path, gray: &RasterImage, settings: &SalienceSettings) -> Result<SalienceMap> {
    match settings.method {
        SalienceMethod::Mbd => mbd_salience(gray, &settings.mbd.config()),
        SalienceMethod::Depth => {
            let depth_path = depth_path_for(path).ok_or_else(|| Error::UnreadableFile {
                path: path.to_path_buf(),
                reason: "no <stem>.depth.png|pgm sidecar".into(),
            })?;
            Ok(depth_salience(&load_depth_map(depth_path, gray.dims())?))
        }
        SalienceMethod::SizeCenteredness => Ok(centeredness_field(gray.dims())),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string()
}

struct RegionRow {
    image: String,
    label: String,
    score: crate::salience::RegionScore,
}

/// Salience maps for every image in `salience.images`, plus `region_scores.csv`
/// when `<stem>.json` annotation sidecars exist.
pub fn cmd_salience(config: &PipelineConfig) -> Result<Outcome> {
    config.validate()?;
    with_jobs(config.jobs, || {
        let dir = required(&config.salience.images, "salience.images")?;
        let images = list_images(dir)?;
        let mut emit = Emitter::new(&config.out, "salience")?;
        let results: Vec<Result<(SalienceMap, Vec<RegionRow>)>> = images
            .par_iter()
            .map(|path| {
                let gray = load_gray(path)?;
                let map = salience_for(path, &gray, &config.salience)?;
                let sidecar = path.with_extension("json");
                let mut rows = Vec::new();
                if sidecar.exists() {
                    let set = load_annotations_for(&sidecar, gray.dims())?;
                    for (i, r) in set.regions.iter().enumerate() {
                        rows.push(RegionRow {
                            image: stem(path),
                            label: r.label.clone(),
                            score: score_region(i, &Region::Box(r.bbox), &map, 1.0, config.salience.aggregation)?,
                        });
                    }
                }
                Ok((map, rows))
            })
            .collect();
        let mut all_rows = Vec::new();
        let mut any_annotations = false;
        for (path, result) in images.iter().zip(results) {
            match result {
                Ok((map, rows)) => {
                    emit.save_image(&format!("salience/{}.png", stem(path)), &map.to_image())?;
                    any_annotations |= path.with_extension("json").exists();
                    all_rows.extend(rows);
                }
                Err(e) => emit.fail(path.display(), &e),
            }
        }
        if any_annotations {
            emit.write_with("salience/region_scores.csv", |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record([
                    "image",
                    "region_id",
                    "label",
                    "size_fraction",
                    "centeredness",
                    "salience_aggregate",
                    "detection_confidence",
                    "prominence",
                ])?;
                for r in &all_rows {
                    let s = &r.score;
                    w.write_record([
                        r.image.clone(),
                        s.region_id.to_string(),
                        r.label.clone(),
                        s.size_fraction.to_string(),
                        s.centeredness.to_string(),
                        s.salience_aggregate.to_string(),
                        s.detection_confidence.to_string(),
                        s.prominence.to_string(),
                    ])?;
                }
                w.flush().map_err(|e| Error::io("<region scores>", e))?;
                Ok(())
            })?;
        }
        emit.finish(config)
    })
}

/// Features of one image with salience weights attached.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentFeatures {
    pub meta: DocumentMeta,
    pub features: Vec<WeightedKeypoint>,
}

/// Extracts FAST/BRIEF features of one image, weighted by its salience map.
pub fn document_features(
    meta: DocumentMeta,
    gray: &RasterImage,
    salience: &SalienceMap,
    features: &FeatureConfig,
    pattern: &BriefPattern,
) -> Result<DocumentFeatures> {
    let raw = extract_features(gray, features, pattern)?;
    let weighted = attach_salience(&raw, gray.dims(), Weighting::Salience(salience))?;
    if weighted.is_empty() {
        return Err(Error::EmptyFeatures);
    }
    Ok(DocumentFeatures {
        meta,
        features: weighted,
    })
}

/// Parameters for scaling one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRun {
    pub kmeans: KMeansConfig,
    pub brief_seed: u64,
    pub group_by: Option<String>,
    pub wordfish: WordfishConfig,
    pub orientation: Option<(String, String)>,
    pub bootstrap_draws: usize,
    pub bootstrap_seed: u64,
    pub round_counts: bool,
}

impl ScaleRun {
    pub fn from_config(config: &PipelineConfig) -> Self {
        ScaleRun {
            kmeans: KMeansConfig {
                k: config.vocabulary.k,
                max_iters: config.vocabulary.max_iters,
                seed: stage_seed(config.seed, "kmeans"),
                tolerance: config.vocabulary.tolerance,
            },
            brief_seed: config.brief_seed(),
            group_by: config.scale.group_by.clone(),
            wordfish: WordfishConfig {
                tol: config.wordfish.tol,
                max_iters: config.wordfish.max_iters,
                seed: stage_seed(config.seed, "wordfish"),
                orientation: (0, 1),
                beta_prior_sd: config.wordfish.beta_prior_sd,
            },
            orientation: config.wordfish.orientation.clone(),
            bootstrap_draws: config.wordfish.bootstrap_draws,
            bootstrap_seed: stage_seed(config.seed, "bootstrap"),
            round_counts: config.wordfish.round_counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub vocabulary: Vocabulary,
    pub image_dtm: DocumentTermMatrix,
    /// The matrix handed to Wordfish: aggregated, empty terms removed, optionally rounded.
    pub dtm: DocumentTermMatrix,
    pub fit: WordfishFit,
    pub intervals: Option<Vec<Interval>>,
    /// Images or groups left out because their term vector was empty.
    pub dropped: Vec<String>,
}

/// Vocabulary, term matrix and Wordfish fit for one weighting scenario.
pub fn scale_scenario(docs: &[DocumentFeatures], scenario: Scenario, run: &ScaleRun) -> Result<ScenarioResult> {
    let stages = scenario.stages();
    let all: Vec<WeightedKeypoint> = docs.iter().flat_map(|d| d.features.iter().copied()).collect();
    let (vocabulary, _) = build_vocabulary(&all, &run.kmeans, run.brief_seed, stages)?;
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for d in docs {
        let terms = quantize(&d.features, &vocabulary, stages.counts)?;
        if terms.iter().all(|&t| t == 0.0) {
            dropped.push(d.meta.id.clone());
            continue;
        }
        rows.push(TermRow {
            document: d.meta.clone(),
            terms,
        });
    }
    if rows.is_empty() {
        return Err(Error::DegenerateMatrix("every document has an empty term vector".into()));
    }
    let image_dtm = DocumentTermMatrix::from_rows(
        rows.iter().map(|r| r.document.clone()).collect(),
        &rows.iter().map(|r| r.terms.clone()).collect::<Vec<_>>(),
    )?;
    let grouped = match &run.group_by {
        Some(key) => {
            let agg = aggregate_documents(&rows, key)?;
            dropped.extend(agg.dropped);
            agg.dtm
        }
        None => image_dtm.clone(),
    };
    let (mut dtm, _) = grouped.drop_empty_terms();
    if run.round_counts {
        dtm = dtm.rounded()?;
        let (kept, _) = dtm.drop_empty_terms();
        dtm = kept;
    }
    let orientation = match &run.orientation {
        Some((l, r)) => {
            let find = |id: &String| {
                dtm.index_of(id)
                    .ok_or_else(|| Error::InvalidInput(format!("orientation document `{id}` not found")))
            };
            (find(l)?, find(r)?)
        }
        None => (0, dtm.n_docs().saturating_sub(1)),
    };
    let wf = WordfishConfig {
        orientation,
        ..run.wordfish
    };
    let fit = fit_wordfish(&dtm, &wf)?;
    let intervals = if run.bootstrap_draws > 0 && fit.converged {
        Some(bootstrap_ci(&dtm, &fit, run.bootstrap_draws, run.bootstrap_seed, &wf)?)
    } else {
        None
    };
    Ok(ScenarioResult {
        scenario,
        vocabulary,
        image_dtm,
        dtm,
        fit,
        intervals,
        dropped,
    })
}

/// `image_id,path,...` rows of the corpus metadata CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub meta: DocumentMeta,
    pub path: PathBuf,
}

/// Reads the metadata CSV; `required` columns must be present.
pub fn read_corpus(csv_path: &Path, required_columns: &[&str]) -> Result<Vec<CorpusEntry>> {
    let file = fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    for col in ["image_id", "path"].iter().chain(required_columns) {
        if !headers.iter().any(|h| h == *col) {
            return Err(Error::MissingColumn(col.to_string()));
        }
    }
    let base = csv_path.parent().unwrap_or_else(|| Path::new(""));
    let mut entries = Vec::new();
    for record in r.records() {
        let record = record?;
        let mut meta = DocumentMeta::new("");
        let mut path = PathBuf::new();
        for (h, v) in headers.iter().zip(record.iter()) {
            match h {
                "image_id" => meta.id = v.to_string(),
                "path" => path = base.join(v),
                other => {
                    meta.metadata.insert(other.to_string(), v.to_string());
                }
            }
        }
        entries.push(CorpusEntry { meta, path });
    }
    if entries.is_empty() {
        return Err(Error::EmptyTable);
    }
    Ok(entries)
}

fn combined_idealpoints(results: &[ScenarioResult], buf: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["scenario", "document", "omega", "lo", "hi"])?;
    for r in results {
        for (i, doc) in r.fit.documents.iter().enumerate() {
            let (lo, hi) = match r.intervals.as_ref().and_then(|iv| iv.get(i)) {
                Some(iv) => (iv.lo.to_string(), iv.hi.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                r.scenario.name().to_string(),
                doc.clone(),
                r.fit.omega[i].to_string(),
                lo,
                hi,
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<idealpoints csv>", e))?;
    Ok(())
}

/// Features, vocabularies, term matrices and Wordfish positions for each
/// configured weighting scenario.
pub fn cmd_scale(config: &PipelineConfig) -> Result<Outcome> {
    config.validate()?;
    with_jobs(config.jobs, || {
        let csv_path = required(&config.scale.metadata, "scale.metadata")?;
        let mut needed: Vec<&str> = Vec::new();
        if let Some(g) = &config.scale.group_by {
            needed.push(g);
        }
        if config.scale.issue.is_some() {
            needed.push("issue");
        }
        let mut entries = read_corpus(csv_path, &needed)?;
        if let Some(issue) = &config.scale.issue {
            entries.retain(|e| e.meta.metadata.get("issue") == Some(issue));
            if entries.is_empty() {
                return Err(Error::InvalidInput(format!("no images for issue `{issue}`")));
            }
        }
        let mut emit = Emitter::new(&config.out, "scale")?;
        let pattern = BriefPattern::new(config.brief_seed());
        let features = config.features.config();
        let extracted: Vec<Result<DocumentFeatures>> = entries
            .par_iter()
            .map(|e| {
                let gray = load_gray(&e.path)?;
                let map = salience_for(&e.path, &gray, &config.salience)?;
                document_features(e.meta.clone(), &gray, &map, &features, &pattern)
            })
            .collect();
        let mut docs = Vec::new();
        for (e, r) in entries.iter().zip(extracted) {
            match r {
                Ok(d) => docs.push(d),
                Err(err) => emit.fail(e.path.display(), &err),
            }
        }
        let run = ScaleRun::from_config(config);
        let mut results = Vec::new();
        for &scenario in &config.scale.scenarios {
            let result = scale_scenario(&docs, scenario, &run)?;
            let dir = format!("scale/{}", scenario.name());
            for d in &result.dropped {
                emit.failures.push(format!("{}: `{d}` has an empty term vector", scenario.name()));
            }
            if !result.fit.converged {
                emit.failures.push(format!(
                    "{}: Wordfish did not converge in {} iterations",
                    scenario.name(),
                    result.fit.iterations
                ));
            }
            emit.write(&format!("{dir}/vocabulary.json"), result.vocabulary.to_json()?.as_bytes())?;
            emit.write_with(&format!("{dir}/dtm_images.csv"), |b| result.image_dtm.write_csv(b))?;
            emit.write_with(&format!("{dir}/dtm.csv"), |b| result.dtm.write_csv(b))?;
            emit.write(&format!("{dir}/wordfish.json"), result.fit.to_json()?.as_bytes())?;
            emit.write_with(&format!("{dir}/idealpoints.csv"), |b| {
                write_idealpoints_csv(b, &result.fit, result.intervals.as_deref())
            })?;
            results.push(result);
        }
        emit.write_with("scale/idealpoints.csv", |b| combined_idealpoints(&results, b))?;
        emit.finish(config)
    })
}

/// Fits the depth and face-size models; a model that cannot be fitted is
/// reported as a failure message instead.
pub fn fit_models(rows: &[FaceObservation], settings: &RegressionSettings) -> Result<(Vec<RegressionResult>, Vec<String>)> {
    let df = DataFrame::from_observations(rows)?;
    let [depth, size] = settings.specs();
    let (a, b) = rayon::join(|| fit_fe_ols(&df, &depth), || fit_fe_ols(&df, &size));
    let mut fitted = Vec::new();
    let mut failures = Vec::new();
    for (spec, r) in [(depth, a), (size, b)] {
        match r {
            Ok(res) => fitted.push(res),
            Err(e) => failures.push(format!("{}: {e}", spec.name)),
        }
    }
    Ok((fitted, failures))
}

fn emit_models(emit: &mut Emitter<'_>, dir: &str, rows: &[FaceObservation], settings: &RegressionSettings) -> Result<()> {
    let (fitted, failures) = fit_models(rows, settings)?;
    for f in failures {
        log::error!("{f}");
        emit.failures.push(f);
    }
    if fitted.is_empty() {
        return Ok(());
    }
    let refs: Vec<&RegressionResult> = fitted.iter().collect();
    let table = report_table(&refs);
    emit.write(&format!("{dir}/report.txt"), table.to_text().as_bytes())?;
    emit.write_with(&format!("{dir}/report.csv"), |b| table.write_csv(b))?;
    emit.write_with(&format!("{dir}/interaction_plot.csv"), |b| write_plot_csv(b, &refs))?;
    Ok(())
}

fn write_scenes(buf: &mut Vec<u8>, scenes: &[(String, Vec<Scene>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["video_id", "scene", "start", "end", "keyframe"])?;
    for (video, list) in scenes {
        for (i, s) in list.iter().enumerate() {
            w.write_record([
                video.clone(),
                i.to_string(),
                s.start.to_string(),
                s.end.to_string(),
                s.keyframe.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<scenes csv>", e))?;
    Ok(())
}

/// Scene detection, per-face prominence metrics and both regression models
/// for every video directory under `video.videos`.
pub fn cmd_video(config: &PipelineConfig) -> Result<Outcome> {
    config.validate()?;
    with_jobs(config.jobs, || {
        let root = required(&config.video.videos, "video.videos")?;
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut emit = Emitter::new(&config.out, "video")?;
        let selection = config.video.selection();
        let processed: Vec<Result<(String, Vec<Scene>, ObservationTable)>> = dirs
            .par_iter()
            .map(|dir| {
                let seq = FrameSequence::from_dir(dir)?;
                let (input, scenes) = load_video_input(&seq, selection)?;
                let table = build_observation_table(std::slice::from_ref(&input))?;
                Ok((seq.video_id, scenes, table))
            })
            .collect();
        let mut scenes = Vec::new();
        let mut table = ObservationTable::default();
        for (dir, r) in dirs.iter().zip(processed) {
            match r {
                Ok((id, s, t)) => {
                    scenes.push((id, s));
                    table.extend(t);
                }
                Err(e) => emit.fail(dir.display(), &e),
            }
        }
        if config.video.keyframes {
            emit.write_with("video/scenes.csv", |b| write_scenes(b, &scenes))?;
        }
        emit.write_with("video/observations.csv", |b| write_observations_csv(b, &table.rows))?;
        let summary = serde_json::json!({
            "faces": table.rows.len(),
            "exclusions": table.exclusions,
            "depth_rows": table.depth_rows(),
            "size_rows": table.size_rows(),
        });
        emit.write("video/exclusions.json", (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
        if table.rows.is_empty() {
            emit.failures.push("no annotated faces; regression skipped".into());
        } else {
            emit_models(&mut emit, "video", &table.rows, &config.regression)?;
        }
        emit.finish(config)
    })
}

/// Both regression models on an existing observation CSV.
pub fn cmd_regress(config: &PipelineConfig) -> Result<Outcome> {
    config.validate()?;
    with_jobs(config.jobs, || {
        let path = required(&config.regression.observations, "regression.observations")?;
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let rows = read_observations_csv(file)?;
        let mut emit = Emitter::new(&config.out, "regress")?;
        emit_models(&mut emit, "regress", &rows, &config.regression)?;
        emit.finish(config)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_differ_and_repeat() {
        assert_eq!(stage_seed(7, "kmeans"), stage_seed(7, "kmeans"));
        assert_ne!(stage_seed(7, "kmeans"), stage_seed(7, "wordfish"));
        assert_ne!(stage_seed(7, "kmeans"), stage_seed(8, "kmeans"));
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = PipelineConfig::from_json(r#"{"seed": 3, "vocabulary": {"k": 40}}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.vocabulary.k, 40);
        assert_eq!(c.vocabulary.max_iters, 100);
        assert_eq!(c.salience.method, SalienceMethod::Mbd);
        assert!(PipelineConfig::from_json(r#"{"sed": 3}"#).is_err());
        let bad = PipelineConfig {
            video: VideoSettings {
                tau: -1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn manifest_config_omits_out_and_jobs() {
        let c = PipelineConfig {
            jobs: Some(4),
            out: "/tmp/x".into(),
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(!text.contains("jobs") && !text.contains("/tmp/x"));
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::parse(s.name()).unwrap(), s);
        }
        assert!(Scenario::parse("text").is_err());
    }
}
