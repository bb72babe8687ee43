use std::fs;
use std::path::Path;
use std::process::Command;

use prominence::features::BriefPattern;
use prominence::imagecore::{load_gray, RasterImage};
use prominence::pipeline::{
    cmd_salience, cmd_scale, cmd_video, document_features, scale_scenario, PipelineConfig, ScaleRun, Scenario,
};
use prominence::salience::{mbd_exact, SalienceMap};
use prominence::synthetic::{campaign_videos, outlet_corpus, write_outlet_corpus, CampaignSpec, OutletCorpusSpec};
use prominence::vbow::DocumentMeta;
use prominence::Error;

fn config_in(out: &Path) -> PipelineConfig {
    PipelineConfig {
        out: out.to_path_buf(),
        jobs: Some(2),
        ..PipelineConfig::default()
    }
}

fn annotation(image: &str, regions: &str) -> String {
    format!(r#"{{"image": "{image}", "regions": [{regions}]}}"#)
}

#[test]
fn constant_image_gives_black_map_and_full_frame_row() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    fs::create_dir_all(&images).unwrap();
    RasterImage::gray(20, 12, vec![90; 240]).unwrap().save(images.join("flat.png")).unwrap();
    fs::write(
        images.join("flat.json"),
        annotation("flat.png", r#"{"x": 0, "y": 0, "w": 20, "h": 12, "label": "all"}"#),
    )
    .unwrap();

    let mut config = config_in(&tmp.path().join("out"));
    config.salience.images = Some(images);
    let outcome = cmd_salience(&config).unwrap();
    assert_eq!(outcome.exit_code(), 0);

    let map = load_gray(tmp.path().join("out/salience/flat.png")).unwrap();
    assert!(map.data().iter().all(|&v| v == 0));

    let scores = fs::read_to_string(tmp.path().join("out/salience/region_scores.csv")).unwrap();
    let mut lines = scores.lines();
    assert!(lines.next().unwrap().starts_with("image,region_id,label,size_fraction"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..4], ["flat", "0", "all", "1"]);
    assert!(tmp.path().join("out/manifest.json").exists());
}

#[test]
fn planted_squares_are_brighter_inside() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    fs::create_dir_all(&images).unwrap();
    let squares = [(12u32, 12u32, 8u32), (10, 14, 10), (15, 11, 6)];
    for (i, &(x0, y0, s)) in squares.iter().enumerate() {
        let img = RasterImage::from_fn(32, 32, |x, y| {
            if (x0..x0 + s).contains(&x) && (y0..y0 + s).contains(&y) {
                230
            } else {
                40 + ((x * 3 + y * 5) % 9) as u8
            }
        })
        .unwrap();
        img.save(images.join(format!("sq{i}.png"))).unwrap();
    }
    let mut config = config_in(&tmp.path().join("out"));
    config.salience.images = Some(images.clone());
    cmd_salience(&config).unwrap();

    for (i, &(x0, y0, s)) in squares.iter().enumerate() {
        let inside = |x: u32, y: u32| (x0..x0 + s).contains(&x) && (y0..y0 + s).contains(&y);
        let split = |get: &dyn Fn(u32, u32) -> f64| {
            let (mut a, mut na, mut b, mut nb) = (0.0, 0, 0.0, 0);
            for y in 0..32 {
                for x in 0..32 {
                    if inside(x, y) {
                        a += get(x, y);
                        na += 1;
                    } else {
                        b += get(x, y);
                        nb += 1;
                    }
                }
            }
            (a / na as f64, b / nb as f64)
        };
        let map = load_gray(tmp.path().join(format!("out/salience/sq{i}.png"))).unwrap();
        let (map_in, map_out) = split(&|x, y| f64::from(map.get(x, y, 0)));
        assert!(map_in > map_out, "image {i}: {map_in} <= {map_out}");

        let exact: SalienceMap = mbd_exact(&load_gray(images.join(format!("sq{i}.png"))).unwrap()).unwrap();
        let (ex_in, ex_out) = split(&|x, y| exact.get(x, y));
        assert!(ex_in > ex_out);
    }
}

#[test]
fn missing_metadata_column_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("corpus.csv");
    fs::write(&csv, "image_id,path,issue\na,a.png,climate\n").unwrap();
    let mut config = config_in(&tmp.path().join("out"));
    config.scale.metadata = Some(csv);
    match cmd_scale(&config) {
        Err(Error::MissingColumn(c)) => assert_eq!(c, "outlet"),
        other => panic!("expected a missing column error, got {other:?}"),
    }
}

#[test]
fn all_ones_salience_reduces_to_default_bag_of_words() {
    let mut config = PipelineConfig::default();
    config.vocabulary.k = 12;
    config.wordfish.bootstrap_draws = 0;
    config.scale.group_by = None;
    let images = outlet_corpus(5, &OutletCorpusSpec { images_per_outlet: 4, ..Default::default() });
    let pattern = BriefPattern::new(config.brief_seed());
    let docs: Vec<_> = images
        .iter()
        .map(|img| {
            let ones = SalienceMap::uniform(img.image.dims(), 1.0).unwrap();
            document_features(DocumentMeta::new(&img.id), &img.image, &ones, &config.features.config(), &pattern).unwrap()
        })
        .collect();
    let run = ScaleRun::from_config(&config);
    let plain = scale_scenario(&docs, Scenario::DefaultVbow, &run).unwrap();
    let weighted = scale_scenario(&docs, Scenario::SalienceVbow, &run).unwrap();
    assert_eq!(plain.vocabulary.centroids, weighted.vocabulary.centroids);
    assert_eq!(plain.dtm, weighted.dtm);
    assert_eq!(plain.fit, weighted.fit);
}

#[test]
fn separable_outlets_split_by_sign_through_the_command() {
    let tmp = tempfile::tempdir().unwrap();
    let images = outlet_corpus(3, &OutletCorpusSpec::default());
    let csv = write_outlet_corpus(tmp.path().join("corpus"), &images, "climate").unwrap();
    let mut config = config_in(&tmp.path().join("out"));
    config.seed = 3;
    config.vocabulary.k = 40;
    config.wordfish.bootstrap_draws = 10;
    config.wordfish.orientation = Some(("left_00".into(), "right_00".into()));
    config.scale.metadata = Some(csv);
    config.scale.group_by = None;
    config.scale.scenarios = vec![Scenario::SalienceVbow];
    let outcome = cmd_scale(&config).unwrap();
    assert_eq!(outcome.failures, Vec::<String>::new());

    let text = fs::read_to_string(tmp.path().join("out/scale/salience_vbow/idealpoints.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "document,omega,lo,hi");
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let omega: f64 = fields[1].parse().unwrap();
        assert_eq!(omega < 0.0, fields[0].starts_with("left"), "{line}");
    }
}

fn write_videos(root: &Path, seed: u64, spec: &CampaignSpec) {
    for v in campaign_videos(seed, spec) {
        v.write(root).unwrap();
    }
}

#[test]
fn single_video_outputs_are_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let videos = tmp.path().join("videos");
    write_videos(&videos, 2, &CampaignSpec { videos: 1, ..Default::default() });
    let run = |name: &str| {
        let mut config = config_in(&tmp.path().join(name));
        config.seed = 2;
        config.video.videos = Some(videos.clone());
        cmd_video(&config).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(tmp.path().join(name).join("video"))
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        files.push(("manifest.json".into(), fs::read(tmp.path().join(name).join("manifest.json")).unwrap()));
        files.sort();
        files
    };
    let first = run("a");
    assert!(first.iter().any(|(n, _)| n == "scenes.csv"));
    assert_eq!(first, run("b"));
}

#[test]
fn zero_female_faces_report_aliased_interaction() {
    let tmp = tempfile::tempdir().unwrap();
    let videos = tmp.path().join("videos");
    write_videos(&videos, 6, &CampaignSpec { videos: 6, female_share: 0.0, ..Default::default() });
    let mut config = config_in(&tmp.path().join("out"));
    config.video.videos = Some(videos);
    let outcome = cmd_video(&config).unwrap();
    assert_eq!(outcome.exit_code(), 2);
    assert_eq!(outcome.failures.len(), 2);
    for f in &outcome.failures {
        assert!(f.contains("rank-deficient"), "{f}");
        assert!(f.contains("`gender[female]`") && f.contains("`gender[female]:party[rep]`"), "{f}");
    }
}

#[test]
fn three_video_fixture_recovers_planted_sign() {
    let tmp = tempfile::tempdir().unwrap();
    let videos = tmp.path().join("videos");
    let spec = CampaignSpec { videos: 3, candidates: 1, faces_per_frame: 5, effect: 0.3, ..Default::default() };
    write_videos(&videos, 8, &spec);
    let mut config = config_in(&tmp.path().join("out"));
    config.video.videos = Some(videos);
    let outcome = cmd_video(&config).unwrap();
    assert_eq!(outcome.failures, Vec::<String>::new());
    let plot = fs::read_to_string(tmp.path().join("out/video/interaction_plot.csv")).unwrap();
    let row = plot
        .lines()
        .find(|l| l.starts_with("Depth Model,Gender: Female x Party: Republican"))
        .unwrap();
    let estimate: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!(estimate < 0.0, "{row}");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prominence"))
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    fs::create_dir_all(&images).unwrap();
    RasterImage::gray(8, 8, vec![10; 64]).unwrap().save(images.join("ok.png")).unwrap();
    fs::write(images.join("broken.png"), b"not a png").unwrap();
    let out = tmp.path().join("out");

    let status = bin()
        .args(["salience", "--images"])
        .arg(&images)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
    assert!(out.join("salience/ok.png").exists());

    fs::remove_file(images.join("broken.png")).unwrap();
    let status = bin().args(["--seed", "3", "--jobs", "1", "salience", "--raw", "--images"]).arg(&images).arg("--out").arg(&out).output().unwrap().status;
    assert_eq!(status.code(), Some(0));

    let csv = tmp.path().join("corpus.csv");
    fs::write(&csv, "image_id,path\na,a.png\n").unwrap();
    let output = bin().args(["scale", "--metadata"]).arg(&csv).arg("--out").arg(&out).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("missing column `outlet`"));

    for sub in ["video", "regress"] {
        let output = bin().arg(sub).arg("--help").output().unwrap();
        assert!(output.status.success(), "{sub} --help");
    }
}
