//! Seeded synthetic corpora with planted structure: a two-outlet news-image
//! corpus for scaling and campaign videos with a planted depth effect.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imagecore::{
    AnnotatedRegion, BBox, Covariates, DepthMap, Dims, Gender, Party, RasterImage, RawAnnotations, RawRegion,
};
use crate::video::{frame_file_name, AnnotatedFrame, VideoInput};

/// Shape planted at the centre of every image of an outlet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantedShape {
    /// 3x3 grid of small bright squares.
    Squares,
    /// Bright right triangles.
    Triangles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutletCorpusSpec {
    pub images_per_outlet: usize,
    pub size: u32,
    /// Low-contrast rectangles scattered over the frame, same distribution for both outlets.
    pub clutter: usize,
}

impl Default for OutletCorpusSpec {
    fn default() -> Self {
        OutletCorpusSpec {
            images_per_outlet: 12,
            size: 96,
            clutter: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusImage {
    pub id: String,
    pub outlet: String,
    pub image: RasterImage,
}

pub const OUTLETS: [(&str, PlantedShape); 2] = [("left", PlantedShape::Squares), ("right", PlantedShape::Triangles)];

fn fill_rect(buf: &mut [u8], size: u32, x0: i64, y0: i64, w: i64, h: i64, v: u8) {
    for y in y0.max(0)..(y0 + h).min(size as i64) {
        for x in x0.max(0)..(x0 + w).min(size as i64) {
            buf[(y * size as i64 + x) as usize] = v;
        }
    }
}

fn plant(buf: &mut [u8], size: u32, shape: PlantedShape, cx: i64, cy: i64, rng: &mut ChaCha8Rng) {
    let level = rng.gen_range(215..=245);
    match shape {
        PlantedShape::Squares => {
            for gy in -1..=1 {
                for gx in -1..=1 {
                    fill_rect(buf, size, cx + gx * 11 - 4, cy + gy * 11 - 4, 8, 8, level);
                }
            }
        }
        PlantedShape::Triangles => {
            for (ox, oy) in [(-16i64, -14i64), (2, -14), (-7, 2)] {
                for dy in 0..14 {
                    fill_rect(buf, size, cx + ox, cy + oy + dy, dy + 1, 1, level);
                }
            }
        }
    }
}

/// `images_per_outlet` images for each of the two outlets in [`OUTLETS`].
pub fn outlet_corpus(seed: u64, spec: &OutletCorpusSpec) -> Vec<CorpusImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = spec.size;
    let noise = Normal::new(0.0, 3.0).expect("valid sd");
    let mut out = Vec::new();
    for (outlet, shape) in OUTLETS {
        for i in 0..spec.images_per_outlet {
            let bg: i32 = rng.gen_range(90..=120);
            let mut buf: Vec<u8> = (0..size * size)
                .map(|_| (bg + noise.sample(&mut rng) as i32).clamp(0, 255) as u8)
                .collect();
            for _ in 0..spec.clutter {
                let w = rng.gen_range(4..=12);
                let h = rng.gen_range(4..=12);
                let x = rng.gen_range(0..size as i64 - w);
                let y = rng.gen_range(0..size as i64 - h);
                let delta = rng.gen_range(25..=40) * if rng.gen_bool(0.5) { 1 } else { -1 };
                fill_rect(&mut buf, size, x, y, w, h, (bg + delta).clamp(0, 255) as u8);
            }
            let jitter = size as i64 / 16;
            let cx = size as i64 / 2 + rng.gen_range(-jitter..=jitter);
            let cy = size as i64 / 2 + rng.gen_range(-jitter..=jitter);
            plant(&mut buf, size, shape, cx, cy, &mut rng);
            out.push(CorpusImage {
                id: format!("{outlet}_{i:02}"),
                outlet: outlet.to_string(),
                image: RasterImage::gray(size, size, buf).expect("buffer matches size"),
            });
        }
    }
    out
}

/// Writes `<id>.png` files and `corpus.csv` (`image_id,path,outlet,issue`); returns the CSV path.
pub fn write_outlet_corpus(dir: impl AsRef<Path>, images: &[CorpusImage], issue: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("corpus.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["image_id", "path", "outlet", "issue"])?;
    for img in images {
        let name = format!("{}.png", img.id);
        img.image.save(dir.join(&name))?;
        w.write_record([img.id.as_str(), name.as_str(), img.outlet.as_str(), issue])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub videos: usize,
    pub candidates: usize,
    pub scenes_per_video: usize,
    pub frames_per_scene: usize,
    pub faces_per_frame: usize,
    pub width: u32,
    pub height: u32,
    /// Planted drop in depth position for female faces in Republican ads.
    pub effect: f64,
    pub noise_sd: f64,
    /// Share of faces that are female.
    pub female_share: f64,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        CampaignSpec {
            videos: 12,
            candidates: 6,
            scenes_per_video: 4,
            frames_per_scene: 3,
            faces_per_frame: 3,
            width: 96,
            height: 64,
            effect: 0.15,
            noise_sd: 0.1,
            female_share: 0.5,
        }
    }
}

/// Depth units written to disk: nearest plane and farthest plane.
pub const NEAR_DEPTH: f64 = 1000.0;
pub const FAR_DEPTH: f64 = 10000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFace {
    pub bbox: BBox,
    pub gender: Gender,
    pub party: Party,
    /// Planted depth position, before depth quantization.
    pub depth_position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub level: u8,
    pub faces: Vec<SyntheticFace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub covariates: Covariates,
    pub spec: CampaignSpec,
    pub scenes: Vec<SyntheticScene>,
}

/// Videos whose faces carry planted depth positions; party varies within
/// candidate so both the party term and candidate fixed effects are identified.
pub fn campaign_videos(seed: u64, spec: &CampaignSpec) -> Vec<SyntheticVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sd.max(0.0)).expect("valid sd");
    let slot = spec.width / spec.faces_per_frame.max(1) as u32;
    (0..spec.videos)
        .map(|v| {
            let covariates = Covariates {
                gender: None,
                party: None,
                candidate_id: Some(format!("cand{:02}", v % spec.candidates.max(1))),
                // each candidate runs in both years; visibility varies within candidate and year
                election_year: Some(if (v / spec.candidates.max(1)) % 2 == 0 { 2016 } else { 2020 }),
                candidate_visible: Some((v * 7) % 5 < 3),
            };
            let scenes = (0..spec.scenes_per_video)
                .map(|s| {
                    // alternate dark/bright backgrounds so every cut is far above the threshold
                    let level = if s % 2 == 0 { rng.gen_range(30..=60) } else { rng.gen_range(170..=200) };
                    let faces = (0..spec.faces_per_frame)
                        .map(|f| {
                            let gender = if rng.gen_bool(spec.female_share) { Gender::Female } else { Gender::Male };
                            let party = if rng.gen_bool(0.5) { Party::Rep } else { Party::Dem };
                            let mut p = 0.55 + noise.sample(&mut rng);
                            if party == Party::Rep {
                                p -= 0.05;
                            }
                            if gender == Gender::Female && party == Party::Rep {
                                p -= spec.effect;
                            }
                            let w = rng.gen_range(slot / 3..=slot * 3 / 4).max(1);
                            let h = rng.gen_range(spec.height / 4..=spec.height / 2).max(1);
                            let x = f as u32 * slot + rng.gen_range(1..=(slot - w).max(1));
                            let y = rng.gen_range(2..=(spec.height - h - 2).max(2));
                            SyntheticFace {
                                bbox: BBox { x, y, w, h },
                                gender,
                                party,
                                depth_position: p.clamp(0.02, 0.98),
                            }
                        })
                        .collect();
                    SyntheticScene { level, faces }
                })
                .collect();
            SyntheticVideo {
                video_id: format!("video{v:03}"),
                covariates,
                spec: spec.clone(),
                scenes,
            }
        })
        .collect()
}

impl SyntheticVideo {
    pub fn dims(&self) -> Dims {
        Dims::new(self.spec.width, self.spec.height)
    }

    /// Top row at the nearest plane, bottom row at the farthest, faces at
    /// `FAR - (FAR - NEAR) * depth_position`, background in between.
    pub fn depth_map(&self, scene: &SyntheticScene) -> DepthMap {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut data = vec![(NEAR_DEPTH + FAR_DEPTH) / 2.0; (w * h) as usize];
        for x in 0..w as usize {
            data[x] = NEAR_DEPTH;
            data[(h as usize - 1) * w as usize + x] = FAR_DEPTH;
        }
        for face in &scene.faces {
            let d = (FAR_DEPTH - (FAR_DEPTH - NEAR_DEPTH) * face.depth_position).round();
            for y in face.bbox.y..face.bbox.y + face.bbox.h {
                for x in face.bbox.x..face.bbox.x + face.bbox.w {
                    data[(y * w + x) as usize] = d;
                }
            }
        }
        DepthMap::new(w, h, data).expect("finite non-negative depths")
    }

    pub fn frame_image(&self, scene: &SyntheticScene, frame_in_scene: usize) -> RasterImage {
        let face_level = if scene.level > 127 { scene.level - 60 } else { scene.level + 60 };
        RasterImage::from_fn(self.spec.width, self.spec.height, |x, y| {
            let flicker = ((x + y) as usize + frame_in_scene) % 3 == 0;
            let base = if scene.faces.iter().any(|f| f.bbox.contains(x, y)) {
                face_level
            } else {
                scene.level
            };
            base.saturating_add(u8::from(flicker))
        })
        .expect("non-empty frame")
    }

    fn region(&self, face: &SyntheticFace) -> RawRegion {
        RawRegion {
            x: face.bbox.x as i64,
            y: face.bbox.y as i64,
            w: face.bbox.w as i64,
            h: face.bbox.h as i64,
            label: "face".into(),
            covariates: Some(Covariates {
                gender: Some(face.gender),
                party: Some(face.party),
                ..Covariates::default()
            }),
        }
    }

    /// Frame index of the first frame of each scene.
    pub fn keyframes(&self) -> Vec<u32> {
        (0..self.scenes.len())
            .map(|s| (s * self.spec.frames_per_scene) as u32)
            .collect()
    }

    /// In-memory measurement input for the keyframes, skipping image decoding.
    pub fn keyframe_input(&self) -> VideoInput {
        let frames = self
            .scenes
            .iter()
            .zip(self.keyframes())
            .map(|(scene, frame_id)| AnnotatedFrame {
                frame_id,
                dims: self.dims(),
                faces: scene
                    .faces
                    .iter()
                    .map(|f| AnnotatedRegion {
                        bbox: f.bbox,
                        label: "face".into(),
                        covariates: Covariates {
                            gender: Some(f.gender),
                            party: Some(f.party),
                            ..Covariates::default()
                        },
                    })
                    .collect(),
                depth: Some(self.depth_map(scene)),
            })
            .collect();
        VideoInput {
            video_id: self.video_id.clone(),
            covariates: self.covariates.clone(),
            frames,
        }
    }

    /// Writes the video directory: `video.json`, frames, per-frame annotations and depth maps.
    pub fn write(&self, root: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = root.as_ref().join(&self.video_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let meta = dir.join("video.json");
        fs::write(&meta, serde_json::to_string_pretty(&self.covariates)?).map_err(|e| Error::io(&meta, e))?;
        let mut index = 0u32;
        for scene in &self.scenes {
            let depth = self.depth_map(scene);
            for k in 0..self.spec.frames_per_scene {
                let name = frame_file_name(index);
                let path = dir.join(&name);
                self.frame_image(scene, k).save(&path)?;
                let raw = RawAnnotations {
                    image: name.clone(),
                    regions: scene.faces.iter().map(|f| self.region(f)).collect(),
                };
                let ann = path.with_extension("json");
                fs::write(&ann, serde_json::to_string_pretty(&raw)?).map_err(|e| Error::io(&ann, e))?;
                depth.save(dir.join(name.replace(".png", ".depth.png")))?;
                index += 1;
            }
        }
        Ok(dir)
    }
}

/// Writes every video under `root`.
pub fn write_campaign_videos(root: impl AsRef<Path>, videos: &[SyntheticVideo]) -> Result<()> {
    for v in videos {
        v.write(root.as_ref())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::build_observation_table;

    #[test]
    fn corpus_is_seeded() {
        let spec = OutletCorpusSpec {
            images_per_outlet: 2,
            ..Default::default()
        };
        let a = outlet_corpus(5, &spec);
        assert_eq!(a, outlet_corpus(5, &spec));
        assert_ne!(a, outlet_corpus(6, &spec));
        assert_eq!(a.len(), 4);
        assert_eq!(a[0].outlet, "left");
        assert_eq!(a[3].outlet, "right");
    }

    #[test]
    fn keyframe_depths_reproduce_planted_positions() {
        let videos = campaign_videos(1, &CampaignSpec::default());
        let inputs: Vec<VideoInput> = videos.iter().map(SyntheticVideo::keyframe_input).collect();
        let table = build_observation_table(&inputs).unwrap();
        let planted: Vec<f64> = videos
            .iter()
            .flat_map(|v| v.scenes.iter().flat_map(|s| s.faces.iter().map(|f| f.depth_position)))
            .collect();
        assert_eq!(table.rows.len(), planted.len());
        for (row, p) in table.rows.iter().zip(planted) {
            assert!((row.depth_position.unwrap() - p).abs() < 1e-3);
        }
    }
}
