//! Frame sequences, scene keyframes and per-face prominence observations.
//!
//! Videos are ingested as directories of numbered frames:
//!
//! ```text
//! <video_id>/
//!   video.json               per-video covariates
//!   frame_0000.png           frames, zero-padded index
//!   frame_0000.json          face annotations (optional)
//!   frame_0000.depth.png     depth map (optional; faces without one are excluded from the depth outcome)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{
    depth_path_for, image_dims, load_annotations_for, load_depth_map, load_gray, AnnotatedRegion, BBox,
    Covariates, DepthMap, Dims, Gender, Party, RasterImage, Region,
};
use crate::salience::{depth_salience, region_salience, Aggregation, SalienceMap};

pub const DEFAULT_SCENE_TAU: f64 = 30.0;
pub const FRAME_INDEX_WIDTH: usize = 4;

/// `frame_0007.png` for index 7.
pub fn frame_file_name(index: u32) -> String {
    format!("frame_{index:0width$}.png", width = FRAME_INDEX_WIDTH)
}

/// Index encoded in a `frame_<digits>.png` name.
pub fn parse_frame_index(name: &str) -> Option<u32> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u32,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub video_id: String,
    pub frames: Vec<Frame>,
    pub covariates: Covariates,
}

impl FrameSequence {
    pub fn new(video_id: impl Into<String>, frames: Vec<Frame>, covariates: Covariates) -> Result<Self> {
        if frames.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::InvalidInput("frame indices must be strictly increasing".into()));
        }
        Ok(FrameSequence {
            video_id: video_id.into(),
            frames,
            covariates,
        })
    }

    /// Reads a video directory; the directory name is the video id.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let video_id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::InvalidInput(format!("bad video directory {}", dir.display())))?
            .to_string();
        let meta = dir.join("video.json");
        let covariates = if meta.exists() {
            let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
            serde_json::from_str(&text).map_err(|e| Error::CovariateSchema(format!("{}: {e}", meta.display())))?
        } else {
            Covariates::default()
        };
        let mut frames = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            if let Some(index) = entry.file_name().to_str().and_then(parse_frame_index) {
                frames.push(Frame {
                    index,
                    path: entry.path(),
                });
            }
        }
        frames.sort_by_key(|f| f.index);
        if frames.is_empty() {
            return Err(Error::InvalidInput(format!("no frame_*.png files in {}", dir.display())));
        }
        FrameSequence::new(video_id, frames, covariates)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub start: u32,
    pub end: u32,
    pub keyframe: u32,
}

/// Mean absolute gray-level difference between two equally sized frames.
pub fn mean_abs_difference(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: (a.width(), a.height()),
            found: (b.width(), b.height()),
        });
    }
    let total: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| u64::from(p.abs_diff(q)))
        .sum();
    Ok(total as f64 / a.data().len() as f64)
}

/// Scene cuts over `(index, frame)` pairs; frames are converted to gray.
/// A difference strictly above `tau` starts a new scene, whose first frame is its keyframe.
pub fn detect_scenes_in<I>(frames: I, tau: f64) -> Result<Vec<Scene>>
where
    I: IntoIterator<Item = Result<(u32, RasterImage)>>,
{
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!("scene threshold must be >= 0, got {tau}")));
    }
    let mut scenes: Vec<Scene> = Vec::new();
    let mut previous: Option<(u32, RasterImage)> = None;
    for item in frames {
        let (index, frame) = item?;
        let frame = frame.to_grayscale();
        match &previous {
            None => scenes.push(Scene {
                start: index,
                end: index,
                keyframe: index,
            }),
            Some((prev_index, prev)) => {
                if index <= *prev_index {
                    return Err(Error::InvalidInput("frame indices must be strictly increasing".into()));
                }
                if mean_abs_difference(prev, &frame)? > tau {
                    scenes.push(Scene {
                        start: index,
                        end: index,
                        keyframe: index,
                    });
                } else {
                    scenes.last_mut().expect("a scene is open").end = index;
                }
            }
        }
        previous = Some((index, frame));
    }
    if scenes.is_empty() {
        return Err(Error::InvalidInput("scene detection needs at least one frame".into()));
    }
    Ok(scenes)
}

/// Streams the sequence from disk, holding two frames at a time.
pub fn detect_scenes(frames: &FrameSequence, tau: f64) -> Result<Vec<Scene>> {
    detect_scenes_in(
        frames
            .frames
            .iter()
            .map(|f| load_gray(&f.path).map(|img| (f.index, img))),
        tau,
    )
}

fn clip_nonempty(bbox: &BBox, dims: Dims) -> Result<BBox> {
    bbox.clipped_to(dims).ok_or(Error::EmptyRegion)
}

/// Mean depth salience over the clipped box, using a precomputed frame map.
pub fn depth_position_in(map: &SalienceMap, bbox: &BBox) -> Result<f64> {
    let clipped = clip_nonempty(bbox, map.dims())?;
    region_salience(map, &Region::Box(clipped), Aggregation::Mean)
}

/// 1 = nearest plane of this frame, 0 = farthest.
pub fn face_depth_position(depth: &DepthMap, bbox: &BBox) -> Result<f64> {
    depth_position_in(&depth_salience(depth), bbox)
}

/// Clipped box area over frame area.
pub fn face_relative_size(bbox: &BBox, dims: Dims) -> Result<f64> {
    if dims.area() == 0 {
        return Err(Error::ZeroDimension {
            width: dims.width,
            height: dims.height,
        });
    }
    let clipped = clip_nonempty(bbox, dims)?;
    Ok(clipped.area() as f64 / dims.area() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub video_id: String,
    pub frame_id: u32,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub gender: Gender,
    pub party: Party,
    pub candidate_id: String,
    pub election_year: i32,
    pub candidate_visible: bool,
    pub depth_position: Option<f64>,
    pub relative_size: Option<f64>,
}

impl FaceObservation {
    pub fn bbox(&self) -> BBox {
        BBox {
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
        }
    }
}

/// Faces lacking an outcome, counted per outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusions {
    pub depth_position: usize,
    pub relative_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationTable {
    pub rows: Vec<FaceObservation>,
    pub exclusions: Exclusions,
}

impl ObservationTable {
    /// Rows with a depth outcome; equals faces minus depth exclusions.
    pub fn depth_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.depth_position.is_some()).count()
    }

    pub fn size_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.relative_size.is_some()).count()
    }

    pub fn extend(&mut self, other: ObservationTable) {
        self.rows.extend(other.rows);
        self.exclusions.depth_position += other.exclusions.depth_position;
        self.exclusions.relative_size += other.exclusions.relative_size;
    }
}

/// One annotated frame ready for measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub frame_id: u32,
    pub dims: Dims,
    pub faces: Vec<AnnotatedRegion>,
    pub depth: Option<DepthMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoInput {
    pub video_id: String,
    pub covariates: Covariates,
    pub frames: Vec<AnnotatedFrame>,
}

fn complete(c: &Covariates, video: &str, frame: u32) -> Result<(Gender, Party, String, i32, bool)> {
    let missing = |field: &str| {
        Error::CovariateSchema(format!("video {video} frame {frame}: missing covariate `{field}`"))
    };
    Ok((
        c.gender.ok_or_else(|| missing("gender"))?,
        c.party.ok_or_else(|| missing("party"))?,
        c.candidate_id.clone().ok_or_else(|| missing("candidate_id"))?,
        c.election_year.ok_or_else(|| missing("election_year"))?,
        c.candidate_visible.ok_or_else(|| missing("candidate_visible"))?,
    ))
}

/// One row per (frame, face) in video, frame and box order. Faces on frames
/// without a depth map keep `depth_position = None` and are counted as exclusions.
pub fn build_observation_table(videos: &[VideoInput]) -> Result<ObservationTable> {
    let mut table = ObservationTable::default();
    for video in videos {
        for frame in &video.frames {
            if let Some(depth) = &frame.depth {
                if depth.dims() != frame.dims {
                    return Err(Error::DimensionMismatch {
                        expected: (frame.dims.width, frame.dims.height),
                        found: (depth.width(), depth.height()),
                    });
                }
            }
            let map = frame.depth.as_ref().map(depth_salience);
            for face in &frame.faces {
                let covariates = face.covariates.or(&video.covariates);
                let (gender, party, candidate_id, election_year, candidate_visible) =
                    complete(&covariates, &video.video_id, frame.frame_id)?;
                let depth_position = map.as_ref().map(|m| depth_position_in(m, &face.bbox)).transpose()?;
                let relative_size = Some(face_relative_size(&face.bbox, frame.dims)?);
                if depth_position.is_none() {
                    table.exclusions.depth_position += 1;
                }
                table.rows.push(FaceObservation {
                    video_id: video.video_id.clone(),
                    frame_id: frame.frame_id,
                    x: face.bbox.x,
                    y: face.bbox.y,
                    w: face.bbox.w,
                    h: face.bbox.h,
                    gender,
                    party,
                    candidate_id,
                    election_year,
                    candidate_visible,
                    depth_position,
                    relative_size,
                });
            }
        }
    }
    Ok(table)
}

/// Which frames of a video get measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FrameSelection {
    /// Scene keyframes under the given threshold.
    Keyframes { tau: f64 },
    /// Every frame that carries an annotation file.
    AllAnnotated,
}

impl Default for FrameSelection {
    fn default() -> Self {
        FrameSelection::Keyframes { tau: DEFAULT_SCENE_TAU }
    }
}

/// Loads the measured frames of one video directory, with their annotations and depth maps.
pub fn load_video_input(seq: &FrameSequence, selection: FrameSelection) -> Result<(VideoInput, Vec<Scene>)> {
    let (selected, scenes): (Vec<&Frame>, Vec<Scene>) = match selection {
        FrameSelection::Keyframes { tau } => {
            let scenes = detect_scenes(seq, tau)?;
            let keys: Vec<&Frame> = scenes
                .iter()
                .filter_map(|s| seq.frames.iter().find(|f| f.index == s.keyframe))
                .collect();
            (keys, scenes)
        }
        FrameSelection::AllAnnotated => (seq.frames.iter().collect(), Vec::new()),
    };
    let mut frames = Vec::new();
    for frame in selected {
        let annotation = frame.path.with_extension("json");
        if !annotation.exists() {
            continue;
        }
        let dims = image_dims(&frame.path)?;
        let set = load_annotations_for(&annotation, dims)?;
        let depth = depth_path_for(&frame.path)
            .map(|p| load_depth_map(p, dims))
            .transpose()?;
        frames.push(AnnotatedFrame {
            frame_id: frame.index,
            dims,
            faces: set.regions,
            depth,
        });
    }
    Ok((
        VideoInput {
            video_id: seq.video_id.clone(),
            covariates: seq.covariates.clone(),
            frames,
        },
        scenes,
    ))
}

pub const OBSERVATION_HEADER: [&str; 13] = [
    "video_id",
    "frame_id",
    "x",
    "y",
    "w",
    "h",
    "gender",
    "party",
    "candidate_id",
    "election_year",
    "candidate_visible",
    "depth_position",
    "relative_size",
];

fn opt_to_string(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_observations_csv(out: impl Write, rows: &[FaceObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(OBSERVATION_HEADER)?;
    for r in rows {
        w.write_record([
            r.video_id.clone(),
            r.frame_id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.w.to_string(),
            r.h.to_string(),
            r.gender.as_str().to_string(),
            r.party.as_str().to_string(),
            r.candidate_id.clone(),
            r.election_year.to_string(),
            r.candidate_visible.to_string(),
            opt_to_string(r.depth_position),
            opt_to_string(r.relative_size),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<observation csv>", e))?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(value: &str, column: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidInput(format!("row {line}: cannot parse `{value}` in column {column}")))
}

fn parse_unit(value: &str, column: &str, line: usize) -> Result<Option<f64>> {
    if value.is_empty() {
        return Ok(None);
    }
    let v: f64 = parse_field(value, column, line)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidInput(format!("row {line}: {column} = {v} outside [0, 1]")));
    }
    Ok(Some(v))
}

pub fn read_observations_csv(input: impl Read) -> Result<Vec<FaceObservation>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let mut pos = [0usize; 13];
    for (k, name) in OBSERVATION_HEADER.iter().enumerate() {
        pos[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut rows = Vec::new();
    for (n, record) in r.records().enumerate() {
        let record = record?;
        let line = n + 2;
        let f = |k: usize| record.get(pos[k]).unwrap_or("");
        let gender = match f(6) {
            "female" => Gender::Female,
            "male" => Gender::Male,
            other => return Err(Error::CovariateSchema(format!("row {line}: gender `{other}`"))),
        };
        let party = match f(7) {
            "dem" => Party::Dem,
            "rep" => Party::Rep,
            other => return Err(Error::CovariateSchema(format!("row {line}: party `{other}`"))),
        };
        rows.push(FaceObservation {
            video_id: f(0).to_string(),
            frame_id: parse_field(f(1), "frame_id", line)?,
            x: parse_field(f(2), "x", line)?,
            y: parse_field(f(3), "y", line)?,
            w: parse_field(f(4), "w", line)?,
            h: parse_field(f(5), "h", line)?,
            gender,
            party,
            candidate_id: f(8).to_string(),
            election_year: parse_field(f(9), "election_year", line)?,
            candidate_visible: parse_field(f(10), "candidate_visible", line)?,
            depth_position: parse_unit(f(11), "depth_position", line)?,
            relative_size: parse_unit(f(12), "relative_size", line)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(v: u8) -> RasterImage {
        RasterImage::from_fn(8, 6, |_, _| v).unwrap()
    }

    fn frames(values: &[u8]) -> Vec<Result<(u32, RasterImage)>> {
        values.iter().enumerate().map(|(i, &v)| Ok((i as u32, uniform(v)))).collect()
    }

    fn scene(start: u32, end: u32) -> Scene {
        Scene {
            start,
            end,
            keyframe: start,
        }
    }

    #[test]
    fn identical_frames_form_one_scene() {
        assert_eq!(detect_scenes_in(frames(&[90; 10]), 0.5).unwrap(), vec![scene(0, 9)]);
    }

    #[test]
    fn alternating_frames_each_start_a_scene() {
        let v: Vec<u8> = (0..6).map(|i| if i % 2 == 0 { 0 } else { 255 }).collect();
        let s = detect_scenes_in(frames(&v), 10.0).unwrap();
        assert_eq!(s, (0..6).map(|i| scene(i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn single_cut_is_found() {
        let v: Vec<u8> = (0..30).map(|i| if i < 17 { 40 } else { 200 }).collect();
        assert_eq!(detect_scenes_in(frames(&v), 50.0).unwrap(), vec![scene(0, 16), scene(17, 29)]);
        // shifting every frame by the same amount changes no difference
        let shifted: Vec<u8> = v.iter().map(|x| x + 20).collect();
        assert_eq!(
            detect_scenes_in(frames(&shifted), 50.0).unwrap(),
            detect_scenes_in(frames(&v), 50.0).unwrap()
        );
    }

    #[test]
    fn scene_errors() {
        let mixed = vec![Ok((0, uniform(1))), Ok((1, RasterImage::from_fn(4, 4, |_, _| 1).unwrap()))];
        assert!(matches!(detect_scenes_in(mixed, 1.0), Err(Error::DimensionMismatch { .. })));
        assert!(detect_scenes_in(frames(&[]), 1.0).is_err());
        assert!(detect_scenes_in(frames(&[1, 2]), -1.0).is_err());
    }

    fn two_plane_depth() -> DepthMap {
        // left half near (depth 1), right half far (depth 9)
        DepthMap::new(10, 4, (0..40).map(|i| if i % 10 < 5 { 1.0 } else { 9.0 }).collect()).unwrap()
    }

    #[test]
    fn depth_position_examples() {
        let d = two_plane_depth();
        let b = |x, w| BBox { x, y: 0, w, h: 4 };
        assert_eq!(face_depth_position(&d, &b(0, 5)).unwrap(), 1.0);
        assert_eq!(face_depth_position(&d, &b(5, 5)).unwrap(), 0.0);
        assert_eq!(face_depth_position(&d, &b(3, 4)).unwrap(), 0.5);
        assert!(matches!(
            face_depth_position(&d, &BBox { x: 20, y: 0, w: 3, h: 3 }),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn relative_size_examples() {
        let dims = Dims::new(100, 100);
        assert_eq!(face_relative_size(&BBox { x: 0, y: 0, w: 100, h: 100 }, dims).unwrap(), 1.0);
        assert_eq!(face_relative_size(&BBox { x: 5, y: 5, w: 10, h: 10 }, dims).unwrap(), 0.01);
        let half_out = BBox { x: 90, y: 0, w: 20, h: 20 };
        assert_eq!(face_relative_size(&half_out, dims).unwrap(), 200.0 / 10_000.0);
    }

    fn covariates() -> Covariates {
        Covariates {
            gender: Some(Gender::Male),
            party: Some(Party::Dem),
            candidate_id: Some("c1".into()),
            election_year: Some(2012),
            candidate_visible: Some(true),
        }
    }

    fn face(x: u32, w: u32, gender: Option<Gender>) -> AnnotatedRegion {
        AnnotatedRegion {
            bbox: BBox { x, y: 0, w, h: 4 },
            label: "face".into(),
            covariates: Covariates {
                gender,
                ..Covariates::default()
            },
        }
    }

    #[test]
    fn observation_table_rows_and_exclusions() {
        let video = VideoInput {
            video_id: "v1".into(),
            covariates: covariates(),
            frames: vec![
                AnnotatedFrame {
                    frame_id: 0,
                    dims: Dims::new(10, 4),
                    faces: vec![face(0, 5, Some(Gender::Female)), face(5, 5, None)],
                    depth: Some(two_plane_depth()),
                },
                AnnotatedFrame {
                    frame_id: 3,
                    dims: Dims::new(10, 4),
                    faces: vec![face(3, 4, None)],
                    depth: None,
                },
                AnnotatedFrame {
                    frame_id: 5,
                    dims: Dims::new(10, 4),
                    faces: vec![face(3, 4, None)],
                    depth: Some(two_plane_depth()),
                },
            ],
        };
        let table = build_observation_table(&[video]).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.exclusions.depth_position, 1);
        assert_eq!(table.depth_rows(), table.rows.len() - table.exclusions.depth_position);
        let got: Vec<(u32, Option<f64>, Option<f64>, Gender)> = table
            .rows
            .iter()
            .map(|r| (r.frame_id, r.depth_position, r.relative_size, r.gender))
            .collect();
        assert_eq!(
            got,
            vec![
                (0, Some(1.0), Some(0.5), Gender::Female),
                (0, Some(0.0), Some(0.5), Gender::Male),
                (3, None, Some(0.4), Gender::Male),
                (5, Some(0.5), Some(0.4), Gender::Male),
            ]
        );
    }

    #[test]
    fn incomplete_covariates_are_rejected() {
        let video = VideoInput {
            video_id: "v".into(),
            covariates: Covariates {
                party: None,
                ..covariates()
            },
            frames: vec![AnnotatedFrame {
                frame_id: 0,
                dims: Dims::new(10, 4),
                faces: vec![face(0, 2, None)],
                depth: None,
            }],
        };
        assert!(matches!(build_observation_table(&[video]), Err(Error::CovariateSchema(_))));
    }

    #[test]
    fn frame_names() {
        assert_eq!(frame_file_name(7), "frame_0007.png");
        assert_eq!(parse_frame_index("frame_0123.png"), Some(123));
        assert_eq!(parse_frame_index("frame_.png"), None);
        assert_eq!(parse_frame_index("frame_12.depth.png"), None);
        assert_eq!(parse_frame_index("other_1.png"), None);
    }

    #[test]
    fn observation_csv_round_trip() {
        let row = FaceObservation {
            video_id: "v1".into(),
            frame_id: 4,
            x: 1,
            y: 2,
            w: 3,
            h: 4,
            gender: Gender::Female,
            party: Party::Rep,
            candidate_id: "c9".into(),
            election_year: 2016,
            candidate_visible: false,
            depth_position: None,
            relative_size: Some(0.25),
        };
        let mut buf = Vec::new();
        write_observations_csv(&mut buf, std::slice::from_ref(&row)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), OBSERVATION_HEADER.join(","));
        assert_eq!(read_observations_csv(&buf[..]).unwrap(), vec![row]);
    }
}
