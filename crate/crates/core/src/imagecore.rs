//! Raster, depth and annotation inputs shared by every downstream module.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netpbm;

/// Width and height of an image in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: u32,
    pub height: u32,
}

impl Dims {
    pub fn new(width: u32, height: u32) -> Self {
        Dims { width, height }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }
}

/// 8-bit raster with one (gray) or three (RGB) interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::InvalidInput(format!(
                "pixel buffer has {} values, expected {expected}",
                data.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    /// Single-channel image filled from `f(x, y)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::gray(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Sample of channel `c` at `(x, y)`.
    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        let idx = (y as usize * self.width as usize + x as usize) * self.channels as usize;
        self.data[idx + c as usize]
    }

    /// Luminance with Rec.601 weights, rounded half up. Gray input is returned unchanged.
    pub fn to_grayscale(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| {
                // integer arithmetic keeps (v, v, v) -> v exact
                let weighted = 299 * u32::from(px[0]) + 587 * u32::from(px[1]) + 114 * u32::from(px[2]);
                ((weighted + 500) / 1000) as u8
            })
            .collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Writes the image; format follows the extension (`.png`, `.bmp`, `.pgm`/`.ppm`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ext = extension(path);
        match ext.as_str() {
            "pgm" | "ppm" | "pnm" => {
                let samples: Vec<u16> = self.data.iter().map(|&v| u16::from(v)).collect();
                let mut buf = Vec::new();
                netpbm::encode(self.width, self.height, self.channels, 255, &samples, &mut buf)
                    .map_err(|e| Error::io(path, e))?;
                fs::write(path, buf).map_err(|e| Error::io(path, e))
            }
            "png" | "bmp" => {
                let color = if self.channels == 1 {
                    image::ExtendedColorType::L8
                } else {
                    image::ExtendedColorType::Rgb8
                };
                let format = if ext == "png" { ImageFormat::Png } else { ImageFormat::Bmp };
                image::save_buffer_with_format(path, &self.data, self.width, self.height, color, format)?;
                Ok(())
            }
            other => Err(Error::UnsupportedFormat(format!("cannot write `.{other}`"))),
        }
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn decode_with_image_crate(bytes: &[u8], path: &Path) -> Result<DynamicImage> {
    let format = image::guess_format(bytes)
        .map_err(|_| Error::UnsupportedFormat(path.display().to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Bmp) {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {format:?}",
            path.display()
        )));
    }
    image::load_from_memory_with_format(bytes, format).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn rescale_16(v: u16) -> u8 {
    ((u32::from(v) * 255 + 32767) / 65535) as u8
}

/// Loads a PNG, BMP or PGM/PPM file. 16-bit samples are rescaled to 0..=255.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if netpbm::is_netpbm(&bytes) {
        let pbm = netpbm::decode(&bytes, path)?;
        let data = if pbm.maxval > 255 {
            pbm.samples
                .iter()
                .map(|&s| ((u32::from(s) * 255 + u32::from(pbm.maxval) / 2) / u32::from(pbm.maxval)) as u8)
                .collect()
        } else {
            pbm.samples.iter().map(|&s| s as u8).collect()
        };
        return RasterImage::new(pbm.width, pbm.height, pbm.channels, data);
    }
    let decoded = decode_with_image_crate(&bytes, path)?;
    let (width, height) = (decoded.width(), decoded.height());
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension { width, height });
    }
    match decoded {
        DynamicImage::ImageLuma8(buf) => RasterImage::gray(width, height, buf.into_raw()),
        DynamicImage::ImageLumaA8(_) => {
            RasterImage::gray(width, height, decoded.to_luma8().into_raw())
        }
        DynamicImage::ImageLuma16(buf) => RasterImage::gray(
            width,
            height,
            buf.into_raw().into_iter().map(rescale_16).collect(),
        ),
        DynamicImage::ImageLumaA16(_) => RasterImage::gray(
            width,
            height,
            decoded.to_luma16().into_raw().into_iter().map(rescale_16).collect(),
        ),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => RasterImage::new(
            width,
            height,
            3,
            decoded.to_rgb16().into_raw().into_iter().map(rescale_16).collect(),
        ),
        _ => RasterImage::new(width, height, 3, decoded.to_rgb8().into_raw()),
    }
}

/// Convenience: read and reduce to one channel.
pub fn load_gray(path: impl AsRef<Path>) -> Result<RasterImage> {
    load_image(path).map(|img| img.to_grayscale())
}

/// Pixel dimensions of an image file without decoding the raster.
pub fn image_dims(path: impl AsRef<Path>) -> Result<Dims> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if netpbm::is_netpbm(&bytes) {
        let pbm = netpbm::decode(&bytes, path)?;
        return Ok(Dims::new(pbm.width, pbm.height));
    }
    let img = decode_with_image_crate(&bytes, path)?;
    Ok(Dims::new(img.width(), img.height()))
}

/// Per-pixel distance from the camera; larger values are farther away.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
    source_scale: Option<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "depth buffer has {} values, expected {}",
                data.len(),
                width as usize * height as usize
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("invalid depth value {bad}")));
        }
        Ok(DepthMap {
            width,
            height,
            data,
            source_scale: None,
        })
    }

    pub fn with_source_scale(mut self, scale: f64) -> Self {
        self.source_scale = Some(scale);
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn source_scale(&self) -> Option<f64> {
        self.source_scale
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Writes a 16-bit grayscale PNG or PGM; values are rounded and clamped to `u16`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let samples: Vec<u16> = self
            .data
            .iter()
            .map(|&v| v.round().clamp(0.0, f64::from(u16::MAX)) as u16)
            .collect();
        match extension(path).as_str() {
            "pgm" => {
                let maxval = samples.iter().copied().max().unwrap_or(0).max(256);
                let mut buf = Vec::new();
                netpbm::encode(self.width, self.height, 1, maxval, &samples, &mut buf)
                    .map_err(|e| Error::io(path, e))?;
                fs::write(path, buf).map_err(|e| Error::io(path, e))
            }
            "png" => {
                let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
                    self.width,
                    self.height,
                    samples,
                )
                .expect("buffer length matches dimensions");
                buf.save_with_format(path, ImageFormat::Png)?;
                Ok(())
            }
            other => Err(Error::UnsupportedFormat(format!(
                "depth maps are written as .png or .pgm, not `.{other}`"
            ))),
        }
    }
}

/// Loads a grayscale PNG (8 or 16 bit) or PGM depth raster whose size must equal `expected`.
pub fn load_depth_map(path: impl AsRef<Path>, expected: Dims) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (dims, values): (Dims, Vec<f64>) = if netpbm::is_netpbm(&bytes) {
        let pbm = netpbm::decode(&bytes, path)?;
        if pbm.channels != 1 {
            return Err(Error::NotGrayscale(pbm.channels));
        }
        (
            Dims::new(pbm.width, pbm.height),
            pbm.samples.iter().map(|&s| f64::from(s)).collect(),
        )
    } else {
        let img = decode_with_image_crate(&bytes, path)?;
        let dims = Dims::new(img.width(), img.height());
        let values = match img {
            DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
            DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
            other => return Err(Error::NotGrayscale(other.color().channel_count())),
        };
        (dims, values)
    };
    if dims != expected {
        return Err(Error::DimensionMismatch {
            expected: (expected.width, expected.height),
            found: (dims.width, dims.height),
        });
    }
    DepthMap::new(dims.width, dims.height, values)
}

/// Sidecar depth file for an image: `<stem>.depth.png` or `<stem>.depth.pgm`.
pub fn depth_path_for(image_path: &Path) -> Option<PathBuf> {
    let stem = image_path.file_stem()?.to_str()?;
    let dir = image_path.parent().unwrap_or_else(|| Path::new(""));
    ["png", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.depth.{ext}")))
        .find(|p| p.exists())
}

/// Axis-aligned pixel rectangle that lies inside its image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    /// Intersects a possibly out-of-bounds box with the image; `None` if nothing remains.
    pub fn clip(x: i64, y: i64, w: i64, h: i64, dims: Dims) -> Option<BBox> {
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = x.saturating_add(w).min(i64::from(dims.width));
        let y1 = y.saturating_add(h).min(i64::from(dims.height));
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0) as u32,
            h: (y1 - y0) as u32,
        })
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn clipped_to(&self, dims: Dims) -> Option<BBox> {
        BBox::clip(
            i64::from(self.x),
            i64::from(self.y),
            i64::from(self.w),
            i64::from(self.h),
            dims,
        )
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x - self.x < self.w && y - self.y < self.h
    }
}

/// Boolean pixel mask with the dimensions of its image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: Dims,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::InvalidInput(format!(
                "mask has {} entries, expected {}",
                data.len(),
                dims.len()
            )));
        }
        Ok(Mask { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                data.push(f(x, y));
            }
        }
        Mask { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.dims.width as usize + x as usize]
    }
}

/// An object's footprint: a rectangle or an arbitrary mask.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Box(BBox),
    Mask(Mask),
}

impl From<BBox> for Region {
    fn from(b: BBox) -> Self {
        Region::Box(b)
    }
}

impl From<Mask> for Region {
    fn from(m: Mask) -> Self {
        Region::Mask(m)
    }
}

impl Region {
    /// Pixel coordinates inside the image, in raster order. Errors when nothing is left.
    pub fn pixels(&self, dims: Dims) -> Result<Vec<(u32, u32)>> {
        let pixels: Vec<(u32, u32)> = match self {
            Region::Box(b) => match b.clipped_to(dims) {
                Some(c) => (c.y..c.y + c.h)
                    .flat_map(|y| (c.x..c.x + c.w).map(move |x| (x, y)))
                    .collect(),
                None => Vec::new(),
            },
            Region::Mask(m) => {
                if m.dims != dims {
                    return Err(Error::DimensionMismatch {
                        expected: (dims.width, dims.height),
                        found: (m.dims.width, m.dims.height),
                    });
                }
                (0..dims.height)
                    .flat_map(|y| (0..dims.width).map(move |x| (x, y)))
                    .filter(|&(x, y)| m.get(x, y))
                    .collect()
            }
        };
        if pixels.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(pixels)
    }

    pub fn pixel_count(&self, dims: Dims) -> Result<u64> {
        match self {
            Region::Box(b) => b.clipped_to(dims).map(|c| c.area()).ok_or(Error::EmptyRegion),
            Region::Mask(_) => self.pixels(dims).map(|p| p.len() as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Dem,
    Rep,
}

impl Party {
    pub fn as_str(&self) -> &'static str {
        match self {
            Party::Dem => "dem",
            Party::Rep => "rep",
        }
    }
}

/// Optional per-region covariates; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Covariates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party: Option<Party>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub election_year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_visible: Option<bool>,
}

impl Covariates {
    /// Fields set in `self` win; the rest are taken from `fallback`.
    pub fn or(&self, fallback: &Covariates) -> Covariates {
        Covariates {
            gender: self.gender.or(fallback.gender),
            party: self.party.or(fallback.party),
            candidate_id: self
                .candidate_id
                .clone()
                .or_else(|| fallback.candidate_id.clone()),
            election_year: self.election_year.or(fallback.election_year),
            candidate_visible: self.candidate_visible.or(fallback.candidate_visible),
        }
    }
}

/// Sidecar region as stored on disk, before clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRegion {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Covariates>,
}

/// Annotation sidecar file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotations {
    pub image: String,
    pub regions: Vec<RawRegion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRegion {
    pub bbox: BBox,
    pub label: String,
    pub covariates: Covariates,
}

/// Clipped regions of one image plus the number of records dropped as empty.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub image: String,
    pub dims: Dims,
    pub regions: Vec<AnnotatedRegion>,
    pub rejected: usize,
}

impl AnnotationSet {
    pub fn from_raw(raw: RawAnnotations, dims: Dims) -> Result<Self> {
        let mut regions = Vec::with_capacity(raw.regions.len());
        let mut rejected = 0;
        for (index, r) in raw.regions.into_iter().enumerate() {
            if r.w < 0 || r.h < 0 {
                return Err(Error::NegativeExtent {
                    index,
                    w: r.w,
                    h: r.h,
                });
            }
            match BBox::clip(r.x, r.y, r.w, r.h, dims) {
                Some(bbox) => regions.push(AnnotatedRegion {
                    bbox,
                    label: r.label,
                    covariates: r.covariates.unwrap_or_default(),
                }),
                None => rejected += 1,
            }
        }
        if rejected > 0 {
            log::warn!("{}: rejected {rejected} empty region(s) after clipping", raw.image);
        }
        Ok(AnnotationSet {
            image: raw.image,
            dims,
            regions,
            rejected,
        })
    }
}

pub fn parse_annotations(json: &str, dims: Dims) -> Result<AnnotationSet> {
    let raw: RawAnnotations = serde_json::from_str(json).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("unknown field") {
            Error::CovariateSchema(msg)
        } else {
            Error::MalformedAnnotation(msg)
        }
    })?;
    AnnotationSet::from_raw(raw, dims)
}

/// Reads a sidecar and clips against `dims`.
pub fn load_annotations_for(path: impl AsRef<Path>, dims: Dims) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, dims)
}

/// Reads a sidecar; the referenced image (relative to the sidecar) supplies the clip bounds.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawAnnotations = serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("unknown field") {
            Error::CovariateSchema(msg)
        } else {
            Error::MalformedAnnotation(msg)
        }
    })?;
    let image_path = path.parent().unwrap_or_else(|| Path::new("")).join(&raw.image);
    let dims = image_dims(&image_path)?;
    AnnotationSet::from_raw(raw, dims)
}

/// Groups annotation sets by image name, preserving deterministic order.
pub fn index_by_image(sets: Vec<AnnotationSet>) -> BTreeMap<String, AnnotationSet> {
    sets.into_iter().map(|s| (s.image.clone(), s)).collect()
}
