//! Keypoint detection (FAST-9), binary descriptors (BRIEF-256) and per-keypoint
//! salience weights.

use std::collections::HashSet;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{Dims, RasterImage};
use crate::salience::SalienceMap;

/// Distance a keypoint must keep from every border so its 31x31 patch fits.
pub const PATCH_MARGIN: u32 = 16;
pub const DESCRIPTOR_BITS: usize = 256;
const PATCH_HALF: i32 = 15;
const BRIEF_SIGMA: f64 = 6.5;

/// Bresenham circle of radius 3, clockwise from twelve o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];
const FAST_ARC: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: u32,
    pub y: u32,
    pub response: f64,
}

/// `x >= margin` and `width - x >= margin`, likewise for `y`.
pub fn within_margin(x: u32, y: u32, dims: Dims, margin: u32) -> bool {
    x >= margin && y >= margin && x + margin <= dims.width && y + margin <= dims.height
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastConfig {
    /// Intensity delta a circle pixel must exceed to count as brighter/darker.
    pub threshold: u16,
    pub max_keypoints: usize,
    /// Border distance for accepted keypoints; the radius-3 circle always fits.
    pub margin: u32,
}

impl Default for FastConfig {
    fn default() -> Self {
        FastConfig {
            threshold: 20,
            max_keypoints: 500,
            margin: PATCH_MARGIN,
        }
    }
}

fn require_gray(gray: &RasterImage) -> Result<()> {
    if gray.channels() != 1 {
        return Err(Error::NotGrayscale(gray.channels()));
    }
    Ok(())
}

/// Longest circular run of `true` in `flags`, as (start, length).
fn longest_run(flags: &[bool; 16]) -> (usize, usize) {
    if flags.iter().all(|&f| f) {
        return (0, 16);
    }
    let mut best = (0, 0);
    // begin right after a `false` so runs crossing index 0 are seen whole
    let start = flags.iter().position(|&f| !f).unwrap_or(0);
    let mut run_start = 0;
    let mut len = 0;
    for step in 1..=16 {
        let i = (start + step) % 16;
        if flags[i] {
            if len == 0 {
                run_start = i;
            }
            len += 1;
            if len > best.1 {
                best = (run_start, len);
            }
        } else {
            len = 0;
        }
    }
    best
}

fn fast_response(gray: &RasterImage, x: u32, y: u32, t: i32) -> Option<f64> {
    let p = i32::from(gray.get(x, y, 0));
    let mut ring = [0i32; 16];
    for (slot, (dx, dy)) in ring.iter_mut().zip(CIRCLE) {
        *slot = i32::from(gray.get((x as i32 + dx) as u32, (y as i32 + dy) as u32, 0));
    }
    let bright: [bool; 16] = std::array::from_fn(|i| ring[i] > p + t);
    let dark: [bool; 16] = std::array::from_fn(|i| ring[i] < p - t);
    for flags in [bright, dark] {
        let (start, len) = longest_run(&flags);
        if len >= FAST_ARC {
            let score: i32 = (0..len).map(|k| (ring[(start + k) % 16] - p).abs()).sum();
            return Some(f64::from(score));
        }
    }
    None
}

/// FAST-9 corners with 3x3 non-maximum suppression, strongest first.
///
/// Ties in response are ordered by `(y, x)`.
pub fn detect_fast(gray: &RasterImage, config: &FastConfig) -> Result<Vec<Keypoint>> {
    require_gray(gray)?;
    let (w, h) = (gray.width(), gray.height());
    if w < 7 || h < 7 {
        return Err(Error::ImageTooSmall {
            min_width: 7,
            min_height: 7,
            width: w,
            height: h,
        });
    }
    if config.threshold == 0 {
        return Err(Error::InvalidInput("FAST threshold must be at least 1".into()));
    }
    let t = i32::from(config.threshold);
    let dims = gray.dims();
    let mut response = vec![0.0f64; dims.len()];
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            if !within_margin(x, y, dims, config.margin) {
                continue;
            }
            if let Some(r) = fast_response(gray, x, y, t) {
                response[(y * w + x) as usize] = r;
            }
        }
    }

    let mut kept = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let r = response[(y * w + x) as usize];
            if r <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nbr: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i32 + dx;
                    let ny = y as i32 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                        continue;
                    }
                    let q = response[(ny as u32 * w + nx as u32) as usize];
                    // equal neighbours: the earlier one in raster order survives
                    if q > r || (q == r && (dy < 0 || (dy == 0 && dx < 0))) {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if is_max {
                kept.push(Keypoint { x, y, response: r });
            }
        }
    }
    kept.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    kept.truncate(config.max_keypoints);
    Ok(kept)
}

/// Grid of zero-response keypoints `stride` apart inside the margin.
pub fn dense_grid(dims: Dims, stride: u32, margin: u32) -> Result<Vec<Keypoint>> {
    if stride == 0 {
        return Err(Error::InvalidInput("grid stride must be at least 1".into()));
    }
    let axis = |len: u32| -> Vec<u32> {
        let mut v = Vec::new();
        let mut p = margin;
        while p + margin <= len {
            v.push(p);
            p += stride;
        }
        v
    };
    let xs = axis(dims.width);
    let ys = axis(dims.height);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Keypoint { x, y, response: 0.0 }))
        .collect())
}

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Descriptor {
    pub bits: [u64; 4],
}

impl Descriptor {
    pub fn bit(&self, i: usize) -> bool {
        (self.bits[i / 64] >> (i % 64)) & 1 == 1
    }

    fn set(&mut self, i: usize) {
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Bits as 0.0/1.0 reals, bit 0 first.
    pub fn to_unit_vector(&self) -> Vec<f64> {
        (0..DESCRIPTOR_BITS)
            .map(|i| if self.bit(i) { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self.bits.iter().flat_map(|w| w.to_le_bytes()).collect();
        hex::encode(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::InvalidInput(e.to_string()))?;
        if bytes.len() != DESCRIPTOR_BITS / 8 {
            return Err(Error::InvalidInput(format!(
                "descriptor has {} bytes, expected {}",
                bytes.len(),
                DESCRIPTOR_BITS / 8
            )));
        }
        let mut bits = [0u64; 4];
        for (word, chunk) in bits.iter_mut().zip(bytes.chunks_exact(8)) {
            *word = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Ok(Descriptor { bits })
    }
}

/// Fixed test-pair pattern; the same seed always yields the same pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BriefPattern {
    seed: u64,
    pairs: Vec<[(i32, i32); 2]>,
}

impl BriefPattern {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, BRIEF_SIGMA).expect("positive sigma");
        let mut sample = || -> i32 {
            let v: f64 = normal.sample(&mut rng);
            (v.round() as i32).clamp(-PATCH_HALF, PATCH_HALF)
        };
        let pairs = (0..DESCRIPTOR_BITS)
            .map(|_| [(sample(), sample()), (sample(), sample())])
            .collect();
        BriefPattern { seed, pairs }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pairs(&self) -> &[[(i32, i32); 2]] {
        &self.pairs
    }
}

/// 5x5 box sums with replicated borders. Sums compare exactly like means.
pub fn box_sums_5x5(gray: &RasterImage) -> Vec<u32> {
    let w = gray.width() as i32;
    let h = gray.height() as i32;
    let data = gray.data();
    let mut horiz = vec![0u32; data.len()];
    for y in 0..h {
        for x in 0..w {
            horiz[(y * w + x) as usize] = (-2..=2)
                .map(|d| u32::from(data[(y * w + (x + d).clamp(0, w - 1)) as usize]))
                .sum();
        }
    }
    let mut out = vec![0u32; data.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = (-2..=2)
                .map(|d| horiz[((y + d).clamp(0, h - 1) * w + x) as usize])
                .sum();
        }
    }
    out
}

/// BRIEF descriptors: bit `i` is set when `blur(p_i) < blur(q_i)`.
pub fn describe_brief(
    gray: &RasterImage,
    keypoints: &[Keypoint],
    pattern: &BriefPattern,
) -> Result<Vec<Descriptor>> {
    require_gray(gray)?;
    let dims = gray.dims();
    if let Some(kp) = keypoints
        .iter()
        .find(|k| !within_margin(k.x, k.y, dims, PATCH_MARGIN))
    {
        return Err(Error::KeypointAtBorder {
            x: kp.x,
            y: kp.y,
            margin: PATCH_MARGIN,
        });
    }
    let blur = box_sums_5x5(gray);
    let w = dims.width as i32;
    let at = |x: i32, y: i32| blur[(y * w + x) as usize];
    Ok(keypoints
        .iter()
        .map(|kp| {
            let (cx, cy) = (kp.x as i32, kp.y as i32);
            let mut d = Descriptor { bits: [0; 4] };
            for (i, [p, q]) in pattern.pairs.iter().enumerate() {
                if at(cx + p.0, cy + p.1) < at(cx + q.0, cy + q.1) {
                    d.set(i);
                }
            }
            d
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub fast: FastConfig,
    /// Below this many FAST corners the dense grid is added.
    pub min_keypoints: usize,
    pub grid_stride: u32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            fast: FastConfig::default(),
            min_keypoints: 10,
            grid_stride: 24,
        }
    }
}

/// FAST corners (plus the dense fallback grid when too few) with BRIEF descriptors.
pub fn extract_features(
    gray: &RasterImage,
    config: &FeatureConfig,
    pattern: &BriefPattern,
) -> Result<Vec<(Keypoint, Descriptor)>> {
    let fast = FastConfig {
        margin: config.fast.margin.max(PATCH_MARGIN),
        ..config.fast
    };
    let mut keypoints = detect_fast(gray, &fast)?;
    if keypoints.len() < config.min_keypoints {
        let taken: HashSet<(u32, u32)> = keypoints.iter().map(|k| (k.x, k.y)).collect();
        keypoints.extend(
            dense_grid(gray.dims(), config.grid_stride, PATCH_MARGIN)?
                .into_iter()
                .filter(|k| !taken.contains(&(k.x, k.y))),
        );
    }
    let descriptors = describe_brief(gray, &keypoints, pattern)?;
    Ok(keypoints.into_iter().zip(descriptors).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedKeypoint {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
    pub weight: f64,
}

/// Where keypoint weights come from.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// Every keypoint weighs 1.
    Uniform,
    /// Weight is the map value under the keypoint.
    Salience(&'a SalienceMap),
}

pub fn attach_salience(
    features: &[(Keypoint, Descriptor)],
    image_dims: Dims,
    weighting: Weighting<'_>,
) -> Result<Vec<WeightedKeypoint>> {
    if let Weighting::Salience(map) = weighting {
        if map.dims() != image_dims {
            return Err(Error::DimensionMismatch {
                expected: (image_dims.width, image_dims.height),
                found: (map.width(), map.height()),
            });
        }
    }
    Ok(features
        .iter()
        .map(|&(keypoint, descriptor)| WeightedKeypoint {
            keypoint,
            descriptor,
            weight: match weighting {
                Weighting::Uniform => 1.0,
                Weighting::Salience(map) => map.get(keypoint.x, keypoint.y),
            },
        })
        .collect())
}

/// Writes `image_id,x,y,response,weight` rows and a `row,hex` descriptor sidecar.
///
/// `first_row` is the row index of the first keypoint, so several images can
/// share one pair of files.
pub fn write_keypoint_dump(
    csv_out: &mut impl Write,
    descriptors_out: &mut impl Write,
    image_id: &str,
    keypoints: &[WeightedKeypoint],
    first_row: usize,
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(csv_out, "image_id,x,y,response,weight")?;
    }
    for (i, wk) in keypoints.iter().enumerate() {
        writeln!(
            csv_out,
            "{image_id},{},{},{},{}",
            wk.keypoint.x, wk.keypoint.y, wk.keypoint.response, wk.weight
        )?;
        writeln!(descriptors_out, "{},{}", first_row + i, wk.descriptor.to_hex())?;
    }
    Ok(())
}
