//! Per-pixel salience maps and per-object salience scores.
//!
//! Three measurements are provided: object size and centeredness, inverted
//! frame-normalized depth, and Minimum Barrier salient object detection (a
//! raster-scan approximation plus an exact threshold-sweep solver used as an
//! oracle).

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{DepthMap, Dims, Mask, RasterImage, Region};

/// Per-pixel attention weights in `[0, 1]`; 1 is maximally salient.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl SalienceMap {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "salience buffer has {} values, expected {}",
                data.len(),
                width as usize * height as usize
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("salience value {v} outside [0, 1]")));
        }
        Ok(SalienceMap {
            width,
            height,
            data,
        })
    }

    /// Constant map; `uniform(dims, 1.0)` turns salience weighting off.
    pub fn uniform(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims.width, dims.height, vec![value; dims.len()])
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

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// 8-bit rendering where brighter means more salient: `round(255 * s)`.
    pub fn to_image(&self) -> RasterImage {
        let data = self.data.iter().map(|&s| (255.0 * s).round() as u8).collect();
        RasterImage::gray(self.width, self.height, data).expect("dimensions already validated")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_image().save(path)
    }
}

fn centre(dims: Dims) -> (f64, f64) {
    (
        (f64::from(dims.width) - 1.0) / 2.0,
        (f64::from(dims.height) - 1.0) / 2.0,
    )
}

/// Fraction of the image covered by the region.
pub fn object_size(region: &Region, dims: Dims) -> Result<f64> {
    let count = region.pixel_count(dims)?;
    Ok(count as f64 / dims.area() as f64)
}

/// `1 - d(p*, c) / d_max`, where `p*` is the region pixel closest to the image
/// centre `c` and `d_max` is the centre-to-corner distance.
pub fn object_centeredness(region: &Region, dims: Dims) -> Result<f64> {
    let pixels = region.pixels(dims)?;
    let (cx, cy) = centre(dims);
    let d_max = cx.hypot(cy);
    if d_max == 0.0 {
        return Ok(1.0);
    }
    // raster order + strict `<` breaks ties by (row, column)
    let mut best = f64::INFINITY;
    for (x, y) in pixels {
        let d = (f64::from(x) - cx).hypot(f64::from(y) - cy);
        if d < best {
            best = d;
        }
    }
    Ok((1.0 - best / d_max).clamp(0.0, 1.0))
}

/// Pixel-wise centeredness: `1 - d(p, c) / d_max` at every pixel.
///
/// The max of this field over a region equals [`object_centeredness`].
pub fn centeredness_field(dims: Dims) -> SalienceMap {
    let (cx, cy) = centre(dims);
    let d_max = cx.hypot(cy);
    let mut data = Vec::with_capacity(dims.len());
    for y in 0..dims.height {
        for x in 0..dims.width {
            let v = if d_max == 0.0 {
                1.0
            } else {
                1.0 - (f64::from(x) - cx).hypot(f64::from(y) - cy) / d_max
            };
            data.push(v.clamp(0.0, 1.0));
        }
    }
    SalienceMap::new(dims.width, dims.height, data).expect("values clamped")
}

/// Inverted frame-normalized depth: nearest pixel 1, farthest 0, constant frames 0.5.
pub fn depth_salience(depth: &DepthMap) -> SalienceMap {
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
    let data = if hi > lo {
        let range = hi - lo;
        depth
            .data()
            .iter()
            .map(|&d| ((hi - d) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.5; depth.data().len()]
    };
    SalienceMap::new(depth.width(), depth.height(), data).expect("values in [0, 1]")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

/// Mean or max of the map over the region's pixels.
pub fn region_salience(map: &SalienceMap, region: &Region, mode: Aggregation) -> Result<f64> {
    let pixels = region.pixels(map.dims())?;
    Ok(match mode {
        Aggregation::Mean => {
            pixels.iter().map(|&(x, y)| map.get(x, y)).sum::<f64>() / pixels.len() as f64
        }
        Aggregation::Max => pixels
            .iter()
            .map(|&(x, y)| map.get(x, y))
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Prominence of one detected object: detection confidence times salience aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region_id: usize,
    pub size_fraction: f64,
    pub centeredness: f64,
    pub salience_aggregate: f64,
    pub detection_confidence: f64,
    pub prominence: f64,
}

pub fn score_region(
    region_id: usize,
    region: &Region,
    map: &SalienceMap,
    detection_confidence: f64,
    mode: Aggregation,
) -> Result<RegionScore> {
    let dims = map.dims();
    let salience_aggregate = region_salience(map, region, mode)?;
    Ok(RegionScore {
        region_id,
        size_fraction: object_size(region, dims)?,
        centeredness: object_centeredness(region, dims)?,
        salience_aggregate,
        detection_confidence,
        prominence: detection_confidence * salience_aggregate,
    })
}

// ---------------------------------------------------------------------------
// Minimum barrier distance
// ---------------------------------------------------------------------------

/// The one-pixel border ring used as the background seed set.
pub fn border_seeds(dims: Dims) -> Mask {
    Mask::from_fn(dims, |x, y| {
        x == 0 || y == 0 || x + 1 == dims.width || y + 1 == dims.height
    })
}

fn require_gray(gray: &RasterImage) -> Result<()> {
    if gray.channels() != 1 {
        return Err(Error::NotGrayscale(gray.channels()));
    }
    Ok(())
}

/// Raster-scan minimum barrier distance from an arbitrary seed set.
///
/// Runs `passes` forward/backward pass pairs over 4-connected neighbours and
/// returns the raw barrier estimate `U` per pixel (`+inf` where no seed has
/// been reached).
pub fn mbd_raster_scan_from(gray: &RasterImage, seeds: &Mask, passes: usize) -> Result<Vec<f64>> {
    require_gray(gray)?;
    if seeds.dims() != gray.dims() {
        return Err(Error::DimensionMismatch {
            expected: (gray.width(), gray.height()),
            found: (seeds.dims().width, seeds.dims().height),
        });
    }
    if passes == 0 {
        return Err(Error::InvalidInput("MBD needs at least one pass pair".into()));
    }
    let w = gray.width() as usize;
    let h = gray.height() as usize;
    let img = gray.data();
    let mut u = vec![f64::INFINITY; w * h];
    let mut hi: Vec<u8> = img.to_vec();
    let mut lo: Vec<u8> = img.to_vec();
    for y in 0..h {
        for x in 0..w {
            if seeds.get(x as u32, y as u32) {
                u[y * w + x] = 0.0;
            }
        }
    }

    let relax = |u: &mut [f64], hi: &mut [u8], lo: &mut [u8], from: usize, to: usize| {
        if u[from].is_infinite() {
            return;
        }
        let v = img[to];
        let h_new = hi[from].max(v);
        let l_new = lo[from].min(v);
        let beta = f64::from(h_new - l_new);
        if beta < u[to] {
            u[to] = beta;
            hi[to] = h_new;
            lo[to] = l_new;
        }
    };

    for _ in 0..passes {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if y > 0 {
                    relax(&mut u, &mut hi, &mut lo, i - w, i);
                }
                if x > 0 {
                    relax(&mut u, &mut hi, &mut lo, i - 1, i);
                }
            }
        }
        for y in (0..h).rev() {
            for x in (0..w).rev() {
                let i = y * w + x;
                if y + 1 < h {
                    relax(&mut u, &mut hi, &mut lo, i + w, i);
                }
                if x + 1 < w {
                    relax(&mut u, &mut hi, &mut lo, i + 1, i);
                }
            }
        }
    }
    Ok(u)
}

/// Raw raster-scan barrier distances seeded from the border ring.
pub fn mbd_raster_scan(gray: &RasterImage, passes: usize) -> Result<Vec<f64>> {
    mbd_raster_scan_from(gray, &border_seeds(gray.dims()), passes)
}

/// Largest side accepted by the exact solver.
pub const EXACT_SIZE_CAP: u32 = 64;

/// Exact minimum barrier distance from an arbitrary seed set.
///
/// For each candidate path minimum `m`, a minimax Dijkstra over pixels with
/// intensity `>= m` gives the smallest achievable path maximum `M_m`; the
/// exact distance is `min_m (M_m - m)`.
pub fn mbd_exact_from(gray: &RasterImage, seeds: &Mask) -> Result<Vec<f64>> {
    require_gray(gray)?;
    if gray.width() > EXACT_SIZE_CAP || gray.height() > EXACT_SIZE_CAP {
        return Err(Error::ImageTooLarge {
            width: gray.width(),
            height: gray.height(),
            cap: EXACT_SIZE_CAP,
        });
    }
    if seeds.dims() != gray.dims() {
        return Err(Error::DimensionMismatch {
            expected: (gray.width(), gray.height()),
            found: (seeds.dims().width, seeds.dims().height),
        });
    }
    let w = gray.width() as usize;
    let h = gray.height() as usize;
    let n = w * h;
    let img = gray.data();
    let mut levels: Vec<u8> = img.to_vec();
    levels.sort_unstable();
    levels.dedup();

    let mut best = vec![f64::INFINITY; n];
    let mut path_max = vec![u16::MAX; n];
    let mut heap = BinaryHeap::new();
    for &m in &levels {
        path_max.fill(u16::MAX);
        heap.clear();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if seeds.get(x as u32, y as u32) && img[i] >= m {
                    path_max[i] = u16::from(img[i]);
                    heap.push(Reverse((path_max[i], i)));
                }
            }
        }
        while let Some(Reverse((cost, i))) = heap.pop() {
            if cost > path_max[i] {
                continue;
            }
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if img[j] < m {
                    return;
                }
                let c = cost.max(u16::from(img[j]));
                if c < path_max[j] {
                    path_max[j] = c;
                    heap.push(Reverse((c, j)));
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        for i in 0..n {
            if path_max[i] != u16::MAX {
                let barrier = f64::from(path_max[i] - u16::from(m));
                if barrier < best[i] {
                    best[i] = barrier;
                }
            }
        }
    }
    Ok(best)
}

/// Raw exact barrier distances seeded from the border ring.
pub fn mbd_exact_distances(gray: &RasterImage) -> Result<Vec<f64>> {
    mbd_exact_from(gray, &border_seeds(gray.dims()))
}

/// Divides by the maximum finite value; an all-zero field stays zero.
fn rescale_unit(values: &[f64]) -> Vec<f64> {
    let max = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|&v| if v.is_finite() { (v / max).clamp(0.0, 1.0) } else { 1.0 })
        .collect()
}

/// Exact MBD salience map; images larger than [`EXACT_SIZE_CAP`] are rejected.
pub fn mbd_exact(gray: &RasterImage) -> Result<SalienceMap> {
    let raw = mbd_exact_distances(gray)?;
    SalienceMap::new(gray.width(), gray.height(), rescale_unit(&raw))
}

/// Post-processing applied after the barrier field is rescaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbdPostprocess {
    /// Fixed box-blur radius. When unset, `auto_smoothing` uses `ceil(min(w, h) / 50)`.
    pub smoothing_radius: Option<u32>,
    pub auto_smoothing: bool,
    /// Gaussian centre-bias width as a fraction of `min(w, h)`.
    pub center_sigma: Option<f64>,
}

impl MbdPostprocess {
    pub fn none() -> Self {
        MbdPostprocess {
            smoothing_radius: None,
            auto_smoothing: false,
            center_sigma: None,
        }
    }

    fn radius_for(&self, dims: Dims) -> Option<u32> {
        if let Some(r) = self.smoothing_radius {
            return Some(r);
        }
        self.auto_smoothing
            .then(|| dims.width.min(dims.height).div_ceil(50))
    }
}

impl Default for MbdPostprocess {
    fn default() -> Self {
        MbdPostprocess {
            smoothing_radius: None,
            auto_smoothing: true,
            center_sigma: Some(0.33),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbdConfig {
    pub passes: usize,
    pub postprocess: MbdPostprocess,
}

impl Default for MbdConfig {
    fn default() -> Self {
        MbdConfig {
            passes: 3,
            postprocess: MbdPostprocess::default(),
        }
    }
}

impl MbdConfig {
    /// Raw rescaled barrier field without smoothing or centre bias.
    pub fn raw(passes: usize) -> Self {
        MbdConfig {
            passes,
            postprocess: MbdPostprocess::none(),
        }
    }
}

fn box_blur(values: &[f64], dims: Dims, radius: u32) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let w = dims.width as usize;
    let h = dims.height as usize;
    let r = radius as usize;
    // summed-area table with a zero row/column in front
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += values[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let sum = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

fn center_bias(values: &mut [f64], dims: Dims, sigma_fraction: f64) {
    let sigma = sigma_fraction * f64::from(dims.width.min(dims.height));
    let (cx, cy) = centre(dims);
    let denom = 2.0 * sigma * sigma;
    for y in 0..dims.height {
        for x in 0..dims.width {
            let dx = f64::from(x) - cx;
            let dy = f64::from(y) - cy;
            values[y as usize * dims.width as usize + x as usize] *= (-(dx * dx + dy * dy) / denom).exp();
        }
    }
}

/// MBD salience map: raster-scan barrier distances from the border ring,
/// rescaled to `[0, 1]`, then optionally smoothed and centre-weighted.
pub fn mbd_salience(gray: &RasterImage, config: &MbdConfig) -> Result<SalienceMap> {
    require_gray(gray)?;
    if gray.width() < 3 || gray.height() < 3 {
        return Err(Error::ImageTooSmall {
            min_width: 3,
            min_height: 3,
            width: gray.width(),
            height: gray.height(),
        });
    }
    let dims = gray.dims();
    let raw = mbd_raster_scan(gray, config.passes)?;
    let mut values = rescale_unit(&raw);
    if let Some(r) = config.postprocess.radius_for(dims) {
        values = box_blur(&values, dims, r);
    }
    if let Some(sigma) = config.postprocess.center_sigma {
        if sigma > 0.0 {
            center_bias(&mut values, dims, sigma);
        }
    }
    if config.postprocess.radius_for(dims).is_some() || config.postprocess.center_sigma.is_some() {
        values = rescale_unit(&values);
    }
    SalienceMap::new(dims.width, dims.height, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::BBox;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search over `(pixel, path min, path max)` states reachable
    /// from the seeds. Walk barriers upper-bound simple-path barriers and every
    /// simple path is a walk, so the minimum over states is the exact MBD.
    fn mbd_state_search(gray: &RasterImage, seeds: &Mask) -> Vec<f64> {
        let w = gray.width() as usize;
        let h = gray.height() as usize;
        let img = gray.data();
        let mut seen = std::collections::HashSet::new();
        let mut stack = Vec::new();
        for i in 0..w * h {
            if seeds.get((i % w) as u32, (i / w) as u32) {
                let s = (i, img[i], img[i]);
                if seen.insert(s) {
                    stack.push(s);
                }
            }
        }
        while let Some((i, lo, hi)) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut nbrs = Vec::new();
            if x > 0 {
                nbrs.push(i - 1);
            }
            if x + 1 < w {
                nbrs.push(i + 1);
            }
            if y > 0 {
                nbrs.push(i - w);
            }
            if y + 1 < h {
                nbrs.push(i + w);
            }
            for j in nbrs {
                let s = (j, lo.min(img[j]), hi.max(img[j]));
                if seen.insert(s) {
                    stack.push(s);
                }
            }
        }
        let mut best = vec![f64::INFINITY; w * h];
        for (i, lo, hi) in seen {
            best[i] = best[i].min(f64::from(hi - lo));
        }
        best
    }

    fn random_gray(rng: &mut ChaCha8Rng, w: u32, h: u32, levels: u8) -> RasterImage {
        RasterImage::from_fn(w, h, |_, _| rng.gen_range(0..levels) * (255 / (levels - 1).max(1)))
            .unwrap()
    }

    #[test]
    fn object_size_examples() {
        let dims = Dims::new(10, 10);
        let full = Region::Mask(Mask::from_fn(dims, |_, _| true));
        assert_eq!(object_size(&full, dims).unwrap(), 1.0);
        let b = Region::Box(BBox { x: 2, y: 2, w: 5, h: 5 });
        assert_eq!(object_size(&b, dims).unwrap(), 0.25);
        let empty = Region::Mask(Mask::from_fn(dims, |_, _| false));
        assert!(matches!(object_size(&empty, dims), Err(Error::EmptyRegion)));
    }

    #[test]
    fn centeredness_examples() {
        let dims = Dims::new(9, 7);
        let centre_box = Region::Box(BBox { x: 3, y: 2, w: 3, h: 3 });
        assert_eq!(object_centeredness(&centre_box, dims).unwrap(), 1.0);
        let corner = Region::Box(BBox { x: 0, y: 0, w: 1, h: 1 });
        assert_abs_diff_eq!(object_centeredness(&corner, dims).unwrap(), 0.0, epsilon = 1e-12);
        // odd square: pixel (0, (h-1)/2) sits (w-1)/2 left of the centre
        let sq = Dims::new(11, 11);
        let left_mid = Region::Box(BBox { x: 0, y: 5, w: 1, h: 1 });
        let d_max = (5.0f64).hypot(5.0);
        assert_abs_diff_eq!(
            object_centeredness(&left_mid, sq).unwrap(),
            1.0 - 5.0 / d_max,
            epsilon = 1e-12
        );
    }

    #[test]
    fn centeredness_field_max_matches_object_centeredness() {
        let dims = Dims::new(13, 8);
        let field = centeredness_field(dims);
        let region = Region::Box(BBox { x: 1, y: 5, w: 3, h: 2 });
        assert_abs_diff_eq!(
            region_salience(&field, &region, Aggregation::Max).unwrap(),
            object_centeredness(&region, dims).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn depth_salience_examples() {
        let d = DepthMap::new(2, 1, vec![0.0, 100.0]).unwrap();
        assert_eq!(depth_salience(&d).data(), &[1.0, 0.0]);
        let d = DepthMap::new(3, 1, vec![0.0, 50.0, 100.0]).unwrap();
        assert_eq!(depth_salience(&d).data(), &[1.0, 0.5, 0.0]);
        let d = DepthMap::new(2, 2, vec![5.0; 4]).unwrap();
        assert_eq!(depth_salience(&d).data(), &[0.5; 4]);
    }

    #[test]
    fn region_salience_examples() {
        let map = SalienceMap::uniform(Dims::new(4, 4), 0.3).unwrap();
        let r = Region::Box(BBox { x: 1, y: 1, w: 2, h: 3 });
        assert_abs_diff_eq!(region_salience(&map, &r, Aggregation::Mean).unwrap(), 0.3, epsilon = 1e-15);

        let map = SalienceMap::new(2, 1, vec![0.0, 1.0]).unwrap();
        let r = Region::Box(BBox { x: 0, y: 0, w: 2, h: 1 });
        assert_eq!(region_salience(&map, &r, Aggregation::Mean).unwrap(), 0.5);
        assert_eq!(region_salience(&map, &r, Aggregation::Max).unwrap(), 1.0);

        // L-shaped mask over a 3x3 map: left column plus bottom row
        let values = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
        let map = SalienceMap::new(3, 3, values).unwrap();
        let l = Region::Mask(Mask::from_fn(Dims::new(3, 3), |x, y| x == 0 || y == 2));
        // 0.1 + 0.4 + 0.7 + 0.8 + 0.9 = 2.9 over 5 pixels
        assert_abs_diff_eq!(region_salience(&map, &l, Aggregation::Mean).unwrap(), 0.58, epsilon = 1e-12);
    }

    #[test]
    fn prominence_is_confidence_times_salience() {
        let map = SalienceMap::uniform(Dims::new(10, 10), 0.8).unwrap();
        let r = Region::Box(BBox { x: 0, y: 0, w: 10, h: 10 });
        let s = score_region(3, &r, &map, 0.5, Aggregation::Mean).unwrap();
        assert_eq!(s.size_fraction, 1.0);
        assert_abs_diff_eq!(s.prominence, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn constant_image_has_zero_mbd() {
        let img = RasterImage::from_fn(8, 6, |_, _| 77).unwrap();
        let map = mbd_salience(&img, &MbdConfig::default()).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
        assert!(mbd_exact(&img).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bright_centre_pixel() {
        let img = RasterImage::from_fn(5, 5, |x, y| if x == 2 && y == 2 { 255 } else { 0 }).unwrap();
        let raw = mbd_raster_scan(&img, 1).unwrap();
        let exact = mbd_exact_distances(&img).unwrap();
        for i in 0..25 {
            let expected = if i == 12 { 255.0 } else { 0.0 };
            assert_eq!(raw[i], expected);
            assert_eq!(exact[i], expected);
        }
    }

    #[test]
    fn all_border_strip_is_zero() {
        let img = RasterImage::gray(2, 1, vec![10, 200]).unwrap();
        assert_eq!(mbd_exact_distances(&img).unwrap(), vec![0.0, 0.0]);
        assert_eq!(mbd_raster_scan(&img, 1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn ramp_matches_state_search() {
        let ramp = RasterImage::from_fn(5, 5, |x, _| (10 * x) as u8).unwrap();
        let seeds = border_seeds(ramp.dims());
        let oracle = mbd_state_search(&ramp, &seeds);
        assert_eq!(mbd_exact_distances(&ramp).unwrap(), oracle);
        // each column touches the top border at its own intensity
        assert!(oracle.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_solver_matches_state_search_on_small_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let w = rng.gen_range(3..7);
            let h = rng.gen_range(3..7);
            let img = random_gray(&mut rng, w, h, 6);
            let seeds = border_seeds(img.dims());
            assert_eq!(mbd_exact_from(&img, &seeds).unwrap(), mbd_state_search(&img, &seeds));
            // single seed in the corner gives non-trivial interiors
            let corner = Mask::from_fn(img.dims(), |x, y| x == 0 && y == 0);
            assert_eq!(mbd_exact_from(&img, &corner).unwrap(), mbd_state_search(&img, &corner));
        }
    }

    #[test]
    fn path_graph_with_end_seed_is_exact_after_one_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..40);
            let img = random_gray(&mut rng, n, 1, 255);
            let seeds = Mask::from_fn(img.dims(), |x, _| x == 0);
            assert_eq!(
                mbd_raster_scan_from(&img, &seeds, 1).unwrap(),
                mbd_exact_from(&img, &seeds).unwrap()
            );
        }
    }

    #[test]
    fn exact_solver_size_cap() {
        let img = RasterImage::from_fn(65, 3, |_, _| 0).unwrap();
        assert!(matches!(mbd_exact(&img), Err(Error::ImageTooLarge { .. })));
    }

    #[test]
    fn small_images_rejected_by_salience() {
        let img = RasterImage::from_fn(2, 9, |_, _| 0).unwrap();
        assert!(matches!(
            mbd_salience(&img, &MbdConfig::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn postprocess_keeps_unit_range_and_favours_centre() {
        let img = RasterImage::from_fn(40, 30, |x, y| {
            if (12..28).contains(&x) && (8..22).contains(&y) { 220 } else { 30 }
        })
        .unwrap();
        let map = mbd_salience(&img, &MbdConfig::default()).unwrap();
        assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(map.get(20, 15) > map.get(2, 2));
        assert_abs_diff_eq!(map.data().iter().copied().fold(0.0, f64::max), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn png_export_rounds() {
        let map = SalienceMap::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(map.to_image().data(), &[0, 128, 255]);
    }

    proptest! {
        #[test]
        fn raster_scan_dominates_exact(
            w in 3u32..12, h in 3u32..12, seed in any::<u64>(), passes in 1usize..4
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_gray(&mut rng, w, h, 255);
            let approx = mbd_raster_scan(&img, passes).unwrap();
            let exact = mbd_exact_distances(&img).unwrap();
            for (a, e) in approx.iter().zip(&exact) {
                prop_assert!(a >= e);
            }
        }

        #[test]
        fn more_passes_never_increase_barrier(w in 3u32..16, h in 3u32..16, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_gray(&mut rng, w, h, 255);
            let mut prev = mbd_raster_scan(&img, 1).unwrap();
            for k in 2..5 {
                let next = mbd_raster_scan(&img, k).unwrap();
                for (n, p) in next.iter().zip(&prev) {
                    prop_assert!(n <= p);
                }
                prev = next;
            }
        }

        #[test]
        fn intensity_shift_invariance(w in 3u32..12, h in 3u32..12, seed in any::<u64>(), shift in 0u8..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = RasterImage::from_fn(w, h, |_, _| rng.gen_range(0..196)).unwrap();
            let shifted = RasterImage::gray(w, h, img.data().iter().map(|v| v + shift).collect()).unwrap();
            prop_assert_eq!(mbd_raster_scan(&img, 2).unwrap(), mbd_raster_scan(&shifted, 2).unwrap());
            prop_assert_eq!(mbd_exact_distances(&img).unwrap(), mbd_exact_distances(&shifted).unwrap());
        }

        #[test]
        fn centeredness_rotation_invariance(n in 1u32..12, x in 0u32..12, y in 0u32..12, bw in 1u32..5, bh in 1u32..5) {
            let dims = Dims::new(n, n);
            let mask = Mask::from_fn(dims, |px, py| px >= x && px < x + bw && py >= y && py < y + bh);
            let rotated = Mask::from_fn(dims, |px, py| mask.get(py, n - 1 - px));
            let a = object_centeredness(&Region::Mask(mask), dims);
            let b = object_centeredness(&Region::Mask(rotated), dims);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "rotation changed emptiness"),
            }
        }
    }
}
