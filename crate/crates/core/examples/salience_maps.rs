//! MBD salience on a small synthetic scene: the raster-scan approximation next
//! to the exact barrier distances, and the post-processed map written as PNG.
//!
//! ```text
//! cargo run --example salience_maps -- /tmp/salience
//! ```

use std::path::PathBuf;

use prominence::imagecore::{BBox, RasterImage, Region};
use prominence::salience::{mbd_exact_distances, mbd_raster_scan, mbd_salience, score_region, Aggregation, MbdConfig};

fn main() -> prominence::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("prominence-salience"));
    std::fs::create_dir_all(&out).map_err(|e| prominence::Error::InvalidInput(e.to_string()))?;

    // dark background, one bright disc and a mid-gray bar touching the border
    let image = RasterImage::from_fn(48, 32, |x, y| {
        let (dx, dy) = (x as i32 - 30, y as i32 - 16);
        if dx * dx + dy * dy < 49 {
            220
        } else if x < 6 {
            120
        } else {
            30 + ((x * 7 + y * 3) % 11) as u8
        }
    })?;

    let raster = mbd_raster_scan(&image, 3)?;
    let exact = mbd_exact_distances(&image)?;
    let worst = raster
        .iter()
        .zip(&exact)
        .map(|(a, e)| a - e)
        .fold(0.0f64, f64::max);
    println!("raster scan over-estimates the exact barrier by at most {worst} gray levels");

    let raw = mbd_salience(&image, &MbdConfig::raw(3))?;
    let smooth = mbd_salience(&image, &MbdConfig::default())?;
    raw.save_png(out.join("raw.png"))?;
    smooth.save_png(out.join("postprocessed.png"))?;
    image.save(out.join("input.png"))?;

    for (name, bbox) in [("disc", BBox { x: 23, y: 9, w: 15, h: 15 }), ("bar", BBox { x: 0, y: 0, w: 6, h: 32 })] {
        let s = score_region(0, &Region::Box(bbox), &smooth, 1.0, Aggregation::Mean)?;
        println!(
            "{name:>5}: size {:.3}  centeredness {:.3}  mean salience {:.3}",
            s.size_fraction, s.centeredness, s.salience_aggregate
        );
    }
    println!("maps written to {}", out.display());
    Ok(())
}
