//! Depth-based prominence: a depth map becomes a salience map where near is
//! bright, and each face box gets a depth position and a relative size.

use prominence::imagecore::{BBox, DepthMap};
use prominence::salience::depth_salience;
use prominence::video::{face_depth_position, face_relative_size};

fn main() -> prominence::Result<()> {
    let (w, h) = (64u32, 40u32);
    // a far wall at 8 m with a near person at 1.5 m and a mid-distance one at 4 m
    let near = BBox { x: 8, y: 10, w: 14, h: 20 };
    let mid = BBox { x: 40, y: 14, w: 8, h: 12 };
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            if near.contains(x, y) {
                1500.0
            } else if mid.contains(x, y) {
                4000.0
            } else {
                8000.0
            }
        })
        .collect();
    let depth = DepthMap::new(w, h, data)?;

    let map = depth_salience(&depth);
    println!("salience of nearest pixel {:.2}, farthest {:.2}", map.get(10, 12), map.get(0, 0));

    for (name, bbox) in [("near", near), ("mid", mid)] {
        println!(
            "{name:>4}: depth position {:.3}, relative size {:.4}",
            face_depth_position(&depth, &bbox)?,
            face_relative_size(&bbox, depth.dims())?
        );
    }

    let flat = DepthMap::new(4, 4, vec![2000.0; 16])?;
    println!("a constant depth map scores every pixel {:.1}", depth_salience(&flat).get(0, 0));
    Ok(())
}
