//! Extracts instance masks from a similarity field by repeated argmax
//! prompting and blanking.

use riverseg::promptsel::{extract_masks, FloodFillProposer, LoopConfig};
use riverseg::raster::{Dims, ScalarField};

fn main() -> riverseg::Result<()> {
    let dims = Dims::new(24, 16)?;
    let blobs = [(5.0, 4.0, 1.0), (17.0, 10.0, 0.8), (8.0, 12.0, 0.6)];
    let s = ScalarField::from_fn(dims, |x, y| {
        blobs
            .iter()
            .map(|&(cx, cy, peak)| {
                let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                if d2 <= 6.0 { peak } else { 0.0 }
            })
            .fold(0.0, f32::max)
    })?;

    let out = extract_masks(&s, &FloodFillProposer::default(), &LoopConfig::new(0.005))?;
    for (i, it) in out.iterations.iter().enumerate() {
        println!(
            "iter {i}: seed ({:>2},{:>2}) mfs {:.5} -> {:?} accepted={}",
            it.seed.x, it.seed.y, it.mfs_before, it.mfs_after, it.accepted
        );
    }
    println!("stop: {:?}, {} masks, final mfs {}", out.stop, out.masks.len(), out.final_mfs);
    Ok(())
}
