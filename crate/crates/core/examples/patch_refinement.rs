//! Tiles an image into a patch grid, runs a stand-in predictor on each
//! upscaled patch and stitches the logits back together.

use riverseg::postproc::{bmc_threshold, process_patches, split_patches, BmcConfig, PatchGrid};
use riverseg::raster::{Dims, ResampleMethod, ScalarField};

fn main() -> riverseg::Result<()> {
    let dims = Dims::new(50, 30)?;
    let grid = PatchGrid::new(2, 3)?;
    for r in split_patches(dims, &grid)? {
        println!("patch at ({:>2},{:>2}) {}x{}", r.x, r.y, r.width, r.height);
    }

    // fake model: a blob centred on each working-size patch
    let (ww, wh) = grid.working_size;
    let logits = process_patches(dims, &grid, ResampleMethod::Bilinear, |_, _| {
        ScalarField::from_fn(Dims::new(ww, wh)?, |x, y| {
            let dx = x as f32 / ww as f32 - 0.5;
            let dy = y as f32 / wh as f32 - 0.5;
            (1.0 - 4.0 * (dx * dx + dy * dy)).max(0.0)
        })
    })?;
    println!("merged field {}x{}, mean {:.4}", logits.width(), logits.height(), logits.mean());
    let mask = bmc_threshold(&logits, &BmcConfig::new(0.8)).expect("some pixels pass");
    println!("{} px over the cutoff", mask.area());
    Ok(())
}
