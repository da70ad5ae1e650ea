//! Area-of-interest, barrier and logit-cutoff filters on a hand-built scene.

use riverseg::formats::{DownstreamAxis, FlowGeometry};
use riverseg::postproc::{aoi_filter, barrier_filter, bmc_threshold, AreaOfInterest, BmcConfig};
use riverseg::raster::{BitGrid, ClassId, Dims, InstanceMask, MaskSource, ScalarField};

fn rect(dims: Dims, x0: usize, y0: usize, w: usize, h: usize, class: ClassId) -> InstanceMask {
    let g = BitGrid::from_fn(dims, |x, y| (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y));
    InstanceMask::new(g, class, MaskSource::Predicted).unwrap()
}

fn main() -> riverseg::Result<()> {
    let dims = Dims::new(40, 40)?;
    let preds = vec![
        rect(dims, 5, 5, 4, 4, ClassId::InSystemTrash),
        rect(dims, 30, 8, 6, 3, ClassId::InSystemTrash), // mostly on the bank
        rect(dims, 12, 30, 5, 5, ClassId::InSystemTrash),
    ];

    // water channel where trash has been annotated before
    let aoi = AreaOfInterest::new(BitGrid::from_fn(dims, |x, _| x < 32), AreaOfInterest::DEFAULT_MIN_INSIDE_FRACTION)?;
    let inside = aoi_filter(&preds, &aoi)?;
    println!("aoi: {} of {} masks kept", inside.len(), preds.len());

    let barrier = rect(dims, 0, 20, 40, 2, ClassId::Barrier);
    let flow = FlowGeometry { downstream_axis: DownstreamAxis::PosY };
    let out = barrier_filter(&inside, &[barrier], flow)?;
    let c = out.barrier_centroid.expect("barrier given");
    println!("barrier centroid y = {}; {} masks upstream", c.y, out.kept.len());

    let logits = ScalarField::from_fn(dims, |x, y| {
        let d = ((x as f32 - 20.0).powi(2) + (y as f32 - 20.0).powi(2)).sqrt();
        1.0 - d / 30.0
    })?;
    for cutoff in [0.9, 0.7, 0.5] {
        let area = bmc_threshold(&logits, &BmcConfig::new(cutoff)).map_or(0, |m| m.area());
        println!("cutoff {cutoff}: {area} px");
    }
    Ok(())
}
