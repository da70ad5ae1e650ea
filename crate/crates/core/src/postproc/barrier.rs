use crate::error::Result;
use crate::formats::{DownstreamAxis, FlowGeometry};
use crate::raster::{centroid, combine_masks, Centroid, ClassId, InstanceMask};

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierOutcome {
    pub kept: Vec<InstanceMask>,
    /// Centroid of the merged barrier masks, if any were given.
    pub barrier_centroid: Option<Centroid>,
    /// Set when no barrier mask was available and the input passed through.
    pub barrier_missing: bool,
}

/// True if `point` lies strictly downstream of `barrier`.
pub fn is_downstream(point: Centroid, barrier: Centroid, flow: FlowGeometry) -> bool {
    match flow.downstream_axis {
        DownstreamAxis::PosX => point.x > barrier.x,
        DownstreamAxis::NegX => point.x < barrier.x,
        DownstreamAxis::PosY => point.y > barrier.y,
        DownstreamAxis::NegY => point.y < barrier.y,
    }
}

/// Removes predicted masks whose centroid is strictly downstream of the
/// centroid of the merged barrier masks. A mask level with the barrier is kept.
pub fn barrier_filter(
    predicted: &[InstanceMask],
    barrier_masks: &[InstanceMask],
    flow: FlowGeometry,
) -> Result<BarrierOutcome> {
    if barrier_masks.is_empty() {
        return Ok(BarrierOutcome {
            kept: predicted.to_vec(),
            barrier_centroid: None,
            barrier_missing: true,
        });
    }
    let barrier = combine_masks(barrier_masks, ClassId::Barrier)?;
    let b = centroid(&barrier);
    let mut kept = Vec::with_capacity(predicted.len());
    for (i, m) in predicted.iter().enumerate() {
        barrier
            .dims()
            .ensure_eq(m.dims(), || format!("predicted mask {i} vs barrier"))?;
        if !is_downstream(centroid(m), b, flow) {
            kept.push(m.clone());
        }
    }
    Ok(BarrierOutcome {
        kept,
        barrier_centroid: Some(b),
        barrier_missing: false,
    })
}
