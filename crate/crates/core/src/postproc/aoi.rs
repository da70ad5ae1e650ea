use crate::error::{Error, Result};
use crate::formats::{read_mask_grid, DatasetManifest};
use crate::raster::{BitGrid, ComponentLabels, Connectivity, Dims, InstanceMask};

/// Union of the ground-truth regions seen by a fixed camera. Predicted
/// components lying mostly outside it are discarded.
#[derive(Clone, Debug, PartialEq)]
pub struct AreaOfInterest {
    mask: BitGrid,
    min_inside_fraction: f64,
    connectivity: Connectivity,
}

impl AreaOfInterest {
    pub const DEFAULT_MIN_INSIDE_FRACTION: f64 = 0.5;

    pub fn new(mask: BitGrid, min_inside_fraction: f64) -> Result<Self> {
        if !mask.any() {
            return Err(Error::invalid("area of interest is empty"));
        }
        if !(min_inside_fraction > 0.0 && min_inside_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "min_inside_fraction must lie in (0, 1], got {min_inside_fraction}"
            )));
        }
        Ok(AreaOfInterest {
            mask,
            min_inside_fraction,
            connectivity: Connectivity::default(),
        })
    }

    pub fn with_connectivity(mut self, connectivity: Connectivity) -> Self {
        self.connectivity = connectivity;
        self
    }

    pub fn with_min_inside_fraction(self, fraction: f64) -> Result<Self> {
        let connectivity = self.connectivity;
        Ok(AreaOfInterest::new(self.mask, fraction)?.with_connectivity(connectivity))
    }

    /// AOI from the union of an arbitrary set of ground-truth masks.
    pub fn from_masks<'a>(
        masks: impl IntoIterator<Item = &'a InstanceMask>,
        min_inside_fraction: f64,
    ) -> Result<Self> {
        let mut union: Option<BitGrid> = None;
        for m in masks {
            match &mut union {
                None => union = Some(m.grid().clone()),
                Some(u) => u.union_with(m.grid())?,
            }
        }
        let mask = union.ok_or_else(|| Error::invalid("area of interest is empty"))?;
        AreaOfInterest::new(mask, min_inside_fraction)
    }

    pub fn mask(&self) -> &BitGrid {
        &self.mask
    }

    pub fn dims(&self) -> Dims {
        self.mask.dims()
    }

    pub fn min_inside_fraction(&self) -> f64 {
        self.min_inside_fraction
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }
}

/// Builds the AOI of one location from all ground-truth masks (every class)
/// of the images in `split_name`. Test splits are refused so that test
/// labels never shape the filter.
pub fn build_aoi(manifest: &DatasetManifest, location_id: u32, split_name: &str) -> Result<AreaOfInterest> {
    let loc = manifest
        .location(location_id)
        .ok_or_else(|| Error::invalid(format!("unknown location {location_id}")))?;
    let images = loc
        .split_images(split_name)
        .ok_or_else(|| Error::invalid(format!("location {location_id} has no split {split_name:?}")))?;
    if loc.is_test_split(split_name) {
        return Err(Error::invalid(format!(
            "refusing to build an area of interest from test split {split_name:?}"
        )));
    }
    let mut union: Option<BitGrid> = None;
    for img in images {
        for m in &img.instance_masks {
            let grid = read_mask_grid(manifest.resolve(&m.path))?;
            match &mut union {
                None => union = Some(grid),
                Some(u) => u.union_with(&grid)?,
            }
        }
    }
    match union {
        Some(mask) if mask.any() => AreaOfInterest::new(mask, AreaOfInterest::DEFAULT_MIN_INSIDE_FRACTION),
        _ => Err(Error::invalid(format!(
            "location {location_id} split {split_name:?} yields an empty area of interest"
        ))),
    }
}

/// Keeps the connected components of each predicted mask whose inside-AOI
/// fraction reaches `min_inside_fraction`. Surviving components of one mask
/// are recombined; masks with nothing left are dropped.
pub fn aoi_filter(predicted: &[InstanceMask], aoi: &AreaOfInterest) -> Result<Vec<InstanceMask>> {
    let mut out = Vec::with_capacity(predicted.len());
    for (i, m) in predicted.iter().enumerate() {
        aoi.dims().ensure_eq(m.dims(), || format!("predicted mask {i} vs area of interest"))?;
        let labels = ComponentLabels::compute(m.grid(), aoi.connectivity);
        let mut inside = vec![0usize; labels.count() + 1];
        for (&l, &a) in labels.labels().iter().zip(aoi.mask.bits()) {
            if l != 0 && a {
                inside[l as usize] += 1;
            }
        }
        let kept = labels.select(|l| inside[l as usize] as f64 / labels.size(l) as f64 >= aoi.min_inside_fraction);
        if let Some(mask) = InstanceMask::non_empty(kept, m.class(), m.source()) {
            out.push(mask);
        }
    }
    Ok(out)
}
