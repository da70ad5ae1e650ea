//! Evaluation measures.
//!
//! All predicted masks of an image are merged into one mask `P` before they
//! are compared against the merged ground truth of each class. Values are
//! kept in the unit interval; percentages only appear when rendering tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BitGrid, ClassId, ComponentLabels, Connectivity, Dims, InstanceMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBin {
    Small,
    Medium,
    Large,
}

impl SizeBin {
    pub const ALL: [SizeBin; 3] = [SizeBin::Small, SizeBin::Medium, SizeBin::Large];
}

/// Pixel-count thresholds for size bins: `area <= small_max` is small,
/// `area <= medium_max` medium, anything larger is large.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSizeBins")]
pub struct SizeBins {
    small_max: usize,
    medium_max: usize,
}

#[derive(Deserialize)]
struct RawSizeBins {
    small_max: usize,
    medium_max: usize,
}

impl TryFrom<RawSizeBins> for SizeBins {
    type Error = Error;

    fn try_from(raw: RawSizeBins) -> Result<Self> {
        SizeBins::new(raw.small_max, raw.medium_max)
    }
}

impl SizeBins {
    pub fn new(small_max: usize, medium_max: usize) -> Result<Self> {
        if small_max == 0 || small_max >= medium_max {
            return Err(Error::invalid(format!(
                "size bins need 0 < small_max < medium_max, got {small_max} and {medium_max}"
            )));
        }
        Ok(SizeBins {
            small_max,
            medium_max,
        })
    }

    pub fn small_max(&self) -> usize {
        self.small_max
    }

    pub fn medium_max(&self) -> usize {
        self.medium_max
    }

    pub fn classify(&self, area: usize) -> SizeBin {
        if area <= self.small_max {
            SizeBin::Small
        } else if area <= self.medium_max {
            SizeBin::Medium
        } else {
            SizeBin::Large
        }
    }
}

impl Default for SizeBins {
    fn default() -> Self {
        SizeBins {
            small_max: 1024,
            medium_max: 16_384,
        }
    }
}

/// Signed, normalised size error `(g - p) / g` split into its two signs.
/// Exactly one slot is populated when the image has in-system ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Hamming {
    /// Underestimation, `p <= g`.
    pub positive: Option<f64>,
    /// Overestimation magnitude, `p > g`.
    pub negative: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerImageMetrics {
    /// Classes missing from the ground truth are absent from the map.
    pub iou_by_class: BTreeMap<ClassId, f64>,
    pub binned_iou: BTreeMap<SizeBin, f64>,
    pub hamming: Hamming,
}

fn common_dims<'a>(groups: &[&'a [InstanceMask]]) -> Result<Option<Dims>> {
    let mut dims: Option<Dims> = None;
    for (g, masks) in groups.iter().enumerate() {
        for (i, m) in masks.iter().enumerate() {
            match dims {
                None => dims = Some(m.dims()),
                Some(d) => d.ensure_eq(m.dims(), || {
                    let which = if g == 0 { "predicted" } else { "ground-truth" };
                    format!("{which} mask {i}")
                })?,
            }
        }
    }
    Ok(dims)
}

fn union_of<'a>(dims: Dims, masks: impl IntoIterator<Item = &'a InstanceMask>) -> Result<BitGrid> {
    BitGrid::union_all(dims, masks.into_iter().map(InstanceMask::grid))
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn iou(a: &InstanceMask, b: &InstanceMask) -> Result<f64> {
    a.dims().ensure_eq(b.dims(), || "iou".into())?;
    let inter = a.grid().intersection_count(b.grid())?;
    let union = a.grid().union_count(b.grid())?;
    Ok(ratio(inter, union))
}

/// Combined-mask IoU of all predictions against each ground-truth class.
pub fn per_class_iou(predicted: &[InstanceMask], truth: &[InstanceMask]) -> Result<BTreeMap<ClassId, f64>> {
    let Some(dims) = common_dims(&[predicted, truth])? else {
        return Ok(BTreeMap::new());
    };
    let p = union_of(dims, predicted)?;
    let mut by_class: BTreeMap<ClassId, BitGrid> = BTreeMap::new();
    for m in truth {
        by_class
            .entry(m.class())
            .or_insert_with(|| BitGrid::new(dims))
            .union_with(m.grid())?;
    }
    by_class
        .into_iter()
        .map(|(class, g)| Ok((class, ratio(p.intersection_count(&g)?, p.union_count(&g)?))))
        .collect()
}

/// Size-binned IoU over in-system ground-truth instances using 8-connectivity.
pub fn binned_iou(
    predicted: &[InstanceMask],
    truth_in_system: &[InstanceMask],
    bins: &SizeBins,
) -> Result<BTreeMap<SizeBin, f64>> {
    binned_iou_with(predicted, truth_in_system, bins, Connectivity::Eight)
}

/// Each ground-truth instance `G` is matched to the union of the connected
/// components of the combined prediction that touch it; its IoU is taken
/// against that union (0 when nothing touches it). Bin values are the mean
/// instance IoU within each bin; empty bins are absent.
pub fn binned_iou_with(
    predicted: &[InstanceMask],
    truth_in_system: &[InstanceMask],
    bins: &SizeBins,
    connectivity: Connectivity,
) -> Result<BTreeMap<SizeBin, f64>> {
    let Some(dims) = common_dims(&[predicted, truth_in_system])? else {
        return Ok(BTreeMap::new());
    };
    let p = union_of(dims, predicted)?;
    let labels = ComponentLabels::compute(&p, connectivity);

    let mut sums: BTreeMap<SizeBin, (f64, usize)> = BTreeMap::new();
    for g in truth_in_system {
        let mut touching = vec![false; labels.count() + 1];
        for i in g.grid().set_indices() {
            touching[labels.labels()[i] as usize] = true;
        }
        touching[0] = false;
        let mut inter = 0usize;
        let mut matched = 0usize;
        for (label, &t) in touching.iter().enumerate().skip(1) {
            if t {
                matched += labels.size(label as u32);
            }
        }
        for i in g.grid().set_indices() {
            if touching[labels.labels()[i] as usize] {
                inter += 1;
            }
        }
        let area = g.area();
        let value = ratio(inter, matched + area - inter);
        let entry = sums.entry(bins.classify(area)).or_insert((0.0, 0));
        entry.0 += value;
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(bin, (sum, n))| (bin, sum / n as f64))
        .collect())
}

/// Signed normalised pixel-count difference between merged ground truth and
/// merged prediction. Without ground truth both slots are absent.
pub fn hamming(predicted: &[InstanceMask], truth_in_system: &[InstanceMask]) -> Result<Hamming> {
    let Some(dims) = common_dims(&[predicted, truth_in_system])? else {
        return Ok(Hamming::default());
    };
    let g = union_of(dims, truth_in_system)?.count();
    if g == 0 {
        return Ok(Hamming::default());
    }
    let p = union_of(dims, predicted)?.count();
    let h = (g as f64 - p as f64) / g as f64;
    Ok(if h >= 0.0 {
        Hamming {
            positive: Some(h),
            negative: None,
        }
    } else {
        Hamming {
            positive: None,
            negative: Some(-h),
        }
    })
}

/// All per-image measures. `truth` holds ground-truth masks of every class;
/// binned IoU and Hamming use only the in-system ones.
pub fn evaluate_image(predicted: &[InstanceMask], truth: &[InstanceMask], bins: &SizeBins) -> Result<PerImageMetrics> {
    let in_system: Vec<InstanceMask> = truth
        .iter()
        .filter(|m| m.class() == ClassId::InSystemTrash)
        .cloned()
        .collect();
    Ok(PerImageMetrics {
        iou_by_class: per_class_iou(predicted, truth)?,
        binned_iou: binned_iou(predicted, &in_system, bins)?,
        hamming: hamming(predicted, &in_system)?,
    })
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// `None` for an empty sample. Values are summed in sorted order so the
    /// result does not depend on input order.
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
        sq.sort_by(f64::total_cmp);
        let var = sq.iter().sum::<f64>() / n;
        Some(Stat { mean, std: var.sqrt() })
    }
}

/// Aggregate of the per-image metrics of one location.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocationSummary {
    pub images: usize,
    pub iou_by_class: BTreeMap<ClassId, Stat>,
    pub binned_iou: BTreeMap<SizeBin, Stat>,
    pub hamming_positive: Option<Stat>,
    pub hamming_negative: Option<Stat>,
}

pub fn aggregate(per_image: &[PerImageMetrics]) -> LocationSummary {
    let collect = |f: &dyn Fn(&PerImageMetrics) -> Option<f64>| -> Option<Stat> {
        let vals: Vec<f64> = per_image.iter().filter_map(f).collect();
        Stat::of(&vals)
    };
    let iou_by_class = ClassId::ALL
        .into_iter()
        .filter_map(|c| collect(&|m| m.iou_by_class.get(&c).copied()).map(|s| (c, s)))
        .collect();
    let binned_iou = SizeBin::ALL
        .into_iter()
        .filter_map(|b| collect(&|m| m.binned_iou.get(&b).copied()).map(|s| (b, s)))
        .collect();
    LocationSummary {
        images: per_image.len(),
        iou_by_class,
        binned_iou,
        hamming_positive: collect(&|m| m.hamming.positive),
        hamming_negative: collect(&|m| m.hamming.negative),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub location_id: u32,
    pub run: String,
    pub summary: LocationSummary,
}

/// Per-location, per-run aggregates. Rows are kept sorted by
/// `(location_id, run)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: ReportRow) {
        let at = self
            .rows
            .partition_point(|r| (r.location_id, r.run.as_str()) <= (row.location_id, row.run.as_str()));
        self.rows.insert(at, row);
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn row(&self, location_id: u32, run: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.location_id == location_id && r.run == run)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
