//! Raster domain types and the pure grid algorithms shared by every other
//! module: connected components, centroids, resampling and mask union.

mod components;
mod resample;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use components::{connected_components, ComponentLabels, Connectivity};
pub use resample::{resample_field, ResampleMethod};

/// Semantic class of a pixel or mask. The numeric code is the on-disk value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassId {
    InSystemTrash = 0,
    OutSystemTrash = 1,
    Water = 2,
    Barrier = 3,
    /// Raster fill for pixels that carry no annotation.
    Unlabeled = 4,
}

impl ClassId {
    pub const ALL: [ClassId; 5] = [
        ClassId::InSystemTrash,
        ClassId::OutSystemTrash,
        ClassId::Water,
        ClassId::Barrier,
        ClassId::Unlabeled,
    ];

    /// Classes that can appear as ground-truth annotations, in report column order.
    pub const ANNOTATED: [ClassId; 4] = [
        ClassId::InSystemTrash,
        ClassId::Water,
        ClassId::OutSystemTrash,
        ClassId::Barrier,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<ClassId> {
        ClassId::ALL.get(code as usize).copied()
    }

    /// Short label used in report headers.
    pub fn short_name(self) -> &'static str {
        match self {
            ClassId::InSystemTrash => "In",
            ClassId::OutSystemTrash => "Out",
            ClassId::Water => "Water",
            ClassId::Barrier => "Barrier",
            ClassId::Unlabeled => "Unlabeled",
        }
    }

    pub fn is_trash(self) -> bool {
        matches!(self, ClassId::InSystemTrash | ClassId::OutSystemTrash)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        Ok(Dims { width, height })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub(crate) fn ensure_eq(&self, other: Dims, context: impl FnOnce() -> String) -> Result<()> {
        if *self != other {
            return Err(Error::DimensionMismatch {
                context: context(),
                expected: *self,
                found: other,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Integer pixel location: `x` is the column, `y` the row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: usize,
    pub y: usize,
}

/// Real-valued mean location of a set of pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
}

/// Row-major binary grid. Unlike [`InstanceMask`] it may be empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitGrid {
    dims: Dims,
    bits: Vec<bool>,
}

impl BitGrid {
    pub fn new(dims: Dims) -> Self {
        BitGrid {
            dims,
            bits: vec![false; dims.len()],
        }
    }

    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: bits.len(),
            });
        }
        Ok(BitGrid { dims, bits })
    }

    /// Builds a grid from a predicate over `(x, y)`.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                bits.push(f(x, y));
            }
        }
        BitGrid { dims, bits }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[self.dims.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let i = self.dims.index(x, y);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    /// Row-major indices of set pixels.
    pub fn set_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn union_with(&mut self, other: &BitGrid) -> Result<()> {
        self.dims.ensure_eq(other.dims, || "mask union".into())?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BitGrid) -> Result<usize> {
        self.dims.ensure_eq(other.dims, || "mask intersection".into())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn union_count(&self, other: &BitGrid) -> Result<usize> {
        self.dims.ensure_eq(other.dims, || "mask union".into())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a || b)
            .count())
    }

    /// True if every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BitGrid) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Mean location of set pixels, or `None` for an empty grid.
    pub fn centroid(&self) -> Option<Centroid> {
        let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
        for i in self.set_indices() {
            sx += (i % self.dims.width) as f64;
            sy += (i / self.dims.width) as f64;
            n += 1;
        }
        (n > 0).then(|| Centroid {
            x: sx / n as f64,
            y: sy / n as f64,
        })
    }

    /// Pixelwise OR of `grids`; an empty iterator yields an all-clear grid.
    pub fn union_all<'a>(dims: Dims, grids: impl IntoIterator<Item = &'a BitGrid>) -> Result<BitGrid> {
        let mut out = BitGrid::new(dims);
        for g in grids {
            out.union_with(g)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    GroundTruth,
    Predicted,
}

/// A non-empty binary mask tagged with its class and provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMask {
    grid: BitGrid,
    class: ClassId,
    source: MaskSource,
}

impl InstanceMask {
    pub fn new(grid: BitGrid, class: ClassId, source: MaskSource) -> Result<Self> {
        if !grid.any() {
            return Err(Error::EmptyMask);
        }
        Ok(InstanceMask {
            grid,
            class,
            source,
        })
    }

    /// Like [`InstanceMask::new`] but returns `None` for an empty grid.
    pub fn non_empty(grid: BitGrid, class: ClassId, source: MaskSource) -> Option<Self> {
        InstanceMask::new(grid, class, source).ok()
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims
    }

    pub fn grid(&self) -> &BitGrid {
        &self.grid
    }

    pub fn into_grid(self) -> BitGrid {
        self.grid
    }

    pub fn class(&self) -> ClassId {
        self.class
    }

    pub fn source(&self) -> MaskSource {
        self.source
    }

    pub fn with_class(mut self, class: ClassId) -> Self {
        self.class = class;
        self
    }

    pub fn area(&self) -> usize {
        self.grid.count()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.grid.get(x, y)
    }
}

/// Mean of the set-pixel coordinates. Not rounded.
pub fn centroid(mask: &InstanceMask) -> Centroid {
    mask.grid
        .centroid()
        .expect("instance masks are non-empty by construction")
}

/// Pixelwise OR of `masks`, tagged with `class` and the first mask's source.
///
/// Fails on an empty list or if any mask's dimensions differ from the first;
/// the error names the offending index.
pub fn combine_masks(masks: &[InstanceMask], class: ClassId) -> Result<InstanceMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::invalid("combine_masks: empty mask list"))?;
    let dims = first.dims();
    let mut grid = first.grid.clone();
    for (i, m) in masks.iter().enumerate().skip(1) {
        dims.ensure_eq(m.dims(), || format!("mask {i}"))?;
        grid.union_with(&m.grid)?;
    }
    Ok(InstanceMask {
        grid,
        class,
        source: first.source,
    })
}

/// Per-pixel class grid for one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    dims: Dims,
    data: Vec<ClassId>,
}

impl LabelRaster {
    pub fn filled(dims: Dims, class: ClassId) -> Self {
        LabelRaster {
            dims,
            data: vec![class; dims.len()],
        }
    }

    pub fn from_classes(dims: Dims, data: Vec<ClassId>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(LabelRaster { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[ClassId] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.data[self.dims.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, class: ClassId) {
        let i = self.dims.index(x, y);
        self.data[i] = class;
    }

    pub fn class_grid(&self, class: ClassId) -> BitGrid {
        BitGrid {
            dims: self.dims,
            bits: self.data.iter().map(|&c| c == class).collect(),
        }
    }

    /// Paints every set pixel of `grid` with `class`.
    pub fn paint(&mut self, grid: &BitGrid, class: ClassId) -> Result<()> {
        self.dims.ensure_eq(grid.dims(), || "paint".into())?;
        for i in grid.set_indices() {
            self.data[i] = class;
        }
        Ok(())
    }
}

/// Row-major grid of finite `f32` values (similarity matrices, logit maps,
/// embeddings stored with height 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    dims: Dims,
    values: Vec<f32>,
}

impl ScalarField {
    pub fn new(dims: Dims, values: Vec<f32>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ScalarField { dims, values })
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        ScalarField::new(dims, vec![value; dims.len()])
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                values.push(f(x, y));
            }
        }
        ScalarField::new(dims, values)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[self.dims.index(x, y)]
    }

    /// Location of the largest value; ties resolve to the smallest row-major index.
    pub fn argmax(&self) -> PixelPoint {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        PixelPoint {
            x: best % self.dims.width,
            y: best / self.dims.width,
        }
    }

    pub fn mean(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|&v| v as f64).sum();
        sum / self.values.len() as f64
    }
}

/// 8-bit RGB image, row-major `(r, g, b)` triples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    dims: Dims,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * dims.len() {
            return Err(Error::LengthMismatch {
                expected: 3 * dims.len(),
                actual: data.len(),
            });
        }
        Ok(RgbImage { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RgbImage { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Pixel at row-major index `i`.
    #[inline]
    pub fn pixel(&self, i: usize) -> [u8; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }
}
