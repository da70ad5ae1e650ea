//! Patch-grid refinement: split an image into a grid, predict each patch at a
//! fixed working size, resample back and stitch the results together.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{resample_field, Dims, ResampleMethod, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRect {
    pub fn dims(&self) -> Dims {
        Dims {
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    /// Size each patch is resampled to before prediction.
    #[serde(default = "PatchGrid::default_working_size")]
    pub working_size: (usize, usize),
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("patch grid {rows}x{cols} must be positive")));
        }
        Ok(PatchGrid {
            rows,
            cols,
            working_size: Self::default_working_size(),
        })
    }

    fn default_working_size() -> (usize, usize) {
        (448, 448)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major tiling of a `dims` image into `grid.rows x grid.cols` rectangles.
/// Remainder pixels of non-divisible dimensions go to the last row/column.
pub fn split_patches(dims: Dims, grid: &PatchGrid) -> Result<Vec<PixelRect>> {
    if grid.rows == 0 || grid.cols == 0 {
        return Err(Error::invalid("patch grid must have at least one row and column"));
    }
    if grid.cols > dims.width || grid.rows > dims.height {
        return Err(Error::invalid(format!(
            "{}x{} grid does not fit a {dims} image",
            grid.rows, grid.cols
        )));
    }
    let (bw, bh) = (dims.width / grid.cols, dims.height / grid.rows);
    let mut rects = Vec::with_capacity(grid.len());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let x = c * bw;
            let y = r * bh;
            let width = if c + 1 == grid.cols { dims.width - x } else { bw };
            let height = if r + 1 == grid.rows { dims.height - y } else { bh };
            rects.push(PixelRect { x, y, width, height });
        }
    }
    Ok(rects)
}

pub fn crop_field(field: &ScalarField, rect: PixelRect) -> Result<ScalarField> {
    if rect.width == 0 || rect.height == 0 || rect.x + rect.width > field.width() || rect.y + rect.height > field.height() {
        return Err(Error::invalid(format!("{rect:?} lies outside a {} field", field.dims())));
    }
    ScalarField::from_fn(rect.dims(), |x, y| field.get(rect.x + x, rect.y + y))
}

/// Stitches per-patch fields into one field whose extent is the bounding box
/// of the rectangles. Each field must already match its rectangle's size.
/// Gaps and overlaps are errors.
pub fn merge_patches(patches: &[(PixelRect, ScalarField)]) -> Result<ScalarField> {
    if patches.is_empty() {
        return Err(Error::invalid("merge_patches: no patches"));
    }
    let width = patches.iter().map(|(r, _)| r.x + r.width).max().unwrap_or(0);
    let height = patches.iter().map(|(r, _)| r.y + r.height).max().unwrap_or(0);
    let dims = Dims::new(width, height)?;
    let mut values = vec![0.0f32; dims.len()];
    let mut owner = vec![usize::MAX; dims.len()];
    for (k, (rect, field)) in patches.iter().enumerate() {
        rect.dims().ensure_eq(field.dims(), || format!("patch {k} field vs rectangle {rect:?}"))?;
        for y in 0..rect.height {
            for x in 0..rect.width {
                let i = dims.index(rect.x + x, rect.y + y);
                if owner[i] != usize::MAX {
                    return Err(Error::invalid(format!(
                        "patch {k} {rect:?} overlaps patch {} at ({}, {})",
                        owner[i],
                        rect.x + x,
                        rect.y + y
                    )));
                }
                owner[i] = k;
                values[i] = field.get(x, y);
            }
        }
    }
    if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(Error::invalid(format!(
            "patches leave pixel ({}, {}) uncovered",
            i % width,
            i / width
        )));
    }
    ScalarField::new(dims, values)
}

/// Runs `predict` on every patch (in parallel), resamples each result to its
/// rectangle with `method` and merges them into a `dims` field.
pub fn process_patches<F>(dims: Dims, grid: &PatchGrid, method: ResampleMethod, predict: F) -> Result<ScalarField>
where
    F: Fn(usize, PixelRect) -> Result<ScalarField> + Sync,
{
    let rects = split_patches(dims, grid)?;
    let fields = rects
        .par_iter()
        .enumerate()
        .map(|(k, &rect)| {
            let f = predict(k, rect)?;
            Ok((rect, resample_field(&f, rect.width, rect.height, method)?))
        })
        .collect::<Result<Vec<_>>>()?;
    merge_patches(&fields)
}
