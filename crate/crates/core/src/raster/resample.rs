use serde::{Deserialize, Serialize};

use super::{Dims, ScalarField};
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    /// Source index `floor(dst * src_len / dst_len)`; copies values exactly.
    Nearest,
    /// Half-pixel-centre alignment with edge clamping.
    #[default]
    Bilinear,
}

/// Resizes `field` to `new_width x new_height`.
pub fn resample_field(
    field: &ScalarField,
    new_width: usize,
    new_height: usize,
    method: ResampleMethod,
) -> Result<ScalarField> {
    let dst = Dims::new(new_width, new_height)?;
    let src = field.dims();
    if dst == src {
        return Ok(field.clone());
    }
    let values = match method {
        ResampleMethod::Nearest => nearest(field, dst),
        ResampleMethod::Bilinear => bilinear(field, dst),
    };
    ScalarField::new(dst, values)
}

fn nearest(field: &ScalarField, dst: Dims) -> Vec<f32> {
    let src = field.dims();
    let xs: Vec<usize> = (0..dst.width).map(|x| x * src.width / dst.width).collect();
    let mut out = Vec::with_capacity(dst.len());
    for y in 0..dst.height {
        let sy = y * src.height / dst.height;
        out.extend(xs.iter().map(|&sx| field.get(sx, sy)));
    }
    out
}

/// Source sample positions and weights for one axis.
fn axis_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    let max = (src_len - 1) as f64;
    (0..dst_len)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn bilinear(field: &ScalarField, dst: Dims) -> Vec<f32> {
    let src = field.dims();
    let xt = axis_taps(src.width, dst.width);
    let yt = axis_taps(src.height, dst.height);
    let mut out = Vec::with_capacity(dst.len());
    for &(y0, y1, fy) in &yt {
        for &(x0, x1, fx) in &xt {
            let top = lerp(field.get(x0, y0) as f64, field.get(x1, y0) as f64, fx);
            let bottom = lerp(field.get(x0, y1) as f64, field.get(x1, y1) as f64, fx);
            out.push(lerp(top, bottom, fy) as f32);
        }
    }
    out
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}
