//! CSV and plain-text renderings of an [`EvalReport`].

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{EvalReport, LocationSummary, SizeBin, Stat};
use crate::raster::ClassId;

/// Cell text for a measure whose class or bin is missing from the ground truth.
pub const NOT_AVAILABLE: &str = "N.A.";

pub const CSV_HEADER: [&str; 15] = [
    "location_id",
    "run",
    "mIoU-In",
    "σ-In",
    "mIoU-Water",
    "σ-Water",
    "mIoU-Out",
    "σ-Out",
    "mIoU-Barrier",
    "σ-Barrier",
    "binned-small",
    "binned-medium",
    "binned-large",
    "hamming-positive",
    "hamming-negative",
];

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| NOT_AVAILABLE.to_string(), |v| v.to_string())
}

fn summary_cells(s: &LocationSummary) -> Vec<String> {
    let mut cells = Vec::with_capacity(13);
    for class in ClassId::ANNOTATED {
        let st = s.iou_by_class.get(&class);
        cells.push(num(st.map(|s| s.mean)));
        cells.push(num(st.map(|s| s.std)));
    }
    for bin in SizeBin::ALL {
        cells.push(num(s.binned_iou.get(&bin).map(|s| s.mean)));
    }
    cells.push(num(s.hamming_positive.map(|s| s.mean)));
    cells.push(num(s.hamming_negative.map(|s| s.mean)));
    cells
}

/// Writes the report as CSV. Values are unit-interval fractions printed with
/// shortest round-trip formatting; absent measures are `N.A.`.
pub fn write_report_csv_to<W: Write>(report: &EvalReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in report.rows() {
        let mut rec = vec![row.location_id.to_string(), row.run.clone()];
        rec.extend(summary_cells(&row.summary));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_report_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_report_csv_to(report, file)
}

fn pct(s: Option<&Stat>, with_std: bool) -> String {
    match s {
        None => NOT_AVAILABLE.to_string(),
        Some(s) if with_std => format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std),
        Some(s) => format!("{:.1}", 100.0 * s.mean),
    }
}

/// Human-readable table in percent, one line per row.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::from(
        "loc | run | In | Water | Out | Barrier | small | medium | large | H+ | H-\n",
    );
    for row in report.rows() {
        let s = &row.summary;
        let mut cells = vec![row.location_id.to_string(), row.run.clone()];
        for class in ClassId::ANNOTATED {
            cells.push(pct(s.iou_by_class.get(&class), true));
        }
        for bin in SizeBin::ALL {
            cells.push(pct(s.binned_iou.get(&bin), false));
        }
        cells.push(pct(s.hamming_positive.as_ref(), false));
        cells.push(pct(s.hamming_negative.as_ref(), false));
        out.push_str(&cells.join(" | "));
        out.push('\n');
    }
    out
}
