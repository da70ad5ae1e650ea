//! Evaluation and refinement toolkit for semantic-segmentation predictions of
//! floating river trash.
//!
//! The crate works entirely on file-based prediction artifacts: label rasters,
//! binary masks, logit and similarity fields, and embeddings. No neural model
//! is needed to evaluate or refine predictions.
//!
//! - [`raster`]: domain types, connected components, centroids, resampling.
//! - [`formats`]: `RSEG`/`RFLD`/`RRGB` binary files, the JSON manifest and CSV reports.
//! - [`metrics`]: combined-mask per-class IoU, size-binned IoU, signed Hamming, aggregation.
//! - [`postproc`]: area-of-interest and barrier filters, logit cutoff, patch tiling.
//! - [`promptsel`]: iterative similarity-matrix mask extraction and prompt matching.
//! - [`forest`]: random-forest RGB pixel baseline.
//! - [`pipeline`]: the batch commands behind the `riverseg` binary.
//! - [`synth`]: deterministic synthetic fixture datasets.

pub mod error;
pub mod forest;
pub mod formats;
pub mod metrics;
pub mod pipeline;
pub mod postproc;
pub mod promptsel;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
