//! On-disk formats: `RSEG` rasters, `RFLD` scalar fields, `RRGB` images,
//! the JSON dataset manifest and the CSV evaluation report.
//!
//! All binary formats are little-endian with a four-byte magic followed by
//! `u32` width and height:
//!
//! ```text
//! RSEG  magic "RSEG" | u8 kind (0 label, 1 mask) | u32 w | u32 h | w*h bytes
//! RFLD  magic "RFLD" | u32 w | u32 h | w*h f32
//! RRGB  magic "RRGB" | u32 w | u32 h | w*h*3 bytes (r, g, b)
//! ```

mod binary;
pub mod manifest;
pub mod report;

use thiserror::Error;

pub use binary::{
    decode_field, decode_raster, decode_rgb, encode_field, encode_label, encode_mask, encode_rgb,
    read_embedding, read_field, read_label_raster, read_mask, read_mask_grid, read_raster, read_rgb,
    write_embedding, write_field, write_label_raster, write_mask, write_mask_grid, write_rgb,
    RasterFile, FIELD_MAGIC, RASTER_MAGIC, RGB_MAGIC,
};
pub use manifest::{
    read_manifest, DatasetManifest, FlowGeometry, DownstreamAxis, ImageEntry, LocationEntry,
    ManifestError, MaskRef, Predictions, PromptCandidate, SplitPair,
};
pub use report::{render_table, write_report_csv, NOT_AVAILABLE};

/// Decoding failures for the binary formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unknown raster kind {0}")]
    UnknownKind(u8),

    #[error("header truncated: {actual} bytes, need {expected}")]
    TruncatedHeader { expected: usize, actual: usize },

    #[error("payload truncated: {actual} bytes, need {expected}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },

    #[error("class code {code} out of range at pixel {index}")]
    ClassCodeOutOfRange { index: usize, code: u8 },

    #[error("mask value {value} at pixel {index} is not 0 or 1")]
    MaskValueOutOfRange { index: usize, value: u8 },

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("expected a {expected} raster, found a {found} raster")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("mask has no set pixels")]
    EmptyMask,

    #[error("embedding must have height 1, found {height}")]
    NotAnEmbedding { height: u32 },
}
