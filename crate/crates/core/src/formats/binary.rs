use std::fs;
use std::path::Path;

use super::FormatError;
use crate::error::{Error, Result};
use crate::promptsel::EmbeddingVector;
use crate::raster::{BitGrid, ClassId, Dims, InstanceMask, LabelRaster, MaskSource, RgbImage, ScalarField};

pub const RASTER_MAGIC: &[u8; 4] = b"RSEG";
pub const FIELD_MAGIC: &[u8; 4] = b"RFLD";
pub const RGB_MAGIC: &[u8; 4] = b"RRGB";

const KIND_LABEL: u8 = 0;
const KIND_MASK: u8 = 1;

/// Decoded contents of an `RSEG` file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RasterFile {
    Label(LabelRaster),
    /// Mask payload; may have no set pixels.
    Mask(BitGrid),
}

impl RasterFile {
    fn kind_name(&self) -> &'static str {
        match self {
            RasterFile::Label(_) => "label",
            RasterFile::Mask(_) => "mask",
        }
    }
}

struct Header {
    dims: Dims,
    payload_offset: usize,
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<(), FormatError> {
    let found = &bytes[..bytes.len().min(4)];
    if found != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn parse_dims(bytes: &[u8], at: usize) -> Result<Dims, FormatError> {
    let (width, height) = (read_u32(bytes, at), read_u32(bytes, at + 4));
    if width == 0 || height == 0 {
        return Err(FormatError::InvalidDimensions { width, height });
    }
    Ok(Dims {
        width: width as usize,
        height: height as usize,
    })
}

fn check_payload(bytes: &[u8], header: &Header, elem_size: usize) -> Result<(), FormatError> {
    let expected = header.dims.len() * elem_size;
    let actual = bytes.len() - header.payload_offset;
    if actual < expected {
        return Err(FormatError::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(FormatError::TrailingBytes {
            extra: actual - expected,
        });
    }
    Ok(())
}

fn header_bytes(magic: &[u8; 4], kind: Option<u8>, dims: Dims, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + payload);
    out.extend_from_slice(magic);
    if let Some(k) = kind {
        out.push(k);
    }
    out.extend_from_slice(&(dims.width as u32).to_le_bytes());
    out.extend_from_slice(&(dims.height as u32).to_le_bytes());
    out
}

pub fn decode_raster(bytes: &[u8]) -> Result<RasterFile, FormatError> {
    const HEADER: usize = 13;
    check_magic(bytes, RASTER_MAGIC)?;
    if bytes.len() < HEADER {
        return Err(FormatError::TruncatedHeader {
            expected: HEADER,
            actual: bytes.len(),
        });
    }
    let kind = bytes[4];
    if kind != KIND_LABEL && kind != KIND_MASK {
        return Err(FormatError::UnknownKind(kind));
    }
    let header = Header {
        dims: parse_dims(bytes, 5)?,
        payload_offset: HEADER,
    };
    check_payload(bytes, &header, 1)?;
    let payload = &bytes[HEADER..];
    if kind == KIND_LABEL {
        let data = payload
            .iter()
            .enumerate()
            .map(|(index, &code)| {
                ClassId::from_code(code).ok_or(FormatError::ClassCodeOutOfRange { index, code })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RasterFile::Label(
            LabelRaster::from_classes(header.dims, data).expect("length checked"),
        ))
    } else {
        let bits = payload
            .iter()
            .enumerate()
            .map(|(index, &value)| match value {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(FormatError::MaskValueOutOfRange { index, value }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RasterFile::Mask(
            BitGrid::from_bits(header.dims, bits).expect("length checked"),
        ))
    }
}

pub fn encode_label(raster: &LabelRaster) -> Vec<u8> {
    let mut out = header_bytes(RASTER_MAGIC, Some(KIND_LABEL), raster.dims(), raster.dims().len());
    out.extend(raster.data().iter().map(|c| c.code()));
    out
}

pub fn encode_mask(grid: &BitGrid) -> Vec<u8> {
    let mut out = header_bytes(RASTER_MAGIC, Some(KIND_MASK), grid.dims(), grid.dims().len());
    out.extend(grid.bits().iter().map(|&b| b as u8));
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<ScalarField, FormatError> {
    const HEADER: usize = 12;
    check_magic(bytes, FIELD_MAGIC)?;
    if bytes.len() < HEADER {
        return Err(FormatError::TruncatedHeader {
            expected: HEADER,
            actual: bytes.len(),
        });
    }
    let header = Header {
        dims: parse_dims(bytes, 4)?,
        payload_offset: HEADER,
    };
    check_payload(bytes, &header, 4)?;
    let values: Vec<f32> = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite { index });
    }
    Ok(ScalarField::new(header.dims, values).expect("validated above"))
}

pub fn encode_field(field: &ScalarField) -> Vec<u8> {
    let mut out = header_bytes(FIELD_MAGIC, None, field.dims(), 4 * field.dims().len());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, FormatError> {
    const HEADER: usize = 12;
    check_magic(bytes, RGB_MAGIC)?;
    if bytes.len() < HEADER {
        return Err(FormatError::TruncatedHeader {
            expected: HEADER,
            actual: bytes.len(),
        });
    }
    let header = Header {
        dims: parse_dims(bytes, 4)?,
        payload_offset: HEADER,
    };
    check_payload(bytes, &header, 3)?;
    Ok(RgbImage::new(header.dims, bytes[HEADER..].to_vec()).expect("length checked"))
}

pub fn encode_rgb(image: &RgbImage) -> Vec<u8> {
    let mut out = header_bytes(RGB_MAGIC, None, image.dims(), image.data().len());
    out.extend_from_slice(image.data());
    out
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_at<T>(path: &Path, r: Result<T, FormatError>) -> Result<T> {
    r.map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterFile> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    decode_at(path, decode_raster(&bytes))
}

pub fn read_label_raster(path: impl AsRef<Path>) -> Result<LabelRaster> {
    let path = path.as_ref();
    match read_raster(path)? {
        RasterFile::Label(l) => Ok(l),
        other => decode_at(
            path,
            Err(FormatError::WrongKind {
                expected: "label",
                found: other.kind_name(),
            }),
        ),
    }
}

/// Reads a mask file; the grid may be empty.
pub fn read_mask_grid(path: impl AsRef<Path>) -> Result<BitGrid> {
    let path = path.as_ref();
    match read_raster(path)? {
        RasterFile::Mask(m) => Ok(m),
        other => decode_at(
            path,
            Err(FormatError::WrongKind {
                expected: "mask",
                found: other.kind_name(),
            }),
        ),
    }
}

/// Reads a mask file as an [`InstanceMask`]; an all-zero payload is an error.
pub fn read_mask(path: impl AsRef<Path>, class: ClassId, source: MaskSource) -> Result<InstanceMask> {
    let path = path.as_ref();
    let grid = read_mask_grid(path)?;
    match InstanceMask::non_empty(grid, class, source) {
        Some(m) => Ok(m),
        None => decode_at(path, Err(FormatError::EmptyMask)),
    }
}

pub fn write_label_raster(path: impl AsRef<Path>, raster: &LabelRaster) -> Result<()> {
    write_bytes(path.as_ref(), &encode_label(raster))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &InstanceMask) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(mask.grid()))
}

pub fn write_mask_grid(path: impl AsRef<Path>, grid: &BitGrid) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(grid))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    decode_at(path, decode_field(&bytes))
}

pub fn write_field(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    write_bytes(path.as_ref(), &encode_field(field))
}

/// Embeddings are `RFLD` files with height 1.
pub fn read_embedding(path: impl AsRef<Path>) -> Result<EmbeddingVector> {
    let path = path.as_ref();
    let field = read_field(path)?;
    if field.height() != 1 {
        return decode_at(
            path,
            Err(FormatError::NotAnEmbedding {
                height: field.height() as u32,
            }),
        );
    }
    EmbeddingVector::new(field.into_values())
}

pub fn write_embedding(path: impl AsRef<Path>, embedding: &EmbeddingVector) -> Result<()> {
    let values = embedding.values().to_vec();
    let field = ScalarField::new(Dims::new(values.len(), 1)?, values)?;
    write_field(path, &field)
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    decode_at(path, decode_rgb(&bytes))
}

pub fn write_rgb(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    write_bytes(path.as_ref(), &encode_rgb(image))
}
