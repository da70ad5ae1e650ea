//! Writes and reads back each binary artifact type and validates a manifest.

use riverseg::formats::{
    read_field, read_label_raster, read_manifest, read_rgb, write_field, write_label_raster, write_rgb,
};
use riverseg::raster::{BitGrid, ClassId, Dims, LabelRaster, RgbImage, ScalarField};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let dims = Dims::new(6, 4)?;

    let mut label = LabelRaster::filled(dims, ClassId::Water);
    label.paint(&BitGrid::from_fn(dims, |x, y| x < 2 && y < 2), ClassId::InSystemTrash)?;
    let p = dir.path().join("label.rseg");
    write_label_raster(&p, &label)?;
    println!("label.rseg: {} bytes, roundtrip ok = {}", std::fs::metadata(&p)?.len(), read_label_raster(&p)? == label);

    let field = ScalarField::from_fn(dims, |x, y| x as f32 * 0.1 - y as f32)?;
    let p = dir.path().join("logits.rfld");
    write_field(&p, &field)?;
    println!("logits.rfld: {} bytes, roundtrip ok = {}", std::fs::metadata(&p)?.len(), read_field(&p)? == field);

    let img = RgbImage::from_fn(dims, |x, y| [(x * 40) as u8, (y * 60) as u8, 128]);
    let p = dir.path().join("image.rrgb");
    write_rgb(&p, &img)?;
    println!("image.rrgb: roundtrip ok = {}", read_rgb(&p)? == img);

    let bad = dir.path().join("manifest.json");
    std::fs::write(
        &bad,
        r#"{"schema_version": 1, "locations": [{"location_id": 1, "flow": {"downstream_axis": "+y"},
            "images": [{"image_id": "a", "label_raster": "label.rseg"}],
            "splits": {"test": ["a", "b"]}}]}"#,
    )?;
    match read_manifest(&bad, false) {
        Ok(_) => println!("manifest unexpectedly valid"),
        Err(e) => println!("manifest rejected: {e}"),
    }
    Ok(())
}
