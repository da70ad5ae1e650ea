use proptest::prelude::*;
use serde_json::json;

use riverseg::formats::{
    decode_field, decode_raster, decode_rgb, encode_field, encode_label, encode_mask, encode_rgb, read_field,
    read_label_raster, read_manifest, write_field, write_label_raster, DatasetManifest, FormatError, ManifestError,
    RasterFile,
};
use riverseg::raster::{BitGrid, ClassId, Dims, LabelRaster, RgbImage, ScalarField};
use riverseg::Error;

fn dims_strategy() -> impl Strategy<Value = Dims> {
    (1usize..40, 1usize..40).prop_map(|(w, h)| Dims::new(w, h).unwrap())
}

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |v| v.is_finite())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn label_roundtrip(codes in dims_strategy().prop_flat_map(|d| (Just(d), proptest::collection::vec(0u8..5, d.len())))) {
        let (d, codes) = codes;
        let raster = LabelRaster::from_classes(d, codes.iter().map(|&c| ClassId::from_code(c).unwrap()).collect()).unwrap();
        let bytes = encode_label(&raster);
        prop_assert_eq!(bytes.len(), 13 + d.len());
        prop_assert_eq!(decode_raster(&bytes).unwrap(), RasterFile::Label(raster.clone()));
        prop_assert_eq!(encode_label(&raster), bytes);
    }

    #[test]
    fn mask_roundtrip(bits in dims_strategy().prop_flat_map(|d| (Just(d), proptest::collection::vec(any::<bool>(), d.len())))) {
        let grid = BitGrid::from_bits(bits.0, bits.1).unwrap();
        let bytes = encode_mask(&grid);
        prop_assert_eq!(decode_raster(&bytes).unwrap(), RasterFile::Mask(grid));
    }

    #[test]
    fn field_roundtrip_bit_exact(v in dims_strategy().prop_flat_map(|d| (Just(d), proptest::collection::vec(finite_f32(), d.len())))) {
        let f = ScalarField::new(v.0, v.1).unwrap();
        let bytes = encode_field(&f);
        prop_assert_eq!(bytes.len(), 12 + 4 * v.0.len());
        let back = decode_field(&bytes).unwrap();
        let a: Vec<u32> = f.values().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.values().iter().map(|x| x.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rgb_roundtrip(v in dims_strategy().prop_flat_map(|d| (Just(d), proptest::collection::vec(any::<u8>(), 3 * d.len())))) {
        let img = RgbImage::new(v.0, v.1).unwrap();
        prop_assert_eq!(decode_rgb(&encode_rgb(&img)).unwrap(), img);
    }

    #[test]
    fn truncation_never_panics(cut in 0usize..60) {
        let f = ScalarField::filled(Dims::new(3, 4).unwrap(), 1.5).unwrap();
        let bytes = encode_field(&f);
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(decode_field(&bytes[..cut]).is_err());
    }
}

#[test]
fn raster_error_cases() {
    let mut bad = encode_mask(&BitGrid::new(Dims::new(3, 2).unwrap()));
    bad[0] = b'X';
    assert!(matches!(decode_raster(&bad), Err(FormatError::BadMagic { .. })));

    let short = &encode_mask(&BitGrid::new(Dims::new(3, 2).unwrap()))[..13 + 5];
    assert_eq!(
        decode_raster(short),
        Err(FormatError::TruncatedPayload { expected: 6, actual: 5 })
    );

    let mut label = encode_label(&LabelRaster::filled(Dims::new(2, 1).unwrap(), ClassId::Water));
    label[14] = 9;
    assert_eq!(decode_raster(&label), Err(FormatError::ClassCodeOutOfRange { index: 1, code: 9 }));
}

#[test]
fn field_with_nan_rejected() {
    let mut bytes = encode_field(&ScalarField::filled(Dims::new(2, 1).unwrap(), 0.0).unwrap());
    bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
    assert_eq!(decode_field(&bytes).unwrap_err(), FormatError::NonFinite { index: 1 });
}

#[test]
fn one_pixel_field_is_sixteen_bytes() {
    let f = ScalarField::filled(Dims::new(1, 1).unwrap(), 0.25).unwrap();
    let bytes = encode_field(&f);
    assert_eq!(bytes.len(), 12 + 4);
    assert_eq!(&bytes[12..], &0.25f32.to_le_bytes());
}

#[test]
fn file_roundtrip_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let raster = LabelRaster::filled(Dims::new(4, 3).unwrap(), ClassId::Barrier);
    let p = dir.path().join("nested/label.rseg");
    write_label_raster(&p, &raster).unwrap();
    assert_eq!(read_label_raster(&p).unwrap(), raster);
    let f = ScalarField::filled(Dims::new(4, 3).unwrap(), -2.0).unwrap();
    write_field(dir.path().join("f.rfld"), &f).unwrap();
    assert_eq!(read_field(dir.path().join("f.rfld")).unwrap(), f);
    let err = read_field(dir.path().join("missing.rfld")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = read_label_raster(dir.path().join("f.rfld")).unwrap_err();
    assert!(matches!(err, Error::Decode { .. }));
    assert_eq!(err.exit_code(), 1);
}

fn base_manifest() -> serde_json::Value {
    json!({
        "schema_version": 1,
        "locations": [{
            "location_id": 1,
            "flow": {"downstream_axis": "+y"},
            "images": [
                {"image_id": "a", "label_raster": "a.rseg"},
                {"image_id": "b", "label_raster": "b.rseg"},
                {"image_id": "c", "label_raster": "c.rseg"}
            ],
            "prompt_candidates": [{"image_id": "a", "masks": ["a_m0.rseg"]}],
            "splits": {"train60": ["a", "b"], "test40": ["c"]},
            "split_pairs": [{"train": "train60", "test": "test40"}]
        }]
    })
}

fn parse(v: &serde_json::Value) -> Result<DatasetManifest, ManifestError> {
    DatasetManifest::from_json(&v.to_string(), ".")
}

#[test]
fn minimal_manifest_parses() {
    let m = parse(&base_manifest()).unwrap();
    assert_eq!(m.locations[0].images.len(), 3);
    assert!(m.locations[0].is_test_split("test40"));
    assert!(!m.locations[0].is_test_split("train60"));
}

#[test]
fn prompt_in_test_split_rejected() {
    let mut v = base_manifest();
    v["locations"][0]["splits"]["test40"] = json!(["c", "a"]);
    v["locations"][0]["splits"]["train60"] = json!(["b"]);
    let err = parse(&v).unwrap_err();
    assert!(matches!(&err, ManifestError::PromptInTestSplit { image_id, split, .. } if image_id == "a" && split == "test40"));
    assert!(err.to_string().contains("\"a\""));
}

#[test]
fn unknown_split_image_rejected() {
    let mut v = base_manifest();
    v["locations"][0]["splits"]["test40"] = json!(["c", "zz"]);
    let err = parse(&v).unwrap_err();
    assert_eq!(
        err,
        ManifestError::UnknownSplitImage {
            pointer: "/locations/0/splits/test40/1".into(),
            split: "test40".into(),
            image_id: "zz".into()
        }
    );
}

#[test]
fn overlapping_split_pair_rejected() {
    let mut v = base_manifest();
    v["locations"][0]["splits"]["test40"] = json!(["c", "b"]);
    let err = parse(&v).unwrap_err();
    assert!(matches!(&err, ManifestError::SplitOverlap { image_id, .. } if image_id == "b"), "{err}");
}

#[test]
fn schema_errors_carry_a_pointer() {
    let mut v = base_manifest();
    v["locations"][0]["flow"]["downstream_axis"] = json!("up");
    let err = parse(&v).unwrap_err();
    assert!(matches!(&err, ManifestError::Schema { pointer, .. } if pointer == "/locations/0/flow/downstream_axis"), "{err}");
    let mut v = base_manifest();
    v["locations"][0]["images"][1]["colour"] = json!("red");
    assert!(matches!(parse(&v).unwrap_err(), ManifestError::Schema { .. }));
}

#[test]
fn strict_mode_checks_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    std::fs::write(&path, base_manifest().to_string()).unwrap();
    assert!(read_manifest(&path, false).is_ok());
    let err = read_manifest(&path, true).unwrap_err();
    assert!(err.to_string().contains("/locations/0/images/0/label_raster"), "{err}");
    assert_eq!(err.exit_code(), 1);
}
