//! Deterministic synthetic datasets whose ground truth is known by
//! construction.
//!
//! Each location is a fixed camera looking at a river: bank rows at the top
//! and bottom (unlabelled), water in between, a horizontal barrier band across
//! the middle, rectangular in-system trash patches upstream of the barrier and
//! out-system patches downstream. Every image ships with the full set of
//! prediction artifacts: jittered predicted masks (including out-system trash
//! and an occasional false positive on the bank), a logit map, a non-negative
//! similarity map and an embedding vector.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::manifest::{SplitPair, SCHEMA_VERSION};
use crate::formats::{
    write_embedding, write_field, write_label_raster, write_mask_grid, write_rgb, DatasetManifest, DownstreamAxis,
    FlowGeometry, ImageEntry, LocationEntry, MaskRef, Predictions, PromptCandidate,
};
use crate::promptsel::EmbeddingVector;
use crate::raster::{BitGrid, ClassId, Dims, LabelRaster, RgbImage, ScalarField};

pub const TRAIN_SPLIT: &str = "train60";
pub const TEST_SPLIT: &str = "test40";
const EMBEDDING_DIM: usize = 16;
const BANK_ROWS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub locations: u32,
    pub images_per_location: usize,
    pub width: usize,
    pub height: usize,
    /// Annotation classes to plant. In-system trash is always present.
    pub classes: Vec<ClassId>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            locations: 2,
            images_per_location: 10,
            width: 64,
            height: 48,
            classes: ClassId::ANNOTATED.to_vec(),
            seed: 7,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.locations == 0 || self.images_per_location < 2 {
            return Err(Error::invalid("synth needs at least 1 location and 2 images per location"));
        }
        if self.width < 32 || self.height < 32 {
            return Err(Error::invalid("synth images must be at least 32x32"));
        }
        if self.classes.contains(&ClassId::Unlabeled) {
            return Err(Error::invalid("Unlabeled is not an annotation class"));
        }
        Ok(())
    }

    fn has(&self, c: ClassId) -> bool {
        c == ClassId::InSystemTrash || self.classes.contains(&c)
    }
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

impl Rect {
    fn overlaps(&self, o: &Rect, margin: usize) -> bool {
        self.x < o.x + o.w + margin && o.x < self.x + self.w + margin && self.y < o.y + o.h + margin && o.y < self.y + self.h + margin
    }

    fn grid(&self, dims: Dims) -> BitGrid {
        BitGrid::from_fn(dims, |x, y| x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h)
    }

    /// Shifted copy, clipped to the image.
    fn jittered(&self, dims: Dims, dx: isize, dy: isize) -> Rect {
        let x0 = (self.x as isize + dx).clamp(0, dims.width as isize - 1) as usize;
        let y0 = (self.y as isize + dy).clamp(0, dims.height as isize - 1) as usize;
        let x1 = ((self.x + self.w) as isize + dx).clamp(1, dims.width as isize) as usize;
        let y1 = ((self.y + self.h) as isize + dy).clamp(1, dims.height as isize) as usize;
        Rect {
            x: x0,
            y: y0,
            w: x1.saturating_sub(x0).max(1),
            h: y1.saturating_sub(y0).max(1),
        }
    }
}

fn place(rng: &mut ChaCha8Rng, rows: (usize, usize), width: usize, taken: &[Rect]) -> Option<Rect> {
    for _ in 0..32 {
        let w = rng.random_range(6..=14);
        let h = rng.random_range(5..=9);
        if rows.1 <= rows.0 + h || width <= w + 2 {
            return None;
        }
        let r = Rect {
            x: rng.random_range(1..width - w - 1),
            y: rng.random_range(rows.0..rows.1 - h),
            w,
            h,
        };
        if !taken.iter().any(|t| r.overlaps(t, 2)) {
            return Some(r);
        }
    }
    None
}

fn noisy(rng: &mut ChaCha8Rng, base: [u8; 3]) -> [u8; 3] {
    base.map(|c| (c as i32 + rng.random_range(-12..=12)).clamp(0, 255) as u8)
}

fn color(class: ClassId) -> [u8; 3] {
    match class {
        ClassId::InSystemTrash => [210, 200, 180],
        ClassId::OutSystemTrash => [196, 186, 166],
        ClassId::Water => [40, 70, 130],
        ClassId::Barrier => [120, 120, 120],
        ClassId::Unlabeled => [80, 110, 60],
    }
}

struct Scene {
    raster: LabelRaster,
    rgb: RgbImage,
    truth: Vec<(BitGrid, ClassId)>,
    predicted: Vec<(BitGrid, ClassId)>,
    logits: ScalarField,
    similarity: ScalarField,
    embedding: EmbeddingVector,
}

fn location_embedding(spec: &SynthSpec, location: u32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1_000_000 + location as u64);
    (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn make_scene(spec: &SynthSpec, location: u32, index: usize, flow: DownstreamAxis) -> Result<Scene> {
    let dims = Dims::new(spec.width, spec.height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(((location as u64) << 32) | index as u64);

    let (w, h) = (dims.width, dims.height);
    let barrier_y = h / 2 - 1;
    let barrier = Rect { x: 0, y: barrier_y, w, h: 2 };
    let upper = (BANK_ROWS + 1, barrier_y - 1);
    let lower = (barrier_y + 3, h - BANK_ROWS - 1);
    let (upstream, downstream) = match flow {
        DownstreamAxis::NegY => (lower, upper),
        _ => (upper, lower),
    };

    let mut raster = LabelRaster::filled(dims, ClassId::Unlabeled);
    let water_rect = Rect {
        x: 0,
        y: BANK_ROWS,
        w,
        h: h - 2 * BANK_ROWS,
    };
    if spec.has(ClassId::Water) {
        raster.paint(&water_rect.grid(dims), ClassId::Water)?;
    }
    if spec.has(ClassId::Barrier) {
        raster.paint(&barrier.grid(dims), ClassId::Barrier)?;
    }

    let mut taken = Vec::new();
    let mut in_rects = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        if let Some(r) = place(&mut rng, upstream, w, &taken) {
            taken.push(r);
            in_rects.push(r);
        }
    }
    let mut out_rects = Vec::new();
    if spec.has(ClassId::OutSystemTrash) {
        for _ in 0..rng.random_range(0..=2) {
            if let Some(r) = place(&mut rng, downstream, w, &taken) {
                taken.push(r);
                out_rects.push(r);
            }
        }
    }
    for r in &in_rects {
        raster.paint(&r.grid(dims), ClassId::InSystemTrash)?;
    }
    for r in &out_rects {
        raster.paint(&r.grid(dims), ClassId::OutSystemTrash)?;
    }

    let mut truth = Vec::new();
    for r in &in_rects {
        truth.push((r.grid(dims), ClassId::InSystemTrash));
    }
    for r in &out_rects {
        truth.push((r.grid(dims), ClassId::OutSystemTrash));
    }
    for class in [ClassId::Water, ClassId::Barrier] {
        let g = raster.class_grid(class);
        if g.any() {
            truth.push((g, class));
        }
    }

    let mut predicted = Vec::new();
    let mut predicted_in = BitGrid::new(dims);
    for (k, r) in in_rects.iter().chain(&out_rects).enumerate() {
        let j = r.jittered(dims, rng.random_range(-2i32..=2) as isize, rng.random_range(-2i32..=2) as isize);
        let g = j.grid(dims);
        if k < in_rects.len() {
            predicted_in.union_with(&g)?;
        }
        predicted.push((g, ClassId::InSystemTrash));
    }
    if spec.has(ClassId::Barrier) {
        predicted.push((barrier.grid(dims), ClassId::Barrier));
    }
    if rng.random_bool(0.5) {
        let x = rng.random_range(0..w - 5);
        let bank = Rect { x, y: 0, w: 5, h: BANK_ROWS };
        predicted.push((bank.grid(dims), ClassId::InSystemTrash));
    }

    let truth_in = BitGrid::union_all(
        dims,
        truth.iter().filter(|(_, c)| *c == ClassId::InSystemTrash).map(|(g, _)| g),
    )?;
    let mut logit_values = Vec::with_capacity(dims.len());
    let mut sim_values = Vec::with_capacity(dims.len());
    for i in 0..dims.len() {
        let hot = predicted_in.bits()[i];
        logit_values.push(if hot {
            rng.random_range(0.6f32..0.95)
        } else {
            rng.random_range(0.05f32..0.3)
        });
        sim_values.push(if truth_in.bits()[i] {
            rng.random_range(0.7f32..1.0)
        } else {
            rng.random_range(0.0f32..0.02)
        });
    }

    let rgb = RgbImage::from_fn(dims, |x, y| noisy(&mut rng, color(raster.get(x, y))));

    let base = location_embedding(spec, location);
    let embedding = EmbeddingVector::new(base.iter().map(|&b| b + rng.random_range(-0.1f32..0.1)).collect())?;

    Ok(Scene {
        raster,
        rgb,
        truth,
        predicted,
        logits: ScalarField::new(dims, logit_values)?,
        similarity: ScalarField::new(dims, sim_values)?,
        embedding,
    })
}

fn class_slug(c: ClassId) -> &'static str {
    match c {
        ClassId::InSystemTrash => "in",
        ClassId::OutSystemTrash => "out",
        ClassId::Water => "water",
        ClassId::Barrier => "barrier",
        ClassId::Unlabeled => "unlabeled",
    }
}

/// Writes a synthetic dataset under `out_dir` and returns the manifest path.
/// The same spec always produces byte-identical files.
pub fn generate(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let mut locations = Vec::new();
    for location in 1..=spec.locations {
        let flow = if location % 2 == 1 {
            DownstreamAxis::PosY
        } else {
            DownstreamAxis::NegY
        };
        let mut images = Vec::new();
        let mut prompt_candidates = Vec::new();
        let n_train = ((spec.images_per_location as f64) * 0.6).round() as usize;
        let n_train = n_train.clamp(1, spec.images_per_location - 1);
        for index in 0..spec.images_per_location {
            let image_id = format!("L{location}_{index:03}");
            let rel = PathBuf::from(format!("loc{location}")).join(&image_id);
            let scene = make_scene(spec, location, index, flow)?;

            write_label_raster(out_dir.join(rel.join("label.rseg")), &scene.raster)?;
            write_rgb(out_dir.join(rel.join("image.rrgb")), &scene.rgb)?;
            let mut instance_masks = Vec::new();
            for (k, (g, class)) in scene.truth.iter().enumerate() {
                let p = rel.join(format!("gt_{k:02}_{}.rseg", class_slug(*class)));
                write_mask_grid(out_dir.join(&p), g)?;
                instance_masks.push(MaskRef { path: p, class: *class });
            }
            let mut pred_masks = Vec::new();
            for (k, (g, class)) in scene.predicted.iter().enumerate() {
                let p = rel.join(format!("pred_{k:02}_{}.rseg", class_slug(*class)));
                write_mask_grid(out_dir.join(&p), g)?;
                pred_masks.push(MaskRef { path: p, class: *class });
            }
            let logits = rel.join("logits.rfld");
            write_field(out_dir.join(&logits), &scene.logits)?;
            let similarity = rel.join("similarity.rfld");
            write_field(out_dir.join(&similarity), &scene.similarity)?;
            let embedding = rel.join("embedding.rfld");
            write_embedding(out_dir.join(&embedding), &scene.embedding)?;

            if index < n_train.min(2) {
                let masks: Vec<PathBuf> = instance_masks
                    .iter()
                    .filter(|m| m.class == ClassId::InSystemTrash)
                    .take(2)
                    .map(|m| m.path.clone())
                    .collect();
                if !masks.is_empty() {
                    prompt_candidates.push(PromptCandidate {
                        image_id: image_id.clone(),
                        masks,
                    });
                }
            }

            images.push(ImageEntry {
                image_id,
                label_raster: rel.join("label.rseg"),
                rgb: Some(rel.join("image.rrgb")),
                instance_masks,
                predictions: Predictions {
                    masks: pred_masks,
                    logits: vec![logits],
                    similarity: Some(similarity),
                    embedding: Some(embedding),
                },
            });
        }
        let ids: Vec<String> = images.iter().map(|i| i.image_id.clone()).collect();
        let splits = [
            (TRAIN_SPLIT.to_string(), ids[..n_train].to_vec()),
            (TEST_SPLIT.to_string(), ids[n_train..].to_vec()),
        ]
        .into_iter()
        .collect();
        locations.push(LocationEntry {
            location_id: location,
            flow: FlowGeometry { downstream_axis: flow },
            images,
            prompt_candidates,
            splits,
            split_pairs: vec![SplitPair {
                train: TRAIN_SPLIT.into(),
                test: TEST_SPLIT.into(),
            }],
        });
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        locations,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
