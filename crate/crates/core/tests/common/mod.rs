//! Brute-force reference implementations over explicit pixel sets, plus
//! random scene builders shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riverseg::raster::{BitGrid, ClassId, Dims, InstanceMask, MaskSource};

pub type Px = (usize, usize);
pub type PixelSet = BTreeSet<Px>;

pub fn to_set(grid: &BitGrid) -> PixelSet {
    let w = grid.dims().width;
    grid.set_indices().map(|i| (i % w, i / w)).collect()
}

pub fn from_set(dims: Dims, set: &PixelSet) -> BitGrid {
    BitGrid::from_fn(dims, |x, y| set.contains(&(x, y)))
}

pub fn union_sets<'a>(sets: impl IntoIterator<Item = &'a PixelSet>) -> PixelSet {
    sets.into_iter().flatten().copied().collect()
}

fn neighbours(p: Px, eight: bool) -> Vec<(isize, isize)> {
    let (x, y) = (p.0 as isize, p.1 as isize);
    let mut out = vec![(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)];
    if eight {
        out.extend([(x + 1, y + 1), (x + 1, y - 1), (x - 1, y + 1), (x - 1, y - 1)]);
    }
    out
}

/// Components by breadth-first search, each as a pixel set, ordered by the
/// row-major position of their first pixel.
pub fn bfs_components(set: &PixelSet, eight: bool) -> Vec<PixelSet> {
    let mut seen = BTreeSet::new();
    let mut order: Vec<Px> = set.iter().copied().collect();
    order.sort_by_key(|&(x, y)| (y, x));
    let mut out = Vec::new();
    for start in order {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(p) = queue.pop_front() {
            comp.insert(p);
            for (nx, ny) in neighbours(p, eight) {
                if nx < 0 || ny < 0 {
                    continue;
                }
                let q = (nx as usize, ny as usize);
                if set.contains(&q) && seen.insert(q) {
                    queue.push_back(q);
                }
            }
        }
        out.push(comp);
    }
    out
}

fn frac(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn set_iou(a: &PixelSet, b: &PixelSet) -> f64 {
    frac(a.intersection(b).count(), a.union(b).count())
}

/// Per-class IoU of the merged prediction against each class present in the
/// truth.
pub fn oracle_per_class(pred: &[PixelSet], truth: &[(PixelSet, ClassId)]) -> BTreeMap<ClassId, f64> {
    let p = union_sets(pred);
    let mut by_class: BTreeMap<ClassId, PixelSet> = BTreeMap::new();
    for (s, c) in truth {
        by_class.entry(*c).or_default().extend(s.iter().copied());
    }
    by_class.into_iter().map(|(c, g)| (c, set_iou(&p, &g))).collect()
}

/// Returns (bin index, IoU) per in-system instance: the instance against the
/// union of prediction components that share a pixel with it.
pub fn oracle_binned(pred: &[PixelSet], truth_in: &[PixelSet], small: usize, medium: usize) -> BTreeMap<usize, f64> {
    let comps = bfs_components(&union_sets(pred), true);
    let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for g in truth_in {
        let matched: PixelSet = comps
            .iter()
            .filter(|c| c.iter().any(|p| g.contains(p)))
            .flat_map(|c| c.iter().copied())
            .collect();
        let bin = if g.len() <= small {
            0
        } else if g.len() <= medium {
            1
        } else {
            2
        };
        acc.entry(bin).or_default().push(set_iou(&matched, g));
    }
    acc.into_iter()
        .map(|(b, v)| (b, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

/// `(positive, negative)` slots of the signed size error.
pub fn oracle_hamming(pred: &[PixelSet], truth_in: &[PixelSet]) -> (Option<f64>, Option<f64>) {
    let g = union_sets(truth_in).len();
    if g == 0 {
        return (None, None);
    }
    let p = union_sets(pred).len() as f64;
    let h = (g as f64 - p) / g as f64;
    if h >= 0.0 {
        (Some(h), None)
    } else {
        (None, Some(-h))
    }
}

pub struct Scene {
    pub dims: Dims,
    pub truth: Vec<(PixelSet, ClassId)>,
    pub pred: Vec<PixelSet>,
}

impl Scene {
    pub fn truth_masks(&self) -> Vec<InstanceMask> {
        self.truth
            .iter()
            .map(|(s, c)| InstanceMask::new(from_set(self.dims, s), *c, MaskSource::GroundTruth).unwrap())
            .collect()
    }

    pub fn pred_masks(&self) -> Vec<InstanceMask> {
        self.pred
            .iter()
            .map(|s| InstanceMask::new(from_set(self.dims, s), ClassId::InSystemTrash, MaskSource::Predicted).unwrap())
            .collect()
    }

    pub fn truth_in(&self) -> Vec<PixelSet> {
        self.truth
            .iter()
            .filter(|(_, c)| *c == ClassId::InSystemTrash)
            .map(|(s, _)| s.clone())
            .collect()
    }
}

fn random_blob(rng: &mut ChaCha8Rng, dims: Dims) -> PixelSet {
    let mut set = PixelSet::new();
    match rng.random_range(0..3) {
        0 => {
            let w = rng.random_range(1..=dims.width.min(20));
            let h = rng.random_range(1..=dims.height.min(20));
            let x0 = rng.random_range(0..=dims.width - w);
            let y0 = rng.random_range(0..=dims.height - h);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    set.insert((x, y));
                }
            }
        }
        1 => {
            let n = rng.random_range(1..40);
            for _ in 0..n {
                set.insert((rng.random_range(0..dims.width), rng.random_range(0..dims.height)));
            }
        }
        _ => {
            // random walk
            let mut p = (rng.random_range(0..dims.width), rng.random_range(0..dims.height));
            for _ in 0..rng.random_range(1..60) {
                set.insert(p);
                let (dx, dy) = (rng.random_range(-1i32..=1), rng.random_range(-1i32..=1));
                p.0 = (p.0 as i32 + dx).clamp(0, dims.width as i32 - 1) as usize;
                p.1 = (p.1 as i32 + dy).clamp(0, dims.height as i32 - 1) as usize;
            }
        }
    }
    set
}

/// Random scene up to 64x64 with at most four ground-truth classes.
pub fn random_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(rng.random_range(1..=64), rng.random_range(1..=64)).unwrap();
    let mut classes = ClassId::ANNOTATED.to_vec();
    let n_classes = rng.random_range(1..=4);
    for i in 0..classes.len() {
        let j = rng.random_range(i..classes.len());
        classes.swap(i, j);
    }
    classes.truncate(n_classes);
    let truth = (0..rng.random_range(0..6))
        .map(|_| (random_blob(&mut rng, dims), classes[rng.random_range(0..classes.len())]))
        .collect();
    let pred = (0..rng.random_range(0..6)).map(|_| random_blob(&mut rng, dims)).collect();
    Scene { dims, truth, pred }
}

/// Random boolean grid with the given fill probability.
pub fn random_grid(rng: &mut ChaCha8Rng, dims: Dims, p: f64) -> BitGrid {
    BitGrid::from_fn(dims, |_, _| rng.random_bool(p))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(rng: &mut ChaCha8Rng, dims: Dims, lo: f32, hi: f32) -> riverseg::raster::ScalarField {
    riverseg::raster::ScalarField::from_fn(dims, |_, _| rng.random_range(lo..hi)).unwrap()
}

/// Random AOI (a few blobs) plus predicted masks scattered over the image.
pub fn random_aoi_fixture(seed: u64) -> (riverseg::postproc::AreaOfInterest, Vec<InstanceMask>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(rng.random_range(4..=48), rng.random_range(4..=48)).unwrap();
    let mut aoi = PixelSet::new();
    while aoi.is_empty() {
        for _ in 0..rng.random_range(1..4) {
            aoi.extend(random_blob(&mut rng, dims));
        }
    }
    let fraction = [0.5, 0.25, 1.0, rng.random_range(0.01..1.0)][rng.random_range(0..4)];
    let aoi = riverseg::postproc::AreaOfInterest::new(from_set(dims, &aoi), fraction).unwrap();
    let masks = (0..rng.random_range(0..6))
        .map(|_| {
            let mut s = PixelSet::new();
            for _ in 0..rng.random_range(1..4) {
                s.extend(random_blob(&mut rng, dims));
            }
            InstanceMask::new(from_set(dims, &s), ClassId::InSystemTrash, MaskSource::Predicted).unwrap()
        })
        .collect();
    (aoi, masks)
}

/// 16x16 similarity map: a 3x3 block of 1.0 at (2..5, 2..5) and an 8-pixel
/// 4x2 block of 0.75 at (10..14, 11..13), zero elsewhere.
pub fn two_blob_fixture() -> riverseg::raster::ScalarField {
    let dims = Dims::new(16, 16).unwrap();
    riverseg::raster::ScalarField::from_fn(dims, |x, y| {
        if (2..5).contains(&x) && (2..5).contains(&y) {
            1.0
        } else if (10..14).contains(&x) && (11..13).contains(&y) {
            0.75
        } else {
            0.0
        }
    })
    .unwrap()
}

/// Proposer that ignores its input and always returns the same pixel.
pub fn stuck_proposer(
    dims: Dims,
    x: usize,
    y: usize,
) -> impl Fn(&riverseg::raster::ScalarField, riverseg::raster::PixelPoint) -> riverseg::Result<Option<InstanceMask>> {
    move |_, _| {
        let mut g = BitGrid::new(dims);
        g.set(x, y, true);
        Ok(Some(InstanceMask::new(g, ClassId::InSystemTrash, MaskSource::Predicted)?))
    }
}

/// Two classes separable on the red channel (class A red >= 150, class B
/// red <= 100), other channels uniform noise. Returns one image row per
/// class, `n` pixels each.
pub fn separable_dataset(seed: u64, n: usize) -> (riverseg::raster::RgbImage, riverseg::raster::LabelRaster) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(n, 2).unwrap();
    let img = riverseg::raster::RgbImage::from_fn(dims, |_, y| {
        let red = if y == 0 { rng.random_range(150..=255) } else { rng.random_range(0..=100) };
        [red, rng.random(), rng.random()]
    });
    let mut raster = riverseg::raster::LabelRaster::filled(dims, ClassId::InSystemTrash);
    for x in 0..n {
        raster.set(x, 1, ClassId::Water);
    }
    (img, raster)
}

/// One-location dataset whose single test image has an in-system instance of
/// 3x4 pixels and a prediction shifted right by one column: intersection
/// 2x4 = 8, union 4x4 = 16, IoU exactly one half.
pub fn write_planted_fixture(dir: &std::path::Path) -> std::path::PathBuf {
    use riverseg::formats::{write_label_raster, write_mask_grid};
    let dims = Dims::new(10, 10).unwrap();
    let truth = BitGrid::from_fn(dims, |x, y| (2..5).contains(&x) && (2..6).contains(&y));
    let pred = BitGrid::from_fn(dims, |x, y| (3..6).contains(&x) && (2..6).contains(&y));
    let mut raster = riverseg::raster::LabelRaster::filled(dims, ClassId::Water);
    raster.paint(&truth, ClassId::InSystemTrash).unwrap();
    for id in ["t0", "p0"] {
        write_label_raster(dir.join(format!("{id}.rseg")), &raster).unwrap();
        write_mask_grid(dir.join(format!("{id}_gt.rseg")), &truth).unwrap();
    }
    write_mask_grid(dir.join("t0_pred.rseg"), &pred).unwrap();
    let manifest = serde_json::json!({
        "schema_version": 1,
        "locations": [{
            "location_id": 3,
            "flow": {"downstream_axis": "+y"},
            "images": [
                {"image_id": "t0", "label_raster": "t0.rseg",
                 "instance_masks": [{"path": "t0_gt.rseg", "class": "in_system_trash"}],
                 "predictions": {"masks": [{"path": "t0_pred.rseg", "class": "in_system_trash"}]}},
                {"image_id": "p0", "label_raster": "p0.rseg",
                 "instance_masks": [{"path": "p0_gt.rseg", "class": "in_system_trash"}]}
            ],
            "splits": {"train": ["p0"], "test": ["t0"]}
        }]
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn snapshot(root: &std::path::Path) -> BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut BTreeMap<std::path::PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
