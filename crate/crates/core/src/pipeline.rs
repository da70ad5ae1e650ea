//! Batch commands: evaluation runs, mask extraction, prompt matching, the
//! random-forest baseline and the patch/threshold utilities. Each command is
//! a plain function so it can be driven from the CLI, an example or a test.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{self, Forest, ForestConfig};
use crate::formats::{
    read_embedding, read_field, read_label_raster, read_manifest, read_mask_grid, read_rgb, write_field,
    write_label_raster, write_mask, write_report_csv, DatasetManifest, FlowGeometry, ImageEntry, LocationEntry,
    MaskRef,
};
use crate::metrics::{aggregate, evaluate_image, EvalReport, PerImageMetrics, ReportRow, SizeBins};
use crate::postproc::{
    aoi_filter, barrier_filter, bmc_threshold, build_aoi, crop_field, merge_patches, split_patches, AreaOfInterest,
    BmcConfig, PatchGrid, PixelRect,
};
use crate::promptsel::{
    extract_masks, match_prompt, pool_features, EmbeddingVector, FloodFillProposer, IterationRecord, LoopConfig,
    MaskProposer, PromptMatch, ReplayProposer, StopReason,
};
use crate::raster::{
    connected_components, resample_field, ClassId, ComponentLabels, Connectivity, Dims, InstanceMask, MaskSource,
    ResampleMethod, ScalarField,
};

/// One post-processing stage. Stages run in the order given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PipelineStep {
    /// Stitch the image's per-patch logits (row-major) into one map.
    Patches {
        rows: usize,
        cols: usize,
        #[serde(default)]
        method: ResampleMethod,
    },
    /// Threshold pending logits; the resulting masks replace the trash masks.
    Bmc { cutoff: f64 },
    /// Area-of-interest filter built from the named (non-test) split.
    Aoi {
        split: String,
        #[serde(default = "default_inside_fraction")]
        min_inside_fraction: f64,
        #[serde(default)]
        connectivity: Connectivity,
    },
    /// Drop masks downstream of the barrier.
    Barrier,
}

fn default_inside_fraction() -> f64 {
    AreaOfInterest::DEFAULT_MIN_INSIDE_FRACTION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub size_bins: SizeBins,
    /// Predicted components smaller than this are dropped before scoring.
    pub min_component_size: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            size_bins: SizeBins::default(),
            min_component_size: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: Option<PathBuf>,
    /// Optional JSON dump of the report plus per-image metrics.
    pub json: Option<PathBuf>,
}

/// Evaluation run configuration, usually loaded from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub split: String,
    #[serde(default = "default_run")]
    pub run: String,
    #[serde(default)]
    pub pipeline: Vec<PipelineStep>,
    #[serde(default)]
    pub metrics: MetricParams,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub strict: bool,
}

fn default_run() -> String {
    "base".into()
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, split: impl Into<String>) -> Self {
        RunConfig {
            manifest: manifest.into(),
            split: split.into(),
            run: default_run(),
            pipeline: Vec::new(),
            metrics: MetricParams::default(),
            output: OutputConfig::default(),
            seed: 0,
            workers: None,
            strict: false,
        }
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.manifest);
        if let Some(p) = cfg.output.csv.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.output.json.as_mut() {
            rebase(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_steps(&self.pipeline)?;
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be at least 1"));
        }
        Ok(())
    }
}

pub fn validate_steps(steps: &[PipelineStep]) -> Result<()> {
    for (i, step) in steps.iter().enumerate() {
        match step {
            PipelineStep::Patches { rows, cols, .. } => {
                PatchGrid::new(*rows, *cols)?;
                if !steps[i + 1..].iter().any(|s| matches!(s, PipelineStep::Bmc { .. })) {
                    return Err(Error::invalid(format!("pipeline step {i}: patches must be followed by bmc")));
                }
            }
            PipelineStep::Bmc { cutoff } if !cutoff.is_finite() => {
                return Err(Error::invalid(format!("pipeline step {i}: bmc cutoff must be finite")));
            }
            PipelineStep::Aoi {
                min_inside_fraction, ..
            } if !(*min_inside_fraction > 0.0 && *min_inside_fraction <= 1.0) => {
                return Err(Error::invalid(format!(
                    "pipeline step {i}: min_inside_fraction must lie in (0, 1]"
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Predictions of one image as they move through the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageState {
    pub dims: Dims,
    /// Trash predictions; these are what gets scored.
    pub masks: Vec<InstanceMask>,
    /// Predicted barrier masks. Only the barrier step reads them.
    pub barrier_masks: Vec<InstanceMask>,
    /// Logit maps not yet thresholded.
    pub logits: Vec<ScalarField>,
    pub barrier_missing: bool,
}

impl ImageState {
    pub fn new(dims: Dims) -> Self {
        ImageState {
            dims,
            masks: Vec::new(),
            barrier_masks: Vec::new(),
            logits: Vec::new(),
            barrier_missing: false,
        }
    }
}

/// Per-location inputs the steps need: flow direction and prebuilt AOIs.
#[derive(Clone, Debug)]
pub struct LocationContext {
    pub flow: FlowGeometry,
    aois: BTreeMap<String, AreaOfInterest>,
}

impl LocationContext {
    pub fn new(flow: FlowGeometry) -> Self {
        LocationContext {
            flow,
            aois: BTreeMap::new(),
        }
    }

    pub fn with_aoi(mut self, split: impl Into<String>, aoi: AreaOfInterest) -> Self {
        self.aois.insert(split.into(), aoi);
        self
    }

    /// Builds every AOI the steps reference.
    pub fn prepare(manifest: &DatasetManifest, location: &LocationEntry, steps: &[PipelineStep]) -> Result<Self> {
        let mut ctx = LocationContext::new(location.flow);
        for step in steps {
            if let PipelineStep::Aoi { split, .. } = step {
                if !ctx.aois.contains_key(split) {
                    let aoi = build_aoi(manifest, location.location_id, split)?;
                    ctx.aois.insert(split.clone(), aoi);
                }
            }
        }
        Ok(ctx)
    }
}

/// Runs `steps` in order over one image's predictions.
pub fn apply_pipeline(mut state: ImageState, steps: &[PipelineStep], ctx: &LocationContext) -> Result<ImageState> {
    for (i, step) in steps.iter().enumerate() {
        match step {
            PipelineStep::Patches { rows, cols, method } => {
                let grid = PatchGrid::new(*rows, *cols)?;
                if state.logits.len() != grid.len() {
                    return Err(Error::invalid(format!(
                        "pipeline step {i}: {rows}x{cols} grid needs {} logit maps, image has {}",
                        grid.len(),
                        state.logits.len()
                    )));
                }
                let rects = split_patches(state.dims, &grid)?;
                let parts = rects
                    .iter()
                    .zip(&state.logits)
                    .map(|(r, f)| Ok((*r, resample_field(f, r.width, r.height, *method)?)))
                    .collect::<Result<Vec<_>>>()?;
                state.logits = vec![merge_patches(&parts)?];
            }
            PipelineStep::Bmc { cutoff } => {
                let cfg = BmcConfig::new(*cutoff);
                let mut masks = Vec::new();
                for (k, f) in state.logits.iter().enumerate() {
                    state.dims.ensure_eq(f.dims(), || format!("pipeline step {i}: logit map {k}"))?;
                    masks.extend(bmc_threshold(f, &cfg));
                }
                state.masks = masks;
                state.logits.clear();
            }
            PipelineStep::Aoi {
                split,
                min_inside_fraction,
                connectivity,
            } => {
                let aoi = ctx
                    .aois
                    .get(split)
                    .ok_or_else(|| Error::invalid(format!("pipeline step {i}: no area of interest for split {split:?}")))?
                    .clone()
                    .with_min_inside_fraction(*min_inside_fraction)?
                    .with_connectivity(*connectivity);
                state.masks = aoi_filter(&state.masks, &aoi)?;
            }
            PipelineStep::Barrier => {
                let out = barrier_filter(&state.masks, &state.barrier_masks, ctx.flow)?;
                state.masks = out.kept;
                state.barrier_missing = out.barrier_missing;
            }
        }
    }
    Ok(state)
}

/// Drops connected components smaller than `min_size` from every mask.
pub fn drop_small_components(masks: Vec<InstanceMask>, min_size: usize) -> Vec<InstanceMask> {
    if min_size <= 1 {
        return masks;
    }
    masks
        .into_iter()
        .filter_map(|m| {
            let labels = ComponentLabels::compute(m.grid(), Connectivity::Eight);
            let grid = labels.select(|l| labels.size(l) >= min_size);
            InstanceMask::non_empty(grid, m.class(), m.source())
        })
        .collect()
}

fn load_truth(manifest: &DatasetManifest, image: &ImageEntry) -> Result<(Dims, Vec<InstanceMask>)> {
    let raster = read_label_raster(manifest.resolve(&image.label_raster))?;
    let dims = raster.dims();
    let mut truth = Vec::new();
    if image.instance_masks.is_empty() {
        for class in ClassId::ANNOTATED {
            if let Some(m) = InstanceMask::non_empty(raster.class_grid(class), class, MaskSource::GroundTruth) {
                truth.extend(connected_components(&m, Connectivity::Eight));
            }
        }
    } else {
        for (k, r) in image.instance_masks.iter().enumerate() {
            let g = read_mask_grid(manifest.resolve(&r.path))?;
            dims.ensure_eq(g.dims(), || format!("image {}: ground-truth mask {k}", image.image_id))?;
            truth.extend(InstanceMask::non_empty(g, r.class, MaskSource::GroundTruth));
        }
    }
    Ok((dims, truth))
}

fn load_predictions(manifest: &DatasetManifest, image: &ImageEntry, dims: Dims) -> Result<ImageState> {
    let mut state = ImageState::new(dims);
    for (k, r) in image.predictions.masks.iter().enumerate() {
        let g = read_mask_grid(manifest.resolve(&r.path))?;
        dims.ensure_eq(g.dims(), || format!("image {}: predicted mask {k}", image.image_id))?;
        if let Some(m) = InstanceMask::non_empty(g, r.class, MaskSource::Predicted) {
            if r.class == ClassId::Barrier {
                state.barrier_masks.push(m);
            } else {
                state.masks.push(m);
            }
        }
    }
    for p in &image.predictions.logits {
        state.logits.push(read_field(manifest.resolve(p))?);
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub location_id: u32,
    pub image_id: String,
    pub predicted_masks: usize,
    pub barrier_missing: bool,
    pub metrics: PerImageMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub run: String,
    pub split: String,
    pub seed: u64,
    pub report: EvalReport,
    pub images: Vec<ImageRecord>,
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Scores one already-loaded manifest under `config` without writing anything.
pub fn evaluate_manifest(manifest: &DatasetManifest, config: &RunConfig) -> Result<EvalOutcome> {
    config.validate()?;
    let mut report = EvalReport::new();
    let mut records = Vec::new();
    for location in &manifest.locations {
        let Some(mut images) = location.split_images(&config.split) else {
            continue;
        };
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let ctx = LocationContext::prepare(manifest, location, &config.pipeline)?;
        let scored = with_pool(config.workers, || {
            images
                .par_iter()
                .map(|image| {
                    let (dims, truth) = load_truth(manifest, image)?;
                    let state = load_predictions(manifest, image, dims)?;
                    let state = apply_pipeline(state, &config.pipeline, &ctx)?;
                    let masks = drop_small_components(state.masks, config.metrics.min_component_size);
                    let metrics = evaluate_image(&masks, &truth, &config.metrics.size_bins)?;
                    Ok(ImageRecord {
                        location_id: location.location_id,
                        image_id: image.image_id.clone(),
                        predicted_masks: masks.len(),
                        barrier_missing: state.barrier_missing,
                        metrics,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })??;
        let per_image: Vec<PerImageMetrics> = scored.iter().map(|r| r.metrics.clone()).collect();
        report.push(ReportRow {
            location_id: location.location_id,
            run: config.run.clone(),
            summary: aggregate(&per_image),
        });
        records.extend(scored);
    }
    if report.is_empty() {
        return Err(Error::invalid(format!("no location has a split named {:?}", config.split)));
    }
    Ok(EvalOutcome {
        run: config.run.clone(),
        split: config.split.clone(),
        seed: config.seed,
        report,
        images: records,
    })
}

/// Loads the manifest, scores it and writes the configured outputs.
pub fn cmd_evaluate(config: &RunConfig) -> Result<EvalOutcome> {
    let manifest = read_manifest(&config.manifest, config.strict)?;
    let outcome = evaluate_manifest(&manifest, config)?;
    if let Some(csv) = &config.output.csv {
        write_report_csv(&outcome.report, csv)?;
    }
    if let Some(json) = &config.output.json {
        write_json(json, &outcome)?;
    }
    Ok(outcome)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn sorted_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == extension) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Similarity inputs for extraction: image id plus the feature maps to pool.
pub type SimilarityInput = (String, Vec<PathBuf>);

/// Groups `*.rfld` files of a directory by image id, the file name up to its
/// first dot. `a.rfld`, `a.0.rfld` and `a.1.rfld` all belong to image `a`.
pub fn similarity_inputs_from_dir(dir: impl AsRef<Path>) -> Result<Vec<SimilarityInput>> {
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for p in sorted_files(dir.as_ref(), "rfld")? {
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let id = name.split('.').next().unwrap_or_default().to_string();
        groups.entry(id).or_default().push(p);
    }
    Ok(groups.into_iter().collect())
}

/// Similarity maps of a split, from every location that has it.
pub fn similarity_inputs_from_manifest(manifest: &DatasetManifest, split: &str) -> Result<Vec<SimilarityInput>> {
    let mut out = Vec::new();
    for location in &manifest.locations {
        for image in location.split_images(split).unwrap_or_default() {
            let p = image.predictions.similarity.as_ref().ok_or_else(|| {
                Error::invalid(format!("image {} has no similarity map", image.image_id))
            })?;
            out.push((image.image_id.clone(), vec![manifest.resolve(p)]));
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug)]
pub enum ProposerSpec {
    FloodFill(FloodFillProposer),
    /// Replay index JSON, see [`ReplayProposer::from_index`].
    Replay(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractRecord {
    pub image_id: String,
    pub pooled_fields: usize,
    pub stop: StopReason,
    pub final_mfs: f64,
    pub masks: Vec<PathBuf>,
    pub iterations: Vec<IterationRecord>,
}

/// Runs the similarity-guided extraction loop on every input and writes the
/// masks as `<out>/<image_id>/mask_<k>.rseg` plus `<out>/extract_log.json`.
pub fn cmd_extract(
    inputs: &[SimilarityInput],
    proposer: &ProposerSpec,
    config: &LoopConfig,
    out_dir: impl AsRef<Path>,
    workers: Option<usize>,
) -> Result<Vec<ExtractRecord>> {
    let out_dir = out_dir.as_ref();
    let results = with_pool(workers, || {
        inputs
            .par_iter()
            .map(|(id, paths)| {
                if paths.is_empty() {
                    return Err(Error::invalid(format!("image {id}: no similarity maps")));
                }
                let fields = paths.iter().map(read_field).collect::<Result<Vec<_>>>()?;
                let s0 = pool_features(&fields)?;
                let extraction = match proposer {
                    ProposerSpec::FloodFill(p) => extract_masks(&s0, p, config)?,
                    ProposerSpec::Replay(index) => {
                        let p = ReplayProposer::from_index(index, id)?;
                        extract_masks(&s0, &p as &dyn MaskProposer, config)?
                    }
                };
                Ok((id.clone(), paths.len(), extraction))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut log = Vec::with_capacity(results.len());
    for (id, pooled, ex) in results {
        let mut files = Vec::new();
        for (k, m) in ex.masks.iter().enumerate() {
            let rel = PathBuf::from(&id).join(format!("mask_{k:03}.rseg"));
            write_mask(out_dir.join(&rel), m)?;
            files.push(rel);
        }
        log.push(ExtractRecord {
            image_id: id,
            pooled_fields: pooled,
            stop: ex.stop,
            final_mfs: ex.final_mfs,
            masks: files,
            iterations: ex.iterations,
        });
    }
    write_json(&out_dir.join("extract_log.json"), &log)?;
    Ok(log)
}

/// Embeddings named `<id>.rfld` in a directory, sorted by id.
pub fn embeddings_from_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, EmbeddingVector)>> {
    sorted_files(dir.as_ref(), "rfld")?
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, read_embedding(&p)?))
        })
        .collect()
}

/// Best prompt for every test embedding.
pub fn match_all(
    tests: &[(String, EmbeddingVector)],
    prompts: &[(String, EmbeddingVector)],
) -> Result<BTreeMap<String, PromptMatch>> {
    tests
        .iter()
        .map(|(id, e)| Ok((id.clone(), match_prompt(e, prompts)?)))
        .collect()
}

/// Matches every embedding in `test_dir` against those in `prompt_dir` and
/// writes the result as a JSON object keyed by test id.
pub fn cmd_match_prompts(
    test_dir: impl AsRef<Path>,
    prompt_dir: impl AsRef<Path>,
    out: impl AsRef<Path>,
) -> Result<BTreeMap<String, PromptMatch>> {
    let tests = embeddings_from_dir(test_dir)?;
    let prompts = embeddings_from_dir(prompt_dir)?;
    let matches = match_all(&tests, &prompts)?;
    write_json(out.as_ref(), &matches)?;
    Ok(matches)
}

/// Per location, matches the split's images against the location's prompt
/// candidates. Keyed by image id.
pub fn cmd_match_prompts_manifest(
    manifest: &DatasetManifest,
    split: &str,
    out: impl AsRef<Path>,
) -> Result<BTreeMap<String, PromptMatch>> {
    let embedding_of = |image: &ImageEntry| -> Result<EmbeddingVector> {
        let p = image
            .predictions
            .embedding
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("image {} has no embedding", image.image_id)))?;
        read_embedding(manifest.resolve(p))
    };
    let mut all = BTreeMap::new();
    for location in &manifest.locations {
        let Some(images) = location.split_images(split) else {
            continue;
        };
        let prompts = location
            .prompt_candidates
            .iter()
            .filter_map(|c| location.image(&c.image_id))
            .map(|i| Ok((i.image_id.clone(), embedding_of(i)?)))
            .collect::<Result<Vec<_>>>()?;
        let tests = images
            .into_iter()
            .map(|i| Ok((i.image_id.clone(), embedding_of(i)?)))
            .collect::<Result<Vec<_>>>()?;
        all.extend(match_all(&tests, &prompts)?);
    }
    write_json(out.as_ref(), &all)?;
    Ok(all)
}

fn training_pairs(manifest: &DatasetManifest, split: &str) -> Result<Vec<(crate::raster::RgbImage, crate::raster::LabelRaster)>> {
    let mut pairs = Vec::new();
    for location in &manifest.locations {
        let Some(images) = location.split_images(split) else {
            continue;
        };
        if location.is_test_split(split) {
            return Err(Error::invalid(format!("refusing to train on test split {split:?}")));
        }
        for image in images {
            let rgb = image
                .rgb
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("image {} has no rgb file", image.image_id)))?;
            let rgb = read_rgb(manifest.resolve(rgb))?;
            let raster = read_label_raster(manifest.resolve(&image.label_raster))?;
            rgb.dims().ensure_eq(raster.dims(), || format!("image {} rgb vs label raster", image.image_id))?;
            pairs.push((rgb, raster));
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid(format!("no images in split {split:?}")));
    }
    Ok(pairs)
}

/// Trains the pixel classifier on a non-test split and saves it to `out`.
pub fn cmd_rf_train(manifest: &DatasetManifest, split: &str, config: &ForestConfig, out: impl AsRef<Path>) -> Result<Forest> {
    let pairs = training_pairs(manifest, split)?;
    let forest = forest::train(&pairs, config)?;
    forest.save(out)?;
    Ok(forest)
}

/// Classifies every image of `split`, writes label rasters and masks under
/// `out_dir`, and returns the path of a manifest whose predictions point at
/// the new masks. All paths in that manifest are absolute.
pub fn cmd_rf_predict(
    forest: &Forest,
    manifest: &DatasetManifest,
    split: &str,
    out_dir: impl AsRef<Path>,
    min_size: usize,
) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out_dir = out_dir.canonicalize().map_err(|e| Error::io(out_dir, e))?;
    let mut result = manifest.clone();
    for location in &mut result.locations {
        let in_split: Vec<String> = location.splits.get(split).cloned().unwrap_or_default();
        for image in &mut location.images {
            absolutize(manifest, image);
            if !in_split.contains(&image.image_id) {
                continue;
            }
            let rgb_path = image
                .rgb
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("image {} has no rgb file", image.image_id)))?;
            let raster = forest::predict(forest, &read_rgb(rgb_path)?);
            let dir = out_dir.join(format!("loc{}", location.location_id)).join(&image.image_id);
            write_label_raster(dir.join("rf_label.rseg"), &raster)?;
            let mut masks = Vec::new();
            for class in [ClassId::InSystemTrash, ClassId::Barrier] {
                for (k, m) in forest::prediction_to_masks(&raster, class, min_size).iter().enumerate() {
                    let p = dir.join(format!("rf_{}_{k:03}.rseg", class.short_name().to_lowercase()));
                    write_mask(&p, m)?;
                    masks.push(MaskRef { path: p, class });
                }
            }
            image.predictions.masks = masks;
            image.predictions.logits.clear();
        }
        for c in &mut location.prompt_candidates {
            for m in &mut c.masks {
                *m = manifest.resolve(m);
            }
        }
    }
    result.base_dir = out_dir.clone();
    let path = out_dir.join("predictions_manifest.json");
    fs::write(&path, result.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn absolutize(manifest: &DatasetManifest, image: &mut ImageEntry) {
    let abs = |p: &mut PathBuf| *p = manifest.resolve(p);
    abs(&mut image.label_raster);
    if let Some(p) = image.rgb.as_mut() {
        abs(p);
    }
    for m in &mut image.instance_masks {
        abs(&mut m.path);
    }
    for m in &mut image.predictions.masks {
        abs(&mut m.path);
    }
    for p in &mut image.predictions.logits {
        abs(p);
    }
    if let Some(p) = image.predictions.similarity.as_mut() {
        abs(p);
    }
    if let Some(p) = image.predictions.embedding.as_mut() {
        abs(p);
    }
}

/// Thresholds a logit map. Writes the mask and returns its area, or returns
/// `None` (writing nothing) when no pixel reaches the cutoff.
pub fn cmd_threshold(logits: impl AsRef<Path>, cutoff: f64, out: impl AsRef<Path>) -> Result<Option<usize>> {
    if !cutoff.is_finite() {
        return Err(Error::invalid("cutoff must be finite"));
    }
    let field = read_field(logits)?;
    match bmc_threshold(&field, &BmcConfig::new(cutoff)) {
        Some(m) => {
            write_mask(out, &m)?;
            Ok(Some(m.area()))
        }
        None => Ok(None),
    }
}

/// Describes how a field was cut into patches, so the patches can be
/// stitched back after external processing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchLayout {
    pub width: usize,
    pub height: usize,
    pub grid: PatchGrid,
    pub method: ResampleMethod,
    pub patches: Vec<PatchEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEntry {
    pub rect: PixelRect,
    pub file: PathBuf,
}

/// Cuts a field into `grid`, resamples each patch to the grid's working size
/// and writes `patch_<k>.rfld` files plus `layout.json` into `out_dir`.
pub fn cmd_patches_split(
    field: impl AsRef<Path>,
    grid: &PatchGrid,
    method: ResampleMethod,
    out_dir: impl AsRef<Path>,
) -> Result<PatchLayout> {
    let out_dir = out_dir.as_ref();
    let f = read_field(field)?;
    let (ww, wh) = grid.working_size;
    let mut patches = Vec::new();
    for (k, rect) in split_patches(f.dims(), grid)?.into_iter().enumerate() {
        let patch = resample_field(&crop_field(&f, rect)?, ww, wh, method)?;
        let file = PathBuf::from(format!("patch_{k:03}.rfld"));
        write_field(out_dir.join(&file), &patch)?;
        patches.push(PatchEntry { rect, file });
    }
    let layout = PatchLayout {
        width: f.width(),
        height: f.height(),
        grid: *grid,
        method,
        patches,
    };
    write_json(&out_dir.join("layout.json"), &layout)?;
    Ok(layout)
}

/// Reads `layout.json`, resamples each patch back to its rectangle and
/// writes the stitched field to `out`.
pub fn cmd_patches_merge(layout_path: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<ScalarField> {
    let layout_path = layout_path.as_ref();
    let text = fs::read_to_string(layout_path).map_err(|e| Error::io(layout_path, e))?;
    let layout: PatchLayout = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: layout_path.to_path_buf(),
        source,
    })?;
    let base = layout_path.parent().unwrap_or(Path::new(""));
    let parts = layout
        .patches
        .iter()
        .map(|p| {
            let f = read_field(base.join(&p.file))?;
            Ok((p.rect, resample_field(&f, p.rect.width, p.rect.height, layout.method)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_patches(&parts)?;
    Dims::new(layout.width, layout.height)?.ensure_eq(merged.dims(), || "merged patches vs layout".into())?;
    write_field(out, &merged)?;
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::DownstreamAxis;
    use crate::raster::BitGrid;

    fn d(w: usize, h: usize) -> Dims {
        Dims::new(w, h).unwrap()
    }

    fn rect_mask(dims: Dims, x0: usize, y0: usize, x1: usize, y1: usize, class: ClassId) -> InstanceMask {
        let g = BitGrid::from_fn(dims, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1);
        InstanceMask::new(g, class, MaskSource::Predicted).unwrap()
    }

    #[test]
    fn step_json_roundtrip() {
        let json = r#"[{"step":"patches","rows":2,"cols":2},{"step":"bmc","cutoff":0.5},
            {"step":"aoi","split":"train60"},{"step":"barrier"}]"#;
        let steps: Vec<PipelineStep> = serde_json::from_str(json).unwrap();
        assert_eq!(steps.len(), 4);
        assert_eq!(
            steps[2],
            PipelineStep::Aoi {
                split: "train60".into(),
                min_inside_fraction: 0.5,
                connectivity: Connectivity::Eight
            }
        );
        validate_steps(&steps).unwrap();
        assert!(serde_json::from_str::<Vec<PipelineStep>>(r#"[{"step":"blur"}]"#).is_err());
    }

    #[test]
    fn patches_without_bmc_rejected() {
        let steps = vec![
            PipelineStep::Bmc { cutoff: 0.5 },
            PipelineStep::Patches {
                rows: 1,
                cols: 2,
                method: ResampleMethod::Nearest,
            },
        ];
        assert!(validate_steps(&steps).is_err());
    }

    #[test]
    fn patches_then_bmc() {
        let dims = d(8, 4);
        let mut state = ImageState::new(dims);
        state.logits = vec![
            ScalarField::filled(d(4, 4), 0.9).unwrap(),
            ScalarField::filled(d(4, 4), 0.1).unwrap(),
        ];
        let steps = [
            PipelineStep::Patches {
                rows: 1,
                cols: 2,
                method: ResampleMethod::Nearest,
            },
            PipelineStep::Bmc { cutoff: 0.5 },
        ];
        let ctx = LocationContext::new(FlowGeometry {
            downstream_axis: DownstreamAxis::PosY,
        });
        let out = apply_pipeline(state, &steps, &ctx).unwrap();
        assert_eq!(out.masks.len(), 1);
        assert_eq!(out.masks[0].area(), 16);
        assert!(out.masks[0].get(3, 3) && !out.masks[0].get(4, 0));
    }

    #[test]
    fn barrier_without_barrier_masks_passes_through() {
        let dims = d(6, 6);
        let mut state = ImageState::new(dims);
        state.masks.push(rect_mask(dims, 0, 4, 2, 6, ClassId::InSystemTrash));
        let ctx = LocationContext::new(FlowGeometry {
            downstream_axis: DownstreamAxis::PosY,
        });
        let out = apply_pipeline(state, &[PipelineStep::Barrier], &ctx).unwrap();
        assert!(out.barrier_missing);
        assert_eq!(out.masks.len(), 1);
    }

    #[test]
    fn small_components_dropped() {
        let dims = d(10, 3);
        let g = BitGrid::from_fn(dims, |x, y| (x < 3 && y < 3) || x == 9);
        let m = InstanceMask::new(g, ClassId::InSystemTrash, MaskSource::Predicted).unwrap();
        let out = drop_small_components(vec![m.clone()], 4);
        assert_eq!(out[0].area(), 9);
        assert_eq!(drop_small_components(vec![m], 10).len(), 0);
    }
}
