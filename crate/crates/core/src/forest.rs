//! Random-forest pixel classifier over raw RGB values.
//!
//! Each tree is grown on a bootstrap sample with Gini-impurity splits of the
//! form `channel <= threshold`, evaluating every 8-bit threshold of a random
//! subset of channels. Tree `t` draws from ChaCha8 stream `t` of the
//! configured seed, so results do not depend on thread scheduling.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    ComponentLabels, Connectivity, ClassId, InstanceMask, LabelRaster, MaskSource, RgbImage,
};

const N_CLASSES: usize = 5;
const FOREST_FORMAT: &str = "riverseg-forest";
const FOREST_VERSION: u32 = 1;

/// Default minimum component size when turning a prediction into masks.
pub const DEFAULT_MIN_COMPONENT: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub bootstrap_fraction: f64,
    pub rng_seed: u64,
    /// Optional cap on training pixels per class.
    pub per_class_cap: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 50,
            max_depth: 12,
            min_samples_leaf: 5,
            features_per_split: 2,
            bootstrap_fraction: 1.0,
            rng_seed: 0,
            per_class_cap: None,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::invalid("n_trees, max_depth and min_samples_leaf must be positive"));
        }
        if !(1..=3).contains(&self.features_per_split) {
            return Err(Error::invalid("features_per_split must be 1, 2 or 3"));
        }
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction <= 1.0) {
            return Err(Error::invalid("bootstrap_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub channel: u8,
    /// Samples with `value <= threshold` go left.
    pub threshold: u8,
    pub left: u32,
    pub right: u32,
}

/// A tree node. `counts` is the class histogram of the training samples that
/// reached the node, indexed by class code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub counts: [u32; N_CLASSES],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl TreeNode {
    pub fn samples(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Majority class; ties go to the smallest class code.
    pub fn majority(&self) -> ClassId {
        ClassId::ALL[argmax_first(&self.counts)]
    }
}

fn argmax_first(counts: &[u32; N_CLASSES]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Gini impurity of a class histogram.
pub fn gini(counts: &[u32; N_CLASSES]) -> f64 {
    let n: u32 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf_for(&self, rgb: [u8; 3]) -> &TreeNode {
        let mut node = &self.nodes[0];
        while let Some(s) = node.split {
            node = if rgb[s.channel as usize] <= s.threshold {
                &self.nodes[s.left as usize]
            } else {
                &self.nodes[s.right as usize]
            };
        }
        node
    }

    pub fn classify(&self, rgb: [u8; 3]) -> ClassId {
        self.leaf_for(rgb).majority()
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("tree has no nodes"));
        }
        let mut referenced = vec![false; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(s) = n.split {
                if s.channel > 2 {
                    return Err(Error::invalid(format!("node {i}: channel {} out of range", s.channel)));
                }
                for child in [s.left, s.right] {
                    let c = child as usize;
                    if c <= i || c >= self.nodes.len() || referenced[c] {
                        return Err(Error::invalid(format!("node {i}: bad child index {child}")));
                    }
                    referenced[c] = true;
                }
                let (l, r) = (&self.nodes[s.left as usize], &self.nodes[s.right as usize]);
                if l.samples() + r.samples() != n.samples() {
                    return Err(Error::invalid(format!("node {i}: child histograms do not sum to parent")));
                }
            }
        }
        if referenced.iter().skip(1).any(|r| !r) {
            return Err(Error::invalid("tree has unreachable nodes"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format: String,
    pub version: u32,
    pub config: ForestConfig,
    /// Classes present in the training data.
    pub classes: Vec<ClassId>,
    pub trees: Vec<DecisionTree>,
}

impl Forest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let forest: Forest = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<forest>".into(),
            source,
        })?;
        if forest.format != FOREST_FORMAT || forest.version != FOREST_VERSION {
            return Err(Error::invalid(format!(
                "unsupported forest document {:?} v{}",
                forest.format, forest.version
            )));
        }
        if forest.trees.is_empty() {
            return Err(Error::invalid("forest has no trees"));
        }
        for t in &forest.trees {
            t.validate()?;
        }
        Ok(forest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Forest::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    /// Majority vote over trees; ties go to the smallest class code.
    pub fn classify(&self, rgb: [u8; 3]) -> ClassId {
        let mut votes = [0u32; N_CLASSES];
        for t in &self.trees {
            votes[t.classify(rgb).code() as usize] += 1;
        }
        ClassId::ALL[argmax_first(&votes)]
    }
}

struct Samples {
    rgb: Vec<[u8; 3]>,
    class: Vec<u8>,
}

fn collect_samples(images: &[(RgbImage, LabelRaster)], config: &ForestConfig) -> Result<Samples> {
    let mut by_class: [Vec<[u8; 3]>; N_CLASSES] = Default::default();
    for (k, (img, raster)) in images.iter().enumerate() {
        img.dims()
            .ensure_eq(raster.dims(), || format!("training image {k} vs label raster"))?;
        for (i, &c) in raster.data().iter().enumerate() {
            if c != ClassId::Unlabeled {
                by_class[c.code() as usize].push(img.pixel(i));
            }
        }
    }
    if let Some(cap) = config.per_class_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(u64::MAX);
        for pixels in by_class.iter_mut().filter(|p| p.len() > cap) {
            pixels.shuffle(&mut rng);
            pixels.truncate(cap);
        }
    }
    let present = by_class.iter().filter(|p| !p.is_empty()).count();
    if present < 2 {
        return Err(Error::invalid(format!(
            "training data must contain at least 2 labelled classes, found {present}"
        )));
    }
    let mut samples = Samples {
        rgb: Vec::new(),
        class: Vec::new(),
    };
    for (code, pixels) in by_class.iter().enumerate() {
        samples.rgb.extend_from_slice(pixels);
        samples.class.extend(std::iter::repeat_n(code as u8, pixels.len()));
    }
    Ok(samples)
}

struct Grower<'a> {
    samples: &'a Samples,
    config: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

struct Candidate {
    score: f64,
    channel: u8,
    threshold: u8,
}

impl Grower<'_> {
    fn histogram(&self, idx: &[u32]) -> [u32; N_CLASSES] {
        let mut counts = [0u32; N_CLASSES];
        for &i in idx {
            counts[self.samples.class[i as usize] as usize] += 1;
        }
        counts
    }

    /// Best split of `idx` on `channel`, scored as the sample-weighted Gini
    /// impurity of the two children.
    fn best_threshold(&self, idx: &[u32], channel: usize) -> Option<Candidate> {
        let mut hist = [[0u32; N_CLASSES]; 256];
        for &i in idx {
            let i = i as usize;
            hist[self.samples.rgb[i][channel] as usize][self.samples.class[i] as usize] += 1;
        }
        let total = self.histogram(idx);
        let n = idx.len();
        let mut left = [0u32; N_CLASSES];
        let mut left_n = 0usize;
        let mut best: Option<Candidate> = None;
        for t in 0..255usize {
            for c in 0..N_CLASSES {
                left[c] += hist[t][c];
                left_n += hist[t][c] as usize;
            }
            let right_n = n - left_n;
            if left_n < self.config.min_samples_leaf || right_n < self.config.min_samples_leaf {
                continue;
            }
            let mut right = [0u32; N_CLASSES];
            for c in 0..N_CLASSES {
                right[c] = total[c] - left[c];
            }
            let score = (left_n as f64 * gini(&left) + right_n as f64 * gini(&right)) / n as f64;
            if best.as_ref().is_none_or(|b| score < b.score) {
                best = Some(Candidate {
                    score,
                    channel: channel as u8,
                    threshold: t as u8,
                });
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [u32], depth: usize) -> u32 {
        let counts = self.histogram(idx);
        let id = self.nodes.len() as u32;
        self.nodes.push(TreeNode { counts, split: None });

        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.config.max_depth || idx.len() < 2 * self.config.min_samples_leaf {
            return id;
        }

        let mut channels = [0usize, 1, 2];
        channels.shuffle(&mut self.rng);
        let mut best: Option<Candidate> = None;
        for &ch in &channels[..self.config.features_per_split] {
            if let Some(c) = self.best_threshold(idx, ch) {
                if best.as_ref().is_none_or(|b| c.score < b.score) {
                    best = Some(c);
                }
            }
        }
        let parent = gini(&counts);
        let Some(best) = best.filter(|b| b.score < parent) else {
            return id;
        };

        let ch = best.channel as usize;
        let mut boundary = 0;
        for k in 0..idx.len() {
            if self.samples.rgb[idx[k] as usize][ch] <= best.threshold {
                idx.swap(k, boundary);
                boundary += 1;
            }
        }
        let (l, r) = idx.split_at_mut(boundary);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id as usize].split = Some(Split {
            channel: best.channel,
            threshold: best.threshold,
            left,
            right,
        });
        id
    }
}

fn grow_tree(samples: &Samples, config: &ForestConfig, tree_index: usize) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(tree_index as u64);
    let n = samples.class.len();
    let draws = ((config.bootstrap_fraction * n as f64).round() as usize).max(1);
    let mut idx: Vec<u32> = (0..draws).map(|_| rng.random_range(0..n) as u32).collect();
    let mut grower = Grower {
        samples,
        config,
        rng,
        nodes: Vec::new(),
    };
    grower.grow(&mut idx, 0);
    DecisionTree { nodes: grower.nodes }
}

/// Trains a forest on every labelled pixel of `images`. Unlabeled pixels are
/// ignored. Trees are grown in parallel.
pub fn train(images: &[(RgbImage, LabelRaster)], config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("no training images"));
    }
    let samples = collect_samples(images, config)?;
    let mut classes: Vec<ClassId> = samples
        .class
        .iter()
        .map(|&c| ClassId::ALL[c as usize])
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    classes.sort();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(&samples, config, t))
        .collect();
    Ok(Forest {
        format: FOREST_FORMAT.to_string(),
        version: FOREST_VERSION,
        config: config.clone(),
        classes,
        trees,
    })
}

/// Classifies every pixel of `image`.
pub fn predict(forest: &Forest, image: &RgbImage) -> LabelRaster {
    let data: Vec<ClassId> = (0..image.dims().len())
        .into_par_iter()
        .map(|i| forest.classify(image.pixel(i)))
        .collect();
    LabelRaster::from_classes(image.dims(), data).expect("one class per pixel")
}

/// 8-connected components of `class` in `raster`, dropping components
/// smaller than `min_size` pixels.
pub fn prediction_to_masks(raster: &LabelRaster, class: ClassId, min_size: usize) -> Vec<InstanceMask> {
    let labels = ComponentLabels::compute(&raster.class_grid(class), Connectivity::Eight);
    labels
        .grids()
        .into_iter()
        .zip(labels.sizes())
        .filter(|(_, &size)| size >= min_size)
        .filter_map(|(g, _)| InstanceMask::non_empty(g, class, MaskSource::Predicted))
        .collect()
}
