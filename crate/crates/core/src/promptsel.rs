//! Iterative multi-mask extraction over a similarity matrix, prompt feature
//! pooling and embedding-based prompt matching.
//!
//! The extraction loop repeatedly seeds a [`MaskProposer`] at the strongest
//! cell of the similarity matrix, then zeroes the accepted mask out of the
//! matrix (`S' = S ⊙ (1 − M)`). It stops when the mean of the matrix drops
//! below a threshold, when blanking no longer changes that mean (the proposer
//! returned the same region again), when the proposer gives up, or at a hard
//! mask-count limit.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::read_mask;
use crate::raster::{BitGrid, ClassId, Connectivity, InstanceMask, MaskSource, PixelPoint, ScalarField};

/// Produces one mask from a similarity matrix and a seed location.
/// Implementations must be deterministic for a given `(similarity, seed)`.
pub trait MaskProposer {
    fn propose(&self, similarity: &ScalarField, seed: PixelPoint) -> Result<Option<InstanceMask>>;
}

impl<F> MaskProposer for F
where
    F: Fn(&ScalarField, PixelPoint) -> Result<Option<InstanceMask>>,
{
    fn propose(&self, similarity: &ScalarField, seed: PixelPoint) -> Result<Option<InstanceMask>> {
        self(similarity, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Stop once the mean feature similarity falls strictly below this.
    pub mfs_stop: f64,
    #[serde(default = "LoopConfig::default_duplicate_epsilon")]
    pub duplicate_epsilon: f64,
    #[serde(default = "LoopConfig::default_max_masks")]
    pub max_masks: usize,
}

impl LoopConfig {
    pub fn new(mfs_stop: f64) -> Self {
        LoopConfig {
            mfs_stop,
            duplicate_epsilon: Self::default_duplicate_epsilon(),
            max_masks: Self::default_max_masks(),
        }
    }

    fn default_duplicate_epsilon() -> f64 {
        1e-6
    }

    fn default_max_masks() -> usize {
        64
    }

    fn validate(&self) -> Result<()> {
        if self.max_masks == 0 {
            return Err(Error::invalid("max_masks must be at least 1"));
        }
        if !(self.duplicate_epsilon >= 0.0) || !self.mfs_stop.is_finite() {
            return Err(Error::invalid("loop thresholds must be finite and duplicate_epsilon >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MfsBelowThreshold,
    ProposerEmpty,
    DuplicateDetected,
    MaxMasks,
}

/// One pass through the loop body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub seed: PixelPoint,
    pub mfs_before: f64,
    /// MFS after blanking the proposal; absent when the proposer returned nothing.
    pub mfs_after: Option<f64>,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub masks: Vec<InstanceMask>,
    pub stop: StopReason,
    pub iterations: Vec<IterationRecord>,
    /// MFS of the similarity matrix when the loop stopped.
    pub final_mfs: f64,
}

/// `s ⊙ (1 − m)`, elementwise. The input is left untouched.
pub fn blank_similarity(s: &ScalarField, m: &InstanceMask) -> Result<ScalarField> {
    s.dims().ensure_eq(m.dims(), || "blank_similarity mask".into())?;
    let values = s
        .values()
        .iter()
        .zip(m.grid().bits())
        .map(|(&v, &b)| v * (1.0 - b as u8 as f32))
        .collect();
    ScalarField::new(s.dims(), values)
}

/// Arithmetic mean of all cells.
pub fn mean_feature_similarity(s: &ScalarField) -> f64 {
    s.mean()
}

/// Runs the extraction loop on a non-negative similarity matrix.
pub fn extract_masks<P: MaskProposer + ?Sized>(s0: &ScalarField, proposer: &P, config: &LoopConfig) -> Result<Extraction> {
    config.validate()?;
    if let Some((index, &value)) = s0.values().iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeSimilarity { index, value });
    }

    let mut s = s0.clone();
    let mut mfs = mean_feature_similarity(&s);
    let mut masks = Vec::new();
    let mut iterations = Vec::new();

    let stop = loop {
        if mfs < config.mfs_stop {
            break StopReason::MfsBelowThreshold;
        }
        let seed = s.argmax();
        let Some(mask) = proposer.propose(&s, seed)? else {
            iterations.push(IterationRecord {
                seed,
                mfs_before: mfs,
                mfs_after: None,
                accepted: false,
            });
            break StopReason::ProposerEmpty;
        };
        s.dims()
            .ensure_eq(mask.dims(), || format!("proposed mask {}", iterations.len()))?;
        let next = blank_similarity(&s, &mask)?;
        let next_mfs = mean_feature_similarity(&next);
        let duplicate = (mfs - next_mfs).abs() <= config.duplicate_epsilon;
        iterations.push(IterationRecord {
            seed,
            mfs_before: mfs,
            mfs_after: Some(next_mfs),
            accepted: !duplicate,
        });
        if duplicate {
            break StopReason::DuplicateDetected;
        }
        masks.push(mask);
        s = next;
        mfs = next_mfs;
        if masks.len() == config.max_masks {
            break StopReason::MaxMasks;
        }
    };

    Ok(Extraction {
        masks,
        stop,
        iterations,
        final_mfs: mfs,
    })
}

/// Elementwise mean of equally sized feature maps. Each cell is summed in
/// sorted order, so the result does not depend on the order of `features`.
pub fn pool_features(features: &[ScalarField]) -> Result<ScalarField> {
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("pool_features: no feature maps"))?;
    for (i, f) in features.iter().enumerate().skip(1) {
        first.dims().ensure_eq(f.dims(), || format!("feature map {i}"))?;
    }
    let n = features.len() as f64;
    let mut cell = Vec::with_capacity(features.len());
    let values = (0..first.dims().len())
        .map(|i| {
            cell.clear();
            cell.extend(features.iter().map(|f| f.values()[i] as f64));
            cell.sort_by(f64::total_cmp);
            (cell.iter().sum::<f64>() / n) as f32
        })
        .collect();
    ScalarField::new(first.dims(), values)
}

/// Finite, non-empty embedding of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding vector is empty"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "embedding length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(&x, &y)| x as f64 * y as f64).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptMatch {
    pub prompt_id: String,
    pub similarity: f64,
}

/// Prompt with the highest cosine similarity to `test`; the earliest wins ties.
pub fn match_prompt(test: &EmbeddingVector, prompts: &[(String, EmbeddingVector)]) -> Result<PromptMatch> {
    let mut best: Option<PromptMatch> = None;
    for (id, emb) in prompts {
        let sim = cosine_similarity(test, emb)?;
        if best.as_ref().is_none_or(|b| sim > b.similarity) {
            best = Some(PromptMatch {
                prompt_id: id.clone(),
                similarity: sim,
            });
        }
    }
    best.ok_or_else(|| Error::invalid("match_prompt: no prompt candidates"))
}

/// Region growing from the seed over cells `>= fraction * seed value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloodFillProposer {
    pub fraction: f64,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default = "FloodFillProposer::default_class")]
    pub class: ClassId,
}

impl FloodFillProposer {
    fn default_class() -> ClassId {
        ClassId::InSystemTrash
    }
}

impl Default for FloodFillProposer {
    fn default() -> Self {
        FloodFillProposer {
            fraction: 0.5,
            connectivity: Connectivity::Eight,
            class: Self::default_class(),
        }
    }
}

impl MaskProposer for FloodFillProposer {
    fn propose(&self, similarity: &ScalarField, seed: PixelPoint) -> Result<Option<InstanceMask>> {
        let dims = similarity.dims();
        if seed.x >= dims.width || seed.y >= dims.height {
            return Err(Error::invalid(format!("seed {seed:?} outside {dims} field")));
        }
        let threshold = self.fraction * similarity.get(seed.x, seed.y) as f64;
        let inside = |x: usize, y: usize| similarity.get(x, y) as f64 >= threshold;
        let mut grid = BitGrid::new(dims);
        let mut queue = VecDeque::from([seed]);
        grid.set(seed.x, seed.y, true);
        while let Some(p) = queue.pop_front() {
            for (dx, dy) in neighbour_offsets(self.connectivity) {
                let (nx, ny) = (p.x as isize + dx, p.y as isize + dy);
                if nx < 0 || ny < 0 || nx >= dims.width as isize || ny >= dims.height as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !grid.get(nx, ny) && inside(nx, ny) {
                    grid.set(nx, ny, true);
                    queue.push_back(PixelPoint { x: nx, y: ny });
                }
            }
        }
        Ok(InstanceMask::non_empty(grid, self.class, MaskSource::Predicted))
    }
}

fn neighbour_offsets(c: Connectivity) -> &'static [(isize, isize)] {
    const FOUR: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    const EIGHT: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    match c {
        Connectivity::Four => &FOUR,
        Connectivity::Eight => &EIGHT,
    }
}

/// Replays masks computed elsewhere (for example by a promptable segmenter),
/// looked up by exact seed location. Unknown seeds yield no mask.
#[derive(Clone, Debug, Default)]
pub struct ReplayProposer {
    masks: HashMap<PixelPoint, InstanceMask>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ReplayIndex {
    pub entries: Vec<ReplayEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ReplayEntry {
    pub image_id: String,
    pub x: usize,
    pub y: usize,
    pub mask: std::path::PathBuf,
}

impl ReplayProposer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, seed: PixelPoint, mask: InstanceMask) {
        self.masks.insert(seed, mask);
    }

    /// Loads the entries for `image_id` from a JSON replay index. Mask paths
    /// resolve against the index file's directory.
    pub fn from_index(path: impl AsRef<Path>, image_id: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: ReplayIndex = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = ReplayProposer::new();
        for e in index.entries.iter().filter(|e| e.image_id == image_id) {
            let mask = read_mask(base.join(&e.mask), ClassId::InSystemTrash, MaskSource::Predicted)?;
            out.insert(PixelPoint { x: e.x, y: e.y }, mask);
        }
        Ok(out)
    }
}

impl MaskProposer for ReplayProposer {
    fn propose(&self, _similarity: &ScalarField, seed: PixelPoint) -> Result<Option<InstanceMask>> {
        Ok(self.masks.get(&seed).cloned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Dims;

    fn d(w: usize, h: usize) -> Dims {
        Dims::new(w, h).unwrap()
    }

    fn single(dims: Dims, x: usize, y: usize) -> InstanceMask {
        let mut g = BitGrid::new(dims);
        g.set(x, y, true);
        InstanceMask::new(g, ClassId::InSystemTrash, MaskSource::Predicted).unwrap()
    }

    #[test]
    fn blank_examples() {
        let s = ScalarField::filled(d(2, 2), 0.5).unwrap();
        let m = single(d(2, 2), 1, 0);
        let b = blank_similarity(&s, &m).unwrap();
        assert_eq!(b.values(), &[0.5, 0.0, 0.5, 0.5]);
        assert_eq!(mean_feature_similarity(&b), 0.375);
        assert_eq!(blank_similarity(&b, &m).unwrap(), b);
        let full = InstanceMask::new(BitGrid::from_fn(d(2, 2), |_, _| true), ClassId::Water, MaskSource::Predicted).unwrap();
        assert!(blank_similarity(&s, &full).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mfs_examples() {
        assert_eq!(mean_feature_similarity(&ScalarField::filled(d(3, 3), 0.25).unwrap()), 0.25);
        let f = ScalarField::new(d(2, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(mean_feature_similarity(&f), 0.25);
    }

    #[test]
    fn already_below_threshold() {
        let s = ScalarField::filled(d(4, 4), 0.1).unwrap();
        let out = extract_masks(&s, &FloodFillProposer::default(), &LoopConfig::new(0.2)).unwrap();
        assert!(out.masks.is_empty());
        assert_eq!(out.stop, StopReason::MfsBelowThreshold);
    }

    #[test]
    fn full_frame_proposer_stops_after_one() {
        let s = ScalarField::from_fn(d(4, 4), |x, y| (x + y) as f32 / 8.0).unwrap();
        let full = |f: &ScalarField, _: PixelPoint| {
            Ok(InstanceMask::non_empty(
                BitGrid::from_fn(f.dims(), |_, _| true),
                ClassId::InSystemTrash,
                MaskSource::Predicted,
            ))
        };
        let out = extract_masks(&s, &full, &LoopConfig::new(0.01)).unwrap();
        assert_eq!(out.masks.len(), 1);
        assert_eq!(out.stop, StopReason::MfsBelowThreshold);
        assert_eq!(out.final_mfs, 0.0);
    }

    #[test]
    fn repeated_mask_triggers_duplicate() {
        let s = ScalarField::filled(d(4, 4), 1.0).unwrap();
        let same = |f: &ScalarField, _: PixelPoint| Ok(Some(single(f.dims(), 3, 3)));
        let out = extract_masks(&s, &same, &LoopConfig::new(0.0)).unwrap();
        assert_eq!(out.masks.len(), 1);
        assert_eq!(out.stop, StopReason::DuplicateDetected);
        assert_eq!(out.iterations.len(), 2);
    }

    #[test]
    fn max_masks_bound() {
        let s = ScalarField::from_fn(d(8, 1), |x, _| 1.0 + x as f32).unwrap();
        let seed_only = |f: &ScalarField, p: PixelPoint| Ok(Some(single(f.dims(), p.x, p.y)));
        let mut cfg = LoopConfig::new(0.0);
        cfg.max_masks = 3;
        let out = extract_masks(&s, &seed_only, &cfg).unwrap();
        assert_eq!(out.masks.len(), 3);
        assert_eq!(out.stop, StopReason::MaxMasks);
    }

    #[test]
    fn empty_proposal_stops() {
        let s = ScalarField::filled(d(2, 2), 1.0).unwrap();
        let none = |_: &ScalarField, _: PixelPoint| Ok(None);
        let out = extract_masks(&s, &none, &LoopConfig::new(0.0)).unwrap();
        assert_eq!(out.stop, StopReason::ProposerEmpty);
        assert!(out.masks.is_empty());
    }

    #[test]
    fn rejects_negative_and_mismatched() {
        let s = ScalarField::new(d(2, 1), vec![0.5, -0.1]).unwrap();
        assert!(matches!(
            extract_masks(&s, &FloodFillProposer::default(), &LoopConfig::new(0.0)),
            Err(Error::NegativeSimilarity { index: 1, .. })
        ));
        let s = ScalarField::filled(d(2, 2), 1.0).unwrap();
        let wrong = |_: &ScalarField, _: PixelPoint| Ok(Some(single(d(3, 3), 0, 0)));
        assert!(extract_masks(&s, &wrong, &LoopConfig::new(0.0)).is_err());
    }

    #[test]
    fn pooling() {
        let a = ScalarField::filled(d(2, 2), 0.0).unwrap();
        let b = ScalarField::filled(d(2, 2), 0.8).unwrap();
        assert_eq!(pool_features(&[a.clone()]).unwrap(), a);
        assert_eq!(pool_features(&[a.clone(), b.clone()]).unwrap(), ScalarField::filled(d(2, 2), 0.4).unwrap());
        assert!(pool_features(&[]).is_err());
        assert!(pool_features(&[a, ScalarField::filled(d(1, 2), 0.0).unwrap()]).is_err());
    }

    fn emb(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&emb(&[1.0, 2.0]), &emb(&[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&emb(&[1.0, 1.0]), &emb(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&emb(&[0.0, 0.0]), &emb(&[1.0, 0.0])), Err(Error::ZeroNorm)));
        assert!(cosine_similarity(&emb(&[1.0]), &emb(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn matching() {
        let t = emb(&[0.3, 0.4, 0.5]);
        let prompts = vec![("orth".to_string(), emb(&[0.4, -0.3, 0.0])), ("self".to_string(), t.clone())];
        assert_eq!(match_prompt(&t, &prompts).unwrap().prompt_id, "self");
        assert_eq!(match_prompt(&t, &prompts[..1]).unwrap().prompt_id, "orth");
        let same = vec![("a".to_string(), emb(&[1.0, 0.0, 0.0])), ("b".to_string(), emb(&[1.0, 0.0, 0.0]))];
        assert_eq!(match_prompt(&t, &same).unwrap().prompt_id, "a");
        assert!(match_prompt(&t, &[]).is_err());
    }

    #[test]
    fn flood_fill_respects_fraction() {
        let s = ScalarField::new(d(5, 1), vec![1.0, 0.6, 0.4, 0.9, 1.0]).unwrap();
        let m = FloodFillProposer::default().propose(&s, PixelPoint { x: 0, y: 0 }).unwrap().unwrap();
        assert_eq!(m.area(), 2);
    }

    #[test]
    fn replay_lookup() {
        let dims = d(3, 3);
        let mut r = ReplayProposer::new();
        r.insert(PixelPoint { x: 1, y: 1 }, single(dims, 1, 1));
        let s = ScalarField::filled(dims, 1.0).unwrap();
        assert!(r.propose(&s, PixelPoint { x: 1, y: 1 }).unwrap().is_some());
        assert!(r.propose(&s, PixelPoint { x: 0, y: 0 }).unwrap().is_none());
    }
}
