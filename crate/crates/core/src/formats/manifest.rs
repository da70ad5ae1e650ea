//! JSON dataset manifest: locations, images, splits and prompt candidates.
//!
//! Relative paths inside the manifest resolve against the manifest's own
//! directory. A split counts as a *test split* when its name starts with
//! `test` or when it is the `test` side of an entry in `split_pairs`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::raster::ClassId;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error("unsupported schema_version {found} (supported: {SCHEMA_VERSION})")]
    UnsupportedVersion { found: u32 },

    #[error("{pointer}: duplicate location_id {location_id}")]
    DuplicateLocation { pointer: String, location_id: u32 },

    #[error("{pointer}: duplicate image_id {image_id:?}")]
    DuplicateImage { pointer: String, image_id: String },

    #[error("{pointer}: split {split:?} references unknown image {image_id:?}")]
    UnknownSplitImage {
        pointer: String,
        split: String,
        image_id: String,
    },

    #[error("{pointer}: split {split:?} lists image {image_id:?} more than once")]
    DuplicateSplitEntry {
        pointer: String,
        split: String,
        image_id: String,
    },

    #[error("{pointer}: unknown split {split:?}")]
    UnknownSplit { pointer: String, split: String },

    #[error("{pointer}: image {image_id:?} appears in both {train:?} and {test:?}")]
    SplitOverlap {
        pointer: String,
        train: String,
        test: String,
        image_id: String,
    },

    #[error("{pointer}: prompt image {image_id:?} is listed in test split {split:?}")]
    PromptInTestSplit {
        pointer: String,
        image_id: String,
        split: String,
    },

    #[error("{pointer}: prompt candidate references unknown image {image_id:?}")]
    UnknownPromptImage { pointer: String, image_id: String },

    #[error("{pointer}: referenced file {path} does not exist")]
    MissingFile { pointer: String, path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DownstreamAxis {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
}

impl DownstreamAxis {
    pub fn reversed(self) -> Self {
        match self {
            DownstreamAxis::PosX => DownstreamAxis::NegX,
            DownstreamAxis::NegX => DownstreamAxis::PosX,
            DownstreamAxis::PosY => DownstreamAxis::NegY,
            DownstreamAxis::NegY => DownstreamAxis::PosY,
        }
    }
}

/// Which image direction water flows towards, for a fixed camera.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowGeometry {
    pub downstream_axis: DownstreamAxis,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRef {
    pub path: PathBuf,
    pub class: ClassId,
}

/// Model output artifacts attached to an image.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predictions {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<MaskRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logits: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<PathBuf>,
}

impl Predictions {
    fn is_empty(&self) -> bool {
        self.masks.is_empty() && self.logits.is_empty() && self.similarity.is_none() && self.embedding.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub image_id: String,
    pub label_raster: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<PathBuf>,
    #[serde(default)]
    pub instance_masks: Vec<MaskRef>,
    #[serde(default, skip_serializing_if = "Predictions::is_empty")]
    pub predictions: Predictions,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptCandidate {
    pub image_id: String,
    pub masks: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPair {
    pub train: String,
    pub test: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationEntry {
    pub location_id: u32,
    pub flow: FlowGeometry,
    pub images: Vec<ImageEntry>,
    #[serde(default)]
    pub prompt_candidates: Vec<PromptCandidate>,
    #[serde(default)]
    pub splits: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub split_pairs: Vec<SplitPair>,
}

impl LocationEntry {
    pub fn image(&self, image_id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    pub fn is_test_split(&self, name: &str) -> bool {
        name.starts_with("test") || self.split_pairs.iter().any(|p| p.test == name)
    }

    /// Images of a named split, in split order.
    pub fn split_images(&self, name: &str) -> Option<Vec<&ImageEntry>> {
        let ids = self.splits.get(name)?;
        Some(ids.iter().filter_map(|id| self.image(id)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub locations: Vec<LocationEntry>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn location(&self, location_id: u32) -> Option<&LocationEntry> {
        self.locations.iter().find(|l| l.location_id == location_id)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Parses and validates a manifest from JSON text.
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut manifest: DatasetManifest =
            serde_path_to_error::deserialize(de).map_err(|e| ManifestError::Schema {
                pointer: json_pointer(e.path()),
                message: e.inner().to_string(),
            })?;
        manifest.base_dir = base_dir.into();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Checks every structural invariant. Does not touch the filesystem.
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::UnsupportedVersion {
                found: self.schema_version,
            });
        }
        let mut seen_locations = BTreeSet::new();
        for (li, loc) in self.locations.iter().enumerate() {
            let lp = format!("/locations/{li}");
            if !seen_locations.insert(loc.location_id) {
                return Err(ManifestError::DuplicateLocation {
                    pointer: format!("{lp}/location_id"),
                    location_id: loc.location_id,
                });
            }
            validate_location(loc, &lp)?;
        }
        Ok(())
    }

    /// Verifies that every referenced file exists.
    pub fn check_files(&self) -> Result<(), ManifestError> {
        for (li, loc) in self.locations.iter().enumerate() {
            for (ii, img) in loc.images.iter().enumerate() {
                let ip = format!("/locations/{li}/images/{ii}");
                let mut refs: Vec<(String, &Path)> = vec![(format!("{ip}/label_raster"), &img.label_raster)];
                if let Some(rgb) = &img.rgb {
                    refs.push((format!("{ip}/rgb"), rgb));
                }
                for (mi, m) in img.instance_masks.iter().enumerate() {
                    refs.push((format!("{ip}/instance_masks/{mi}/path"), &m.path));
                }
                let p = &img.predictions;
                for (mi, m) in p.masks.iter().enumerate() {
                    refs.push((format!("{ip}/predictions/masks/{mi}/path"), &m.path));
                }
                for (k, l) in p.logits.iter().enumerate() {
                    refs.push((format!("{ip}/predictions/logits/{k}"), l));
                }
                if let Some(s) = &p.similarity {
                    refs.push((format!("{ip}/predictions/similarity"), s));
                }
                if let Some(e) = &p.embedding {
                    refs.push((format!("{ip}/predictions/embedding"), e));
                }
                for (pointer, path) in refs {
                    let full = self.resolve(path);
                    if !full.is_file() {
                        return Err(ManifestError::MissingFile { pointer, path: full });
                    }
                }
            }
            for (pi, pc) in loc.prompt_candidates.iter().enumerate() {
                for (mi, m) in pc.masks.iter().enumerate() {
                    let full = self.resolve(m);
                    if !full.is_file() {
                        return Err(ManifestError::MissingFile {
                            pointer: format!("/locations/{li}/prompt_candidates/{pi}/masks/{mi}"),
                            path: full,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn validate_location(loc: &LocationEntry, lp: &str) -> Result<(), ManifestError> {
    let mut ids = BTreeSet::new();
    for (ii, img) in loc.images.iter().enumerate() {
        if !ids.insert(img.image_id.as_str()) {
            return Err(ManifestError::DuplicateImage {
                pointer: format!("{lp}/images/{ii}/image_id"),
                image_id: img.image_id.clone(),
            });
        }
    }

    for (name, members) in &loc.splits {
        let mut seen = BTreeSet::new();
        for (k, id) in members.iter().enumerate() {
            let pointer = format!("{lp}/splits/{}/{k}", escape_token(name));
            if !ids.contains(id.as_str()) {
                return Err(ManifestError::UnknownSplitImage {
                    pointer,
                    split: name.clone(),
                    image_id: id.clone(),
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(ManifestError::DuplicateSplitEntry {
                    pointer,
                    split: name.clone(),
                    image_id: id.clone(),
                });
            }
        }
    }

    for (pi, pair) in loc.split_pairs.iter().enumerate() {
        let pp = format!("{lp}/split_pairs/{pi}");
        let train = loc.splits.get(&pair.train).ok_or_else(|| ManifestError::UnknownSplit {
            pointer: format!("{pp}/train"),
            split: pair.train.clone(),
        })?;
        let test = loc.splits.get(&pair.test).ok_or_else(|| ManifestError::UnknownSplit {
            pointer: format!("{pp}/test"),
            split: pair.test.clone(),
        })?;
        let test_ids: BTreeSet<&str> = test.iter().map(String::as_str).collect();
        if let Some((k, id)) = train.iter().enumerate().find(|(_, id)| test_ids.contains(id.as_str())) {
            return Err(ManifestError::SplitOverlap {
                pointer: format!("{lp}/splits/{}/{k}", escape_token(&pair.train)),
                train: pair.train.clone(),
                test: pair.test.clone(),
                image_id: id.clone(),
            });
        }
    }

    for (pi, pc) in loc.prompt_candidates.iter().enumerate() {
        let pointer = format!("{lp}/prompt_candidates/{pi}/image_id");
        if !ids.contains(pc.image_id.as_str()) {
            return Err(ManifestError::UnknownPromptImage {
                pointer,
                image_id: pc.image_id.clone(),
            });
        }
        for (name, members) in &loc.splits {
            if loc.is_test_split(name) && members.contains(&pc.image_id) {
                return Err(ManifestError::PromptInTestSplit {
                    pointer,
                    image_id: pc.image_id.clone(),
                    split: name.clone(),
                });
            }
        }
    }
    Ok(())
}

fn escape_token(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&escape_token(key)),
            Segment::Enum { variant } => out.push_str(&escape_token(variant)),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Reads and validates a manifest. With `strict`, every referenced file must exist.
pub fn read_manifest(path: impl AsRef<Path>, strict: bool) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest::from_json(&text, base)?;
    if strict {
        manifest.check_files()?;
    }
    Ok(manifest)
}
