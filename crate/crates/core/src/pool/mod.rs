//! Sample collections and everything that feeds data into training.

mod augment;
mod features;
pub mod manifest;
mod sampling;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, jitter_feature, AugConfig};
pub use features::{extract_features, DOWNSAMPLE_H, DOWNSAMPLE_W};
pub use manifest::{load_manifest, save_manifest};
pub use sampling::{balanced_batch, balanced_indices};
pub use synth::{generate_synthetic, PayloadKind, SourceAssignment, SynthSpec};

/// Manifest token for a distractor (no identity).
pub const DISTRACTOR_TOKEN: &str = "-";
/// Manifest token for a junk gallery item (neither relevant nor irrelevant).
pub const JUNK_TOKEN: &str = "?";

pub type FeatureVec = Vec<f64>;

/// Axis-aligned box, top-left origin, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bbox needs finite coordinates and positive size, got ({x},{y},{w},{h})"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl FromStr for BBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad bbox `{s}`")))?;
        match parts[..] {
            [x, y, w, h] => BBox::new(x, y, w, h),
            _ => Err(Error::InvalidArgument(format!(
                "bbox `{s}` must have 4 fields"
            ))),
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

/// Image payload: `values[(row * width + col) * channels + channel]`, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("grid must be at least 1x1".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "grid must have 1 or 3 channels, got {channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::dims("grid values", height * width * channels, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "grid value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.values[(row * self.width + col) * self.channels + ch]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Grid(PixelGrid),
    Feature(FeatureVec),
}

impl Payload {
    pub fn as_feature(&self) -> Option<&[f64]> {
        match self {
            Payload::Feature(f) => Some(f),
            Payload::Grid(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PersonLabel {
    Id(String),
    Distractor,
    Junk,
}

impl PersonLabel {
    pub fn id(&self) -> Option<&str> {
        match self {
            PersonLabel::Id(id) => Some(id),
            _ => None,
        }
    }

    pub fn parse(token: &str) -> Self {
        match token {
            DISTRACTOR_TOKEN => PersonLabel::Distractor,
            JUNK_TOKEN => PersonLabel::Junk,
            id => PersonLabel::Id(id.to_owned()),
        }
    }
}

impl fmt::Display for PersonLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PersonLabel::Id(id) => f.write_str(id),
            PersonLabel::Distractor => f.write_str(DISTRACTOR_TOKEN),
            PersonLabel::Junk => f.write_str(JUNK_TOKEN),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Gallery,
    Probe,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Gallery => "gallery",
            Split::Probe => "probe",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "gallery" => Ok(Split::Gallery),
            "probe" => Ok(Split::Probe),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Occlusion,
    Lowres,
    Train,
    Test,
}

impl Tag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::Occlusion => "occlusion",
            Tag::Lowres => "lowres",
            Tag::Train => "train",
            Tag::Test => "test",
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occlusion" => Ok(Tag::Occlusion),
            "lowres" => Ok(Tag::Lowres),
            "train" => Ok(Tag::Train),
            "test" => Ok(Tag::Test),
            other => Err(Error::InvalidArgument(format!("unknown tag `{other}`"))),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One person image occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub person: PersonLabel,
    pub source_id: String,
    pub split: Split,
    pub tags: BTreeSet<Tag>,
    pub frame_id: Option<String>,
    pub bbox: Option<BBox>,
    /// Detector confidence, present for detection-derived gallery items.
    pub score: Option<f64>,
    pub payload: Payload,
}

impl Sample {
    pub fn new(
        sample_id: impl Into<String>,
        person: PersonLabel,
        source_id: impl Into<String>,
        split: Split,
        payload: Payload,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            person,
            source_id: source_id.into(),
            split,
            tags: BTreeSet::new(),
            frame_id: None,
            bbox: None,
            score: None,
            payload,
        }
    }

    pub fn person_id(&self) -> Option<&str> {
        self.person.id()
    }

    pub fn has_tag(&self, tag: Tag) -> bool {
        self.tags.contains(&tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceEntry {
    pub source_id: String,
    /// Indices into [`DataPool::samples`].
    pub indices: Vec<usize>,
}

/// Immutable collection of samples with a per-source index.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPool {
    samples: Vec<Sample>,
    sources: Vec<SourceEntry>,
}

impl DataPool {
    /// Builds the pool; sources are ordered by first appearance.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut sources: Vec<SourceEntry> = Vec::new();
        let mut source_pos: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::DuplicateSample(s.sample_id.clone()));
            }
            match source_pos.get(s.source_id.as_str()) {
                Some(&p) => sources[p].indices.push(i),
                None => {
                    source_pos.insert(&s.source_id, sources.len());
                    sources.push(SourceEntry {
                        source_id: s.source_id.clone(),
                        indices: vec![i],
                    });
                }
            }
        }
        Ok(Self { samples, sources })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sources(&self) -> &[SourceEntry] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// New pool holding clones of the samples accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> DataPool {
        let samples = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        DataPool::new(samples).expect("subset of a valid pool is valid")
    }

    pub fn split(&self, split: Split) -> DataPool {
        self.filter(|s| s.split == split)
    }

    /// Identity-labelled samples usable for training.
    pub fn training_pool(&self) -> DataPool {
        self.filter(|s| s.split == Split::Train && s.person_id().is_some())
    }

    /// Distinct person ids, sorted.
    pub fn identities(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.samples.iter().filter_map(|s| s.person_id()).collect();
        set.into_iter().collect()
    }

    pub fn get(&self, sample_id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Common feature dimension of the feature payloads, if any.
    pub fn feature_dim(&self) -> Option<usize> {
        self.samples
            .iter()
            .find_map(|s| s.payload.as_feature().map(|f| f.len()))
    }
}

/// Samples of every person with at least one sample assigned to `domain`.
///
/// Pools for different domains may overlap, and their union over all domains
/// is the identity-labelled part of `pool`. Distractor and junk samples are
/// never included.
pub fn domain_pool(
    pool: &DataPool,
    assignments: &BTreeMap<String, usize>,
    domain: usize,
    num_domains: usize,
) -> Result<DataPool> {
    if domain >= num_domains {
        return Err(Error::UnknownDomain(domain));
    }
    let mut persons = BTreeSet::new();
    for s in pool.samples() {
        let Some(pid) = s.person_id() else { continue };
        let &d = assignments
            .get(&s.sample_id)
            .ok_or_else(|| Error::InvalidArgument(format!("sample `{}` has no domain assignment", s.sample_id)))?;
        if d >= num_domains {
            return Err(Error::UnknownDomain(d));
        }
        if d == domain {
            persons.insert(pid);
        }
    }
    Ok(pool.filter(|s| s.person_id().is_some_and(|p| persons.contains(p))))
}
